"""Condensation-counting diagnostics for few-boson lattice states.

A normalized reference field on the lattice defines a rank-one projector
per particle; expanding a state over the 2^N products of those projectors
gives the distribution of the number of particles outside the reference
field. Nonnegative weights of that count turn the distribution into
counting functionals that, together with an energy gap and an optional
short-range correlation correction, quantify how far the exact few-body
dynamics strays from its mean-field surrogate. The module also provides
the one-particle reduced density matrix and trace distance, an exact
time-derivative identity relating the counting functional's rate to a
commutator expectation, a seeded verification suite for the projector and
weight operator algebra, and indicator diagnostics for close-encounter
regions of configuration space.

All operators act on the same periodic lattice as the exact propagator, so
every identity that is pure projector algebra holds to roundoff here, not
just asymptotically.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import math
from typing import Callable, Sequence

import numpy as np
import scipy.fft

from .fewbody import (
    FewBodyState,
    Lattice2D,
    _pair_site_table,
    build_hamiltonian,
    energy_per_particle,
    propagate,
)
from .gp import ExternalField

__all__ = [
    "MAX_COUNTING_PARTICLES",
    "CondensateProjector",
    "WeightFunction",
    "number_weight",
    "counting_weight",
    "counting_difference",
    "count_components",
    "apply_weight",
    "apply_pair_table",
    "spectral_gradient",
    "dense_operator",
    "gamma1",
    "trace_distance",
    "condensate_distance_bound",
    "NumberExpectations",
    "number_expectations",
    "weight_expectation",
    "mean_field_energy",
    "mean_field_step",
    "energy_gap",
    "alpha_less",
    "AlphaFullResult",
    "alpha_full",
    "DiagnosticsReport",
    "diagnostics_report",
    "RateComparison",
    "ddt_weight_identity",
    "CheckResult",
    "OperatorAlgebraReport",
    "operator_algebra_suite",
    "CutoffReport",
    "cutoff_indicators",
]

# The count distribution needs all 2^N projector products.
MAX_COUNTING_PARTICLES = 4

EFFECTIVE_COUPLING = 4.0 * math.pi


@dataclasses.dataclass(frozen=True)
class CondensateProjector:
    """Rank-one projector pair (p, q = 1 - p) for a lattice reference field.

    The field is renormalized exactly on construction so that p is
    idempotent to roundoff. Matrix forms act on flattened site vectors with
    the plain matmul convention; the lattice cell measure is folded into
    the matrices themselves.
    """
    lattice: Lattice2D
    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=np.complex128)
        if phi.shape != (self.lattice.m, self.lattice.m):
            raise ValueError("reference field must be an (m, m) lattice array")
        nrm = math.sqrt(float(np.sum(np.abs(phi) ** 2)) * self.cell)
        if not math.isfinite(nrm) or abs(nrm - 1.0) > 1e-6:
            raise ValueError("reference field must have unit lattice norm")
        object.__setattr__(self, "phi", phi / nrm)

    @property
    def cell(self) -> float:
        return self.lattice.spacing ** 2

    @property
    def p_matrix(self) -> np.ndarray:
        flat = self.phi.ravel()
        return self.cell * np.outer(flat, np.conjugate(flat))

    @property
    def q_matrix(self) -> np.ndarray:
        return np.eye(self.lattice.d) - self.p_matrix

    def apply_p(self, amplitudes: np.ndarray, particle: int) -> np.ndarray:
        """Project the given particle axis onto the reference field."""
        flat = self.phi.ravel()
        inner = np.tensordot(np.conjugate(flat), amplitudes,
                             axes=([0], [particle])) * self.cell
        return np.moveaxis(np.multiply.outer(flat, inner), 0, particle)

    def apply_q(self, amplitudes: np.ndarray, particle: int) -> np.ndarray:
        return amplitudes - self.apply_p(amplitudes, particle)


@dataclasses.dataclass(frozen=True)
class WeightFunction:
    """Weight sequence w(0..N) defining the operator sum_k w(k) P_k.

    P_k projects onto configurations with exactly k particles outside the
    reference field; shifting reindexes the weight, with counts whose
    source index falls outside 0..N receiving weight zero.
    """
    values: np.ndarray
    name: str = "custom"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("need one weight per count 0..N with N >= 1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n_particles(self) -> int:
        return self.values.size - 1

    def shifted(self, d: int) -> "WeightFunction":
        """Weight k -> w(k + d), zero where k + d falls outside 0..N."""
        n = self.n_particles
        source = np.arange(n + 1) + int(d)
        inside = (source >= 0) & (source <= n)
        vals = np.zeros(n + 1)
        vals[inside] = self.values[source[inside]]
        return WeightFunction(vals, f"{self.name}_{int(d):+d}")

    def operator_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def product(self, other: "WeightFunction") -> "WeightFunction":
        if other.n_particles != self.n_particles:
            raise ValueError("weights must share the particle count")
        return WeightFunction(self.values * other.values,
                              f"{self.name}*{other.name}")


def _counting_formula(k: np.ndarray, n_particles: int, xi: float) -> np.ndarray:
    """Square-root count weight, flattened to an affine ramp below the
    crossover count N^(1-2*xi); both branches meet at value N^(-xi)."""
    k = np.asarray(k, dtype=float)
    n = float(n_particles)
    crossover = n ** (1.0 - 2.0 * xi)
    ramp = 0.5 * (n ** (-1.0 + xi) * k + n ** (-xi))
    return np.where(k >= crossover, np.sqrt(k / n), ramp)


def _check_xi(xi: float) -> float:
    xi = float(xi)
    if not (0.0 < xi < 0.5):
        raise ValueError("xi must lie strictly between 0 and 1/2")
    return xi


def number_weight(n_particles: int) -> WeightFunction:
    """w(k) = sqrt(k/N): the square root of the relative count outside."""
    k = np.arange(n_particles + 1, dtype=float)
    return WeightFunction(np.sqrt(k / n_particles), "n")


def counting_weight(n_particles: int, xi: float = 0.25) -> WeightFunction:
    """The flattened count weight used by the counting functionals."""
    xi = _check_xi(xi)
    k = np.arange(n_particles + 1)
    return WeightFunction(_counting_formula(k, n_particles, xi), "m")


def counting_difference(n_particles: int, gap: int, xi: float = 0.25) -> WeightFunction:
    """w(k) = m(k) - m(k + gap) with m continued by its formula beyond N."""
    xi = _check_xi(xi)
    if gap not in (1, 2):
        raise ValueError("gap must be 1 or 2")
    k = np.arange(n_particles + 1)
    vals = (_counting_formula(k, n_particles, xi)
            - _counting_formula(k + gap, n_particles, xi))
    return WeightFunction(vals, "m^a" if gap == 1 else "m^b")


def count_components(amplitudes: np.ndarray,
                     projector: CondensateProjector) -> tuple[np.ndarray, ...]:
    """Split amplitudes into the N + 1 fixed-count components.

    Component k collects every product of per-particle p/q projections with
    exactly k complements, accumulated particle by particle so the cost is
    O(N^2) single-particle applications rather than 2^N.
    """
    n = amplitudes.ndim
    if n > MAX_COUNTING_PARTICLES:
        raise ValueError(
            f"count expansion limited to {MAX_COUNTING_PARTICLES} particles, got {n}")
    components: list[np.ndarray | None] = [amplitudes]
    for particle in range(n):
        grown: list[np.ndarray | None] = [None] * (len(components) + 1)
        for k, part in enumerate(components):
            inside = projector.apply_p(part, particle)
            outside = part - inside
            grown[k] = inside if grown[k] is None else grown[k] + inside
            grown[k + 1] = outside if grown[k + 1] is None else grown[k + 1] + outside
        components = grown
    return tuple(components)


def apply_weight(amplitudes: np.ndarray, projector: CondensateProjector,
                 weight: WeightFunction) -> np.ndarray:
    """Apply the weighted sum of count projections to raw amplitudes."""
    if weight.n_particles != amplitudes.ndim:
        raise ValueError("weight length must match the particle count")
    parts = count_components(amplitudes, projector)
    out = np.zeros_like(amplitudes)
    for value, part in zip(weight.values, parts):
        if value != 0.0:
            out = out + value * part
    return out


def apply_pair_table(amplitudes: np.ndarray, lattice: Lattice2D,
                     table: np.ndarray,
                     particles: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Multiply by T(x_a - x_b) sampled at minimum-image site displacements.

    table is an (m, m) array over coordinate displacements, or a
    precomputed (d, d) site-pair matrix.
    """
    table = np.asarray(table)
    if table.shape == (lattice.m, lattice.m):
        site = _pair_site_table(lattice.m, table)
    elif table.shape == (lattice.d, lattice.d):
        site = table
    else:
        raise ValueError("table must be (m, m) over displacements or (d, d) over site pairs")
    a, b = particles
    shaped = site.reshape((lattice.d, lattice.d) + (1,) * (amplitudes.ndim - 2))
    return amplitudes * np.moveaxis(shaped, (0, 1), (a, b))


def spectral_gradient(amplitudes: np.ndarray, lattice: Lattice2D,
                      particle: int) -> np.ndarray:
    """Both gradient components of one particle axis, leading axis of 2."""
    m, n = lattice.m, amplitudes.ndim
    psi = amplitudes.reshape((m,) * (2 * n))
    k = lattice.wavenumbers()
    out = np.empty((2,) + psi.shape, dtype=np.complex128)
    for component in range(2):
        axis = 2 * particle + component
        shape = [1] * (2 * n)
        shape[axis] = m
        psi_hat = scipy.fft.fft(psi, axis=axis)
        out[component] = scipy.fft.ifft(1j * k.reshape(shape) * psi_hat, axis=axis)
    return out.reshape((2,) + amplitudes.shape)


def dense_operator(apply_fn: Callable[[np.ndarray], np.ndarray],
                   lattice: Lattice2D, n_particles: int) -> np.ndarray:
    """Dense matrix of a linear operator given by its tensor action."""
    dim = lattice.d ** n_particles
    shape = (lattice.d,) * n_particles
    basis = np.eye(dim, dtype=np.complex128)
    columns = [apply_fn(basis[:, i].reshape(shape)).ravel() for i in range(dim)]
    return np.column_stack(columns)


def gamma1(state: FewBodyState) -> np.ndarray:
    """One-particle reduced density matrix of a normalized symmetric state.

    Returned as a d x d Hermitian PSD matrix with unit plain trace, in the
    same matmul convention as the projector matrices, so a pure product
    state gives exactly the projector onto its factor.
    """
    d = state.lattice.d
    cell = state.lattice.spacing ** 2
    stacked = state.amplitudes.reshape(d, -1)
    return (stacked @ stacked.conj().T) * cell ** state.n_particles


def trace_distance(gamma: np.ndarray, projector: CondensateProjector) -> float:
    """Half the absolute-eigenvalue sum of gamma minus the rank-one reference."""
    eigenvalues = np.linalg.eigvalsh(gamma - projector.p_matrix)
    return 0.5 * float(np.sum(np.abs(eigenvalues)))


def condensate_distance_bound(n_square: float) -> float:
    """Monotone bound on the trace distance in terms of the depleted fraction.

    With u = 1 - <reference|gamma|reference>, block-decomposing gamma over
    the reference direction gives trace distance <= u + sqrt(u).
    """
    u = max(float(n_square), 0.0)
    return u + math.sqrt(u)


@dataclasses.dataclass(frozen=True)
class NumberExpectations:
    """Distribution of the count outside the reference field and its moments.

    n_square holds the distribution-weighted second moment of sqrt(k/N);
    n_square_from_gamma recomputes it as the depleted fraction
    1 - <reference|gamma|reference>, an independent route that must agree.
    """
    distribution: np.ndarray
    n_expect: float
    n_square: float
    n_square_from_gamma: float


def _count_distribution(state: FewBodyState,
                        projector: CondensateProjector) -> np.ndarray:
    parts = count_components(state.amplitudes, projector)
    cell_n = projector.cell ** state.n_particles
    return np.array([float(np.real(np.vdot(state.amplitudes, part))) * cell_n
                     for part in parts])


def number_expectations(state: FewBodyState,
                        projector: CondensateProjector) -> NumberExpectations:
    """Count distribution P(k) plus first and second relative moments."""
    n = state.n_particles
    if n > MAX_COUNTING_PARTICLES:
        raise ValueError(
            f"count expansion limited to {MAX_COUNTING_PARTICLES} particles, got {n}")
    distribution = _count_distribution(state, projector)
    k = np.arange(n + 1, dtype=float)
    n_expect = float(np.sum(np.sqrt(k / n) * distribution))
    n_square = float(np.sum((k / n) * distribution))
    gamma = gamma1(state)
    flat = projector.phi.ravel()
    occupied = float(np.real(np.vdot(flat, gamma @ flat))) * projector.cell
    return NumberExpectations(distribution, n_expect, n_square, 1.0 - occupied)


def weight_expectation(state: FewBodyState, projector: CondensateProjector,
                       weight: WeightFunction) -> float:
    """Expectation of the weighted count operator."""
    if weight.n_particles != state.n_particles:
        raise ValueError("weight length must match the particle count")
    distribution = _count_distribution(state, projector)
    return float(np.sum(weight.values * distribution))


def _field_table(field: ExternalField | np.ndarray | None, lattice: Lattice2D,
                 t: float) -> np.ndarray:
    if field is None:
        return np.zeros((lattice.m, lattice.m))
    if isinstance(field, np.ndarray):
        if field.shape != (lattice.m, lattice.m):
            raise ValueError("static field table must be (m, m)")
        return field
    return field.evaluate(lattice, t)


def mean_field_energy(phi: np.ndarray, lattice: Lattice2D, coupling: float,
                      field_values: np.ndarray | None = None) -> float:
    """Mean-field energy of a lattice field with the spectral kinetic term."""
    cell = lattice.spacing ** 2
    k = lattice.wavenumbers()
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    phi_hat = scipy.fft.fft2(phi)
    kinetic = float(np.sum(k2 * np.abs(phi_hat) ** 2)) * cell / lattice.d
    density = np.abs(phi) ** 2
    a_now = np.zeros_like(density) if field_values is None else field_values
    potential = float(np.sum((a_now + 0.5 * coupling * density) * density)) * cell
    return kinetic + potential


def mean_field_step(phi: np.ndarray, lattice: Lattice2D, coupling: float,
                    field: ExternalField | np.ndarray | None = None,
                    t: float = 0.0, dt: float = 1e-3) -> np.ndarray:
    """One Strang step of the cubic mean-field equation on the lattice.

    Mirrors the continuum stepper: half phase with the field at t, full
    spectral kinetic factor, half phase with the field at t + dt and the
    updated density. A plain array field is held static across the step.
    """
    a_now = _field_table(field, lattice, t)
    a_next = a_now if (field is None or isinstance(field, np.ndarray)) \
        else field.evaluate(lattice, t + dt)
    k = lattice.wavenumbers()
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    psi = phi * np.exp(-0.5j * dt * (a_now + coupling * np.abs(phi) ** 2))
    psi = scipy.fft.ifft2(np.exp(-1j * dt * k2) * scipy.fft.fft2(psi))
    return psi * np.exp(-0.5j * dt * (a_next + coupling * np.abs(psi) ** 2))


def energy_gap(state: FewBodyState, projector: CondensateProjector,
               interaction: Callable[[np.ndarray], np.ndarray] | None = None,
               coupling: float = 0.0,
               field: ExternalField | None = None) -> float:
    """|many-body energy per particle - mean-field energy of the reference|."""
    hamiltonian = build_hamiltonian(state.lattice, state.n_particles,
                                    interaction, field, t=state.time)
    many = energy_per_particle(state, hamiltonian)
    a_now = None if field is None else field.evaluate(state.lattice, state.time)
    one = mean_field_energy(projector.phi, state.lattice, coupling, a_now)
    return abs(many - one)


def alpha_less(state: FewBodyState, projector: CondensateProjector,
               interaction: Callable[[np.ndarray], np.ndarray] | None = None,
               coupling: float = 0.0, field: ExternalField | None = None,
               xi: float = 0.25) -> float:
    """Counting functional: weighted out-of-reference count plus energy gap."""
    weight = counting_weight(state.n_particles, xi)
    return (weight_expectation(state, projector, weight)
            + energy_gap(state, projector, interaction, coupling, field))


def _projected_pair_terms(state: FewBodyState, projector: CondensateProjector
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(p1 p2, p1 q2, q1 p2) projections of the amplitudes."""
    p0 = projector.apply_p(state.amplitudes, 0)
    pp = projector.apply_p(p0, 1)
    pq = p0 - pp
    p1 = projector.apply_p(state.amplitudes, 1)
    qp = p1 - pp
    return pp, pq, qp


def _apply_pair_weighted(state: FewBodyState, projector: CondensateProjector,
                         xi: float) -> np.ndarray:
    """The correlation-weighted projection combination acting on the state:
    two-step count difference on the doubly-projected part, one-step
    difference on each singly-projected part."""
    n = state.n_particles
    w_one = counting_difference(n, 1, xi)
    w_two = counting_difference(n, 2, xi)
    pp, pq, qp = _projected_pair_terms(state, projector)
    return (apply_weight(pp, projector, w_two)
            + apply_weight(pq + qp, projector, w_one))


@dataclasses.dataclass(frozen=True)
class AlphaFullResult:
    """Counting functional with the short-range correlation correction.

    correction_term is the signed additive contribution (the definition
    subtracts the real part of the pair-depletion overlap); when the
    lattice cannot resolve the depletion profile the correction is dropped
    and used_correction is False, leaving the plain counting functional.
    """
    value: float
    m_expect: float
    energy_gap: float
    correction_term: float
    used_correction: bool


def alpha_full(state: FewBodyState, projector: CondensateProjector,
               interaction: Callable[[np.ndarray], np.ndarray] | None,
               micro, field: ExternalField | None = None,
               xi: float = 0.25) -> AlphaFullResult:
    """Counting functional for the exponentially scaled pair potential.

    micro supplies the depletion profile g = 1 - f of the softened pair
    construction; the effective mean-field coupling is fixed at 4*pi by
    the scattering normalization of that scaling.
    """
    n = state.n_particles
    if n < 2:
        raise ValueError("need at least two particles for the pair correction")
    weight = counting_weight(n, xi)
    m_expect = weight_expectation(state, projector, weight)
    gap = energy_gap(state, projector, interaction, EFFECTIVE_COUPLING, field)
    lattice = state.lattice
    resolvable = (not getattr(micro, "degenerate", False)
                  and micro.R_beta >= lattice.spacing)
    if not resolvable:
        return AlphaFullResult(m_expect + gap, m_expect, gap, 0.0, False)
    g_table = micro.g_evaluate(lattice.minimum_image_distances().ravel()
                               ).reshape(lattice.m, lattice.m)
    weighted = _apply_pair_weighted(state, projector, xi)
    overlap = np.vdot(state.amplitudes,
                      apply_pair_table(weighted, lattice, g_table))
    cell_n = projector.cell ** n
    correction = -n * (n - 1) * float(np.real(overlap)) * cell_n
    return AlphaFullResult(m_expect + gap + correction, m_expect, gap,
                           correction, True)


@dataclasses.dataclass(frozen=True)
class DiagnosticsReport:
    """Bundle of condensation diagnostics for one state snapshot."""
    gamma1: np.ndarray
    trace_distance: float
    n_expect: float
    n_square: float
    m_expect: float
    energy_gap: float
    alpha_less: float
    alpha_full: float | None
    correction_term: float
    used_correction: bool

    def to_json(self) -> str:
        payload = {
            "gamma1": {"real": np.real(self.gamma1).tolist(),
                       "imag": np.imag(self.gamma1).tolist()},
            "trace_distance": self.trace_distance,
            "n_expect": self.n_expect,
            "n_square": self.n_square,
            "m_expect": self.m_expect,
            "energy_gap": self.energy_gap,
            "alpha_less": self.alpha_less,
            "alpha_full": self.alpha_full,
            "correction_term": self.correction_term,
            "used_correction": self.used_correction,
        }
        return json.dumps(payload)


def diagnostics_report(state: FewBodyState, projector: CondensateProjector,
                       interaction: Callable[[np.ndarray], np.ndarray] | None = None,
                       coupling: float = 0.0, field: ExternalField | None = None,
                       micro=None, xi: float = 0.25) -> DiagnosticsReport:
    """Assemble the full diagnostics bundle for one state snapshot.

    With micro given, the correlation-corrected functional is evaluated at
    the fixed effective coupling of the exponential scaling; the plain
    counting functional always uses the supplied coupling.
    """
    gamma = gamma1(state)
    distance = trace_distance(gamma, projector)
    numbers = number_expectations(state, projector)
    weight = counting_weight(state.n_particles, xi)
    m_expect = weight_expectation(state, projector, weight)
    gap = energy_gap(state, projector, interaction, coupling, field)
    less = m_expect + gap
    full: float | None = None
    correction = 0.0
    used = False
    if micro is not None:
        result = alpha_full(state, projector, interaction, micro, field, xi)
        full = result.value
        correction = result.correction_term
        used = result.used_correction
    return DiagnosticsReport(gamma, distance, numbers.n_expect,
                             numbers.n_square, m_expect, gap, less, full,
                             correction, used)


@dataclasses.dataclass(frozen=True)
class RateComparison:
    """Two routes to the rate of change of the weighted count expectation.

    finite_difference propagates both the state and the reference field by
    a centered half step each way; commutator is the analytic expectation
    of the interaction-minus-mean-field commutator with the weight
    operator. projected rewrites the commutator through the pair
    projections, and split_parts is its exact three-term decomposition
    (singly-projected, doubly-complemented with the bare pair potential,
    and doubly-complemented cross term).
    """
    finite_difference: float
    commutator: float
    projected: float
    split_parts: tuple[float, float, float]
    residual: float


def ddt_weight_identity(state: FewBodyState, projector: CondensateProjector,
                        interaction: Callable[[np.ndarray], np.ndarray] | None,
                        coupling: float, field: ExternalField | None = None,
                        dt: float = 1e-4, xi: float = 0.25) -> RateComparison:
    """Compare the finite-difference rate of the weighted count expectation
    with the exact commutator identity.

    Both generators are frozen at the state's time: the state advances
    under the lattice pair Hamiltonian, the reference field under the
    cubic mean-field flow with the same static external table, so the
    identity is exact up to the O(dt^2) differencing error.
    """
    n = state.n_particles
    if n < 2:
        raise ValueError("the pair commutator needs at least two particles")
    defect = state.symmetry_defect()
    if defect > 1e-8:
        raise ValueError(
            f"state must be exchange symmetric, defect {defect:.3e}")
    lattice = state.lattice
    cell_n = projector.cell ** n
    a_static = _field_table(field, lattice, state.time)
    hamiltonian = build_hamiltonian(lattice, n, interaction, field,
                                    t=state.time)
    method = "dense" if lattice.d ** n <= 4096 else "auto"
    weight = counting_weight(n, xi)

    def expectation(shifted: float) -> float:
        moved = propagate(state, hamiltonian, shifted, method=method)
        phi_t = projector.phi
        phi_t = mean_field_step(phi_t, lattice, coupling, a_static,
                                t=state.time, dt=shifted)
        return weight_expectation(moved, CondensateProjector(lattice, phi_t),
                                  weight)

    fd_rate = (expectation(dt) - expectation(-dt)) / (2.0 * dt)

    if interaction is None:
        pair_table = np.zeros((lattice.m, lattice.m))
    else:
        pair_table = np.asarray(
            interaction(lattice.minimum_image_distances().ravel()),
            dtype=float).reshape(lattice.m, lattice.m)
    density_flat = np.abs(projector.phi.ravel()) ** 2
    strength = coupling / (n - 1)

    def apply_mean_part(amplitudes: np.ndarray) -> np.ndarray:
        shape0 = [1] * n
        shape0[0] = lattice.d
        shape1 = [1] * n
        shape1[1] = lattice.d
        return amplitudes * (density_flat.reshape(shape0)
                             + density_flat.reshape(shape1))

    def apply_gap_operator(amplitudes: np.ndarray) -> np.ndarray:
        return (apply_pair_table(amplitudes, lattice, pair_table)
                - strength * apply_mean_part(amplitudes))

    amps = state.amplitudes
    weighted = apply_weight(amps, projector, weight)
    commutator = -n * (n - 1) * float(np.imag(
        np.vdot(amps, apply_gap_operator(weighted)))) * cell_n

    projected_vec = _apply_pair_weighted(state, projector, xi)
    projected = -n * (n - 1) * float(np.imag(
        np.vdot(amps, apply_gap_operator(projected_vec)))) * cell_n

    w_one_back = counting_difference(n, 1, xi).shifted(-1)
    w_two_back = counting_difference(n, 2, xi).shifted(-2)
    pp, pq, qp = _projected_pair_terms(state, projector)
    qq = amps - pp - pq - qp
    part_single = -2.0 * n * (n - 1) * float(np.imag(np.vdot(
        pq, apply_weight(apply_gap_operator(pp), projector, w_one_back)))) * cell_n
    part_bare = -n * (n - 1) * float(np.imag(np.vdot(
        qq, apply_weight(apply_pair_table(pp, lattice, pair_table),
                         projector, w_two_back)))) * cell_n
    part_cross = -2.0 * n * (n - 1) * float(np.imag(np.vdot(
        qq, apply_weight(apply_gap_operator(pq), projector, w_one_back)))) * cell_n

    return RateComparison(fd_rate, commutator, projected,
                          (part_single, part_bare, part_cross),
                          abs(fd_rate - commutator))


@dataclasses.dataclass(frozen=True)
class CheckResult:
    """One named identity or inequality check with its measured defect."""
    name: str
    defect: float
    tolerance: float
    passed: bool


@dataclasses.dataclass(frozen=True)
class OperatorAlgebraReport:
    """Outcome of the operator-algebra verification suite for one seed."""
    n_particles: int
    lattice_m: int
    seed: int
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> tuple[str, ...]:
        return tuple(check.name for check in self.checks if not check.passed)

    def tap(self) -> str:
        lines = [f"1..{len(self.checks)}"]
        for i, check in enumerate(self.checks, 1):
            status = "ok" if check.passed else "not ok"
            lines.append(f"{status} {i} - {check.name} "
                         f"(defect={check.defect:.3e}, seed={self.seed})")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "n_particles": self.n_particles,
            "lattice_m": self.lattice_m,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [dataclasses.asdict(check) for check in self.checks],
        })


def operator_algebra_suite(projector: CondensateProjector, n_particles: int,
                           seed: int = 0, tolerance: float = 1e-10,
                           xi: float = 0.25) -> OperatorAlgebraReport:
    """Verify the projector/weight operator algebra on one random instance.

    Identity checks measure the lattice 2-norm of the difference of both
    sides applied to unit random tensors; inequality checks measure the
    amount by which the left side exceeds its bound (zero when satisfied).
    Dense matrix-level checks are added when the total dimension is small.
    Any defect above the tolerance is reported as a named failure carrying
    the seed.
    """
    n = int(n_particles)
    if n < 2 or n > 3:
        raise ValueError("the algebra suite covers 2 or 3 particles")
    lattice = projector.lattice
    d = lattice.d
    cell = projector.cell
    cell_n = cell ** n
    rng = np.random.default_rng(seed)
    checks: list[CheckResult] = []

    def record(name: str, defect: float, bound: float = None) -> None:
        tol = tolerance if bound is None else bound
        checks.append(CheckResult(name, float(defect), float(tol),
                                  float(defect) <= float(tol)))

    def norm(amplitudes: np.ndarray) -> float:
        return math.sqrt(float(np.sum(np.abs(amplitudes) ** 2)) * cell_n)

    def random_tensor() -> np.ndarray:
        raw = (rng.standard_normal((d,) * n)
               + 1j * rng.standard_normal((d,) * n))
        return raw / norm(raw)

    def symmetrize(amplitudes: np.ndarray,
                   subset: Sequence[int]) -> np.ndarray:
        out = np.zeros_like(amplitudes)
        base = list(range(n))
        for perm in itertools.permutations(subset):
            order = base.copy()
            for axis, target in zip(subset, perm):
                order[axis] = target
            out = out + np.transpose(amplitudes, order)
        total = norm(out)
        if total == 0.0:
            raise ValueError("symmetrization annihilated the probe")
        return out / total

    w_m = counting_weight(n, xi)
    w_n = number_weight(n)
    mhat = lambda v: apply_weight(v, projector, w_m)
    nhat = lambda v: apply_weight(v, projector, w_n)
    p = projector.apply_p
    q = projector.apply_q

    probe = random_tensor()

    # Resolution of identity over the count projections.
    parts = count_components(probe, projector)
    record("sum-of-count-projections", norm(sum(parts) - probe))

    # Weight operators commute with every per-particle projector and with
    # each count projection.
    record("weight-commutes-p", norm(mhat(p(probe, 0)) - p(mhat(probe), 0)))
    record("weight-commutes-q", norm(mhat(q(probe, n - 1)) - q(mhat(probe), n - 1)))
    k_pick = int(rng.integers(0, n + 1))
    proj_k = count_components(probe, projector)[k_pick]
    record("weight-commutes-count-projection",
           norm(mhat(proj_k) - count_components(mhat(probe), projector)[k_pick]))

    # Products of weights compose pointwise.
    record("weight-product-rule",
           norm(mhat(nhat(probe)) - apply_weight(probe, projector,
                                                 w_m.product(w_n))))

    # The squared relative-count weight equals the mean of the complement
    # projectors.
    mean_q = sum(q(probe, j) for j in range(n)) / n
    record("squared-count-is-mean-complement",
           norm(nhat(nhat(probe)) - mean_q))

    # Shift rule: moving a weight through a fixed-count block of a pair
    # multiplication operator reindexes the weight by the count change.
    pair_random = rng.standard_normal((d, d))
    f_pair = lambda v: apply_pair_table(v, lattice, pair_random)
    blocks = {
        0: lambda v: p(p(v, 0), 1),
        1: lambda v: q(p(v, 0), 1),
        2: lambda v: q(q(v, 0), 1),
    }
    block_alt = {0: blocks[0], 1: lambda v: p(q(v, 0), 1), 2: blocks[2]}
    for j_count, k_count in ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1), (2, 2)):
        lhs = mhat(blocks[j_count](f_pair(block_alt[k_count](probe))))
        rhs = blocks[j_count](f_pair(apply_weight(
            block_alt[k_count](probe), projector, w_m.shifted(j_count - k_count))))
        record(f"shift-rule-{j_count}{k_count}", norm(lhs - rhs))

    # Gradient variant of the shift rule with single-particle blocks.
    singles = {0: lambda v: p(v, 0), 1: lambda v: q(v, 0)}
    for j_count, k_count in ((0, 1), (1, 0)):
        ket = singles[k_count](probe)
        lhs = [mhat(singles[j_count](g))
               for g in spectral_gradient(ket, lattice, 0)]
        shifted = apply_weight(ket, projector, w_m.shifted(j_count - k_count))
        rhs = [singles[j_count](g)
               for g in spectral_gradient(shifted, lattice, 0)]
        defect = math.sqrt(sum(norm(a - b) ** 2 for a, b in zip(lhs, rhs)))
        record(f"shift-rule-gradient-{j_count}{k_count}", defect)

    # Commutator of a pair multiplication with a weight reduces to the
    # pair-projected blocks with stepped weight differences.
    def commutator_lhs(v: np.ndarray) -> np.ndarray:
        return f_pair(mhat(v)) - mhat(f_pair(v))

    w_step1 = WeightFunction(w_m.values - w_m.shifted(1).values, "m-step1")
    w_step2 = WeightFunction(w_m.values - w_m.shifted(2).values, "m-step2")

    def stepped(v: np.ndarray) -> np.ndarray:
        both = apply_weight(blocks[0](v), projector, w_step2)
        pq_v = block_alt[1](v) + blocks[1](v)
        return both + apply_weight(pq_v, projector, w_step1)

    record("commutator-expansion",
           norm(f_pair(stepped(probe)) - stepped(f_pair(probe))
                - commutator_lhs(probe)))

    # Convolution identity: projecting both sides of a displacement
    # multiplication collapses it to the density-convolved profile.
    disp_values = rng.standard_normal((lattice.m, lattice.m))
    site_disp = _pair_site_table(lattice.m, disp_values)
    density = np.abs(projector.phi.ravel()) ** 2
    convolved = cell * (site_disp.T @ density)
    shape1 = [1] * n
    shape1[1] = d
    lhs = p(apply_pair_table(p(probe, 0), lattice, site_disp), 0)
    rhs = p(probe * convolved.reshape(shape1), 0)
    record("convolution-identity", norm(lhs - rhs))

    # Exact lattice norm bounds for pair operators against the projector.
    phi_inf = float(np.max(np.abs(projector.phi)))
    l1 = cell * float(np.sum(np.abs(disp_values)))
    record("projected-pair-norm-bound",
           max(0.0, float(np.max(np.abs(convolved))) - l1 * phi_inf ** 2), tolerance)
    l2 = math.sqrt(cell * float(np.sum(disp_values ** 2)))
    sq_convolved = cell * (np.abs(site_disp.T) ** 2 @ density)
    record("pair-times-projector-norm-bound",
           max(0.0, math.sqrt(float(np.max(sq_convolved))) - l2 * phi_inf), tolerance)
    grad_phi = spectral_gradient(projector.phi.ravel(), lattice, 0)
    grad_density = np.sum(np.abs(grad_phi) ** 2, axis=0)
    grad_inf = math.sqrt(float(np.max(grad_density)))
    grad_convolved = cell * (np.abs(site_disp.T) ** 2 @ grad_density)
    record("pair-gradient-projector-norm-bound",
           max(0.0, math.sqrt(float(np.max(grad_convolved))) - l2 * grad_inf),
           tolerance)

    # Symmetric-subset inequalities: complement projections are controlled
    # by weighted relative counts on states symmetric in a subset.
    f_weight = WeightFunction(rng.uniform(0.1, 1.0, n + 1), "random")
    fhat = lambda v: apply_weight(v, projector, f_weight)
    subset_a = list(range(n)) if n == 2 else [0, 1]
    psi_a = symmetrize(random_tensor(), subset_a)
    lhs_a = norm(fhat(q(psi_a, 0))) ** 2
    rhs_a = (n / len(subset_a)) * norm(fhat(nhat(psi_a))) ** 2
    record("subset-symmetric-single-bound", max(0.0, lhs_a - rhs_a), tolerance)

    subset_b = list(range(n))
    psi_b = symmetrize(random_tensor(), subset_b)
    lhs_b = norm(fhat(q(q(psi_b, 0), 1))) ** 2
    rhs_b = (n ** 2 / (len(subset_b) * (len(subset_b) - 1))
             * norm(fhat(nhat(nhat(psi_b)))) ** 2)
    record("subset-symmetric-pair-bound", max(0.0, lhs_b - rhs_b), tolerance)

    # Gradient bounds: weights pass through a projected gradient at the
    # price of their operator norm.
    def gradient_norm(v: np.ndarray, particle: int) -> float:
        grads = spectral_gradient(v, lattice, particle)
        return math.sqrt(norm(grads[0]) ** 2 + norm(grads[1]) ** 2)

    probe2 = random_tensor()
    lhs_g = gradient_norm(mhat(q(probe2, 1)), 1)
    rhs_g = 2.0 * w_m.operator_norm() * gradient_norm(q(probe2, 1), 1)
    record("gradient-weight-single-bound", max(0.0, lhs_g - rhs_g), tolerance)

    psi_sym = symmetrize(random_tensor(), list(range(n)))
    lhs_g2 = gradient_norm(mhat(q(q(psi_sym, 0), 1)), 1)
    mn_norm = w_m.product(w_n).operator_norm()
    m1n_norm = w_m.shifted(1).product(w_n).operator_norm()
    constant = math.sqrt(n / (n - 1)) * (m1n_norm + mn_norm)
    rhs_g2 = constant * gradient_norm(q(psi_sym, 1), 1)
    record("gradient-weight-pair-bound", max(0.0, lhs_g2 - rhs_g2), tolerance)

    # Stepped-shift splitting: the backward two-step difference minus the
    # forward one-step difference equals the backward one-step difference,
    # exactly on the range of any complement projector.
    w_a = counting_difference(n, 1, xi)
    w_b = counting_difference(n, 2, xi)
    qv = q(probe, 0)
    record("stepped-shift-splitting",
           norm(apply_weight(qv, projector, w_b.shifted(-1))
                - apply_weight(qv, projector, w_a)
                - apply_weight(qv, projector, w_a.shifted(-1))))

    # The flattened weight stays within N^-xi of the relative-count weight.
    record("counting-vs-number-gap",
           max(0.0, float(np.max(np.abs(w_m.values - w_n.values)))
               - n ** (-xi)), tolerance)

    # Dense matrix-level spot checks when the full dimension is small.
    if d ** n <= 1024:
        m_dense = dense_operator(mhat, lattice, n)
        p_dense = dense_operator(lambda v: p(v, 0), lattice, n)
        record("dense-weight-commutes-p",
               float(np.max(np.abs(m_dense @ p_dense - p_dense @ m_dense))))
        identity = np.eye(d ** n)
        summed = sum(dense_operator(
            lambda v, kk=k: count_components(v, projector)[kk], lattice, n)
            for k in range(n + 1))
        record("dense-sum-of-count-projections",
               float(np.max(np.abs(summed - identity))))
        lhs_dense = dense_operator(
            lambda v: mhat(blocks[1](f_pair(block_alt[0](v)))), lattice, n)
        rhs_dense = dense_operator(
            lambda v: blocks[1](f_pair(apply_weight(
                block_alt[0](v), projector, w_m.shifted(1)))), lattice, n)
        record("dense-shift-rule-10",
               float(np.max(np.abs(lhs_dense - rhs_dense))))

    return OperatorAlgebraReport(n, lattice.m, int(seed), tuple(checks))


@dataclasses.dataclass(frozen=True)
class CutoffReport:
    """Norm diagnostics for the close-encounter indicator sets.

    The lattice bounds use the discrete disc area (cell area times the
    number of displacements inside the threshold) and hold exactly; the
    disc bounds use the continuum area form and are meaningful once the
    threshold is resolved, i.e. exceeds the lattice spacing. When it does
    not, only coincidence cells fall inside the threshold and resolved is
    False.
    """
    n_particles: int
    d_exponent: float
    threshold: float
    resolved: bool
    discrete_disc_area: float
    continuum_disc_area: float
    pair_projector_norm: float
    pair_projector_bound: float
    pair_projector_disc_bound: float
    union_projector_norm: float
    union_projector_bound: float
    commutator_norm: float
    commutator_bound: float
    commutator_disc_bound: float
    state_union_mass: float | None
    state_triple_mass: float | None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


def cutoff_indicators(lattice: Lattice2D, n_particles: int, d_exponent: float,
                      projector: CondensateProjector,
                      state: FewBodyState | None = None) -> CutoffReport:
    """Build the indicator diagnostics for pair separations below N^-d.

    The pair indicator marks configurations where two given particles come
    closer than the threshold (coincidence cells always qualify); the
    union indicator marks the first particle being close to any other, and
    the triple indicator any close pair among the others. Reported norms
    are exact on the lattice: the projector collapses them to density
    sums over the indicator, and the commutator block-diagonalizes over
    the partner site.
    """
    n = int(n_particles)
    if n < 2 or n > MAX_COUNTING_PARTICLES:
        raise ValueError(
            f"indicator diagnostics cover 2..{MAX_COUNTING_PARTICLES} particles")
    if lattice != projector.lattice:
        raise ValueError("projector must live on the given lattice")
    threshold = float(n) ** (-float(d_exponent))
    cell = lattice.spacing ** 2
    d = lattice.d
    distances = lattice.minimum_image_distances()
    inside_disp = distances < threshold
    discrete_area = cell * float(np.sum(inside_disp))
    continuum_area = math.pi * threshold ** 2
    resolved = threshold > lattice.spacing

    pair_site = _pair_site_table(lattice.m, inside_disp.astype(float))
    density = np.abs(projector.phi.ravel()) ** 2
    phi_inf = float(np.max(np.abs(projector.phi)))

    # ||1_pair p_1||: block diagonal over the partner site, each block a
    # rank-one projection cut to the disc around that site.
    disc_mass = cell * (pair_site.T @ density)
    pair_norm = math.sqrt(float(np.max(disc_mass)))
    pair_bound = phi_inf * math.sqrt(discrete_area)
    pair_disc_bound = phi_inf * math.sqrt(continuum_area)

    # Union over partners for particle 0, on the full configuration space.
    complement = np.ones((d,) * n, dtype=bool)
    for partner in range(1, n):
        shaped = pair_site.astype(bool).reshape(
            (d, d) + (1,) * (n - 2))
        complement &= ~np.moveaxis(shaped, (0, 1), (0, partner))
    union = ~complement
    union_mass = cell * np.tensordot(density, union.astype(float),
                                     axes=([0], [0]))
    union_norm = math.sqrt(float(np.max(union_mass)))
    union_bound = phi_inf * math.sqrt((n - 1) * discrete_area)

    # Commutator with the partner projector, exact blockwise spectral norm.
    p_single = projector.p_matrix
    commutator_norm = 0.0
    for site in range(d):
        block_indicator = np.diag(pair_site[site, :])
        block = block_indicator @ p_single - p_single @ block_indicator
        commutator_norm = max(commutator_norm,
                              float(np.linalg.norm(block, 2)))
    commutator_bound = 2.0 * phi_inf * math.sqrt(discrete_area)
    commutator_disc_bound = 2.0 * phi_inf * threshold

    state_union = None
    state_triple = None
    if state is not None:
        if state.lattice != lattice or state.n_particles != n:
            raise ValueError("state must match the lattice and particle count")
        weights = np.abs(state.amplitudes) ** 2
        state_union = math.sqrt(float(np.sum(weights[union])) * cell ** n)
        triple = np.zeros((d,) * n, dtype=bool)
        for a, b in itertools.combinations(range(1, n), 2):
            shaped = pair_site.astype(bool).reshape((d, d) + (1,) * (n - 2))
            triple |= np.moveaxis(shaped, (0, 1), (a, b))
        state_triple = math.sqrt(float(np.sum(weights[triple])) * cell ** n)

    return CutoffReport(n, float(d_exponent), threshold, resolved,
                        discrete_area, continuum_area, pair_norm, pair_bound,
                        pair_disc_bound, union_norm, union_bound,
                        commutator_norm, commutator_bound,
                        commutator_disc_bound, state_union, state_triple)
