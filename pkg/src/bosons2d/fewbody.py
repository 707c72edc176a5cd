"""Exact dynamics of a handful of bosons on a small periodic 2D lattice.

States live on the N-fold tensor power of the m x m site lattice, stored as
a complex tensor with one axis of length d = m^2 per particle. The
Hamiltonian applies a spectral single-particle Laplacian (so lattice plane
waves are exact eigenstates), a pairwise interaction sampled at periodic
minimum-image displacements, and an external per-site field. Propagation is
a Krylov approximation of the matrix exponential with full
reorthogonalization, falling back to adaptive sub-stepping; small problems
may instead use a cached dense eigendecomposition.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from typing import Callable, Sequence, TextIO

import numpy as np
import scipy.fft

from .gp import ExternalField

__all__ = [
    "Lattice2D",
    "FewBodyState",
    "DiscreteHamiltonian",
    "DIMENSION_BUDGET",
    "build_hamiltonian",
    "propagate",
    "energy_per_particle",
    "jastrow_initial_state",
    "hermiticity_defect",
    "dense_matrix",
    "fewbody_recorder",
    "write_fewbody_checkpoint",
    "read_fewbody_checkpoint",
]

DIMENSION_BUDGET = 1 << 22
_DENSE_LIMIT = 4096
_AUTO_DENSE_LIMIT = 1024
_MAX_SUBSTEP_DEPTH = 8


@dataclasses.dataclass(frozen=True)
class Lattice2D:
    """Periodic m x m lattice on [0, L)^2; single-particle dimension m^2."""
    m: int
    box_length: float

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if not (self.box_length > 0):
            raise ValueError("box_length must be positive")

    @property
    def d(self) -> int:
        return self.m * self.m

    @property
    def spacing(self) -> float:
        return self.box_length / self.m

    def axis(self) -> np.ndarray:
        return np.arange(self.m) * self.spacing

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.m, d=self.spacing)

    def minimum_image_distances(self) -> np.ndarray:
        """(m, m) table of |x| at coordinate displacement (di, dj)."""
        idx = np.arange(self.m)
        signed = (idx + self.m // 2) % self.m - self.m // 2
        delta = signed * self.spacing
        return np.hypot(delta[:, None], delta[None, :])


def _pair_site_table(m: int, displacement_values: np.ndarray) -> np.ndarray:
    """(m^2, m^2) site-pair matrix from an (m, m) displacement table."""
    idx = np.arange(m)
    row = (idx[:, None, None, None] - idx[None, None, :, None]) % m
    col = (idx[None, :, None, None] - idx[None, None, None, :]) % m
    return displacement_values[row, col].reshape(m * m, m * m)


@dataclasses.dataclass(frozen=True)
class FewBodyState:
    """Normalized bosonic amplitudes with one axis of length d per particle."""
    lattice: Lattice2D
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.ndim < 1 or amp.ndim > 4:
            raise ValueError("particle count must be between 1 and 4")
        if amp.shape != (self.lattice.d,) * amp.ndim:
            raise ValueError("amplitudes must have one axis of length m^2 per particle")
        if self.lattice.d ** amp.ndim > DIMENSION_BUDGET:
            raise ValueError(
                f"Hilbert dimension {self.lattice.d ** amp.ndim} exceeds budget {DIMENSION_BUDGET}")
        object.__setattr__(self, "amplitudes", amp)

    @property
    def n_particles(self) -> int:
        return self.amplitudes.ndim

    def norm(self) -> float:
        cell = self.lattice.spacing ** 2
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2))
                         * cell ** self.n_particles)

    def normalized(self) -> "FewBodyState":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero state")
        return FewBodyState(self.lattice, self.amplitudes / nrm, self.time)

    def symmetry_defect(self) -> float:
        """Largest deviation from invariance under pairwise transpositions."""
        worst = 0.0
        for a in range(self.n_particles):
            for b in range(a + 1, self.n_particles):
                swapped = np.swapaxes(self.amplitudes, a, b)
                worst = max(worst, float(np.max(np.abs(swapped - self.amplitudes))))
        return worst


@dataclasses.dataclass(frozen=True)
class DiscreteHamiltonian:
    """Matrix-free -sum Delta_j + sum_{j<k} U(x_j - x_k) + sum_j A(x_j).

    kinetic_symbol is the per-particle spectral Laplacian multiplier |k|^2,
    interaction_table samples U at minimum-image coordinate displacements,
    and external_field is A at the build time, all on (m, m) arrays. The
    full diagonal potential and the summed kinetic multiplier are
    precomputed dense tensors of the state's shape.
    """
    lattice: Lattice2D
    n_particles: int
    kinetic_symbol: np.ndarray
    interaction_table: np.ndarray
    external_field: np.ndarray
    time: float = 0.0
    workers: int = 1

    def __post_init__(self) -> None:
        m, n = self.lattice.m, self.n_particles
        if n < 1 or n > 4:
            raise ValueError("particle count must be between 1 and 4")
        dim = self.lattice.d ** n
        if dim > DIMENSION_BUDGET:
            raise ValueError(f"Hilbert dimension {dim} exceeds budget {DIMENSION_BUDGET}")
        if np.any(self.interaction_table < 0):
            raise ValueError("interaction samples must be nonnegative")
        shape = (m,) * (2 * n)
        k2 = self.kinetic_symbol
        kinetic_total = np.zeros(shape)
        potential_total = np.zeros(shape)
        for p in range(n):
            axes_shape = [1] * (2 * n)
            axes_shape[2 * p] = m
            axes_shape[2 * p + 1] = m
            kinetic_total = kinetic_total + k2.reshape(axes_shape)
            potential_total = potential_total + self.external_field.reshape(axes_shape)
        pair_d = _pair_site_table(m, self.interaction_table)
        for a in range(n):
            for b in range(a + 1, n):
                axes_shape = [1] * (2 * n)
                for ax in (2 * a, 2 * a + 1, 2 * b, 2 * b + 1):
                    axes_shape[ax] = m
                potential_total = potential_total + pair_d.reshape(axes_shape)
        object.__setattr__(self, "_kinetic_total", kinetic_total)
        object.__setattr__(self, "_potential_total", potential_total)
        object.__setattr__(self, "_cache", {})

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        m, n = self.lattice.m, self.n_particles
        psi = amplitudes.reshape((m,) * (2 * n))
        psi_hat = scipy.fft.fftn(psi, workers=self.workers)
        kinetic = scipy.fft.ifftn(self._kinetic_total * psi_hat, workers=self.workers)
        return (kinetic + self._potential_total * psi).reshape(amplitudes.shape)


def build_hamiltonian(lattice: Lattice2D, n_particles: int,
                      interaction: Callable[[np.ndarray], np.ndarray] | None = None,
                      field: ExternalField | None = None, t: float = 0.0,
                      workers: int = 1) -> DiscreteHamiltonian:
    """Assemble the lattice Hamiltonian at external-field time t.

    interaction is any radial potential callable (evaluated at minimum-image
    pair distances); an interaction whose support falls below the lattice
    spacing is kept but flagged, since the lattice then sees only its value
    at zero displacement.
    """
    dim = lattice.d ** n_particles
    if dim > DIMENSION_BUDGET:
        raise ValueError(f"Hilbert dimension {dim} exceeds budget {DIMENSION_BUDGET}")
    k = lattice.wavenumbers()
    kinetic = k[:, None] ** 2 + k[None, :] ** 2
    if interaction is None:
        table = np.zeros((lattice.m, lattice.m))
    else:
        support = getattr(interaction, "support_radius", None)
        if support is not None and support < lattice.spacing:
            warnings.warn(
                f"interaction support {support:.3e} is below the lattice spacing "
                f"{lattice.spacing:.3e}; only the zero-displacement sample acts",
                RuntimeWarning, stacklevel=2)
        table = np.asarray(interaction(lattice.minimum_image_distances().ravel()),
                           dtype=float).reshape(lattice.m, lattice.m)
    a_now = (np.zeros((lattice.m, lattice.m)) if field is None
             else field.evaluate(lattice, t))
    return DiscreteHamiltonian(lattice, int(n_particles), kinetic, table, a_now,
                               time=t, workers=workers)


def hermiticity_defect(hamiltonian: DiscreteHamiltonian, n_pairs: int = 20,
                       seed: int = 0) -> float:
    """Max |<Hx, y> - <x, Hy>| over random normalized pairs."""
    rng = np.random.default_rng(seed)
    dim = hamiltonian.lattice.d ** hamiltonian.n_particles
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        y = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        shape = (hamiltonian.lattice.d,) * hamiltonian.n_particles
        hx = hamiltonian.apply(x.reshape(shape)).ravel()
        hy = hamiltonian.apply(y.reshape(shape)).ravel()
        worst = max(worst, abs(np.vdot(hx, y) - np.vdot(x, hy)))
    return worst


def dense_matrix(hamiltonian: DiscreteHamiltonian) -> np.ndarray:
    """Dense matrix of the operator; only for dimensions <= 4096."""
    dim = hamiltonian.lattice.d ** hamiltonian.n_particles
    if dim > _DENSE_LIMIT:
        raise ValueError(f"dense form limited to dimension {_DENSE_LIMIT}, got {dim}")
    cache = hamiltonian._cache
    if "dense" not in cache:
        shape = (hamiltonian.lattice.d,) * hamiltonian.n_particles
        basis = np.eye(dim, dtype=complex)
        columns = [hamiltonian.apply(basis[:, i].reshape(shape)).ravel()
                   for i in range(dim)]
        cache["dense"] = np.column_stack(columns)
    return cache["dense"]


def _dense_step(hamiltonian: DiscreteHamiltonian, amplitudes: np.ndarray,
                dt: float) -> np.ndarray:
    cache = hamiltonian._cache
    if "eig" not in cache:
        cache["eig"] = np.linalg.eigh(dense_matrix(hamiltonian))
    w, v = cache["eig"]
    flat = amplitudes.ravel()
    return (v @ (np.exp(-1j * dt * w) * (v.conj().T @ flat))).reshape(amplitudes.shape)


def _lanczos_step(hamiltonian: DiscreteHamiltonian, amplitudes: np.ndarray, dt: float,
                  tol: float, max_dim: int, depth: int = 0) -> np.ndarray:
    """exp(-i dt H) v by Lanczos with full reorthogonalization.

    The a-posteriori estimate is the classical last-entry bound; when the
    subspace saturates without meeting tol the step recurses on two half
    steps, at most _MAX_SUBSTEP_DEPTH times before reporting failure.
    """
    flat = amplitudes.ravel()
    nrm = np.linalg.norm(flat)
    if nrm == 0.0:
        return amplitudes
    shape = amplitudes.shape
    basis = [flat / nrm]
    alphas: list[float] = []
    betas: list[float] = []
    estimate = math.inf
    for k in range(max_dim):
        w = hamiltonian.apply(basis[k].reshape(shape)).ravel()
        alphas.append(float(np.real(np.vdot(basis[k], w))))
        w = w - alphas[k] * basis[k]
        if k > 0:
            w = w - betas[k - 1] * basis[k - 1]
        for q in basis:
            w = w - np.vdot(q, w) * q
        beta = float(np.linalg.norm(w))
        tri = np.diag(alphas).astype(complex)
        off = np.asarray(betas)
        if off.size:
            tri += np.diag(off, 1) + np.diag(off, -1)
        eigval, eigvec = np.linalg.eigh(tri)
        small = eigvec @ (np.exp(-1j * dt * eigval) * eigvec[0].conj())
        if beta < 1e-13:
            estimate = 0.0
            break
        estimate = abs(dt) * beta * abs(small[-1])
        if estimate < tol and k + 1 >= 3:
            break
        betas.append(beta)
        basis.append(w / beta)
    else:
        small = None
    if small is None or estimate >= tol:
        if depth >= _MAX_SUBSTEP_DEPTH:
            raise RuntimeError(
                f"Krylov propagation failed: estimate {estimate:.3e} above {tol:.1e} "
                f"at subspace dimension {max_dim}, sub-step depth {depth}")
        half = _lanczos_step(hamiltonian, amplitudes, dt / 2.0, tol, max_dim, depth + 1)
        return _lanczos_step(hamiltonian, half, dt / 2.0, tol, max_dim, depth + 1)
    out = np.zeros_like(flat)
    for coeff, vec in zip(small[: len(basis)], basis):
        out += coeff * vec
    return (nrm * out).reshape(shape)


def propagate(state: FewBodyState, hamiltonian: DiscreteHamiltonian, dt: float,
              method: str = "auto", krylov_tol: float = 1e-12,
              max_krylov_dim: int = 40) -> FewBodyState:
    """Advance by dt under the (time-frozen) Hamiltonian.

    method "auto" picks the cached dense eigendecomposition for dimensions
    up to 1024 and Lanczos otherwise; "dense" and "krylov" force the choice.
    """
    if state.lattice != hamiltonian.lattice or state.n_particles != hamiltonian.n_particles:
        raise ValueError("state and Hamiltonian live on different spaces")
    dim = state.lattice.d ** state.n_particles
    if method == "auto":
        method = "dense" if dim <= _AUTO_DENSE_LIMIT else "krylov"
    if method == "dense":
        amp = _dense_step(hamiltonian, state.amplitudes, float(dt))
    elif method == "krylov":
        amp = _lanczos_step(hamiltonian, state.amplitudes, float(dt),
                            krylov_tol, max_krylov_dim)
    else:
        raise ValueError(f"unknown method {method!r}")
    return FewBodyState(state.lattice, amp, state.time + float(dt))


def energy_per_particle(state: FewBodyState, hamiltonian: DiscreteHamiltonian) -> float:
    """N^(-1) <Psi, H Psi> in the lattice measure; real to roundoff."""
    cell = state.lattice.spacing ** 2
    h_psi = hamiltonian.apply(state.amplitudes)
    value = complex(np.vdot(state.amplitudes, h_psi)) * cell ** state.n_particles
    return float(value.real) / state.n_particles


def jastrow_initial_state(phi: np.ndarray, pair, lattice: Lattice2D,
                          n_particles: int) -> FewBodyState:
    """Normalized product of pair factors times the condensate product.

    phi is an (m, m) single-particle field, normalized on the lattice; pair
    (when given) supplies the radial factor through its f_evaluate profile,
    sampled at minimum-image distances. A pair factor whose support falls
    below the lattice spacing cannot be represented and degenerates to the
    pure product state, with a warning.
    """
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.shape != (lattice.m, lattice.m):
        raise ValueError("phi must be sampled on the lattice")
    cell = lattice.spacing ** 2
    nrm = math.sqrt(float(np.sum(np.abs(phi) ** 2)) * cell)
    if abs(nrm - 1.0) > 1e-6:
        raise ValueError("phi must be normalized on the lattice")
    site_phi = phi.ravel()
    amp = site_phi
    for _ in range(n_particles - 1):
        amp = np.multiply.outer(amp, site_phi)
    if pair is not None:
        if pair.R_beta < lattice.spacing:
            warnings.warn(
                f"pair factor support {pair.R_beta:.3e} is below the lattice spacing "
                f"{lattice.spacing:.3e}; returning the pure product state",
                RuntimeWarning, stacklevel=2)
        else:
            dist = lattice.minimum_image_distances()
            factor = np.asarray(pair.f_evaluate(np.minimum(dist, pair.R_beta).ravel()),
                                dtype=float).reshape(lattice.m, lattice.m)
            pair_d = _pair_site_table(lattice.m, factor)
            for a in range(n_particles):
                for b in range(a + 1, n_particles):
                    shape = [1] * n_particles
                    shape[a] = lattice.d
                    shape[b] = lattice.d
                    amp = amp * pair_d.reshape(shape)
    state = FewBodyState(lattice, amp, 0.0)
    return state.normalized()


def fewbody_recorder(stream: TextIO, hamiltonian: DiscreteHamiltonian,
                     extra: Callable[[FewBodyState], float] | None = None,
                     ) -> Callable[[FewBodyState], None]:
    """Observer writing CSV rows (t, norm, energy per particle, extra)."""
    stream.write("t,norm,energy_per_particle,extra\n")

    def record(state: FewBodyState) -> None:
        tail = float("nan") if extra is None else float(extra(state))
        stream.write("%.17g,%.17g,%.17g,%.17g\n" % (
            state.time, state.norm(), energy_per_particle(state, hamiltonian), tail))

    return record


def write_fewbody_checkpoint(state: FewBodyState, path: str) -> None:
    """Raw little-endian complex128 tensor plus a JSON sidecar at path + '.json'."""
    state.amplitudes.astype("<c16").tofile(path)
    sidecar = {
        "n_particles": state.n_particles,
        "m": state.lattice.m,
        "box_length": state.lattice.box_length,
        "time": state.time,
        "dtype": "complex128",
        "order": "C",
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fewbody_checkpoint(path: str) -> FewBodyState:
    with open(path + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    lattice = Lattice2D(int(sidecar["m"]), float(sidecar["box_length"]))
    n = int(sidecar["n_particles"])
    raw = np.fromfile(path, dtype="<c16")
    if raw.size != lattice.d ** n:
        raise ValueError(f"checkpoint holds {raw.size} samples, expected {lattice.d ** n}")
    return FewBodyState(lattice, raw.reshape((lattice.d,) * n).astype(np.complex128),
                        float(sidecar["time"]))
