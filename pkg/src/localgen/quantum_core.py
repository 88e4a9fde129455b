"""Spin-chain Hamiltonians, product initial states and exact reduced dynamics.

Site 1 is the leftmost Kronecker factor. All energies are in units of the
transverse field and times in units of its inverse.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

HERMITIAN_TOL = 1e-12
POSITIVITY_TOL = 1e-10
BLOCH_NORM_TOL = 1e-10

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class Variant(str, Enum):
    MODEL_I = "ModelI"
    MODEL_II = "ModelII"


@dataclass(frozen=True)
class SpinModel:
    """Parameters of either chain.

    Model I: open chain, power-law density-density interaction, system spin in
    the middle. Model II: ring with nearest-neighbour interaction, spin 1 is the
    system and couples to its two neighbours with ``v_prime``.
    """

    variant: Variant
    N: int
    omega: float = 1.0
    V: float = 0.0
    alpha: float = 1.0
    omega_prime: float = 1.0
    v_prime: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        errors = self.violations()
        if errors:
            raise ValueError("invalid SpinModel: " + "; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if int(self.N) != self.N or self.N < 2:
            out.append(f"N must be an integer >= 2, got {self.N}")
        if not self.omega >= 0:
            out.append(f"omega must be >= 0, got {self.omega}")
        if self.variant is Variant.MODEL_I:
            if not self.alpha > 0:
                out.append(f"alpha must be > 0, got {self.alpha}")
        elif not self.beta >= 0:
            out.append(f"beta must be >= 0, got {self.beta}")
        return out

    @property
    def system_site(self) -> int:
        # Hamiltonians are defined for any N; the reduced spin needs odd N in Model I
        if self.variant is Variant.MODEL_I:
            if self.N % 2 == 0:
                raise ValueError(f"Model I needs odd N for a unique middle spin, got {self.N}")
            return (self.N + 1) // 2
        return 1

    @classmethod
    def model_i(cls, N=7, V=0.0, alpha=1.0, omega=1.0):
        return cls(Variant.MODEL_I, N, omega=omega, V=V, alpha=alpha)

    @classmethod
    def model_ii(cls, N=7, V=0.0, v_prime=0.0, beta=0.0, omega=1.0, omega_prime=None):
        if omega_prime is None:
            omega_prime = omega
        return cls(Variant.MODEL_II, N, omega=omega, V=V, omega_prime=omega_prime,
                   v_prime=v_prime, beta=beta)

    def as_dict(self) -> dict:
        d = {"model": self.variant.value, "N": self.N, "omega": self.omega, "V": self.V}
        if self.variant is Variant.MODEL_I:
            d["alpha"] = self.alpha
        else:
            d.update(omega_prime=self.omega_prime, v_prime=self.v_prime, beta=self.beta)
        return d


def pauli(which: str) -> np.ndarray:
    """2x2 identity or Pauli matrix; ``which`` is one of I, X, Y, Z."""
    try:
        return _PAULI[which.upper()].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli label {which!r}") from None


def embed(op: np.ndarray, site: int, N: int) -> np.ndarray:
    """Place a single-spin operator at ``site`` (1-based) in an N-spin space."""
    if not 1 <= site <= N:
        raise ValueError(f"site {site} out of range 1..{N}")
    left = np.eye(2 ** (site - 1))
    right = np.eye(2 ** (N - site))
    return np.kron(np.kron(left, op), right)


def _diag_n(site: int, N: int) -> np.ndarray:
    # diagonal of n_site in the computational basis (bit 0 of site = up)
    idx = np.arange(2 ** N)
    return (((idx >> (N - site)) & 1) == 0).astype(float)


def _transverse(sites, N: int, strength: float) -> np.ndarray:
    H = np.zeros((2 ** N, 2 ** N), dtype=complex)
    x = _PAULI["X"]
    for i in sites:
        H += strength * embed(x, i, N)
    return H


def build_hamiltonian(model: SpinModel) -> np.ndarray:
    N = model.N
    n = [None] + [_diag_n(i, N) for i in range(1, N + 1)]
    if model.variant is Variant.MODEL_I:
        H = _transverse(range(1, N + 1), N, model.omega)
        diag = np.zeros(2 ** N)
        for i in range(1, N + 1):
            for j in range(i + 1, N + 1):
                diag += model.V * n[i] * n[j] / abs(i - j) ** model.alpha
    else:
        H = _transverse(range(2, N + 1), N, model.omega)
        H += model.omega_prime * embed(_PAULI["X"], 1, N)
        diag = np.zeros(2 ** N)
        for j in range(2, N):
            diag += model.V * n[j] * n[j + 1]
        diag += model.v_prime * n[1] * (n[2] + n[N])
    H[np.diag_indices_from(H)] += diag
    return H


def _bath_hamiltonian(model: SpinModel) -> np.ndarray:
    # Model II with omega' = v' = 0, restricted to spins 2..N (relabelled 1..N-1)
    M = model.N - 1
    H = _transverse(range(1, M + 1), M, model.omega)
    diag = np.zeros(2 ** M)
    for j in range(1, M):
        diag += model.V * _diag_n(j, M) * _diag_n(j + 1, M)
    H[np.diag_indices_from(H)] += diag
    return H


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigen-decomposition H = Q diag(E) Q^dagger of a Hermitian operator."""

    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, H: np.ndarray) -> "SpectralDecomposition":
        check_hermitian(H)
        E, Q = np.linalg.eigh(H)
        return cls(E, Q)

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ op @ self.vectors

    def from_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.vectors @ op @ self.vectors.conj().T

    def function(self, f) -> np.ndarray:
        return (self.vectors * f(self.energies)) @ self.vectors.conj().T

    def propagate(self, rho0: np.ndarray, t: float) -> np.ndarray:
        """Full state U_t rho0 U_t^dagger."""
        phase = np.exp(-1j * self.energies * t)
        rt = self.to_eigenbasis(rho0) * np.outer(phase, phase.conj())
        return self.from_eigenbasis(rt)


def check_hermitian(H: np.ndarray, tol: float = HERMITIAN_TOL) -> None:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"operator must be square, got shape {H.shape}")
    dev = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if dev > tol:
        raise ValueError(f"operator is not Hermitian (max deviation {dev:.3g})")


def check_density_matrix(rho: np.ndarray) -> None:
    check_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1) > HERMITIAN_TOL * max(1, rho.shape[0]):
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    lo = np.linalg.eigvalsh(rho).min()
    if lo < -POSITIVITY_TOL:
        raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")


def build_bath_state(model: SpinModel) -> np.ndarray:
    """Bath state on the N-1 non-system spins.

    Model I uses the infinite-temperature state; Model II the Gibbs state of
    the bath-only Hamiltonian at inverse temperature ``beta``.
    """
    d = 2 ** (model.N - 1)
    if model.variant is Variant.MODEL_I or model.beta == 0:
        return np.eye(d, dtype=complex) / d
    if model.beta < 0:
        raise ValueError("beta must be >= 0")
    spec = SpectralDecomposition.of(_bath_hamiltonian(model))
    # shift by the ground energy so the exponent never overflows
    E0 = spec.energies.min()
    rho = spec.function(lambda E: np.exp(-model.beta * (E - E0)))
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def system_block(x: float, y: float, z: float) -> np.ndarray:
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]], dtype=complex)


def _place(op2: np.ndarray, bath: np.ndarray, site: int) -> np.ndarray:
    """Kronecker product op2 (x) bath with op2 moved to tensor position ``site``."""
    dB = bath.shape[0]
    N = int(round(np.log2(dB))) + 1
    if 2 ** (N - 1) != dB:
        raise ValueError(f"bath dimension {dB} is not a power of two")
    if not 1 <= site <= N:
        raise ValueError(f"system_site {site} out of range 1..{N}")
    full = np.kron(op2, bath).reshape((2,) * (2 * N))
    # axes: ket (s, b1..b_{N-1}), bra (s, b1..b_{N-1}); move s to position site-1
    ket = list(range(1, N))
    ket.insert(site - 1, 0)
    perm = ket + [N + a for a in ket]
    return full.transpose(perm).reshape(2 ** N, 2 ** N)


def initial_product_state(system_bloch, bath: np.ndarray, system_site: int) -> np.ndarray:
    x, y, z = (float(c) for c in system_bloch)
    r2 = x * x + y * y + z * z
    if r2 > 1 + BLOCH_NORM_TOL:
        raise ValueError(f"Bloch vector norm {np.sqrt(r2):.6g} exceeds 1")
    return _place(system_block(x, y, z), bath, system_site)


def partial_trace_to_system(rho: np.ndarray, system_site: int, N: int) -> np.ndarray:
    """Reduced 2x2 state of spin ``system_site``."""
    rho = np.asarray(rho)
    if rho.shape != (2 ** N, 2 ** N):
        raise ValueError(f"expected a {2 ** N}x{2 ** N} matrix, got {rho.shape}")
    if not 1 <= system_site <= N:
        raise ValueError(f"system_site {system_site} out of range 1..{N}")
    k = system_site - 1
    t = rho.reshape(2 ** k, 2, 2 ** (N - k - 1), 2 ** k, 2, 2 ** (N - k - 1))
    return np.einsum("aibajb->ij", t)


def bloch_from_density(rho_s: np.ndarray) -> np.ndarray:
    rho_s = np.asarray(rho_s)
    if rho_s.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got {rho_s.shape}")
    v = np.array([
        1.0,
        2 * rho_s[1, 0].real,
        2 * rho_s[1, 0].imag,
        (rho_s[0, 0] - rho_s[1, 1]).real,
    ])
    v[0] = 1.0
    _check_bloch(v)
    return v


def density_from_bloch(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    _check_bloch(v)
    return 0.5 * sum(c * _PAULI[s] for c, s in zip(v, "IXYZ"))


def _check_bloch(v: np.ndarray) -> None:
    if v.shape != (4,):
        raise ValueError(f"Bloch vector must have 4 components, got shape {v.shape}")
    r2 = float(v[1:] @ v[1:])
    if r2 > 1 + BLOCH_NORM_TOL:
        raise ValueError(f"Bloch vector norm {np.sqrt(r2):.6g} exceeds 1")


def time_grid(T: float, dt: float) -> np.ndarray:
    if not (T > 0 and dt > 0):
        raise ValueError(f"T and dt must be positive, got T={T}, dt={dt}")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return np.arange(n + 1) * dt


def _system_observables(system_site: int, N: int):
    return [embed(_PAULI[s], system_site, N) for s in "XYZ"]


def evolve_reduced(H, rho0, system_site: int, T: float, dt: float,
                   spectral: SpectralDecomposition | None = None):
    """Bloch vectors of the system spin on the grid 0, dt, ..., T.

    Returns ``(times, vectors)`` with ``vectors`` of shape (len(times), 4).
    """
    H = np.asarray(H)
    rho0 = np.asarray(rho0)
    if H.shape != rho0.shape:
        raise ValueError(f"dimension mismatch: H {H.shape} vs rho0 {rho0.shape}")
    N = int(round(np.log2(H.shape[0])))
    times = time_grid(T, dt)
    spec = spectral if spectral is not None else SpectralDecomposition.of(H)
    rho_t = spec.to_eigenbasis(rho0)
    # <O>_t = sum_mn p_m (rho~_mn O~_nm) conj(p_n), p_m = exp(-i E_m t)
    weights = np.stack([rho_t * spec.to_eigenbasis(O).T for O in _system_observables(system_site, N)])
    vectors = np.empty((len(times), 4))
    vectors[:, 0] = 1.0
    vectors[:, 1:] = _phase_expectations(spec.energies, weights, times)
    return times, vectors


def _phase_expectations(E, weights, times, chunk: int = 512):
    """Real parts of p(t)^T W p(t)^* for each stacked weight matrix W."""
    out = np.empty((len(times), len(weights)))
    for s in range(0, len(times), chunk):
        P = np.exp(-1j * np.outer(times[s:s + chunk], E))
        for k, W in enumerate(weights):
            out[s:s + chunk, k] = np.einsum("tm,tm->t", P @ W, P.conj()).real
    return out


def dynamical_map(model: SpinModel, T: float, dt: float,
                  H: np.ndarray | None = None, bath: np.ndarray | None = None):
    """Exact reduced map Phi(t) with v(t) = Phi(t) v(0) for product initial states.

    The initial state depends affinely on the system Bloch vector, so evolving
    the four inputs sigma_j/2 (x) bath once gives every trajectory of a model.
    Returns ``(times, maps)`` with ``maps`` of shape (len(times), 4, 4).
    """
    H = build_hamiltonian(model) if H is None else H
    bath = build_bath_state(model) if bath is None else bath
    site = model.system_site
    times = time_grid(T, dt)
    spec = SpectralDecomposition.of(H)
    obs = [spec.to_eigenbasis(O).T for O in _system_observables(site, model.N)]
    weights = []
    for j in range(4):
        rho_j = spec.to_eigenbasis(_place(0.5 * _PAULI["IXYZ"[j]], bath, site))
        weights.extend(rho_j * O for O in obs)
    vals = _phase_expectations(spec.energies, weights, times).reshape(len(times), 4, 3)
    maps = np.zeros((len(times), 4, 4))
    maps[:, 0, 0] = 1.0
    maps[:, 1:, :] = vals.transpose(0, 2, 1)
    return times, maps
