"""Free-space dipole-dipole couplings between point emitters.

All lengths are measured in units of the lattice transition wavelength
``lambda_L`` and all rates in units of the lattice linewidth ``gamma_L``
(with ``hbar = c = 1``, so the transition wavenumber is ``k = 2*pi``).
Virtual photon exchange between two emitters produces a coherent coupling
``J`` and a dissipative coupling ``Gamma``; both follow from the free-space
electromagnetic Green's tensor evaluated at the emitter separation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WAVENUMBER = 2.0 * np.pi  # k = 2*pi / lambda in lambda = 1 units

# Unit circular polarization in the lattice plane, (ex + i*ey)/sqrt(2).
CIRCULAR = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)


class CoincidentEmittersError(ValueError):
    """Raised when a pair coupling is requested at zero separation."""


def polarization(d) -> np.ndarray:
    """Validate and return a unit-norm complex polarization 3-vector."""
    d = np.asarray(d, dtype=complex)
    if d.shape != (3,):
        raise ValueError(f"polarization must be a 3-vector, got shape {d.shape}")
    norm2 = float(np.real(np.vdot(d, d)))
    if abs(norm2 - 1.0) > 1e-12:
        raise ValueError(f"polarization must have unit norm, got |d|^2 = {norm2!r}")
    return d


def green_tensor(r, k: float = WAVENUMBER) -> np.ndarray:
    """Free-space dyadic Green's tensor G(r, omega) at displacement ``r``.

    Parameters
    ----------
    r : array_like, shape (3,) or (..., 3)
        Displacement between observation and source points, in wavelength
        units.  Broadcasts over leading axes.
    k : float
        Transition wavenumber (defaults to 2*pi, i.e. lambda = 1).

    Returns
    -------
    ndarray, shape (..., 3, 3)
        Complex transpose-symmetric tensor; diverges as r -> 0, so
        coincident points are rejected.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise ValueError("displacement must have a trailing axis of length 3")
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist == 0.0):
        raise CoincidentEmittersError(
            "coincident points; use linewidth normalization instead"
        )
    kr = k * dist[..., None, None]
    rhat = r / dist[..., None]
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(3)
    scalar = 1.0 + 1.0j / kr - 1.0 / kr**2
    longitudinal = -1.0 - 3.0j / kr + 3.0 / kr**2
    prefactor = np.exp(1.0j * kr) / (4.0 * np.pi * dist[..., None, None])
    return prefactor * (scalar * eye + longitudinal * outer)


@dataclass(frozen=True)
class PairCoupling:
    """Coherent (J) and dissipative (Gamma) coupling of one emitter pair."""

    J: float
    Gamma: float


def pair_coupling(r_i, r_j, d_i, d_j, gamma: float = 1.0) -> PairCoupling:
    """Couplings between emitters at ``r_i`` and ``r_j``.

    ``J = -(3*pi*gamma/omega) d_i^dag . Re[G] . d_j`` and
    ``Gamma = (6*pi*gamma/omega) d_i^dag . Im[G] . d_j``; both are real for
    identical polarizations and scale linearly with the linewidth ``gamma``.
    """
    r_i = np.asarray(r_i, dtype=float)
    r_j = np.asarray(r_j, dtype=float)
    d_i = polarization(d_i)
    d_j = polarization(d_j)
    g = green_tensor(r_i - r_j)
    # omega = c*k with c = 1, so 3*pi*gamma/omega = 3*gamma/(2k) * pi/pi
    pref = 3.0 * np.pi * gamma / WAVENUMBER
    j_val = -pref * np.conj(d_i) @ np.real(g) @ d_j
    g_val = 2.0 * pref * np.conj(d_i) @ np.imag(g) @ d_j
    return PairCoupling(J=complex(j_val).real, Gamma=complex(g_val).real)


@dataclass(frozen=True)
class CouplingMatrix:
    """Pairwise coupling matrix ``J_ij - (i/2) Gamma_ij`` for N emitters.

    The diagonal is zero: the single-emitter decay is carried separately by
    the dynamics (as ``-i*gamma/2`` on each excited amplitude), which keeps
    this matrix a pure exchange term.
    """

    m: np.ndarray
    positions: np.ndarray

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def gamma_matrix(self, gamma: float = 1.0) -> np.ndarray:
        """Real dissipative matrix with the single-emitter rate on the diagonal."""
        g = -2.0 * np.imag(self.m)
        np.fill_diagonal(g, gamma)
        return g


def _pair_blocks(pos_a: np.ndarray, pos_b: np.ndarray, d_a: np.ndarray,
                 d_b: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorized J - i*Gamma/2 for all (a, b) pairs; caller masks the diagonal."""
    disp = pos_a[:, None, :] - pos_b[None, :, :]
    g = green_tensor(disp)
    pref = 3.0 * np.pi * gamma / WAVENUMBER
    chi = np.einsum("a,...ab,b->...", np.conj(d_a), g, d_b)
    return -pref * np.real(chi) - 1.0j * pref * np.imag(chi)


def coupling_matrix(positions, dipole, gamma: float = 1.0) -> CouplingMatrix:
    """Build the N x N exchange matrix for one species of emitters.

    Raises
    ------
    CoincidentEmittersError
        If two positions coincide (the offending indices are named).
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    d = polarization(dipole)
    n = len(positions)
    if n > 1:
        disp = positions[:, None, :] - positions[None, :, :]
        dist = np.linalg.norm(disp, axis=-1)
        np.fill_diagonal(dist, np.inf)
        dup = np.argwhere(dist == 0.0)
        if dup.size:
            i, j = dup[0]
            raise CoincidentEmittersError(
                f"emitters {i} and {j} occupy the same position"
            )
    m = np.zeros((n, n), dtype=complex)
    if n > 1:
        # evaluate off-diagonal entries only; the diagonal Green's tensor diverges
        idx = ~np.eye(n, dtype=bool)
        disp = (positions[:, None, :] - positions[None, :, :])[idx]
        g = green_tensor(disp)
        pref = 3.0 * np.pi * gamma / WAVENUMBER
        chi = np.einsum("a,nab,b->n", np.conj(d), g, d)
        m[idx] = -pref * np.real(chi) - 1.0j * pref * np.imag(chi)
    return CouplingMatrix(m=m, positions=positions)


def cross_coupling_vector(source_pos, target_positions, dipole,
                          gamma: float = 1.0) -> np.ndarray:
    """Vector of J - i*Gamma/2 couplings from one emitter to a set of others."""
    source = np.asarray(source_pos, dtype=float).reshape(3)
    targets = np.asarray(target_positions, dtype=float).reshape(-1, 3)
    d = polarization(dipole)
    disp = source[None, :] - targets
    if np.any(np.linalg.norm(disp, axis=-1) == 0.0):
        raise CoincidentEmittersError("source coincides with a target emitter")
    g = green_tensor(disp)
    pref = 3.0 * np.pi * gamma / WAVENUMBER
    chi = np.einsum("a,nab,b->n", np.conj(d), g, d)
    return -pref * np.real(chi) - 1.0j * pref * np.imag(chi)
