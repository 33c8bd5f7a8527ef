"""Adiabatic elimination of the lattice: effective impurity-only model.

For impurities much narrower than the lattice emitters the lattice acts as
a Markovian bath.  Eliminating it yields, for each impurity pair, a direct
free-space exchange term ``Phi`` plus a lattice-mediated term ``phi``
obtained by inverting the lattice response at the impurity frequency.  The
diagonal of the mediated coupling is the impurity self-energy ``Sigma``:
its real part shifts the impurity frequency (removed here by a common
reference) and its imaginary part changes the effective decay rate
``Gamma_eff = gamma_I - 2 Im[Sigma]``.  Near the lattice band edge there is
a detuning window where ``Gamma_eff`` drops far below the bare ``gamma_I``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .couplings import CouplingMatrix, coupling_matrix, cross_coupling_vector
from .geometry import Geometry


class SingularLatticeError(RuntimeError):
    """Lattice response is numerically singular at the requested detuning."""

    def __init__(self, delta_LI: float, rcond: float):
        self.delta_LI = delta_LI
        self.rcond = rcond
        super().__init__(
            f"lattice response not invertible at delta_LI = {delta_LI:.6g} "
            f"(reciprocal condition estimate {rcond:.3g}); the detuning sits "
            "on a lattice band resonance"
        )


class NoSubradiantWindowError(RuntimeError):
    """No detuning with suppressed effective decay found in the search range."""


@dataclass
class LatticeResolvent:
    """Factorized lattice response matrix L at a fixed detuning.

    L has ``delta_LI + i*gamma_L/2`` on the diagonal and the negated
    exchange couplings off it.  Solves reuse one LU factorization.
    """

    matrix: np.ndarray
    delta_LI: float
    rcond: float
    _lu: tuple

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._lu, rhs)


def build_L(lattice_couplings: CouplingMatrix, delta_LI: float,
            gamma_L: float = 1.0, rcond_floor: float = 1e-14) -> LatticeResolvent:
    """Build and factorize the lattice response at detuning ``delta_LI``."""
    n = lattice_couplings.n
    mat = -lattice_couplings.m.copy()
    mat[np.diag_indices(n)] = delta_LI + 0.5j * gamma_L
    lu = sla.lu_factor(mat)
    # cheap 1-norm reciprocal condition estimate from the factorization
    norm1 = np.linalg.norm(mat, 1)
    try:
        inv_norm1 = np.linalg.norm(sla.lu_solve(lu, np.eye(n, dtype=complex)), 1)
        rcond = 1.0 / (norm1 * inv_norm1) if inv_norm1 > 0 else 0.0
    except sla.LinAlgError:
        rcond = 0.0
    if not np.isfinite(rcond) or rcond < rcond_floor:
        raise SingularLatticeError(delta_LI, rcond)
    return LatticeResolvent(matrix=mat, delta_LI=delta_LI, rcond=rcond, _lu=lu)


def build_C(impurity_position, lattice_positions, dipole, gamma_I: float,
            gamma_L: float = 1.0) -> np.ndarray:
    """Impurity-lattice coupling vector, scaled by sqrt(gamma_I/gamma_L)."""
    if gamma_I == 0.0:
        return np.zeros(len(lattice_positions), dtype=complex)
    vec = cross_coupling_vector(impurity_position, lattice_positions, dipole,
                                gamma=gamma_L)
    return np.sqrt(gamma_I / gamma_L) * vec


def lattice_mediated_coupling(c_alpha: np.ndarray, c_beta: np.ndarray,
                              resolvent: LatticeResolvent) -> complex:
    """Mediated coupling phi_ab = C_b . L^-1 . C_a via a linear solve.

    The contraction is a plain (unconjugated) dot product: the lattice
    response is complex-symmetric, which makes phi symmetric in (a, b).
    The alpha = beta case is the self-energy Sigma_alpha.
    """
    x = resolvent.solve(c_alpha)
    return complex(np.dot(c_beta, x))


def effective_decay(sigma_alpha: complex, gamma_I: float) -> float:
    """Effective impurity decay rate gamma_I - 2 Im[Sigma]."""
    return gamma_I - 2.0 * float(np.imag(sigma_alpha))


@dataclass
class EffectiveModel:
    """Impurity-space matrices after eliminating the lattice.

    ``Phi`` is the direct free-space exchange, ``phi`` the lattice-mediated
    exchange (diagonal zero; the diagonal lives in ``Sigma``), ``Sigma`` the
    per-impurity self-energy and ``Gamma_eff`` the resulting decay rate of
    the first impurity.  ``sigma_ref`` is the mean real self-energy, used as
    the common frequency reference in the dynamics.
    """

    Phi: np.ndarray
    phi: np.ndarray
    Sigma: np.ndarray
    Gamma_eff: float
    delta_LI: float
    gamma_I: float
    gamma_R: float
    sigma_ref: float
    band: tuple

    @property
    def n_impurities(self) -> int:
        return len(self.Sigma)

    def pair_coupling(self, alpha: int, beta: int) -> complex:
        """Total exchange coupling Phi + phi for one impurity pair."""
        return complex(self.Phi[alpha, beta] + self.phi[alpha, beta])


def lattice_band(lattice_couplings: CouplingMatrix) -> tuple:
    """Range of collective lattice mode frequencies (real parts of spectrum)."""
    evals = np.linalg.eigvals(lattice_couplings.m)
    return (float(np.min(evals.real)), float(np.max(evals.real)))


def build_effective_model(geometry: Geometry, delta_LI: float,
                          lattice_couplings: CouplingMatrix | None = None,
                          gamma_I: float | None = None) -> EffectiveModel:
    """Assemble Phi, phi, Sigma and Gamma_eff for a geometry at one detuning."""
    imp = geometry.impurities
    g_i = imp.gamma_I if gamma_I is None else gamma_I
    if lattice_couplings is None:
        lattice_couplings = coupling_matrix(geometry.lattice_positions,
                                            geometry.lattice.polarization)
    res = build_L(lattice_couplings, delta_LI)
    n_imp = geometry.n_impurities

    c_vecs = [
        build_C(geometry.impurity_positions[a], geometry.lattice_positions,
                imp.polarization, g_i)
        for a in range(n_imp)
    ]
    solved = [res.solve(c) for c in c_vecs]
    phi_full = np.array(
        [[np.dot(c_vecs[b], solved[a]) for b in range(n_imp)]
         for a in range(n_imp)]
    ).T  # phi[a, b] = C_b . L^-1 . C_a; symmetric, transpose is cosmetic
    sigma = np.diagonal(phi_full).copy()
    phi = phi_full - np.diag(sigma)

    direct = coupling_matrix(geometry.impurity_positions, imp.polarization,
                             gamma=g_i)
    band = lattice_band(lattice_couplings)
    return EffectiveModel(
        Phi=direct.m,
        phi=phi,
        Sigma=sigma,
        Gamma_eff=effective_decay(sigma[0], g_i),
        delta_LI=delta_LI,
        gamma_I=g_i,
        gamma_R=imp.gamma_R,
        sigma_ref=float(np.mean(sigma.real)),
        band=band,
    )


def detuning_sweep(geometry: Geometry, detunings,
                   lattice_couplings: CouplingMatrix | None = None) -> dict:
    """Evaluate Sigma and Gamma_eff of the first impurity over a detuning grid."""
    if lattice_couplings is None:
        lattice_couplings = coupling_matrix(geometry.lattice_positions,
                                            geometry.lattice.polarization)
    gamma_I = geometry.impurities.gamma_I
    c0 = build_C(geometry.impurity_positions[0], geometry.lattice_positions,
                 geometry.impurities.polarization, gamma_I)
    detunings = np.asarray(detunings, dtype=float)
    sigma = np.empty(len(detunings), dtype=complex)
    for k, d in enumerate(detunings):
        res = build_L(lattice_couplings, d)
        sigma[k] = np.dot(c0, res.solve(c0))
    gamma_eff = gamma_I - 2.0 * sigma.imag
    return {"delta_LI": detunings, "Sigma": sigma, "Gamma_eff": gamma_eff}


def _golden_section(f, lo: float, hi: float, tol: float) -> tuple:
    """Minimize a scalar function on [lo, hi] to bracket width ``tol``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def optimal_detuning(geometry: Geometry, search_range: tuple | None = None,
                     grid_points: int = 400, refine_tol: float = 1e-4,
                     lattice_couplings: CouplingMatrix | None = None) -> tuple:
    """Locate the detuning that minimizes the effective impurity decay.

    A coarse grid over the search window is followed by golden-section
    refinement around the best bracket.  The default window sits just above
    the top of the lattice band (detected from the lattice spectrum), where
    the impurity couples off-resonantly to the guided modes.

    Returns ``(delta_LI_opt, Gamma_eff_opt)``.

    Raises
    ------
    NoSubradiantWindowError
        If no grid point improves on the bare decay rate gamma_I.
    """
    if lattice_couplings is None:
        lattice_couplings = coupling_matrix(geometry.lattice_positions,
                                            geometry.lattice.polarization)
    gamma_I = geometry.impurities.gamma_I
    band_lo, band_hi = lattice_band(lattice_couplings)
    if search_range is None:
        margin = 0.5  # stay off the band edge resonance itself
        span = 12.0 * max(1.0, band_hi - band_lo) * 0.25
        search_range = (band_hi + margin, band_hi + margin + span)
    lo, hi = float(search_range[0]), float(search_range[1])
    if hi <= lo:
        raise ValueError("empty detuning search range")

    c0 = build_C(geometry.impurity_positions[0], geometry.lattice_positions,
                 geometry.impurities.polarization, gamma_I)

    def gamma_eff_at(delta: float) -> float:
        res = build_L(lattice_couplings, delta)
        sig = np.dot(c0, res.solve(c0))
        return gamma_I - 2.0 * float(sig.imag)

    grid = np.linspace(lo, hi, grid_points)
    values = np.array([gamma_eff_at(d) for d in grid])
    best = int(np.argmin(values))
    if values[best] >= gamma_I:
        raise NoSubradiantWindowError(
            f"no subradiant window: min Gamma_eff = {values[best]:.3e} over "
            f"delta_LI in [{lo:.3g}, {hi:.3g}] does not beat gamma_I = {gamma_I:.3e}"
        )
    bracket_lo = grid[max(best - 1, 0)]
    bracket_hi = grid[min(best + 1, grid_points - 1)]
    d_opt, g_opt = _golden_section(gamma_eff_at, bracket_lo, bracket_hi,
                                   refine_tol)
    if g_opt > values[best]:
        d_opt, g_opt = float(grid[best]), float(values[best])
    return float(d_opt), float(g_opt)
