"""Non-Hermitian wavefunction dynamics of the impurity-lattice system.

The state evolves under ``d psi / dt = -i H psi`` with a piecewise-constant
Hamiltonian.  Within a segment:

* every excited impurity contributes its complex diagonal (decay plus any
  self-energy or decoupling detuning), every metastable impurity its decay
  and two-photon detuning, every excited lattice site the lattice detuning
  and linewidth;
* excitations hop between emitters with the photon-exchange couplings;
* classical drives connect ``g <-> e`` and ``e <-> r`` of each impurity.

Each drive setting defines a constant linear system, so segments can be
advanced either with an adaptive Runge-Kutta integrator (``evolve``) or
exactly through a cached spectral/Krylov propagator (``propagate``), which
is what makes deep circuits affordable.  Amplitudes are stored in the
rotating frame of the drives: fast optical phases never appear, and a
parked metastable amplitude is stationary when its drive is off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .basis import Basis, Tier, build_basis
from .couplings import CouplingMatrix, coupling_matrix, cross_coupling_vector
from .effective import EffectiveModel
from .geometry import Geometry

# Dense spectral propagation is worthwhile below this dimension; above it,
# scaled Taylor (expm_multiply) on the sparse matrix wins.
EIG_DIM_LIMIT = 2600

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


class StepSizeUnderflowError(RuntimeError):
    """Integrator could not advance; carries the time actually reached."""

    def __init__(self, t_reached: float, detail: str = ""):
        self.t_reached = t_reached
        super().__init__(
            f"integration stalled at t = {t_reached:.9g}"
            + (f": {detail}" if detail else "")
        )


@dataclass(frozen=True)
class DriveSettings:
    """Per-impurity piecewise-constant drive parameters.

    ``omega`` drives g <-> e, ``omega_f`` drives e <-> r (both complex;
    position-dependent phases are folded into the strengths), ``delta_R``
    is the two-photon detuning of the e <-> r drive and ``delta_dec`` a
    decoupling shift applied to the excited state.
    """

    omega: np.ndarray
    omega_f: np.ndarray
    delta_R: np.ndarray
    delta_dec: np.ndarray

    @classmethod
    def zero(cls, n_impurities: int) -> "DriveSettings":
        n = int(n_impurities)
        return cls(
            omega=np.zeros(n, dtype=complex),
            omega_f=np.zeros(n, dtype=complex),
            delta_R=np.zeros(n),
            delta_dec=np.zeros(n),
        )

    def replace(self, **per_impurity) -> "DriveSettings":
        """Copy with named fields updated at given impurity indices.

        Example: ``drives.replace(omega={0: 1.0}, delta_R={1: 200.0})``.
        """
        fields = {
            "omega": self.omega.copy(),
            "omega_f": self.omega_f.copy(),
            "delta_R": self.delta_R.copy(),
            "delta_dec": self.delta_dec.copy(),
        }
        for name, updates in per_impurity.items():
            if name not in fields:
                raise ValueError(f"unknown drive field {name!r}")
            for idx, value in updates.items():
                fields[name][int(idx)] = value
        return DriveSettings(**fields)

    @property
    def n_impurities(self) -> int:
        return len(self.omega)

    def is_zero(self) -> bool:
        return not (
            np.any(self.omega) or np.any(self.omega_f)
            or np.any(self.delta_R) or np.any(self.delta_dec)
        )

    def key(self) -> bytes:
        """Canonical byte key for propagator caching."""
        return b"".join(
            np.ascontiguousarray(a).tobytes()
            for a in (self.omega, self.omega_f, self.delta_R, self.delta_dec)
        )

    def validate(self):
        for arr in (self.omega, self.omega_f, self.delta_R, self.delta_dec):
            if not np.all(np.isfinite(np.asarray(arr, dtype=complex))):
                raise ValueError("drive settings must be finite")


@dataclass
class StateVector:
    """Complex amplitudes over a tier basis, tagged with the current time."""

    amplitudes: np.ndarray
    system: "System"
    time: float = 0.0

    @property
    def basis(self) -> Basis:
        return self.system.basis

    @property
    def tier(self) -> Tier:
        return self.system.basis.tier

    def norm2(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.system, self.time)

    def population(self, label) -> float:
        return float(abs(self.amplitudes[self.basis.state_index(label)]) ** 2)


class System:
    """Basis plus the drive-independent Hamiltonian and drive patterns.

    ``hamiltonian(drives)`` assembles the sparse Hamiltonian for one
    segment; spectral propagators are cached per drive setting.
    """

    def __init__(self, basis: Basis, h_static: sp.csr_matrix,
                 raise_ge: list, raise_er: list,
                 diag_e: np.ndarray, diag_r: np.ndarray):
        self.basis = basis
        self.h_static = h_static
        self._raise_ge = raise_ge
        self._raise_er = raise_er
        self._diag_e = diag_e  # (n_imp, dim) 0/1 masks of e-occupation
        self._diag_r = diag_r
        self._prop_cache: dict = {}

    @property
    def dim(self) -> int:
        return self.basis.dim

    # -- state construction -------------------------------------------------

    def initial_state(self, spec, time: float = 0.0,
                      normalize_check: bool = True) -> StateVector:
        """State from a label string or a {label: amplitude} mapping."""
        amps = np.zeros(self.dim, dtype=complex)
        if isinstance(spec, str):
            amps[self.basis.state_index(spec)] = 1.0
        else:
            for label, value in spec.items():
                amps[self.basis.state_index(label)] = value
        if normalize_check:
            norm2 = float(np.real(np.vdot(amps, amps)))
            if abs(norm2 - 1.0) > 1e-9:
                raise ValueError(f"initial state not normalized: |psi|^2 = {norm2}")
        return StateVector(amps, self, time)

    # -- Hamiltonian assembly ------------------------------------------------

    def hamiltonian(self, drives: DriveSettings) -> sp.csr_matrix:
        drives.validate()
        if drives.n_impurities != self.basis.n_impurities:
            raise ValueError("drive settings sized for a different impurity count")
        h = self.h_static
        parts = []
        for a in range(self.basis.n_impurities):
            om = complex(drives.omega[a])
            if om != 0:
                parts.append(-np.conj(om) * self._raise_ge[a]
                             - om * self._raise_ge[a].T)
            omf = complex(drives.omega_f[a])
            if omf != 0:
                parts.append(-np.conj(omf) * self._raise_er[a]
                             - omf * self._raise_er[a].T)
        diag = np.zeros(self.dim)
        active = False
        for a in range(self.basis.n_impurities):
            if drives.delta_dec[a] != 0:
                diag += drives.delta_dec[a] * self._diag_e[a]
                active = True
            if drives.delta_R[a] != 0:
                diag -= drives.delta_R[a] * self._diag_r[a]
                active = True
        if active:
            parts.append(sp.diags(diag.astype(complex)))
        if parts:
            h = (h + sum(parts)).tocsr()
        return h

    def rhs(self, drives: DriveSettings):
        """Right-hand side ``f(t, psi) = -i H psi`` for one segment."""
        h = self.hamiltonian(drives)
        return lambda t, y: -1j * (h @ y)

    # -- exact propagation ---------------------------------------------------

    def propagator(self, drives: DriveSettings) -> "_Propagator":
        key = drives.key()
        prop = self._prop_cache.get(key)
        if prop is None:
            h = self.hamiltonian(drives)
            if self.dim <= EIG_DIM_LIMIT:
                prop = _EigPropagator(h.toarray())
            elif drives.is_zero():
                prop = _BlockEigPropagator(h, np.asarray(self.basis.excitations))
            else:
                prop = _ExpmPropagator(h)
            self._prop_cache[key] = prop
        return prop


class _EigPropagator:
    """Spectral propagator from a dense eigendecomposition.

    Valid because each segment Hamiltonian is constant; accuracy is
    monitored through the eigenvector residual (non-normal matrices can in
    principle be badly conditioned, in which case we refuse and the caller
    can fall back to direct integration).
    """

    def __init__(self, h: np.ndarray):
        w, v = np.linalg.eig(h)
        self._w = w
        self._v = v
        self._lu = sla.lu_factor(v)
        scale = max(np.linalg.norm(h), 1.0)
        residual = np.linalg.norm(h @ v - v * w) / scale
        recon = sla.lu_solve(self._lu, v)
        cond_ok = np.allclose(recon, np.eye(len(w)), atol=1e-8)
        if residual > 1e-8 or not cond_ok:
            raise RuntimeError(
                f"eigendecomposition too ill-conditioned for propagation "
                f"(residual {residual:.2e})"
            )

    def advance(self, amps: np.ndarray, dt: float) -> np.ndarray:
        coeff = sla.lu_solve(self._lu, amps)
        return self._v @ (np.exp(-1j * self._w * dt) * coeff)

    def advance_many(self, amps: np.ndarray, times: np.ndarray) -> np.ndarray:
        coeff = sla.lu_solve(self._lu, amps)
        phases = np.exp(-1j * np.outer(times, self._w))
        return (phases * coeff) @ self._v.T


class _BlockEigPropagator:
    """Spectral propagation per excitation-number block.

    With all drives off the Hamiltonian conserves the excitation number, so
    the spectral problem factorizes into much smaller blocks.
    """

    def __init__(self, h: sp.csr_matrix, excitations: np.ndarray):
        self._blocks = []
        for n_exc in np.unique(excitations):
            idx = np.flatnonzero(excitations == n_exc)
            sub = h[np.ix_(idx, idx)].toarray()
            if len(idx) <= EIG_DIM_LIMIT:
                self._blocks.append((idx, _EigPropagator(sub)))
            else:
                self._blocks.append((idx, _ExpmPropagator(sp.csr_matrix(sub))))

    def advance(self, amps: np.ndarray, dt: float) -> np.ndarray:
        out = np.empty_like(amps)
        for idx, prop in self._blocks:
            out[idx] = prop.advance(amps[idx], dt)
        return out

    def advance_many(self, amps: np.ndarray, times: np.ndarray) -> np.ndarray:
        out = np.empty((len(times), len(amps)), dtype=complex)
        for idx, prop in self._blocks:
            out[:, idx] = prop.advance_many(amps[idx], times)
        return out


class _ExpmPropagator:
    """Krylov-free scaled-Taylor propagation for large sparse systems."""

    def __init__(self, h: sp.csr_matrix):
        self._a = (-1j * h).tocsc()

    def advance(self, amps: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0.0:
            return amps.copy()
        return expm_multiply(self._a, amps, start=0.0, stop=float(dt),
                             num=2, endpoint=True)[-1]

    def advance_many(self, amps: np.ndarray, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if len(times) == 1:
            return self.advance(amps, times[0])[None, :]
        step = np.diff(times)
        uniform = np.allclose(step, step[0], rtol=1e-9, atol=0.0)
        if uniform and times[0] == 0.0:
            return expm_multiply(self._a, amps, start=0.0,
                                 stop=float(times[-1]), num=len(times),
                                 endpoint=True)
        out = np.empty((len(times), len(amps)), dtype=complex)
        current = amps
        t_prev = 0.0
        for k, t in enumerate(times):
            current = self.advance(current, t - t_prev)
            out[k] = current
            t_prev = t
        return out


# -- system constructors ------------------------------------------------------


def _assemble(basis: Basis, e_diag, r_diag, g_ee, lat_diag=0.0,
              m_lat=None, m_cross=None) -> sp.csr_matrix:
    """Static Hamiltonian from per-excitation diagonals and hop matrices."""
    n_i = basis.n_impurities
    rows, cols, vals = [], [], []
    index = basis.index

    for s, (imp, lat) in enumerate(basis.states):
        diag = complex(lat_diag) * len(lat)
        for a, level in enumerate(imp):
            if level == "e":
                diag += e_diag[a]
            elif level == "r":
                diag += r_diag[a]
        if diag != 0:
            rows.append(s)
            cols.append(s)
            vals.append(diag)

        # excitation exchange within the impurities
        for a, level in enumerate(imp):
            if level != "e":
                continue
            for b in range(n_i):
                if imp[b] != "g":
                    continue
                target = list(imp)
                target[a] = "g"
                target[b] = "e"
                t = index.get((tuple(target), lat))
                if t is not None and g_ee[b, a] != 0:
                    rows.append(t)
                    cols.append(s)
                    vals.append(g_ee[b, a])

        if m_lat is not None and lat:
            # lattice-lattice exchange
            occupied = set(lat)
            for i in lat:
                remaining = tuple(x for x in lat if x != i)
                for j in range(basis.n_lattice):
                    if j in occupied:
                        continue
                    t = index.get((imp, tuple(sorted(remaining + (j,)))))
                    if t is not None:
                        rows.append(t)
                        cols.append(s)
                        vals.append(m_lat[j, i])

        if m_cross is not None:
            # impurity e -> lattice excitation
            for a, level in enumerate(imp):
                if level != "e":
                    continue
                lowered = list(imp)
                lowered[a] = "g"
                lowered = tuple(lowered)
                for j in range(basis.n_lattice):
                    if j in lat:
                        continue
                    t = index.get((lowered, tuple(sorted(lat + (j,)))))
                    if t is not None:
                        rows.append(t)
                        cols.append(s)
                        vals.append(m_cross[j, a])
            # lattice excitation -> impurity e
            for i in lat:
                remaining = tuple(x for x in lat if x != i)
                for b in range(n_i):
                    if imp[b] != "g":
                        continue
                    raised = list(imp)
                    raised[b] = "e"
                    t = index.get((tuple(raised), remaining))
                    if t is not None:
                        rows.append(t)
                        cols.append(s)
                        vals.append(m_cross[i, b])

    h = sp.coo_matrix((vals, (rows, cols)),
                      shape=(basis.dim, basis.dim), dtype=complex)
    return h.tocsr()


def _drive_patterns(basis: Basis):
    """Raising patterns (g->e and e->r per impurity) and diagonal masks."""
    n_i = basis.n_impurities
    dim = basis.dim
    raise_ge, raise_er = [], []
    diag_e = np.zeros((n_i, dim))
    diag_r = np.zeros((n_i, dim))
    for a in range(n_i):
        rows_ge, cols_ge, rows_er, cols_er = [], [], [], []
        for s, (imp, lat) in enumerate(basis.states):
            if imp[a] == "e":
                diag_e[a, s] = 1.0
            elif imp[a] == "r":
                diag_r[a, s] = 1.0
            if imp[a] == "g":
                raised = list(imp)
                raised[a] = "e"
                t = basis.index.get((tuple(raised), lat))
                if t is not None:
                    rows_ge.append(t)
                    cols_ge.append(s)
            elif imp[a] == "e":
                raised = list(imp)
                raised[a] = "r"
                t = basis.index.get((tuple(raised), lat))
                if t is not None:
                    rows_er.append(t)
                    cols_er.append(s)
        raise_ge.append(sp.coo_matrix(
            (np.ones(len(rows_ge)), (rows_ge, cols_ge)),
            shape=(dim, dim), dtype=complex).tocsr())
        raise_er.append(sp.coo_matrix(
            (np.ones(len(rows_er)), (rows_er, cols_er)),
            shape=(dim, dim), dtype=complex).tocsr())
    return raise_ge, raise_er, diag_e, diag_r


def reduced_system(model: EffectiveModel) -> System:
    """Impurity-only dynamics with the lattice folded into the effective model.

    Excited-state diagonals carry the per-impurity self-energy referenced to
    the mean real shift (a common frequency redefinition); exchange uses the
    summed direct plus lattice-mediated coupling.
    """
    basis = build_basis(model.n_impurities, Tier.REDUCED)
    e_diag = model.Sigma - model.sigma_ref - 0.5j * model.gamma_I
    r_diag = np.full(model.n_impurities, -0.5j * model.gamma_R, dtype=complex)
    g_ee = model.Phi + model.phi
    h = _assemble(basis, e_diag, r_diag, g_ee)
    return System(basis, h, *_drive_patterns(basis))


def lattice_system(geometry: Geometry, tier,
                   lattice_couplings: CouplingMatrix | None = None,
                   model: EffectiveModel | None = None,
                   delta_LI: float | None = None) -> System:
    """Dynamics with explicit lattice amplitudes (FULL and richer tiers).

    If an effective model is supplied, its detuning is reused and the mean
    real self-energy is subtracted from the impurity diagonal, placing the
    drives in the dressed impurity frame (the same frame the reduced tier
    uses, so the two tiers are directly comparable).
    """
    tier = Tier.parse(tier)
    if tier is Tier.REDUCED:
        raise ValueError("use reduced_system for the reduced tier")
    if lattice_couplings is None:
        lattice_couplings = coupling_matrix(geometry.lattice_positions,
                                            geometry.lattice.polarization)
    if delta_LI is None:
        if model is None:
            raise ValueError("need delta_LI or an effective model to set it")
        delta_LI = model.delta_LI
    sigma_ref = model.sigma_ref if model is not None else 0.0

    imp = geometry.impurities
    n_i = geometry.n_impurities
    n_l = geometry.n_lattice
    basis = build_basis(n_i, tier, n_l)

    e_diag = np.full(n_i, -sigma_ref - 0.5j * imp.gamma_I, dtype=complex)
    r_diag = np.full(n_i, -0.5j * imp.gamma_R, dtype=complex)
    direct = coupling_matrix(geometry.impurity_positions, imp.polarization,
                             gamma=imp.gamma_I)
    scale = np.sqrt(imp.gamma_I)
    m_cross = np.empty((n_l, n_i), dtype=complex)
    for a in range(n_i):
        m_cross[:, a] = scale * cross_coupling_vector(
            geometry.impurity_positions[a], geometry.lattice_positions,
            imp.polarization)
    h = _assemble(
        basis,
        e_diag,
        r_diag,
        direct.m,
        lat_diag=-delta_LI - 0.5j,
        m_lat=lattice_couplings.m,
        m_cross=m_cross,
    )
    return System(basis, h, *_drive_patterns(basis))


# -- spec-level RHS entry points ----------------------------------------------


def rhs_reduced(state: StateVector, drives: DriveSettings,
                model: EffectiveModel) -> np.ndarray:
    """Amplitude derivatives on the reduced tier (rebuilds the system)."""
    if state.tier is not Tier.REDUCED:
        raise ValueError("state is not on the reduced tier")
    system = reduced_system(model)
    return system.rhs(drives)(state.time, state.amplitudes)


def rhs_full(state: StateVector, drives: DriveSettings, geometry: Geometry,
             lattice_couplings: CouplingMatrix | None = None,
             model: EffectiveModel | None = None,
             delta_LI: float | None = None) -> np.ndarray:
    """Amplitude derivatives on the full (explicit-lattice) tiers."""
    if state.tier not in (Tier.FULL, Tier.FULL_DOUBLE):
        raise ValueError("state is not on a full-lattice tier")
    system = lattice_system(geometry, state.tier, lattice_couplings, model,
                            delta_LI)
    return system.rhs(drives)(state.time, state.amplitudes)


def rhs_three_excitation(state: StateVector, drives: DriveSettings,
                         geometry: Geometry,
                         lattice_couplings: CouplingMatrix | None = None,
                         model: EffectiveModel | None = None,
                         delta_LI: float | None = None) -> np.ndarray:
    """Amplitude derivatives on the three-excitation tier."""
    if state.tier is not Tier.THREE_EXCITATION:
        raise ValueError("state is not on the three-excitation tier")
    system = lattice_system(geometry, state.tier, lattice_couplings, model,
                            delta_LI)
    return system.rhs(drives)(state.time, state.amplitudes)


# -- time evolution ------------------------------------------------------------


def evolve(state: StateVector, drives: DriveSettings, duration: float,
           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
           return_solution: bool = False):
    """Advance a state by ``duration`` with an adaptive RK45 integrator.

    Tolerances bound the local error per step.  With ``return_solution``
    the scipy solution object (accepted steps included) is returned too.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        out = state.copy()
        return (out, None) if return_solution else out
    f = state.system.rhs(drives)
    sol = solve_ivp(
        f,
        (state.time, state.time + duration),
        state.amplitudes,
        method="RK45",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise StepSizeUnderflowError(float(sol.t[-1]), sol.message)
    out = StateVector(sol.y[:, -1].copy(), state.system, float(sol.t[-1]))
    return (out, sol) if return_solution else out


def propagate(state: StateVector, drives: DriveSettings,
              duration: float) -> StateVector:
    """Advance a state exactly using the segment's constant Hamiltonian."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        return state.copy()
    prop = state.system.propagator(drives)
    amps = prop.advance(state.amplitudes, float(duration))
    return StateVector(amps, state.system, state.time + float(duration))


def sample_trajectory(state: StateVector, drives: DriveSettings,
                      duration: float, n_samples: int):
    """Exactly propagate and sample the segment at a uniform stride.

    Returns ``(times, amplitudes, final_state)`` where ``times`` excludes
    the segment start and has ``n_samples`` entries ending at ``duration``.
    """
    if n_samples < 1:
        final = propagate(state, drives, duration)
        return np.empty(0), np.empty((0, state.system.dim), complex), final
    prop = state.system.propagator(drives)
    offsets = np.linspace(duration / n_samples, duration, n_samples)
    amps = prop.advance_many(state.amplitudes, offsets)
    final = StateVector(amps[-1].copy(), state.system, state.time + duration)
    return state.time + offsets, amps, final


def observables(state: StateVector) -> dict:
    """Populations per basis label, phases of single-e amplitudes, norm."""
    amps = state.amplitudes
    pops = np.abs(amps) ** 2
    basis = state.basis
    ground = amps[0]
    phases = {}
    for a in range(basis.n_impurities):
        idx = basis.state_index(f"e{a}")
        if ground != 0 and amps[idx] != 0:
            phases[f"e{a}"] = float(np.angle(amps[idx] / ground))
    return {
        "time": state.time,
        "populations": dict(zip(basis.labels, pops.tolist())),
        "phases": phases,
        "norm2": float(pops.sum()),
    }
