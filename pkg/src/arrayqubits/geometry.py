"""Lattice and impurity geometry construction.

A square two-dimensional array of emitters sits in the z = 0 plane with
spacing ``a`` (in wavelength units); impurity emitters occupy plaquette
centers.  Positional disorder draws independent in-plane Gaussian offsets
from a caller-supplied seeded generator, so runs are reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .couplings import CIRCULAR, polarization


@dataclass(frozen=True)
class LatticeSpec:
    """Square lattice of two-level emitters with spacing ``a``."""

    rows: int
    cols: int
    a: float
    polarization: np.ndarray = field(default_factory=lambda: CIRCULAR.copy())

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice must contain at least one emitter")
        if self.a <= 0:
            raise ValueError("lattice spacing must be positive")
        polarization(self.polarization)
        if self.a >= 1.0:
            warnings.warn(
                f"spacing a = {self.a} is not subwavelength; "
                "collective effects will be weak",
                stacklevel=2,
            )

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ImpuritySpec:
    """Three-level impurities placed at plaquette centers.

    ``gamma_I`` is the excited-state linewidth in units of the lattice
    linewidth, ``gamma_R`` the metastable-state linewidth, and ``delta_LI``
    the impurity-lattice detuning.  Plaquette (i, j) is the unit cell whose
    lower-left lattice site is (i, j).
    """

    plaquettes: tuple
    gamma_I: float = 1e-4
    gamma_R: float = 0.0
    polarization: np.ndarray = field(default_factory=lambda: CIRCULAR.copy())

    def __post_init__(self):
        plaq = tuple((int(r), int(c)) for r, c in self.plaquettes)
        object.__setattr__(self, "plaquettes", plaq)
        if len(set(plaq)) != len(plaq):
            raise ValueError("impurities must occupy distinct plaquettes")
        if self.gamma_I <= 0:
            raise ValueError("gamma_I must be positive")
        if self.gamma_I > 0.1:
            warnings.warn(
                f"gamma_I = {self.gamma_I} is not far below the lattice "
                "linewidth; the Markovian elimination of the lattice degrades",
                stacklevel=2,
            )
        if self.gamma_R < 0:
            raise ValueError("gamma_R must be non-negative")
        polarization(self.polarization)

    @property
    def n_impurities(self) -> int:
        return len(self.plaquettes)


@dataclass(frozen=True)
class DisorderSpec:
    """Gaussian positional noise: ``sigma_frac`` is the std as a fraction of a."""

    sigma_frac: float = 0.0
    seed: int = 0
    include_impurities: bool = True

    def __post_init__(self):
        if self.sigma_frac < 0:
            raise ValueError("sigma_frac must be non-negative")


def build_lattice(spec: LatticeSpec) -> np.ndarray:
    """Lattice positions (row-major) at (i*a, j*a, 0)."""
    i, j = np.meshgrid(np.arange(spec.rows), np.arange(spec.cols), indexing="ij")
    pos = np.zeros((spec.n_sites, 3))
    pos[:, 0] = i.ravel() * spec.a
    pos[:, 1] = j.ravel() * spec.a
    return pos


def place_impurities(spec: LatticeSpec, imp: ImpuritySpec) -> np.ndarray:
    """Impurity positions at plaquette centers ((i+1/2)a, (j+1/2)a, 0).

    Plaquette indices must lie in [0, rows-1) x [0, cols-1).
    """
    pos = np.zeros((imp.n_impurities, 3))
    for n, (i, j) in enumerate(imp.plaquettes):
        if not (0 <= i < spec.rows - 1 and 0 <= j < spec.cols - 1):
            raise ValueError(
                f"plaquette ({i}, {j}) outside the "
                f"{spec.rows - 1} x {spec.cols - 1} plaquette grid"
            )
        pos[n] = ((i + 0.5) * spec.a, (j + 0.5) * spec.a, 0.0)
    return pos


def impurity_distances(positions: np.ndarray) -> np.ndarray:
    """Pairwise distance matrix between impurity positions."""
    disp = positions[:, None, :] - positions[None, :, :]
    return np.linalg.norm(disp, axis=-1)


def apply_disorder(positions: np.ndarray, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Perturb x and y of every position by N(0, sigma); z stays pinned.

    ``sigma`` is an absolute length (sigma_frac * a, in wavelength units).
    The generator is consumed in position order, so a fixed seed gives a
    deterministic result.
    """
    positions = np.asarray(positions, dtype=float)
    out = positions.copy()
    if sigma > 0:
        out[:, :2] += rng.normal(0.0, sigma, size=(len(positions), 2))
    return out


@dataclass(frozen=True)
class Geometry:
    """Resolved emitter layout: lattice plus impurity positions."""

    lattice: LatticeSpec
    impurities: ImpuritySpec
    lattice_positions: np.ndarray
    impurity_positions: np.ndarray

    @property
    def n_lattice(self) -> int:
        return len(self.lattice_positions)

    @property
    def n_impurities(self) -> int:
        return len(self.impurity_positions)


def build_geometry(lattice: LatticeSpec, impurities: ImpuritySpec,
                   disorder: DisorderSpec | None = None) -> Geometry:
    """Assemble lattice and impurity positions, optionally disordered.

    Lattice and impurity draws come from one generator seeded by the
    disorder spec (lattice sites first, then impurities if included).
    """
    lat_pos = build_lattice(lattice)
    imp_pos = place_impurities(lattice, impurities)
    if disorder is not None and disorder.sigma_frac > 0:
        rng = np.random.default_rng(disorder.seed)
        sigma = disorder.sigma_frac * lattice.a
        lat_pos = apply_disorder(lat_pos, sigma, rng)
        if disorder.include_impurities:
            imp_pos = apply_disorder(imp_pos, sigma, rng)
    return Geometry(
        lattice=lattice,
        impurities=impurities,
        lattice_positions=lat_pos,
        impurity_positions=imp_pos,
    )
