"""Excitation-sector bases for the coupled impurity-lattice wavefunction.

A basis state records which impurities sit in their excited (``e``) or
metastable (``r``) level and which lattice sites are excited (``E``).  The
amplitude of each physically distinct configuration is stored exactly once
(symmetric pairs and triples are enumerated in canonical index order).

Four truncation tiers are supported:

``REDUCED``
    Impurity amplitudes only, up to two excitations; the lattice enters
    through the effective model.
``FULL``
    Adds explicit lattice amplitudes with at most one lattice excitation.
``FULL_DOUBLE``
    Extends FULL with doubly-excited lattice configurations.
``THREE_EXCITATION``
    Extends FULL to three total excitations (still at most one in the
    lattice), as needed for three-qubit circuits.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import combinations, permutations


class Tier(Enum):
    REDUCED = "reduced"
    FULL = "full"
    FULL_DOUBLE = "full_double"
    THREE_EXCITATION = "three_excitation"

    @classmethod
    def parse(cls, value) -> "Tier":
        if isinstance(value, Tier):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(t.value for t in cls)
            raise ValueError(f"unknown tier {value!r}; expected one of {names}")


LATTICE_TIERS = (Tier.FULL, Tier.FULL_DOUBLE, Tier.THREE_EXCITATION)


def _with(imp: tuple, **levels) -> tuple:
    out = list(imp)
    for idx, level in levels.items():
        out[int(idx)] = level
    return tuple(out)


def state_label(imp: tuple, lat: tuple) -> str:
    """Human-readable label, e.g. ``e0+r1`` or ``E17+e0``."""
    parts = [f"E{i}" for i in lat]
    parts += [f"{s}{a}" for a, s in enumerate(imp) if s != "g"]
    return "+".join(parts) if parts else "g"


@dataclass(frozen=True)
class Basis:
    """Ordered basis for one tier: ground state first, then ascending
    excitation number, families enumerated deterministically within each
    block."""

    n_impurities: int
    n_lattice: int
    tier: Tier
    states: tuple
    index: dict
    labels: tuple
    excitations: tuple

    @property
    def dim(self) -> int:
        return len(self.states)

    def state_index(self, key) -> int:
        """Index of a state by (imp, lat) tuple or by label string."""
        if isinstance(key, str):
            try:
                return self.labels.index(key)
            except ValueError:
                raise KeyError(f"no basis state labeled {key!r}")
        imp, lat = key
        return self.index[(tuple(imp), tuple(sorted(lat)))]


def build_basis(n_impurities: int, tier, n_lattice: int = 0) -> Basis:
    """Enumerate the basis for ``n_impurities`` impurities at a tier.

    ``n_lattice`` must be 0 for the reduced tier and positive otherwise.
    """
    tier = Tier.parse(tier)
    n_i = int(n_impurities)
    n_l = int(n_lattice)
    if n_i < 1:
        raise ValueError("need at least one impurity")
    if tier is Tier.REDUCED:
        if n_l != 0:
            raise ValueError("reduced tier carries no explicit lattice sites")
    elif n_l < 1:
        raise ValueError(f"tier {tier.value} requires explicit lattice sites")

    g = ("g",) * n_i
    states: list = [(g, ())]
    lattice = tier in LATTICE_TIERS

    # one excitation
    states += [(_with(g, **{str(a): "e"}), ()) for a in range(n_i)]
    states += [(_with(g, **{str(a): "r"}), ()) for a in range(n_i)]
    if lattice:
        states += [(g, (i,)) for i in range(n_l)]

    # two excitations
    states += [(_with(g, **{str(a): "e", str(b): "e"}), ())
               for a, b in combinations(range(n_i), 2)]
    states += [(_with(g, **{str(a): "e", str(b): "r"}), ())
               for a, b in permutations(range(n_i), 2)]
    states += [(_with(g, **{str(a): "r", str(b): "r"}), ())
               for a, b in combinations(range(n_i), 2)]
    if lattice:
        states += [(_with(g, **{str(a): "e"}), (i,))
                   for i in range(n_l) for a in range(n_i)]
        states += [(_with(g, **{str(a): "r"}), (i,))
                   for i in range(n_l) for a in range(n_i)]
        if tier is Tier.FULL_DOUBLE:
            states += [(g, (i, j)) for i, j in combinations(range(n_l), 2)]

    # three excitations
    if tier is Tier.THREE_EXCITATION:
        states += [(_with(g, **{str(a): "e", str(b): "e", str(c): "e"}), ())
                   for a, b, c in combinations(range(n_i), 3)]
        states += [(_with(g, **{str(a): "r", str(b): "e", str(c): "e"}), ())
                   for a in range(n_i)
                   for b, c in combinations(sorted(set(range(n_i)) - {a}), 2)]
        states += [(_with(g, **{str(a): "e", str(b): "r", str(c): "r"}), ())
                   for a in range(n_i)
                   for b, c in combinations(sorted(set(range(n_i)) - {a}), 2)]
        states += [(_with(g, **{str(a): "r", str(b): "r", str(c): "r"}), ())
                   for a, b, c in combinations(range(n_i), 3)]
        states += [(_with(g, **{str(a): "e", str(b): "e"}), (i,))
                   for i in range(n_l) for a, b in combinations(range(n_i), 2)]
        states += [(_with(g, **{str(a): "r", str(b): "r"}), (i,))
                   for i in range(n_l) for a, b in combinations(range(n_i), 2)]
        states += [(_with(g, **{str(a): "r", str(b): "e"}), (i,))
                   for i in range(n_l) for a, b in permutations(range(n_i), 2)]

    index = {s: k for k, s in enumerate(states)}
    labels = tuple(state_label(imp, lat) for imp, lat in states)
    excitations = tuple(
        sum(1 for s in imp if s != "g") + len(lat) for imp, lat in states
    )
    return Basis(
        n_impurities=n_i,
        n_lattice=n_l,
        tier=tier,
        states=tuple(states),
        index=index,
        labels=labels,
        excitations=excitations,
    )


def basis_size(n_impurities: int, tier, n_lattice: int = 0) -> int:
    """Closed-form state count; used to cross-check the enumeration."""
    tier = Tier.parse(tier)
    n, m = int(n_impurities), int(n_lattice)
    pairs = n * (n - 1) // 2
    count = 1 + 2 * n + 2 * pairs + n * (n - 1)
    if tier is Tier.REDUCED:
        return count
    count += m + 2 * m * n
    if tier is Tier.FULL_DOUBLE:
        count += m * (m - 1) // 2
    if tier is Tier.THREE_EXCITATION:
        triples = n * (n - 1) * (n - 2) // 6
        r_pairs = n * ((n - 1) * (n - 2) // 2)
        count += 2 * triples + 2 * r_pairs
        count += 2 * m * pairs + m * n * (n - 1)
    return count
