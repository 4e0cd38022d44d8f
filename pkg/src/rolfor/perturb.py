"""Simulated ordering errors: light/heavy swaps and inserts.

Light perturbations displace players by 1-2 slots, heavy ones by 3-5; a
single light swap leaves exactly 8 of 10 slots intact (80% top-10
accuracy), which anchors the light/heavy split.
"""

from __future__ import annotations

from dataclasses import dataclass

from .diffcore import Rng
from .errors import ValidationError
from .gamedata import N_PLAYERS

PERTURB_KINDS = ("light_swap", "light_insert", "heavy_swap", "heavy_insert")

LIGHT_DISPLACEMENT = (1, 2)
HEAVY_DISPLACEMENT = (3, 5)


@dataclass(frozen=True)
class PerturbSpec:
    kinds: tuple  # applied in order
    probability: float = 1.0  # per-sequence chance of applying at all
    seed: int = 0

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in PERTURB_KINDS:
                raise ValidationError(f"unknown perturbation kind {kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError("probability must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str, probability=1.0, seed=0) -> "PerturbSpec":
        """Parse 'light_swap' or 'heavy_swap+heavy_insert' style labels."""
        kinds = tuple(part.strip() for part in text.split("+") if part.strip())
        return cls(kinds=kinds, probability=probability, seed=seed)

    @property
    def label(self) -> str:
        return "+".join(self.kinds)


def _displacement(rng: Rng, heavy: bool) -> int:
    lo, hi = HEAVY_DISPLACEMENT if heavy else LIGHT_DISPLACEMENT
    return int(rng.integers(lo, hi + 1))


def _swap(order, rng, heavy):
    # a light swap is always of an adjacent pair
    d = _displacement(rng, True) if heavy else 1
    i = int(rng.integers(0, len(order) - d))
    order[i], order[i + d] = order[i + d], order[i]
    return order


def _insert(order, rng, heavy):
    d = _displacement(rng, heavy)
    i = int(rng.integers(0, len(order)))
    # choose a direction that stays in range; both valid -> random
    can_left, can_right = i - d >= 0, i + d < len(order)
    if can_left and can_right:
        right = bool(rng.integers(0, 2))
    elif can_left or can_right:
        right = can_right
    else:  # cannot happen for n=10 with d <= 5, kept for safety
        return order
    j = i + d if right else i - d
    moved = order.pop(i)
    order.insert(j, moved)
    return order


def apply_perturbation(spec: PerturbSpec, order, rng: Rng):
    """Corrupt a role ordering; deterministic given (spec, rng state)."""
    order = [int(i) for i in order]
    if sorted(order) != list(range(N_PLAYERS)):
        raise ValidationError(f"not a permutation of 0..{N_PLAYERS - 1}: {order}")
    if spec.probability < 1.0 and rng.uniform() >= spec.probability:
        return order
    for kind in spec.kinds:
        heavy = kind.startswith("heavy")
        if kind.endswith("swap"):
            order = _swap(order, rng, heavy)
        else:
            order = _insert(order, rng, heavy)
    return order
