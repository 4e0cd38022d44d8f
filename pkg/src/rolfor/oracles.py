"""Hand-defined player orderings: none (random), ball distance, ball
distance with marking, and the oracular future-frame variant.

An ordering is a permutation of the ten player indices; position k holds
the player assigned to role slot k.  The ball is never part of an ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Rng, seed_from_text
from .errors import BoundsError, DataError, ValidationError
from .gamedata import ATTACKERS, BALL_INDEX, DEFENDERS, N_PLAYERS, TrajectorySequence

ORDERING_KINDS = ("none", "ball_distance", "ball_distance_marking", "oracular_future")


@dataclass(frozen=True)
class OrderingSpec:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ORDERING_KINDS:
            raise ValidationError(f"unknown ordering kind {self.kind!r}")

    @property
    def reference_frame(self) -> str:
        # only the oracular variant may peek at the future
        return "last_future" if self.kind == "oracular_future" else "last_observed"


def euclidean_distances_to_ball(seq: TrajectorySequence, frame: int) -> np.ndarray:
    """L2 distance from each of the 10 players to the ball at one frame."""
    n_frames = seq.frames.shape[0]
    if not -n_frames <= frame < n_frames:
        raise BoundsError(f"frame {frame} out of range for {n_frames} frames")
    coords = seq.frames.array[frame]
    return np.linalg.norm(coords[:N_PLAYERS] - coords[BALL_INDEX], axis=1)


def _reference_frame_index(spec: OrderingSpec, seq: TrajectorySequence) -> int:
    if spec.reference_frame == "last_future":
        if seq.k_fut < 1 or seq.frames.shape[0] <= seq.t_obs:
            raise DataError(f"sequence {seq.sequence_id!r} has no future frames "
                            "for the oracular ordering")
        return seq.t_obs + seq.k_fut - 1
    return seq.t_obs - 1


def _argsort_with_index_ties(values: np.ndarray, candidates) -> list:
    # ties broken by player index via the secondary key
    return sorted(candidates, key=lambda i: (values[i], i))


def order_players(spec: OrderingSpec, seq: TrajectorySequence) -> list:
    """Permutation of the 10 player indices under the given ordering."""
    if spec.kind == "none":
        rng = Rng(spec.seed).child(seed_from_text(seq.sequence_id))
        return list(int(i) for i in rng.permutation(N_PLAYERS))

    frame = _reference_frame_index(spec, seq)
    dists = euclidean_distances_to_ball(seq, frame)

    if spec.kind == "ball_distance":
        return _argsort_with_index_ties(dists, range(N_PLAYERS))

    # marking: attackers ascending by ball distance, each followed by the
    # nearest not-yet-assigned defender (greedy in attacker order)
    coords = seq.frames.array[frame]
    order = []
    free = list(DEFENDERS)
    for a in _argsort_with_index_ties(dists, ATTACKERS):
        marker = min(free, key=lambda d: (float(np.linalg.norm(coords[d] - coords[a])), d))
        free.remove(marker)
        order.extend([a, marker])
    return order
