"""Sequence data model, JSONL persistence, dataset splitting, and the
synthetic role-driven play generator.

One sequence is a single half-court attack: 5 attackers, 5 defenders, ball.
The generator plants roles by construction -- a possessor driving at the
basket, off-ball attackers holding a staggered formation, and each defender
tracking the midpoint between its assigned attacker and the basket -- so
that orderings derived from ball distance and marking are informative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Rng, Tensor
from .errors import DataError, ParseError, SizeError, ValidationError

COURT_WIDTH = 28.65
COURT_HEIGHT = 15.24
BASKET = (26.75, 7.62)

N_AGENTS = 11
N_PLAYERS = 10
ATTACKERS = tuple(range(0, 5))
DEFENDERS = tuple(range(5, 10))
BALL_INDEX = 10
ROLE_LABELS = ("attacker",) * 5 + ("defender",) * 5 + ("ball",)

T_OBS_DEFAULT = 5
K_FUT_DEFAULT = 10
FRAME_INTERVAL_DEFAULT = 0.4

# Reference split sizes whose proportions (~0.639/0.160/0.201) are reused
# for any dataset size.
_SPLIT_COUNTS = (60708, 15244, 19050)

# Formation constants (meters).  The drive starts at a randomized point s;
# off-ball anchors are fixed offsets from s, chosen so that the ten
# player-to-ball distances at the last observed frame are staggered and
# each attacker's nearest defender is its own marker.
DRIVE_START_X = (17.6, 18.4)
DRIVE_START_Y = (7.37, 7.87)
DRIVE_SPEED = 0.9          # meters per frame
DRIVE_STOP_RADIUS = 1.5    # the possessor pulls up short of the rim
FORMATION_OFFSETS = (
    (3.747, 4.289),     # wing, high side
    (9.221, -5.846),    # corner, low side
    (-10.303, 5.498),   # deep outlet, high side
    (-14.400, -6.157),  # deep outlet, low side
)


@dataclass
class TrajectorySequence:
    """One play: observed plus future positions for all 11 agents."""

    sequence_id: str
    frames: Tensor  # [t_obs + k_fut, 11, 2] court coordinates in meters
    t_obs: int = T_OBS_DEFAULT
    k_fut: int = K_FUT_DEFAULT
    agent_roles: tuple = ROLE_LABELS
    frame_interval: float = FRAME_INTERVAL_DEFAULT

    def __post_init__(self):
        self.validate()

    def validate(self):
        sid = self.sequence_id
        shape = self.frames.shape
        expected = (self.t_obs + self.k_fut, N_AGENTS, 2)
        if shape != expected:
            raise ValidationError(f"sequence {sid!r}: frames shape {shape}, expected {expected}")
        if tuple(self.agent_roles) != ROLE_LABELS:
            raise ValidationError(
                f"sequence {sid!r}: roles must be 5 attackers, 5 defenders, ball (in that order)")
        a = self.frames.array
        if a[..., 0].min() < 0.0 or a[..., 0].max() > COURT_WIDTH \
                or a[..., 1].min() < 0.0 or a[..., 1].max() > COURT_HEIGHT:
            raise ValidationError(f"sequence {sid!r}: coordinates out of court bounds")
        if not self.frame_interval > 0.0:
            raise ValidationError(f"sequence {sid!r}: frame_interval must be positive")

    @property
    def observed(self) -> np.ndarray:
        return self.frames.array[: self.t_obs]

    @property
    def future(self) -> np.ndarray:
        return self.frames.array[self.t_obs:]

    def to_record(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "frames": self.frames.tolist(),
            "roles": list(self.agent_roles),
            "frame_interval": self.frame_interval,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrajectorySequence":
        try:
            frames = Tensor(rec["frames"])
            return cls(sequence_id=str(rec["sequence_id"]), frames=frames,
                       agent_roles=tuple(rec["roles"]),
                       frame_interval=float(rec["frame_interval"]))
        except KeyError as exc:
            raise ValidationError(f"sequence record missing key {exc}") from exc


@dataclass
class SynthConfig:
    n_sequences: int
    seed: int
    pass_probability: float = 0.02
    defender_gain: float = 0.7
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.n_sequences < 1:
            raise ValidationError("n_sequences must be >= 1")
        if not 0.0 <= self.pass_probability <= 1.0:
            raise ValidationError("pass_probability must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be >= 0")


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    split_seed: int = 0


def save_sequences(seqs, path):
    """Write sequences as JSONL; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(seq.to_record()) + "\n")


def load_sequences(path):
    """Read and invariant-check a JSONL sequence file, preserving order."""
    seqs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            seqs.append(TrajectorySequence.from_record(rec))
    return seqs


def split_dataset(seqs, seed) -> DatasetSplit:
    """Deterministic train/val/test split at the reference proportions."""
    n = len(seqs)
    if n < 3:
        raise SizeError(f"need at least 3 sequences to split, got {n}")
    total = float(sum(_SPLIT_COUNTS))
    n_train = round(n * _SPLIT_COUNTS[0] / total)
    n_val = round(n * _SPLIT_COUNTS[1] / total)
    ids = [seq.sequence_id for seq in seqs]
    perm = Rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(train=shuffled[:n_train],
                        val=shuffled[n_train:n_train + n_val],
                        test=shuffled[n_train + n_val:],
                        split_seed=int(seed))


def _clip_court(p: np.ndarray) -> np.ndarray:
    p[..., 0] = np.clip(p[..., 0], 0.0, COURT_WIDTH)
    p[..., 1] = np.clip(p[..., 1], 0.0, COURT_HEIGHT)
    return p


def _simulate_one(rng: Rng, sequence_id: str, config: SynthConfig) -> TrajectorySequence:
    basket = np.array(BASKET)
    n_frames = T_OBS_DEFAULT + K_FUT_DEFAULT

    # half the plays run the formation mirrored across the court's long axis
    # (the basket sits on it, so the dynamics are exactly equivariant)
    mirrored = rng.uniform() < 0.5
    start = np.array([rng.uniform(*DRIVE_START_X), rng.uniform(*DRIVE_START_Y)])
    anchors = np.vstack([start, start + np.array(FORMATION_OFFSETS)])
    _clip_court(anchors)

    atk = anchors.copy()
    dfd = (atk + basket) / 2.0
    possessor = 0

    frames = np.empty((n_frames, N_AGENTS, 2))
    frames[0, ATTACKERS, :] = atk
    frames[0, DEFENDERS, :] = dfd
    frames[0, BALL_INDEX, :] = atk[possessor]

    for t in range(1, n_frames):
        # possible pass; the old possessor holds its spot from here on
        if rng.uniform() < config.pass_probability:
            others = [i for i in range(5) if i != possessor]
            anchors[possessor] = atk[possessor]
            possessor = others[int(rng.integers(0, len(others)))]

        jitter = rng.normal(0.0, 1.0, (N_PLAYERS, 2)) * config.noise_sigma

        to_basket = basket - atk[possessor]
        dist = float(np.hypot(*to_basket))
        if dist > 1e-12:
            step = min(DRIVE_SPEED, max(dist - DRIVE_STOP_RADIUS, 0.0))
            atk[possessor] = atk[possessor] + step * to_basket / dist
        for i in range(5):
            if i != possessor:
                atk[i] = anchors[i]
        atk += jitter[:5]
        _clip_court(atk)

        mid = (atk + basket) / 2.0
        dfd += config.defender_gain * (mid - dfd) + jitter[5:]
        _clip_court(dfd)

        frames[t, ATTACKERS, :] = atk
        frames[t, DEFENDERS, :] = dfd
        frames[t, BALL_INDEX, :] = atk[possessor]

    if mirrored:
        frames[..., 1] = COURT_HEIGHT - frames[..., 1]
    return TrajectorySequence(sequence_id=sequence_id, frames=Tensor(frames))


def generate_synthetic(config: SynthConfig):
    """Generate config.n_sequences plays, deterministic in config.seed.

    Each sequence uses a child stream keyed by its index, so generation is
    order-independent and safe to parallelize.
    """
    root = Rng(config.seed)
    return [
        _simulate_one(root.child(i), f"synth-{config.seed}-{i:06d}", config)
        for i in range(config.n_sequences)
    ]


def sequences_by_id(seqs) -> dict:
    index = {seq.sequence_id: seq for seq in seqs}
    if len(index) != len(seqs):
        raise DataError("duplicate sequence ids in dataset")
    return index
