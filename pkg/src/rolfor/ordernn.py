"""Order Neural Network: per-player latent scores, soft ranking, the
differentiable re-shuffle into role slots, and the decoder-side de-shuffle.

The re-shuffle turns soft ranks s into a slot-by-player weight matrix
M[k][i] = exp(-((k - s_i)/scale)^2) (rows optionally normalized); slot k
softly selects the player whose rank is k.  For integer ranks and small
scale, M is a permutation matrix and the de-shuffle (M transposed) is its
exact inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _es(*args, **kw):
    return np.einsum(*args, optimize=True, **kw)

from .diffcore import DifferentiableOp, Rng, Tensor, register_op
from .errors import DomainError, ShapeError
from .gamedata import COURT_WIDTH, N_PLAYERS, T_OBS_DEFAULT
from .softsort import SoftRankResult, soft_rank, soft_rank_backward, soft_rank_kink_distance

SCORE_INPUT_DIM = T_OBS_DEFAULT * 2
SCORE_HIDDEN = (32, 32)

# fixed affine normalization of court coordinates into roughly [-1, 1]
COORD_CENTER = np.array([COURT_WIDTH / 2.0, 7.62])
COORD_SCALE = COURT_WIDTH / 2.0


def normalize_coords(a: np.ndarray) -> np.ndarray:
    return (a - COORD_CENTER) / COORD_SCALE


def denormalize_coords(a: np.ndarray) -> np.ndarray:
    return a * COORD_SCALE + COORD_CENTER


@dataclass
class ScoreNetwork:
    """Shared per-player MLP: flattened observed trajectory -> one score."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def init(cls, rng: Rng, input_dim=SCORE_INPUT_DIM, hidden=SCORE_HIDDEN):
        h1, h2 = hidden

        def u(fan_in, shape):
            return rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), shape)

        return cls(w1=u(input_dim, (input_dim, h1)), b1=np.zeros(h1),
                   w2=u(h1, (h1, h2)), b2=np.zeros(h2),
                   w3=u(h2, (h2, 1)), b3=np.zeros(1))

    def params(self) -> dict:
        return {"score.w1": self.w1, "score.b1": self.b1, "score.w2": self.w2,
                "score.b2": self.b2, "score.w3": self.w3, "score.b3": self.b3}

    def set_params(self, values: dict):
        self.w1 = values["score.w1"]
        self.b1 = values["score.b1"]
        self.w2 = values["score.w2"]
        self.b2 = values["score.b2"]
        self.w3 = values["score.w3"]
        self.b3 = values["score.b3"]


def _score_forward(net: ScoreNetwork, feats: np.ndarray):
    """feats: [..., input_dim] normalized features."""
    h1 = np.tanh(feats @ net.w1 + net.b1)
    h2 = np.tanh(h1 @ net.w2 + net.b2)
    scores = (h2 @ net.w3 + net.b3)[..., 0]
    return scores, (feats, h1, h2)


def _score_backward(net: ScoreNetwork, ctx, dscores: np.ndarray):
    feats, h1, h2 = ctx
    d3 = dscores[..., None]  # [..., 1]
    flat = lambda a: a.reshape(-1, a.shape[-1])
    grads = {"score.w3": flat(h2).T @ flat(d3), "score.b3": flat(d3).sum(axis=0)}
    dh2 = (d3 @ net.w3.T) * (1.0 - h2**2)
    grads["score.w2"] = flat(h1).T @ flat(dh2)
    grads["score.b2"] = flat(dh2).sum(axis=0)
    dh1 = (dh2 @ net.w2.T) * (1.0 - h1**2)
    grads["score.w1"] = flat(feats).T @ flat(dh1)
    grads["score.b1"] = flat(dh1).sum(axis=0)
    dfeats = dh1 @ net.w1.T
    return grads, dfeats


def player_features(observed: np.ndarray) -> np.ndarray:
    """[..., T, players, 2] observed coords -> [..., players, T*2] features."""
    norm = normalize_coords(observed)
    moved = np.moveaxis(norm, -3, -2)  # [..., players, T, 2]
    return moved.reshape(moved.shape[:-2] + (-1,))


def score_players(net: ScoreNetwork, x_in: Tensor) -> np.ndarray:
    """One score per player (ball excluded) from the observed frames."""
    if len(x_in.shape) != 3 or x_in.shape[1:] != (N_PLAYERS + 1, 2):
        raise ShapeError(f"expected [T, {N_PLAYERS + 1}, 2], got {x_in.shape}")
    feats = player_features(x_in.array[:, :N_PLAYERS, :])
    scores, _ = _score_forward(net, feats)
    return scores


def base_matrix(n: int) -> np.ndarray:
    """n x n matrix whose every row is the target slot vector (1, ..., n)."""
    return np.tile(np.arange(1, n + 1, dtype=np.float64), (n, 1))


@dataclass
class SoftPermutation:
    matrix: np.ndarray  # [slots, players], non-negative
    scale: float
    normalized: bool

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _gauss_logits(slots: np.ndarray, ranks: np.ndarray, scale: float) -> np.ndarray:
    # slots: [n, 1] holding 1..n; ranks broadcast along rows
    return -(((slots - ranks[..., None, :]) / scale) ** 2)


def build_soft_permutation(ranks, scale: float, normalized: bool = True) -> SoftPermutation:
    """Slot-by-player Gaussian weights from soft ranks."""
    if not scale > 0.0:
        raise DomainError(f"scale must be positive, got {scale}")
    s = ranks.ranks if isinstance(ranks, SoftRankResult) else np.asarray(ranks, dtype=np.float64)
    n = s.shape[-1]
    slots = np.arange(1, n + 1, dtype=np.float64)[:, None]
    logits = _gauss_logits(slots, s, scale)
    if normalized:
        # softmax per row, stable under extreme scale/rank combinations
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        m = e / e.sum(axis=-1, keepdims=True)
    else:
        m = np.exp(logits)
    return SoftPermutation(matrix=m, scale=float(scale), normalized=normalized)


def soft_permutation_backward(perm: SoftPermutation, ranks, dmatrix: np.ndarray) -> np.ndarray:
    """Cotangent w.r.t. the soft ranks given one w.r.t. the matrix."""
    s = ranks.ranks if isinstance(ranks, SoftRankResult) else np.asarray(ranks, dtype=np.float64)
    n = s.shape[-1]
    slots = np.arange(1, n + 1, dtype=np.float64)[:, None]
    m = perm.matrix
    # d logit[k,i] / d s_i = 2 (k - s_i) / scale^2
    dlogit_ds = 2.0 * (slots - s[..., None, :]) / perm.scale**2
    if perm.normalized:
        inner = (dmatrix * m).sum(axis=-1, keepdims=True)
        dlogits = m * (dmatrix - inner)
    else:
        dlogits = dmatrix * m
    return (dlogits * dlogit_ds).sum(axis=-2)


def _mix_players(m: np.ndarray, coords: np.ndarray) -> np.ndarray:
    # coords: [..., T, players, 2]; m: [..., slots, players]
    return _es("...kp,...tpc->...tkc", m, coords)


def _mix_players_backward(m, coords, dout):
    dcoords = _es("...kp,...tkc->...tpc", m, dout)
    dm = _es("...tkc,...tpc->...kp", dout, coords)
    return dcoords, dm


def reshuffle(perm: SoftPermutation, x: Tensor) -> Tensor:
    """Move players into role slots; the ball keeps its fixed slot."""
    if len(x.shape) != 3 or x.shape[2] != 2:
        raise ShapeError(f"expected [T, agents, 2], got {x.shape}")
    if x.shape[1] != perm.n + 1:
        raise ShapeError(f"permutation over {perm.n} players vs {x.shape[1]} agents "
                         "(ball included)")
    a = x.array
    out = np.empty_like(a)
    out[:, :perm.n, :] = _mix_players(perm.matrix, a[:, :perm.n, :])
    out[:, perm.n, :] = a[:, perm.n, :]  # ball slot passes through
    return Tensor(out)


def deshuffle(perm: SoftPermutation, y: Tensor) -> Tensor:
    """Restore original player indexing by applying M transposed."""
    if len(y.shape) != 3 or y.shape[2] != 2:
        raise ShapeError(f"expected [K, agents, 2], got {y.shape}")
    if y.shape[1] != perm.n + 1:
        raise ShapeError(f"permutation over {perm.n} players vs {y.shape[1]} agents "
                         "(ball included)")
    a = y.array
    out = np.empty_like(a)
    out[:, :perm.n, :] = _mix_players(perm.matrix.T, a[:, :perm.n, :])
    out[:, perm.n, :] = a[:, perm.n, :]
    return Tensor(out)


def hard_permutation_matrix(order) -> SoftPermutation:
    """Exact permutation matrix: slot k holds player order[k]."""
    n = len(order)
    m = np.zeros((n, n))
    m[np.arange(n), list(order)] = 1.0
    return SoftPermutation(matrix=m, scale=1e-3, normalized=True)


# ---------------------------------------------------------------------------
# Gradient-check wrappers
# ---------------------------------------------------------------------------


class ScoreNetworkOp(DifferentiableOp):
    """Scores as a function of (weights..., observed coords)."""

    name = "ordernn.score_network"
    _keys = ("score.w1", "score.b1", "score.w2", "score.b2", "score.w3", "score.b3")

    def _net(self, inputs):
        vals = {k: inputs[i].array for i, k in enumerate(self._keys)}
        return ScoreNetwork(vals["score.w1"], vals["score.b1"], vals["score.w2"],
                            vals["score.b2"], vals["score.w3"], vals["score.b3"])

    def forward(self, *inputs):
        net = self._net(inputs)
        feats = player_features(inputs[-1].array)
        scores, ctx = _score_forward(net, feats)
        return Tensor(scores), (net, ctx)

    def backward(self, inputs, ctx, cot):
        net, fwd_ctx = ctx
        grads, dfeats = _score_backward(net, fwd_ctx, cot.array)
        t = inputs[-1].shape[0]
        dcoords = np.moveaxis(dfeats.reshape(dfeats.shape[0], t, 2), 1, 0) / COORD_SCALE
        return tuple(Tensor(grads[k]) for k in self._keys) + (Tensor(dcoords),)

    def sample_inputs(self, rng):
        net = ScoreNetwork.init(rng)
        coords = rng.uniform(2.0, 13.0, (T_OBS_DEFAULT, N_PLAYERS, 2))
        return tuple(Tensor(v) for v in net.params().values()) + (Tensor(coords),)


class OrderingPipelineOp(DifferentiableOp):
    """scores -> soft ranks -> soft permutation -> reshuffled coordinates.

    The composed map whose vanishing/exploding gradients are the package's
    central diagnostic; checked as one op so the chain rule across all three
    stages is verified together.
    """

    name = "ordernn.rank_reshuffle"

    def __init__(self, epsilon=0.3, scale=0.7, n_players=4, t_frames=2):
        self.epsilon = epsilon
        self.scale = scale
        self.n_players = n_players
        self.t_frames = t_frames

    def forward(self, scores, coords):
        res = soft_rank(scores.array, self.epsilon)
        perm = build_soft_permutation(res, self.scale)
        out = _mix_players(perm.matrix, coords.array)
        return Tensor(out), (res, perm)

    def backward(self, inputs, ctx, cot):
        scores, coords = inputs
        res, perm = ctx
        dcoords, dm = _mix_players_backward(perm.matrix, coords.array, cot.array)
        dranks = soft_permutation_backward(perm, res, dm)
        dscores = soft_rank_backward(res, dranks)
        return Tensor(dscores), Tensor(dcoords)

    def kink_distance(self, scores, coords):
        return soft_rank_kink_distance(scores.array, self.epsilon)

    def sample_inputs(self, rng):
        scores = rng.normal(0.0, 1.0, self.n_players)
        coords = rng.uniform(-1.0, 1.0, (self.t_frames, self.n_players, 2))
        return Tensor(scores), Tensor(coords)


class DeshuffleOp(DifferentiableOp):
    """Transpose-mix of predictions, differentiable in both M and Y."""

    name = "ordernn.deshuffle"

    def forward(self, m, y):
        return Tensor(_mix_players(m.array.T, y.array)), None

    def backward(self, inputs, ctx, cot):
        m, y = inputs
        dy, dmt = _mix_players_backward(m.array.T, y.array, cot.array)
        return Tensor(dmt.T), Tensor(dy)

    def sample_inputs(self, rng):
        n = 4
        return Tensor(rng.uniform(0.0, 1.0, (n, n))), Tensor(rng.normal(0.0, 1.0, (3, n, 2)))


register_op(ScoreNetworkOp())
register_op(OrderingPipelineOp())
register_op(DeshuffleOp())
