"""Losses, SGD training of the experiment variants, the distance-estimator
pretraining task, the gradient-flow probe, and checkpoint serialization.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffcore import Rng, Tensor
from .errors import ConfigError, DataError, ShapeError
from .gamedata import K_FUT_DEFAULT, N_PLAYERS, load_sequences
from .metrics import ade as ade_metric
from .metrics import fde as fde_metric
from .metrics import topk_ordering_accuracy
from .model import RolForModel
from .oracles import OrderingSpec, euclidean_distances_to_ball, order_players
from .ordernn import (COORD_SCALE, ScoreNetwork, player_features, _score_backward,
                      _score_forward)
from .perturb import PerturbSpec, apply_perturbation
from .rolegcn import AdjacencyConfig

VARIANTS = ("none", "oracle", "eucl_dist_est", "e2e", "e2e_finetune")

CHECKPOINT_MAGIC = b"RFCK"
CHECKPOINT_VERSION = 1


@dataclass
class ExperimentConfig:
    variant: str
    train_path: str = ""
    test_path: str = ""
    ordering: str = "ball_distance_marking"
    epsilon: float = 0.1
    scale: float = 0.1
    adjacency_variant: int = 3
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    init_checkpoint: str = ""
    normalized_m: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant in ("e2e_finetune", "eucl_dist_est") and not self.init_checkpoint:
            raise ConfigError(f"variant {self.variant!r} requires init_checkpoint "
                              "(a pretrained distance estimator)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "variant" not in values:
            raise ConfigError("config must set 'variant'")
        return cls(**values)


@dataclass
class Checkpoint:
    weights: dict
    config: dict
    epoch: int
    rng_state: dict = field(default_factory=dict)

    def save(self, path):
        names = sorted(self.weights)
        meta = {
            "config": self.config,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "tensors": [{"name": n, "shape": list(self.weights[n].shape)} for n in names],
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(self.weights[n], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            if fh.read(4) != CHECKPOINT_MAGIC:
                raise DataError(f"{path}: not a checkpoint file")
            version, blob_len = struct.unpack("<IQ", fh.read(12))
            if version != CHECKPOINT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            meta = json.loads(fh.read(blob_len).decode("utf-8"))
            weights = {}
            for entry in meta["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
                weights[entry["name"]] = data.reshape(shape)
        return cls(weights=weights, config=meta["config"], epoch=meta["epoch"],
                   rng_state=meta["rng_state"])


class SgdMomentum:
    """Plain stochastic gradient descent with momentum 0.9."""

    def __init__(self, params: dict, learning_rate: float, momentum: float = 0.9):
        self.lr = learning_rate
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p
                continue
            v = self.velocity[k] = self.momentum * self.velocity[k] + g
            out[k] = p - self.lr * v
        return out


def forecast_loss(pred, gt) -> float:
    """Mean squared coordinate error over all future player positions."""
    p = pred.array if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    g = gt.array if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} vs ground truth {g.shape}")
    return float(np.mean((p - g) ** 2))


def forecast_loss_grad(pred, gt) -> np.ndarray:
    p = pred.array if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    g = gt.array if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    return 2.0 * (p - g) / p.size


def dataset_arrays(seqs):
    """Stack sequences into X [N, T, agents, 2] and future Y [N, K, agents, 2]."""
    if not seqs:
        raise DataError("empty dataset")
    x = np.stack([s.observed for s in seqs])
    y = np.stack([s.future for s in seqs])
    return x, y


def build_model(config: ExperimentConfig, rng: Rng) -> RolForModel:
    soft = config.variant in ("e2e", "e2e_finetune")
    with_net = soft or config.variant == "eucl_dist_est"
    model = RolForModel.init(rng, AdjacencyConfig(config.adjacency_variant),
                             with_score_net=with_net, epsilon=config.epsilon,
                             scale=config.scale, normalized_m=config.normalized_m)
    if config.variant in ("e2e_finetune", "eucl_dist_est"):
        ckpt = Checkpoint.load(config.init_checkpoint)
        params = model.params()
        for k, v in ckpt.weights.items():
            if k.startswith("score."):
                params[k] = v
        model.set_params(params)
    return model


def fixed_orders(config: ExperimentConfig, model: RolForModel, seqs, x) -> list | None:
    """Per-sequence hard orderings, or None for the end-to-end soft path."""
    if config.variant in ("e2e", "e2e_finetune"):
        return None
    if config.variant == "none":
        spec = OrderingSpec("none", seed=config.seed)
        return [order_players(spec, s) for s in seqs]
    if config.variant == "oracle":
        spec = OrderingSpec(config.ordering)
        return [order_players(spec, s) for s in seqs]
    return model.induced_orders(x)  # eucl_dist_est: frozen pretrained scores


def _trainable_params(config: ExperimentConfig, model: RolForModel) -> dict:
    params = model.params()
    if config.variant == "eucl_dist_est":
        params = {k: v for k, v in params.items() if not k.startswith("score.")}
    return params


def train(config: ExperimentConfig, seqs=None):
    """Train one experiment variant; returns (Checkpoint, history rows)."""
    if seqs is None:
        seqs = load_sequences(config.train_path)
    if not seqs:
        raise DataError("training dataset is empty")
    x, y = dataset_arrays(seqs)
    y_players = y[:, :, :N_PLAYERS, :]

    rng = Rng(config.seed)
    model = build_model(config, rng.child(0))
    orders = fixed_orders(config, model, seqs, x)

    params = _trainable_params(config, model)
    opt = SgdMomentum(params, config.learning_rate, config.momentum)
    batch_rng = rng.child(1)

    n = x.shape[0]
    history = []
    for epoch in range(config.epochs):
        perm = batch_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            bx, by = x[idx], y_players[idx]
            border = [orders[i] for i in idx] if orders is not None else None
            preds, cache = model.forward(bx, border)
            pp = preds[:, :, :N_PLAYERS, :]
            loss = float(np.mean((pp - by) ** 2))
            dpp = 2.0 * (pp - by) / pp.size
            dpreds = np.zeros_like(preds)
            dpreds[:, :, :N_PLAYERS, :] = dpp
            grads = model.backward(cache, dpreds)
            current = model.params()
            current.update(opt.step({k: current[k] for k in params}, grads))
            model.set_params(current)
            total += loss * len(idx)
            seen += len(idx)
        history.append({"epoch": epoch, "loss": total / seen})

    ckpt = Checkpoint(weights=model.params(), config=config.to_dict(),
                      epoch=config.epochs, rng_state=batch_rng.state())
    return ckpt, history


def model_from_checkpoint(ckpt: Checkpoint) -> tuple:
    config = ExperimentConfig.from_dict(ckpt.config)
    model = build_model(config, Rng(config.seed).child(0))
    model.set_params(dict(ckpt.weights))
    return model, config


# ---------------------------------------------------------------------------
# Distance-estimator pretraining (the EuclDistEst task)
# ---------------------------------------------------------------------------


def pretrain_dist_estimator(config: ExperimentConfig, seqs=None):
    """Train the score network to regress each player's ball distance at the
    last observed frame.  Distances are regressed in normalized units; the
    reported MSE is in square meters."""
    if seqs is None:
        seqs = load_sequences(config.train_path)
    if not seqs:
        raise DataError("training dataset is empty")
    feats = np.stack([player_features(s.observed[:, :N_PLAYERS, :]) for s in seqs])
    targets = np.stack([
        euclidean_distances_to_ball(s, s.t_obs - 1) for s in seqs]) / COORD_SCALE

    rng = Rng(config.seed)
    net = ScoreNetwork.init(rng.child(0))
    params = net.params()
    opt = SgdMomentum(params, config.learning_rate, config.momentum)
    batch_rng = rng.child(1)

    n = feats.shape[0]
    history = []
    for epoch in range(config.epochs):
        perm = batch_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            bf, bt = feats[idx], targets[idx]
            scores, ctx = _score_forward(net, bf)
            err = scores - bt
            loss = float(np.mean(err**2))
            grads, _ = _score_backward(net, ctx, 2.0 * err / err.size)
            new_params = opt.step(net.params(), grads)
            net.set_params(new_params)
            total += loss * len(idx)
            seen += len(idx)
        history.append({"epoch": epoch, "loss_m2": (total / seen) * COORD_SCALE**2})

    ckpt = Checkpoint(weights=net.params(), config=config.to_dict(),
                      epoch=config.epochs, rng_state=batch_rng.state())
    return ckpt, history


def dist_estimator_mse(ckpt: Checkpoint, seqs) -> float:
    """Held-out distance regression error in square meters."""
    net = ScoreNetwork.init(Rng(0))
    net.set_params({k: v for k, v in ckpt.weights.items() if k.startswith("score.")})
    feats = np.stack([player_features(s.observed[:, :N_PLAYERS, :]) for s in seqs])
    targets = np.stack([
        euclidean_distances_to_ball(s, s.t_obs - 1) for s in seqs]) / COORD_SCALE
    scores, _ = _score_forward(net, feats)
    return float(np.mean((scores - targets) ** 2)) * COORD_SCALE**2


def estimator_orders(ckpt: Checkpoint, seqs) -> list:
    """Hard ordering induced by the pretrained distance estimator."""
    net = ScoreNetwork.init(Rng(0))
    net.set_params({k: v for k, v in ckpt.weights.items() if k.startswith("score.")})
    out = []
    for s in seqs:
        scores, _ = _score_forward(net, player_features(s.observed[:, :N_PLAYERS, :]))
        out.append([int(i) for i in np.argsort(scores, kind="stable")])
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def true_orders(seqs) -> list:
    spec = OrderingSpec("ball_distance")
    return [order_players(spec, s) for s in seqs]


def evaluate_checkpoint(ckpt: Checkpoint, seqs, perturb: PerturbSpec | None = None,
                        eval_seed: int = 0) -> dict:
    """ADE/FDE and ordering accuracy of a trained model on a dataset.

    With a perturbation spec, the per-sequence ordering is corrupted before
    forecasting (hard-order variants only make sense here, but any variant's
    induced hard ordering is accepted).
    """
    model, config = model_from_checkpoint(ckpt)
    x, y = dataset_arrays(seqs)
    orders = fixed_orders(config, model, seqs, x)
    soft = orders is None
    if soft:
        orders = model.induced_orders(x)
    if perturb is not None:
        root = Rng(perturb.seed + eval_seed)
        orders = [apply_perturbation(perturb, o, root.child(i))
                  for i, o in enumerate(orders)]
        soft = False

    preds, _ = model.forward(x, None if soft and perturb is None else orders)
    per_sequence = []
    truth = true_orders(seqs)
    topk = {1: [], 3: [], 5: [], 10: []}
    for i, s in enumerate(seqs):
        pa = preds[i, :, :N_PLAYERS, :]
        ga = y[i, :, :N_PLAYERS, :]
        per_sequence.append((s.sequence_id, ade_metric(pa, ga), fde_metric(pa, ga)))
        for k in topk:
            topk[k].append(topk_ordering_accuracy(orders[i], truth[i], k))
    return {
        "ade": float(np.mean([r[1] for r in per_sequence])),
        "fde": float(np.mean([r[2] for r in per_sequence])),
        "topk1": float(np.mean(topk[1])),
        "topk3": float(np.mean(topk[3])),
        "topk5": float(np.mean(topk[5])),
        "topk10": float(np.mean(topk[10])),
        "per_sequence": per_sequence,
        "orders": orders,
    }


# ---------------------------------------------------------------------------
# Gradient-flow probe
# ---------------------------------------------------------------------------


def gradient_probe(ckpt: Checkpoint, seqs, epsilons) -> list:
    """Per-epsilon gradient norms into the score network and the RoleGCN,
    plus the fraction of soft-rank coordinates pooled into non-singleton
    blocks.  One forward/backward per epsilon on the given batch."""
    model, config = model_from_checkpoint(ckpt)
    if model.score_net is None:
        raise ConfigError("gradient probe needs an e2e-configured model")
    x, y = dataset_arrays(seqs)
    y_players = y[:, :, :N_PLAYERS, :]
    rows = []
    for eps in epsilons:
        model.epsilon = float(eps)
        preds, cache = model.forward(x, None)
        pp = preds[:, :, :N_PLAYERS, :]
        dpreds = np.zeros_like(preds)
        dpreds[:, :, :N_PLAYERS, :] = 2.0 * (pp - y_players) / pp.size
        grads = model.backward(cache, dpreds)
        ordernn_sq = sum(float(np.sum(g**2)) for k, g in grads.items()
                         if k.startswith("score."))
        gcn_sq = sum(float(np.sum(g**2)) for k, g in grads.items()
                     if k.startswith("gcn"))
        pooled = float(np.mean([r.pooled_fraction() for r in cache["rank_results"]]))
        rows.append({"epsilon": float(eps),
                     "ordernn_grad_norm": ordernn_sq**0.5,
                     "gcn_grad_norm": gcn_sq**0.5,
                     "pooled_fraction": pooled})
    return rows
