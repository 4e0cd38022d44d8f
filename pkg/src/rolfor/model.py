"""The assembled forecaster: ordering -> role graph encoder -> decoder.

Forward and backward are explicit; the backward accumulates the soft
permutation's cotangent from both the re-shuffle (inputs) and de-shuffle
(predictions) stages before propagating into the soft ranks and scores.
All internals are batched over sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _es(*args, **kw):
    return np.einsum(*args, optimize=True, **kw)

from .decoder import TcnDecoder, _decode_backward, _decode_forward
from .diffcore import Rng
from .gamedata import K_FUT_DEFAULT, N_PLAYERS, T_OBS_DEFAULT
from .ordernn import (COORD_SCALE, ScoreNetwork, _mix_players, _mix_players_backward,
                      _score_backward, _score_forward, build_soft_permutation,
                      hard_permutation_matrix, normalize_coords, denormalize_coords,
                      player_features, soft_permutation_backward)
from .rolegcn import AdjacencyConfig, _gcn_backward, _gcn_forward, build_stack
from .softsort import hard_rank, soft_rank, soft_rank_backward


@dataclass
class RolForModel:
    gcn_stack: list
    decoder: TcnDecoder
    score_net: ScoreNetwork | None = None
    epsilon: float = 0.1
    scale: float = 0.1
    normalized_m: bool = True

    @classmethod
    def init(cls, rng: Rng, adjacency: AdjacencyConfig, with_score_net: bool,
             epsilon=0.1, scale=0.1, normalized_m=True,
             t_frames=T_OBS_DEFAULT, k_frames=K_FUT_DEFAULT):
        stack = build_stack(adjacency, rng.child(1), n_frames=t_frames)
        dec = TcnDecoder.init(rng.child(2), c_in=64, c_mid=32,
                              t_frames=t_frames, k_frames=k_frames)
        net = ScoreNetwork.init(rng.child(3)) if with_score_net else None
        return cls(gcn_stack=stack, decoder=dec, score_net=net,
                   epsilon=epsilon, scale=scale, normalized_m=normalized_m)

    def params(self) -> dict:
        out = {}
        if self.score_net is not None:
            out.update(self.score_net.params())
        for layer in self.gcn_stack:
            out.update(layer.params())
        out.update(self.decoder.params())
        return out

    def set_params(self, values: dict):
        if self.score_net is not None:
            self.score_net.set_params(values)
        for layer in self.gcn_stack:
            layer.set_params(values)
        self.decoder.set_params(values)

    # -- ordering ----------------------------------------------------------

    def scores_of(self, x: np.ndarray) -> np.ndarray:
        """Latent scores per player; x: [N, T, agents, 2]."""
        feats = player_features(x[:, :, :N_PLAYERS, :])
        scores, _ = _score_forward(self.score_net, feats)
        return scores

    def induced_orders(self, x: np.ndarray) -> list:
        """Hard ordering implied by the scores (ascending, rank 1 first)."""
        return [[int(i) for i in np.argsort(hard_rank(s))] for s in self.scores_of(x)]

    # -- forward/backward --------------------------------------------------

    def forward(self, x: np.ndarray, orders=None):
        """x: [N, T, agents, 2] meters -> predictions [N, K, agents, 2].

        With `orders` the ordering is a fixed hard permutation per sequence
        (no score network in the graph); without, the end-to-end soft path
        scores and softly permutes the players.
        """
        n = x.shape[0]
        cache = {"x": x, "orders": orders}
        if orders is not None:
            m = np.stack([hard_permutation_matrix(o).matrix for o in orders])
        else:
            feats = player_features(x[:, :, :N_PLAYERS, :])
            scores, score_ctx = _score_forward(self.score_net, feats)
            rank_results = [soft_rank(scores[i], self.epsilon) for i in range(n)]
            ranks = np.stack([r.ranks for r in rank_results])
            perm = build_soft_permutation(ranks, self.scale, self.normalized_m)
            m = perm.matrix
            cache.update(scores=scores, score_ctx=score_ctx,
                         rank_results=rank_results, ranks=ranks, perm=perm)
        cache["m"] = m

        players = x[:, :, :N_PLAYERS, :]
        role_coords = np.concatenate(
            [_mix_players(m, players), x[:, :, N_PLAYERS:, :]], axis=2)
        h = np.transpose(normalize_coords(role_coords), (0, 3, 2, 1))  # [N, 2, R, T]
        cache["role_coords"] = role_coords

        gcn_ctxs = []
        for layer in self.gcn_stack:
            h, ctx = _gcn_forward(layer, h)
            gcn_ctxs.append(ctx)
        cache["gcn_ctxs"] = gcn_ctxs

        decoded, dec_ctx = _decode_forward(self.decoder, h)  # [N, K, R, 2] normalized
        cache["dec_ctx"] = dec_ctx
        role_preds = denormalize_coords(decoded)
        cache["role_preds"] = role_preds

        preds = np.concatenate(
            [_mix_players(np.swapaxes(m, -1, -2), role_preds[:, :, :N_PLAYERS, :]),
             role_preds[:, :, N_PLAYERS:, :]], axis=2)
        return preds, cache

    def backward(self, cache, dpreds: np.ndarray) -> dict:
        """Cotangents for every trainable parameter given dLoss/dpredictions."""
        m = cache["m"]
        role_preds = cache["role_preds"]

        drole_players, dmt = _mix_players_backward(
            np.swapaxes(m, -1, -2), role_preds[:, :, :N_PLAYERS, :],
            dpreds[:, :, :N_PLAYERS, :])
        dm = np.swapaxes(dmt, -1, -2)
        drole_preds = np.concatenate([drole_players, dpreds[:, :, N_PLAYERS:, :]], axis=2)

        ddecoded = drole_preds * COORD_SCALE
        dh, grads = _decode_backward(self.decoder, cache["dec_ctx"], ddecoded)

        for layer, ctx in zip(reversed(self.gcn_stack), reversed(cache["gcn_ctxs"])):
            dh, da_s, da_t, dw = _gcn_backward(layer, ctx, dh)
            grads[f"{layer.layer_id}w"] = dw
            grads.update(layer.adjacency.grads(da_s, da_t))

        drole_coords = np.transpose(dh, (0, 3, 2, 1)) / COORD_SCALE
        dplayers, dm2 = _mix_players_backward(
            m, cache["x"][:, :, :N_PLAYERS, :], drole_coords[:, :, :N_PLAYERS, :])
        dm = dm + dm2

        if cache["orders"] is None:
            dranks = soft_permutation_backward(cache["perm"], cache["ranks"], dm)
            dscores = np.stack([
                soft_rank_backward(res, dranks[i])
                for i, res in enumerate(cache["rank_results"])])
            score_grads, _ = _score_backward(self.score_net, cache["score_ctx"], dscores)
            grads.update(score_grads)
        return grads
