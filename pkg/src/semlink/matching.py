"""Relevance matching: queries, keys, link-conditioned attention weights.

Scoring is bilinear general attention over a query/key pair, scaled by
sqrt(key_dim). The weight matrix is either a constant trainable W0
(link-unaware) or W0 plus a rank-1 modulation u(snr) v(snr)^T produced by a
small MLP over the normalized (data, query) link SNRs of the pair. The
modulation head starts zero-initialized, so a fresh link-aware matcher is
functionally identical to the link-unaware one.

Matrix convention: scores[i, j] is requester i's score for responder j
(computed at j from j's own key and the query it received from i). Row i of
the softmaxed matrix holds the weights device i applies to incoming data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numkit as nk
from .errors import NumericError, ProtocolError

GEN_HIDDEN = (256, 128)  # hidden widths of the query/key generator MLPs
GW_HIDDEN = 32


def make_query_generator(feature_dim: int, query_dim: int,
                         rng: np.random.Generator) -> nk.Mlp:
    return nk.Mlp((feature_dim, *GEN_HIDDEN, query_dim), rng, name="gq")


def make_key_generator(feature_dim: int, key_dim: int,
                       rng: np.random.Generator) -> nk.Mlp:
    return nk.Mlp((feature_dim, *GEN_HIDDEN, key_dim), rng, name="gk")


def gen_query(gq: nk.Mlp, feature: np.ndarray) -> np.ndarray:
    feature = np.atleast_2d(np.asarray(feature, dtype=np.float64))
    if feature.shape[1] != gq.dims[0]:
        raise ValueError(f"expected {gq.dims[0]}-dim feature, got {feature.shape[1]}")
    return gq.forward_np(feature)[0]


def gen_key(gk: nk.Mlp, feature: np.ndarray) -> np.ndarray:
    return gen_query(gk, feature)


class WeightGenerator:
    """W(snr_d, snr_q) = W0 + u v^T, with (u, v) from a small MLP over SNRs."""

    def __init__(self, query_dim: int, key_dim: int, rng: np.random.Generator,
                 link_aware: bool = True,
                 snr_min_db: float = -10.0, snr_max_db: float = 10.0):
        self.query_dim = query_dim
        self.key_dim = key_dim
        self.link_aware = link_aware
        self.snr_min_db = float(snr_min_db)
        self.snr_max_db = float(snr_max_db)
        self.w0 = nk.Param(rng.standard_normal((query_dim, key_dim)) / math.sqrt(query_dim),
                           name="gw.w0")
        self.trunk = nk.Mlp((2, GW_HIDDEN, GW_HIDDEN), rng, name="gw.trunk")
        # zero head: W == W0 for any SNR until trained
        self.head = nk.DenseLayer(GW_HIDDEN, query_dim + key_dim, rng,
                                  hidden=False, zero_init=True, name="gw.head")

    def normalize_snr(self, snr_db) -> np.ndarray:
        """Affine map of [snr_min, snr_max] dB onto [-1, 1]."""
        snr_db = np.asarray(snr_db, dtype=np.float64)
        return 2.0 * (snr_db - self.snr_min_db) / (self.snr_max_db - self.snr_min_db) - 1.0

    def modulation(self, snr_pairs: nk.Tensor) -> tuple[nk.Tensor, nk.Tensor]:
        """(n, 2) normalized SNRs -> modulation vectors u (n, Q), v (n, K)."""
        h = nk.relu(self.trunk(snr_pairs))
        uv = self.head(h)
        return (nk.col_slice(uv, 0, self.query_dim),
                nk.col_slice(uv, self.query_dim, self.query_dim + self.key_dim))

    def gen_weights(self, gamma_d_db: float, gamma_q_db: float) -> np.ndarray:
        """Materialize the Q x K weight matrix for one link pair."""
        if not (math.isfinite(gamma_d_db) and math.isfinite(gamma_q_db)):
            raise ValueError("SNR inputs must be finite")
        w = self.w0.data.copy()
        if self.link_aware:
            x = self.normalize_snr([[gamma_d_db, gamma_q_db]])
            h = np.maximum(0.0, self.trunk.forward_np(x))
            uv = (h @ self.head.w.data + self.head.b.data)[0]
            u, v = uv[:self.query_dim], uv[self.query_dim:]
            w += np.outer(u, v)
        return w

    def trainable_params(self) -> list[nk.Param]:
        params = [self.w0]
        if self.link_aware:
            params += self.trunk.params() + self.head.params()
        return params

    def all_params(self) -> list[nk.Param]:
        return [self.w0] + self.trunk.params() + self.head.params()


def match_score(key: np.ndarray, weights: np.ndarray, q_hat: np.ndarray) -> float:
    """Scaled general attention score q_hat^T W key / sqrt(len(key))."""
    key = np.asarray(key, dtype=np.float64).reshape(-1)
    q_hat = np.asarray(q_hat, dtype=np.float64).reshape(-1)
    if weights.shape != (q_hat.shape[0], key.shape[0]):
        raise ValueError(f"weights {weights.shape} do not match "
                         f"query {q_hat.shape[0]} x key {key.shape[0]}")
    return float(q_hat @ weights @ key) / math.sqrt(key.shape[0])


def scores_from_pairs(gw: WeightGenerator, q_hat: nk.Tensor, keys: nk.Tensor,
                      snr_d_db: np.ndarray, snr_q_db: np.ndarray) -> nk.Tensor:
    """Batched pair scores (n_pairs, 1) on the tape.

    q_hat[p] is the (possibly corrupted) query the responder of pair p
    received, keys[p] the responder's key; SNR arrays are per pair in dB.
    The rank-1 form is used directly: q W0 k + (q.u)(v.k), scaled 1/sqrt(K).
    """
    t = nk.row_sum(nk.mul(nk.matmul(q_hat, gw.w0), keys))
    if gw.link_aware:
        snr = np.stack([gw.normalize_snr(snr_d_db), gw.normalize_snr(snr_q_db)], axis=1)
        u, v = gw.modulation(nk.Tensor(snr))
        t2 = nk.mul(nk.row_sum(nk.mul(q_hat, u)), nk.row_sum(nk.mul(v, keys)))
        t = nk.add(t, t2)
    return nk.scale(t, 1.0 / math.sqrt(gw.key_dim))


@dataclass
class MatchingMatrix:
    """Raw scores, their row softmax, and the thresholded variant."""

    raw: np.ndarray
    normalized: np.ndarray
    pruned: np.ndarray
    rho: float


def build_matching_matrix(scores: np.ndarray) -> MatchingMatrix:
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise NumericError("matching scores contain NaN/Inf")
    normalized = nk.softmax_rows(scores)
    return MatchingMatrix(scores, normalized, normalized.copy(), 0.0)


def prune(m: MatchingMatrix, rho: float) -> MatchingMatrix:
    """Zero off-diagonal weights below rho; the self weight is exempt.

    No renormalization happens afterwards: the surviving weights are used
    as-is in the fusion sum.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0,1], got {rho}")
    pruned = m.normalized.copy()
    off_diag = ~np.eye(pruned.shape[0], dtype=bool)
    pruned[off_diag & (pruned < rho)] = 0.0
    return MatchingMatrix(m.raw, m.normalized, pruned, rho)


def combine_features(weights_row: np.ndarray, self_index: int,
                     local: np.ndarray,
                     received: Mapping[int, np.ndarray]) -> np.ndarray:
    """Weighted sum of the local feature and the received peer features.

    Every off-diagonal peer with nonzero weight must appear in ``received``.
    """
    weights_row = np.asarray(weights_row, dtype=np.float64)
    out = weights_row[self_index] * np.asarray(local, dtype=np.float64)
    for j in range(weights_row.shape[0]):
        if j == self_index or weights_row[j] == 0.0:
            continue
        if j not in received:
            raise ProtocolError(f"peer {j} has weight {weights_row[j]:.3g} "
                                f"but no received feature")
        out = out + weights_row[j] * received[j]
    return out


def attach_matching(bundle, gq: nk.Mlp, gk: nk.Mlp, gw: WeightGenerator,
                    trained: bool = True) -> None:
    """Install matching modules on a bundle (used by the trainer and loaders)."""
    bundle.gq = gq
    bundle.gk = gk
    bundle.gw = gw
    bundle.matching_trained = trained


def save_matching(path, bundle) -> None:
    if bundle.gq is None or bundle.gk is None or bundle.gw is None:
        raise ValueError("bundle has no matching modules to save")
    gw: WeightGenerator = bundle.gw
    blocks: dict[str, np.ndarray] = {}
    for p in bundle.gq.params() + bundle.gk.params() + gw.all_params():
        blocks[p.name] = p.data
    blocks["meta.link_aware"] = np.array([[1.0 if gw.link_aware else 0.0]])
    blocks["meta.snr_bounds_db"] = np.array([[gw.snr_min_db, gw.snr_max_db]])
    nk.save_blocks(path, blocks)


def _load_mlp(blocks: dict[str, np.ndarray], prefix: str, name: str) -> nk.Mlp:
    n_layers = len({k for k in blocks if k.startswith(prefix)}) // 2
    dims = [blocks[f"{prefix}0.w"].shape[0]]
    dims += [blocks[f"{prefix}{i}.w"].shape[1] for i in range(n_layers)]
    mlp = nk.Mlp(tuple(dims), np.random.default_rng(0), name=name)
    for i, layer in enumerate(mlp.layers):
        layer.w.data = blocks[f"{prefix}{i}.w"].copy()
        layer.b.data = blocks[f"{prefix}{i}.b"].copy()
    return mlp


def load_matching(path, bundle) -> None:
    """Attach matching modules from a checkpoint; marks them trained."""
    blocks = nk.load_blocks(path)
    gq = _load_mlp(blocks, "gq.", "gq")
    gk = _load_mlp(blocks, "gk.", "gk")
    q_dim, k_dim = blocks["gw.w0"].shape
    lo, hi = blocks["meta.snr_bounds_db"][0]
    gw = WeightGenerator(q_dim, k_dim, np.random.default_rng(0),
                         link_aware=bool(blocks["meta.link_aware"][0, 0]),
                         snr_min_db=lo, snr_max_db=hi)
    gw.w0.data = blocks["gw.w0"].copy()
    for i, layer in enumerate(gw.trunk.layers):
        layer.w.data = blocks[f"gw.trunk.{i}.w"].copy()
        layer.b.data = blocks[f"gw.trunk.{i}.b"].copy()
    gw.head.w.data = blocks["gw.head.w"].copy()
    gw.head.b.data = blocks["gw.head.b"].copy()
    attach_matching(bundle, gq, gk, gw, trained=True)
