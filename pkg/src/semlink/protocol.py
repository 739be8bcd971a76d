"""One collaborative inference round, the baselines, and the KPIs.

A matching round runs the five protocol steps in order: local encode plus
query/key generation, query multicast, responder-side scoring, row softmax
and pruning, then data unicast for the surviving edges and weighted fusion.
Connection accounting counts exactly the off-diagonal data unicasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numkit as nk
from .channel import LinkState, SnrScenario, sample_link_state, transmit_data, transmit_query
from .dataio import ObservationBatch, Sample, assign_groups, make_observation_batch
from .errors import StateError
from .matching import (
    MatchingMatrix,
    build_matching_matrix,
    combine_features,
    prune,
    scores_from_pairs,
)
from .perception import ModelBundle, decode_batch, encode_batch


class Method(str, Enum):
    LOCAL = "local"
    FULL_OBSERVATION = "full"
    TOP3_CHANNEL = "top3"
    SEMANTIC_ONLY = "semantic"
    JOINT = "joint"


@dataclass
class RoundConfig:
    method: Method
    scenario: SnrScenario
    rho: float = 0.0
    noisy_query: bool = False
    noisy_data: bool = True


@dataclass
class RoundMetrics:
    correct: np.ndarray  # (N,) bool
    accuracy: float
    sidelink_connections: int
    avg_connections_per_device: float


@dataclass
class CommGraph:
    """Directed sender -> receiver edges with their fusion weights."""

    edges: list[tuple[int, int, float]] = field(default_factory=list)
    matrix: MatchingMatrix | None = None  # populated for matching methods


def _metrics(predictions: np.ndarray, labels: np.ndarray, connections: int) -> RoundMetrics:
    correct = predictions == labels
    n = labels.shape[0]
    return RoundMetrics(correct, float(correct.mean()), connections, connections / n)


def top3_peers(link: LinkState, i: int) -> list[int]:
    """The three senders with the best inbound data links to device i.

    Ties break toward the lower device index.
    """
    inbound = link.gamma_d_db[:, i]
    order = sorted((j for j in range(link.n_devices) if j != i),
                   key=lambda j: (-inbound[j], j))
    return order[:3]


def run_top3_baseline(bundle: ModelBundle, batch: ObservationBatch, link: LinkState,
                      rng: np.random.Generator, noisy_data: bool = True
                      ) -> tuple[np.ndarray, RoundMetrics, CommGraph]:
    """Channel-only grouping: equal-weight average of local + 3 best-link peers."""
    n = batch.n_devices
    if n < 4:
        raise ValueError(f"top-3 selection needs at least 4 devices, got {n}")
    feats = encode_batch(bundle, batch.images)
    combined = np.empty_like(feats)
    graph = CommGraph()
    for i in range(n):
        peers = top3_peers(link, i)
        acc = feats[i].copy()
        for j in peers:
            y = transmit_data(feats[j], link, j, i, rng) if noisy_data else feats[j].copy()
            acc += y
            graph.edges.append((j, i, 0.25))
        combined[i] = acc / 4.0
    predictions = decode_batch(bundle, combined).argmax(axis=1)
    return predictions, _metrics(predictions, batch.labels, 3 * n), graph


def matching_round_matrix(bundle: ModelBundle, feats: np.ndarray, link: LinkState,
                          cfg: RoundConfig, rng: np.random.Generator) -> MatchingMatrix:
    """Steps 1-4: queries/keys, query multicast, responder scoring, row softmax."""
    n = feats.shape[0]
    mu = bundle.gq.forward_np(feats)
    keys = bundle.gk.forward_np(feats)
    q_dim, k_dim = mu.shape[1], keys.shape[1]

    q_hat = np.empty((n * n, q_dim))
    key_rows = np.empty((n * n, k_dim))
    snr_d = np.empty(n * n)
    snr_q = np.empty(n * n)
    gamma_max = bundle.gw.snr_max_db
    for i in range(n):
        for j in range(n):
            p = i * n + j
            key_rows[p] = keys[j]
            if i == j:
                q_hat[p] = mu[i]
                snr_d[p] = gamma_max
                snr_q[p] = gamma_max
            else:
                q_hat[p] = transmit_query(mu[i], link, i, j, cfg.noisy_query, rng)
                snr_d[p] = link.gamma_d_db[j, i]
                snr_q[p] = link.gamma_q_db[i, j]
    scores = scores_from_pairs(bundle.gw, nk.Tensor(q_hat), nk.Tensor(key_rows),
                               snr_d, snr_q)
    return build_matching_matrix(scores.data.reshape(n, n))


def _run_matching_round(bundle: ModelBundle, batch: ObservationBatch, link: LinkState,
                        cfg: RoundConfig, rng: np.random.Generator
                        ) -> tuple[np.ndarray, RoundMetrics, CommGraph]:
    if bundle.gq is None or bundle.gk is None or bundle.gw is None \
            or not bundle.matching_trained:
        raise StateError(f"method {cfg.method.value!r} needs trained matching modules")
    if (cfg.method is Method.JOINT) != bundle.gw.link_aware:
        raise ValueError(f"method {cfg.method.value!r} does not match the "
                         f"loaded matcher (link_aware={bundle.gw.link_aware})")
    n = batch.n_devices
    feats = encode_batch(bundle, batch.images)
    matrix = prune(matching_round_matrix(bundle, feats, link, cfg, rng), cfg.rho)

    graph = CommGraph(matrix=matrix)
    combined = np.empty_like(feats)
    connections = 0
    for i in range(n):
        received = {}
        for j in range(n):
            if j == i or matrix.pruned[i, j] == 0.0:
                continue
            received[j] = (transmit_data(feats[j], link, j, i, rng)
                           if cfg.noisy_data else feats[j].copy())
            graph.edges.append((j, i, float(matrix.pruned[i, j])))
            connections += 1
        combined[i] = combine_features(matrix.pruned[i], i, feats[i], received)
    predictions = decode_batch(bundle, combined).argmax(axis=1)
    return predictions, _metrics(predictions, batch.labels, connections), graph


def run_round(bundle: ModelBundle, batch: ObservationBatch, link: LinkState,
              cfg: RoundConfig, rng: np.random.Generator
              ) -> tuple[np.ndarray, RoundMetrics, CommGraph]:
    """Run one inference round for any method; returns per-device predictions."""
    method = Method(cfg.method)
    if method is Method.LOCAL:
        predictions = decode_batch(bundle, encode_batch(bundle, batch.images)).argmax(axis=1)
        return predictions, _metrics(predictions, batch.labels, 0), CommGraph()
    if method is Method.FULL_OBSERVATION:
        predictions = decode_batch(bundle, encode_batch(bundle, batch.clean_images)).argmax(axis=1)
        return predictions, _metrics(predictions, batch.labels, 0), CommGraph()
    if method is Method.TOP3_CHANNEL:
        return run_top3_baseline(bundle, batch, link, rng, noisy_data=cfg.noisy_data)
    return _run_matching_round(bundle, batch, link, cfg, rng)


@dataclass
class SeedMetrics:
    seed: int
    accuracy: float
    avg_connections: float
    n_rounds: int


@dataclass
class EvalResult:
    per_seed: list[SeedMetrics]
    accuracy_mean: float
    accuracy_sd: float
    connections_mean: float
    connections_sd: float


def evaluate(bundle: ModelBundle, samples: list[Sample], cfg: RoundConfig,
             n_rounds: int, seeds: list[int], n_devices: int = 16, n_groups: int = 4,
             p: float = 0.8, patch_scale: float = 0.4, round_hook=None) -> EvalResult:
    """Mean/sd of round accuracy and per-device connections over rounds x seeds.

    Each round draws everything (grouping, images, corruption, link state,
    channel noise) from its own child generator seeded by (seed, round), so
    results are reproducible and rounds are independent.
    """
    per_seed = []
    all_acc: list[float] = []
    all_conn: list[float] = []
    for seed in seeds:
        accs = np.empty(n_rounds)
        conns = np.empty(n_rounds)
        for r in range(n_rounds):
            rng = np.random.default_rng([seed, r])
            groups = assign_groups(n_devices, n_groups, rng)
            picks = rng.choice(len(samples), size=n_groups, replace=False)
            batch = make_observation_batch([samples[k] for k in picks], groups,
                                           p, patch_scale, rng)
            link = sample_link_state(cfg.scenario, n_devices, rng)
            _, metrics, graph = run_round(bundle, batch, link, cfg, rng)
            accs[r] = metrics.accuracy
            conns[r] = metrics.avg_connections_per_device
            if round_hook is not None:
                round_hook(seed, r, graph)
        per_seed.append(SeedMetrics(seed, float(accs.mean()), float(conns.mean()), n_rounds))
        all_acc.extend(accs)
        all_conn.extend(conns)
    acc = np.array(all_acc)
    conn = np.array(all_conn)
    return EvalResult(per_seed, float(acc.mean()), float(acc.std()),
                      float(conn.mean()), float(conn.std()))
