"""Training of the matching modules against cross-entropy over device predictions.

One batch element is one full N-device round: fresh grouping, fresh
observations, fresh link state. The whole round runs unpruned (rho = 0) on
the tape; the encoder output and the channel noise enter as constants, the
decoder propagates gradients but stays frozen.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import numkit as nk
from .channel import SnrScenario, sample_link_state
from .dataio import IMG_SIZE, Sample, assign_groups, make_observation_batch
from .errors import NumericError, StateError
from .matching import (
    WeightGenerator,
    attach_matching,
    make_key_generator,
    make_query_generator,
    save_matching,
    scores_from_pairs,
)
from .perception import ModelBundle


@dataclass
class TrainConfig:
    epochs: int = 60
    steps_per_epoch: int = 12
    batch_size: int = 64
    lr: float = 1e-3
    query_dim: int = 64
    key_dim: int = 128
    noisy_query: bool = False
    noisy_data: bool = True
    link_aware: bool = True
    n_devices: int = 16
    n_groups: int = 4
    p_occlusion: float = 0.8
    patch_scale: float = 0.4


def _pair_indices(n_rounds: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Requester/responder row indices for every (round, i, j) pair."""
    r = np.repeat(np.arange(n_rounds), n * n)
    i = np.tile(np.repeat(np.arange(n), n), n_rounds)
    j = np.tile(np.arange(n), n_rounds * n)
    return r * n + i, r * n + j, i == j


def _sample_batch(samples: list[Sample], scenario: SnrScenario, cfg: TrainConfig,
                  rng: np.random.Generator):
    """Draw cfg.batch_size independent rounds; returns stacked arrays."""
    n, nn = cfg.n_devices, cfg.n_devices * cfg.n_devices
    b = cfg.batch_size
    images = np.empty((b * n, IMG_SIZE, IMG_SIZE))
    labels = np.empty(b * n, dtype=np.int64)
    snr_d = np.empty(b * nn)
    snr_q = np.empty(b * nn)
    for k in range(b):
        groups = assign_groups(n, cfg.n_groups, rng)
        picks = rng.choice(len(samples), size=cfg.n_groups, replace=False)
        batch = make_observation_batch([samples[s] for s in picks], groups,
                                       cfg.p_occlusion, cfg.patch_scale, rng)
        images[k * n:(k + 1) * n] = batch.images
        labels[k * n:(k + 1) * n] = batch.labels
        link = sample_link_state(scenario, n, rng)
        # pair p = i*n + j: data link j->i, query link i->j (diagonal = gamma_max)
        snr_d[k * nn:(k + 1) * nn] = link.gamma_d_db.T.reshape(-1)
        snr_q[k * nn:(k + 1) * nn] = link.gamma_q_db.reshape(-1)
    return images, labels, snr_d, snr_q


def _round_loss(bundle: ModelBundle, gq, gk, gw, images, labels, snr_d, snr_q,
                cfg: TrainConfig, rng: np.random.Generator) -> nk.Tensor:
    """Full differentiable batch of rounds at rho = 0."""
    n = cfg.n_devices
    feats = bundle.encoder.forward_np(images.reshape(images.shape[0], -1))
    rn = feats.shape[0]
    idx_req, idx_res, diag = _pair_indices(rn // n, n)

    feats_t = nk.Tensor(feats)
    mu = gq(feats_t)
    keys = gk(feats_t)
    q_hat = nk.gather_rows(mu, idx_req)
    if cfg.noisy_query:
        # AWGN at per-message power of the current queries; scale is detached
        power = (mu.data * mu.data).mean(axis=1)
        sigma = np.sqrt(power[idx_req] / 10.0 ** (snr_q / 10.0))
        sigma[diag] = 0.0
        noise = rng.standard_normal((len(sigma), mu.cols)) * sigma[:, None]
        q_hat = nk.add(q_hat, nk.Tensor(noise))
    key_rows = nk.gather_rows(keys, idx_res)

    scores = scores_from_pairs(gw, q_hat, key_rows, snr_d, snr_q)
    weights = nk.row_softmax(nk.reshape(scores, rn, n))

    received = feats[idx_res]
    if cfg.noisy_data:
        power = (feats * feats).mean(axis=1)
        sigma = np.sqrt(power[idx_res] / 10.0 ** (snr_d / 10.0))
        sigma[diag] = 0.0
        received = received + rng.standard_normal(received.shape) * sigma[:, None]

    fused = nk.weighted_block_sum(weights, nk.Tensor(received))
    logits = bundle.decoder(fused)
    return nk.cross_entropy(logits, labels)


def train_matching(bundle: ModelBundle, samples: list[Sample], scenario: SnrScenario,
                   cfg: TrainConfig, rng: np.random.Generator,
                   log=None) -> tuple[ModelBundle, list[float]]:
    """Train G_q, G_k and the attention weights; encoder/decoder stay frozen."""
    if not bundle.pretrained:
        raise StateError("pretrain the perception model before matching training")
    gq = make_query_generator(bundle.feature_dim, cfg.query_dim, rng)
    gk = make_key_generator(bundle.feature_dim, cfg.key_dim, rng)
    gw = WeightGenerator(cfg.query_dim, cfg.key_dim, rng, link_aware=cfg.link_aware,
                         snr_min_db=scenario.gamma_min_db,
                         snr_max_db=scenario.gamma_max_db)
    params = gq.params() + gk.params() + gw.trainable_params()
    opt = nk.RAdam(params, lr=cfg.lr)
    frozen = bundle.decoder.params()

    history: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            step += 1
            images, labels, snr_d, snr_q = _sample_batch(samples, scenario, cfg, rng)
            try:
                loss = _round_loss(bundle, gq, gk, gw, images, labels,
                                   snr_d, snr_q, cfg, rng)
                opt.zero_grads()
                nk.zero_grads(frozen)
                loss.backward()
            except NumericError as exc:
                norms = {p.name: float(np.linalg.norm(p.grad)) for p in params}
                last = history[-1] if history else float("nan")
                raise NumericError(
                    f"non-finite value at step {step} (last loss {last:.6g}); "
                    f"grad norms {norms}") from exc
            opt.step()
            history.append(loss.item())
        if log:
            recent = history[-cfg.steps_per_epoch:]
            log(f"epoch {epoch + 1}/{cfg.epochs}: mean loss {np.mean(recent):.4f}")
    attach_matching(bundle, gq, gk, gw, trained=True)
    return bundle, history


def smoothed(history: list[float], window: int = 50) -> list[float]:
    """Trailing moving average of the loss history."""
    out = []
    for k in range(len(history)):
        lo = max(0, k - window + 1)
        out.append(float(np.mean(history[lo:k + 1])))
    return out


def train_all_variants(bundle: ModelBundle, samples: list[Sample],
                       scenarios: list[SnrScenario], query_sizes: list[int],
                       base_cfg: TrainConfig, out_dir: str, seed: int,
                       log=None) -> list[dict]:
    """Sweep (variant x scenario x query size x noise arm); writes a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest: list[dict] = []
    run = 0
    for link_aware in (False, True):
        variant = "joint" if link_aware else "semantic"
        for scenario in scenarios:
            for q in query_sizes:
                for noisy_query in (False, True):
                    run += 1
                    cfg = replace(base_cfg, link_aware=link_aware, query_dim=q,
                                  noisy_query=noisy_query, noisy_data=True)
                    rng = np.random.default_rng([seed, run])
                    t0 = time.perf_counter()
                    _, history = train_matching(bundle, samples, scenario, cfg, rng)
                    name = (f"matching_{variant}_{scenario.kind}_q{q}_"
                            f"{'qnoisy' if noisy_query else 'qclean'}.slnk")
                    path = os.path.join(out_dir, name)
                    save_matching(path, bundle)
                    entry = {
                        "variant": variant,
                        "scenario": scenario.kind,
                        "query_size": q,
                        "noisy_query": noisy_query,
                        "noisy_data": True,
                        "seed": seed,
                        "final_loss": float(np.mean(history[-min(50, len(history)):])),
                        "path": name,
                    }
                    manifest.append(entry)
                    if log:
                        log(f"{name}: loss {entry['final_loss']:.4f} "
                            f"({time.perf_counter() - t0:.1f}s)")
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
