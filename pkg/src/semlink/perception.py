"""The shared classifier, split into a frozen feature extractor and decision head.

The full model is an MLP over flattened 32x32 images:
    encoder: 1024 -> 256 (ReLU) -> feature_dim
    decoder: feature_dim -> 64 (ReLU) -> 10 logits
After pretraining both halves are frozen; only the matching modules learn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit as nk
from .dataio import IMG_SIZE, N_CLASSES, Sample, apply_patch
from .errors import StateError, TrainingFailure

FEATURE_DIM = 64
_ENCODER_HIDDEN = 256
_DECODER_HIDDEN = 64


@dataclass
class ModelBundle:
    """Every learnable piece one device runs, shared across all devices."""

    encoder: nk.Mlp
    decoder: nk.Mlp
    feature_dim: int = FEATURE_DIM
    n_classes: int = N_CLASSES
    pretrained: bool = False
    gq: nk.Mlp | None = None
    gk: nk.Mlp | None = None
    gw: object | None = None  # matching.WeightGenerator once attached
    matching_trained: bool = False
    meta: dict = field(default_factory=dict)

    def freeze_perception(self) -> None:
        self.encoder.set_trainable(False)
        self.decoder.set_trainable(False)

    def perception_params(self) -> list[nk.Param]:
        return self.encoder.params() + self.decoder.params()


def new_bundle(rng: np.random.Generator, feature_dim: int = FEATURE_DIM) -> ModelBundle:
    encoder = nk.Mlp((IMG_SIZE * IMG_SIZE, _ENCODER_HIDDEN, feature_dim), rng, name="encoder")
    decoder = nk.Mlp((feature_dim, _DECODER_HIDDEN, N_CLASSES), rng, name="decoder")
    return ModelBundle(encoder, decoder, feature_dim=feature_dim)


def _flatten(images: np.ndarray) -> np.ndarray:
    if images.ndim == 2:
        images = images[None]
    return images.reshape(images.shape[0], -1)


def encode_batch(bundle: ModelBundle, images: np.ndarray) -> np.ndarray:
    """(n, 32, 32) -> (n, feature_dim) through the frozen extractor."""
    if not bundle.pretrained:
        raise StateError("encode requires a pretrained bundle")
    return bundle.encoder.forward_np(_flatten(images))


def encode(bundle: ModelBundle, image: np.ndarray) -> np.ndarray:
    return encode_batch(bundle, image)[0]


def decode_batch(bundle: ModelBundle, features: np.ndarray) -> np.ndarray:
    if not bundle.pretrained:
        raise StateError("decode requires a pretrained bundle")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != bundle.feature_dim:
        raise ValueError(f"expected {bundle.feature_dim}-dim features, got {features.shape[1]}")
    return bundle.decoder.forward_np(features)


def decode(bundle: ModelBundle, feature: np.ndarray) -> np.ndarray:
    return decode_batch(bundle, feature)[0]


def predict_full(bundle: ModelBundle, images: np.ndarray) -> np.ndarray:
    """Monolithic classifier: argmax of decode(encode(x)) per image."""
    return decode_batch(bundle, encode_batch(bundle, images)).argmax(axis=1)


def accuracy(bundle: ModelBundle, samples: Sequence[Sample]) -> float:
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples])
    return float((predict_full(bundle, images) == labels).mean())


def occluded_accuracy(bundle: ModelBundle, samples: Sequence[Sample],
                      scale: float, rng: np.random.Generator) -> float:
    """Local accuracy with every input patch-corrupted (the p=1 probe)."""
    images = np.stack([apply_patch(s.image, scale, rng) for s in samples])
    labels = np.array([s.label for s in samples])
    return float((predict_full(bundle, images) == labels).mean())


def pretrain_full_model(train: Sequence[Sample], test: Sequence[Sample],
                        epochs: int, lr: float, rng: np.random.Generator,
                        batch_size: int = 64, target_acc: float = 0.95,
                        log=None) -> ModelBundle:
    """Train decoder(encoder(x)) with cross-entropy on clean images, then freeze.

    Stops at the first epoch whose held-out accuracy reaches target_acc;
    raises TrainingFailure (carrying the best accuracy) if the budget runs out.
    """
    bundle = new_bundle(rng)
    bundle.pretrained = True  # forward helpers usable during training
    images = _flatten(np.stack([s.image for s in train]))
    labels = np.array([s.label for s in train], dtype=np.int64)
    opt = nk.RAdam(bundle.perception_params(), lr=lr)
    best = 0.0
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            idx = order[start:start + batch_size]
            x = nk.Tensor(images[idx])
            logits = bundle.decoder(bundle.encoder(x))
            loss = nk.cross_entropy(logits, labels[idx])
            opt.zero_grads()
            loss.backward()
            opt.step()
        acc = accuracy(bundle, test)
        best = max(best, acc)
        if log:
            log(f"pretrain epoch {epoch + 1}: clean test accuracy {acc:.4f}")
        if acc >= target_acc:
            bundle.freeze_perception()
            return bundle
    raise TrainingFailure(
        f"clean accuracy {best:.4f} below target {target_acc} after {epochs} epochs",
        accuracy=best)


def save_perception(path, bundle: ModelBundle) -> None:
    if not bundle.pretrained:
        raise StateError("refusing to save an unpretrained bundle")
    blocks = {p.name: p.data for p in bundle.perception_params()}
    nk.save_blocks(path, blocks)


def load_perception(path) -> ModelBundle:
    """Rebuild a pretrained, frozen bundle from a checkpoint."""
    blocks = nk.load_blocks(path)
    feature_dim = blocks["encoder.1.w"].shape[1]
    bundle = new_bundle(np.random.default_rng(0), feature_dim=feature_dim)
    for p in bundle.perception_params():
        p.data = blocks[p.name].copy()
    bundle.pretrained = True
    bundle.freeze_perception()
    return bundle
