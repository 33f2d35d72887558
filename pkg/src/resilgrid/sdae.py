"""Stacked denoising autoencoder.

Each sub-autoencoder corrupts its input and hidden layer with dropout and
learns to reconstruct the clean input; the k-th one trains on the clean
encoder output of the (k-1)-th. After greedy layerwise pretraining the
encoders are stacked with the decoders in reverse order and the deep
autoencoder is fine-tuned on clean inputs without dropout. The last
encoder layer is linear so embeddings keep full range.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import substream_rng
from .neural import (
    DenseLayer,
    DenseStack,
    DivergenceError,
    TrainConfig,
    backward,
    dropout_mask,
    forward,
    init_dense_stack,
    load_stack,
    mse_loss_grad,
    save_stack,
    sgd_step,
)

SDAE_MANIFEST_VERSION = 1


@dataclass
class SubAutoencoder:
    """One pretrained denoising level: 2-layer stack [encoder, decoder]."""
    stack: DenseStack
    losses: list[float] = field(default_factory=list)

    @property
    def encoder_layer(self) -> DenseLayer:
        return self.stack.layers[0]

    @property
    def decoder_layer(self) -> DenseLayer:
        return self.stack.layers[1]


@dataclass
class SdaeModel:
    encoder: DenseStack
    decoder: DenseStack
    history: dict[str, list[float]]
    config: TrainConfig
    dims: list[int] = field(default_factory=list)

    @property
    def embedding_dim(self) -> int:
        return self.encoder.layers[-1].d_out


def _check_dims(x: np.ndarray, dims: list[int]) -> None:
    if len(dims) < 2:
        raise ValueError("dims chain needs at least input and embedding")
    if x.shape[1] != dims[0]:
        raise ValueError(f"data has {x.shape[1]} columns, dims[0]={dims[0]}")
    if any(d < 1 for d in dims):
        raise ValueError(f"invalid dims chain {dims}")


def _train_reconstruction(stack: DenseStack, data: np.ndarray, cfg: TrainConfig,
                          epochs: int, rng_shuffle, rng_dropout,
                          dropout_rate: float, stage: str) -> list[float]:
    """Minibatch SGD on clean-target reconstruction; returns per-epoch mean
    squared reconstruction error per element.

    The optimization objective is element-mean MSE (squared norm / width):
    with the raw squared-norm loss the gradient scale grows with layer
    width and the stock learning rate cannot be stable for both the 12-wide
    and 2000-wide levels. dropout_rate > 0 corrupts the input of every
    layer; the incomplete final batch is used, not dropped.
    """
    m, width = data.shape
    batch = min(cfg.batch_size, m)
    velocity = None
    losses = []
    for epoch in range(epochs):
        order = rng_shuffle.permutation(m)
        sq_sum = 0.0
        for start in range(0, m, batch):
            idx = order[start:start + batch]
            xb = data[idx]
            if dropout_rate > 0.0:
                masks = [
                    dropout_mask((len(idx), layer.d_in), dropout_rate, rng_dropout)
                    for layer in stack.layers
                ]
            else:
                masks = None
            y, cache = forward(stack, xb, masks)
            diff = y - xb
            batch_sq = float(np.einsum("ij,ij->", diff, diff))
            if not np.isfinite(batch_sq):
                raise DivergenceError(
                    f"{stage}: reconstruction loss became non-finite at epoch "
                    f"{epoch}; lower train.learning_rate (currently "
                    f"{cfg.learning_rate}) or dropout_rate")
            sq_sum += batch_sq
            grads = backward(stack, cache, mse_loss_grad(y, xb) / width)
            velocity = sgd_step(stack, grads, cfg.learning_rate,
                                cfg.momentum, velocity)
        losses.append(sq_sum / (m * width))
    return losses


def pretrain_layerwise(x: np.ndarray, cfg: TrainConfig,
                       dims: list[int]) -> list[SubAutoencoder]:
    """Greedy layerwise pretraining.

    Sub-autoencoder k maps dims[k] -> dims[k+1] -> dims[k]; its encoder is
    ReLU except at the last level, which stays linear. Each level trains on
    the clean embedding produced by the previous level's encoder.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(x, dims)
    n_levels = len(dims) - 1
    subs: list[SubAutoencoder] = []
    current = x
    for k in range(n_levels):
        enc_act = "identity" if k == n_levels - 1 else "relu"
        stack = init_dense_stack([dims[k], dims[k + 1], dims[k]],
                                 [enc_act, "relu"],
                                 substream_rng(cfg.seed, "sdae-init", k))
        losses = _train_reconstruction(
            stack, current, cfg, cfg.epochs,
            substream_rng(cfg.seed, "sdae-shuffle", k),
            substream_rng(cfg.seed, "sdae-dropout", k),
            cfg.dropout_rate, stage=f"pretrain level {k}")
        subs.append(SubAutoencoder(stack, losses))
        enc_only = DenseStack([stack.layers[0]])
        current, _ = forward(enc_only, current)
    return subs


def stack_and_finetune(subs: list[SubAutoencoder], x: np.ndarray,
                       cfg: TrainConfig) -> SdaeModel:
    """Concatenate encoders, append decoders in reverse order, fine-tune on
    clean inputs (no dropout). Sub-autoencoders are left untouched."""
    if not subs:
        raise ValueError("no sub-autoencoders to stack")
    x = np.asarray(x, dtype=float)
    enc_layers = [_copy_layer(sub.encoder_layer) for sub in subs]
    dec_layers = [_copy_layer(sub.decoder_layer) for sub in reversed(subs)]
    deep = DenseStack(enc_layers + dec_layers)
    epochs = cfg.finetune_epochs if cfg.finetune_epochs is not None else cfg.epochs
    finetune_losses = _train_reconstruction(
        deep, x, cfg, epochs,
        substream_rng(cfg.seed, "finetune-shuffle"),
        substream_rng(cfg.seed, "finetune-dropout"),
        0.0, stage="fine-tune")
    n = len(subs)
    encoder = DenseStack(deep.layers[:n])
    decoder = DenseStack(deep.layers[n:])
    history = {"finetune": finetune_losses}
    for k, sub in enumerate(subs):
        history[f"pretrain_{k}"] = list(sub.losses)
    return SdaeModel(encoder, decoder, history, cfg, encoder.dims)


def _copy_layer(layer: DenseLayer) -> DenseLayer:
    return DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation)


def fit_sdae(x: np.ndarray, cfg: TrainConfig, dims: list[int]) -> SdaeModel:
    """Pretrain + stack + fine-tune."""
    subs = pretrain_layerwise(x, cfg, dims)
    return stack_and_finetune(subs, x, cfg)


def encode(model: SdaeModel, x: np.ndarray) -> np.ndarray:
    """Deterministic clean pass through the encoder stack."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.encoder.layers[0].d_in:
        raise ValueError(
            f"expected (m, {model.encoder.layers[0].d_in}) input, got {x.shape}")
    out, _ = forward(model.encoder, x)
    return out


def reconstruct(model: SdaeModel, x: np.ndarray) -> np.ndarray:
    z = encode(model, x)
    out, _ = forward(model.decoder, z)
    return out


# ---------------------------------------------------------------------------
# persistence

def save_sdae(model: SdaeModel, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_stack(model.encoder, os.path.join(directory, "encoder.json"))
    save_stack(model.decoder, os.path.join(directory, "decoder.json"))
    manifest = {
        "manifest_version": SDAE_MANIFEST_VERSION,
        "dims": model.dims,
        "embedding_dim": model.embedding_dim,
        "seed": model.config.seed,
        "epochs": model.config.epochs,
        "finetune_epochs": model.config.finetune_epochs,
        "learning_rate": model.config.learning_rate,
        "batch_size": model.config.batch_size,
        "dropout_rate": model.config.dropout_rate,
        "momentum": model.config.momentum,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    with open(os.path.join(directory, "history.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stage", "epoch", "loss"])
        for stage in sorted(model.history):
            for epoch, loss in enumerate(model.history[stage]):
                writer.writerow([stage, epoch, repr(loss)])


def load_sdae(directory: str) -> SdaeModel:
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("manifest_version") != SDAE_MANIFEST_VERSION:
        raise ValueError("unsupported SDAE manifest version")
    encoder = load_stack(os.path.join(directory, "encoder.json"))
    decoder = load_stack(os.path.join(directory, "decoder.json"))
    history: dict[str, list[float]] = {}
    hist_path = os.path.join(directory, "history.csv")
    if os.path.exists(hist_path):
        with open(hist_path, newline="") as f:
            for row in csv.DictReader(f):
                history.setdefault(row["stage"], []).append(float(row["loss"]))
    cfg = TrainConfig(
        learning_rate=manifest["learning_rate"],
        batch_size=manifest["batch_size"],
        epochs=manifest["epochs"],
        dropout_rate=manifest["dropout_rate"],
        seed=manifest["seed"],
        momentum=manifest.get("momentum", 0.0),
        finetune_epochs=manifest.get("finetune_epochs"),
    )
    return SdaeModel(encoder, decoder, history, cfg, manifest["dims"])
