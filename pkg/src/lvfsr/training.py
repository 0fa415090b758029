"""Training loop: on-the-fly bicubic degradation, L1 objective, Adam.

Shuffling is a pure function of (seed, epoch), so a resumed run replays the
exact batch order of an uninterrupted one. The loss log carries only
(step, loss) and is byte-reproducible; wall-clock timings go to a separate
sidecar file that makes no determinism promise.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .network import (Checkpoint, Model, NetworkConfig, checkpoint_of,
                      load_checkpoint, model_from_checkpoint, save_checkpoint)
from .numeric import (AdamHyper, AdamState, Rng, Tensor, adam_step, add,
                      backward, constant, mean_abs, scale, sub, zero_grads)
from .priors import PriorBundle, load_prior_bundle, read_ppm
from .resample import bicubic_resize

__all__ = ["TrainConfig", "bicubic_resize", "l1_loss", "train_step",
           "run_training", "load_dataset", "Dataset", "load_train_config"]


@dataclass
class NetworkFields:
    l: int = 3
    c: int = 32
    heads: int = 4
    d_c: int = 64
    d_d: int = 64
    k: int = 8


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    epochs: int = 30
    batch: int = 4
    scale: int = 8
    seed: int = 0
    checkpoint_interval: int = 100
    data_root: str = "data"
    variant: str = "full"
    network: NetworkFields = field(default_factory=NetworkFields)

    def validate(self) -> "TrainConfig":
        for name in ("lr", "beta1", "beta2", "eps", "epochs", "batch",
                     "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field '{name}' must be positive")
        if self.scale not in (8, 16):
            raise ConfigError(f"scale must be 8 or 16, got {self.scale}")
        return self

    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)


def _from_fields(cls, d: dict, context: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    return d


def load_train_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return train_config_from_dict(raw, context=str(path))


def train_config_from_dict(raw: dict, context: str = "config") -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{context}: top level must be an object")
    d = dict(_from_fields(TrainConfig, raw, context))
    net_raw = d.pop("network", {})
    if not isinstance(net_raw, dict):
        raise ConfigError(f"{context}: 'network' must be an object")
    net = NetworkFields(**_from_fields(NetworkFields, net_raw, f"{context}.network"))
    return TrainConfig(network=net, **d).validate()


def network_config_for(cfg: TrainConfig, lr_h: int, lr_w: int) -> NetworkConfig:
    n = cfg.network
    return NetworkConfig(l=n.l, c=n.c, heads=n.heads, r=cfg.scale, d_c=n.d_c,
                         d_d=n.d_d, k=n.k, h=lr_h, w=lr_w).validate()


# --- data -------------------------------------------------------------------

@dataclass
class Dataset:
    ids: List[str]
    hr: Dict[str, np.ndarray]
    bundles: Dict[str, PriorBundle]


def read_manifest(data_root, split: str) -> List[str]:
    path = os.path.join(os.fspath(data_root), f"{split}.txt")
    if not os.path.exists(path):
        raise DataError(f"missing split manifest: {path}")
    with open(path) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if not ids:
        raise DataError(f"empty split manifest: {path}")
    return ids


def load_dataset(data_root, split: str, k: int = 8,
                 with_priors: bool = True) -> Dataset:
    root = os.fspath(data_root)
    ids = read_manifest(root, split)
    hr: Dict[str, np.ndarray] = {}
    bundles: Dict[str, PriorBundle] = {}
    shape = None
    for image_id in ids:
        img = read_ppm(os.path.join(root, "hr", split, f"{image_id}.ppm"))
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"HR image '{image_id}' has extents {img.shape}, "
                            f"dataset uses {shape}")
        hr[image_id] = img
        if with_priors:
            bundles[image_id] = load_prior_bundle(
                os.path.join(root, "priors", split), image_id, k=k)
    return Dataset(ids, hr, bundles)


# --- loss and step ----------------------------------------------------------

def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss extents differ: {pred.shape} vs {target.shape}")
    return mean_abs(sub(pred, target))


def degrade(hr: np.ndarray, r: int) -> np.ndarray:
    c, h, w = hr.shape
    if h % r or w % r:
        raise DataError(f"scale {r} does not divide HR extents {(h, w)}")
    return bicubic_resize(hr, h // r, w // r)


def train_step(model: Model, batch: Sequence[Tuple[np.ndarray, Optional[PriorBundle]]],
               state: AdamState, hyper: AdamHyper, step: int) -> float:
    """Degrade, forward, average per-image L1, backprop, Adam. 1-based step."""
    r = model.config.r
    dt = model.params[next(iter(model.params))].data.dtype
    losses = []
    for hr, bundle in batch:
        lr_img = degrade(hr, r)
        out = model.forward(lr_img, bundle)
        losses.append(l1_loss(out, constant(hr.astype(dt))))
    total = losses[0]
    for li in losses[1:]:
        total = add(total, li)
    loss = scale(total, 1.0 / len(losses))
    zero_grads(model.params)
    grads = backward(loss)
    adam_step(model.params, grads, state, hyper, step)
    return float(loss.data)


# --- loop ---------------------------------------------------------------

def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle for one epoch; depends on nothing but (seed, epoch, n)."""
    return Rng(seed).stream(f"epoch{epoch}").permutation(n)


def run_training(cfg: TrainConfig, out_dir, resume: Optional[str] = None,
                 data_root: Optional[str] = None,
                 max_steps: Optional[int] = None) -> Checkpoint:
    """Train per config; returns the final checkpoint (also written to disk).

    Files under `out_dir`: loss.log (step<TAB>loss, append-only,
    byte-reproducible), timing.log (wall seconds, not reproducible),
    ckpt_<step>.lvck at every checkpoint interval, ckpt_final.lvck at the end.
    """
    cfg.validate()
    root = data_root or cfg.data_root
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)

    data = load_dataset(root, "train", k=cfg.network.k,
                        with_priors=cfg.variant != "model1_no_prior")
    n = len(data.ids)
    if n < cfg.batch:
        raise DataError(f"dataset has {n} images, batch needs {cfg.batch}")
    spe = n // cfg.batch  # drop-last
    total_steps = cfg.epochs * spe
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)

    hr0 = data.hr[data.ids[0]]
    net_cfg = network_config_for(cfg, hr0.shape[1] // cfg.scale,
                                 hr0.shape[2] // cfg.scale)

    state = AdamState()
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config.to_dict() != net_cfg.to_dict():
            raise ConfigError(f"resume refused: checkpoint config {ckpt.config.to_dict()} "
                              f"!= run config {net_cfg.to_dict()}")
        if ckpt.variant != cfg.variant:
            raise ConfigError(f"resume refused: checkpoint variant '{ckpt.variant}' "
                              f"!= run variant '{cfg.variant}'")
        model = model_from_checkpoint(ckpt)
        state.m = {k: v.copy() for k, v in ckpt.opt_m.items()}
        state.v = {k: v.copy() for k, v in ckpt.opt_v.items()}
        start_step = ckpt.step
    else:
        model = Model(net_cfg, cfg.variant, cfg.seed)
        start_step = 0

    hyper = cfg.hyper()
    loss_log = open(os.path.join(out, "loss.log"), "a")
    time_log = open(os.path.join(out, "timing.log"), "a")
    final = None
    try:
        step = start_step
        first_epoch = start_step // spe
        last_epoch = (total_steps + spe - 1) // spe
        for epoch in range(first_epoch, last_epoch):
            order = epoch_order(cfg.seed, epoch, n)
            start_batch = (step - epoch * spe) if epoch == first_epoch else 0
            for b in range(start_batch, spe):
                if step >= total_steps:
                    break
                picked = order[b * cfg.batch:(b + 1) * cfg.batch]
                batch = [(data.hr[data.ids[i]],
                          data.bundles.get(data.ids[i])) for i in picked]
                t0 = time.monotonic()
                step += 1
                loss = train_step(model, batch, state, hyper, step)
                loss_log.write(f"{step}\t{loss!r}\n")
                time_log.write(f"{step}\t{time.monotonic() - t0:.6f}\n")
                if step % cfg.checkpoint_interval == 0 and step < total_steps:
                    save_checkpoint(os.path.join(out, f"ckpt_{step:06d}.lvck"),
                                    checkpoint_of(model, step, state.m, state.v))
        loss_log.flush()
        final = checkpoint_of(model, step, state.m, state.v)
        save_checkpoint(os.path.join(out, "ckpt_final.lvck"), final)
    finally:
        loss_log.close()
        time_log.close()
    return final
