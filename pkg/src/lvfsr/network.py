"""End-to-end model: feature extraction, L x (prior fusion -> transformer
pair), reconstruction with sub-pixel upsampling over a bicubic residual.

Variant tags cover the ablation grid: `full`, `model1_no_prior` (no priors,
fusion is the identity), `model2_concat` (concat + 1x1 conv fusion), and
`drop_FS` / `drop_FD` / `drop_EC` / `drop_ED` (one branch removed).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError, FormatError, ShapeError
from .fusion import (AttnProj, BRANCH_ORDER, ConcatFusion, FusionParams,
                     build_concat_fusion, build_fusion_params,
                     concat_fusion_forward, fusion_forward)
from .numeric import (Tensor, add, constant, conv2d, gelu, layer_norm, linear,
                      pixel_shuffle, reshape, scaled_dot_attention,
                      tensor_bytes, tensor_from_bytes, transpose)
from .numeric.tenio import atomic_write
from .params import ParamStore
from .priors import PriorBundle, encode_depth, encode_mask
from .resample import bicubic_resize

VARIANTS = ("full", "model1_no_prior", "model2_concat",
            "drop_FS", "drop_FD", "drop_EC", "drop_ED")

_DROPPED_BRANCH = {"drop_FS": "seg", "drop_FD": "dep",
                   "drop_EC": "cap", "drop_ED": "des"}

CKPT_MAGIC = b"LVCK"
CKPT_VERSION = 1


@dataclass
class NetworkConfig:
    l: int = 3          # fusion/transformer block pairs
    c: int = 32         # feature channels
    heads: int = 4
    r: int = 8          # upscale factor
    d_c: int = 64       # caption embedding width
    d_d: int = 64       # description token width
    k: int = 8          # mask classes
    h: int = 8          # LR extents
    w: int = 8

    def validate(self) -> "NetworkConfig":
        if self.r not in (8, 16):
            raise ConfigError(f"scale must be 8 or 16, got {self.r}")
        if self.c % self.heads:
            raise ConfigError(f"channels {self.c} not divisible by {self.heads} heads")
        for name in ("l", "c", "heads", "d_c", "d_d", "k", "h", "w"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config field '{name}' must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        missing = known - set(d)
        if missing:
            raise ConfigError(f"missing network config keys: {sorted(missing)}")
        return cls(**{k: int(v) for k, v in d.items()}).validate()


@dataclass
class TransformerSub:
    ln1g: Tensor
    ln1b: Tensor
    attn: AttnProj
    ln2g: Tensor
    ln2b: Tensor
    f1w: Tensor
    f1b: Tensor
    f2w: Tensor
    f2b: Tensor


@dataclass
class BlockParams:
    fusion: Optional[object]  # FusionParams | ConcatFusion | None
    subs: Tuple[TransformerSub, TransformerSub]


def _build_sub(store: ParamStore, prefix: str, c: int) -> TransformerSub:
    attn = AttnProj(*store.linear(f"{prefix}.attn.q", c, c),
                    *store.linear(f"{prefix}.attn.k", c, c),
                    *store.linear(f"{prefix}.attn.v", c, c),
                    *store.linear(f"{prefix}.attn.o", c, c))
    return TransformerSub(*store.norm(f"{prefix}.ln1", c), attn,
                          *store.norm(f"{prefix}.ln2", c),
                          *store.linear(f"{prefix}.mlp.fc1", 2 * c, c),
                          *store.linear(f"{prefix}.mlp.fc2", c, 2 * c))


def _sub_forward(x: Tensor, sub: TransformerSub, heads: int) -> Tensor:
    h = layer_norm(x, sub.ln1g, sub.ln1b)
    a = scaled_dot_attention(linear(h, sub.attn.qw, sub.attn.qb),
                             linear(h, sub.attn.kw, sub.attn.kb),
                             linear(h, sub.attn.vw, sub.attn.vb), heads)
    x = add(x, linear(a, sub.attn.ow, sub.attn.ob))
    h2 = layer_norm(x, sub.ln2g, sub.ln2b)
    m = linear(gelu(linear(h2, sub.f1w, sub.f1b)), sub.f2w, sub.f2b)
    return add(x, m)


def basic_block(feat: Tensor, bp: BlockParams, heads: int) -> Tensor:
    """Two cascaded pre-norm transformer sub-blocks over HW tokens."""
    c, h, w = feat.shape
    toks = transpose(reshape(feat, (c, h * w)), (1, 0))
    for sub in bp.subs:
        toks = _sub_forward(toks, sub, heads)
    return reshape(transpose(toks, (1, 0)), (c, h, w))


class Model:
    """A built network: config, variant, and every named parameter."""

    def __init__(self, config: NetworkConfig, variant: str, seed: int):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{variant}', expected one of {VARIANTS}")
        config.validate()
        self.config = config
        self.variant = variant
        self.seed = seed
        store = ParamStore(seed)
        c = config.c

        self.feat_w, self.feat_b = store.conv("feat.conv", c, 3, 3)

        branches = self._branches()
        self.mask_w = self.mask_b = self.depth_w = self.depth_b = None
        if "seg" in branches:
            self.mask_w, self.mask_b = store.conv("mask_enc.conv", c, config.k, 3)
        if "dep" in branches:
            self.depth_w, self.depth_b = store.conv("depth_enc.conv", c, 1, 3)

        self.blocks: List[BlockParams] = []
        for i in range(config.l):
            prefix = f"block{i}"
            if variant == "model1_no_prior":
                fusion = None
            elif variant == "model2_concat":
                fusion = build_concat_fusion(store, f"{prefix}.fusion", c,
                                             config.d_c, config.d_d)
            else:
                fusion = build_fusion_params(store, f"{prefix}.fusion", c,
                                             config.d_c, config.d_d,
                                             config.heads, branches)
            subs = (_build_sub(store, f"{prefix}.body.t0", c),
                    _build_sub(store, f"{prefix}.body.t1", c))
            self.blocks.append(BlockParams(fusion, subs))

        self.recon_w, self.recon_b = store.conv("recon.conv", 3 * config.r ** 2, c, 3)
        self.store = store
        self._residual_cache: Dict[bytes, np.ndarray] = {}

    def _branches(self) -> Tuple[str, ...]:
        if self.variant == "model1_no_prior":
            return ()
        dropped = _DROPPED_BRANCH.get(self.variant)
        return tuple(b for b in BRANCH_ORDER if b != dropped)

    @property
    def params(self) -> Dict[str, Tensor]:
        return self.store.params

    def param_count(self) -> int:
        return self.store.count()

    def _dtype(self):
        return self.feat_w.data.dtype

    def cast(self, dtype) -> None:
        """Switch every parameter to `dtype` in place (float64 for checking)."""
        for p in self.params.values():
            p.data = p.data.astype(dtype)

    def prior_inputs(self, bundle: PriorBundle) -> Dict[str, Tensor]:
        cfg, dt = self.config, self._dtype()
        inputs: Dict[str, Tensor] = {}
        branches = self._branches()
        if "seg" in branches:
            if bundle.mask.k != cfg.k:
                raise DataError(f"bundle mask has {bundle.mask.k} classes, config has {cfg.k}")
            inputs["seg"] = encode_mask(bundle.mask, self.mask_w, self.mask_b)
        if "dep" in branches:
            inputs["dep"] = encode_depth(bundle.depth, self.depth_w, self.depth_b)
        if "cap" in branches:
            if bundle.caption.vector.shape != (cfg.d_c,):
                raise DataError(f"caption width {bundle.caption.vector.shape} != ({cfg.d_c},)")
            inputs["cap"] = constant(bundle.caption.vector.astype(dt))
        if "des" in branches:
            if bundle.description.tokens.shape[1] != cfg.d_d:
                raise DataError(f"token width {bundle.description.tokens.shape[1]} != {cfg.d_d}")
            inputs["des"] = constant(bundle.description.tokens.astype(dt))
        return inputs

    def forward(self, lr_img: np.ndarray, bundle: Optional[PriorBundle]) -> Tensor:
        cfg = self.config
        lr = np.asarray(lr_img)
        if lr.shape != (3, cfg.h, cfg.w):
            raise ShapeError(f"LR image shape {lr.shape} != configured (3, {cfg.h}, {cfg.w})")
        dt = self._dtype()
        if self.variant == "model1_no_prior":
            inputs: Dict[str, Tensor] = {}
        else:
            if bundle is None:
                raise DataError(f"variant '{self.variant}' requires a prior bundle")
            bundle.check_lr_extents(cfg.h, cfg.w)
            inputs = self.prior_inputs(bundle)

        x = conv2d(constant(lr.astype(dt)), self.feat_w, self.feat_b, stride=1, pad=1)
        for bp in self.blocks:
            if isinstance(bp.fusion, FusionParams):
                x = fusion_forward(x, inputs, bp.fusion)
            elif isinstance(bp.fusion, ConcatFusion):
                x = concat_fusion_forward(x, inputs, bp.fusion)
            x = basic_block(x, bp, cfg.heads)
        x = conv2d(x, self.recon_w, self.recon_b, stride=1, pad=1)
        x = pixel_shuffle(x, cfg.r)
        return add(x, constant(self._residual(lr, dt)))

    def _residual(self, lr: np.ndarray, dt) -> np.ndarray:
        """Bicubic-upsampled LR (constant per image); memoized."""
        key = lr.tobytes() + bytes(str(dt), "ascii")
        base = self._residual_cache.get(key)
        if base is None:
            cfg = self.config
            base = bicubic_resize(lr.astype(np.float64),
                                  cfg.h * cfg.r, cfg.w * cfg.r).astype(dt)
            if len(self._residual_cache) >= 64:
                self._residual_cache.clear()
            self._residual_cache[key] = base
        return base


# --- checkpoint serialization ------------------------------------------------

@dataclass
class Checkpoint:
    config: NetworkConfig
    variant: str
    seed: int
    step: int
    params: List[Tuple[str, np.ndarray]]
    opt_m: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: Dict[str, np.ndarray] = field(default_factory=dict)


def checkpoint_of(model: Model, step: int, opt_m: Optional[Dict] = None,
                  opt_v: Optional[Dict] = None) -> Checkpoint:
    params = [(n, p.data.copy()) for n, p in model.params.items()]
    return Checkpoint(model.config, model.variant, model.seed, step, params,
                      dict(opt_m or {}), dict(opt_v or {}))


def _pack_blob(out: List[bytes], blob: bytes) -> None:
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    head = json.dumps({"config": ckpt.config.to_dict(), "variant": ckpt.variant},
                      sort_keys=True, separators=(",", ":")).encode()
    out: List[bytes] = [CKPT_MAGIC, struct.pack("<IQQ", CKPT_VERSION,
                                                ckpt.seed, ckpt.step)]
    _pack_blob(out, head)
    names = [n for n, _ in ckpt.params]
    if len(set(names)) != len(names):
        raise FormatError("duplicate parameter names in checkpoint")
    out.append(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params:
        _pack_blob(out, name.encode())
        _pack_blob(out, tensor_bytes(arr))
    has_opt = bool(ckpt.opt_m)
    out.append(struct.pack("<B", int(has_opt)))
    if has_opt:
        if set(ckpt.opt_m) != set(names) or set(ckpt.opt_v) != set(names):
            raise FormatError("optimizer moments do not cover the parameter set")
        for name, _ in ckpt.params:
            _pack_blob(out, tensor_bytes(ckpt.opt_m[name]))
            _pack_blob(out, tensor_bytes(ckpt.opt_v[name]))
    return b"".join(out)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes, context: str):
        self.buf, self.pos, self.context = buf, 0, context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.context}: truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    rd = _Reader(buf, str(path))
    if rd.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    version, seed, step = struct.unpack("<IQQ", rd.take(20))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        head = json.loads(rd.blob().decode())
        config = NetworkConfig.from_dict(head["config"])
        variant = head["variant"]
    except (ValueError, KeyError) as e:
        raise FormatError(f"{path}: malformed config block: {e}") from None
    if variant not in VARIANTS:
        raise FormatError(f"{path}: unknown variant '{variant}'")
    n = rd.u32()
    params: List[Tuple[str, np.ndarray]] = []
    seen = set()
    for _ in range(n):
        name = rd.blob().decode()
        if name in seen:
            raise FormatError(f"{path}: duplicate parameter '{name}'")
        seen.add(name)
        params.append((name, tensor_from_bytes(rd.blob(), context=f"{path}:{name}")))
    opt_m: Dict[str, np.ndarray] = {}
    opt_v: Dict[str, np.ndarray] = {}
    if struct.unpack("<B", rd.take(1))[0]:
        for name, _ in params:
            opt_m[name] = tensor_from_bytes(rd.blob(), context=f"{path}:m:{name}")
            opt_v[name] = tensor_from_bytes(rd.blob(), context=f"{path}:v:{name}")
    if rd.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - rd.pos} trailing bytes")
    return Checkpoint(config, variant, seed, step, params, opt_m, opt_v)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    model = Model(ckpt.config, ckpt.variant, ckpt.seed)
    names = list(model.params)
    saved = [n for n, _ in ckpt.params]
    if names != saved:
        raise FormatError("checkpoint parameter names do not match the architecture")
    for name, arr in ckpt.params:
        p = model.params[name]
        if p.data.shape != arr.shape:
            raise FormatError(f"parameter '{name}' shape {arr.shape} != {p.data.shape}")
        p.data = arr.astype(np.float32)
    return model
