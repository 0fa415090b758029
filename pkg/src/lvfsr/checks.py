"""Gradient-check targets: individual ops, the fusion block, the full network.

Builders follow the grad_check protocol: given a seed they return named
float64 parameters plus a forward closure. Losses are probe-weighted sums
(linear in the op output), which keeps the objective smooth so central
differences measure the op's own backward rule; kinked reductions get inputs
bounded away from their kinks.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from .fusion import (BRANCH_ORDER, build_fusion_params, cap_attention,
                     dep_attention, des_attention, fusion_forward,
                     seg_attention)
from .network import Model, NetworkConfig, _sub_forward
from .numeric import (Rng, Tensor, add, concat, constant, conv2d, gelu,
                      global_avg_pool, grad_check, layer_norm, linear,
                      mean_abs, mean_all, mul, pixel_shuffle, reshape, scale,
                      scaled_dot_attention, sigmoid, softmax, sub, sum_all,
                      transpose)
from .numeric.tensor import parameter
from .params import ParamStore
from .priors import synth_priors
from .resample import bicubic_resize
from .training import degrade

TOLERANCE = 1e-4

DESK_FUSION = dict(c=8, h=4, w=4, t=2, d_c=16, d_d=16, heads=2)
DESK_NETWORK = NetworkConfig(l=2, c=8, heads=4, r=8, d_c=16, d_d=16, k=4, h=8, w=8)


def _probe(rng: Rng) -> Callable[[Tensor], Tensor]:
    """Probe-weighted mean loss; weights draw once per shape and are reused."""
    cache: Dict[tuple, Tensor] = {}

    def loss(out: Tensor) -> Tensor:
        w = cache.get(out.shape)
        if w is None:
            w = constant(rng.stream("fwd").stream("probe").uniform(
                out.shape, -1.0, 1.0))
            cache[out.shape] = w
        return mean_all(mul(out, w))

    return loss


def _simple(spec: Dict[str, Tuple[tuple, float, float]], fn) -> Callable:
    """Builder factory: draw each named input, probe the op output."""

    def builder(seed: int):
        rr = Rng(seed)
        params = {name: parameter(rr.stream(name).uniform(shape, lo, hi), name)
                  for name, (shape, lo, hi) in spec.items()}
        probe = _probe(Rng(seed))

        def forward():
            return probe(fn(params))

        return params, forward

    return builder


def op_builders() -> List[Tuple[str, Callable]]:
    """One small builder per differentiable operation."""
    u = (-1.0, 1.0)
    pos = (0.5, 1.5)  # bounded away from |x| = 0 kinks
    return [
        ("add", _simple({"a": ((3, 4), *u), "b": ((3, 4), *u)},
                        lambda p: add(p["a"], p["b"]))),
        ("sub", _simple({"a": ((3, 4), *u), "b": ((1, 4), *u)},
                        lambda p: sub(p["a"], p["b"]))),
        ("mul", _simple({"a": ((3, 4), *u), "b": ((3, 1), *u)},
                        lambda p: mul(p["a"], p["b"]))),
        ("scale", _simple({"a": ((4, 3), *u)}, lambda p: scale(p["a"], -1.7))),
        ("linear", _simple({"x": ((5, 6), *u), "w": ((4, 6), *u), "b": ((4,), *u)},
                           lambda p: linear(p["x"], p["w"], p["b"]))),
        ("conv2d", _simple({"x": ((1, 3, 5, 5), *u), "w": ((2, 3, 3, 3), *u),
                            "b": ((2,), *u)},
                           lambda p: conv2d(p["x"], p["w"], p["b"], stride=1, pad=1))),
        ("conv2d_strided", _simple({"x": ((2, 2, 6, 6), *u), "w": ((3, 2, 2, 2), *u),
                                    "b": ((3,), *u)},
                                   lambda p: conv2d(p["x"], p["w"], p["b"],
                                                    stride=2, pad=0))),
        ("layer_norm", _simple({"x": ((3, 6), *u), "g": ((6,), 0.5, 1.5),
                                "be": ((6,), *u)},
                               lambda p: layer_norm(p["x"], p["g"], p["be"]))),
        ("sigmoid", _simple({"x": ((4, 5), -3.0, 3.0)}, lambda p: sigmoid(p["x"]))),
        ("gelu", _simple({"x": ((4, 5), -3.0, 3.0)}, lambda p: gelu(p["x"]))),
        ("softmax", _simple({"x": ((3, 5), -2.0, 2.0)},
                            lambda p: softmax(p["x"], axis=-1))),
        ("attention", _simple({"q": ((3, 8), *u), "k": ((4, 8), *u), "v": ((4, 8), *u)},
                              lambda p: scaled_dot_attention(p["q"], p["k"],
                                                             p["v"], heads=2))),
        ("global_avg_pool", _simple({"x": ((2, 3, 4, 4), *u)},
                                    lambda p: global_avg_pool(p["x"]))),
        ("global_avg_pool_tokens", _simple({"x": ((5, 6), *u)},
                                           lambda p: global_avg_pool(p["x"]))),
        ("pixel_shuffle", _simple({"x": ((1, 8, 3, 3), *u)},
                                  lambda p: pixel_shuffle(p["x"], 2))),
        ("concat", _simple({"a": ((2, 3, 4), *u), "b": ((2, 2, 4), *u)},
                           lambda p: concat([p["a"], p["b"]], axis=1))),
        ("reshape_transpose", _simple({"x": ((3, 4), *u)},
                                      lambda p: transpose(reshape(p["x"], (2, 6)),
                                                          (1, 0)))),
        ("sum", _simple({"x": ((3, 4), *u)}, lambda p: sum_all(p["x"]))),
        ("mean", _simple({"x": ((3, 4), *u)}, lambda p: mean_all(p["x"]))),
        ("mean_abs", _simple({"x": ((3, 4), *pos)}, lambda p: mean_abs(p["x"]))),
    ]


def fusion_builder(seed: int):
    """Full fusion block at desk shapes, every branch live."""
    d = DESK_FUSION
    c, h, w, t = d["c"], d["h"], d["w"], d["t"]
    store = ParamStore(seed)
    fp = build_fusion_params(store, "fusion", c, d["d_c"], d["d_d"], d["heads"])
    rr = Rng(seed)
    # the production block zero-inits the fuse projection; open it here so
    # gradients actually flow through every branch under test
    fp.fuse_w.data = rr.stream("fuse_w").uniform(fp.fuse_w.data.shape, -0.2, 0.2)
    fp.fuse_b.data = rr.stream("fuse_b").uniform(fp.fuse_b.data.shape, -0.2, 0.2)
    params = dict(store.params)
    for name, shape in [("input.feat", (c, h, w)), ("input.seg", (c, h, w)),
                        ("input.dep", (c, h, w)), ("input.cap", (d["d_c"],)),
                        ("input.des", (t, d["d_d"]))]:
        params[name] = parameter(rr.stream(name).uniform(shape, -1.0, 1.0), name)
    probe = _probe(Rng(seed))

    def forward():
        inputs = {"seg": params["input.seg"], "dep": params["input.dep"],
                  "cap": params["input.cap"], "des": params["input.des"]}
        return probe(fusion_forward(params["input.feat"], inputs, fp))

    return params, forward


def network_builder(seed: int):
    """End-to-end desk network: degrade -> forward -> probe loss.

    The forward takes grad_check's `changed` hint and resumes from the deepest
    cached activation the perturbed parameter cannot influence. Caches refresh
    only on unhinted (base-point) calls, and a one-time comparison against the
    plain Model.forward pins the staged evaluation to the real one.
    """
    cfg = DESK_NETWORK
    model = Model(cfg, "full", seed)
    model.cast(np.float64)
    rr = Rng(seed)
    for name, p in model.params.items():
        if name.endswith(".fuse.weight"):
            p.data = rr.stream(name).uniform(p.data.shape, -0.2, 0.2)
    hr_size = cfg.h * cfg.r
    hr = rr.stream("hr").uniform((3, hr_size, hr_size), 0.0, 1.0)
    lr_img = degrade(hr.astype(np.float32), cfg.r)
    bundle = synth_priors(hr, lr_img, seed, informative=True, image_id="check",
                          d_c=cfg.d_c, d_d=cfg.d_d, tokens=2, k=cfg.k)
    probe = _probe(Rng(seed))
    lr64 = lr_img.astype(np.float64)
    residual = constant(bicubic_resize(lr64, hr_size, hr_size))

    # per-block caches: "ent" (x, inputs), "br" branch outputs, "fused", "mid"
    bcache: List[dict] = [{} for _ in range(cfg.l)]
    recon_in: List = [None]

    def classify(name: str) -> Tuple[int, str]:
        if name.startswith("block"):
            blk, rest = name.split(".", 1)
            return int(blk[5:]), rest.split(".")[1]
        if name.startswith("recon."):
            return cfg.l, "recon"
        return -1, "entry"

    def branch_out(bname, x, inputs, fp):
        if bname == "seg":
            return seg_attention(x, inputs["seg"], fp.seg)
        if bname == "dep":
            return dep_attention(x, inputs["dep"], fp.dep)
        if bname == "cap":
            return cap_attention(x, inputs["cap"], fp.cap)
        return des_attention(x, inputs["des"], fp.des)

    def forward(changed=None):
        base = changed is None
        blk_i, part = (-1, "entry") if base else classify(changed)
        if part == "recon":
            x = recon_in[0]
        else:
            if part == "entry":
                inputs = model.prior_inputs(bundle)
                x = conv2d(constant(lr64), model.feat_w, model.feat_b,
                           stride=1, pad=1)
                first = 0
            else:
                x, inputs = bcache[blk_i]["ent"]
                first = blk_i
            hw = cfg.h * cfg.w
            for i in range(first, cfg.l):
                bc = bcache[i]
                bp = model.blocks[i]
                fp = bp.fusion
                if base:
                    bc["ent"] = (x, inputs)
                if i == blk_i and part in ("t0", "t1"):
                    toks = (_sub_forward(bc["tok0"], bp.subs[0], cfg.heads)
                            if part == "t0" else bc["tok1"])
                else:
                    if i == blk_i and part == "fuse":
                        outs = [bc["br"][b] for b in BRANCH_ORDER]
                    elif i == blk_i:
                        outs = [branch_out(b, x, inputs, fp) if b == part
                                else bc["br"][b] for b in BRANCH_ORDER]
                    else:
                        outs = [branch_out(b, x, inputs, fp)
                                for b in BRANCH_ORDER]
                        if base:
                            bc["br"] = dict(zip(BRANCH_ORDER, outs))
                    fused = conv2d(concat(outs + [x], axis=0),
                                   fp.fuse_w, fp.fuse_b, stride=1, pad=0)
                    x = add(x, fused)
                    toks = transpose(reshape(x, (cfg.c, hw)), (1, 0))
                    if base:
                        bc["tok0"] = toks
                    toks = _sub_forward(toks, bp.subs[0], cfg.heads)
                    if base:
                        bc["tok1"] = toks
                toks = _sub_forward(toks, bp.subs[1], cfg.heads)
                x = reshape(transpose(toks, (1, 0)), (cfg.c, cfg.h, cfg.w))
            if base:
                recon_in[0] = x
        y = conv2d(x, model.recon_w, model.recon_b, stride=1, pad=1)
        y = pixel_shuffle(y, cfg.r)
        y = add(y, residual)
        return probe(y)

    ref = probe(model.forward(lr_img, bundle))
    if not np.array_equal(ref.data, forward().data):
        raise RuntimeError("staged forward diverged from Model.forward")
    return model.params, forward


def run_target(target: str, seed: int = 0) -> List[Tuple[str, float]]:
    if target == "op":
        return [(name, grad_check(b, seed=seed)) for name, b in op_builders()]
    if target == "lvpfb":
        return [("lvpfb", grad_check(fusion_builder, seed=seed))]
    if target == "network":
        return [("network", grad_check(network_builder, seed=seed))]
    raise ValueError(f"unknown gradcheck target '{target}'")
