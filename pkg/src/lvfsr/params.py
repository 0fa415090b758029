"""Named-parameter construction with per-name RNG substreams.

Every parameter draws from a stream keyed by its own name, so inserting or
removing a layer never perturbs the initialization of the others.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .numeric import Rng, Tensor, parameter


class ParamStore:
    """Ordered registry of named leaf tensors (float32)."""

    def __init__(self, seed: int):
        self.rng = Rng(seed)
        self.params: Dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        t = parameter(np.ascontiguousarray(data, dtype=np.float32), name)
        self.params[name] = t
        return t

    def _uniform(self, name: str, shape: Tuple[int, ...], limit: float) -> Tensor:
        draw = self.rng.stream(name).uniform(shape, -limit, limit)
        return self._register(name, draw)

    def conv(self, name: str, cout: int, cin: int, k: int,
             zero: bool = False) -> Tuple[Tensor, Tensor]:
        """3x3/1x1/... conv weight+bias; fan-in scaled uniform unless zeroed."""
        wname, bname = name + ".weight", name + ".bias"
        if zero:
            w = self._register(wname, np.zeros((cout, cin, k, k)))
        else:
            w = self._uniform(wname, (cout, cin, k, k), 1.0 / math.sqrt(cin * k * k))
        b = self._register(bname, np.zeros(cout))
        return w, b

    def linear(self, name: str, dout: int, din: int) -> Tuple[Tensor, Tensor]:
        w = self._uniform(name + ".weight", (dout, din), 1.0 / math.sqrt(din))
        b = self._register(name + ".bias", np.zeros(dout))
        return w, b

    def norm(self, name: str, d: int) -> Tuple[Tensor, Tensor]:
        gamma = self._register(name + ".gamma", np.ones(d))
        beta = self._register(name + ".beta", np.zeros(d))
        return gamma, beta

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())
