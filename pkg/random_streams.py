# random_streams.py
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import special

from schemes import IncrementBundle, sample_V

_U_MIN = np.finfo(float).tiny


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one path block; keyed by (seed, block) only."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def normals(gen: np.random.Generator, shape) -> np.ndarray:
    """Standard normals by inverse CDF of the stream's uniforms."""
    u = gen.random(shape)
    return special.ndtri(np.clip(u, _U_MIN, 1.0 - 2.0 ** -53))


class BlockStream:
    """
    Per-step increments for one block of paths. Each step draws the Gaussian
    block first, then V. The full block is always drawn so that the stream
    does not depend on how many of its paths are used.
    """

    def __init__(self, seed: int, block: int, block_size: int, n_drivers: int,
                 antithetic: bool = False, with_V: bool = False):
        if antithetic and block_size % 2:
            raise ValueError("antithetic blocks need an even block size")
        self.seed = seed
        self.block = block
        self.block_size = block_size
        self.n_drivers = n_drivers
        self.antithetic = antithetic
        self.with_V = with_V
        self._gen = block_generator(seed, block)

    def next(self, dt: float, n: Optional[int] = None) -> IncrementBundle:
        bs, m = self.block_size, self.n_drivers
        root_dt = math.sqrt(dt)
        if self.antithetic:
            z = normals(self._gen, (m, bs // 2)) * root_dt
            dW = np.empty((m, bs))
            dW[:, 0::2] = z
            dW[:, 1::2] = -z
        else:
            dW = normals(self._gen, (m, bs)) * root_dt
        V = sample_V(m, dt, self._gen, bs) if self.with_V else None
        if n is not None and n < bs:
            dW = dW[:, :n]
            V = V[:, :, :n] if V is not None else None
        return IncrementBundle(dW, V)
