"""Small reference models used throughout the tests and demos."""

from __future__ import annotations

import numpy as np

from .kernel import RateKernel, is_strongly_connected


def two_state(rate_ab: float = 1.0, rate_ba: float = 1.0) -> RateKernel:
    """States ``a=0``, ``b=1`` flipping at the given rates."""
    return RateKernel(2, {(0, 1): rate_ab, (1, 0): rate_ba}, labels=("a", "b"))


def three_state() -> RateKernel:
    """Path 0 - 1 - 2 with ``L(1, 2) = 2`` and all other rates 1."""
    return RateKernel(3, {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 2.0, (2, 1): 1.0})


def birth_death(n_states: int = 4, up: float = 1.0, down: float = 1.0) -> RateKernel:
    """Nearest-neighbour chain on ``0 .. n_states - 1``."""
    rates = {}
    for x in range(n_states - 1):
        rates[(x, x + 1)] = up
        rates[(x + 1, x)] = down
    return RateKernel(n_states, rates)


def random_kernel(n_states: int, rng: np.random.Generator, density: float = 0.6,
                  low: float = 0.2, high: float = 2.0) -> RateKernel:
    """Random strongly connected kernel.

    A directed ring guarantees strong connectivity; other pairs are
    switched on with probability ``density``.  Rates are uniform in
    ``[low, high]``.
    """
    perm = rng.permutation(n_states)
    rates = {}
    for i in range(n_states):
        x, y = int(perm[i]), int(perm[(i + 1) % n_states])
        if x != y:
            rates[(x, y)] = rng.uniform(low, high)
    for x in range(n_states):
        for y in range(n_states):
            if x != y and (x, y) not in rates and rng.random() < density:
                rates[(x, y)] = rng.uniform(low, high)
    k = RateKernel(n_states, rates)
    assert n_states == 1 or is_strongly_connected(k)
    return k
