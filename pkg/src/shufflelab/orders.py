"""Update-sequence strategies: which component to step on, in what order.

Seven kinds:

* ``rr`` — fresh uniform random permutation every epoch.
* ``ig`` — the identity permutation (or a user-supplied fixed one) every
  epoch.
* ``single_shuffle`` — one random permutation drawn up front and reused.
* ``sgd_replacement`` — n i.i.d. uniform draws per epoch (default n = N so
  an epoch costs the same number of oracle calls as a permutation pass).
* ``greedy`` — queries every component gradient at the epoch-start point
  and picks, step by step, the component whose deviation from the mean
  best cancels the accumulated bias.
* ``two_level_k`` — for a flattened two-level problem: m/K rounds, each a
  fresh top-level permutation, each top visit consuming the next K
  entries of that top's own low-level permutation.
* ``standard_combined`` — one uniform permutation of all N*m pairs.

Randomized strategies draw their orders in blocks of ``BLOCK_EPOCHS``
epochs from one counter-based stream per block (purpose ``"order"``,
index = block number).  Identical (seed, epoch) therefore always yields
the identical order, no matter how many epochs a run executes or in what
batch size the orders were materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import GradientOracle
from .rng import RngStream, substream

BLOCK_EPOCHS = 256

KINDS = (
    "rr",
    "ig",
    "single_shuffle",
    "sgd_replacement",
    "greedy",
    "two_level_k",
    "standard_combined",
)


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    K: int | None = None
    update_every: int = 1
    n: int | None = None
    fixed_permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.K is not None and self.kind != "two_level_k":
            raise ValueError("K is only valid for two_level_k")
        if self.kind == "two_level_k" and (self.K is None or self.K < 1):
            raise ValueError("two_level_k requires K >= 1")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if self.update_every != 1 and self.kind != "greedy":
            raise ValueError("update_every is only valid for greedy")
        if self.n is not None and self.kind != "sgd_replacement":
            raise ValueError("n is only valid for sgd_replacement")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be >= 1")
        if self.fixed_permutation is not None and self.kind != "ig":
            raise ValueError("fixed_permutation is only valid for ig")


def greedy_order(oracle: GradientOracle, x: np.ndarray, stream: RngStream) -> np.ndarray:
    """Pick components one by one, each time minimizing the norm of the
    accumulated deviation from the mean gradient.

    One oracle query per component; queried gradients are not reused by
    the engine afterwards.  Ties go to the lowest component index.
    """
    count = oracle.component_count
    grads = np.stack([oracle.query(i, x, stream.child(i)) for i in range(count)])
    dev = grads - grads.mean(axis=0)
    bias = np.zeros(dev.shape[1])
    remaining = np.ones(count, dtype=bool)
    order = np.empty(count, dtype=np.int64)
    for slot in range(count):
        scores = ((dev + bias) ** 2).sum(axis=1)
        scores[~remaining] = np.inf
        pick = int(np.argmin(scores))
        order[slot] = pick
        remaining[pick] = False
        bias += dev[pick]
    return order


def two_level_k_shuffle(N: int, m: int, K: int, stream: RngStream) -> np.ndarray:
    """One epoch's sequence over the N*m flattened pairs (flat id i*m + j).

    Draws one low-level permutation per top index, then runs m/K rounds,
    each with a fresh top-level permutation; every top visit consumes the
    next K entries of that top's low-level permutation.
    """
    if K < 1 or m % K != 0:
        raise ValueError(f"K={K} must divide m={m}")
    gen = stream.generator()
    r_low = np.stack([gen.permutation(m) for _ in range(N)])
    out = np.empty(N * m, dtype=np.int64)
    used = np.zeros(N, dtype=np.int64)
    pos = 0
    for _round in range(m // K):
        for i in gen.permutation(N):
            out[pos : pos + K] = i * m + r_low[i, used[i] : used[i] + K]
            used[i] += K
            pos += K
    return out


class Strategy:
    """Per-run strategy instance; owns whatever state its kind requires."""

    kind: str
    epoch_length: int
    block_capable: bool

    def order_for_epoch(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def orders_block(self, block_index: int) -> np.ndarray:
        raise NotImplementedError


class _BlockStrategy(Strategy):
    block_capable = True

    def __init__(self, kind: str, seed: int, epoch_length: int, draw):
        self.kind = kind
        self.epoch_length = epoch_length
        self._seed = seed
        self._draw = draw
        self._cache: tuple[int, np.ndarray] | None = None

    def orders_block(self, block_index: int) -> np.ndarray:
        if self._cache is not None and self._cache[0] == block_index:
            return self._cache[1]
        gen = substream(self._seed, "order", block_index)
        block = np.ascontiguousarray(self._draw(gen, BLOCK_EPOCHS), dtype=np.int32)
        self._cache = (block_index, block)
        return block

    def order_for_epoch(self, x: np.ndarray, t: int) -> np.ndarray:
        block_index, slot = divmod(t - 1, BLOCK_EPOCHS)
        return self.orders_block(block_index)[slot]


class _GreedyStrategy(Strategy):
    kind = "greedy"
    block_capable = False

    def __init__(self, oracle: GradientOracle, seed: int, update_every: int):
        self.epoch_length = oracle.component_count
        self._oracle = oracle
        self._seed = seed
        self._every = update_every
        self._cached: np.ndarray | None = None

    def order_for_epoch(self, x: np.ndarray, t: int) -> np.ndarray:
        if self._cached is None or (t - 1) % self._every == 0:
            stream = RngStream(self._seed, "greedy", (t,))
            self._cached = greedy_order(self._oracle, x, stream)
        return self._cached


def _permutation_block(gen, Q, count):
    return gen.permuted(np.tile(np.arange(count), (Q, 1)), axis=1)


def _two_level_block(gen, Q, N, m, K):
    R = m // K
    lows = gen.permuted(np.tile(np.arange(m), (Q * N, 1)), axis=1).reshape(Q, N, m)
    tops = gen.permuted(np.tile(np.arange(N), (Q * R, 1)), axis=1).reshape(Q, R, N)
    e_ix = np.arange(Q)[:, None, None, None]
    i_val = tops[:, :, :, None]  # (Q, R, N, 1)
    pos = (np.arange(R) * K)[None, :, None, None] + np.arange(K)[None, None, None, :]
    low = lows[e_ix, i_val, pos]  # round r consumes lows[i, r*K:(r+1)*K]
    return (i_val * m + low).reshape(Q, N * m)


def make_strategy(
    spec: StrategySpec,
    oracle: GradientOracle,
    seed: int,
    two_level_shape: tuple[int, int] | None = None,
) -> Strategy:
    """Bind a strategy spec to one run (one oracle, one seed)."""
    count = oracle.component_count

    if spec.kind == "greedy":
        return _GreedyStrategy(oracle, seed, spec.update_every)

    if spec.kind == "rr":
        return _BlockStrategy("rr", seed, count, lambda g, Q: _permutation_block(g, Q, count))

    if spec.kind == "standard_combined":
        return _BlockStrategy(
            "standard_combined", seed, count, lambda g, Q: _permutation_block(g, Q, count)
        )

    if spec.kind == "ig":
        if spec.fixed_permutation is not None:
            perm = np.asarray(spec.fixed_permutation)
            if sorted(perm.tolist()) != list(range(count)):
                raise ValueError("fixed_permutation must be a permutation of all components")
        else:
            perm = np.arange(count)
        return _BlockStrategy("ig", seed, count, lambda g, Q: np.tile(perm, (Q, 1)))

    if spec.kind == "single_shuffle":
        perm = substream(seed, "order", 0).permutation(count)
        return _BlockStrategy("single_shuffle", seed, count, lambda g, Q: np.tile(perm, (Q, 1)))

    if spec.kind == "sgd_replacement":
        n = spec.n if spec.n is not None else count
        return _BlockStrategy(
            "sgd_replacement", seed, n, lambda g, Q: g.integers(0, count, size=(Q, n))
        )

    if spec.kind == "two_level_k":
        if two_level_shape is None:
            raise ValueError("two_level_k requires the (N, m) shape of the flattened problem")
        N, m = two_level_shape
        if N * m != count:
            raise ValueError(f"two-level shape {two_level_shape} does not match {count} components")
        if m % spec.K != 0:
            raise ValueError(f"K={spec.K} must divide m={m}")
        K = spec.K
        return _BlockStrategy(
            "two_level_k", seed, count, lambda g, Q: _two_level_block(g, Q, N, m, K)
        )

    raise AssertionError(f"unhandled kind {spec.kind}")
