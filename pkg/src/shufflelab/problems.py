"""Finite-sum problem families.

A finite-sum problem is f(x) = (1/N) sum_i f_i(x) with exact component
gradients.  Three families ship here:

* signed example: f_i(x) = x^2/2 + s_i * sigma * x in one dimension,
  where s_i = +1 for the first half of the components and -1 for the
  second half.  The global function is x^2/2 regardless of sigma, so all
  heterogeneity lives in the ordering problem.
* band quadratic: f(x) = 0.5*<A x, x> + (lam/2)*||x||^2 with A the
  band-diagonal matrix tridiag(-1, 2, -1), split into two top-level
  components f +/- sigma_top*<1, x>, each of which splits further into m
  low-level components h_{i,j} = f_i +/- sigma_low*<1, x>.
* same-class classification: softmax regression on Gaussian blobs where
  each component is the mean loss over one fixed mini-batch, batched
  either within a single class or across classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream


def power_iteration(H: np.ndarray, tol: float = 1e-12, max_iter: int = 10**5) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    d = H.shape[0]
    v = substream(0, "power-iteration").normal(size=d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = H @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_lam = float(v @ w)
        v = w / norm
        if abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            return new_lam
        lam = new_lam
    return lam


class FiniteSumProblem:
    """Base interface; subclasses provide component evaluators.

    ``value``/``grad`` default to the arithmetic mean over components;
    families with a closed-form global function override them.
    """

    dimension: int
    component_count: int
    smoothness: float
    optimum_value: float | None
    optimum_point: np.ndarray | None

    def component_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return float(
            np.mean([self.component_value(i, x) for i in range(self.component_count)])
        )

    def grad(self, x: np.ndarray) -> np.ndarray:
        return np.mean(
            [self.component_grad(i, x) for i in range(self.component_count)], axis=0
        )

    def at_epoch(self, t: int) -> "FiniteSumProblem":
        # problems whose component composition varies per epoch override this
        return self

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(H, offsets) such that component_grad(i, x) == H @ x + offsets[i],
        or None when the problem is not of that shape."""
        return None


class OffsetQuadratic(FiniteSumProblem):
    """f_i(x) = 0.5*<H x, x> + <offsets[i], x> with mean-zero offsets."""

    def __init__(self, H: np.ndarray, offsets: np.ndarray):
        self._H = np.asarray(H, dtype=float)
        self._offsets = np.asarray(offsets, dtype=float)
        self.dimension = self._H.shape[0]
        self.component_count = self._offsets.shape[0]
        self.smoothness = power_iteration(self._H)
        self.optimum_value = 0.0
        self.optimum_point = np.zeros(self.dimension)

    @property
    def hessian(self) -> np.ndarray:
        return self._H

    def component_value(self, i: int, x: np.ndarray) -> float:
        return float(0.5 * (x @ (self._H @ x)) + self._offsets[i] @ x)

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self._H @ x + self._offsets[i]

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * (x @ (self._H @ x)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self._H @ x

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray]:
        return self._H, self._offsets


class SignedExample(OffsetQuadratic):
    def __init__(self, count: int, sigma: float):
        signs = np.ones(count)
        signs[count // 2:] = -1.0
        super().__init__(np.ones((1, 1)), (signs * sigma)[:, None])
        self.sigma = sigma


def make_signed_example(count: int, sigma: float) -> SignedExample:
    """Components x^2/2 + sigma*x (first half) and x^2/2 - sigma*x (second half)."""
    if count <= 0 or count % 2 != 0:
        raise ValueError(f"component count must be even and positive, got {count}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return SignedExample(count, float(sigma))


class TwoLevelProblem:
    """Two-level finite sum: f = (1/N) sum_i f_i, f_i = (1/m) sum_j h_{i,j}."""

    top_count: int
    low_count: int
    dimension: int
    sigma_top: float
    sigma_low: float

    def low_value(self, i: int, j: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def low_grad(self, i: int, j: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def top_value(self, i: int, x: np.ndarray) -> float:
        return float(np.mean([self.low_value(i, j, x) for j in range(self.low_count)]))

    def top_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return np.mean([self.low_grad(i, j, x) for j in range(self.low_count)], axis=0)

    def flatten(self) -> FiniteSumProblem:
        """All N*m low-level components as one flat problem, id = i*m + j."""
        raise NotImplementedError

    def top_view(self) -> FiniteSumProblem:
        """The N top-level components as a flat problem."""
        raise NotImplementedError

    def at_epoch(self, t: int) -> "TwoLevelProblem":
        return self

    def quadratic_form(self):
        return None


class BandQuadratic(TwoLevelProblem):
    def __init__(self, d: int, lam: float, sigma_top: float, sigma_low: float, m: int):
        A = 2.0 * np.eye(d) - np.eye(d, k=1) - np.eye(d, k=-1)
        self._H = A + lam * np.eye(d)
        self.dimension = d
        self.lam = lam
        self.top_count = 2
        self.low_count = m
        self.sigma_top = sigma_top
        self.sigma_low = sigma_low
        self.smoothness = power_iteration(self._H)
        self.optimum_value = 0.0
        self.optimum_point = np.zeros(d)
        self._ones = np.ones(d)
        # sign conventions: top component 0 carries +sigma_top, component 1
        # carries -sigma_top; low components j < m/2 carry +sigma_low
        self._top_signs = np.array([1.0, -1.0])
        low_signs = np.ones(m)
        low_signs[m // 2:] = -1.0
        self._low_signs = low_signs

    @property
    def hessian(self) -> np.ndarray:
        return self._H

    def _shift(self, i: int, j: int | None) -> float:
        s = self._top_signs[i] * self.sigma_top
        if j is not None:
            s += self._low_signs[j] * self.sigma_low
        return float(s)

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * (x @ (self._H @ x)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self._H @ x

    def low_value(self, i: int, j: int, x: np.ndarray) -> float:
        return self.value(x) + self._shift(i, j) * float(np.sum(x))

    def low_grad(self, i: int, j: int, x: np.ndarray) -> np.ndarray:
        return self._H @ x + self._shift(i, j) * self._ones

    def top_value(self, i: int, x: np.ndarray) -> float:
        return self.value(x) + self._shift(i, None) * float(np.sum(x))

    def top_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self._H @ x + self._shift(i, None) * self._ones

    def flat_shifts(self) -> np.ndarray:
        """Per-flat-component linear shift scalars, index c = i*m + j."""
        return (
            self._top_signs[:, None] * self.sigma_top
            + self._low_signs[None, :] * self.sigma_low
        ).reshape(-1)

    def flatten(self) -> OffsetQuadratic:
        offsets = self.flat_shifts()[:, None] * self._ones[None, :]
        flat = OffsetQuadratic(self._H, offsets)
        # order strategies that respect the grouping need (N, m)
        flat.two_level_shape = (self.top_count, self.low_count)
        return flat

    def top_view(self) -> OffsetQuadratic:
        offsets = (self._top_signs * self.sigma_top)[:, None] * self._ones[None, :]
        return OffsetQuadratic(self._H, offsets)


def make_band_quadratic(
    d: int, lam: float, sigma_top: float, sigma_low: float, m: int
) -> BandQuadratic:
    """Band-diagonal quadratic split into two signed top components, each
    split into m signed low-level components; m must be even so the signs
    balance."""
    if d <= 0:
        raise ValueError("dimension must be positive")
    if m <= 0 or m % 2 != 0:
        raise ValueError(f"low-level count must be even and positive, got {m}")
    if lam < 0 or sigma_top < 0 or sigma_low < 0:
        raise ValueError("lam, sigma_top, sigma_low must be non-negative")
    return BandQuadratic(d, float(lam), float(sigma_top), float(sigma_low), m)


def _softmax_batch_stats(W: np.ndarray, phi: np.ndarray, labels: np.ndarray):
    # stable softmax cross-entropy over one batch; returns (mean loss, mean grad)
    Z = phi @ W.T
    zmax = Z.max(axis=1, keepdims=True)
    expz = np.exp(Z - zmax)
    denom = expz.sum(axis=1, keepdims=True)
    logp = Z - zmax - np.log(denom)
    losses = -logp[np.arange(len(labels)), labels]
    probs = expz / denom
    probs[np.arange(len(labels)), labels] -= 1.0
    grad = probs.T @ phi / len(labels)
    return float(losses.mean()), grad


class SameclassClassification(FiniteSumProblem):
    """Softmax regression where each component is one fixed mini-batch."""

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        classes: int,
        batches: tuple[np.ndarray, ...],
        meta: dict,
    ):
        self._features = features
        self._labels = labels
        self._classes = classes
        self._batches = batches
        self._meta = meta
        self.dimension = classes * features.shape[1]
        self.component_count = len(batches)
        # softmax cross-entropy is (||phi||^2 / 2)-smooth per sample, so the
        # samplewise max bounds every batch mean
        self.smoothness = 0.5 * float((features * features).sum(axis=1).max())
        self.optimum_value = None
        self.optimum_point = None
        self._epoch_cache: tuple[int, "SameclassClassification"] | None = None

    @property
    def batch_point_indices(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(int(k) for k in b) for b in self._batches)

    @property
    def batch_labels(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(int(self._labels[k]) for k in b) for b in self._batches)

    def _weights(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self._classes, self._features.shape[1])

    def component_value(self, i: int, x: np.ndarray) -> float:
        b = self._batches[i]
        loss, _ = _softmax_batch_stats(self._weights(x), self._features[b], self._labels[b])
        return loss

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        b = self._batches[i]
        _, g = _softmax_batch_stats(self._weights(x), self._features[b], self._labels[b])
        return g.reshape(-1)

    def value(self, x: np.ndarray) -> float:
        loss, _ = _softmax_batch_stats(self._weights(x), self._features, self._labels)
        return loss

    def grad(self, x: np.ndarray) -> np.ndarray:
        _, g = _softmax_batch_stats(self._weights(x), self._features, self._labels)
        return g.reshape(-1)

    def at_epoch(self, t: int) -> "SameclassClassification":
        if not self._meta.get("redraw_per_epoch"):
            return self
        if self._epoch_cache is not None and self._epoch_cache[0] == t:
            return self._epoch_cache[1]
        batches = _standard_batches(
            self._meta["seed"], len(self._labels), self._meta["batch_size"], epoch=t
        )
        view = SameclassClassification(
            self._features, self._labels, self._classes, batches,
            dict(self._meta, redraw_per_epoch=False),
        )
        self._epoch_cache = (t, view)
        return view


def _standard_batches(seed: int, total: int, batch_size: int, epoch: int):
    perm = substream(seed, "cross-class-batches", epoch).permutation(total)
    return tuple(perm[k : k + batch_size] for k in range(0, total, batch_size))


def make_sameclass_classification(
    classes: int,
    per_class: int,
    dim: int,
    batch_size: int,
    seed: int,
    separation: float = 4.0,
    batching: str = "sameclass",
    redraw_per_epoch: bool = False,
    label_noise: float = 0.0,
) -> SameclassClassification:
    """Gaussian-blob softmax regression with per-batch components.

    ``batching="sameclass"`` forms batches inside a single label group and
    keeps them fixed; ``batching="standard"`` draws cross-class batches,
    fixed unless ``redraw_per_epoch`` is set.  ``label_noise`` relabels
    that fraction of each class to the next class (balanced, so label
    groups keep size ``per_class``); mislabeled points keep strong
    class-aligned gradients alive even when the blobs are far apart.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if per_class <= 0 or dim <= 0 or batch_size <= 0:
        raise ValueError("per_class, dim, batch_size must be positive")
    if per_class % batch_size != 0:
        raise ValueError(
            f"batch_size {batch_size} must divide per_class {per_class}"
        )
    if batching not in ("sameclass", "standard"):
        raise ValueError(f"unknown batching mode {batching!r}")
    if redraw_per_epoch and batching != "standard":
        raise ValueError("redraw_per_epoch requires standard batching")
    if not 0.0 <= label_noise < 1.0:
        raise ValueError("label_noise must lie in [0, 1)")

    rng = substream(seed, "blob-data")
    means = rng.normal(size=(classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), per_class)
    features = means[labels] + rng.normal(size=(classes * per_class, dim))

    flips = int(round(label_noise * per_class))
    if flips > 0:
        noise_rng = substream(seed, "label-noise")
        for c in range(classes):
            pick = noise_rng.choice(per_class, size=flips, replace=False)
            labels[c * per_class + pick] = (c + 1) % classes

    if batching == "sameclass":
        # group by observed label so every batch is label-homogeneous;
        # balanced flips keep each group at exactly per_class points
        batches = tuple(
            np.flatnonzero(labels == c)[k : k + batch_size]
            for c in range(classes)
            for k in range(0, per_class, batch_size)
        )
    else:
        batches = _standard_batches(seed, classes * per_class, batch_size, epoch=0)

    meta = {"seed": seed, "batch_size": batch_size, "redraw_per_epoch": redraw_per_epoch}
    return SameclassClassification(features, labels, classes, batches, meta)
