"""Trimmed k-means: objective, concentration step, and multi-start driver.

The model scores each point by its best component log-density under a
shared spherical scale; a fraction alpha of the worst-scoring points is
excluded from the objective and the mean updates. Each iteration retains
the best-scoring points, splits them by nearest mean, and recenters. The
multi-start driver repeats from random initializations and keeps the
restart with the largest objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import coef_values
from .mixtures import MeanModel, _sq_distances, kmeans_allocate


@dataclass(frozen=True)
class TrimSpec:
    """Trim fraction alpha in [0, 1); floor(n * (1 - alpha)) points are kept."""

    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")

    def retained_count(self, n: int) -> int:
        x = n * (1.0 - self.alpha)
        # snap float dust (e.g. n * (1 - 0.9)) back to the intended integer
        nearest = round(x)
        if abs(x - nearest) <= 1e-9 * max(1.0, abs(x)):
            return int(nearest)
        return int(math.floor(x))


@dataclass
class TclustState:
    """One iterate: updated means, retained set, split, and objective."""

    iteration: int
    means: np.ndarray            # (k, d) means after the update
    retained_idx: np.ndarray     # (h,) ascending point indices kept
    retained_labels: np.ndarray  # (h,) 1-based cluster of each retained point
    objective: float             # tclust_objective at the updated means


@dataclass
class ClusterFit:
    """Final fitted model with per-point labels and trim flags.

    `labels[i]` is the nearest-mean cluster (1-based) of every point,
    including the points that were trimmed while fitting; `trimmed[i]`
    records whether point i was excluded from the final objective.
    """

    model: MeanModel
    labels: np.ndarray
    trimmed: np.ndarray
    objective: float
    iterations: int
    restart_index: int

    @property
    def k(self) -> int:
        return self.model.k


def _log_score_const(model: MeanModel) -> float:
    return -math.log(model.k) - 0.5 * model.d * math.log(2.0 * math.pi * model.scale)


def component_log_score(u: np.ndarray, model: MeanModel, c: int) -> float:
    """log of (1/k) N(u; mu_c, scale * I) for the 1-based component c."""
    if not 1 <= c <= model.k:
        raise ValueError(f"component {c} outside 1..{model.k}")
    diff = np.asarray(u, dtype=float) - model.means[c - 1]
    return _log_score_const(model) - float(diff @ diff) / (2.0 * model.scale)


def _best_scores(U: np.ndarray, model: MeanModel):
    """Per-point best log-score and its achieving 1-based component."""
    d2 = _sq_distances(U, model.means)
    labels = np.argmin(d2, axis=1)
    best = _log_score_const(model) - d2[np.arange(U.shape[0]), labels] / (2.0 * model.scale)
    return best, labels + 1


def _retain(scores: np.ndarray, h: int) -> np.ndarray:
    """Indices of the h largest scores; boundary ties toward lower index."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:h])


def tclust_objective(U, model: MeanModel, trim: TrimSpec) -> float:
    """Average best-component log-score over the retained points.

    The floor(n * (1 - alpha)) points with the largest best-component
    scores contribute; the rest contribute zero. The average is over all
    n points.
    """
    U = coef_values(U)
    n = U.shape[0]
    h = trim.retained_count(n)
    if h < 1:
        raise ValueError("trim level leaves no points")
    scores, _ = _best_scores(U, model)
    kept = _retain(scores, h)
    return float(np.sum(scores[kept])) / n


def tclust_step(U, model: MeanModel, trim: TrimSpec) -> tuple[MeanModel, TclustState]:
    """One concentration step: retain, split by nearest mean, recenter.

    Clusters left empty by the split are re-seeded at the worst-scoring
    retained points (successively, in cluster order), which keeps the
    update deterministic.
    """
    U = coef_values(U)
    n, d = U.shape
    h = trim.retained_count(n)
    if h < model.k:
        raise ValueError("retained count is smaller than the cluster count")

    scores, labels_all = _best_scores(U, model)
    kept = _retain(scores, h)
    kept_labels = labels_all[kept]

    new_means = np.empty_like(model.means)
    empty = []
    for c in range(model.k):
        members = kept[kept_labels == c + 1]
        if members.size == 0:
            empty.append(c)
        else:
            new_means[c] = U[members].mean(axis=0)
    if empty:
        worst_first = kept[np.argsort(scores[kept], kind="stable")]
        for slot, c in enumerate(empty):
            new_means[c] = U[worst_first[slot % h]]

    updated = MeanModel(new_means, model.scale, model.alpha)
    state = TclustState(
        iteration=0,
        means=updated.means,
        retained_idx=kept,
        retained_labels=kept_labels,
        objective=tclust_objective(U, updated, trim),
    )
    return updated, state


def _classify(U: np.ndarray, model: MeanModel, h: int):
    """Final pass: labels for every point, trim flags, and the objective."""
    n = U.shape[0]
    scores, labels = _best_scores(U, model)
    kept = _retain(scores, h)
    trimmed = np.ones(n, dtype=bool)
    trimmed[kept] = False
    objective = float(np.sum(scores[kept])) / n
    return labels, trimmed, objective, kept


def trimmed_kmeans(U, k: int, trim: TrimSpec, restarts: int = 20,
                   max_iter: int = 20, seed: int = 0,
                   init_means: np.ndarray | None = None,
                   scale: float = 1.0) -> ClusterFit:
    """Multi-start trimmed k-means.

    Each restart starts from k distinct points drawn uniformly from U
    (stream derived from (seed, restart index)) and iterates the
    concentration step until the retained set and all assignments repeat,
    or `max_iter` is reached. The restart with the largest final objective
    wins; its means are returned in lexicographic order with labels
    remapped to match.

    `init_means` replaces the random initialization (restarts is then
    forced to 1), which is how reference runs reproduce a specific start.
    """
    U = coef_values(U)
    n, d = U.shape
    if n == 0:
        raise ValueError("empty data")
    if k < 1:
        raise ValueError("k must be positive")
    h = trim.retained_count(n)
    if h < k:
        raise ValueError(f"retained count {h} is smaller than k={k}")
    if restarts < 1:
        raise ValueError("restarts must be positive")
    if init_means is not None:
        restarts = 1

    children = np.random.SeedSequence(seed).spawn(restarts)

    best = None
    for r in range(restarts):
        if init_means is not None:
            means0 = np.atleast_2d(np.asarray(init_means, dtype=float)).copy()
            if means0.shape != (k, d):
                raise ValueError("init_means must be k x d")
        else:
            rng = np.random.default_rng(children[r])
            means0 = U[rng.choice(n, size=k, replace=False)].copy()
        model = MeanModel(means0, scale, trim.alpha)

        prev_kept = None
        prev_labels = None
        iterations = 0
        for _ in range(max_iter):
            model, state = tclust_step(U, model, trim)
            iterations += 1
            if (prev_kept is not None
                    and np.array_equal(state.retained_idx, prev_kept)
                    and np.array_equal(state.retained_labels, prev_labels)):
                break
            prev_kept = state.retained_idx
            prev_labels = state.retained_labels

        labels, trimmed, objective, _ = _classify(U, model, h)
        if best is None or objective > best[0]:
            best = (objective, model, labels, trimmed, iterations, r)

    objective, model, labels, trimmed, iterations, r = best
    final_model, order = model.finalized()
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    labels = relabel[labels - 1] + 1
    return ClusterFit(model=final_model, labels=labels, trimmed=trimmed,
                      objective=objective, iterations=iterations,
                      restart_index=r)


def allocate_all(U, fit: ClusterFit) -> np.ndarray:
    """Nearest-mean labels for every point, trimmed ones included."""
    return kmeans_allocate(coef_values(U), fit.model)
