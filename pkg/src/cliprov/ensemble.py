"""Six unsupervised outlier detectors and majority voting over InfoPaths.

Each detector turns the feature matrix into one anomaly score per row
(higher is more anomalous) and flags the ``ceil(C * n)`` highest scores.
Because flagging is a top-m cut of a score that does not depend on ``C``,
raising the contamination can only add flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .infopath import InfoPath

DETECTORS = (
    "isolation_forest",
    "local_outlier_factor",
    "hypersphere",
    "mahalanobis_envelope",
    "kmeans_distance",
    "gaussian_mixture",
)
VOTE_THRESHOLD = 4
MIN_CLUSTER = 2


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    contamination: float = 0.5
    neighbors: int = 300
    seed: int = 0
    trees: int = 100
    k: Optional[int] = None
    iterations: int = 50
    ridge: float = 1e-3

    def __post_init__(self):
        if not 0 < self.contamination <= 0.5:
            raise ValueError("contamination must be in (0, 0.5]")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.trees < 1:
            raise ValueError("trees must be >= 1")

    def n_clusters(self, n: int) -> int:
        k = self.k if self.k is not None else max(2, math.ceil(math.sqrt(n)))
        return max(1, min(k, n))


@dataclass
class Verdict:
    per_detector: dict[str, set]
    votes: dict
    anomalous: set

    def to_dict(self) -> dict:
        return {
            "per_detector": {d: sorted(map(str, s)) for d, s in self.per_detector.items()},
            "votes": {str(k): v for k, v in sorted(self.votes.items(), key=lambda kv: str(kv[0]))},
            "anomalous": sorted(map(str, self.anomalous)),
        }


# -- features ---------------------------------------------------------------


def _minmax_col(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5, dtype=float)
    return (x - lo) / (hi - lo)


def path_cmdlines(path: InfoPath, graph) -> list[str]:
    return [c for n in path.nodes for c in graph.nodes[n].cmdlines if c]


def featurize_paths(
    paths: Sequence[InfoPath],
    vectors: Mapping[str, np.ndarray],
    graph=None,
    cmdlines: Optional[Sequence[Sequence[str]]] = None,
    dim: Optional[int] = None,
) -> np.ndarray:
    """One row per path: mean command vector followed by three scaled path scalars.

    The scalars are effective length, diversity and node count, each
    min-max scaled across the paths. Command-lines are read from ``graph``
    unless given explicitly per path in ``cmdlines``.
    """
    if dim is None:
        dim = len(next(iter(vectors.values()))) if vectors else 0
    n = len(paths)
    emb = np.zeros((n, dim))
    for i, p in enumerate(paths):
        cmds = cmdlines[i] if cmdlines is not None else path_cmdlines(p, graph)
        vs = [vectors[c] for c in cmds if c in vectors]
        if vs:
            emb[i] = np.mean(vs, axis=0)
    if n == 0:
        return np.zeros((0, dim + 3))
    scalars = np.array([[p.effective_length, p.diversity, len(p.nodes)] for p in paths], dtype=float)
    scaled = np.column_stack([_minmax_col(scalars[:, j]) for j in range(3)])
    return np.hstack([emb, scaled])


# -- detectors ----------------------------------------------------------------


def _harmonic_c(n: int) -> float:
    """Average unsuccessful-search path length in a binary search tree of n items."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + np.euler_gamma) - 2.0 * (n - 1) / n


def _grow_tree(X: np.ndarray, idx: np.ndarray, depth: int, limit: int, rng) -> tuple:
    if depth >= limit or len(idx) <= 1:
        return ("leaf", len(idx))
    sub = X[idx]
    lo, hi = sub.min(axis=0), sub.max(axis=0)
    spread = np.flatnonzero(hi > lo)
    if spread.size == 0:
        return ("leaf", len(idx))
    f = int(spread[rng.integers(spread.size)])
    split = rng.uniform(lo[f], hi[f])
    left = idx[sub[:, f] < split]
    right = idx[sub[:, f] >= split]
    return ("node", f, split, _grow_tree(X, left, depth + 1, limit, rng), _grow_tree(X, right, depth + 1, limit, rng))


def _tree_depths(tree: tuple, X: np.ndarray, idx: np.ndarray, depth: int, out: np.ndarray) -> None:
    if not idx.size:
        return
    if tree[0] == "leaf":
        out[idx] = depth + _harmonic_c(tree[1])
        return
    _, f, split, left, right = tree
    mask = X[idx, f] < split
    _tree_depths(left, X, idx[mask], depth + 1, out)
    _tree_depths(right, X, idx[~mask], depth + 1, out)


def isolation_forest_scores(X: np.ndarray, trees: int = 100, seed: int = 0, max_samples: int = 256) -> np.ndarray:
    n = len(X)
    psi = min(max_samples, n)
    limit = math.ceil(math.log2(max(psi, 2)))
    rng = np.random.default_rng(seed)
    total = np.zeros(n)
    depth = np.empty(n)
    everyone = np.arange(n)
    for _ in range(trees):
        sample = rng.choice(n, size=psi, replace=False)
        tree = _grow_tree(X, sample, 0, limit, rng)
        _tree_depths(tree, X, everyone, 0, depth)
        total += depth
    cn = _harmonic_c(psi)
    return 2.0 ** (-(total / trees) / cn) if cn > 0 else np.full(n, 0.5)


def _pairwise(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return d


def lof_scores(X: np.ndarray, k: int) -> np.ndarray:
    n = len(X)
    k = max(1, min(k, n - 1))
    d = _pairwise(X)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.arange(n)[:, None]
    kdist = d[rows, nbrs][:, -1]
    reach = np.maximum(d[rows, nbrs], kdist[nbrs])
    lrd = 1.0 / (reach.mean(axis=1) + 1e-10)
    return lrd[nbrs].mean(axis=1) / lrd


def hypersphere_scores(X: np.ndarray) -> np.ndarray:
    return np.linalg.norm(X - np.median(X, axis=0), axis=1)


def mahalanobis_scores(X: np.ndarray, ridge: float = 1e-3) -> np.ndarray:
    mu = X.mean(axis=0)
    diff = X - mu
    cov = diff.T @ diff / len(X) + ridge * np.eye(X.shape[1])
    sol = np.linalg.solve(cov, diff.T).T
    return np.sqrt(np.maximum((diff * sol).sum(axis=1), 0.0))


def _kmeanspp(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, ((X - centers[-1]) ** 2).sum(axis=1))
    return np.array(centers)


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.maximum((X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * X @ C.T, 0.0)


def kmeans(X: np.ndarray, k: int, seed: int = 0, iterations: int = 50) -> np.ndarray:
    """Lloyd's algorithm from a k-means++ start; returns the centroids."""
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    for _ in range(iterations):
        lab = _sqdist(X, C).argmin(axis=1)
        new = np.array([X[lab == j].mean(axis=0) if np.any(lab == j) else C[j] for j in range(len(C))])
        if np.allclose(new, C):
            C = new
            break
        C = new
    return C


def _prune_small(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Drop centroids owning fewer than MIN_CLUSTER rows (keep at least one)."""
    lab = _sqdist(X, C).argmin(axis=1)
    sizes = np.bincount(lab, minlength=len(C))
    keep = sizes >= MIN_CLUSTER
    if not keep.any():
        keep[sizes.argmax()] = True
    return C[keep]


def kmeans_scores(X: np.ndarray, k: int, seed: int = 0, iterations: int = 50) -> np.ndarray:
    C = _prune_small(X, kmeans(X, k, seed, iterations))
    return np.sqrt(_sqdist(X, C).min(axis=1))


def gmm_scores(X: np.ndarray, k: int, seed: int = 0, iterations: int = 50, reg: float = 1e-6) -> np.ndarray:
    """Negative log-likelihood under a diagonal Gaussian mixture fit by EM.

    Components are seeded from k-means; any component whose soft count drops
    below MIN_CLUSTER rows is removed so a lone point cannot claim its own
    zero-variance component.
    """
    n, dim = X.shape
    means = _prune_small(X, kmeans(X, k, seed, 5))
    var_floor = reg + 1e-3 * X.var(axis=0).mean()
    variances = np.tile(X.var(axis=0) + var_floor, (len(means), 1))
    weights = np.full(len(means), 1.0 / len(means))

    def log_joint(means, variances, weights):
        ll = -0.5 * (
            ((X[:, None, :] - means[None]) ** 2 / variances[None]).sum(-1)
            + np.log(2 * np.pi * variances).sum(-1)[None]
        )
        return ll + np.log(weights)[None]

    for _ in range(iterations):
        lj = log_joint(means, variances, weights)
        top = lj.max(axis=1, keepdims=True)
        resp = np.exp(lj - top)
        resp /= resp.sum(axis=1, keepdims=True)
        nk = resp.sum(axis=0)
        keep = nk >= MIN_CLUSTER
        if not keep.any():
            keep[nk.argmax()] = True
        resp, nk = resp[:, keep], nk[keep]
        means = resp.T @ X / nk[:, None]
        variances = resp.T @ (X * X) / nk[:, None] - means ** 2
        variances = np.maximum(variances, 0.0) + var_floor
        weights = nk / n
    lj = log_joint(means, variances, weights)
    top = lj.max(axis=1)
    return -(top + np.log(np.exp(lj - top[:, None]).sum(axis=1)))


def score_matrix(X: np.ndarray, cfg: DetectorConfig) -> dict[str, np.ndarray]:
    """Raw anomaly score per detector (rows in the given order)."""
    n = len(X)
    k = cfg.n_clusters(n)
    return {
        "isolation_forest": isolation_forest_scores(X, cfg.trees, cfg.seed),
        "local_outlier_factor": lof_scores(X, min(cfg.neighbors, n - 1)),
        "hypersphere": hypersphere_scores(X),
        "mahalanobis_envelope": mahalanobis_scores(X, cfg.ridge),
        "kmeans_distance": kmeans_scores(X, k, cfg.seed, cfg.iterations),
        "gaussian_mixture": gmm_scores(X, k, cfg.seed, cfg.iterations),
    }


def _id_key(i) -> tuple:
    return (0, i, "") if isinstance(i, (int, np.integer)) else (1, 0, str(i))


def _canonical_order(X: np.ndarray, ids: Sequence) -> np.ndarray:
    keys = [tuple(row) + (_id_key(i),) for row, i in zip(X.tolist(), ids)]
    return np.array(sorted(range(len(X)), key=lambda r: keys[r]), dtype=int)


def run_detectors(
    X: np.ndarray,
    cfg: DetectorConfig = DetectorConfig(),
    ids: Optional[Sequence] = None,
) -> dict[str, set]:
    """Flag the top ``ceil(C * n)`` rows under each of the six detectors.

    Rows are fitted in a canonical (value-sorted) order so results do not
    depend on how the caller ordered them. Equal scores are broken by item
    id; ``ids`` defaults to the row index.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 2:
        raise TooFewSamples("detectors need at least two rows")
    ids = list(range(n)) if ids is None else list(ids)
    order = _canonical_order(X, ids)
    Xc = X[order]
    m = math.ceil(cfg.contamination * n)
    flags: dict[str, set] = {}
    for name, scores in score_matrix(Xc, cfg).items():
        # round away float noise so equal rows tie exactly
        s = np.round(scores, 10)
        ranked = sorted(range(n), key=lambda r: (-s[r], _id_key(ids[order[r]])))
        flags[name] = {ids[order[r]] for r in ranked[:m]}
    return flags


def vote(per_detector: Mapping[str, set], items: Optional[Sequence] = None) -> Verdict:
    """Count detector flags per item; four or more of six marks it anomalous."""
    if len(per_detector) != len(DETECTORS):
        raise ValueError(f"expected {len(DETECTORS)} detector outputs, got {len(per_detector)}")
    votes: dict = {i: 0 for i in (items or [])}
    for flagged in per_detector.values():
        for i in flagged:
            votes[i] = votes.get(i, 0) + 1
    anomalous = {i for i, v in votes.items() if v >= VOTE_THRESHOLD}
    return Verdict(per_detector={d: set(s) for d, s in per_detector.items()}, votes=votes, anomalous=anomalous)
