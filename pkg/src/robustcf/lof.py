"""Local Outlier Factor against a fixed reference set.

Exact Euclidean k-NN by brute force. Neighbour lists are sorted by distance
with ties going to the lower row index. A query that coincides with a
reference row (distance <= 1e-12) does not count itself as a neighbour.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DUPLICATE_TOL = 1e-12
DEFAULT_K = 20
DEFAULT_THRESHOLD = 1.5
_CHUNK = 256


class DuplicatePointsError(ValueError):
    pass


def _distances(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    # direct differences rather than the expanded dot-product form, so ties stay exact
    return np.sqrt(((Q[:, None, :] - P[None, :, :]) ** 2).sum(axis=-1))


def _knn(P: np.ndarray, Q: np.ndarray, k: int, self_rows=None):
    """Indices and distances of the ``k`` nearest rows of ``P`` for each query.

    ``self_rows[i]`` (if given) is a row index to exclude for query ``i``;
    otherwise the first row within ``DUPLICATE_TOL`` of the query is excluded.
    """
    nq = Q.shape[0]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k))
    for start in range(0, nq, _CHUNK):
        stop = min(start + _CHUNK, nq)
        D = _distances(Q[start:stop], P)
        order = np.argsort(D, axis=1, kind="stable")
        for r in range(stop - start):
            row = order[r]
            if self_rows is not None:
                row = row[row != self_rows[start + r]]
            elif D[r, row[0]] <= DUPLICATE_TOL:
                row = row[1:]
            idx[start + r] = row[:k]
            dist[start + r] = D[r, row[:k]]
    return idx, dist


@dataclass(frozen=True, eq=False)
class LofIndex:
    points: np.ndarray
    k: int
    neighbors: np.ndarray  # (n, k) neighbour rows of each reference point
    k_distance: np.ndarray  # distance to the k-th neighbour
    lrd: np.ndarray  # local reachability density of each reference point

    @property
    def n(self) -> int:
        return self.points.shape[0]


def build_index(points, k_lof: int = DEFAULT_K) -> LofIndex:
    """Precompute neighbour lists, k-distances and densities of the reference set.

    ``points`` may be an ``(n, d)`` array or anything with a ``features`` attribute.
    """
    P = np.array(getattr(points, "features", points), dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("reference points must be an (n, d) matrix")
    n = P.shape[0]
    if not 1 <= k_lof < n:
        raise ValueError(f"need 1 <= k_lof < n, got k_lof={k_lof}, n={n}")
    for start in range(0, n, _CHUNK):
        D = _distances(P[start:start + _CHUNK], P)
        rows, cols = np.nonzero(D <= DUPLICATE_TOL)
        dup = [(start + r, c) for r, c in zip(rows, cols) if c > start + r]
        if dup:
            a, b = dup[0]
            raise DuplicatePointsError(f"duplicate reference points: rows {a} and {b}")
    neighbors, ndist = _knn(P, P, k_lof, self_rows=np.arange(n))
    kdist = ndist[:, -1].copy()
    reach = np.maximum(ndist, kdist[neighbors])
    lrd = k_lof / reach.sum(axis=1)
    for a in (P, neighbors, kdist, lrd):
        a.setflags(write=False)
    return LofIndex(P, k_lof, neighbors, kdist, lrd)


def lof_scores(index: LofIndex, X) -> np.ndarray:
    """LOF of each row of ``X`` relative to the reference set."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != index.points.shape[1]:
        raise ValueError(f"query dimension {X.shape[1]} != reference dimension {index.points.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("query points must be finite")
    nbr, dist = _knn(index.points, X, index.k)
    reach_sum = np.maximum(dist, index.k_distance[nbr]).sum(axis=1)
    if np.any(reach_sum == 0):
        raise ZeroDivisionError("local reachability density undefined (zero reachability distances)")
    lrd_q = index.k / reach_sum
    return index.lrd[nbr].mean(axis=1) / lrd_q


def lof_score(index: LofIndex, x) -> float:
    return float(lof_scores(index, np.asarray(x, dtype=np.float64)[None, :])[0])


def lof_predict(index: LofIndex, x, threshold: float = DEFAULT_THRESHOLD):
    """``-1`` (outlier) when the score exceeds ``threshold``, else ``+1``.

    Accepts one point or an ``(n, d)`` batch.
    """
    if not threshold > 1:
        raise ValueError(f"threshold must be > 1, got {threshold}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return -1 if lof_score(index, x) > threshold else 1
    return np.where(lof_scores(index, x) > threshold, -1, 1)
