"""Nearest-neighbour search for the matching step.

``BruteForceIndex`` is exact. ``PrioritizedProjectionIndex`` follows the
prioritized dynamic continuous indexing scheme: points are projected onto
random unit directions grouped into composite indices; a query walks each
projection list outward from its own projected value, in order of projected
distance, and a point becomes a candidate once it has been visited in every
list of some composite index. Candidates are re-ranked by true distance.
"""
from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass

import numpy as np


class EmptyIndexError(ValueError):
    pass


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-D array (k, D), got shape {pts.shape}")
    if len(pts) == 0:
        raise EmptyIndexError("cannot build an index over zero points")
    return pts


def _rank(ids: np.ndarray, dists: np.ndarray, k_nn: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((ids, dists))[:k_nn]
    return ids[order], dists[order]


class BruteForceIndex:
    def __init__(self, points, metric=None):
        self.metric = metric
        raw = np.asarray(points)
        self.points = _as_points(raw if metric is None else metric.embed(raw))

    def __len__(self) -> int:
        return len(self.points)

    def _embed_query(self, q) -> np.ndarray:
        q = np.asarray(q)
        if self.metric is not None:
            q = self.metric.embed(q.reshape(1, -1))[0]
        q = q.astype(np.float64).reshape(-1)
        if q.shape[0] != self.points.shape[1]:
            raise ValueError(f"query dim {q.shape[0]} != index dim {self.points.shape[1]}")
        return q

    def query(self, q, k_nn: int = 1) -> tuple[np.ndarray, np.ndarray]:
        if k_nn < 1:
            raise ValueError("k_nn must be >= 1")
        q = self._embed_query(q)
        dists = np.sqrt(np.square(self.points - q).sum(1))
        return _rank(np.arange(len(self.points)), dists, k_nn)


@dataclass
class PrioritizedParams:
    num_simple: int = 10
    num_composite: int = 2
    seed: int = 0


class PrioritizedProjectionIndex:
    def __init__(self, points, params: PrioritizedParams | None = None, metric=None):
        self.params = params or PrioritizedParams()
        self.metric = metric
        raw = np.asarray(points)
        self.points = _as_points(raw if metric is None else metric.embed(raw))
        k, dim = self.points.shape
        p = self.params
        rng = np.random.default_rng(p.seed)
        dirs = rng.standard_normal((p.num_composite * p.num_simple, dim))
        self.directions = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        proj = self.points @ self.directions.T  # (k, L*m)
        self.order = np.argsort(proj, axis=0, kind="stable").T.copy()  # (L*m, k) point ids
        self.keys = np.take_along_axis(proj.T, self.order, axis=1)  # sorted projection values
        # plain lists make the per-query walk several times faster than numpy scalar access
        self._key_lists = self.keys.tolist()
        self._id_lists = self.order.tolist()

    def __len__(self) -> int:
        return len(self.points)

    def default_budget(self, k_nn: int) -> int:
        return int(max(10 * k_nn, np.ceil(0.05 * len(self.points))))

    def candidates(self, q: np.ndarray, budget: int) -> list[int]:
        """Candidate ids in retrieval order, at most ``budget`` of them."""
        p = self.params
        k = len(self.points)
        m = p.num_simple
        qproj = (self.directions @ q).tolist()
        n_lists = p.num_composite * m
        left = [0] * n_lists
        right = [0] * n_lists
        heaps: list[list] = [[] for _ in range(p.num_composite)]
        key_lists, id_lists = self._key_lists, self._id_lists
        inf = float("inf")

        def push(li: int) -> None:
            lo, hi = left[li], right[li]
            keys, qv = key_lists[li], qproj[li]
            dl = qv - keys[lo] if lo >= 0 else inf
            dr = keys[hi] - qv if hi < k else inf
            if dl == inf and dr == inf:
                return
            if dl <= dr:
                pos, pri = lo, dl
                left[li] = lo - 1
            else:
                pos, pri = hi, dr
                right[li] = hi + 1
            heapq.heappush(heaps[li // m], (pri, id_lists[li][pos], li))

        for li in range(n_lists):
            pos = bisect.bisect_left(key_lists[li], qproj[li])
            left[li], right[li] = pos - 1, pos
            push(li)

        counts = [dict() for _ in range(p.num_composite)]
        seen: set[int] = set()
        found: list[int] = []
        live = True
        while live and len(found) < budget:
            live = False
            for c in range(p.num_composite):
                heap = heaps[c]
                if not heap:
                    continue
                live = True
                _, pid, li = heapq.heappop(heap)
                push(li)
                cnt = counts[c].get(pid, 0) + 1
                counts[c][pid] = cnt
                if cnt == m and pid not in seen:
                    seen.add(pid)
                    found.append(pid)
                    if len(found) >= budget:
                        break
        return found

    def query(self, q, k_nn: int = 1, budget: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        if k_nn < 1:
            raise ValueError("k_nn must be >= 1")
        q = np.asarray(q)
        if self.metric is not None:
            q = self.metric.embed(q.reshape(1, -1))[0]
        q = q.astype(np.float64).reshape(-1)
        if q.shape[0] != self.points.shape[1]:
            raise ValueError(f"query dim {q.shape[0]} != index dim {self.points.shape[1]}")
        if budget is None:
            budget = self.default_budget(k_nn)
        ids = np.asarray(self.candidates(q, max(budget, 1)), dtype=np.int64)
        dists = np.sqrt(np.square(self.points[ids] - q).sum(1))
        return _rank(ids, dists, k_nn)


def build(points, kind: str = "brute", metric=None, **params):
    if kind == "brute":
        return BruteForceIndex(points, metric=metric)
    if kind == "prioritized":
        return PrioritizedProjectionIndex(points, PrioritizedParams(**params), metric=metric)
    raise ValueError(f"unknown index kind {kind!r}")


def recall_at(index, queries, truth_ids: np.ndarray, k_nn: int, budget: int | None = None) -> float:
    """Mean fraction of the true top-k_nn ids recovered per query."""
    hits = 0
    for q, truth in zip(queries, truth_ids):
        if isinstance(index, PrioritizedProjectionIndex):
            ids, _ = index.query(q, k_nn, budget)
        else:
            ids, _ = index.query(q, k_nn)
        hits += len(set(ids.tolist()) & set(truth[:k_nn].tolist()))
    return hits / (len(queries) * k_nn)
