"""Exact bottleneck distance between persistence diagrams and the relative
bottleneck distance used to grade augmentation strength.

The bottleneck optimum is always attained at one of finitely many
candidate values: a pairwise L-infinity distance between off-diagonal
points or half the persistence of a point (its distance to the diagonal).
We binary-search that candidate set, testing feasibility of each radius
with a maximum bipartite matching (Hopcroft-Karp), so the returned value
is exact, not approximate.

The relative distance divides the per-dimension bottleneck between an
image and its augmented version by the span (max persistence) of the
original diagram, and takes the maximum over dimensions whose span is
meaningfully nonzero. Permutation augmentations (flips, right-angle
rotations) leave diagrams identical, so their relative distance is an
exact 0 when the moved content matches the region the diagrams are
computed on, i.e. when inputs were pre-masked or the ROI is the full
image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cubical import PersistenceDiagram, compute_pd, restrict_and_compute
from .image import GrayImage, RoiMask

__all__ = [
    "SPAN_EPS",
    "MatchedDistance",
    "bottleneck",
    "span",
    "relative_bottleneck",
    "relative_bottleneck_report",
]

SPAN_EPS = 1e-9


@dataclass(frozen=True)
class MatchedDistance:
    """Bottleneck value plus the optimal matching that attains it.

    Matching entries are ("ab", i, j) for point i of A matched to point j
    of B, ("a-diag", i) and ("b-diag", j) for diagonal projections.
    """

    value: float
    matching: tuple


def _as_points(diagram) -> np.ndarray:
    arr = np.asarray(diagram, dtype=np.float64).reshape(-1, 2)
    return arr


def _hopcroft_karp(adj, n_left: int, n_right: int):
    """Maximum matching size and left-side assignment."""
    INF = float("inf")
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    size = 0
    while True:
        dist = [INF] * n_left
        queue = [u for u in range(n_left) if match_l[u] == -1]
        for u in queue:
            dist[u] = 0
        reachable_free = False
        qi = 0
        while qi < len(queue):
            u = queue[qi]
            qi += 1
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    reachable_free = True
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not reachable_free:
            return size, match_l

        def dfs(u):
            for v in adj[u]:
                w = match_r[v]
                if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                    match_l[u] = v
                    match_r[v] = u
                    return True
            dist[u] = INF
            return False

        for u in range(n_left):
            if match_l[u] == -1 and dfs(u):
                size += 1


def bottleneck(pd_a, pd_b) -> MatchedDistance:
    """Exact bottleneck distance between two single-dimension diagrams.

    Accepts (n, 2) arrays or anything array-like; both diagrams may be
    empty, in which case the distance is 0 with an empty matching.
    """
    a = _as_points(pd_a)
    b = _as_points(pd_b)
    na, nb = len(a), len(b)
    if na == 0 and nb == 0:
        return MatchedDistance(0.0, ())

    diag_a = (a[:, 1] - a[:, 0]) / 2.0 if na else np.zeros(0)
    diag_b = (b[:, 1] - b[:, 0]) / 2.0 if nb else np.zeros(0)
    if na and nb:
        cross = np.maximum(
            np.abs(a[:, None, 0] - b[None, :, 0]),
            np.abs(a[:, None, 1] - b[None, :, 1]),
        )
    else:
        cross = np.zeros((na, nb))
    candidates = np.unique(np.concatenate([[0.0], diag_a, diag_b, cross.ravel()]))

    n = na + nb  # left: A points then diagonal slots for B; right: B points then slots for A

    def feasible(r):
        adj = [[] for _ in range(n)]
        for i in range(na):
            adj[i] = list(np.nonzero(cross[i] <= r)[0])
            if diag_a[i] <= r:
                adj[i].append(nb + i)
        all_right_slots = list(range(nb, n))
        for j in range(nb):
            row = [j] if diag_b[j] <= r else []
            adj[na + j] = row + all_right_slots  # diagonal-to-diagonal is free
        size, match_l = _hopcroft_karp(adj, n, n)
        return size == n, match_l

    lo, hi = 0, len(candidates) - 1
    best_val, best_ml = candidates[-1], None
    while lo <= hi:
        mid = (lo + hi) // 2
        ok, ml = feasible(candidates[mid])
        if ok:
            best_val, best_ml = candidates[mid], ml
            hi = mid - 1
        else:
            lo = mid + 1
    if best_ml is None:
        ok, best_ml = feasible(best_val)
        assert ok, "candidate set must contain a feasible radius"

    matching = []
    for i in range(na):
        v = best_ml[i]
        if v < nb:
            matching.append(("ab", i, v))
        else:
            matching.append(("a-diag", i))
    matched_b = {v for i in range(na) if (v := best_ml[i]) < nb}
    for j in range(nb):
        if j not in matched_b:
            matching.append(("b-diag", j))
    return MatchedDistance(float(best_val), tuple(matching))


def span(diagram) -> float:
    """Maximum persistence (death - birth) in the diagram; 0 if empty."""
    pts = _as_points(diagram)
    if pts.size == 0:
        return 0.0
    return float(np.max(pts[:, 1] - pts[:, 0]))


def relative_bottleneck_report(pd_x: PersistenceDiagram, pd_a: PersistenceDiagram) -> dict:
    """Per-dimension bottleneck / span / ratio plus the overall maximum.

    Dimensions whose original span is <= SPAN_EPS are excluded from the
    maximum (ratio reported as nan); if all are excluded the overall value
    is 0.
    """
    rows = {}
    ratios = []
    for dim in (0, 1):
        d_b = bottleneck(pd_x.slice(dim), pd_a.slice(dim)).value
        s = span(pd_x.slice(dim))
        if s > SPAN_EPS:
            ratio = d_b / s
            ratios.append(ratio)
        else:
            ratio = float("nan")
        rows[dim] = {"d_b": d_b, "span": s, "ratio": ratio}
    rows["max_ratio"] = max(ratios) if ratios else 0.0
    return rows


def relative_bottleneck(original: GrayImage, augmented: GrayImage,
                        roi: RoiMask | None = None) -> float:
    """Topological change of ``augmented`` relative to ``original``.

    Both images are restricted to the same ROI (the full image when roi is
    None); callers that augment pre-masked images should pass None.
    """
    if (original.height, original.width) != (augmented.height, augmented.width):
        raise ValueError("original and augmented images must share dimensions")
    if roi is None:
        pd_x = compute_pd(original)
        pd_a = compute_pd(augmented)
    else:
        pd_x = restrict_and_compute(original, roi)
        pd_a = restrict_and_compute(augmented, roi)
    return float(relative_bottleneck_report(pd_x, pd_a)["max_ratio"])
