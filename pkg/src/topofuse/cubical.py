"""Sublevel-set cubical persistence of grayscale images (H0 and H1).

Pixels are vertices of the complex; edges join 4-neighbors and carry the
max of their endpoints; unit squares carry the max of their four corners,
so every cell enters the filtration with the last of its vertices.

Two independent implementations:

* ``compute_pd`` — the production path. H0 comes from union-find over
  edges in increasing filtration order with the elder rule. H1 uses the
  planar duality between loops of the sublevel complex and bounded
  components of its complement: union-find over the squares plus a
  virtual outer region, processing connectors (edges and vertices) in
  decreasing order. A complement component with maximal square value
  ``beta`` that merges toward the elder side through a connector of value
  ``delta`` is exactly a loop alive for t in [delta, beta), i.e. the pair
  (delta, beta).

* ``compute_pd_oracle`` — full boundary-matrix reduction over Z/2 with
  integer bitsets. Cubic-time and restricted to small images; it is the
  ground truth the fast path is tested against.

Components that never die are reported with death 1.0, the top of the
normalized intensity range, so downstream span normalization is finite.
Zero-persistence pairs are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import GrayImage, RoiMask, apply_mask

__all__ = [
    "ESSENTIAL_DEATH",
    "PersistenceDiagram",
    "compute_pd",
    "compute_pd_oracle",
    "restrict_and_compute",
    "write_pd_csv",
    "read_pd_csv",
    "betti_numbers",
]

ESSENTIAL_DEATH = 1.0

_ORACLE_MAX_SIDE = 32


def _canon(pairs) -> np.ndarray:
    arr = np.asarray(sorted((float(b), float(d)) for b, d in pairs), dtype=np.float64)
    return arr.reshape(-1, 2)


@dataclass(frozen=True)
class PersistenceDiagram:
    """Per-dimension multisets of (birth, death) pairs, sorted by (birth, death)."""

    dim0: np.ndarray
    dim1: np.ndarray
    essential_death: float = field(default=ESSENTIAL_DEATH)

    def __post_init__(self):
        d0, d1 = _canon(self.dim0), _canon(self.dim1)
        for arr in (d0, d1):
            if arr.size and not (np.all(arr[:, 1] >= arr[:, 0])
                                 and arr.min() >= 0.0 and arr.max() <= 1.0):
                raise ValueError("diagram points must satisfy 0 <= birth <= death <= 1")
        d0.setflags(write=False)
        d1.setflags(write=False)
        object.__setattr__(self, "dim0", d0)
        object.__setattr__(self, "dim1", d1)

    def slice(self, dim: int) -> np.ndarray:
        if dim == 0:
            return self.dim0
        if dim == 1:
            return self.dim1
        raise ValueError(f"no homology dimension {dim}")

    def __eq__(self, other):
        return (isinstance(other, PersistenceDiagram)
                and np.array_equal(self.dim0, other.dim0)
                and np.array_equal(self.dim1, other.dim1))


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        p = self.parent
        r = x
        while p[r] != r:
            r = p[r]
        while p[x] != r:
            p[x], x = r, p[x]
        return r


def compute_pd(img: GrayImage) -> PersistenceDiagram:
    """H0/H1 persistence pairs of the sublevel filtration; see module docstring."""
    px = img.pixels
    h, w = px.shape
    flat = px.ravel()

    # ---- H0: union-find over vertices, edges in increasing value ----
    idx = np.arange(h * w).reshape(h, w)
    ev = np.concatenate([
        np.maximum(px[:, :-1], px[:, 1:]).ravel(),
        np.maximum(px[:-1, :], px[1:, :]).ravel(),
    ])
    ea = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    eb = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    order = np.lexsort((np.arange(ev.size), ev))
    ev_l = ev[order].tolist()
    ea_l = ea[order].tolist()
    eb_l = eb[order].tolist()

    uf = _UnionFind(h * w)
    parent = uf.parent
    birth_val = flat.tolist()
    birth_ord = list(range(h * w))
    dim0 = []
    for val, a, b in zip(ev_l, ea_l, eb_l):
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        if (birth_val[ra], birth_ord[ra]) <= (birth_val[rb], birth_ord[rb]):
            elder, young = ra, rb
        else:
            elder, young = rb, ra
        if val > birth_val[young]:
            dim0.append((birth_val[young], val))
        parent[young] = elder
    roots = {uf.find(v) for v in range(h * w)}
    for r in roots:
        if ESSENTIAL_DEATH > birth_val[r]:
            dim0.append((birth_val[r], ESSENTIAL_DEATH))

    # ---- H1 by duality: squares + outer region, connectors decreasing ----
    dim1 = _h1_by_duality(px)
    return PersistenceDiagram(dim0=dim0, dim1=dim1)


def _h1_by_duality(px: np.ndarray) -> list:
    h, w = px.shape
    ns = (h - 1) * (w - 1)
    out_node = ns
    sval = np.maximum(np.maximum(px[:-1, :-1], px[:-1, 1:]),
                      np.maximum(px[1:, :-1], px[1:, 1:]))

    sq = np.full((h + 1, w + 1), out_node, dtype=np.int64)
    sq[1:h, 1:w] = np.arange(ns).reshape(h - 1, w - 1)
    # sq[i+1, j+1] is the square with top-left pixel (i, j); row/col 0 and the
    # extra row/col at the end are the outer region.

    # edge connectors: the two squares flanking each primal edge
    he_v = np.maximum(px[:, :-1], px[:, 1:])            # horizontal edges, (h, w-1)
    ii, jj = np.mgrid[0:h, 0:w - 1]
    he_a = sq[ii, jj + 1]                                # square above
    he_b = sq[ii + 1, jj + 1]                            # square below
    ve_v = np.maximum(px[:-1, :], px[1:, :])            # vertical edges, (h-1, w)
    ii, jj = np.mgrid[0:h - 1, 0:w]
    ve_a = sq[ii + 1, jj]                                # square left
    ve_b = sq[ii + 1, jj + 1]                            # square right

    # vertex connectors: chain the sorted incident squares (3 links each)
    ii, jj = np.mgrid[0:h, 0:w]
    inc = np.stack([sq[ii, jj], sq[ii, jj + 1], sq[ii + 1, jj], sq[ii + 1, jj + 1]], axis=-1)
    inc = np.sort(inc.reshape(-1, 4), axis=1)
    vv = np.repeat(px.ravel(), 3)
    va = inc[:, :3].ravel()
    vb = inc[:, 1:].ravel()

    cv = np.concatenate([he_v.ravel(), ve_v.ravel(), vv])
    ca = np.concatenate([he_a.ravel(), ve_a.ravel(), va])
    cb = np.concatenate([he_b.ravel(), ve_b.ravel(), vb])
    keep = ca != cb
    cv, ca, cb = cv[keep], ca[keep], cb[keep]
    order = np.lexsort((np.arange(cv.size), -cv))
    cv_l = cv[order].tolist()
    ca_l = ca[order].tolist()
    cb_l = cb[order].tolist()

    uf = _UnionFind(ns + 1)
    parent = uf.parent
    birth_val = sval.ravel().tolist() + [float("inf")]
    birth_ord = list(range(ns + 1))
    dim1 = []
    for val, a, b in zip(cv_l, ca_l, cb_l):
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        if (birth_val[ra], -birth_ord[ra]) >= (birth_val[rb], -birth_ord[rb]):
            elder, young = ra, rb
        else:
            elder, young = rb, ra
        if birth_val[young] > val:
            dim1.append((val, birth_val[young]))
        parent[young] = elder
    return dim1


def compute_pd_oracle(img: GrayImage) -> PersistenceDiagram:
    """Boundary-matrix reduction over Z/2. Test oracle; O(n^3), small images only."""
    px = img.pixels
    h, w = px.shape
    if h > _ORACLE_MAX_SIDE or w > _ORACLE_MAX_SIDE:
        raise ValueError(f"oracle limited to {_ORACLE_MAX_SIDE}x{_ORACLE_MAX_SIDE} images")

    cells = []  # (value, dim, row, col, kind); kind: 0 vertex, 1 h-edge, 2 v-edge, 3 square
    for i in range(h):
        for j in range(w):
            cells.append((px[i, j], 0, i, j, 0))
    for i in range(h):
        for j in range(w - 1):
            cells.append((max(px[i, j], px[i, j + 1]), 1, i, j, 1))
    for i in range(h - 1):
        for j in range(w):
            cells.append((max(px[i, j], px[i + 1, j]), 1, i, j, 2))
    for i in range(h - 1):
        for j in range(w - 1):
            v = max(px[i, j], px[i, j + 1], px[i + 1, j], px[i + 1, j + 1])
            cells.append((v, 2, i, j, 3))

    order = sorted(range(len(cells)), key=lambda c: cells[c][:4] + (cells[c][4],))
    pos = [0] * len(cells)
    for k, c in enumerate(order):
        pos[c] = k

    n_v = h * w
    n_h = h * (w - 1)
    n_e = n_h + (h - 1) * w

    def vid(i, j):
        return i * w + j

    def hid(i, j):
        return n_v + i * (w - 1) + j

    def veid(i, j):
        return n_v + n_h + i * w + j

    def sid(i, j):
        return n_v + n_e + i * (w - 1) + j

    cols = [0] * len(cells)
    for cid, (_, _, i, j, kind) in enumerate(cells):
        k = pos[cid]
        if kind == 1:
            cols[k] = (1 << pos[vid(i, j)]) | (1 << pos[vid(i, j + 1)])
        elif kind == 2:
            cols[k] = (1 << pos[vid(i, j)]) | (1 << pos[vid(i + 1, j)])
        elif kind == 3:
            cols[k] = ((1 << pos[hid(i, j)]) | (1 << pos[hid(i + 1, j)])
                       | (1 << pos[veid(i, j)]) | (1 << pos[veid(i, j + 1)]))

    lowmap = {}
    pairs = []
    for k in range(len(cells)):
        c = cols[k]
        while c:
            low = c.bit_length() - 1
            other = lowmap.get(low)
            if other is None:
                lowmap[low] = k
                pairs.append((low, k))
                break
            c ^= cols[other]
        cols[k] = c

    vals = [cells[order[k]][0] for k in range(len(cells))]
    dims = [cells[order[k]][1] for k in range(len(cells))]
    paired = set()
    dim0, dim1 = [], []
    for low, k in pairs:
        paired.add(low)
        paired.add(k)
        b, d = vals[low], vals[k]
        if d > b:
            (dim0 if dims[low] == 0 else dim1).append((b, d))
    for k in range(len(cells)):
        if k not in paired and dims[k] < 2:
            b = vals[k]
            if ESSENTIAL_DEATH > b:
                (dim0 if dims[k] == 0 else dim1).append((b, ESSENTIAL_DEATH))
    return PersistenceDiagram(dim0=dim0, dim1=dim1)


def restrict_and_compute(img: GrayImage, roi: RoiMask) -> PersistenceDiagram:
    """Persistence of the image with everything outside the ROI pushed to 1.0."""
    return compute_pd(apply_mask(img, roi))


def betti_numbers(pd: PersistenceDiagram, t: float) -> tuple[int, int]:
    """(beta0, beta1) of the sublevel complex at threshold t, read off the diagram."""
    b0 = int(np.sum((pd.dim0[:, 0] <= t) & (pd.dim0[:, 1] > t))) if pd.dim0.size else 0
    b1 = int(np.sum((pd.dim1[:, 0] <= t) & (pd.dim1[:, 1] > t))) if pd.dim1.size else 0
    return b0, b1


# ---------------------------------------------------------------------------
# CSV interchange format: header dim,birth,death; 9 decimal digits;
# rows sorted by (dim, birth, death).
# ---------------------------------------------------------------------------

def write_pd_csv(pd: PersistenceDiagram, path) -> None:
    lines = ["dim,birth,death"]
    for dim in (0, 1):
        for b, d in pd.slice(dim):
            lines.append(f"{dim},{b:.9f},{d:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pd_csv(path) -> PersistenceDiagram:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "dim,birth,death":
        raise ValueError(f"{path}: expected header 'dim,birth,death'")
    dim0, dim1 = [], []
    for line in text[1:]:
        if not line.strip():
            continue
        dim_s, b_s, d_s = line.split(",")
        pair = (float(b_s), float(d_s))
        if int(dim_s) == 0:
            dim0.append(pair)
        elif int(dim_s) == 1:
            dim1.append(pair)
        else:
            raise ValueError(f"{path}: unsupported dimension {dim_s}")
    return PersistenceDiagram(dim0=dim0, dim1=dim1)
