"""Topology-aware augmentations and their calibration.

Operations fall into five behavioral groups: grid permutations (flips,
right-angle rotations, exact topology preservation), boundary
perturbation (additive Gaussian noise), smoothing (Gaussian blur),
intensity remapping (contrast, brightness), and grayscale morphology
(dilation, erosion). Each parameterized op has a validated range and all
outputs are clamped back into [0, 1] so filtration values stay in range.

Calibration sweeps a combo's parameters along a shared axis, measures the
median relative bottleneck distance at each grid point over a fixed set
of corpus draws (common draws across grid points keep the sweep monotone
up to plateaus), and stores the widest contiguous parameter interval
whose medians sit inside the requested band (defaults: weak 5-15%,
strong 15-25%). Training then samples op intensities uniformly from the
stored intervals; no diagram distances are ever computed in the training
loop.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import GrayImage, RoiMask, apply_mask
from .metrics import relative_bottleneck
from .rng import Stream

__all__ = [
    "AugmentationOp",
    "OpRange",
    "AugmentationCombo",
    "CalibrationEntry",
    "CalibrationTable",
    "CalibrationError",
    "WEAK_BAND",
    "STRONG_BAND",
    "apply_op",
    "apply_ops",
    "apply_combo",
    "draw_ops",
    "measure_sweep",
    "calibrate",
    "sample_view_pair",
    "default_combo_templates",
]

WEAK_BAND = (0.05, 0.15)
STRONG_BAND = (0.15, 0.25)

# kind -> (valid lo, valid hi, integer-valued)
_PARAM_SPECS = {
    "hflip": None,
    "vflip": None,
    "rot90": (1, 3, True),
    "gaussian_noise": (0.0, 1.0, False),
    "gaussian_blur": (0.0, 5.0, False),
    "contrast": (-0.9, 2.0, False),
    "brightness": (-0.5, 0.5, False),
    "dilate": (1, 3, True),
    "erode": (1, 3, True),
}


def _check_kind(kind: str):
    if kind not in _PARAM_SPECS:
        raise ValueError(f"unknown augmentation kind {kind!r}")


@dataclass(frozen=True)
class AugmentationOp:
    """One operation with a concrete parameter (None for flips)."""

    kind: str
    param: float | int | None = None

    def __post_init__(self):
        _check_kind(self.kind)
        spec = _PARAM_SPECS[self.kind]
        if spec is None:
            if self.param is not None:
                raise ValueError(f"{self.kind} takes no parameter")
            return
        lo, hi, integer = spec
        if self.param is None:
            raise ValueError(f"{self.kind} requires a parameter")
        if integer:
            if int(self.param) != self.param:
                raise ValueError(f"{self.kind} parameter must be an integer")
            object.__setattr__(self, "param", int(self.param))
        if not (lo <= self.param <= hi):
            raise ValueError(f"{self.kind} parameter {self.param} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class OpRange:
    """An operation with a parameter interval instead of a point value."""

    kind: str
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        _check_kind(self.kind)
        spec = _PARAM_SPECS[self.kind]
        if spec is None:
            return
        vlo, vhi, _ = spec
        if not (vlo <= self.lo <= self.hi <= vhi):
            raise ValueError(
                f"{self.kind} interval [{self.lo}, {self.hi}] invalid within [{vlo}, {vhi}]")

    @property
    def parameterless(self) -> bool:
        return _PARAM_SPECS[self.kind] is None

    def at(self, u: float) -> AugmentationOp:
        """Concrete op at sweep position u in [0, 1]."""
        if self.parameterless:
            return AugmentationOp(self.kind)
        p = self.lo + u * (self.hi - self.lo)
        if _PARAM_SPECS[self.kind][2]:
            p = int(round(p))
        return AugmentationOp(self.kind, p)

    def sample(self, stream: Stream) -> AugmentationOp:
        if self.parameterless:
            return AugmentationOp(self.kind)
        if _PARAM_SPECS[self.kind][2]:
            return AugmentationOp(self.kind, stream.integer(int(self.lo), int(self.hi) + 1))
        return AugmentationOp(self.kind, stream.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class AugmentationCombo:
    """Ordered list of 1-3 op ranges swept/sampled together."""

    ops: tuple

    def __post_init__(self):
        ops = tuple(self.ops)
        if not 1 <= len(ops) <= 3:
            raise ValueError("combos hold 1 to 3 operations")
        if not all(isinstance(o, OpRange) for o in ops):
            raise ValueError("combo entries must be OpRange instances")
        object.__setattr__(self, "ops", ops)

    def label(self) -> str:
        return "+".join(o.kind for o in self.ops)


# ---------------------------------------------------------------------------
# Applying operations
# ---------------------------------------------------------------------------

def _blur(px: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return px
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t ** 2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def convolve_rows(a: np.ndarray) -> np.ndarray:
        r = min(radius, a.shape[1] - 1)
        k = kernel if r == radius else kernel[radius - r:radius + r + 1] / kernel[radius - r:radius + r + 1].sum()
        padded = np.pad(a, ((0, 0), (r, r)), mode="reflect")
        out = np.zeros_like(a)
        for off in range(2 * r + 1):
            out += k[off] * padded[:, off:off + a.shape[1]]
        return out

    return convolve_rows(convolve_rows(px).T).T


def _morph(px: np.ndarray, r: int, op) -> np.ndarray:
    # separable square window: 1-D min/max along each axis, edge padding
    rows = np.pad(px, r, mode="edge")
    acc = rows[:, r:rows.shape[1] - r].copy()
    for off in range(-r, r + 1):
        if off:
            acc = op(acc, rows[:, r + off:rows.shape[1] - r + off])
    cols = acc
    acc2 = cols[r:cols.shape[0] - r, :].copy()
    for off in range(-r, r + 1):
        if off:
            acc2 = op(acc2, cols[r + off:cols.shape[0] - r + off, :])
    return acc2


def apply_op(img: GrayImage, op: AugmentationOp, stream: Stream | None = None) -> GrayImage:
    """Apply one augmentation; only gaussian_noise consumes the stream."""
    px = img.pixels
    k = op.kind
    if k == "hflip":
        out = px[:, ::-1]
    elif k == "vflip":
        out = px[::-1, :]
    elif k == "rot90":
        out = np.rot90(px, op.param)
    elif k == "gaussian_noise":
        if stream is None:
            raise ValueError("gaussian_noise requires a random stream")
        out = px + op.param * stream.normals(px.shape)
    elif k == "gaussian_blur":
        out = _blur(px, op.param)
    elif k == "contrast":
        out = (px - 0.5) * (1.0 + op.param) + 0.5
    elif k == "brightness":
        out = px + op.param
    elif k == "dilate":
        out = _morph(px, op.param, np.maximum)
    elif k == "erode":
        out = _morph(px, op.param, np.minimum)
    else:  # unreachable; AugmentationOp validates
        raise ValueError(f"unknown augmentation kind {k!r}")
    return GrayImage(np.clip(out, 0.0, 1.0))


def apply_ops(img: GrayImage, ops, stream: Stream | None = None) -> GrayImage:
    for op in ops:
        img = apply_op(img, op, stream)
    return img


def draw_ops(combo: AugmentationCombo, stream: Stream) -> tuple:
    """Sample a concrete op per range, in order."""
    return tuple(r.sample(stream) for r in combo.ops)


def apply_combo(img: GrayImage, combo: AugmentationCombo, stream: Stream):
    """Sample intensities from the combo's intervals and apply in order.

    Returns (augmented image, tuple of concrete ops) so the sampled
    parameters can be audited. Deterministic given the stream key.
    """
    ops = draw_ops(combo, stream.spawn("params"))
    return apply_ops(img, ops, stream.spawn("noise")), ops


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class CalibrationEntry:
    """A combo restricted to the parameter interval calibrated for one band."""

    ops: tuple  # OpRange with the band sub-interval
    band: str
    median_lo: float
    median_hi: float
    m_samples: int

    def combo(self) -> AugmentationCombo:
        return AugmentationCombo(self.ops)


@dataclass(frozen=True)
class CalibrationTable:
    dataset: str
    entries: tuple

    def band_entries(self, band: str) -> list:
        return [e for e in self.entries if e.band == band]

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "combos": [
                {
                    "ops": [{"kind": o.kind, "param_lo": o.lo, "param_hi": o.hi}
                            for o in e.ops],
                    "band": e.band,
                    "median_lo": e.median_lo,
                    "median_hi": e.median_hi,
                    "M": e.m_samples,
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def from_json(text: str) -> "CalibrationTable":
        payload = json.loads(text)
        entries = []
        for c in payload["combos"]:
            ops = tuple(OpRange(o["kind"], o["param_lo"], o["param_hi"]) for o in c["ops"])
            entries.append(CalibrationEntry(
                ops=ops, band=c["band"], median_lo=c["median_lo"],
                median_hi=c["median_hi"], m_samples=c["M"]))
        return CalibrationTable(dataset=payload["dataset"], entries=tuple(entries))

    @staticmethod
    def load(path) -> "CalibrationTable":
        return CalibrationTable.from_json(Path(path).read_text())


def _masked_corpus(images) -> list:
    """Normalize corpus items to pre-masked images.

    Accepts GrayImage (used as-is) or (GrayImage, RoiMask) pairs, which
    are masked once up front; augmentation then acts on the ROI content
    and distances are measured on full (pre-masked) grids.
    """
    out = []
    for item in images:
        if isinstance(item, GrayImage):
            out.append(item)
        else:
            img, roi = item
            out.append(apply_mask(img, roi))
    return out


def measure_sweep(combo: AugmentationCombo, corpus, grid: int, m_samples: int,
                  stream: Stream) -> list:
    """Median relative bottleneck distance at each sweep position.

    The same (image, noise stream) draws are reused at every grid point;
    only the op intensities move, so per-draw distances (and hence their
    medians) vary smoothly with the sweep position.
    """
    masked = _masked_corpus(corpus)
    if not masked:
        raise CalibrationError("calibration corpus is empty")
    has_params = any(not r.parameterless for r in combo.ops)
    positions = np.linspace(0.0, 1.0, grid) if has_params else np.array([0.0])
    draws = []
    for m in range(m_samples):
        ds = stream.spawn("draw", m)
        draws.append((ds.integer(0, len(masked)), ds.spawn("noise").key))
    medians = []
    for g, u in enumerate(positions):
        ops = tuple(r.at(float(u)) for r in combo.ops)
        vals = []
        for img_idx, noise_key in draws:
            base = masked[img_idx]
            augmented = apply_ops(base, ops, Stream(key=noise_key))
            vals.append(relative_bottleneck(base, augmented))
        medians.append(float(np.median(vals)))
    return medians


def _band_interval(medians, band):
    """Widest contiguous run of grid indices with median inside the band."""
    lo, hi = band
    best = None
    start = None
    for i, m in enumerate(medians + [float("inf")]):
        inside = lo <= m <= hi
        if inside and start is None:
            start = i
        elif not inside and start is not None:
            run = (start, i - 1)
            if best is None or (run[1] - run[0]) > (best[1] - best[0]):
                best = run
            start = None
    return best


def calibrate(images, combos, grid: int = 9, m_samples: int = 10,
              bands: dict | None = None, stream: Stream | None = None,
              dataset: str = "corpus") -> CalibrationTable:
    """Map combo templates to parameter intervals hitting each band.

    ``images``: GrayImage or (GrayImage, RoiMask) items. ``combos``:
    AugmentationCombo templates whose op ranges delimit the sweep. Raises
    CalibrationError when the corpus is empty, the grid is too coarse, or
    some band ends up with no usable combo (the error lists what each
    combo measured so ranges can be widened).
    """
    if bands is None:
        bands = {"weak": WEAK_BAND, "strong": STRONG_BAND}
    if grid < 5:
        raise CalibrationError("calibration grid needs at least 5 points per parameter")
    if stream is None:
        stream = Stream(key=0)
    masked = _masked_corpus(images)
    if not masked:
        raise CalibrationError("calibration corpus is empty")

    entries = []
    measured = {}
    for ci, combo in enumerate(combos):
        medians = measure_sweep(combo, masked, grid, m_samples, stream.spawn("combo", ci))
        measured[combo.label()] = medians
        has_params = any(not r.parameterless for r in combo.ops)
        positions = np.linspace(0.0, 1.0, grid) if has_params else np.array([0.0])
        for band_name, band in bands.items():
            run = _band_interval(medians, band)
            if run is None:
                continue
            u_lo, u_hi = positions[run[0]], positions[run[1]]
            sub_ops = []
            for r in combo.ops:
                a, b = r.at(float(u_lo)), r.at(float(u_hi))
                if r.parameterless:
                    sub_ops.append(r)
                else:
                    sub_ops.append(OpRange(r.kind, a.param, b.param))
            entries.append(CalibrationEntry(
                ops=tuple(sub_ops), band=band_name,
                median_lo=medians[run[0]], median_hi=medians[run[1]],
                m_samples=m_samples))

    table = CalibrationTable(dataset=dataset, entries=tuple(entries))
    missing = [b for b in bands if not table.band_entries(b)]
    if missing:
        detail = "; ".join(
            f"{label}: medians {min(m):.3f}..{max(m):.3f}" for label, m in measured.items())
        raise CalibrationError(
            f"no combo calibratable for band(s) {missing}; measured ranges: {detail}")
    return table


def sample_view_pair(img: GrayImage, table: CalibrationTable, stream: Stream,
                     bands: tuple = ("weak", "strong")):
    """Draw one view per requested band of ``img`` (weak+strong by default).

    Combos are chosen uniformly within each band and parameters uniformly
    within their calibrated intervals; no distance computation happens
    here. Returns (first view, second view, first ops, second ops). The
    draws are keyed by view position, so symmetric band pairs still get
    independent samples.
    """
    views = []
    chosen = []
    for i, band in enumerate(bands):
        pool = table.band_entries(band)
        if not pool:
            raise CalibrationError(f"calibration table has no {band}-band combos")
        bs = stream.spawn("view", i, band)
        entry = pool[bs.integer(0, len(pool))]
        out, ops = apply_combo(img, entry.combo(), bs.spawn("apply"))
        views.append(out)
        chosen.append(ops)
    return views[0], views[1], chosen[0], chosen[1]


def default_combo_templates() -> list:
    """Sweep templates covering all five operation groups.

    Ranges are tuned to the synthetic shape corpus: the relative distance
    climbs from 0 to ~0.5 across each sweep, so both bands are crossed
    with several grid points inside each.
    """
    return [
        AugmentationCombo((OpRange("gaussian_noise", 0.0, 0.18),)),
        AugmentationCombo((OpRange("hflip"), OpRange("gaussian_noise", 0.0, 0.16))),
        AugmentationCombo((OpRange("gaussian_blur", 0.0, 1.2),)),
        AugmentationCombo((OpRange("gaussian_noise", 0.0, 0.14),
                           OpRange("contrast", 0.0, 0.4))),
        AugmentationCombo((OpRange("gaussian_blur", 0.0, 0.9),
                           OpRange("brightness", 0.0, 0.2))),
    ]
