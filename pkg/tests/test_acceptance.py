"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
report. Criteria 8 and 9 train small models end to end and take several
minutes each; everything else completes in well under a minute.
"""
import time

import numpy as np
import pytest

from topofuse.augment import (
    AugmentationCombo,
    AugmentationOp,
    CalibrationTable,
    OpRange,
    apply_op,
    default_combo_templates,
    measure_sweep,
)
from topofuse.corpus import CorpusConfig, generate_corpus
from topofuse.cubical import compute_pd, compute_pd_oracle
from topofuse.encoder import EncoderConfig, TopoEncoder, select_points, stack_points
from topofuse.fusion import FusionModule
from topofuse.image import GrayImage, apply_mask, extract_roi
from topofuse.losses import nt_xent
from topofuse.metrics import bottleneck, relative_bottleneck
from topofuse.nn import MLP, ParameterSet, Tensor, tsum
from topofuse.rng import Stream
from topofuse.train import TrainConfig

from conftest import random_image
from gradcheck import finite_difference_check
from test_metrics import brute_bottleneck, random_diagram


def report(num, text):
    print(f"\n[ACCEPTANCE {num}] PASS: {text}")


# ---------------------------------------------------------------------------
# 1. cubical persistence oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_1_oracle_equivalence():
    s = Stream(key=1001)
    t0 = time.perf_counter()
    for trial in range(200):
        h = s.integer(2, 17)
        w = s.integer(2, 17)
        img = random_image(s, h, w, quantized=trial % 2 == 0)
        assert compute_pd(img) == compute_pd_oracle(img), f"trial {trial} ({h}x{w})"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"oracle comparison took {elapsed:.1f}s"
    report(1, f"200/200 random diagrams multiset-identical to boundary-matrix "
              f"reduction in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. bottleneck exactness and metric axioms
# ---------------------------------------------------------------------------

def test_criterion_2_bottleneck_exactness():
    s = Stream(key=1002)
    for trial in range(500):
        a = random_diagram(s)
        b = random_diagram(s)
        assert bottleneck(a, b).value == brute_bottleneck(a, b), f"trial {trial}"
    for trial in range(100):
        a, b, c = (random_diagram(s) for _ in range(3))
        dab = bottleneck(a, b).value
        dba = bottleneck(b, a).value
        assert dab == dba
        assert bottleneck(a, a).value == 0.0
        assert bottleneck(a, c).value <= dab + bottleneck(b, c).value
    report(2, "500/500 exact matches against exhaustive matching; symmetry and "
              "triangle inequality exact on 100 triples")


# ---------------------------------------------------------------------------
# 3. stability inequality
# ---------------------------------------------------------------------------

def test_criterion_3_stability():
    s = Stream(key=1003)
    cases = 0
    for eps in (0.01, 0.05):
        for _ in range(50):
            img = random_image(s, s.integer(4, 10), s.integer(4, 10))
            noise = (2.0 * s.uniforms(img.pixels.shape) - 1.0) * eps
            perturbed = np.clip(img.pixels + noise, 0.0, 1.0)
            over = np.abs(perturbed - img.pixels) > eps
            perturbed[over] = img.pixels[over]
            other = GrayImage(perturbed)
            assert float(np.max(np.abs(other.pixels - img.pixels))) <= eps
            pd_a = compute_pd(img)
            pd_b = compute_pd(other)
            for dim in (0, 1):
                assert bottleneck(pd_a.slice(dim), pd_b.slice(dim)).value <= eps
            cases += 1
    assert cases == 100
    report(3, "d_B <= eps for 100 perturbed images (eps in {0.01, 0.05}), exact inequality")


# ---------------------------------------------------------------------------
# 4. homeomorphism invariance
# ---------------------------------------------------------------------------

def test_criterion_4_homeomorphism_invariance():
    s = Stream(key=1004)
    images = [random_image(s, 9, 9) for _ in range(10)]
    corpus = generate_corpus(CorpusConfig(n_per_class=2, size=20, seed=3))
    images += [apply_mask(img, extract_roi(img)) for img in corpus.images]
    checked = 0
    for img in images:
        for op in (AugmentationOp("hflip"), AugmentationOp("vflip"),
                   AugmentationOp("rot90", 1), AugmentationOp("rot90", 2),
                   AugmentationOp("rot90", 3)):
            if op.kind == "rot90" and op.param in (1, 3) and img.height != img.width:
                continue
            out = apply_op(img, op)
            assert relative_bottleneck(img, out) == 0.0
            checked += 1
    report(4, f"relative bottleneck distance exactly 0 for {checked} "
              "flip/rotation cases")


# ---------------------------------------------------------------------------
# 5. calibration band validity (the shipped table)
# ---------------------------------------------------------------------------

CALIBRATION_CORPUS = CorpusConfig(n_per_class=12, size=32, noise_sigma=0.04, seed=7)
CALIBRATION_STREAM_KEY = 3
CALIBRATION_GRID = 17
CALIBRATION_SAMPLES = 10
BANDS = {"weak": (0.05, 0.15), "strong": (0.15, 0.25)}


def calibration_items():
    corpus = generate_corpus(CALIBRATION_CORPUS)
    return [apply_mask(img, extract_roi(img)) for img in corpus.images]


def test_criterion_5_calibration_bands():
    from pathlib import Path

    table_path = Path(__file__).resolve().parent.parent / "assets" / "toy_calibration.json"
    table = CalibrationTable.load(table_path)
    items = calibration_items()

    # re-measure 3 interior points of every stored interval with fresh draws
    fresh = Stream(key=99)
    n_checked = 0
    for i, entry in enumerate(table.entries):
        lo, hi = BANDS[entry.band]
        for j, frac in enumerate((0.25, 0.5, 0.75)):
            ops = tuple(
                r if r.parameterless else OpRange(
                    r.kind,
                    r.lo + frac * (r.hi - r.lo),
                    r.lo + frac * (r.hi - r.lo))
                for r in entry.ops)
            combo = AugmentationCombo(ops)
            med = measure_sweep(combo, items, grid=5, m_samples=CALIBRATION_SAMPLES,
                                stream=fresh.spawn("re", i, j))[0]
            assert lo - 0.02 <= med <= hi + 0.02, \
                f"entry {i} ({entry.band}) interior point {frac}: median {med:.3f}"
            n_checked += 1

    # monotone non-decreasing medians along every shipped sweep
    for ci, combo in enumerate(default_combo_templates()):
        med = measure_sweep(combo, items, grid=CALIBRATION_GRID,
                            m_samples=CALIBRATION_SAMPLES,
                            stream=Stream(key=CALIBRATION_STREAM_KEY).spawn("combo", ci))
        assert all(b >= a for a, b in zip(med, med[1:])), f"{combo.label()}: {med}"
    report(5, f"{n_checked} interior re-measurements inside their bands "
              "(+/- 0.02); every sweep monotone non-decreasing")


# ---------------------------------------------------------------------------
# 6. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_6_gradients():
    from topofuse import nn

    s = Stream(key=1006)
    # primitives at 1e-6
    a = Tensor(s.normals((3, 4)), requires_grad=True)
    b = Tensor(s.normals((4, 5)), requires_grad=True)
    probe = Tensor(Stream(key=1).normals((3, 5)))
    finite_difference_check(lambda: tsum((a @ b) * probe), [a, b], s.spawn("mm"))

    c = Tensor(np.abs(s.normals((4, 4))) + 0.5, requires_grad=True)
    probe2 = Tensor(Stream(key=2).normals((4, 4)))
    finite_difference_check(
        lambda: tsum((nn.exp(nn.log(c)) + nn.sqrt(c) + nn.sigmoid(c)) * probe2),
        [c], s.spawn("un"))

    d = Tensor(s.normals((3, 6)), requires_grad=True)
    probe3 = Tensor(Stream(key=3).normals((3, 6)))
    finite_difference_check(lambda: tsum(nn.softmax(d, axis=-1) * probe3),
                            [d], s.spawn("sm"))

    # the full composite: topology encoder -> MoE fusion -> NT-Xent, 1e-4
    enc_params = ParameterSet()
    encoder = TopoEncoder(enc_params, Stream(key=1060), EncoderConfig())
    fus_params = ParameterSet()
    fusion = FusionModule(fus_params, Stream(key=1061), visual_raw_dim=16)
    from test_encoder import random_diagram as random_pd

    sel = [select_points(random_pd(Stream(key=1062 + k), 10, 18)) for k in range(3)]
    pts, valid = stack_points(sel)
    f_raw = Tensor(Stream(key=1063).normals((3, 16)))

    def build():
        t_feat = encoder(pts, valid)
        z_w = fusion(f_raw, t_feat).z
        z_s = fusion(f_raw + Tensor(0.05), t_feat).z
        return nt_xent(z_w, z_s, temperature=0.5)

    merged = ParameterSet()
    merged.merge(enc_params, "enc/")
    merged.merge(fus_params, "fus/")
    tensors = merged.tensors()
    # 20 random parameter coordinates across the composite
    pick = Stream(key=1064)
    chosen = [tensors[pick.integer(0, len(tensors))] for _ in range(20)]
    worst = 0.0
    for t in chosen:
        worst = max(worst, finite_difference_check(
            build, [t], pick.spawn("c", id(t) % 1000), n_coords=1, tol=1e-4))
    report(6, f"primitive gradients exact to 1e-6; composite "
              f"encoder+fusion+NT-Xent worst rel err {worst:.2e} < 1e-4")


# ---------------------------------------------------------------------------
# 7. architectural invariants
# ---------------------------------------------------------------------------

def test_criterion_7_architectural_invariants():
    from test_encoder import random_diagram as random_pd

    enc_params = ParameterSet()
    encoder = TopoEncoder(enc_params, Stream(key=1070))
    sel = select_points(random_pd(Stream(key=1071), 20, 40))
    pts, valid = stack_points([sel])
    t = encoder(pts, valid).data

    perm = np.arange(144)
    perm[:20] = Stream(key=1072).permutation(20)
    perm[48:88] = 48 + Stream(key=1073).permutation(40)
    t_perm = encoder(pts[:, perm], valid[:, perm]).data
    perm_gap = float(np.max(np.abs(t - t_perm)))
    assert perm_gap < 1e-9

    poisoned = pts.copy()
    poisoned[:, ~valid[0], :2] = 0.321
    assert np.array_equal(encoder(poisoned, valid).data, t)

    fus_params = ParameterSet()
    fusion = FusionModule(fus_params, Stream(key=1074), visual_raw_dim=16)
    s = Stream(key=1075)
    f = Tensor(s.normals((4, 256)))
    tt = Tensor(s.normals((4, 256)))
    fused = fusion.fuse(f, tt)
    gate_gap = float(np.max(np.abs(fused.gate.data.sum(axis=1) - 1.0)))
    assert gate_gap < 1e-9 and np.all(fused.gate.data >= 0)

    experts, _ = fusion.run_experts(f, tt)
    last = len(fusion.gate.layers) - 1
    fus_params[f"fusion.gate.{last}.w"].data = np.zeros_like(
        fus_params[f"fusion.gate.{last}.w"].data)
    for i in range(5):
        logits = np.full(5, -1e9)
        logits[i] = 1e9
        fus_params[f"fusion.gate.{last}.b"].data = logits
        assert np.max(np.abs(fusion.fuse(f, tt).h.data - experts[i].data)) == 0.0

    experts_same, _ = fusion.run_experts(f, f)
    direct = fusion.e4(f)
    assert np.allclose(experts_same[3].data, direct.data, atol=1e-12)
    report(7, f"permutation gap {perm_gap:.1e} < 1e-9; padding inert; gate simplex "
              f"gap {gate_gap:.1e} < 1e-9; one-hot gates reproduce experts exactly; "
              "expert-4 identity at f == t")


# ---------------------------------------------------------------------------
# 10. end-to-end determinism
# ---------------------------------------------------------------------------

def test_criterion_10_train_determinism(tmp_path):
    import json

    from topofuse.cli import main

    overrides = dict(n_per_class=5, image_size=32, noise_sigma=0.05,
                     epochs_visual=2, epochs_topo=2, epochs_joint=2,
                     batch_size=5, calib_images=6, calib_grid=9, calib_samples=4,
                     view_pool=2, seed=11)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(overrides))
    main(["train-toy", "--config", str(cfg_path), "--out", str(tmp_path / "run1")])
    main(["train-toy", "--config", str(cfg_path), "--out", str(tmp_path / "run2")])
    c1 = (tmp_path / "run1" / "curves.csv").read_bytes()
    c2 = (tmp_path / "run2" / "curves.csv").read_bytes()
    assert c1 == c2
    b1 = (tmp_path / "run1" / "bundle" / "topo.bin").read_bytes()
    b2 = (tmp_path / "run2" / "bundle" / "topo.bin").read_bytes()
    assert b1 == b2
    report(10, "two fixed-seed train-toy runs produced byte-identical loss "
               "curves and checkpoints")
