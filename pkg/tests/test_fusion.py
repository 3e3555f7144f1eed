import numpy as np
import pytest

from topofuse.fusion import (
    FusionConfig,
    FusionModule,
    ModelBundle,
    infer_single,
    load_bundle,
    save_bundle,
)
from topofuse.nn import ParameterSet, Tensor, tsum
from topofuse.rng import Stream

from conftest import ring_image
from gradcheck import finite_difference_check


def build_fusion(key=0, visual_raw_dim=16):
    params = ParameterSet()
    fusion = FusionModule(params, Stream(key=key), visual_raw_dim=visual_raw_dim)
    return params, fusion


def random_features(key, bsz, dim=256):
    s = Stream(key=key)
    return Tensor(s.normals((bsz, dim)) * 0.3), Tensor(s.normals((bsz, dim)) * 0.3)


class TestProjection:
    def test_output_is_256(self, stream):
        params, fusion = build_fusion()
        f, t = fusion.project(Tensor(stream.normals((3, 16))), Tensor(stream.normals((3, 256))))
        assert f.shape == (3, 256) and t.shape == (3, 256)

    def test_zero_final_layer_gives_bias(self, stream):
        params, fusion = build_fusion(key=1)
        params["fusion.vis_head.2.w"].data = np.zeros_like(params["fusion.vis_head.2.w"].data)
        bias = Stream(key=2).normals(256)
        params["fusion.vis_head.2.b"].data = bias.copy()
        f, _ = fusion.project(Tensor(stream.normals((2, 16))), Tensor(stream.normals((2, 256))))
        assert np.allclose(f.data, bias)

    def test_projection_gradcheck(self, stream):
        params, fusion = build_fusion(key=3)
        vr = Tensor(stream.normals((2, 16)))
        tr = Tensor(stream.normals((2, 256)))
        probe = Tensor(Stream(key=4).normals((2, 512)))
        head_params = [params[n] for n in params.names()
                       if n.startswith(("fusion.vis_head", "fusion.topo_head"))]

        def build():
            f, t = fusion.project(vr, tr)
            from topofuse.nn import concat
            return tsum(concat([f, t], axis=1) * probe)

        worst = finite_difference_check(build, head_params, Stream(key=5),
                                        n_coords=3, tol=1e-5)
        assert worst < 1e-5


class TestExperts:
    def test_all_outputs_512(self):
        _, fusion = build_fusion(key=6)
        f, t = random_features(7, bsz=4)
        experts, g = fusion.run_experts(f, t)
        assert len(experts) == 5
        for e in experts:
            assert e.shape == (4, 512)
        assert g.shape == (4, 256)
        assert np.all((g.data > 0) & (g.data < 1))

    def test_expert4_blend_is_identity_when_f_equals_t(self):
        _, fusion = build_fusion(key=8)
        f, _ = random_features(9, bsz=3)
        experts_same, _ = fusion.run_experts(f, f)
        # blended input equals f regardless of g, so e4 == MLP(f) == e4 with any other t sharing f
        direct = fusion.e4(f)
        assert np.allclose(experts_same[3].data, direct.data, atol=1e-12)

    def test_expert5_single_token_attention_closed_form(self):
        _, fusion = build_fusion(key=10)
        f, t = random_features(11, bsz=2)
        # softmax over one key is 1: CrossAttn(Q=f, KV=t) == (t @ Wv) @ Wo
        attn = fusion.e5_cross_f
        expect = (t.data @ attn.w_v.data) @ attn.w_o.data
        out = attn(Tensor(f.data.reshape(2, 1, 256)), Tensor(t.data.reshape(2, 1, 256)),
                   Tensor(t.data.reshape(2, 1, 256)))
        assert np.allclose(out.data.reshape(2, 256), expect, atol=1e-12)


class TestFuse:
    def test_gate_simplex(self):
        _, fusion = build_fusion(key=12)
        for key in range(5):
            f, t = random_features(20 + key, bsz=6)
            fused = fusion.fuse(f, t)
            assert np.all(fused.gate.data >= 0)
            assert np.max(np.abs(fused.gate.data.sum(axis=1) - 1.0)) < 1e-9

    def test_one_hot_gate_reproduces_single_expert(self):
        params, fusion = build_fusion(key=13)
        f, t = random_features(14, bsz=3)
        experts, _ = fusion.run_experts(f, t)
        # force one-hot gates by zeroing the gate MLP and setting its bias
        last = len(fusion.gate.layers) - 1
        params[f"fusion.gate.{last}.w"].data = np.zeros_like(params[f"fusion.gate.{last}.w"].data)
        for i in range(5):
            logits = np.full(5, -1e9)
            logits[i] = 1e9
            params[f"fusion.gate.{last}.b"].data = logits.copy()
            fused = fusion.fuse(f, t)
            expect_onehot = np.zeros(5)
            expect_onehot[i] = 1.0
            assert np.array_equal(fused.gate.data[0], expect_onehot)
            assert np.max(np.abs(fused.h.data - experts[i].data)) == 0.0

    def test_zero_gate_mlp_gives_uniform_mixture(self):
        params, fusion = build_fusion(key=15)
        f, t = random_features(16, bsz=2)
        last = len(fusion.gate.layers) - 1
        params[f"fusion.gate.{last}.w"].data = np.zeros_like(params[f"fusion.gate.{last}.w"].data)
        params[f"fusion.gate.{last}.b"].data = np.zeros(5)
        fused = fusion.fuse(f, t)
        assert np.allclose(fused.gate.data, 0.2)
        experts, _ = fusion.run_experts(f, t)
        mean_experts = np.mean([e.data for e in experts], axis=0)
        assert np.allclose(fused.h.data, mean_experts, atol=1e-12)

    def test_every_expert_receives_gradient(self):
        params, fusion = build_fusion(key=17)
        f_raw = Tensor(Stream(key=18).normals((4, 16)))
        t_raw = Tensor(Stream(key=18).spawn("t").normals((4, 256)))
        params.zero_grad()
        fused = fusion(f_raw, t_raw)
        tsum(fused.z * fused.z).backward()
        for expert in ("e1", "e2", "e3", "e4", "e5"):
            g = params[f"fusion.{expert}.0.w"].grad
            assert g is not None and np.linalg.norm(g) > 0, expert

    def test_full_fuse_gradcheck(self):
        params, fusion = build_fusion(key=19)
        f_raw = Tensor(Stream(key=20).normals((2, 16)))
        t_raw = Tensor(Stream(key=21).normals((2, 256)))
        probe = Tensor(Stream(key=22).normals((2, 256)))

        def build():
            return tsum(fusion(f_raw, t_raw).z * probe)

        worst = finite_difference_check(build, params.tensors(), Stream(key=23),
                                        n_coords=2, tol=1e-4)
        assert worst < 1e-4


class TestBundleAndInference:
    def test_bundle_roundtrip(self, tmp_path):
        bundle = ModelBundle.create(Stream(key=24))
        save_bundle(bundle, tmp_path / "bundle")
        loaded = load_bundle(tmp_path / "bundle")
        for a, b in zip(bundle.all_parameter_sets(), loaded.all_parameter_sets()):
            for name in a.names():
                assert np.array_equal(a[name].data, b[name].data)
        assert loaded.encoder_config == bundle.encoder_config

    def test_infer_single_deterministic(self):
        bundle = ModelBundle.create(Stream(key=25))
        img = ring_image(32, inner=4.0, outer=8.0)
        z1 = infer_single(img, bundle)
        z2 = infer_single(img, bundle)
        assert np.array_equal(z1, z2)
        assert z1.shape == (256,)

    def test_infer_matches_training_forward_with_identity_augmentation(self):
        from topofuse.cubical import restrict_and_compute
        from topofuse.encoder import select_points, stack_points
        from topofuse.image import extract_roi

        bundle = ModelBundle.create(Stream(key=26))
        img = ring_image(32, inner=4.0, outer=8.0)
        z = infer_single(img, bundle)
        # the training path with identity augmentation: same ROI, same PD
        roi = extract_roi(img)
        pts, valid = stack_points([select_points(restrict_and_compute(img, roi))])
        t_raw = bundle.topo_encoder(pts, valid)
        f_raw = bundle.visual_encoder(img.pixels[None])
        fused = bundle.fusion(f_raw, t_raw)
        assert np.array_equal(z, fused.z.data[0])
