"""Mixture-of-experts fusion of visual and topological features.

Raw encoder outputs are projected into a shared 256-d space by separate
3-layer MLP heads. Five experts then read the projected pair (f, t):

1. visual only           e1 = MLP(f)
2. topology only         e2 = MLP(t)
3. concatenation         e3 = MLP([f; t])
4. gated blending        e4 = MLP(g*f + (1-g)*t),  g = sigmoid(MLP([f; t]))
5. cross-attention       e5 = MLP([f'; t']) with f' = f + Attn(Q=f, KV=t)
                         and t' = t + Attn(Q=t, KV=f), each 256-vector
                         treated as a single attention token

All experts output 512-d. A gating MLP (512-256-128-5) over [f; t]
produces softmax weights, the fused state is the gate-weighted sum of
expert outputs, and a final projection maps it to the 256-d embedding z.
Gates are computed independently per view.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cubical import restrict_and_compute
from .encoder import EncoderConfig, TopoEncoder, select_points, stack_points
from .image import GrayImage, extract_roi
from .nn import (
    MLP,
    MultiHeadAttention,
    ParameterSet,
    Tensor,
    concat,
    load_tensors,
    matmul,
    reshape,
    save_tensors,
    sigmoid,
    softmax,
    tsum,
)
from .rng import Stream
from .visual import VisualConfig, VisualEncoder

__all__ = ["FusionConfig", "FusedBatch", "FusionModule", "ModelBundle",
           "save_bundle", "load_bundle", "infer_single", "infer_batch"]


@dataclass(frozen=True)
class FusionConfig:
    feature_dim: int = 256
    expert_dim: int = 512
    expert_hidden: int = 512
    attn_heads: int = 4
    gate_dims: tuple = (512, 256, 128, 5)
    proj_dims: tuple = (512, 512, 256)
    head_hidden: int = 256
    n_experts: int = 5


@dataclass
class FusedBatch:
    """One view's fusion outputs; z stays a graph tensor for training."""

    f: Tensor                 # (B, 256) projected visual features
    t: Tensor                 # (B, 256) projected topological features
    experts: Tensor           # (B, 5, 512)
    gate: Tensor              # (B, 5), rows on the simplex
    blend: Tensor             # (B, 256) expert-4 gate g
    h: Tensor                 # (B, 512) weighted expert sum
    z: Tensor                 # (B, 256) final embedding


class FusionModule:
    def __init__(self, params: ParameterSet, stream: Stream,
                 visual_raw_dim: int, topo_raw_dim: int = 256,
                 config: FusionConfig = FusionConfig(), name: str = "fusion"):
        cfg = config
        self.config = cfg
        d = cfg.feature_dim
        e, hdn = cfg.expert_dim, cfg.expert_hidden
        hh = cfg.head_hidden
        self.vis_head = MLP(params, f"{name}.vis_head", stream, (visual_raw_dim, hh, hh, d))
        self.topo_head = MLP(params, f"{name}.topo_head", stream, (topo_raw_dim, hh, hh, d))
        self.e1 = MLP(params, f"{name}.e1", stream, (d, hdn, hdn, e))
        self.e2 = MLP(params, f"{name}.e2", stream, (d, hdn, hdn, e))
        self.e3 = MLP(params, f"{name}.e3", stream, (2 * d, hdn, hdn, e))
        self.e4_gate = MLP(params, f"{name}.e4_gate", stream, (2 * d, hdn, hdn, d))
        self.e4 = MLP(params, f"{name}.e4", stream, (d, hdn, hdn, e))
        self.e5_cross_f = MultiHeadAttention(params, f"{name}.e5_cross_f", stream, d, cfg.attn_heads)
        self.e5_cross_t = MultiHeadAttention(params, f"{name}.e5_cross_t", stream, d, cfg.attn_heads)
        self.e5 = MLP(params, f"{name}.e5", stream, (2 * d, hdn, hdn, e))
        self.gate = MLP(params, f"{name}.gate", stream, cfg.gate_dims)
        self.out_proj = MLP(params, f"{name}.proj", stream, cfg.proj_dims)

    def project(self, visual_raw: Tensor, topo_raw: Tensor):
        """Raw encoder outputs -> shared 256-d feature pair (f, t)."""
        return self.vis_head(visual_raw), self.topo_head(topo_raw)

    def run_experts(self, f: Tensor, t: Tensor):
        ft = concat([f, t], axis=1)
        e1 = self.e1(f)
        e2 = self.e2(t)
        e3 = self.e3(ft)
        g = sigmoid(self.e4_gate(ft))
        blended = g * f + (Tensor(1.0) - g) * t
        e4 = self.e4(blended)
        bsz, d = f.shape
        f_tok = reshape(f, (bsz, 1, d))
        t_tok = reshape(t, (bsz, 1, d))
        f_prime = f + reshape(self.e5_cross_f(f_tok, t_tok, t_tok), (bsz, d))
        t_prime = t + reshape(self.e5_cross_t(t_tok, f_tok, f_tok), (bsz, d))
        e5 = self.e5(concat([f_prime, t_prime], axis=1))
        return (e1, e2, e3, e4, e5), g

    def fuse(self, f: Tensor, t: Tensor) -> FusedBatch:
        experts, blend = self.run_experts(f, t)
        bsz = f.shape[0]
        e_dim = self.config.expert_dim
        stacked = concat([reshape(e, (bsz, 1, e_dim)) for e in experts], axis=1)
        gate = softmax(self.gate(concat([f, t], axis=1)), axis=-1)
        h = tsum(stacked * reshape(gate, (bsz, self.config.n_experts, 1)), axis=1)
        z = self.out_proj(h)
        return FusedBatch(f=f, t=t, experts=stacked, gate=gate, blend=blend, h=h, z=z)

    def __call__(self, visual_raw: Tensor, topo_raw: Tensor) -> FusedBatch:
        f, t = self.project(visual_raw, topo_raw)
        return self.fuse(f, t)


# ---------------------------------------------------------------------------
# Checkpoint bundle: manifest.json + one tensor file per component
# ---------------------------------------------------------------------------

_BUNDLE_FORMAT = "topofuse-bundle-v1"


@dataclass
class ModelBundle:
    visual_params: ParameterSet
    topo_params: ParameterSet
    fusion_params: ParameterSet
    visual_encoder: VisualEncoder
    topo_encoder: TopoEncoder
    fusion: FusionModule
    visual_config: VisualConfig
    encoder_config: EncoderConfig
    fusion_config: FusionConfig

    @staticmethod
    def create(stream: Stream,
               visual_config: VisualConfig = VisualConfig(),
               encoder_config: EncoderConfig = EncoderConfig(),
               fusion_config: FusionConfig = FusionConfig()) -> "ModelBundle":
        vp, tp, fp = ParameterSet(), ParameterSet(), ParameterSet()
        visual = VisualEncoder(vp, stream.spawn("visual"), visual_config)
        topo = TopoEncoder(tp, stream.spawn("topo"), encoder_config)
        fusion = FusionModule(fp, stream.spawn("fusion"),
                              visual_raw_dim=visual_config.out_dim,
                              topo_raw_dim=encoder_config.out_dim,
                              config=fusion_config)
        return ModelBundle(vp, tp, fp, visual, topo, fusion,
                           visual_config, encoder_config, fusion_config)

    def all_parameter_sets(self):
        return (self.visual_params, self.topo_params, self.fusion_params)


def _tupleize(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def save_bundle(bundle: ModelBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": _BUNDLE_FORMAT,
        "visual": asdict(bundle.visual_config),
        "encoder": asdict(bundle.encoder_config),
        "fusion": asdict(bundle.fusion_config),
        "files": {"visual": "visual.bin", "topo": "topo.bin", "fusion": "fusion.bin"},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    save_tensors(directory / "visual.bin", bundle.visual_params.state_arrays(),
                 meta={"visual_config": asdict(bundle.visual_config)})
    save_tensors(directory / "topo.bin", bundle.topo_params.state_arrays(),
                 meta={"encoder_config": asdict(bundle.encoder_config)})
    save_tensors(directory / "fusion.bin", bundle.fusion_params.state_arrays(),
                 meta={"fusion_config": asdict(bundle.fusion_config)})


def load_bundle(directory) -> ModelBundle:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != _BUNDLE_FORMAT:
        raise ValueError(f"{directory}: unknown bundle format {manifest.get('format')!r}")
    bundle = ModelBundle.create(
        Stream(key=0),
        visual_config=VisualConfig(**_tupleize(manifest["visual"])),
        encoder_config=EncoderConfig(**_tupleize(manifest["encoder"])),
        fusion_config=FusionConfig(**_tupleize(manifest["fusion"])))
    files = manifest["files"]
    bundle.visual_params.load_arrays(load_tensors(directory / files["visual"])[0])
    bundle.topo_params.load_arrays(load_tensors(directory / files["topo"])[0])
    bundle.fusion_params.load_arrays(load_tensors(directory / files["fusion"])[0])
    return bundle


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def infer_batch(bundle: ModelBundle, images, rois=None) -> np.ndarray:
    """Embed clean images: ROI -> diagram -> encoders -> fusion -> z.

    No augmentation is applied; deterministic given the bundle. ``rois``
    may carry precomputed masks aligned with ``images``.
    """
    selected = []
    for i, img in enumerate(images):
        roi = rois[i] if rois is not None else extract_roi(img)
        pd = restrict_and_compute(img, roi)
        selected.append(select_points(pd, bundle.encoder_config.k_h0,
                                      bundle.encoder_config.k_h1))
    pts, valid = stack_points(selected)
    t_raw = bundle.topo_encoder(pts, valid)
    pixels = np.stack([img.pixels for img in images])
    f_raw = bundle.visual_encoder(pixels)
    fused = bundle.fusion(f_raw, t_raw)
    return fused.z.data


def infer_single(img: GrayImage, bundle: ModelBundle,
                 roi_method: str = "otsu-largest-component",
                 mask_path=None) -> np.ndarray:
    """256-d embedding of one image through the full fused pipeline."""
    roi = extract_roi(img, method=roi_method, mask_path=mask_path)
    return infer_batch(bundle, [img], rois=[roi])[0]
