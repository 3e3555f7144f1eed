"""Three-stage training on the synthetic shape corpus.

Stage 1 pretrains the visual encoder contrastively on standard image
augmentations. Stage 2 pretrains the topology encoder on diagram pairs
from topology-weak/strong augmented views. Stage 3 fine-tunes everything
jointly through the mixture-of-experts fusion on the same kind of view
pairs. All stages share one loss slot (NT-Xent by default, Barlow
optionally) and AdamW with a cosine learning-rate schedule.

Every random draw is keyed structurally by (seed, stage, epoch, item), so
fixed seeds give bit-identical loss curves and resuming from a saved
state reproduces the uninterrupted run exactly. Augmented topology views
are drawn from a small per-image pool that epochs cycle through, bounding
the number of persistence computations; the pool size is configuration.

For each topology view the sampled operations are applied twice with the
same noise realization: to the unmasked image (what the visual branch
sees) and to the ROI-masked image (what the diagram is computed on), so
the calibrated distance bands describe exactly the diagrams used in
training.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import (
    CalibrationTable,
    calibrate,
    default_combo_templates,
    sample_view_pair,
)
from .corpus import CorpusConfig, ShapeCorpus, generate_corpus
from .cubical import compute_pd
from .encoder import EncoderConfig, SelectedPoints, select_points, stack_points
from .fusion import FusionConfig, ModelBundle, save_bundle
from .image import GrayImage, apply_mask, extract_roi
from .losses import LOSSES
from .nn import MLP, AdamW, ParameterSet, Tensor, cosine_lr, no_grad, save_tensors, load_tensors
from .probe import ProbeResult, linear_probe
from .rng import Stream
from .visual import VisualConfig

__all__ = [
    "TrainConfig",
    "PreparedData",
    "PipelineState",
    "TrainResult",
    "prepare_data",
    "train_pipeline",
    "save_state",
    "load_state",
    "embed_corpus",
    "probe_embeddings",
    "write_curves_csv",
    "toy_config",
    "headline_experiment",
    "attention_ablation",
]

STAGES = ("visual", "topo", "joint")

_BAND_MODES = {
    "weak_strong": ("weak", "strong"),
    "weak_weak": ("weak", "weak"),
    "strong_strong": ("strong", "strong"),
}


@dataclass(frozen=True)
class TrainConfig:
    # corpus
    n_per_class: int = 300
    image_size: int = 32
    noise_sigma: float = 0.04
    corpus_seed: int = 7
    # calibration
    calib_images: int = 12
    calib_grid: int = 17
    calib_samples: int = 10
    calib_seed: int = 3
    # optimization
    seed: int = 0
    batch_size: int = 64
    lr: float = 3e-4
    topo_lr: float | None = None   # stage-2 override; None = ``lr``
    joint_lr: float | None = None  # stage-3 override; fusion trains from scratch
    min_lr: float = 1e-5
    weight_decay: float = 1e-4
    temperature: float = 0.2
    loss: str = "nt_xent"
    joint_loss: str | None = None  # stage-3 override; None = same as ``loss``
    epochs_visual: int = 30
    epochs_topo: int = 30
    epochs_joint: int = 30
    # topology views
    band_mode: str = "weak_strong"
    view_pool: int = 4
    freeze_encoders_in_joint: bool = False
    joint_encoder_lr_scale: float = 1.0  # damp encoder updates while fusion trains
    train_count: int | None = None  # train stages on the first k corpus images
    # architecture
    encoder: EncoderConfig = EncoderConfig()
    fusion: FusionConfig = FusionConfig()
    visual: VisualConfig = VisualConfig()
    head_dim: int = 128

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; options: {sorted(LOSSES)}")
        if self.joint_loss is not None and self.joint_loss not in LOSSES:
            raise ValueError(f"unknown joint loss {self.joint_loss!r}")
        if self.band_mode not in _BAND_MODES:
            raise ValueError(f"unknown band mode {self.band_mode!r}")
        if self.view_pool < 1:
            raise ValueError("view_pool must be at least 1")
        if self.batch_size < 2:
            raise ValueError("contrastive batches need at least 2 instances")

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(n_per_class=self.n_per_class, size=self.image_size,
                            noise_sigma=self.noise_sigma, seed=self.corpus_seed)


def toy_config(**overrides) -> TrainConfig:
    return TrainConfig(**overrides)


def headline_config(**overrides) -> TrainConfig:
    """Shrunk schedule for the 5-seed headline comparison on one CPU.

    The architecture is untouched; only corpus size, epochs, and the
    stage-2 learning rate are scaled down so the whole comparison stays
    within a laptop-scale time budget. Stage 2 runs gently: at this data
    scale aggressive diagram-encoder updates only drift an already strong
    pretrained state.
    """
    base = dict(n_per_class=27, image_size=32, noise_sigma=0.06,
                epochs_visual=6, epochs_topo=2, epochs_joint=6,
                batch_size=16, lr=3e-4, topo_lr=3e-5, view_pool=2, loss="barlow",
                calib_images=12, calib_grid=13, calib_samples=8)
    base.update(overrides)
    return TrainConfig(**base)


def ablation_config(**overrides) -> TrainConfig:
    """Stage-2-only schedule for the attention ablation."""
    base = dict(n_per_class=27, image_size=32, noise_sigma=0.06,
                epochs_visual=0, epochs_topo=3, epochs_joint=0,
                batch_size=16, lr=3e-4, view_pool=2, loss="barlow",
                calib_images=12, calib_grid=13, calib_samples=8)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# Data preparation: corpus, ROIs, clean diagrams, calibration table
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    corpus: ShapeCorpus
    rois: list
    masked: list
    clean_selected: list
    table: CalibrationTable
    view_cache: dict = field(default_factory=dict)

    def pixels(self, indices) -> np.ndarray:
        return np.stack([self.corpus.images[i].pixels for i in indices])


def prepare_data(config: TrainConfig, table: CalibrationTable | None = None) -> PreparedData:
    corpus = generate_corpus(config.corpus_config())
    rois = [extract_roi(img) for img in corpus.images]
    masked = [apply_mask(img, roi) for img, roi in zip(corpus.images, rois)]
    k0, k1 = config.encoder.k_h0, config.encoder.k_h1
    clean_selected = [select_points(compute_pd(m), k0, k1) for m in masked]
    if table is None:
        table = calibrate(masked[:config.calib_images], default_combo_templates(),
                          grid=config.calib_grid, m_samples=config.calib_samples,
                          stream=Stream(key=config.calib_seed),
                          dataset=f"shape-corpus-{config.corpus_seed}")
    return PreparedData(corpus=corpus, rois=rois, masked=masked,
                        clean_selected=clean_selected, table=table)


@dataclass
class ViewPair:
    """One precomputed topology-aware view pair for one image."""

    pixels_a: np.ndarray
    pixels_b: np.ndarray
    sel_a: SelectedPoints
    sel_b: SelectedPoints


def _view_pair(data: PreparedData, config: TrainConfig, idx: int, slot: int) -> ViewPair:
    key = (config.seed, config.band_mode, idx, slot)
    cached = data.view_cache.get(key)
    if cached is not None:
        return cached
    bands = _BAND_MODES[config.band_mode]
    stream_key = Stream(key=config.seed).spawn("views", config.band_mode, idx, slot).key
    img = data.corpus.images[idx]
    # same ops and noise applied to the unmasked image (visual branch) and
    # to the pre-masked image (topology branch)
    vis_a, vis_b, ops_a, ops_b = sample_view_pair(img, data.table, Stream(key=stream_key), bands)
    msk_a, msk_b, ops_a2, ops_b2 = sample_view_pair(data.masked[idx], data.table,
                                                    Stream(key=stream_key), bands)
    assert ops_a == ops_a2 and ops_b == ops_b2
    k0, k1 = config.encoder.k_h0, config.encoder.k_h1
    pair = ViewPair(
        pixels_a=vis_a.pixels, pixels_b=vis_b.pixels,
        sel_a=select_points(compute_pd(msk_a), k0, k1),
        sel_b=select_points(compute_pd(msk_b), k0, k1))
    data.view_cache[key] = pair
    return pair


# ---------------------------------------------------------------------------
# Standard (uncalibrated) visual augmentations for stage 1
# ---------------------------------------------------------------------------

def _shift(px: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = px.shape
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return px
    padded = np.pad(px, pad, mode="edge")
    return padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def _visual_view(img: GrayImage, stream: Stream, strong: bool) -> np.ndarray:
    px = img.pixels
    if stream.uniform() < 0.5:
        px = px[:, ::-1]
    limit = 3 if strong else 2
    px = _shift(px, stream.integer(-limit, limit + 1), stream.integer(-limit, limit + 1))
    scale = 1.0 + stream.uniform(-0.3, 0.3) * (1.5 if strong else 1.0)
    shift = stream.uniform(-0.12, 0.12) * (1.5 if strong else 1.0)
    px = (px - 0.5) * scale + 0.5 + shift
    noise = 0.03 if strong else 0.015
    px = px + noise * stream.normals(px.shape)
    return np.clip(px, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineState:
    """Everything needed to continue a run: parameters, optimizer, position."""

    arrays: dict
    opt_arrays: dict | None
    stage: str
    epochs_done: int
    curves: list


@dataclass
class TrainResult:
    bundle: ModelBundle
    gv_params: ParameterSet
    gt_params: ParameterSet
    curves: list
    data: PreparedData
    config: TrainConfig
    state: PipelineState


class _Run:
    def __init__(self, config: TrainConfig, data: PreparedData):
        self.config = config
        self.data = data
        init = Stream(key=config.seed).spawn("init")
        self.bundle = ModelBundle.create(init, visual_config=config.visual,
                                         encoder_config=config.encoder,
                                         fusion_config=config.fusion)
        self.gv_params = ParameterSet()
        d_vis = config.visual.out_dim
        self.g_v = MLP(self.gv_params, "gv", init.spawn("gv"),
                       (d_vis, 256, 256, config.head_dim))
        self.gt_params = ParameterSet()
        d_t = config.encoder.out_dim
        self.g_t = MLP(self.gt_params, "gt", init.spawn("gt"),
                       (d_t, 256, 256, config.head_dim))
        self.loss_fn = LOSSES[config.loss]
        self.curves = []

    # --- state management ---
    def component_sets(self) -> dict:
        return {
            "visual": self.bundle.visual_params,
            "topo": self.bundle.topo_params,
            "fusion": self.bundle.fusion_params,
            "gv": self.gv_params,
            "gt": self.gt_params,
        }

    def snapshot(self, opt: AdamW | None, stage: str, epochs_done: int) -> PipelineState:
        return PipelineState(
            arrays={name: ps.state_arrays() for name, ps in self.component_sets().items()},
            opt_arrays=None if opt is None else opt.state_arrays(),
            stage=stage, epochs_done=epochs_done, curves=list(self.curves))

    def load(self, state: PipelineState):
        for name, ps in self.component_sets().items():
            ps.load_arrays(state.arrays[name])
        self.curves = list(state.curves)

    # --- stage parameter groups ---
    def stage_params(self, stage: str) -> ParameterSet:
        merged = ParameterSet()
        if stage == "visual":
            merged.merge(self.bundle.visual_params, "visual/")
            merged.merge(self.gv_params, "gv/")
        elif stage == "topo":
            merged.merge(self.bundle.topo_params, "topo/")
            merged.merge(self.gt_params, "gt/")
        else:
            merged.merge(self.bundle.fusion_params, "fusion/")
            if not self.config.freeze_encoders_in_joint:
                merged.merge(self.bundle.visual_params, "visual/")
                merged.merge(self.bundle.topo_params, "topo/")
        return merged

    # --- batches ---
    def _epoch_batches(self, stage: str, epoch: int):
        n = len(self.data.corpus)
        if self.config.train_count is not None:
            n = min(n, self.config.train_count)
        order = Stream(key=self.config.seed).spawn("order", stage, epoch).permutation(n)
        bs = self.config.batch_size
        for start in range(0, n, bs):
            batch = order[start:start + bs]
            if len(batch) >= 2:
                yield batch.tolist()

    # --- stage steps ---
    def _visual_loss(self, batch, epoch: int) -> Tensor:
        cfg = self.config
        views_a, views_b = [], []
        for idx in batch:
            s = Stream(key=cfg.seed).spawn("vaug", epoch, idx)
            views_a.append(_visual_view(self.data.corpus.images[idx], s.spawn("a"), strong=False))
            views_b.append(_visual_view(self.data.corpus.images[idx], s.spawn("b"), strong=True))
        z_a = self.g_v(self.bundle.visual_encoder(np.stack(views_a)))
        z_b = self.g_v(self.bundle.visual_encoder(np.stack(views_b)))
        return self._contrast(z_a, z_b)

    def _topo_views(self, batch, epoch: int):
        pairs = [_view_pair(self.data, self.config, idx, epoch % self.config.view_pool)
                 for idx in batch]
        usable = [p for p in pairs
                  if p.sel_a.valid.any() or p.sel_b.valid.any()]
        if len(usable) < 2:
            warnings.warn("skipping degenerate batch: all diagrams empty")
            return None
        return usable

    def _topo_loss(self, batch, epoch: int) -> Tensor | None:
        pairs = self._topo_views(batch, epoch)
        if pairs is None:
            return None
        pts_a, valid_a = stack_points([p.sel_a for p in pairs])
        pts_b, valid_b = stack_points([p.sel_b for p in pairs])
        z_a = self.g_t(self.bundle.topo_encoder(pts_a, valid_a))
        z_b = self.g_t(self.bundle.topo_encoder(pts_b, valid_b))
        return self._contrast(z_a, z_b)

    def _joint_loss(self, batch, epoch: int) -> Tensor | None:
        pairs = self._topo_views(batch, epoch)
        if pairs is None:
            return None
        pts_a, valid_a = stack_points([p.sel_a for p in pairs])
        pts_b, valid_b = stack_points([p.sel_b for p in pairs])
        t_a = self.bundle.topo_encoder(pts_a, valid_a)
        t_b = self.bundle.topo_encoder(pts_b, valid_b)
        f_a = self.bundle.visual_encoder(np.stack([p.pixels_a for p in pairs]))
        f_b = self.bundle.visual_encoder(np.stack([p.pixels_b for p in pairs]))
        z_a = self.bundle.fusion(f_a, t_a).z
        z_b = self.bundle.fusion(f_b, t_b).z
        return self._contrast(z_a, z_b, stage="joint")

    def _contrast(self, z_a: Tensor, z_b: Tensor, stage: str = "") -> Tensor:
        name = self.config.loss
        if stage == "joint" and self.config.joint_loss is not None:
            name = self.config.joint_loss
        fn = LOSSES[name]
        if name == "nt_xent":
            return fn(z_a, z_b, self.config.temperature)
        return fn(z_a, z_b)

    def run_stage(self, stage: str, total_epochs: int, start_epoch: int = 0,
                  opt_arrays: dict | None = None,
                  stop_after: tuple | None = None):
        if total_epochs == 0 or start_epoch >= total_epochs:
            return None
        cfg = self.config
        params = self.stage_params(stage)
        base_lr = cfg.lr
        if stage == "topo" and cfg.topo_lr is not None:
            base_lr = cfg.topo_lr
        elif stage == "joint" and cfg.joint_lr is not None:
            base_lr = cfg.joint_lr
        scales = None
        if stage == "joint" and cfg.joint_encoder_lr_scale != 1.0:
            scales = {"visual/": cfg.joint_encoder_lr_scale,
                      "topo/": cfg.joint_encoder_lr_scale}
        opt = AdamW(params, lr=base_lr, weight_decay=cfg.weight_decay, lr_scales=scales)
        if opt_arrays is not None:
            opt.load_arrays(opt_arrays)
        loss_of = {"visual": self._visual_loss, "topo": self._topo_loss,
                   "joint": self._joint_loss}[stage]
        for epoch in range(start_epoch, total_epochs):
            lr = cosine_lr(base_lr, epoch, total_epochs, cfg.min_lr)
            losses = []
            for batch in self._epoch_batches(stage, epoch):
                loss = loss_of(batch, epoch)
                if loss is None:
                    continue
                params.zero_grad()
                loss.backward()
                opt.step(lr=lr)
                losses.append(loss.item())
            epoch_loss = float(np.mean(losses)) if losses else float("nan")
            self.curves.append({"stage": stage, "epoch": epoch, "loss": epoch_loss})
            if stop_after == (stage, epoch):
                return self.snapshot(opt, stage, epoch + 1)
        return None


def train_pipeline(config: TrainConfig, data: PreparedData | None = None,
                   init: PipelineState | None = None,
                   stages: tuple = STAGES,
                   stop_after: tuple | None = None) -> TrainResult:
    """Run (part of) the training schedule.

    ``init`` restores parameters (and, when resuming the same stage, the
    optimizer) from a previous snapshot; ``stop_after=(stage, epoch)``
    halts once that epoch finishes and records a resumable state.
    ``stages`` restricts which stages run, e.g. ("topo", "joint") to
    continue from pretrained visual weights.
    """
    if data is None:
        data = prepare_data(config)
    run = _Run(config, data)
    epochs = {"visual": config.epochs_visual, "topo": config.epochs_topo,
              "joint": config.epochs_joint}
    resume_stage = None
    resume_epochs = 0
    resume_opt = None
    if init is not None:
        run.load(init)
        if init.stage in stages and init.epochs_done < epochs.get(init.stage, 0):
            resume_stage = init.stage
            resume_epochs = init.epochs_done
            resume_opt = init.opt_arrays
            stages = tuple(stages[stages.index(init.stage):])
        elif init.stage in stages:
            # stage already complete in the snapshot: continue after it
            pos = stages.index(init.stage)
            stages = tuple(stages[pos + 1:])
    final_state = None
    for stage in stages:
        start = resume_epochs if stage == resume_stage else 0
        opt_arrays = resume_opt if stage == resume_stage else None
        state = run.run_stage(stage, epochs[stage], start_epoch=start,
                              opt_arrays=opt_arrays, stop_after=stop_after)
        if state is not None:
            final_state = state
            break
    if final_state is None:
        last = stages[-1] if stages else STAGES[-1]
        final_state = run.snapshot(None, last, epochs.get(last, 0))
    return TrainResult(bundle=run.bundle, gv_params=run.gv_params,
                       gt_params=run.gt_params, curves=run.curves,
                       data=data, config=config, state=final_state)


# ---------------------------------------------------------------------------
# State files
# ---------------------------------------------------------------------------

def save_state(state: PipelineState, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    flat = {}
    for comp, arrays in state.arrays.items():
        for name, arr in arrays.items():
            flat[f"{comp}//{name}"] = arr
    if state.opt_arrays:
        for name, arr in state.opt_arrays.items():
            flat[f"__opt__//{name}"] = arr
    meta = {"stage": state.stage, "epochs_done": state.epochs_done,
            "curves": state.curves, "has_opt": state.opt_arrays is not None}
    save_tensors(directory / "state.bin", flat, meta=meta)


def load_state(directory) -> PipelineState:
    flat, meta = load_tensors(Path(directory) / "state.bin")
    arrays: dict = {}
    opt_arrays: dict = {}
    for key, arr in flat.items():
        comp, name = key.split("//", 1)
        if comp == "__opt__":
            opt_arrays[name] = arr
        else:
            arrays.setdefault(comp, {})[name] = arr
    return PipelineState(arrays=arrays,
                         opt_arrays=opt_arrays if meta.get("has_opt") else None,
                         stage=meta["stage"], epochs_done=meta["epochs_done"],
                         curves=meta["curves"])


def write_curves_csv(curves, path) -> None:
    lines = ["stage,epoch,loss"]
    for row in curves:
        lines.append(f"{row['stage']},{row['epoch']},{row['loss']:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Embedding + probing
# ---------------------------------------------------------------------------

def embed_corpus(result: TrainResult, which: str = "fused",
                 chunk: int = 64) -> np.ndarray:
    """Clean-image embeddings of the whole corpus from a trained run.

    which: "encoders" (concatenated frozen outputs of the visual and
    topology encoders, the standard frozen-feature probe surface),
    "fused" (the 512-d gate-weighted expert state h), "final" (the 256-d
    z the contrastive loss sees), "visual" (raw visual features), or
    "topo" (topology-encoder output).
    """
    data = result.data
    bundle = result.bundle
    n = len(data.corpus)
    outs = []
    with no_grad():
        for start in range(0, n, chunk):
            idx = list(range(start, min(start + chunk, n)))
            if which == "visual":
                outs.append(bundle.visual_encoder(data.pixels(idx)).data)
                continue
            pts, valid = stack_points([data.clean_selected[i] for i in idx])
            t_raw = bundle.topo_encoder(pts, valid)
            if which == "topo":
                outs.append(t_raw.data)
                continue
            f_raw = bundle.visual_encoder(data.pixels(idx))
            if which == "encoders":
                outs.append(np.concatenate([f_raw.data, t_raw.data], axis=1))
                continue
            fused = bundle.fusion(f_raw, t_raw)
            if which == "fused":
                outs.append(fused.h.data)
            elif which == "final":
                outs.append(fused.z.data)
            else:
                raise ValueError(f"unknown embedding kind {which!r}")
    return np.concatenate(outs, axis=0)


def probe_embeddings(result: TrainResult, which: str = "fused",
                     train_fraction: float = 0.5, split_seed: int = 17,
                     epochs: int = 100) -> ProbeResult:
    z = embed_corpus(result, which)
    labels = result.data.corpus.labels
    train_idx, test_idx = result.data.corpus.split(train_fraction, Stream(key=split_seed))
    return linear_probe(z[train_idx], labels[train_idx],
                        z[test_idx], labels[test_idx], epochs=epochs)


# ---------------------------------------------------------------------------
# Experiments: headline comparison and attention ablation
# ---------------------------------------------------------------------------

def multi_split_probe(result: TrainResult, which: str, train_fraction: float = 0.5,
                      n_splits: int = 5) -> float:
    """Probe accuracy averaged over several train/test splits."""
    return float(np.mean([
        probe_embeddings(result, which, train_fraction, split_seed=100 + k).accuracy
        for k in range(n_splits)]))


def headline_experiment(config: TrainConfig, seeds=(0, 1, 2, 3, 4),
                        train_fraction: float = 0.5, verbose: bool = False,
                        probe_surface: str = "encoders") -> dict:
    """Full pipeline vs visual-only pretraining vs symmetric weak+weak views.

    One shared corpus/calibration; per seed, stage 1 runs once and both
    topology variants continue from its weights. Probes run on frozen
    clean-image representations: the fused state handed to downstream
    tasks for the trained pipelines, the raw visual features for the
    visual-only baseline, and the pretrained (stage-2) topology-encoder
    output for the topology-only probe. Accuracies are averaged over
    several probe splits per run.
    """
    data = prepare_data(config)
    acc = {"full": [], "visual_only": [], "weak_weak": [], "topo_only": []}
    surfaces = {"full_fused": [], "weak_weak_fused": [],
                "full_encoders": [], "weak_weak_encoders": []}
    for seed in seeds:
        cfg = replace(config, seed=seed)
        stage1 = train_pipeline(cfg, data=data, stages=("visual",))
        pretrained = train_pipeline(cfg, data=data, stages=("topo",), init=stage1.state)
        full = train_pipeline(cfg, data=data, stages=("joint",), init=pretrained.state)
        symm_cfg = replace(cfg, band_mode="weak_weak")
        symm_pre = train_pipeline(symm_cfg, data=data, stages=("topo",), init=stage1.state)
        symm = train_pipeline(symm_cfg, data=data, stages=("joint",), init=symm_pre.state)
        for surface in ("fused", "encoders"):
            surfaces[f"full_{surface}"].append(multi_split_probe(full, surface, train_fraction))
            surfaces[f"weak_weak_{surface}"].append(multi_split_probe(symm, surface, train_fraction))
        acc["full"].append(surfaces[f"full_{probe_surface}"][-1])
        acc["weak_weak"].append(surfaces[f"weak_weak_{probe_surface}"][-1])
        acc["visual_only"].append(multi_split_probe(stage1, "visual", train_fraction))
        acc["topo_only"].append(multi_split_probe(pretrained, "topo", train_fraction))
        if verbose:
            print(f"seed {seed}: " + " ".join(f"{k}={v[-1]:.3f}" for k, v in acc.items()),
                  flush=True)
    from .stats import paired_ttest

    means = {k: float(np.mean(v)) for k, v in acc.items()}
    report = {
        "per_seed": acc,
        "surfaces": surfaces,
        "probe_surface": probe_surface,
        "means": means,
        "margin_vs_visual": means["full"] - means["visual_only"],
        "margin_vs_weak_weak": means["full"] - means["weak_weak"],
        "ttest_vs_visual": paired_ttest(acc["full"], acc["visual_only"]),
    }
    return report


def attention_ablation(config: TrainConfig, seeds=(0, 1, 2, 3, 4),
                       train_fraction: float = 0.5, verbose: bool = False) -> dict:
    """Topology-encoder pretraining with self- or cross-attention removed.

    Probes the topology-encoder output after stage 2 only; returns
    per-seed accuracies for each variant.
    """
    acc = {"no_cross": [], "no_self": []}
    variants = {
        "no_cross": replace(config, encoder=replace(config.encoder, use_cross_attn=False)),
        "no_self": replace(config, encoder=replace(config.encoder, use_self_attn=False)),
    }
    data_by_variant = {name: prepare_data(cfg) for name, cfg in variants.items()}
    for seed in seeds:
        for name, cfg in variants.items():
            run = train_pipeline(replace(cfg, seed=seed),
                                 data=data_by_variant[name], stages=("topo",))
            acc[name].append(probe_embeddings(run, "topo", train_fraction).accuracy)
        if verbose:
            print(f"seed {seed}: no_cross={acc['no_cross'][-1]:.3f} "
                  f"no_self={acc['no_self'][-1]:.3f}")
    wins = sum(c < s for c, s in zip(acc["no_cross"], acc["no_self"]))
    return {"per_seed": acc, "cross_worse_count": wins, "n_seeds": len(seeds)}


def save_run(result: TrainResult, out_dir) -> None:
    """Persist a finished run: bundle, heads, curves, calibration table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_bundle(result.bundle, out_dir / "bundle")
    save_tensors(out_dir / "heads.bin",
                 {**{f"gv//{k}": v for k, v in result.gv_params.state_arrays().items()},
                  **{f"gt//{k}": v for k, v in result.gt_params.state_arrays().items()}})
    write_curves_csv(result.curves, out_dir / "curves.csv")
    result.data.table.save(out_dir / "calibration.json")
    (out_dir / "config.json").write_text(
        json.dumps(asdict(result.config), indent=2, default=str) + "\n")
