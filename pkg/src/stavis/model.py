"""The full audiovisual saliency network: visual pathway, audio encoder,
localization and fusion, with stage-aware losses and inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stavis import tensor as T
from stavis.audio import AudioNetConfig, audio_forward, init_audio_params
from stavis.errors import ConfigError, ShapeError
from stavis.fusion import (
    SCHEMES,
    audio_map_from_localization,
    fuse_concat,
    fuse_late,
    fuse_linear,
    fuse_modulate,
    fuse_modulate_multi,
    init_fusion_params,
    outputs_probability,
    to_unit_range,
    upsample_maps,
)
from stavis.localization import OPERATORS, LocalizationMaps, init_localization_params, localize, project_features
from stavis.losses import LossWeights, loss_cc, loss_ce, loss_combined, loss_nss
from stavis.nn import Params
from stavis.tensor import Tensor
from stavis.visual import N_LEVELS, BackboneConfig, VisualOutputs, init_visual_params, visual_forward

STAGES = ("visual", "av")
LOC_LEVEL = 3  # localization reads X^3


@dataclass
class LocalizationConfig:
    operator: str = "l3"
    hidden_dim: int = 64
    n_out: int = 4
    init_noise: float = 0.01

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigError(f"localization.operator must be one of {OPERATORS}, got {self.operator!r}")
        if self.hidden_dim < 1 or self.n_out < 1:
            raise ConfigError("localization hidden_dim and n_out must be positive")
        if self.init_noise < 0:
            raise ConfigError("localization init_noise must be nonnegative")


@dataclass
class FusionConfig:
    scheme: str = "s3"
    # S^a alone as the prediction: s1 with w_v pinned at zero
    audio_only: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"fusion.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.audio_only and self.scheme != "s1":
            raise ConfigError("fusion.audio_only requires scheme s1")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    audio: AudioNetConfig = field(default_factory=AudioNetConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        n_out = self.localization.n_out
        if self.fusion.scheme == "s2_multi" and n_out != N_LEVELS:
            raise ConfigError(f"scheme s2_multi pairs each of the {N_LEVELS} levels with one map; n_out={n_out}")
        if self.localization.operator == "l1" and n_out != 1:
            raise ConfigError("operator l1 yields a single map; set n_out=1")

    @property
    def n_maps(self) -> int:
        return self.localization.n_out


@dataclass
class AVOutputs:
    visual: VisualOutputs
    localization: LocalizationMaps  # at grid resolution
    maps: Tensor  # localization maps upsampled to (N, N_out, H, W)
    audio_map: Tensor | None  # S^a for schemes that use it
    output: Tensor  # final map, logits or probabilities per ``probability``
    probability: bool


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    params = init_visual_params(cfg.backbone, rng)
    params.update(init_audio_params(cfg.audio, rng))
    loc = cfg.localization
    visual_dim = cfg.backbone.channels[LOC_LEVEL - 1]
    params.update(
        init_localization_params(loc.operator, visual_dim, cfg.audio.out_dim, loc.hidden_dim, loc.n_out, rng, loc.init_noise)
    )
    params.update(init_fusion_params(cfg.fusion.scheme, N_LEVELS, loc.n_out, rng))
    if cfg.fusion.audio_only:
        params["fusion.w_v"].data[...] = 0.0
    return params


class STAViS:
    """Parameters plus the forward passes of both training stages.

    ``frozen`` names parameters the optimizer must leave untouched.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: Params | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        self.frozen: set[str] = {"fusion.w_v"} if cfg.fusion.audio_only else set()
        self.stage = "visual"

    # -- parameter groups ------------------------------------------------

    def stage_params(self, stage: str) -> dict[str, Tensor]:
        """Trainable parameters for a stage: the visual stage only sees visual.*."""
        if stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {stage!r}")
        names = sorted(self.params)
        if stage == "visual":
            names = [n for n in names if n.startswith("visual.")]
        else:
            # the readout only feeds deep supervision; the AV loss never reaches it
            if self.cfg.fusion.scheme in ("s2_multi", "s3"):
                names = [n for n in names if not n.startswith("visual.readout.")]
        return {n: self.params[n] for n in names if n not in self.frozen}

    def warm_start(self, visual: Params) -> None:
        """Copy a visual-stage checkpoint in and seed the fusion conv from the readout.

        For s3/late the visual columns of the concatenation conv start as the
        visual readout and the localization columns at zero, so the AV model
        begins exactly at the visual model's prediction.
        """
        for name, value in visual.items():
            if not name.startswith("visual."):
                continue
            if name not in self.params or self.params[name].shape != value.shape:
                raise ShapeError(f"visual checkpoint entry {name} {value.shape} does not fit the model")
            self.params[name].data[...] = value.data
        if "fusion.cat.w" in self.params:
            w = self.params["fusion.cat.w"].data
            w[...] = 0.0
            w[:, :N_LEVELS] = self.params["visual.readout.w"].data
            self.params["fusion.cat.b"].data[...] = self.params["visual.readout.b"].data

    # -- forward ---------------------------------------------------------

    def visual(self, clips) -> VisualOutputs:
        return visual_forward(clips, self.params, self.cfg.backbone)

    def localize(self, vis: VisualOutputs, audio) -> LocalizationMaps:
        f_v = T.mean(vis.features[LOC_LEVEL - 1], axis=2)
        f_a = audio_forward(audio, self.params, self.cfg.audio)
        if f_a.ndim == 1:
            f_a = f_a.reshape(1, -1)
        if f_a.shape[0] != f_v.shape[0]:
            raise ShapeError(f"{f_v.shape[0]} clips but {f_a.shape[0]} audio segments")
        h_v, h_a = project_features(f_v, f_a, self.params)
        return localize(self.cfg.localization.operator, h_v, h_a, self.params)

    def forward_av(self, clips, audio) -> AVOutputs:
        p, scheme = self.params, self.cfg.fusion.scheme
        vis = self.visual(clips)
        loc = self.localize(vis, audio)
        maps = upsample_maps(loc, self.cfg.backbone.height, self.cfg.backbone.width)
        s_a = None
        if scheme in ("s1", "s2", "late"):
            s_a = audio_map_from_localization(maps, p["fusion.audio_map.w"], p["fusion.audio_map.b"])
        if scheme == "s1":
            out = fuse_linear(vis.logits, s_a, p["fusion.w_v"], p["fusion.w_a"])
        elif scheme == "s2":
            out = fuse_modulate(vis.logits, s_a)
        elif scheme == "s2_multi":
            out = fuse_modulate_multi(vis.saliency, maps, p["fusion.multi.w"], p["fusion.multi.b"])
        else:
            out = fuse_concat(vis.saliency, maps, p["fusion.cat.w"], p["fusion.cat.b"])
            if scheme == "late":
                out = fuse_late(vis.logits, s_a, out, p["fusion.late_v"], p["fusion.late_a"], p["fusion.late_av"])
        if outputs_probability(scheme):
            out = to_unit_range(out, scheme, p)
        return AVOutputs(vis, loc, maps, s_a, out, outputs_probability(scheme))

    # -- losses and inference ---------------------------------------------

    def supervised_maps(self, stage: str, clips, audio) -> list[Tensor]:
        """Probability maps the stage's loss is applied to.

        Visual stage: sigmoid(S^v) plus every sigmoid(A^m) (deep supervision).
        AV stage: only the fused output.
        """
        if stage == "visual":
            vis = self.visual(clips)
            return [T.sigmoid(vis.logits)] + [T.sigmoid(a) for a in vis.activation]
        if stage == "av":
            if audio is None:
                raise ValueError("the audiovisual stage needs audio")
            out = self.forward_av(clips, audio)
            return [out.output if out.probability else T.sigmoid(out.output)]
        raise ConfigError(f"stage must be one of {STAGES}, got {stage!r}")

    def loss_terms(self, stage: str, clips, audio, y_fix, y_den, weights: LossWeights = LossWeights()) -> dict[str, Tensor]:
        """Batch-mean CE, CC and NSS terms (summed over supervised maps) and their weighted total."""
        terms = {"ce": 0.0, "cc": 0.0, "nss": 0.0}
        for p in self.supervised_maps(stage, clips, audio):
            terms["ce"] = terms["ce"] + T.mean(loss_ce(p, y_den))
            terms["cc"] = terms["cc"] + T.mean(loss_cc(p, y_den))
            terms["nss"] = terms["nss"] + T.mean(loss_nss(p, y_fix))
        terms["total"] = loss_combined(terms["ce"], terms["cc"], terms["nss"], weights)
        return terms

    def loss(self, stage: str, clips, audio, y_fix, y_den, weights: LossWeights = LossWeights()) -> Tensor:
        return self.loss_terms(stage, clips, audio, y_fix, y_den, weights)["total"]

    def predict_maps(self, clips, audio=None, stage: str | None = None) -> np.ndarray:
        """(N, H, W) saliency maps. Visual stage: sigmoid(S^v); AV stage: the
        fused map, squashed only when the scheme emits logits."""
        stage = stage or self.stage
        with T.no_grad():
            if stage == "visual" or audio is None:
                return T.sigmoid(self.visual(clips).logits).data
            out = self.forward_av(clips, audio)
            return out.output.data if out.probability else T.sigmoid(out.output).data

    def predict(self, clips, audio) -> np.ndarray:
        return self.predict_maps(clips, audio)
