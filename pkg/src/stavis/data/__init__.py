"""Ground truth, clips, splits, sliding-window inference, file I/O, synthetic data."""

from stavis.data.clips import ClipSample, VideoSource, flip_sample, make_clips
from stavis.data.gt import GroundTruth, densify_fixations, fixation_map, ground_truth
from stavis.data.inference import SaliencyPrediction, sliding_window_predict, window_indices
from stavis.data.manifest import VideoManifest, load_manifest, save_manifest
from stavis.data.splits import Fold, SplitSpec, make_splits
from stavis.data.synth import synth_dataset, write_dataset

__all__ = [
    "ClipSample",
    "Fold",
    "GroundTruth",
    "SaliencyPrediction",
    "SplitSpec",
    "VideoManifest",
    "VideoSource",
    "densify_fixations",
    "fixation_map",
    "flip_sample",
    "ground_truth",
    "load_manifest",
    "make_clips",
    "make_splits",
    "save_manifest",
    "sliding_window_predict",
    "synth_dataset",
    "window_indices",
    "write_dataset",
]
