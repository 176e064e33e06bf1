"""End-to-end helpers shared by the CLI, the demos and the acceptance suite."""

from __future__ import annotations

import hashlib
from typing import List, Sequence, Tuple

import numpy as np

from .analytical import AnalysisConfig, AnalyticalEstimator, CalibrationParams
from .learned import SpeckleNet, TrainConfig, denormalize, forward, normalize_targets, preprocess_stack
from .optics import Pose
from .scene import CaptureSequence

__all__ = ["split_hash", "stack_windows", "stacks_from_sequence", "analytical_predictions", "learned_predictions"]


def split_hash(manifest_hash: str, group_ids: Sequence[int]) -> str:
    """Identity of a test split: dataset content plus the chosen groups."""
    h = hashlib.sha256(manifest_hash.encode())
    h.update(",".join(str(int(g)) for g in sorted(group_ids)).encode())
    return h.hexdigest()


def stack_windows(seq: CaptureSequence) -> List[Tuple[int, List]]:
    """Every run of five consecutive frames inside each pose group, as (group, frames)."""
    out = []
    for gid in seq.group_ids():
        frames = seq.group(gid)
        for s in range(len(frames) - 4):
            out.append((gid, frames[s : s + 5]))
    return out


def stacks_from_sequence(seq: CaptureSequence, crop=(128, 128), cfg: TrainConfig = TrainConfig()):
    """(X, Y_normalized, labels, groups) for every five-frame window."""
    wins = stack_windows(seq)
    X = np.empty((len(wins), 5, *crop), np.float32)
    labels = []
    for i, (_, frames) in enumerate(wins):
        st = preprocess_stack(frames, crop)
        X[i] = st.values
        labels.append(st.label)
    return X, normalize_targets(labels, cfg).astype(np.float32), labels, [g for g, _ in wins]


def analytical_predictions(
    seq: CaptureSequence, calib: CalibrationParams, analysis: AnalysisConfig
) -> Tuple[List[Pose], List[Pose], dict]:
    """Baseline estimates on the middle frame of every five-frame window.

    Depth is taken from the label: the baseline does not estimate it.
    """
    est = AnalyticalEstimator(calib, analysis)
    preds, labels = [], []
    unresolved = {"theta_y": 0, "theta_z": 0}
    for _, frames in stack_windows(seq):
        mid = frames[2]
        p, y_ok, z_ok = est.estimate(mid, mid.pose.d_z_m)
        unresolved["theta_y"] += not y_ok
        unresolved["theta_z"] += not z_ok
        preds.append(p)
        labels.append(mid.pose)
    return preds, labels, unresolved


def learned_predictions(
    net: SpeckleNet, seq: CaptureSequence, cfg: TrainConfig = TrainConfig(), crop=(128, 128), batch: int = 64
) -> Tuple[List[Pose], List[Pose]]:
    X, _, labels, _ = stacks_from_sequence(seq, crop, cfg)
    out = []
    for i in range(0, len(X), batch):
        out.append(forward(net, X[i : i + batch], "infer"))
    y = np.concatenate(out) if out else np.zeros((0, 3))
    return denormalize(y, cfg), labels
