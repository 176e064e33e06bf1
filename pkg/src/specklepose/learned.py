"""Learned pose regressor on stacks of five log-magnitude spectra."""

from __future__ import annotations

import contextlib
import hashlib
import json
import time
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .dsp import central_crop, fft_logmag
from .errors import ConfigError, ConvergenceError, FormatError
from .optics import Pose, SpeckleFrame

__all__ = [
    "NetworkSpec",
    "DESK_NET",
    "PAPER_NET",
    "TINY_NET",
    "InputStack",
    "NetworkWeights",
    "TrainConfig",
    "SpeckleNet",
    "TrainingDiverged",
    "spectrum_channel",
    "standardize",
    "preprocess_stack",
    "build_network",
    "weights_of",
    "load_weights",
    "forward",
    "backward",
    "normalize_targets",
    "denormalize",
    "train",
    "StreamEstimator",
    "infer_stream",
]


@dataclass(frozen=True)
class NetworkSpec:
    in_shape: Tuple[int, int, int] = (5, 128, 128)
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    mlp_widths: Tuple[int, ...] = (512, 256, 128, 64, 32)
    n_out: int = 3

    def __post_init__(self):
        if len(self.conv_channels) != 3:
            raise ConfigError("the network has exactly three conv blocks")
        if len(self.mlp_widths) != 5:
            raise ConfigError("the MLP has exactly six linear layers (five hidden)")
        if self.n_out != 3:
            raise ConfigError("the head outputs theta_y, theta_z and d_z")

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        _, h, w = self.in_shape
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
        return (self.conv_channels[-1], h, w)

    @property
    def flatten_len(self) -> int:
        c, h, w = self.feature_shape
        return c * h * w

    def fingerprint(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


DESK_NET = NetworkSpec()
PAPER_NET = NetworkSpec(in_shape=(5, 320, 180))
TINY_NET = NetworkSpec(in_shape=(5, 16, 16), conv_channels=(2, 2, 2), mlp_widths=(8, 8, 8, 8, 8))


class SpeckleNet(nn.Module):
    def __init__(self, spec: NetworkSpec = DESK_NET):
        super().__init__()
        self.spec = spec
        blocks = []
        cin = spec.in_shape[0]
        for cout in spec.conv_channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(cin, cout, spec.kernel, stride=1, padding=spec.kernel // 2),
                    nn.BatchNorm2d(cout),
                    nn.ReLU(),
                    nn.MaxPool2d(2),
                )
            )
            cin = cout
        self.features = nn.Sequential(*blocks)
        layers = []
        nin = spec.flatten_len
        for width in spec.mlp_widths:
            layers += [nn.Linear(nin, width), nn.BatchNorm1d(width), nn.ReLU()]
            nin = width
        layers.append(nn.Linear(nin, spec.n_out))
        self.mlp = nn.Sequential(*layers)

    def forward(self, x):
        return self.mlp(torch.flatten(self.features(x), 1))

    @property
    def conv_blocks(self) -> int:
        return len(self.features)

    @property
    def linear_layers(self) -> List[nn.Linear]:
        return [m for m in self.mlp if isinstance(m, nn.Linear)]


@contextlib.contextmanager
def _single_thread():
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


def build_network(spec: NetworkSpec = DESK_NET, seed: int = 0, dtype=torch.float32) -> SpeckleNet:
    """Fresh network with the default fan-in scaled uniform initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = SpeckleNet(spec)
    return net.to(dtype)


# --- preprocessing -----------------------------------------------------------


@dataclass
class InputStack:
    values: np.ndarray
    label: Optional[Pose] = None
    scale: str = "desk"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != 5:
            raise ValueError("an input stack has five channels")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("input stack contains non-finite values")
        if self.scale == "paper" and self.values.shape != PAPER_NET.in_shape:
            raise ValueError(f"paper-scale stacks are {PAPER_NET.in_shape}")


def spectrum_channel(frame, crop: Tuple[int, int]) -> np.ndarray:
    """One channel: centered log-magnitude cropped to (w, h) and laid out (w, h)."""
    w, h = crop
    return central_crop(fft_logmag(frame), w, h).logmag.T


def standardize(chans: np.ndarray) -> np.ndarray:
    chans = np.asarray(chans, np.float64)
    sd = chans.std()
    out = chans - chans.mean()
    return (out / sd if sd > 0 else out).astype(np.float32)


def preprocess_stack(frames: Sequence, crop: Tuple[int, int] = (128, 128), scale: str = "desk") -> InputStack:
    """Five consecutive frames -> standardized (5, w, h) spectrum stack."""
    if len(frames) != 5:
        raise ValueError("a stack needs exactly five frames")
    shapes = {np.shape(f.pixels if isinstance(f, SpeckleFrame) else f) for f in frames}
    if len(shapes) != 1:
        raise ValueError("frames differ in dimensions")
    if all(isinstance(f, SpeckleFrame) for f in frames):
        idx = [f.frame_index for f in frames]
        if any(b - a != 1 for a, b in zip(idx, idx[1:])):
            raise ValueError(f"frames are not consecutive: {idx}")
        label = frames[2].pose
    else:
        label = None
    chans = np.stack([spectrum_channel(f, crop) for f in frames])
    return InputStack(standardize(chans), label, scale)


# --- targets -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    weight_decay: float = 0.0
    cosine_schedule: bool = True
    y_scale_deg: float = 40.0
    z_scale_deg: float = 90.0
    d_offset_m: float = 0.16
    d_scale_m: float = 0.12

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.epochs, self.y_scale_deg, self.z_scale_deg, self.d_scale_m) <= 0:
            raise ConfigError("training settings must be positive")


def normalize_targets(poses: Iterable, cfg: TrainConfig = TrainConfig()) -> np.ndarray:
    rows = [p.as_tuple() if isinstance(p, Pose) else tuple(p) for p in poses]
    a = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    return np.stack(
        [a[:, 0] / cfg.y_scale_deg, a[:, 1] / cfg.z_scale_deg, (a[:, 2] - cfg.d_offset_m) / cfg.d_scale_m],
        axis=1,
    )


def denormalize(y, cfg: TrainConfig = TrainConfig()) -> List[Pose]:
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    return [
        Pose(r[0] * cfg.y_scale_deg, r[1] * cfg.z_scale_deg, r[2] * cfg.d_scale_m + cfg.d_offset_m)
        for r in y
    ]


# --- weights -----------------------------------------------------------------


@dataclass
class NetworkWeights:
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    fingerprint: str = ""


def weights_of(net: SpeckleNet) -> NetworkWeights:
    """All float parameters and batch-norm running statistics, in module order."""
    out = OrderedDict()
    for name, t in net.state_dict().items():
        if t.is_floating_point():
            out[name] = t.detach().cpu().numpy().astype(np.float32)
    return NetworkWeights(out, net.spec.fingerprint())


def load_weights(net: SpeckleNet, weights: NetworkWeights) -> SpeckleNet:
    expected = net.spec.fingerprint()
    if weights.fingerprint != expected:
        raise FormatError(f"architecture fingerprint mismatch: expected {expected}, found {weights.fingerprint}")
    state = net.state_dict()
    missing = [k for k, t in state.items() if t.is_floating_point() and k not in weights.tensors]
    if missing:
        raise FormatError(f"weights missing tensors: {missing[:3]}")
    for k, a in weights.tensors.items():
        if k not in state or tuple(state[k].shape) != a.shape:
            raise FormatError(f"tensor {k} does not fit the network")
        state[k] = torch.from_numpy(np.array(a)).to(state[k].dtype)
    net.load_state_dict(state)
    return net


# --- forward / backward ------------------------------------------------------


def _as_batch(x, dtype) -> torch.Tensor:
    if isinstance(x, InputStack):
        x = x.values
    t = torch.as_tensor(np.asarray(x), dtype=dtype)
    return t.unsqueeze(0) if t.ndim == 3 else t


def forward(net: SpeckleNet, x, mode: str = "infer") -> np.ndarray:
    """Normalized (theta_y, theta_z, d_z) for a stack or batch of stacks."""
    dtype = next(net.parameters()).dtype
    xb = _as_batch(x, dtype)
    if tuple(xb.shape[1:]) != net.spec.in_shape:
        raise ValueError(f"input shape {tuple(xb.shape[1:])} does not match {net.spec.in_shape}")
    if mode not in ("train", "infer"):
        raise ValueError("mode is 'train' or 'infer'")
    was = net.training
    net.train(mode == "train")
    try:
        with torch.no_grad():
            out = net(xb)
    finally:
        net.train(was)
    return out.numpy()


def backward(net: SpeckleNet, x, y) -> "OrderedDict[str, np.ndarray]":
    """Gradients of the mean-squared loss for every parameter (train-mode batch norm).

    Running statistics are left untouched.
    """
    dtype = next(net.parameters()).dtype
    xb = _as_batch(x, dtype)
    yb = torch.as_tensor(np.asarray(y), dtype=dtype).reshape(-1, net.spec.n_out)
    saved = {k: v.clone() for k, v in net.state_dict().items() if "running" in k or "num_batches" in k}
    was = net.training
    net.train(True)
    net.zero_grad(set_to_none=True)
    loss = nn.functional.mse_loss(net(xb), yb)
    loss.backward()
    net.train(was)
    net.load_state_dict({**net.state_dict(), **saved})
    grads = OrderedDict(
        (n, p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for n, p in net.named_parameters()
    )
    net.zero_grad(set_to_none=True)
    return grads


# --- training ----------------------------------------------------------------


class TrainingDiverged(ConvergenceError):
    pass


@dataclass
class TrainResult:
    net: SpeckleNet
    weights: NetworkWeights
    history: List[Tuple[int, float, float]]
    best_epoch: int
    seconds: float


def _eval_loss(net, X, Y, batch) -> float:
    net.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(X), batch):
            xb = torch.from_numpy(X[i : i + batch])
            yb = torch.from_numpy(Y[i : i + batch])
            total += float(((net(xb) - yb) ** 2).sum())
    return total / (len(X) * Y.shape[1])


def train(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: Optional[np.ndarray] = None,
    val_y: Optional[np.ndarray] = None,
    cfg: TrainConfig = TrainConfig(),
    spec: NetworkSpec = DESK_NET,
    log: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Mini-batch Adam on MSE of normalized targets.

    ``train_y``/``val_y`` are already normalized (see ``normalize_targets``).
    Returns the weights of the epoch with the lowest validation loss (the
    training loss when no validation set is given). Deterministic in
    ``cfg.seed``: initialization and shuffling use their own streams and
    training runs on one thread with deterministic kernels.
    """
    X = np.ascontiguousarray(train_x, dtype=np.float32)
    Y = np.ascontiguousarray(train_y, dtype=np.float32)
    if len(X) < 1:
        raise ConfigError("training set is empty")
    has_val = val_x is not None and len(val_x) > 0
    if has_val:
        VX = np.ascontiguousarray(val_x, dtype=np.float32)
        VY = np.ascontiguousarray(val_y, dtype=np.float32)
    t0 = time.perf_counter()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        with _single_thread():
            net = build_network(spec, cfg.seed)
            opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
            steps_per_epoch = -(-len(X) // cfg.batch_size)
            sched = (
                torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.epochs * steps_per_epoch)
                if cfg.cosine_schedule
                else None
            )
            rng = np.random.default_rng(cfg.seed)
            history = []
            best = (np.inf, 0, None)
            for epoch in range(1, cfg.epochs + 1):
                net.train()
                order = rng.permutation(len(X))
                total, count = 0.0, 0
                for i in range(0, len(X), cfg.batch_size):
                    idx = order[i : i + cfg.batch_size]
                    if len(idx) < 2:
                        continue  # batch norm needs two samples
                    xb, yb = torch.from_numpy(X[idx]), torch.from_numpy(Y[idx])
                    loss = nn.functional.mse_loss(net(xb), yb)
                    if not torch.isfinite(loss):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch}; lower the learning rate",
                            [h[1] for h in history],
                        )
                    opt.zero_grad(set_to_none=True)
                    loss.backward()
                    opt.step()
                    if sched is not None:
                        sched.step()
                    total += float(loss.detach()) * len(idx)
                    count += len(idx)
                train_loss = total / max(count, 1)
                val_loss = _eval_loss(net, VX, VY, 64) if has_val else float("nan")
                history.append((epoch, train_loss, val_loss))
                if log is not None:
                    log(epoch, train_loss, val_loss)
                key = val_loss if has_val else train_loss
                if key < best[0]:
                    best = (key, epoch, weights_of(net))
            load_weights(net, best[2])
            net.eval()
    finally:
        torch.use_deterministic_algorithms(prev_det)
    return TrainResult(net, best[2], history, best[1], time.perf_counter() - t0)


# --- streaming inference -----------------------------------------------------


class StreamEstimator:
    """Sliding five-frame window; one estimate per frame once the window is full."""

    def __init__(self, net: SpeckleNet, cfg: TrainConfig = TrainConfig(), crop=(128, 128)):
        self.net = net.eval()
        self.cfg = cfg
        self.crop = crop
        self.window = deque(maxlen=5)
        self.last_index = None

    def push(self, frame) -> Optional[Pose]:
        if isinstance(frame, SpeckleFrame):
            if self.last_index is not None and frame.frame_index != self.last_index + 1:
                self.window.clear()
            self.last_index = frame.frame_index
        self.window.append(spectrum_channel(frame, self.crop))
        if len(self.window) < 5:
            return None
        x = standardize(np.stack(self.window))
        with torch.no_grad():
            y = self.net(torch.from_numpy(x[None])).numpy()
        return denormalize(y, self.cfg)[0]


@dataclass
class StreamStats:
    frames: int
    estimates: int
    mean_latency_s: float

    @property
    def fps(self) -> float:
        return 1.0 / self.mean_latency_s if self.mean_latency_s > 0 else float("inf")


def infer_stream(
    net: SpeckleNet, frames: Iterable, cfg: TrainConfig = TrainConfig(), crop=(128, 128)
) -> Tuple[List[Tuple[int, Pose]], StreamStats]:
    """Run the sliding-window estimator over a frame source on one thread."""
    est = StreamEstimator(net, cfg, crop)
    out = []
    n = 0
    elapsed = 0.0
    with _single_thread():
        for i, frame in enumerate(frames):
            t = time.perf_counter()
            pose = est.push(frame)
            elapsed += time.perf_counter() - t
            n += 1
            if pose is not None:
                out.append((frame.frame_index if isinstance(frame, SpeckleFrame) else i, pose))
    return out, StreamStats(n, len(out), elapsed / max(n, 1))
