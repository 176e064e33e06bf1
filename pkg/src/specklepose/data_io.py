"""Persistence: PGM frames, JSON dataset manifests, calibration text files
and binary network weights. Every round trip is bit-exact."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .analytical import CalibrationParams
from .errors import FormatError
from .learned import NetworkWeights
from .optics import Pose, SpeckleFrame
from .scene import CaptureSequence

__all__ = [
    "encode_pgm",
    "decode_pgm",
    "write_frame",
    "read_frame",
    "MANIFEST_VERSION",
    "canonical_json",
    "manifest_hash",
    "write_manifest",
    "read_manifest",
    "save_dataset",
    "load_dataset",
    "write_calibration",
    "read_calibration",
    "WEIGHTS_MAGIC",
    "WEIGHTS_VERSION",
    "encode_weights",
    "decode_weights",
    "write_weights",
    "read_weights",
]

# --- PGM ---------------------------------------------------------------------


def encode_pgm(pixels: np.ndarray, bit_depth: Optional[int] = None) -> bytes:
    a = np.asarray(pixels)
    if a.ndim != 2:
        raise FormatError("PGM frames are 2-D")
    if bit_depth is None:
        bit_depth = 8 if a.dtype == np.uint8 else 16
    if bit_depth not in (8, 16):
        raise FormatError("bit depth must be 8 or 16")
    maxval = 2**bit_depth - 1
    if a.size and (a.min() < 0 or a.max() > maxval):
        raise FormatError("pixel values out of range for bit depth")
    h, w = a.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    body = a.astype(">u2" if bit_depth == 16 else np.uint8).tobytes()
    return header + body


def _tokens(data: bytes, count: int) -> Tuple[list, int]:
    toks, pos = [], 0
    while len(toks) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        toks.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return toks, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    toks, pos = _tokens(data, 4)
    if toks[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {toks[0]!r})")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if w < 0 or h < 0 or not 0 < maxval < 65536:
        raise FormatError("malformed PGM header")
    wide = maxval > 255
    need = w * h * (2 if wide else 1)
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise FormatError("truncated PGM raster")
    a = np.frombuffer(raw, dtype=">u2" if wide else np.uint8).reshape(h, w)
    return a.astype(np.uint16) if wide else a.copy()


def write_frame(path, frame, bit_depth: Optional[int] = None) -> None:
    pixels = frame.pixels if isinstance(frame, SpeckleFrame) else frame
    if bit_depth is None and isinstance(frame, SpeckleFrame) and frame.optics is not None:
        bit_depth = frame.optics.bit_depth
    Path(path).write_bytes(encode_pgm(pixels, bit_depth))


def read_frame(path, expected_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    a = decode_pgm(Path(path).read_bytes())
    if expected_shape is not None and a.shape != tuple(expected_shape):
        raise FormatError(f"{path}: dimensions {a.shape} differ from manifest {tuple(expected_shape)}")
    return a


# --- manifests ---------------------------------------------------------------

MANIFEST_VERSION = 1
_TOP_KEYS = {"format_version", "config", "frames", "splits"}
_FRAME_KEYS = {"file", "frame_index", "group", "pose", "seeds"}
_POSE_KEYS = {"theta_y_deg", "theta_z_deg", "d_z_m"}


def canonical_json(obj) -> bytes:
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(canonical_json(manifest)).hexdigest()


def _validate_manifest(m: dict) -> None:
    if not isinstance(m, dict):
        raise FormatError("manifest must be a JSON object")
    if m.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {m.get('format_version')!r}")
    extra = set(m) - _TOP_KEYS
    if extra:
        raise FormatError(f"unknown manifest keys: {sorted(extra)}")
    for k in ("config", "frames"):
        if k not in m:
            raise FormatError(f"manifest lacks {k!r}")
    for rec in m["frames"]:
        extra = set(rec) - _FRAME_KEYS
        if extra or not {"file", "frame_index", "pose"} <= set(rec):
            raise FormatError(f"bad frame record keys: {sorted(rec)}")
        if set(rec["pose"]) != _POSE_KEYS:
            raise FormatError(f"bad pose keys: {sorted(rec['pose'])}")
        if not Pose(**rec["pose"]).in_range():
            raise FormatError(f"pose out of range in {rec['file']}")


def write_manifest(path, manifest: dict) -> None:
    _validate_manifest(manifest)
    Path(path).write_bytes(canonical_json(manifest))


def read_manifest(path, check_files: bool = True) -> dict:
    path = Path(path)
    try:
        m = json.loads(path.read_bytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from None
    _validate_manifest(m)
    if check_files:
        for rec in m["frames"]:
            f = path.parent / rec["file"]
            if not f.is_file():
                raise FormatError(f"missing frame file: {rec['file']}")
    return m


def save_dataset(seq: CaptureSequence, out_dir, config: dict, splits: Optional[dict] = None) -> dict:
    """Write frames as PGM plus a canonical manifest; returns the manifest."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    records = []
    for f, g in zip(seq.frames, seq.groups):
        name = f"frames/{f.frame_index:06d}.pgm"
        write_frame(out / name, f)
        records.append(
            {
                "file": name,
                "frame_index": int(f.frame_index),
                "group": int(g),
                "pose": {
                    "theta_y_deg": float(f.pose.theta_y_deg),
                    "theta_z_deg": float(f.pose.theta_z_deg),
                    "d_z_m": float(f.pose.d_z_m),
                },
                "seeds": {k: int(v) for k, v in f.seeds.items()},
            }
        )
    m = {"format_version": MANIFEST_VERSION, "config": config, "frames": records}
    if splits is not None:
        m["splits"] = {k: sorted(int(g) for g in v) for k, v in splits.items()}
    write_manifest(out / "manifest.json", m)
    return m


def load_dataset(dataset_dir, optics=None, laser=None) -> Tuple[CaptureSequence, dict]:
    d = Path(dataset_dir)
    m = read_manifest(d / "manifest.json")
    shape = None
    if optics is not None:
        shape = (optics.sensor_h_px, optics.sensor_w_px)
    frames, sched, groups = [], [], []
    for rec in m["frames"]:
        pose = Pose(**rec["pose"])
        px = read_frame(d / rec["file"], shape)
        frames.append(SpeckleFrame(px, pose, rec["frame_index"], optics, laser, dict(rec.get("seeds", {}))))
        sched.append(pose)
        groups.append(rec.get("group", len(groups)))
    prov = {"manifest_hash": manifest_hash(m)}
    return CaptureSequence(frames, sched, prov, groups), m


# --- calibration files ---------------------------------------------------------

_CALIB_KEYS = (
    "lambda0_m",
    "delta_lambda_m",
    "source_x_m",
    "source_y_m",
    "source_z_m",
    "pitch_m",
    "residual_c1",
    "residual_c2",
    "reference_orientation_deg",
)


def write_calibration(path, c: CalibrationParams) -> None:
    vals = (
        c.lambda0_m,
        c.delta_lambda_m,
        *c.source_pos_m,
        c.pitch_m,
        *c.residual,
        c.reference_orientation_deg,
    )
    # repr() of a float is the shortest exact decimal and ignores locale
    lines = [f"{k} = {float(v)!r}" for k, v in zip(_CALIB_KEYS, vals)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration(path) -> CalibrationParams:
    vals = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected 'name = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _CALIB_KEYS:
            raise FormatError(f"{path}:{n}: unknown key {k!r}")
        try:
            vals[k] = float(v)
        except ValueError:
            raise FormatError(f"{path}:{n}: bad number {v!r}") from None
    missing = [k for k in ("lambda0_m", "delta_lambda_m", "pitch_m") if k not in vals]
    if missing:
        raise FormatError(f"{path}: missing {missing}")
    return CalibrationParams(
        lambda0_m=vals["lambda0_m"],
        delta_lambda_m=vals["delta_lambda_m"],
        source_pos_m=(vals.get("source_x_m", 0.0), vals.get("source_y_m", 0.0), vals.get("source_z_m", 0.0)),
        pitch_m=vals["pitch_m"],
        residual=(vals.get("residual_c1", 0.0), vals.get("residual_c2", 0.0)),
        reference_orientation_deg=vals.get("reference_orientation_deg", 0.0),
    )


# --- weights -------------------------------------------------------------------
#
# "SPKW" | u32 version | u32 count | count x tensor | u16 len + fingerprint
# tensor: u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f32 LE data
# All integers little-endian.

WEIGHTS_MAGIC = b"SPKW"
WEIGHTS_VERSION = 1


def encode_weights(w: NetworkWeights) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(w.tensors))]
    for name, a in w.tensors.items():
        nb = name.encode("utf-8")
        a = np.asarray(a)
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    fp = w.fingerprint.encode("ascii")
    parts.append(struct.pack("<H", len(fp)) + fp)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated weights file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(data: bytes, expected_fingerprint: Optional[str] = None) -> NetworkWeights:
    r = _Reader(data)
    if r.take(4) != WEIGHTS_MAGIC:
        raise FormatError("bad magic: not a weights file")
    version, count = r.unpack("<II")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version}")
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    (flen,) = r.unpack("<H")
    fp = r.take(flen).decode("ascii")
    if r.pos != len(data):
        raise FormatError("trailing bytes after weights")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FormatError(f"architecture fingerprint mismatch: expected {expected_fingerprint}, found {fp}")
    return NetworkWeights(tensors, fp)


def write_weights(path, w: NetworkWeights) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_weights(w))
    os.replace(tmp, path)


def read_weights(path, expected_fingerprint: Optional[str] = None) -> NetworkWeights:
    return decode_weights(Path(path).read_bytes(), expected_fingerprint)
