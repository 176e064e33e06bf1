"""Command-line entry point: ``specklepose <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 convergence or validity failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data_io
from .analytical import calibrate
from .config import config_dict, config_from_dict, load_config
from .dsp import autocorrelation, fft_logmag, find_side_peaks, stripe_orientation
from .errors import ConfigError, ConvergenceError, FormatError, NotResolvable, OutOfRange, SamplingError
from .learned import build_network, load_weights, train
from .metrics import bench_throughput, comparison_table, mae_std
from .pipeline import analytical_predictions, learned_predictions, split_hash, stacks_from_sequence
from .scene import simulate_dataset, split_dataset

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 2, 3


def _say(msg: str) -> None:
    print(msg, flush=True)


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load(dataset: str):
    """Dataset, its run config and split assignment (all groups in 'test' if none)."""
    m = data_io.read_manifest(Path(dataset) / "manifest.json")
    cfg = config_from_dict(m["config"])
    seq, m = data_io.load_dataset(dataset, cfg.optics, cfg.laser)
    splits = m.get("splits") or {"train": seq.group_ids(), "val": [], "test": seq.group_ids()}
    return seq, cfg, splits, seq.provenance["manifest_hash"]


def cmd_simulate(a) -> int:
    cfg = load_config(a.config, a.scale)
    if a.seed is not None:
        cfg = replace(cfg, master_seed=a.seed)
    _say(f"simulating {cfg.scale}-scale sweep, seed {cfg.master_seed}")

    def progress(k, total):
        if k % 250 == 0 or k == total:
            _say(f"  {k}/{total} frames")

    seq = simulate_dataset(
        cfg.sweep, cfg.optics, cfg.laser, cfg.master_seed, cfg.aperture, cfg.roughness_rms_m, progress
    )
    parts = split_dataset(seq, cfg.split_ratios, cfg.split_seed)
    splits = {name: p.group_ids() for name, p in zip(("train", "val", "test"), parts)}
    m = data_io.save_dataset(seq, a.out, config_dict(cfg), splits)
    _say(
        f"wrote {len(seq)} frames in {len(seq.group_ids())} groups to {a.out} "
        f"(train/val/test groups {len(splits['train'])}/{len(splits['val'])}/{len(splits['test'])}); "
        f"manifest {data_io.manifest_hash(m)[:16]}"
    )
    return EXIT_OK


def _to_u8(a: np.ndarray, lo=None, hi=None) -> np.ndarray:
    lo = a.min() if lo is None else lo
    hi = a.max() if hi is None else hi
    s = (np.clip(a, lo, hi) - lo) / (hi - lo if hi > lo else 1.0)
    return np.rint(s * 255).astype(np.uint8)


def _save_image(path: str, img: np.ndarray) -> None:
    if path.lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(img).save(path)
    else:
        data_io.write_frame(path, img, 8)


def cmd_inspect(a) -> int:
    px = data_io.read_frame(a.frame)
    ac = autocorrelation(px)
    spec = fft_logmag(px)
    # side peaks sit well below the zero-lag value; stretch the display range
    _save_image(a.out_ac, _to_u8(ac.ac, -0.05, 0.6))
    _save_image(a.out_spectrum, _to_u8(spec.logmag))
    pk = find_side_peaks(ac, a.exclusion)
    o = stripe_orientation(spec, a.exclusion)
    _say(f"frame {px.shape[1]}x{px.shape[0]}, mean {px.mean():.2f} DN")
    _say(
        f"side peak: offset ({pk.offset_px[0]:.2f}, {pk.offset_px[1]:.2f}) px, "
        f"prominence {pk.prominence:.3f}, valid {pk.valid}"
    )
    _say(f"stripe orientation: {o.angle_deg:.2f} deg (anisotropy {o.anisotropy:.2f}, valid {o.valid})")
    return EXIT_OK


def cmd_calibrate(a) -> int:
    seq, cfg, splits, _ = _load(a.dataset)
    init = data_io.read_calibration(a.init)
    train_seq = seq.subset(splits["train"])
    pairs = [(f, f.pose) for f in train_seq.frames]
    _say(f"calibrating on {len(pairs)} frames")
    res = calibrate(pairs, init, analysis=cfg.analysis)
    data_io.write_calibration(a.out, res.params)
    _say(
        f"used {res.n_used} resolvable frames, {res.iterations} iterations, "
        f"rms residual {res.rms_px:.4f} px"
    )
    _say(
        f"dl/l0 = {res.params.ratio:.6e}, S_z = {res.params.source_pos_m[2]:.6f} m, "
        f"residual = {res.params.residual}, stripe reference = {res.params.reference_orientation_deg:.3f} deg"
    )
    return EXIT_OK


def _write_report(path: str, report, extra: dict) -> None:
    Path(path).write_text(json.dumps({**report.to_dict(), **extra}, indent=2, sort_keys=True) + "\n")


def cmd_estimate(a) -> int:
    seq, cfg, splits, mh = _load(a.dataset)
    calib = data_io.read_calibration(a.calib)
    test = seq.subset(splits["test"])
    preds, labels, unresolved = analytical_predictions(test, calib, cfg.analysis)
    rep = mae_std(preds, labels, split_hash(mh, splits["test"]), "analytical")
    _write_report(a.report, rep, {"unresolved": unresolved, "calibration_sha256": _sha(a.calib)})
    for line in rep.lines():
        _say(line)
    _say(f"unresolved: {unresolved}")
    return EXIT_OK


def cmd_train(a) -> int:
    seq, cfg, splits, _ = _load(a.dataset)
    if a.config:
        over = json.loads(Path(a.config).read_text())
        cfg = config_from_dict({**config_dict(cfg), **over})
    tr = seq.subset(splits["train"])
    va = seq.subset(splits["val"])
    X, Y, _, _ = stacks_from_sequence(tr, cfg.crop, cfg.train)
    VX, VY, _, _ = stacks_from_sequence(va, cfg.crop, cfg.train) if len(va) else (None, None, None, None)
    _say(f"training on {len(X)} stacks, validating on {0 if VX is None else len(VX)}")

    def log(epoch, tl, vl):
        _say(f"  epoch {epoch:3d}  train {tl:.5f}  val {vl:.5f}")

    res = train(X, Y, VX, VY, cfg.train, cfg.network, log)
    data_io.write_weights(a.out_weights, res.weights)
    with open(a.history, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl, vl in res.history:
            w.writerow([e, repr(tl), repr(vl)])
    _say(f"best epoch {res.best_epoch}; {res.seconds:.1f} s; weights -> {a.out_weights}")
    return EXIT_OK


def _network(cfg, weights_path):
    net = build_network(cfg.network)
    return load_weights(net, data_io.read_weights(weights_path, cfg.network.fingerprint())).eval()


def cmd_evaluate(a) -> int:
    seq, cfg, splits, mh = _load(a.dataset)
    test = seq.subset(splits["test"])
    sh = split_hash(mh, splits["test"])
    net = _network(cfg, a.weights)
    preds, labels = learned_predictions(net, test, cfg.train, cfg.crop)
    learned = mae_std(preds, labels, sh, "learned")
    _write_report(a.report, learned, {"weights_sha256": _sha(a.weights)})
    for line in learned.lines():
        _say(line)
    if a.calib:
        calib = data_io.read_calibration(a.calib)
        apreds, alabels, unresolved = analytical_predictions(test, calib, cfg.analysis)
        analytical = mae_std(apreds, alabels, sh, "analytical")
        for line in analytical.lines():
            _say(line)
        table = comparison_table(analytical, learned)
        Path(a.table).write_text(table)
        _say(table)
        rep = json.loads(Path(a.report).read_text())
        rep["analytical"] = {**analytical.to_dict(), "unresolved": unresolved}
        Path(a.report).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(a) -> int:
    if a.frames < 50:
        raise ConfigError("bench needs at least 50 frames")
    seq, cfg, splits, _ = _load(a.dataset)
    net = _network(cfg, a.weights)
    res = bench_throughput(net, seq.frames, a.frames, 5, cfg.train, cfg.crop)
    verdict = "PASS" if res.median_fps >= 30 else "FAIL"
    _say(f"median {res.median_fps:.1f} frames/s over 5 runs of {a.frames} frames [{verdict} at 30 frames/s]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specklepose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="render a labeled synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--scale", choices=("desk", "paper"))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("inspect", help="write autocorrelation and spectrum images of a frame")
    s.add_argument("--frame", required=True)
    s.add_argument("--out-ac", required=True)
    s.add_argument("--out-spectrum", required=True)
    s.add_argument("--exclusion", type=int, default=8)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("calibrate", help="fit the analytical model on the training split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("estimate", help="analytical estimates on the test split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("train", help="train the network")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config")
    s.add_argument("--out-weights", required=True)
    s.add_argument("--history", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="learned (and optionally analytical) metrics on the test split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--calib")
    s.add_argument("--report", required=True)
    s.add_argument("--table")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="sliding-window inference throughput")
    s.add_argument("--weights", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--frames", type=int, default=100)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "evaluate" and args.calib and not args.table:
        print("error: --table is required with --calib", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SamplingError, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NotResolvable, OutOfRange) as e:
        print(f"failure: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
