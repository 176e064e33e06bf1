"""Run the whole desk-scale workflow through the command-line interface.

simulate -> calibrate -> estimate -> train -> evaluate -> bench, writing every
artifact under ``--work``. ``--quick`` shrinks the sweep and the training run
so the walk-through finishes in a couple of minutes; the numbers it prints
are then only indicative.

    python demos/desk_pipeline.py --work run --quick
"""

import argparse
import json
from pathlib import Path

from specklepose import data_io
from specklepose.analytical import CalibrationParams
from specklepose.cli import main as cli
from specklepose.config import desk_profile

QUICK = {
    "sweep": {"theta_y_range_deg": [0.0, 40.0, 5.0], "theta_z_range_deg": [0.0, 90.0, 15.0]},
    "train": {"epochs": 5},
}


def step(*argv):
    print("$ specklepose " + " ".join(argv), flush=True)
    code = cli(list(argv))
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="run")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    w = Path(args.work)
    w.mkdir(parents=True, exist_ok=True)

    sim = []
    if args.quick:
        (w / "quick.json").write_text(json.dumps(QUICK))
        sim = ["--config", str(w / "quick.json")]
    step("simulate", *sim, "--out", str(w / "dataset"), "--seed", "0")

    # the nominal calibration, with the wavelength gap doubled as a deliberately poor start
    truth = desk_profile().calibration_guess()
    init = CalibrationParams(truth.lambda0_m, 2 * truth.delta_lambda_m, pitch_m=truth.pitch_m)
    data_io.write_calibration(w / "init.txt", init)

    ds = str(w / "dataset")
    step("calibrate", "--dataset", ds, "--init", str(w / "init.txt"), "--out", str(w / "calib.txt"))
    step("estimate", "--dataset", ds, "--calib", str(w / "calib.txt"), "--report", str(w / "analytical.json"))
    step("train", "--dataset", ds, "--out-weights", str(w / "net.spkw"), "--history", str(w / "history.csv"))
    step(
        "evaluate", "--dataset", ds, "--weights", str(w / "net.spkw"), "--calib", str(w / "calib.txt"),
        "--report", str(w / "learned.json"), "--table", str(w / "table.txt"),
    )
    step("bench", "--dataset", ds, "--weights", str(w / "net.spkw"), "--frames", "100")


if __name__ == "__main__":
    main()
