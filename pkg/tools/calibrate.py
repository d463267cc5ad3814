"""Reference calibration run for the acceptance experiments.

Runs the end-to-end experiment, the window-length sweep, and the
loss-weight sweep with the committed hyperparameters, prints every
measured number, and writes tests/reference_calibration.json with the
F1 floors derived from the run (median minus a safety margin, floored
at zero).

Usage: python tools/calibrate.py [--out tests/reference_calibration.json]
"""

import argparse
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from finemotion import datapipe, synthlab                      # noqa: E402
from finemotion.evalmetrics import (ablate_k, ablate_lambda,   # noqa: E402
                                    run_crossval, spearman)
from finemotion.train import TrainConfig                       # noqa: E402

# Committed experiment hyperparameters. The acceptance tests read these
# from the JSON this script writes, so the gate and the calibration can
# never drift apart.
END_TO_END = {
    "seeds": [100, 101, 102],
    "stride": 64,
    "batch_size": 2,
    "lr": 0.003,
    "lam": 4.0,
    "phase1_epochs": 10,
}
WINDOW_SWEEP = {
    "seeds": [100, 101, 102],
    "stride": 64,
    "batch_size": 2,
    "lr": 0.003,
}
LAMBDA_SWEEP = {
    "seed": 100,
    "stride": 64,
    "batch_size": 2,
    "lr": 0.003,
    "phase1_epochs": 10,
}
F1_MARGIN = 0.05       # committed floor = median - margin, clipped to 0


def gen_aligned(task, subjects, sessions, duration, seed_base, side=64):
    out = []
    for subj in range(subjects):
        for sess in range(sessions):
            s = synthlab.gen_session(
                task, subject_seed=seed_base + subj,
                session_seed=seed_base + subj * 100 + sess * 10,
                duration=duration, side=side)
            s.session_id = f"s{subj}_{task}_{sess}"
            s.subject_id = f"s{subj}"
            al = datapipe.align(s)
            al.session_id = s.session_id
            al.subject_id = s.subject_id
            out.append(al)
    return out


def windows(aligned, k, stride):
    samples, sizes = [], {}
    for al in aligned:
        ws = datapipe.build_windows(al, k, stride)
        samples.extend(ws)
        sizes[al.session_id] = len(ws)
    return samples, sizes


def median_f1(model, samples, plan, seeds, **overrides):
    f1s = []
    for seed in seeds:
        cfg = TrainConfig(model=model, seed=seed, **overrides)
        t0 = time.time()
        agg, std, _ = run_crossval(cfg, samples, plan)
        f1s.append(agg.pooled["f1"])
        print(f"  {model} seed {seed}: pooled F1 {agg.pooled['f1']:.4f} "
              f"(std {std['f1']:.4f})  [{time.time() - t0:.0f}s]", flush=True)
    med = float(np.median(f1s))
    print(f"  {model} median F1 {med:.4f}")
    return med


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(
        os.path.dirname(__file__), "..", "tests",
        "reference_calibration.json"))
    args = ap.parse_args()
    t_start = time.time()

    print("== end-to-end experiment ==", flush=True)
    typing = gen_aligned("typing", 4, 2, 90.0, 1000)
    piano = gen_aligned("piano", 4, 2, 90.0, 5000)
    t_samples, t_sizes = windows(typing, 8, END_TO_END["stride"])
    p_samples, p_sizes = windows(piano, 8, END_TO_END["stride"])
    t_plan = datapipe.split_folds(t_sizes, 5, seed=0)
    p_plan = datapipe.split_folds(p_sizes, 5, seed=0)
    common = dict(k=8, image_side=64, width=0.25, epochs=20,
                  phase1_epochs=END_TO_END["phase1_epochs"],
                  batch_size=END_TO_END["batch_size"], lr=END_TO_END["lr"],
                  lam=END_TO_END["lam"], dtype="float32")
    seeds = END_TO_END["seeds"]
    f1 = {
        "typing_sf": median_f1("SF", t_samples, t_plan, seeds, **common),
        "typing_mf": median_f1("MF", t_samples, t_plan, seeds, **common),
        "typing_cbmf": median_f1("CBMF", t_samples, t_plan, seeds, **common),
        "piano_cbmf": median_f1("CBMF", p_samples, p_plan, seeds, **common),
    }
    print("medians:", json.dumps(f1, indent=2))

    print("== window-length sweep ==", flush=True)
    sweep_aligned = gen_aligned("typing", 2, 2, 90.0, 1000)
    holdout = [sweep_aligned[-1].session_id]
    finals = {k: [] for k in (2, 4, 6, 8)}
    for seed in WINDOW_SWEEP["seeds"]:
        tc = TrainConfig(model="MF", image_side=64, width=0.25, epochs=20,
                         batch_size=WINDOW_SWEEP["batch_size"],
                         lr=WINDOW_SWEEP["lr"], seed=seed, dtype="float32")
        curves = ablate_k(tc, sweep_aligned, (2, 4, 6, 8),
                          WINDOW_SWEEP["stride"], holdout)
        row = {k: v[-1] for k, v in curves.items()}
        print(f"  seed {seed}: " + ", ".join(
            f"k={k}: {v:.4f}" for k, v in sorted(row.items())), flush=True)
        for k, v in row.items():
            finals[k].append(v)
    medians = {k: float(np.median(v)) for k, v in finals.items()}
    print("  medians:", medians)

    print("== loss-weight sweep ==", flush=True)
    samples, _ = windows(sweep_aligned, 8, LAMBDA_SWEEP["stride"])
    hold = sweep_aligned[-1].session_id
    train_w = [s for s in samples if s.session_id != hold]
    test_w = [s for s in samples if s.session_id == hold]
    tc = TrainConfig(model="CBMF", k=8, image_side=64, width=0.25, epochs=20,
                     phase1_epochs=LAMBDA_SWEEP["phase1_epochs"],
                     batch_size=LAMBDA_SWEEP["batch_size"],
                     lr=LAMBDA_SWEEP["lr"], seed=LAMBDA_SWEEP["seed"],
                     dtype="float32")
    rows = ablate_lambda(tc, train_w, test_w, (1.0, 4.0, 16.0, 64.0))
    for r in rows:
        print(f"  lam {r['lam']:g}: final BCE {r['final_bce']:.4f} "
              f"final MSE {r['final_mse']:.6f}")
    rho = spearman([r["lam"] for r in rows], [r["final_mse"] for r in rows])
    print(f"  spearman(lam, final MSE) = {rho:.3f}")

    out = {
        "end_to_end": END_TO_END,
        "window_sweep": WINDOW_SWEEP,
        "lambda_sweep": LAMBDA_SWEEP,
        "f1_medians": f1,
        "f1_floors": {k: round(max(0.0, v - F1_MARGIN), 3)
                      for k, v in f1.items()},
        "window_sweep_medians": {str(k): v for k, v in medians.items()},
        "lambda_sweep_rows": rows,
        "lambda_sweep_spearman": rho,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}  [{(time.time() - t_start) / 60:.1f} min total]")


if __name__ == "__main__":
    main()
