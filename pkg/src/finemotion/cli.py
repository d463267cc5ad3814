"""Command-line interface: data generation, training, evaluation, replay."""

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import datapipe, kinematics, netspec, replay as replay_mod, synthlab
from .evalmetrics import (ablate_k, ablate_lambda, evaluate, run_crossval,
                          spearman)
from .train import TrainConfig, train


def _load_config(path):
    if not path:
        return {}
    if path.lstrip().startswith("{"):
        return json.loads(path)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _train_config(cfg, seed):
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    tc = TrainConfig(**{k: v for k, v in cfg.items() if k in fields})
    if seed is not None:
        tc.seed = seed
    tc.validate()
    return tc


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_split(cfg, seed):
    """Dataset + fold plan from a run configuration document."""
    samples, k, side = datapipe.load_dataset(cfg["dataset"])
    sizes = {}
    for s in samples:
        sizes[s.session_id] = sizes.get(s.session_id, 0) + 1
    plan = datapipe.split_folds(sizes, cfg.get("n_folds", 5),
                                cfg.get("fold_seed", 0))
    return samples, k, side, plan


def _fold_split(samples, plan, fold):
    test_ids = set(plan.folds[fold])
    return ([s for s in samples if s.session_id not in test_ids],
            [s for s in samples if s.session_id in test_ids])


# ------------------------------------------------------------- subcommands

def cmd_synth_gen(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    seed = 0 if seed is None else seed
    tasks = cfg.get("tasks", ["typing", "piano"])
    n_subjects = cfg.get("subjects", 4)
    n_sessions = cfg.get("sessions", 2)
    manifest = []
    for subj in range(n_subjects):
        for task in tasks:
            for sess in range(n_sessions):
                session = synthlab.gen_session(
                    task, subject_seed=seed * 1000 + subj,
                    session_seed=seed * 1000 + subj * 100 + sess * 10
                    + (0 if task == "typing" else 1),
                    duration=cfg.get("duration", 90.0),
                    frame_rate=cfg.get("frame_rate", 20.0),
                    side=cfg.get("side", 64), sigma=cfg.get("sigma", 0.12))
                name = f"s{subj}_{task}_{sess}"
                session.session_id = name
                datapipe.write_session(session, os.path.join(out, name))
                manifest.append({"session": name, "subject": session.subject_id,
                                 "task": task, "frames": len(session.times)})
    _write_json(os.path.join(out, "summary.json"), {"sessions": manifest})
    print(f"wrote {len(manifest)} sessions to {out}")


def cmd_extract_config(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    times, frames = kinematics.read_marker_file(cfg["markers"])
    path = os.path.join(out, "configurations.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_s," + ",".join(kinematics.JOINT_NAMES) + "\n")
        for t, frame in zip(times, frames):
            x = kinematics.extract_configuration(frame)
            fh.write(f"{t:.9g}," + ",".join(f"{v:.9g}" for v in x) + "\n")
    print(f"wrote {len(times)} configurations to {path}")


def cmd_build_dataset(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    k = cfg.get("k", 8)
    stride = cfg.get("stride", 1)
    side = cfg.get("side")
    root = cfg["sessions"]
    dirs = sorted(d for d in os.listdir(root)
                  if os.path.isdir(os.path.join(root, d)))
    samples, report = [], []
    for d in dirs:
        session = datapipe.read_session(os.path.join(root, d))
        aligned = datapipe.align(session, side)
        windows = datapipe.build_windows(aligned, k, stride)
        samples.extend(windows)
        report.append({"session": d, "windows": len(windows),
                       "dropped_frames": aligned.dropped})
    path = os.path.join(out, "dataset.bin")
    datapipe.save_dataset(samples, path, k=k,
                          side=side or (samples[0].images.shape[1] if samples else 0))
    _write_json(os.path.join(out, "summary.json"),
                {"dataset": os.path.basename(path), "k": k, "stride": stride,
                 "samples": len(samples), "sessions": report})
    print(f"wrote {len(samples)} windows to {path}")


def cmd_train(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    tc = _train_config(cfg, seed)
    samples, k, side, plan = _load_split(cfg, seed)
    tc.k, tc.image_side = k, side
    train_w, test_w = _fold_split(samples, plan, tc.fold)
    result = train(tc, train_w, test_w)
    np.savez(os.path.join(out, "params.npz"), **result.params)
    _write_table(os.path.join(out, "curves.csv"),
                 ["epoch", "phase", "train_bce", "train_mse", "test_bce", "test_mse"],
                 [[r.get("epoch"), r.get("phase"), r.get("train_bce"),
                   r.get("train_mse"), r.get("test_bce"), r.get("test_mse")]
                  for r in result.curves])
    _write_json(os.path.join(out, "summary.json"),
                {**result.to_summary(), "folds": plan.folds})
    print(f"trained {tc.model} fold {tc.fold}: "
          f"final test BCE {result.curves[-1].get('test_bce'):.4f}")


def cmd_eval(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    tc = _train_config(cfg, seed)
    samples, k, side, plan = _load_split(cfg, seed)
    tc.k, tc.image_side = k, side
    _, test_w = _fold_split(samples, plan, tc.fold)
    params = dict(np.load(cfg["params"]))
    report = evaluate(tc.build_spec(), params, test_w, tc.batch_size,
                      tc.np_dtype())
    _write_table(os.path.join(out, "per_finger.csv"),
                 ["finger", "accuracy", "recall", "precision", "f1"],
                 [[f + 1] + [report.per_finger[f][m] for m in
                             ("accuracy", "recall", "precision", "f1")]
                  for f in range(5)])
    _write_json(os.path.join(out, "summary.json"), report.to_summary())
    print("pooled F1 {f1:.4f} precision {precision:.4f} recall {recall:.4f} "
          "accuracy {accuracy:.4f}".format(**report.pooled))


def cmd_crossval(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    tc = _train_config(cfg, seed)
    samples, k, side, plan = _load_split(cfg, seed)
    tc.k, tc.image_side = k, side
    agg, std, reports = run_crossval(tc, samples, plan)
    _write_table(os.path.join(out, "per_fold.csv"),
                 ["fold", "accuracy", "recall", "precision", "f1"],
                 [[i] + [r.pooled[m] for m in
                         ("accuracy", "recall", "precision", "f1")]
                  for i, r in enumerate(reports)])
    _write_json(os.path.join(out, "summary.json"),
                {"mean": agg.pooled, "std": std, "per_finger": agg.per_finger,
                 "per_subject": agg.per_subject,
                 "joint_mae": agg.joint_mae, "folds": plan.folds})
    print("crossval mean F1 {:.4f} (std {:.4f})".format(agg.pooled["f1"],
                                                        std["f1"]))


def cmd_ablate_k(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    tc = _train_config(cfg, seed)
    root = cfg["sessions"]
    dirs = sorted(d for d in os.listdir(root)
                  if os.path.isdir(os.path.join(root, d)))
    seqs = []
    for d in dirs:
        aligned = datapipe.align(datapipe.read_session(os.path.join(root, d)),
                                 cfg.get("side"))
        aligned.session_id = d
        seqs.append(aligned)
    holdout = cfg.get("holdout_sessions") or [dirs[-1]]
    curves = ablate_k(tc, seqs, tuple(cfg.get("k_values", (1, 2, 4, 6, 8))),
                      cfg.get("stride", 1), holdout)
    _write_table(os.path.join(out, "curves.csv"),
                 ["k", "epoch", "test_bce"],
                 [[k, e, v] for k, vals in sorted(curves.items())
                  for e, v in enumerate(vals)])
    _write_json(os.path.join(out, "summary.json"),
                {"final_test_bce": {str(k): v[-1] for k, v in curves.items()},
                 "holdout": holdout})
    print("ablate-k final test BCE: " + ", ".join(
        f"k={k}: {v[-1]:.4f}" for k, v in sorted(curves.items())))


def cmd_ablate_lambda(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    tc = _train_config(cfg, seed)
    samples, k, side, plan = _load_split(cfg, seed)
    tc.k, tc.image_side = k, side
    train_w, test_w = _fold_split(samples, plan, tc.fold)
    rows = ablate_lambda(tc, train_w, test_w,
                         tuple(cfg.get("lam_values", (0, 1, 2, 4, 8, 16, 32, 64))))
    _write_table(os.path.join(out, "sweep.csv"),
                 ["lambda", "final_bce", "final_mse"],
                 [[r["lam"], r["final_bce"], r["final_mse"]] for r in rows])
    sub = [r for r in rows if r["lam"] in (1.0, 4.0, 16.0, 64.0)]
    rho = spearman([r["lam"] for r in sub], [r["final_mse"] for r in sub]) \
        if len(sub) >= 2 else None
    _write_json(os.path.join(out, "summary.json"),
                {"rows": rows, "spearman_lam_mse": rho})
    print("ablate-lambda rows: " + ", ".join(
        f"lam={r['lam']:g}: bce={r['final_bce']:.4f} mse={r['final_mse']:.4f}"
        for r in rows))


def cmd_replay(cfg, seed, out):
    os.makedirs(out, exist_ok=True)
    probs = np.loadtxt(cfg["probabilities"], delimiter=",")
    if probs.ndim == 1:
        probs = probs.reshape(-1, 5)
    mapping = cfg.get("mapping", "piano")
    rate = cfg.get("frame_rate", 20.0)
    result = replay_mod.replay(
        probs, rate, mapping,
        tuple(cfg.get("note_map", replay_mod.NOTE_MAP)),
        tuple(cfg.get("char_map", replay_mod.CHAR_MAP)))
    replay_mod.write_event_file(os.path.join(out, "events.csv"), result.events)
    summary = {"events": result.events, "mapping": mapping}
    if mapping == "piano":
        replay_mod.write_midi(os.path.join(out, "replay.mid"), result.notes)
        summary["notes"] = result.notes
    else:
        with open(os.path.join(out, "replay.txt"), "w", encoding="utf-8") as fh:
            fh.write(result.text + "\n")
        summary["text"] = result.text
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"replayed {len(result.events)} events ({mapping})")


def cmd_count_params(cfg, seed, out):
    model = cfg.get("model", "CBMF")
    k = cfg.get("k", 8)
    side = cfg.get("image_side", 224)
    width = cfg.get("width", 1.0)
    if model == "SF":
        spec = netspec.build_sf(side, width)
    elif model == "MF":
        spec = netspec.build_mf(k, side, width)
    else:
        spec = netspec.build_cbmf(k, side, width)
    report = netspec.count_params(spec)
    lines = [f"{name:<28}{count:>14,}" for name, count in report.layers]
    lines.append(f"{'total':<28}{report.total:>14,}  ({report.rounded()})")
    expected = cfg.get("check_total")
    if expected is not None:
        if report.check_total(expected):
            lines.append(f"total matches {expected}")
        else:
            lines.append(f"WARNING: stated total {expected} is inconsistent "
                         f"with the per-layer sum {report.total:,} "
                         f"({report.rounded()})")
    text = "\n".join(lines)
    print(text)
    if out:
        os.makedirs(out, exist_ok=True)
        _write_table(os.path.join(out, "layers.csv"), ["layer", "parameters"],
                     list(report.layers))
        _write_json(os.path.join(out, "summary.json"),
                    {"model": model, "total": report.total,
                     "rounded": report.rounded(),
                     "layers": [list(l) for l in report.layers]})


_COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "extract-config": cmd_extract_config,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "eval": cmd_eval,
    "ablate-k": cmd_ablate_k,
    "ablate-lambda": cmd_ablate_lambda,
    "replay": cmd_replay,
    "count-params": cmd_count_params,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="finemotion",
        description="Finger-press inference from image sequences.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON run configuration document")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        out = args.out or "."
        _COMMANDS[args.command](cfg, args.seed, out)
    except Exception as exc:  # noqa: BLE001 - single-line machine-parseable error
        print(f"error: {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
