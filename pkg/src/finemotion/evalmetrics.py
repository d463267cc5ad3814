"""Threshold metrics, grouped cross-validation, and the two ablation sweeps."""

from dataclasses import dataclass, field
import concurrent.futures
import math
import os
import numpy as np

from . import datapipe, losses, netspec
from .model import Model
from .train import TrainConfig, _batch, _batches, train

THRESHOLD = 0.5


def worker_count():
    try:
        return max(1, int(os.environ.get("FINEMOTION_THREADS", "1")))
    except ValueError:
        return 1


def rates_from_counts(tp, fp, fn, tn):
    """accuracy/recall/precision/F1 with the zero-denominator-means-0 rule."""
    total = tp + fp + fn + tn
    acc = (tp + tn) / total if total else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"accuracy": acc, "recall": rec, "precision": prec, "f1": f1}


@dataclass
class MetricsReport:
    pooled: dict
    per_finger: list                   # 5 rate dicts
    per_subject: dict                  # subject id -> rate dict
    per_fold: dict = field(default_factory=dict)
    joint_mae: list = None             # 17 values in radians (CBMF only)
    curves: list = field(default_factory=list)

    def to_summary(self):
        return {"pooled": self.pooled, "per_finger": self.per_finger,
                "per_subject": self.per_subject, "per_fold": self.per_fold,
                "joint_mae": self.joint_mae, "curves": self.curves}


def evaluate(spec, params, test_windows, batch_size=32, dtype=np.float64):
    """Metrics at decision threshold 0.5 over all finger-timestep decisions."""
    model = Model(spec, dtype=dtype)
    model.init_params(0)
    model.set_params(params)
    counts = np.zeros((5, 4))                         # per finger: tp fp fn tn
    subj_counts = {}
    mae_sum = np.zeros(17)
    mae_n = 0
    for chunk in _batches(np.arange(len(test_windows)), test_windows, batch_size):
        imgs, press, cfgs = _batch(chunk, spec.kind, dtype)
        out = model.forward(imgs, train=False)
        pred = (np.asarray(out["probs"], dtype=np.float64)
                >= THRESHOLD).astype(np.uint8)
        lab = press.astype(np.uint8)
        flat_pred = pred.reshape(-1, 5)
        flat_lab = lab.reshape(-1, 5)
        # map each decision row back to its subject
        per_window = flat_pred.shape[0] // len(chunk)
        subjects = np.repeat([s.subject_id for s in chunk], per_window)
        for f in range(5):
            p, l = flat_pred[:, f], flat_lab[:, f]
            counts[f] += [np.sum((p == 1) & (l == 1)), np.sum((p == 1) & (l == 0)),
                          np.sum((p == 0) & (l == 1)), np.sum((p == 0) & (l == 0))]
        for subj in np.unique(subjects):
            rows = subjects == subj
            p, l = flat_pred[rows], flat_lab[rows]
            c = subj_counts.setdefault(subj, np.zeros(4))
            c += [np.sum((p == 1) & (l == 1)), np.sum((p == 1) & (l == 0)),
                  np.sum((p == 0) & (l == 1)), np.sum((p == 0) & (l == 0))]
        if "configs" in out:
            d = np.abs(np.asarray(out["configs"], dtype=np.float64)
                       - cfgs) * math.pi
            mae_sum += d.reshape(-1, 17).sum(axis=0)
            mae_n += d.reshape(-1, 17).shape[0]
    pooled = rates_from_counts(*counts.sum(axis=0))
    return MetricsReport(
        pooled=pooled,
        per_finger=[rates_from_counts(*counts[f]) for f in range(5)],
        per_subject={s: rates_from_counts(*c) for s, c in sorted(subj_counts.items())},
        joint_mae=(mae_sum / mae_n).tolist() if mae_n else None,
    )


def _train_and_eval_fold(config, samples, plan, fold_index):
    test_ids = set(plan.folds[fold_index])
    train_w = [s for s in samples if s.session_id not in test_ids]
    test_w = [s for s in samples if s.session_id in test_ids]
    trained_ids = {s.session_id for s in train_w}
    if trained_ids & {s.session_id for s in test_w}:
        raise ValueError("fold audit failed: test window from a trained-on session")
    cfg = TrainConfig(**{**config.__dict__, "fold": fold_index})
    result = train(cfg, train_w, test_w)
    report = evaluate(cfg.build_spec(), result.params, test_w,
                      cfg.batch_size, cfg.np_dtype())
    report.curves = result.curves
    return result, report


def run_crossval(config, samples, plan):
    """One training per held-out fold; mean/std aggregation over folds."""
    plan.validate()
    n = len(plan.folds)
    workers = min(worker_count(), n)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(
                lambda i: _train_and_eval_fold(config, samples, plan, i), range(n)))
    else:
        results = [_train_and_eval_fold(config, samples, plan, i) for i in range(n)]
    reports = [r for _, r in results]
    keys = ("accuracy", "recall", "precision", "f1")
    mean = {k: float(np.mean([r.pooled[k] for r in reports])) for k in keys}
    std = {k: float(min(1.0, np.std([r.pooled[k] for r in reports]))) for k in keys}
    agg = MetricsReport(
        pooled=mean,
        per_finger=[{k: float(np.mean([r.per_finger[f][k] for r in reports]))
                     for k in keys} for f in range(5)],
        per_subject=_merge_subjects(reports, keys),
        per_fold={i: r.pooled for i, r in enumerate(reports)},
    )
    maes = [r.joint_mae for r in reports if r.joint_mae]
    if maes:
        agg.joint_mae = np.mean(maes, axis=0).tolist()
    return agg, std, reports


def _merge_subjects(reports, keys):
    out = {}
    for r in reports:
        for s, rates in r.per_subject.items():
            out.setdefault(s, []).append(rates)
    return {s: {k: float(np.mean([r[k] for r in rs])) for k in keys}
            for s, rs in sorted(out.items())}


def ablate_k(config, aligned_seqs, k_values=(1, 2, 4, 6, 8), stride=1,
             holdout_sessions=()):
    """Per-k test-loss curves; k=1 runs the single-frame model."""
    holdout = set(holdout_sessions)
    side = aligned_seqs[0].images.shape[1] if aligned_seqs else config.image_side
    config = TrainConfig(**{**config.__dict__, "image_side": side})
    out = {}
    for k in k_values:
        windows = []
        for seq in aligned_seqs:
            windows.extend(datapipe.build_windows(seq, k, stride))
        train_w = [s for s in windows if s.session_id not in holdout]
        test_w = [s for s in windows if s.session_id in holdout]
        cfg = TrainConfig(**{**config.__dict__,
                             "model": "SF" if k == 1 else "MF", "k": k})
        result = train(cfg, train_w, test_w)
        out[k] = [row["test_bce"] for row in result.curves]
    return out


def ablate_lambda(config, train_windows, test_windows,
                  lam_values=(0, 1, 2, 4, 8, 16, 32, 64)):
    """One CBMF training per lambda; final (BCE, MSE) on the test set.
    lambda = 0 still reports the MSE, which never enters the gradient."""
    rows = []
    for lam in lam_values:
        cfg = TrainConfig(**{**config.__dict__, "model": "CBMF",
                             "lam": float(lam)})
        result = train(cfg, train_windows, test_windows)
        last = result.curves[-1]
        rows.append({"lam": float(lam), "final_bce": last["test_bce"],
                     "final_mse": last["test_mse"]})
    return rows


def spearman(xs, ys):
    """Spearman rank correlation (no ties expected in the sweeps)."""
    rx = np.argsort(np.argsort(xs)).astype(np.float64)
    ry = np.argsort(np.argsort(ys)).astype(np.float64)
    rx -= rx.mean(); ry -= ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx) * np.sum(ry * ry)))
    return float(np.sum(rx * ry) / denom) if denom else 0.0
