"""Joint angles from labeled 3D marker frames.

A hand pose is 17 angles in radians, fixed order:
  [J1_1, J1_2,                      thumb (press axis, bend)
   J2_1..J2_3, ..., J5_1..J5_3,     four finger rays: MP, PIP, DIP
   Jw_r, Jw_p, Jw_y]                wrist roll, pitch, yaw

Finger ray i (1..4) carries markers f{i}1..f{i}4 (MP, PIP, DIP, fingertip);
ray i corresponds to finger F(i+1). Hand/wrist markers t3, t4, t5, thumb
markers t6, t7 and elbow markers e1, e2 complete the set. Every angle is
arctan2(|u x v|, u.v), so values land in [0, pi]; a fully extended finger
reads pi and flexion decreases the value.
"""

import numpy as np

EPS = 1e-9  # degeneracy threshold, millimeters

JOINT_NAMES = (
    "J1_1", "J1_2",
    "J2_1", "J2_2", "J2_3",
    "J3_1", "J3_2", "J3_3",
    "J4_1", "J4_2", "J4_3",
    "J5_1", "J5_2", "J5_3",
    "Jw_r", "Jw_p", "Jw_y",
)

MARKER_LABELS = tuple(
    [f"f{i}{j}" for i in range(1, 5) for j in range(1, 5)]
    + ["t3", "t4", "t5", "t6", "t7", "e1", "e2"]
)

# Palm-base anchor used for each ray's MP angle.
MP_ANCHOR = {1: "t5", 2: "t5", 3: "t5", 4: "t5"}


def vector_between(a, b):
    """Vector from point a to point b."""
    return np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)


def angle_between(u, v, labels=""):
    """arctan2(|u x v|, u.v) in [0, pi]; rejects near-zero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.linalg.norm(u) <= EPS or np.linalg.norm(v) <= EPS:
        raise ValueError(f"degenerate vector in angle computation {labels or '(unlabeled)'}")
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


def palm_normal(f11, f41, t4):
    """Unit normal of the palm plane through f11, f41, t4."""
    n = np.cross(vector_between(f11, f41), vector_between(f11, t4))
    nn = np.linalg.norm(n)
    if nn <= EPS:
        raise ValueError("palm markers f11, f41, t4 are collinear")
    return n / nn


def _get(markers, label):
    try:
        return np.asarray(markers[label], dtype=np.float64)
    except KeyError:
        raise ValueError(f"missing marker label {label!r}") from None


def extract_configuration(markers):
    """17 joint angles from one labeled marker frame (dict label -> xyz)."""
    t3, t4, t5 = _get(markers, "t3"), _get(markers, "t4"), _get(markers, "t5")
    t6, t7 = _get(markers, "t6"), _get(markers, "t7")
    e1, e2 = _get(markers, "e1"), _get(markers, "e2")
    f11, f41 = _get(markers, "f11"), _get(markers, "f41")

    n = palm_normal(f11, f41, t4)
    out = np.empty(17)
    out[0] = angle_between(vector_between(t5, t6), n, "t5->t6 vs palm normal")
    out[1] = angle_between(vector_between(t6, t7), vector_between(t6, t5), "t6->t7 vs t6->t5")
    for ray in range(1, 5):
        m = [_get(markers, f"f{ray}{j}") for j in range(1, 5)]
        anchor = _get(markers, MP_ANCHOR[ray])
        base = 2 + (ray - 1) * 3
        out[base] = angle_between(
            vector_between(m[0], anchor), vector_between(m[0], m[1]),
            f"f{ray}1->anchor vs f{ray}1->f{ray}2")
        out[base + 1] = angle_between(
            vector_between(m[1], m[0]), vector_between(m[1], m[2]),
            f"f{ray}2->f{ray}1 vs f{ray}2->f{ray}3")
        out[base + 2] = angle_between(
            vector_between(m[2], m[1]), vector_between(m[2], m[3]),
            f"f{ray}3->f{ray}2 vs f{ray}3->f{ray}4")
    out[14] = angle_between(e2 - e1, n, "elbow axis vs palm normal")
    out[15] = angle_between(n, vector_between(t4, t3), "palm normal vs t4->t3")
    out[16] = angle_between(vector_between(f41, f11), vector_between(t4, t3),
                            "f41->f11 vs t4->t3")
    return out


def normalize_configuration(x):
    """Angles [0, pi] -> [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1e-12) or np.any(x > np.pi + 1e-12):
        raise ValueError("configuration angle outside [0, pi]")
    return x / np.pi


def denormalize_configuration(x):
    return np.asarray(x, dtype=np.float64) * np.pi


def write_marker_file(path, times, frames):
    """Delimited marker stream: header, then time_s + x,y,z per label."""
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["time_s"] + [f"{lab}_{ax}" for lab in MARKER_LABELS for ax in "xyz"]
        fh.write(",".join(cols) + "\n")
        for t, markers in zip(times, frames):
            row = [f"{t:.9g}"]
            for lab in MARKER_LABELS:
                row += [f"{c:.9g}" for c in markers[lab]]
            fh.write(",".join(row) + "\n")


def read_marker_file(path):
    """Returns (times array, list of label->xyz dicts)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["time_s"] + [f"{lab}_{ax}" for lab in MARKER_LABELS for ax in "xyz"]
        if header != expected:
            raise ValueError(f"marker file {path}: unexpected header")
        times, frames = [], []
        for line in fh:
            vals = [float(v) for v in line.strip().split(",")]
            times.append(vals[0])
            frames.append({lab: np.array(vals[1 + 3 * i:4 + 3 * i])
                           for i, lab in enumerate(MARKER_LABELS)})
    return np.array(times), frames
