"""Stream alignment, windowing, grouped folds, and dataset persistence.

On-disk formats (all documented here, bit-exactly):
  - image stream: directory of 8-bit binary PGM frames plus index.csv with
    rows "frame_name,timestamp_s" (header included);
  - press events: press.csv with rows "finger,onset_s,release_s";
  - markers: markers.csv as written by kinematics.write_marker_file;
  - dataset container: magic "FMDS" + u16 version(=1), little-endian header
    (k, image side, session count, sample count), a session table of
    length-prefixed UTF-8 strings (id, subject, task), then per sample:
    u32 session index, u32 start index, k f32 timestamps, k*17 f32
    normalized configurations, k*5 u8 press bits, k*side*side u8 pixels.
"""

from dataclasses import dataclass
import os
import struct

import numpy as np

from . import kinematics


@dataclass
class PressEventStream:
    task: str                          # piano | typing
    events: list                       # (finger 1..5, onset s, release s)

    def validate(self):
        for f, o, r in self.events:
            if not 1 <= f <= 5:
                raise ValueError(f"finger index {f} outside 1..5")
            if not o < r:
                raise ValueError(f"event onset {o} not before release {r}")
        if self.task == "typing":
            for a in self.events:
                for b in self.events:
                    if a is not b and a[1] < b[2] and b[1] < a[2]:
                        raise ValueError("typing stream has overlapping events")


@dataclass
class Session:
    subject_id: str
    task: str
    times: np.ndarray                  # image timestamps, strictly increasing
    frames: np.ndarray                 # (T, H, W) uint8
    events: PressEventStream
    marker_times: np.ndarray
    marker_frames: list                # label -> xyz dicts
    frame_rate: float
    session_id: str = ""

    def __post_init__(self):
        if not self.session_id:
            self.session_id = f"{self.subject_id}-{self.task}"
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("image timestamps must be strictly increasing")
        if not 15.0 <= self.frame_rate <= 30.0:
            raise ValueError(f"frame rate {self.frame_rate} outside [15, 30]")


@dataclass
class AlignedSequence:
    session_id: str
    subject_id: str
    task: str
    times: np.ndarray
    images: np.ndarray                 # (T, N, N) float64 in [0,1]
    configs: np.ndarray                # (T, 17) normalized
    press: np.ndarray                  # (T, 5) uint8
    dropped: int


@dataclass
class WindowedSample:
    session_id: str
    subject_id: str
    task: str
    start: int
    times: np.ndarray                  # (k,)
    images: np.ndarray                 # (k, N, N) float64
    configs: np.ndarray                # (k, 17) normalized
    press: np.ndarray                  # (k, 5) uint8


def press_vector_at(t, events):
    """5-bit vector: bit i set iff some finger-(i+1) event has onset <= t < release."""
    v = np.zeros(5, dtype=np.uint8)
    for f, o, r in events:
        if o <= t < r:
            v[f - 1] = 1
    return v


def downsample_image(img, side):
    """Area-averaging downsample to side x side; source must be a multiple."""
    h, w = img.shape
    if h == side and w == side:
        return np.asarray(img, dtype=np.float64)
    if h % side or w % side:
        raise ValueError(f"cannot area-average {h}x{w} to {side}x{side}: "
                         "source is not an integer multiple")
    fy, fx = h // side, w // side
    return np.asarray(img, dtype=np.float64).reshape(side, fy, side, fx).mean(axis=(1, 3))


def align(session, side=None):
    """Aligns (image, configuration, press) on the image timestamps.

    The marker frame nearest in time is used when it lies within half the
    nominal frame period; otherwise the image is dropped and counted.
    """
    if side is None:
        side = session.frames.shape[1]
    mt = np.asarray(session.marker_times)
    it = np.asarray(session.times)
    if len(mt) == 0 or mt[0] > it[-1] or mt[-1] < it[0]:
        raise ValueError("marker stream does not overlap the image stream")
    tol = 0.5 / session.frame_rate
    # nearest marker index per image timestamp (monotone in image index)
    pos = np.searchsorted(mt, it)
    left = np.clip(pos - 1, 0, len(mt) - 1)
    right = np.clip(pos, 0, len(mt) - 1)
    nearest = np.where(np.abs(mt[left] - it) <= np.abs(mt[right] - it), left, right)
    keep = np.abs(mt[nearest] - it) <= tol

    times, imgs, cfgs, press = [], [], [], []
    for j in np.flatnonzero(keep):
        cfg = kinematics.extract_configuration(session.marker_frames[nearest[j]])
        cfgs.append(kinematics.normalize_configuration(cfg))
        imgs.append(downsample_image(session.frames[j], side) / 255.0
                    if session.frames.dtype == np.uint8
                    else downsample_image(session.frames[j], side))
        times.append(it[j])
        press.append(press_vector_at(it[j], session.events.events))
    return AlignedSequence(
        session.session_id, session.subject_id, session.task,
        np.array(times), np.array(imgs), np.array(cfgs),
        np.array(press, dtype=np.uint8), int(len(it) - keep.sum()))


def build_windows(aligned, k, stride=1):
    """Windows [l, l+k) at l = 0, stride, 2*stride, ...; never cross sessions."""
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    T = len(aligned.times)
    out = []
    for start in range(0, T - k + 1, stride):
        sl = slice(start, start + k)
        out.append(WindowedSample(
            aligned.session_id, aligned.subject_id, aligned.task, start,
            aligned.times[sl], aligned.images[sl], aligned.configs[sl],
            aligned.press[sl]))
    return out


@dataclass
class FoldPlan:
    folds: list                        # list of lists of session ids

    def validate(self):
        seen = set()
        for fold in self.folds:
            for sid in fold:
                if sid in seen:
                    raise ValueError(f"session {sid!r} appears in two folds")
                seen.add(sid)


def split_folds(session_sizes, n_folds=5, seed=0):
    """Greedy balanced grouping: largest session to the lightest fold.

    session_sizes: dict session id -> window count. Ties are broken by a
    seeded shuffle, so the plan is deterministic given the seed.
    """
    if len(session_sizes) < n_folds:
        raise ValueError(
            f"need at least {n_folds} sessions, got {len(session_sizes)}")
    rng = np.random.default_rng(seed)
    ids = sorted(session_sizes)
    rng.shuffle(ids)
    order = sorted(ids, key=lambda s: -session_sizes[s])
    folds = [[] for _ in range(n_folds)]
    weights = [0] * n_folds
    for sid in order:
        i = weights.index(min(weights))
        folds[i].append(sid)
        weights[i] += session_sizes[sid]
    plan = FoldPlan(folds)
    plan.validate()
    return plan


# ---------------------------------------------------------------- container

_MAGIC = b"FMDS"
_VERSION = 1


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


class _Reader:
    def __init__(self, fh):
        self.fh = fh

    def read(self, n, what):
        data = self.fh.read(n)
        if len(data) != n:
            raise ValueError(
                f"dataset file truncated at byte offset {self.fh.tell() - len(data)} "
                f"while reading {what}")
        return data

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))

    def read_str(self, what):
        (n,) = self.unpack("<H", what)
        return self.read(n, what).decode("utf-8")


def save_dataset(samples, path, k=None, side=None):
    """Writes the container described in the module docstring."""
    if samples:
        k = len(samples[0].times)
        side = samples[0].images.shape[1]
    elif k is None or side is None:
        raise ValueError("empty sample list requires explicit k and side")
    sessions = []
    index = {}
    for s in samples:
        if s.session_id not in index:
            index[s.session_id] = len(sessions)
            sessions.append((s.session_id, s.subject_id, s.task))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HIIII", _VERSION, k, side, len(sessions), len(samples)))
        for sid, subj, task in sessions:
            fh.write(_pack_str(sid) + _pack_str(subj) + _pack_str(task))
        for s in samples:
            fh.write(struct.pack("<II", index[s.session_id], s.start))
            fh.write(np.asarray(s.times, dtype="<f4").tobytes())
            fh.write(np.asarray(s.configs, dtype="<f4").tobytes())
            fh.write(np.asarray(s.press, dtype=np.uint8).tobytes())
            img = np.asarray(s.images)
            if img.dtype != np.uint8:
                img = np.round(img * 255.0).astype(np.uint8)
            fh.write(img.tobytes())


def load_dataset(path):
    """Returns (samples, k, side). Images come back as float64 in [0,1]."""
    with open(path, "rb") as fh:
        r = _Reader(fh)
        if r.read(4, "magic") != _MAGIC:
            raise ValueError(f"{path}: bad magic at byte offset 0")
        version, k, side, n_sessions, n_samples = r.unpack("<HIIII", "header")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported format version {version} "
                             "at byte offset 4")
        sessions = [(r.read_str("session id"), r.read_str("subject"),
                     r.read_str("task")) for _ in range(n_sessions)]
        samples = []
        for _ in range(n_samples):
            sidx, start = r.unpack("<II", "sample header")
            times = np.frombuffer(r.read(4 * k, "timestamps"), dtype="<f4").astype(np.float64)
            cfgs = np.frombuffer(r.read(4 * k * 17, "configurations"),
                                 dtype="<f4").astype(np.float64).reshape(k, 17)
            press = np.frombuffer(r.read(k * 5, "press bits"),
                                  dtype=np.uint8).reshape(k, 5).copy()
            img = np.frombuffer(r.read(k * side * side, "images"),
                                dtype=np.uint8).reshape(k, side, side)
            sid, subj, task = sessions[sidx]
            samples.append(WindowedSample(sid, subj, task, start, times,
                                          img.astype(np.float64) / 255.0, cfgs, press))
        extra = fh.read(1)
        if extra:
            raise ValueError(f"{path}: trailing bytes at offset {fh.tell() - 1}")
    return samples, k, side


# ------------------------------------------------------------- disk streams

def write_pgm(path, img):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.asarray(img, dtype=np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    parts = []
    pos = 2
    while len(parts) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        parts.append(int(data[pos:end]))
        pos = end
    pos += 1
    w, h, maxv = parts
    if maxv != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def write_session(session, outdir):
    """Emits the PGM + index + press + marker file layout for one session."""
    os.makedirs(outdir, exist_ok=True)
    frame_dir = os.path.join(outdir, "frames")
    os.makedirs(frame_dir, exist_ok=True)
    with open(os.path.join(outdir, "index.csv"), "w", encoding="utf-8") as fh:
        fh.write("frame,timestamp_s\n")
        for j, t in enumerate(session.times):
            name = f"frame_{j:06d}.pgm"
            write_pgm(os.path.join(frame_dir, name), session.frames[j])
            fh.write(f"{name},{t:.9g}\n")
    with open(os.path.join(outdir, "press.csv"), "w", encoding="utf-8") as fh:
        fh.write("finger,onset_s,release_s\n")
        for f, o, r in session.events.events:
            fh.write(f"{f},{float(o)!r},{float(r)!r}\n")
    kinematics.write_marker_file(os.path.join(outdir, "markers.csv"),
                                 session.marker_times, session.marker_frames)
    with open(os.path.join(outdir, "meta.csv"), "w", encoding="utf-8") as fh:
        fh.write("subject,task,frame_rate\n")
        fh.write(f"{session.subject_id},{session.task},{session.frame_rate:.9g}\n")


def read_session(indir):
    with open(os.path.join(indir, "meta.csv"), encoding="utf-8") as fh:
        fh.readline()
        subject, task, rate = fh.readline().strip().split(",")
    times, frames = [], []
    with open(os.path.join(indir, "index.csv"), encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            name, t = line.strip().split(",")
            times.append(float(t))
            frames.append(read_pgm(os.path.join(indir, "frames", name)))
    events = []
    with open(os.path.join(indir, "press.csv"), encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            f, o, r = line.strip().split(",")
            events.append((int(f), float(o), float(r)))
    mtimes, mframes = kinematics.read_marker_file(os.path.join(indir, "markers.csv"))
    return Session(subject, task, np.array(times), np.array(frames),
                   PressEventStream(task, events), mtimes, mframes, float(rate),
                   session_id=os.path.basename(os.path.normpath(indir)))
