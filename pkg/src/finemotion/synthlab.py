"""Seeded synthetic "subject lab".

Generates, per session: a press script, a joint-angle trajectory driven by a
critically-damped response, marker frames placed by planar-segment forward
kinematics (the inverse of kinematics.extract_configuration), and band-image
renderings whose geometry responds monotonically to flexion. Everything is
deterministic given seeds.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kinematics


@dataclass(frozen=True)
class SynthConstants:
    """Every invented dynamics constant, in one place."""
    press_threshold: float = 2.97      # label = 1 iff MP angle < this (rad)
    response_tau: float = 0.06        # s, critically damped time constant
    rest_mp: float = math.pi
    rest_pip: float = math.pi
    rest_dip: float = 0.95 * math.pi
    piano_mp: float = 2.2              # flexed targets, piano
    piano_pip: float = 2.35
    piano_dip: float = 2.6
    typing_depth: float = 0.7          # typing target = rest - 0.7*(rest - piano)
    rest_thumb_bend: float = 2.8
    piano_thumb_bend: float = 2.4
    wrist_rest: float = math.pi / 2    # roll, pitch, yaw
    wrist_drift_typing: float = 0.05   # rad amplitude; piano is 3x
    wrist_drift_piano: float = 0.15
    min_finger_gap: float = 0.3        # s between presses of one finger
    press_rate: float = 1.5            # target presses per second


CONSTANTS = SynthConstants()


@dataclass(frozen=True)
class HandModelGeometry:
    """Planar-segment lengths and fixed anchor placements (millimeters)."""
    knuckle_span: float = 80.0         # f11 .. f41 along x
    seg1: float = 45.0                 # MP -> PIP
    seg2: float = 28.0                 # PIP -> DIP
    seg3: float = 18.0                 # DIP -> fingertip
    t4: tuple = (40.0, 30.0, 0.0)
    t5: tuple = (40.0, 70.0, 0.0)
    wrist_len: float = 60.0            # t4 -> t3
    thumb_seg1: float = 35.0           # t5 -> t6
    thumb_seg2: float = 30.0           # t6 -> t7
    e1: tuple = (40.0, 160.0, 0.0)
    elbow_len: float = 60.0


GEOMETRY = HandModelGeometry()

_Z = np.array([0.0, 0.0, 1.0])
_THUMB_DIR = np.array([-0.7, 0.7, 0.0]) / np.linalg.norm([-0.7, 0.7, 0.0])
_THUMB_AUX = np.array([0.3, 0.9, 0.1])


def _rotate(v, axis, angle):
    """Rodrigues rotation of v about a unit axis."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def markers_from_config(x, geometry=GEOMETRY):
    """Marker frame whose extracted configuration is exactly x.

    The palm is laid in the z=0 plane with normal +z; each finger ray flexes
    in the plane spanned by its palm-anchor direction and z. Raises if the
    wrist pitch/yaw pair is not realizable (cos^2 p + cos^2 y > 1).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (17,):
        raise ValueError(f"configuration must have 17 angles, got shape {x.shape}")
    if np.any(x < 0) or np.any(x > np.pi):
        raise ValueError("configuration angle outside [0, pi]")
    g = geometry
    m = {}
    t4 = np.array(g.t4)
    t5 = np.array(g.t5)
    m["t4"], m["t5"] = t4, t5

    roll, pitch, yaw = x[14], x[15], x[16]
    ux = -math.cos(yaw)
    uz = math.cos(pitch)
    rem = 1.0 - ux * ux - uz * uz
    if rem < -1e-12:
        raise ValueError(
            f"wrist pitch/yaw pair not realizable: cos^2 terms sum to {1 - rem:.6f}")
    u = np.array([ux, math.sqrt(max(rem, 0.0)), uz])
    m["t3"] = t4 + g.wrist_len * u
    e1 = np.array(g.e1)
    m["e1"] = e1
    m["e2"] = e1 + g.elbow_len * np.array([math.sin(roll), 0.0, math.cos(roll)])

    # thumb
    v6 = math.sin(x[0]) * _THUMB_DIR + math.cos(x[0]) * _Z
    t6 = t5 + g.thumb_seg1 * v6
    w = np.cross(v6, _THUMB_AUX)
    w /= np.linalg.norm(w)
    dir7 = math.cos(x[1]) * (-v6) + math.sin(x[1]) * w
    m["t6"], m["t7"] = t6, t6 + g.thumb_seg2 * dir7

    # finger rays
    for ray in range(1, 5):
        base = np.array([g.knuckle_span * (ray - 1) / 3.0, 0.0, 0.0])
        j1, j2, j3 = x[2 + (ray - 1) * 3: 5 + (ray - 1) * 3]
        a = t5 - base
        a /= np.linalg.norm(a)
        axis = np.cross(a, -_Z)
        axis /= np.linalg.norm(axis)
        d1 = math.cos(j1) * a - math.sin(j1) * _Z
        d2 = _rotate(d1, axis, math.pi - j2)
        d3 = _rotate(d2, axis, math.pi - j3)
        p1 = base
        p2 = p1 + g.seg1 * d1
        p3 = p2 + g.seg2 * d2
        p4 = p3 + g.seg3 * d3
        for j, p in enumerate((p1, p2, p3, p4), start=1):
            m[f"f{ray}{j}"] = p
    return m


def random_configuration(rng, constants=CONSTANTS):
    """A uniformly random configuration inside the realizable region."""
    x = np.empty(17)
    x[0] = rng.uniform(0.2, math.pi - 0.05)
    x[1] = rng.uniform(0.2, math.pi - 0.05)
    for ray in range(4):
        x[2 + 3 * ray: 5 + 3 * ray] = rng.uniform(0.2, math.pi - 0.01, 3)
    x[14] = rng.uniform(0.05, math.pi - 0.05)          # roll
    pitch = rng.uniform(0.3, math.pi - 0.3)
    lim = math.sqrt(max(1.0 - math.cos(pitch) ** 2 - 0.01, 0.0))
    lo = math.acos(lim)
    x[15] = pitch
    x[16] = rng.uniform(lo + 1e-6, math.pi - lo - 1e-6)  # yaw
    return x


@dataclass
class MotionScript:
    task: str                          # piano | typing
    duration: float
    intents: list                      # (finger 1..5, onset s, release s)
    hovers: list = field(default_factory=list)  # slow unlabeled flexions


def gen_motion_script(task, duration, seed, constants=CONSTANTS):
    """Deterministic press script honoring the task's overlap rules."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if task not in ("piano", "typing"):
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    c = constants
    intents = []
    last_release = np.full(6, -1e9)    # per finger
    t = rng.uniform(0.2, 0.8)
    while t < duration:
        if task == "typing":
            dur = rng.uniform(0.18, 0.35)
            free = [f for f in range(1, 6) if last_release[f] + c.min_finger_gap <= t]
            if free:
                finger = int(rng.choice(free))
                if t + dur < duration:
                    intents.append((finger, t, t + dur))
                    last_release[finger] = t + dur
            # no overlap: next onset strictly after this release
            t = max(t + dur, last_release.max()) + rng.uniform(0.08, 0.3)
        else:
            dur = rng.uniform(0.3, 0.8)
            active = [(f, o, r) for f, o, r in intents if r > t]
            free = [f for f in range(1, 6) if last_release[f] + c.min_finger_gap <= t]
            if len(active) < 2 and free:
                finger = int(rng.choice(free))
                if len(active) == 1:
                    # cap concurrency at 2: end before a third could start
                    dur = min(dur, active[0][2] - t + rng.uniform(0.0, 0.2))
                if dur > 0.05 and t + dur < duration:
                    intents.append((finger, t, t + dur))
                    last_release[finger] = t + dur
            t += rng.uniform(0.15, 0.5)

    # Slow unlabeled flexions ("hovers"): the finger drifts down to press
    # depth and back without a press. A single frame at the bottom of a
    # hover is indistinguishable from a press frame; only the motion's
    # time course (slow ramp vs. fast attack) separates the two, so these
    # put a hard ceiling on any per-frame decoder while remaining
    # decodable from a short window of frames.
    hovers = []
    busy = {f: [(o - 0.1, r + 0.1) for ff, o, r in intents if ff == f]
            for f in range(1, 6)}
    t = rng.uniform(0.3, 1.0)
    while t < duration:
        dur = rng.uniform(0.9, 1.5)
        finger = int(rng.integers(1, 6))
        span = (t, t + dur)
        clear = all(r <= span[0] or o >= span[1] for o, r in busy[finger])
        if clear and t + dur < duration:
            hovers.append((finger, t, t + dur))
            busy[finger].append(span)
        t += dur + rng.uniform(0.3, 1.2)
    return MotionScript(task, duration, intents, hovers)


def _targets(task, constants=CONSTANTS):
    c = constants
    rest = np.array([c.rest_mp, c.rest_pip, c.rest_dip])
    piano = np.array([c.piano_mp, c.piano_pip, c.piano_dip])
    if task == "piano":
        fing = piano
        thumb = np.array([c.piano_mp, c.piano_thumb_bend])
    else:
        fing = rest - c.typing_depth * (rest - piano)
        thumb_rest = np.array([c.rest_mp, c.rest_thumb_bend])
        thumb_piano = np.array([c.piano_mp, c.piano_thumb_bend])
        thumb = thumb_rest - c.typing_depth * (thumb_rest - thumb_piano)
    return rest, fing, thumb


def joints_from_script(script, frame_rate, seed=0, constants=CONSTANTS):
    """Angle trajectory + frame-aligned press labels and emitted events.

    Returns (times, configs (T,17), press (T,5) uint8, events list).
    Per finger, the press intent drives the joints from rest toward the
    flexed target through a critically damped second-order response; the
    label is set while the MP angle sits below the press threshold. Wrist
    angles follow slow bounded drift.
    """
    if not 15.0 <= frame_rate <= 30.0:
        raise ValueError(f"frame rate {frame_rate} outside [15, 30]")
    c = constants
    rng = np.random.default_rng(seed)
    T = int(round(script.duration * frame_rate))
    times = np.arange(T) / frame_rate
    rest3, target3, target_thumb = _targets(script.task, c)
    rest_thumb = np.array([c.rest_mp, c.rest_thumb_bend])

    # per finger: is a press intent active at time t
    intervals = {f: [(o, r) for ff, o, r in script.intents if ff == f]
                 for f in range(1, 6)}
    hover_iv = {f: [(o, r) for ff, o, r in getattr(script, "hovers", [])
                    if ff == f] for f in range(1, 6)}

    nsub = 8
    dt = 1.0 / (frame_rate * nsub)
    tau = c.response_tau
    # state per finger: thumb 2 joints, rays 3 joints
    pos = {f: (rest_thumb.copy() if f == 1 else rest3.copy()) for f in range(1, 6)}
    vel = {f: np.zeros_like(pos[f]) for f in range(1, 6)}

    configs = np.empty((T, 17))
    press = np.zeros((T, 5), dtype=np.uint8)

    amp = c.wrist_drift_piano if script.task == "piano" else c.wrist_drift_typing
    wf = rng.uniform(0.05, 0.15, 3)
    wph = rng.uniform(0, 2 * math.pi, 3)

    for j in range(T):
        t0 = times[j]
        for s in range(nsub):
            t = t0 + s * dt
            for f in range(1, 6):
                active = any(o <= t < r for o, r in intervals[f])
                rest = rest_thumb if f == 1 else rest3
                flex = target_thumb if f == 1 else target3
                if active:
                    u = flex
                else:
                    u = rest
                    for o, r in hover_iv[f]:
                        if o <= t < r:
                            # smooth slow ramp down to press depth and back
                            s = math.sin(math.pi * (t - o) / (r - o)) ** 2
                            u = rest + s * (flex - rest)
                            break
                acc = -(2.0 / tau) * vel[f] - (pos[f] - u) / (tau * tau)
                vel[f] += acc * dt
                pos[f] += vel[f] * dt
        wrist = c.wrist_rest + amp * np.sin(2 * math.pi * wf * t0 + wph)
        cfg = np.concatenate([pos[1], pos[2], pos[3], pos[4], pos[5], wrist])
        configs[j] = np.clip(cfg, 0.0, math.pi)
        for f in range(1, 6):
            # A press is a deliberate keystroke: the finger must both sit
            # below the contact depth and be driven by a press intent.
            # Hover excursions reach the same depth but are not presses.
            depth_ok = pos[f][0] < c.press_threshold
            intent_ok = any(o <= t0 < r for o, r in intervals[f])
            press[j, f - 1] = 1 if (depth_ok and intent_ok) else 0

    events = events_from_labels(times, press, frame_rate)
    return times, configs, press, events


def events_from_labels(times, press, frame_rate):
    """Maximal label runs -> (finger, onset, release) with release one frame
    past the last labeled frame."""
    events = []
    T = len(times)
    for f in range(5):
        j = 0
        while j < T:
            if press[j, f]:
                start = j
                while j < T and press[j, f]:
                    j += 1
                release = float(times[j]) if j < T \
                    else float(times[j - 1] + 1.0 / frame_rate)
                events.append((f + 1, float(times[start]), release))
            else:
                j += 1
    return sorted(events, key=lambda e: (e[1], e[0]))


@dataclass(frozen=True)
class SubjectPhenotype:
    """Muscle-band layout of one synthetic subject.

    Six horizontal bands map onto the six joint groups (thumb, four finger
    rays, wrist); each band is split into three column segments whose
    brightness is affine in one normalized joint angle, so every joint has
    its own patch of the image. Flexion (a smaller angle) makes the band
    segment brighter — the dominance cue the models are meant to pick up.
    """
    seed: int
    centers: tuple                     # vertical position per band, fraction
    thicknesses: tuple                 # half-thickness per band, fraction
    gains: tuple                       # response gain per band
    sigma: float = 0.12                # speckle scale
    brightness: float = 0.55


def make_phenotype(seed, sigma=0.12):
    rng = np.random.default_rng(seed)
    centers = 0.10 + 0.145 * np.arange(6) + rng.uniform(-0.015, 0.015, 6)
    thick = 0.045 + rng.uniform(-0.008, 0.008, 6)
    gains = 1.0 + rng.uniform(-0.2, 0.2, 6)
    return SubjectPhenotype(seed, tuple(centers), tuple(thick), tuple(gains),
                            sigma, 0.5 + rng.uniform(0.0, 0.15))


def _band_features(x):
    """6x3 matrix of normalized angles: one row per band, one column segment
    per joint. Thumb (2 joints) repeats its second joint; the other rows are
    the finger rays' (MP, PIP, DIP) and the wrist's (roll, pitch, yaw)."""
    n = np.asarray(x, dtype=np.float64) / math.pi
    return np.array([
        [n[0], n[1], n[1]],
        n[2:5], n[5:8], n[8:11], n[11:14],
        n[14:17],
    ])


def render_frame(x, phenotype, rng, side=64):
    """Band image in [0,1]; deterministic given the rng state."""
    if side < 32:
        raise ValueError("image side must be >= 32")
    ph = phenotype
    feats = _band_features(x)
    rows = np.arange(side, dtype=np.float64)[:, None]
    thirds = np.minimum(np.arange(side) * 3 // side, 2)
    img = np.full((side, side), 0.06 * ph.brightness)
    for b in range(6):
        # brightness decreases affinely with the angle: flexion -> dominance
        amp = ph.brightness * ph.gains[b] * (1.3 - feats[b][thirds])
        prof = np.exp(-((rows - ph.centers[b] * side)
                        / max(ph.thicknesses[b] * side, 1e-6)) ** 2)
        img = img + prof * amp
    if ph.sigma > 0:
        img = img * np.exp(rng.normal(0.0, ph.sigma, img.shape))
        img = img + rng.normal(0.0, ph.sigma / 2.0, img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_session(task, subject_seed, session_seed, duration=90.0, frame_rate=20.0,
                side=64, sigma=0.12, constants=CONSTANTS, geometry=GEOMETRY):
    """One fully-aligned synthetic session (imported lazily to avoid cycles)."""
    from .datapipe import Session, PressEventStream
    script = gen_motion_script(task, duration, session_seed, constants)
    times, configs, press, events = joints_from_script(
        script, frame_rate, seed=session_seed + 1, constants=constants)
    phenotype = make_phenotype(subject_seed, sigma=sigma)
    rng = np.random.default_rng(session_seed + 2)
    frames = np.empty((len(times), side, side), dtype=np.uint8)
    marker_frames = []
    for j in range(len(times)):
        img = render_frame(configs[j], phenotype, rng, side=side)
        frames[j] = np.round(img * 255.0).astype(np.uint8)
        marker_frames.append(markers_from_config(configs[j], geometry))
    return Session(
        subject_id=f"s{subject_seed}",
        task=task,
        times=times,
        frames=frames,
        events=PressEventStream(task, events),
        marker_times=times.copy(),
        marker_frames=marker_frames,
        frame_rate=frame_rate,
    )
