"""Per-frame press probabilities -> timed events -> text or MIDI."""

from dataclasses import dataclass
import struct

import numpy as np

THRESHOLD = 0.5
NOTE_MAP = (60, 62, 64, 65, 67)        # C4 D4 E4 F4 G4 for fingers 1..5
CHAR_MAP = (" ", "j", "k", "l", ";")   # thumb space, fingers 2..5
DIVISION = 480                         # ticks per quarter note
TEMPO_US = 500_000                     # microseconds per quarter (120 bpm)


@dataclass
class ReplayOutput:
    events: list                       # (finger 1..5, onset s, release s)
    text: str = ""                     # typing mapping
    notes: list = None                 # (note, onset s, release s)

    def validate(self):
        for f in range(1, 6):
            mine = sorted(e for e in self.events if e[0] == f)
            for (_, o, r), (_, o2, _) in zip(mine, mine[1:]):
                if o2 < r:
                    raise ValueError(f"overlapping events for finger {f}")
        for _, o, r in self.events:
            if not o < r:
                raise ValueError("event onset must precede release")


def rasterize(events, n_frames, frame_rate):
    """Events -> per-frame {0,1} matrix; frame j covers time j/frame_rate."""
    probs = np.zeros((n_frames, 5))
    times = np.arange(n_frames) / frame_rate
    for f, o, r in events:
        probs[(times >= o) & (times < r), f - 1] = 1.0
    return probs


def extract_events(probs, frame_rate):
    """Threshold at 0.5, close single-frame gaps, drop sub-frame runs; each
    maximal run becomes (finger, first frame time, one frame past the last)."""
    probs = np.asarray(probs, dtype=np.float64)
    if frame_rate <= 0:
        raise ValueError("frame rate must be positive")
    T = probs.shape[0]
    events = []
    for f in range(5):
        on = probs[:, f] >= THRESHOLD
        # close gaps of length 1
        for j in range(1, T - 1):
            if not on[j] and on[j - 1] and on[j + 1]:
                on[j] = True
        j = 0
        while j < T:
            if on[j]:
                start = j
                while j < T and on[j]:
                    j += 1
                if j - start >= 1:
                    events.append((f + 1, start / frame_rate, j / frame_rate))
            else:
                j += 1
    return sorted(events, key=lambda e: (e[1], e[0]))


def replay(probs, frame_rate, mapping="piano", note_map=NOTE_MAP,
           char_map=CHAR_MAP):
    events = extract_events(probs, frame_rate)
    out = ReplayOutput(events)
    if mapping == "typing":
        out.text = "".join(char_map[f - 1] for f, _, _ in events)
    elif mapping == "piano":
        out.notes = [(note_map[f - 1], o, r) for f, o, r in events]
    else:
        raise ValueError(f"unknown mapping {mapping!r}")
    out.validate()
    return out


# ------------------------------------------------------------------- MIDI

def _ticks(seconds):
    return int(round(seconds * DIVISION * 1_000_000 / TEMPO_US))


def _var_len(n):
    out = [n & 0x7F]
    n >>= 7
    while n:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    return bytes(reversed(out))


def write_midi(path, notes, velocity=96):
    """Type-0 Standard MIDI File from (note, onset s, release s) triples."""
    msgs = []
    for note, on, off in notes:
        msgs.append((_ticks(on), 1, 0x90, note, velocity))
        msgs.append((_ticks(off), 0, 0x80, note, 0))
    msgs.sort()
    track = bytearray()
    track += _var_len(0) + bytes([0xFF, 0x51, 0x03]) + TEMPO_US.to_bytes(3, "big")
    last = 0
    for tick, _, status, note, vel in msgs:
        track += _var_len(tick - last) + bytes([status, note, vel])
        last = tick
    track += _var_len(0) + bytes([0xFF, 0x2F, 0x00])
    with open(path, "wb") as fh:
        fh.write(b"MThd" + struct.pack(">IHHH", 6, 0, 1, DIVISION))
        fh.write(b"MTrk" + struct.pack(">I", len(track)) + bytes(track))


def read_midi(path):
    """Parses the files write_midi emits; returns (note, onset s, release s)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"MThd":
        raise ValueError(f"{path}: not a Standard MIDI File")
    length, fmt, ntracks, division = struct.unpack(">IHHH", data[4:14])
    if fmt != 0 or ntracks != 1:
        raise ValueError(f"{path}: expected a single-track type-0 file")
    pos = 8 + length
    if data[pos:pos + 4] != b"MTrk":
        raise ValueError(f"{path}: missing track chunk")
    (tlen,) = struct.unpack(">I", data[pos + 4:pos + 8])
    pos += 8
    end = pos + tlen
    tempo = TEMPO_US
    tick = 0
    open_notes = {}
    notes = []
    while pos < end:
        delta = 0
        while True:
            b = data[pos]; pos += 1
            delta = (delta << 7) | (b & 0x7F)
            if not b & 0x80:
                break
        tick += delta
        status = data[pos]; pos += 1
        if status == 0xFF:
            meta = data[pos]; pos += 1
            n = data[pos]; pos += 1
            if meta == 0x51:
                tempo = int.from_bytes(data[pos:pos + 3], "big")
            pos += n
        elif status & 0xF0 in (0x90, 0x80):
            note, vel = data[pos], data[pos + 1]
            pos += 2
            t = tick * tempo / (division * 1_000_000)
            if status & 0xF0 == 0x90 and vel > 0:
                open_notes[note] = t
            elif note in open_notes:
                notes.append((note, open_notes.pop(note), t))
        else:
            raise ValueError(f"{path}: unsupported event 0x{status:02x} "
                             f"at byte {pos - 1}")
    return sorted(notes, key=lambda n: (n[1], n[0]))


def write_event_file(path, events):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("finger,onset_s,release_s\n")
        for f, o, r in events:
            fh.write(f"{f},{float(o)!r},{float(r)!r}\n")
