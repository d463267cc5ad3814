"""Declarative model specifications for the SF/MF/CBMF architectures.

A ModelSpec is a plain, serializable description: ordered layer specs for
the encoder (and decoder for CBMF), the window length k, the image side,
and the residual-merge wiring. Exact parameter accounting lives here;
execution lives in finemotion.model.
"""

from dataclasses import dataclass, field, asdict
import json


@dataclass(frozen=True)
class LayerSpec:
    kind: str                    # conv2d|maxpool2d|dropout|flatten|featnorm|winnorm|concat_time|gru|dense|merge
    name: str
    c_in: int = 0
    c_out: int = 0
    window: int = 0
    rate: float = 0.0
    d_in: int = 0
    d_out: int = 0
    hidden: int = 0
    activation: str = "none"

    def param_count(self):
        if self.kind == "conv2d":
            return 9 * self.c_in * self.c_out + self.c_out
        if self.kind == "dense":
            return self.d_in * self.d_out + self.d_out
        if self.kind == "gru":
            return 3 * ((self.d_in + self.hidden) * self.hidden + 2 * self.hidden)
        return 0


@dataclass(frozen=True)
class ModelSpec:
    kind: str                    # SF | MF | CBMF
    k: int
    image_side: int
    width: float
    encoder: tuple
    decoder: tuple = ()
    residual_layer: str = ""     # encoder layer whose output feeds the merge
    config_width: int = 0        # width of the intermediate configuration output

    def all_layers(self):
        return list(self.encoder) + list(self.decoder)

    def to_json(self):
        d = asdict(self)
        d["encoder"] = [asdict(l) for l in self.encoder]
        d["decoder"] = [asdict(l) for l in self.decoder]
        return json.dumps(d, indent=2)

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        d["encoder"] = tuple(LayerSpec(**l) for l in d["encoder"])
        d["decoder"] = tuple(LayerSpec(**l) for l in d["decoder"])
        return ModelSpec(**d)


@dataclass
class ParamReport:
    layers: list                 # (name, exact count) in model order
    total: int

    def rounded(self, count=None):
        return round_count(self.total if count is None else count)

    def check_total(self, expected):
        """True iff the exact total rounds to `expected` (e.g. '22.93M')."""
        return round_count(self.total) == expected


def round_count(n):
    """Printed rounding rule: >=1e6 -> x.xxM, >=1e4 -> x.xxK, else exact."""
    if n >= 10 ** 6:
        return f"{n / 10**6:.2f}M"
    if n >= 10 ** 4:
        return f"{n / 10**3:.2f}K"
    return f"{n:,}"


def _scale(c, width):
    return max(1, round(c * width))


_CNN_PLAN = (
    (32, 32, 2, False),
    (64, 64, 2, False),
    (128, 128, 2, False),
    (256, 256, 2, True),
    (512, 512, 4, True),
)


def cnn_geometry(image_side):
    """(side, window) after each pooling stage; raises on collapse.

    The final 4x4 valid pool is clamped to the remaining extent so small
    desk-scale sides stay buildable; default geometry is unaffected.
    """
    side = image_side
    stages = []
    for i, (_, _, win, _) in enumerate(_CNN_PLAN):
        if i == len(_CNN_PLAN) - 1:
            win = min(win, side)   # final valid pool shrinks to the remaining extent
        if side < win or win < 1:
            raise ValueError(
                f"image side collapsed before pooling stage {i + 1}: "
                f"extent {side} < window {win}")
        side = (side - win) // win + 1
        stages.append((side, win))
    if side < 1:
        raise ValueError("pooling cascade yields empty feature map")
    return stages


def _cnn_layers(image_side, width):
    stages = cnn_geometry(image_side)
    final_side = stages[-1][0]
    layers = []
    c_prev = 1
    idx = 0
    for block, (c1, c2, _, drop) in enumerate(_CNN_PLAN, start=1):
        for c in (c1, c2):
            idx += 1
            co = _scale(c, width)
            layers.append(LayerSpec("conv2d", f"conv2d_{idx}", c_in=c_prev,
                                    c_out=co, activation="relu"))
            c_prev = co
        if drop:
            layers.append(LayerSpec("dropout", f"dropout_{block}", rate=0.3))
        layers.append(LayerSpec("maxpool2d", f"maxpool_{block}",
                                window=stages[block - 1][1]))
    layers.append(LayerSpec("flatten", "flatten"))
    # Unit-RMS rescale of the per-frame feature vector: the relu stack is
    # unbounded, and without this the head nonlinearities saturate once
    # training grows the convolution outputs.
    layers.append(LayerSpec("featnorm", "featnorm"))
    flat = final_side * final_side * c_prev
    return layers, flat


def build_mf(k=8, image_side=224, width=1.0):
    """Multi-frame model: shared CNN per frame, time concat, 3-layer GRU head."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cnn, flat = _cnn_layers(image_side, width)
    h1, h2 = _scale(1024, width), _scale(128, width)
    enc = cnn + [
        LayerSpec("concat_time", "concat_time"),
        LayerSpec("gru", "gru_1", d_in=flat, hidden=h1, activation="relu"),
        LayerSpec("gru", "gru_2", d_in=h1, hidden=h2, activation="relu"),
        LayerSpec("gru", "gru_3", d_in=h2, hidden=5, activation="linear"),
    ]
    return ModelSpec("MF", k, image_side, width, tuple(enc))


def build_cbmf(k=8, image_side=224, width=1.0):
    """Auto-encoder: encoder predicts 17-angle configurations, decoder merges
    them with the encoder's second-GRU features through a residual connection
    and predicts press probabilities."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cnn, flat = _cnn_layers(image_side, width)
    h1, h2 = _scale(1024, width), _scale(128, width)
    d1, d2 = _scale(256, width), _scale(128, width)
    enc = cnn + [
        LayerSpec("concat_time", "concat_time"),
        LayerSpec("gru", "gru_1", d_in=flat, hidden=h1, activation="relu"),
        LayerSpec("gru", "gru_2", d_in=h1, hidden=h2, activation="relu"),
        LayerSpec("gru", "gru_3", d_in=h2, hidden=17, activation="linear"),
    ]
    dec = [
        LayerSpec("merge", "merge", d_in=17 + h2),
        # per-window rescale: resting-posture offsets in the predicted
        # configurations otherwise dwarf the within-window motion
        LayerSpec("winnorm", "dec_winnorm"),
        LayerSpec("gru", "dec_gru_1", d_in=17 + h2, hidden=d1, activation="tanh"),
        LayerSpec("gru", "dec_gru_2", d_in=d1, hidden=d2, activation="tanh"),
        LayerSpec("gru", "dec_gru_3", d_in=d2, hidden=5, activation="linear"),
    ]
    return ModelSpec("CBMF", k, image_side, width, tuple(enc), tuple(dec),
                     residual_layer="gru_2", config_width=17)


def build_sf(image_side=224, width=1.0):
    """Single-frame baseline: the same CNN on one frame, then an MLP."""
    cnn, flat = _cnn_layers(image_side, width)
    h1, h2 = _scale(1024, width), _scale(128, width)
    enc = cnn + [
        LayerSpec("dense", "dense_1", d_in=flat, d_out=h1, activation="relu"),
        LayerSpec("dense", "dense_2", d_in=h1, d_out=h2, activation="relu"),
        LayerSpec("dense", "dense_3", d_in=h2, d_out=5, activation="sigmoid"),
    ]
    return ModelSpec("SF", 1, image_side, width, tuple(enc))


def count_params(spec):
    rows = [(l.name, l.param_count()) for l in spec.all_layers()]
    return ParamReport(rows, sum(c for _, c in rows))
