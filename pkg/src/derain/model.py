"""The streak-prediction network and its recurrent multi-stage extension.

The single-stage model is a full-convolution network of depth d: an
encoding 3x3 layer, a body of 3x3 layers whose dilation doubles per
layer (1, 2, 4, ...), an undilated 3x3 layer, and a final 1x1
projection with no nonlinearity and no SE.
The recurrent extension runs the network for S stages over the
progressively cleaned image, carrying per-layer hidden maps between
stages through ConvRNN / ConvGRU / ConvLSTM cells.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, mse_loss, add, sub, no_grad
from .blocks import ConvSELayer, SEBlock, make_cell

__all__ = [
    "ScanConfig", "RescanConfig", "DerainResult",
    "Scan", "Rescan", "build_model",
    "dilation_schedule", "receptive_field", "empirical_receptive_field",
    "loss_additive", "loss_full", "stage_loss",
    "FRAMEWORKS", "UNITS",
]

FRAMEWORKS = ("iter", "additive", "full")
UNITS = (None, "rnn", "gru", "lstm")


@dataclass
class ScanConfig:
    depth: int = 7
    width: int = 24
    in_channels: int = 3
    out_channels: int = 3
    use_se: bool = True
    all_dilation_one: bool = False
    slope: float = 0.2
    se_ratio: int = 4

    def validate(self):
        if self.depth < 4:
            raise ValueError(f"depth must be >= 4, got {self.depth}")
        if self.use_se and self.width % self.se_ratio != 0:
            raise ValueError(
                f"SE ratio {self.se_ratio} must divide width {self.width}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"slope must be in (0, 1), got {self.slope}")


@dataclass
class RescanConfig:
    scan: ScanConfig = field(default_factory=ScanConfig)
    stages: int = 4
    unit: str | None = "gru"     # None = stateless stages
    framework: str = "full"

    def validate(self):
        self.scan.validate()
        if not 1 <= self.stages <= 8:
            raise ValueError(f"stages must be in 1..8, got {self.stages}")
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"framework must be one of {FRAMEWORKS}, "
                             f"got {self.framework!r}")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")
        if self.framework == "iter" and self.unit is not None:
            raise ValueError(
                "the stateless cascade (framework='iter') cannot carry a "
                f"recurrent unit, got unit={self.unit!r}")


@dataclass
class DerainResult:
    stage_streaks: list          # per-stage predictions (Tensors)
    streaks: Tensor              # final accumulated streak map R
    background: np.ndarray       # O - R, raw (unclamped)
    states: list | None = None


def dilation_schedule(depth, all_dilation_one=False):
    """Per-layer dilations; layers 0, d-2 and the 1x1 layer d-1 stay at 1."""
    if all_dilation_one:
        return [1] * depth
    return [1] + [2 ** (i - 1) for i in range(1, depth - 2)] + [1, 1]


def receptive_field(depth):
    """Side length of the output receptive field, 2^(d-2) + 3."""
    if depth < 4:
        raise ValueError(f"depth must be >= 4, got {depth}")
    return 2 ** (depth - 2) + 3


class Scan:
    """Single-stage streak predictor (also one stage of the recurrent net)."""

    def __init__(self, config: ScanConfig, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        d = config.depth
        dil = dilation_schedule(d, config.all_dilation_one)
        chans = [config.in_channels] + [config.width] * (d - 1)
        self.layers = [
            ConvSELayer(chans[i], chans[i + 1], 3, dil[i],
                        use_se=config.use_se, activate=True,
                        slope=config.slope, se_ratio=config.se_ratio,
                        rng=rng, dtype=dtype)
            for i in range(d - 1)
        ]
        self.final = ConvSELayer(config.width, config.out_channels, 1, 1,
                                 use_se=False, activate=False,
                                 slope=config.slope, rng=rng, dtype=dtype)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return self.final(x)

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.named_parameters(f"layer{i}.")
        out += self.final.named_parameters("final.")
        return out


class _RecurrentLayer:
    """One recurrent stage layer: cell step followed by SE reweighting.

    The post-SE feature map is both the layer output and the hidden map
    carried to the next stage (for LSTM the raw cell map travels raw).
    """

    def __init__(self, kind, in_channels, channels, dilation, use_se,
                 slope, se_ratio, rng, dtype):
        self.cell = make_cell(kind, in_channels, channels, dilation, rng,
                              dtype)
        self.dtype = dtype
        self.se = None
        if use_se:
            self.se = SEBlock(channels, se_ratio, slope, rng, dtype)

    def step(self, x_in, state):
        n, _, h, w = x_in.shape
        if self.cell.kind == "lstm":
            if state is None:
                state = self.cell.init_state(n, h, w, self.dtype)
            h_new, c_new = self.cell.step(x_in, state[0], state[1])
            out = self.se(h_new) if self.se is not None else h_new
            return out, (out, c_new)
        if state is None:
            state = self.cell.init_state(n, h, w, self.dtype)
        h_new = self.cell.step(x_in, state)
        out = self.se(h_new) if self.se is not None else h_new
        return out, out

    def named_parameters(self, prefix=""):
        out = self.cell.named_parameters(prefix + "cell.")
        if self.se is not None:
            out += self.se.named_parameters(prefix + "se.")
        return out


class Rescan:
    """Multi-stage deraining network.

    unit=None runs the same stateless stage network each stage; with a
    recurrent unit every layer except the final 1x1 projection threads a
    hidden map across stages.
    """

    def __init__(self, config: RescanConfig, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        sc = config.scan
        if config.unit is None:
            self.scan = Scan(sc, seed=seed, dtype=dtype)
            self.rec_layers = None
        else:
            rng = np.random.default_rng(seed)
            d = sc.depth
            dil = dilation_schedule(d, sc.all_dilation_one)
            chans = [sc.in_channels] + [sc.width] * (d - 1)
            self.rec_layers = [
                _RecurrentLayer(config.unit, chans[i], chans[i + 1], dil[i],
                                sc.use_se, sc.slope, sc.se_ratio, rng, dtype)
                for i in range(d - 1)
            ]
            self.final = ConvSELayer(sc.width, sc.out_channels, 1, 1,
                                     use_se=False, activate=False,
                                     slope=sc.slope, rng=rng, dtype=dtype)
            self.scan = None

    # -- single stage -------------------------------------------------------

    def fresh_state(self):
        if self.rec_layers is None:
            return None
        return [None] * len(self.rec_layers)

    def stage_forward(self, o_s, state=None):
        """Predict this stage's streaks; returns (prediction, new state)."""
        if self.rec_layers is None:
            return self.scan(o_s), None
        if state is None:
            state = self.fresh_state()
        new_state = []
        x = o_s
        for layer, st in zip(self.rec_layers, state):
            x, st_new = layer.step(x, st)
            new_state.append(st_new)
        return self.final(x), new_state

    def scan_forward(self, o):
        """One stage from zero hidden state (the S=1 network)."""
        pred, _ = self.stage_forward(o, self.fresh_state())
        return pred

    # -- full multi-stage forward ------------------------------------------

    def forward(self, o):
        cfg = self.config
        preds = []
        state = self.fresh_state()
        o_s = o
        if cfg.framework == "iter":
            for _ in range(cfg.stages):
                r_s, _ = self.stage_forward(o_s, self.fresh_state())
                preds.append(r_s)
                o_s = sub(o_s, r_s)
            r_total = _sum_tensors(preds)
        elif cfg.framework == "additive":
            cum = None
            for s in range(cfg.stages):
                if cfg.unit is None:
                    state = self.fresh_state()
                r_s, state = self.stage_forward(o_s, state)
                preds.append(r_s)
                cum = r_s if cum is None else add(cum, r_s)
                o_s = sub(o, cum)
            r_total = cum
        else:  # full
            for s in range(cfg.stages):
                r_hat, state = self.stage_forward(o_s, state)
                preds.append(r_hat)
                o_s = sub(o, r_hat)
            r_total = preds[-1]
        background = o.data - r_total.data
        return DerainResult(preds, r_total, background, state)

    def __call__(self, o):
        return self.forward(o)

    def derain(self, o):
        """Inference without graph construction."""
        with no_grad():
            return self.forward(o)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        if self.rec_layers is None:
            return self.scan.named_parameters()
        out = []
        for i, layer in enumerate(self.rec_layers):
            out += layer.named_parameters(f"layer{i}.")
        out += self.final.named_parameters("final.")
        return out

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays):
        params = dict(self.named_parameters())
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for name, p in params.items():
            a = np.asarray(arrays[name], dtype=self.dtype)
            if a.shape != p.data.shape:
                raise ValueError(f"parameter {name}: checkpoint shape "
                                 f"{a.shape} != model shape {p.data.shape}")
            p.data = a.copy()

    def param_count(self):
        return sum(p.data.size for _, p in self.named_parameters())


def build_model(config: RescanConfig, seed=0, dtype=np.float32):
    return Rescan(config, seed=seed, dtype=dtype)


def _sum_tensors(ts):
    out = ts[0]
    for t in ts[1:]:
        out = add(out, t)
    return out


# -- losses -----------------------------------------------------------------

def loss_additive(stage_preds, r_true):
    """Sum over stages of MSE(cumulative prediction, target streaks)."""
    total = None
    cum = None
    for p in stage_preds:
        cum = p if cum is None else add(cum, p)
        term = mse_loss(cum, r_true)
        total = term if total is None else add(total, term)
    return total


def loss_full(stage_preds, r_true):
    """Sum over stages of MSE(stage prediction, target streaks)."""
    total = None
    for p in stage_preds:
        term = mse_loss(p, r_true)
        total = term if total is None else add(total, term)
    return total


def stage_loss(framework, stage_preds, r_true):
    if framework == "full":
        return loss_full(stage_preds, r_true)
    # iter and additive both supervise the running cumulative sum
    return loss_additive(stage_preds, r_true)


# -- config (de)serialization ----------------------------------------------

def config_to_dict(config: RescanConfig):
    sc = config.scan
    return {
        "depth": sc.depth, "width": sc.width,
        "in_channels": sc.in_channels, "out_channels": sc.out_channels,
        "use_se": sc.use_se, "all_dilation_one": sc.all_dilation_one,
        "slope": sc.slope, "se_ratio": sc.se_ratio,
        "stages": config.stages,
        "unit": config.unit if config.unit is not None else "none",
        "framework": config.framework,
    }


def config_from_dict(kv):
    def as_bool(v):
        return str(v).strip().lower() in ("true", "1", "yes")

    sc = ScanConfig(
        depth=int(kv["depth"]), width=int(kv["width"]),
        in_channels=int(kv.get("in_channels", 3)),
        out_channels=int(kv.get("out_channels", 3)),
        use_se=as_bool(kv.get("use_se", True)),
        all_dilation_one=as_bool(kv.get("all_dilation_one", False)),
        slope=float(kv.get("slope", 0.2)),
        se_ratio=int(kv.get("se_ratio", 4)),
    )
    unit = str(kv.get("unit", "none")).lower()
    cfg = RescanConfig(scan=sc, stages=int(kv.get("stages", 1)),
                       unit=None if unit == "none" else unit,
                       framework=str(kv.get("framework", "iter")))
    cfg.validate()
    return cfg


# -- empirical receptive field ---------------------------------------------

def empirical_receptive_field(depth, all_dilation_one=False, width=4):
    """Measure the receptive field by perturbing one centre pixel.

    Uses an SE-free all-positive-weight network (SE couples every output
    to the global pool, which would smear the footprint over the whole
    image) and returns the side of the bounding box of changed outputs.
    """
    cfg = ScanConfig(depth=depth, width=width, in_channels=1, out_channels=1,
                     use_se=False, all_dilation_one=all_dilation_one)
    model = Scan(cfg, seed=1, dtype=np.float64)
    for _, p in model.named_parameters():
        p.data = np.abs(p.data) + 0.05

    side = receptive_field(depth) if not all_dilation_one else 2 * depth + 1
    size = side + 8 + (side + 8) % 2 + 1   # odd, with margin
    base = np.full((1, 1, size, size), 0.5)
    bumped = base.copy()
    bumped[0, 0, size // 2, size // 2] += 0.25
    with no_grad():
        out0 = model(Tensor(base, dtype=np.float64)).data
        out1 = model(Tensor(bumped, dtype=np.float64)).data
    changed = np.abs(out1 - out0)[0, 0] > 1e-12
    ys, xs = np.nonzero(changed)
    if ys.size == 0:
        return 0
    return max(ys.max() - ys.min() + 1, xs.max() - xs.min() + 1)
