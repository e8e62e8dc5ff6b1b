"""Experiment configuration: INI-style files with sections, overridable by flags.

Example::

    [data]
    dataset = data/contact.txt
    snapshots = 320
    horizon = 8
    window_len = 10
    train_count = 230

    [model]
    preset = contact

    [loss]
    beta = 1.5
    alpha = 1e-4
    lr = 1e-3

    [train]
    epochs = 500
    seed = 0
    optimizer = sgd

A ``[synthetic]`` section replaces ``dataset`` with a generated periodic network.
List values (layer widths) accept "," or "|" as separators.
"""
import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .graph_store import DEFAULT_HORIZON, DEFAULT_NUM_SNAPSHOTS, DEFAULT_TRAIN_COUNT, DEFAULT_WINDOW_LEN
from .metrics import DEFAULT_TOP_FRACTION
from .model import PRESETS, ModelConfig
from .synth import SyntheticSpec
from .training import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_LR, LossConfig

DEFAULT_EPOCHS = 500
DEFAULT_ENCODER = [128]
DEFAULT_LSTM = [256, 256]


def parse_dims(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    text = str(value).replace("|", ",")
    try:
        dims = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad layer widths {value!r}") from None
    if not dims:
        raise ConfigError(f"empty layer widths {value!r}")
    return dims


def _bool(value):
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    synthetic: SyntheticSpec | None = None
    num_snapshots: int = DEFAULT_NUM_SNAPSHOTS
    horizon: int = DEFAULT_HORIZON
    window_len: int = DEFAULT_WINDOW_LEN
    train_count: int = DEFAULT_TRAIN_COUNT
    undirected: bool = False
    fmt: str = "auto"
    preset: str | None = None
    encoder_dims: list | None = None
    lstm_dims: list | None = None
    decoder_dims: list | None = None
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    optimizer: str = "sgd"
    stateful_lstm: bool = False
    clip: bool = False
    metric_samples: int = 10_000
    threshold: float = 0.5
    top_fraction: float = DEFAULT_TOP_FRACTION
    synth_seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        for name in ("encoder_dims", "lstm_dims", "decoder_dims"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, parse_dims(v))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.metric_samples < 1:
            raise ConfigError("metric_samples must be >= 1")
        if self.window_len < 1 or self.train_count < 1 or self.horizon < 0 or self.num_snapshots < 2:
            raise ConfigError("window_len, train_count >= 1, horizon >= 0, snapshots >= 2 required")
        self.loss_config()

    def loss_config(self):
        try:
            return LossConfig(beta=self.beta, alpha=self.alpha, learning_rate=self.lr)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, n):
        """Layer widths for an ``n``-node network: explicit dims, else the preset, else defaults."""
        enc, lstm, dec = DEFAULT_ENCODER, DEFAULT_LSTM, [n]
        preset = self.preset
        if preset is None and self.dataset is not None:
            stem = Path(self.dataset).stem.lower()
            preset = stem if stem in PRESETS else None
        if preset is not None:
            enc, lstm, dec = PRESETS[preset]
        enc = self.encoder_dims or enc
        lstm = self.lstm_dims or lstm
        dec = self.decoder_dims or list(dec[:-1]) + [n]
        return ModelConfig(n=n, window_len=self.window_len, encoder_dims=enc, lstm_dims=lstm, decoder_dims=dec)

    def to_dict(self):
        d = asdict(self)
        d["synthetic"] = self.synthetic.to_dict() if self.synthetic is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        if isinstance(d.get("synthetic"), SyntheticSpec):
            d["synthetic"] = d["synthetic"].to_dict()
        return ExperimentConfig.from_dict(d)


# (section, key) -> (field, parser)
_KEYS = {
    ("data", "dataset"): ("dataset", str),
    ("data", "snapshots"): ("num_snapshots", int),
    ("data", "horizon"): ("horizon", int),
    ("data", "window_len"): ("window_len", int),
    ("data", "train_count"): ("train_count", int),
    ("data", "undirected"): ("undirected", _bool),
    ("data", "format"): ("fmt", str),
    ("model", "preset"): ("preset", str),
    ("model", "encoder"): ("encoder_dims", parse_dims),
    ("model", "lstm"): ("lstm_dims", parse_dims),
    ("model", "decoder"): ("decoder_dims", parse_dims),
    ("loss", "beta"): ("beta", float),
    ("loss", "alpha"): ("alpha", float),
    ("loss", "lr"): ("lr", float),
    ("train", "epochs"): ("epochs", int),
    ("train", "seed"): ("seed", int),
    ("train", "optimizer"): ("optimizer", str),
    ("train", "stateful_lstm"): ("stateful_lstm", _bool),
    ("train", "clip"): ("clip", _bool),
    ("eval", "metric_samples"): ("metric_samples", int),
    ("eval", "threshold"): ("threshold", float),
    ("eval", "top_fraction"): ("top_fraction", float),
}

_SYNTH_KEYS = {
    "n": int, "period": int, "T": int, "density": float, "noise": float,
    "drift_every": int, "drift_rate": float,
}


def parse_config_text(text, source="<config>"):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "synthetic":
                if key == "seed":
                    values["synth_seed"] = int(raw)
                    continue
                if key not in _SYNTH_KEYS:
                    raise ConfigError(f"{source}: unknown key [synthetic] {key}")
                values.setdefault("synthetic", {})[key] = _SYNTH_KEYS[key](raw)
                continue
            if (section, key) not in _KEYS:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            name, conv = _KEYS[(section, key)]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
    return values


def load_config(path=None, overrides=None):
    """File values first, then every non-None entry of ``overrides``."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        values = parse_config_text(p.read_text(), source=str(p))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "synthetic":
            values.setdefault("synthetic", {}).update(v)
        else:
            values[k] = v
    try:
        return ExperimentConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
