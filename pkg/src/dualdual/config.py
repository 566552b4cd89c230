"""Run configuration: ``key = value`` text with ``[sections]``.

Every field has a default (lambda = 500, N = 5 critic steps, batch 1,
lr = 0.0002, rho = 3/5, 3x3 kernels, 5 critic layers).  Unknown sections
or keys are rejected and all problems are reported together.
"""
import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields

from .metrics import MelCepstrumConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class ModelConfig:
    mode: str = "dual"  # "dual" (Dual-DualGAN) or "single" (one DualGAN between U and V)
    lambda_u: float = 500.0
    lambda_v: float = 500.0
    lambda_o: float = 500.0
    n_critic: int = 5
    batch_size: int = 1
    lr: float = 0.0002
    clip: float = 0.01
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    full_backflow: bool = False
    dtype: str = "float64"


@dataclass
class GeneratorConfig:
    depth: int = 4
    kernel: int = 3
    conv_stride: int = 1
    pool_stride: int = 2
    slope: float = 0.2
    dropout: float = 0.5
    base_channels: int = 16
    max_channels: int = 128
    activation: str = "leaky_relu"


@dataclass
class CriticConfig:
    layers: int = 5
    kernel: int = 3
    stride: int = 2
    slope: float = 0.2
    base_channels: int = 16
    max_channels: int = 64


@dataclass
class TransitionConfig:
    rho: float = 0.6
    target_len: int = 0  # 0: length of the longer of (u, v)


@dataclass
class DataConfig:
    manifest: str = ""
    model_rate: float = 8000.0
    eeg_channels: str = "T3,T4,T5,T6"
    bandpass: bool = False

    @property
    def channel_list(self):
        return [c.strip() for c in self.eeg_channels.split(",") if c.strip()]


@dataclass
class RunSection:
    seed: int = 0
    steps: int = 500
    out_dir: str = "runs"
    checkpoint_every: int = 100


@dataclass
class SweepConfig:
    proportions: str = "0.2,0.4,0.6,0.8"
    train_budget: int = 50

    @property
    def proportion_list(self):
        return [float(p) for p in self.proportions.split(",") if p.strip()]


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    transition: TransitionConfig = field(default_factory=TransitionConfig)
    mel: MelCepstrumConfig = field(default_factory=MelCepstrumConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self):
        problems = []
        m, g, c, t = self.model, self.generator, self.critic, self.transition
        if m.mode not in ("dual", "single"):
            problems.append(f"model.mode must be 'dual' or 'single', got {m.mode!r}")
        if m.n_critic < 1:
            problems.append("model.n_critic must be >= 1")
        if m.batch_size < 1:
            problems.append("model.batch_size must be >= 1")
        if m.lr <= 0:
            problems.append("model.lr must be positive")
        if m.clip <= 0:
            problems.append("model.clip must be positive")
        if m.dtype not in ("float64", "float32"):
            problems.append("model.dtype must be float64 or float32")
        if g.depth < 1:
            problems.append("generator.depth must be >= 1")
        if g.kernel % 2 != 1:
            problems.append("generator.kernel must be odd")
        if g.activation not in ("leaky_relu", "relu"):
            problems.append("generator.activation must be leaky_relu or relu")
        if not 0 <= g.dropout < 1:
            problems.append("generator.dropout must lie in [0, 1)")
        if c.layers < 1:
            problems.append("critic.layers must be >= 1")
        if not 0 < t.rho < 1:
            problems.append("transition.rho must lie in (0, 1)")
        if self.mel.n_coeffs > self.mel.mel_bands:
            problems.append("mel.n_coeffs must not exceed mel.mel_bands")
        if problems:
            raise ConfigError(problems)
        return self

    def lambda_warnings(self):
        m = self.model
        return [f"{name}={val} outside the usual [100, 1000]" for name, val in
                (("lambda_u", m.lambda_u), ("lambda_v", m.lambda_v), ("lambda_o", m.lambda_o))
                if not 100 <= val <= 1000]

    def to_text(self):
        out = io.StringIO()
        for sec in fields(self):
            out.write(f"[{sec.name}]\n")
            obj = getattr(self, sec.name)
            for f in fields(obj):
                out.write(f"{f.name} = {_fmt(getattr(obj, f.name))}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def as_dict(self):
        return dataclasses.asdict(self)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(typ, raw, where, problems):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            if "/" in raw:
                num, den = raw.split("/")
                return float(num) / float(den)
            return float(raw)
        return raw
    except ValueError:
        problems.append(f"{where}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}")
        return None


def apply_overrides(cfg, pairs, problems=None):
    """Apply ``{"section.key": "raw value"}`` overrides in place."""
    own = problems is None
    problems = [] if own else problems
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for dotted, raw in pairs.items():
        sec, _, key = dotted.partition(".")
        if sec not in sections:
            problems.append(f"unknown section [{sec}]")
            continue
        obj = sections[sec]
        ftypes = {f.name: f.type for f in fields(obj)}
        if key not in ftypes:
            problems.append(f"unknown key {key!r} in [{sec}]")
            continue
        val = _coerce(ftypes[key], str(raw), f"{sec}.{key}", problems)
        if val is not None:
            setattr(obj, key, val)
    if own and problems:
        raise ConfigError(problems)
    return cfg


def parse_config(text, overrides=None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    problems = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([str(exc)]) from None
    cfg = RunConfig()
    flat = {f"{sec}.{key}": val for sec in parser.sections() for key, val in parser.items(sec)}
    apply_overrides(cfg, flat, problems)
    apply_overrides(cfg, overrides or {}, problems)
    if problems:
        raise ConfigError(problems)
    try:
        cfg.mel = MelCepstrumConfig(**dataclasses.asdict(cfg.mel))
    except ValueError as exc:
        problems.append(f"mel: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg.validate()


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)
