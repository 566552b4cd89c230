"""U-shaped generators, patch critics and the four-generator / four-critic model."""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import CriticConfig, GeneratorConfig, ModelConfig, RunConfig
from .signal_io import reshape_to_matrix, unreshape
from .tensor import Tensor

log = logging.getLogger(__name__)

GENERATOR_NAMES = ("G_A", "G_B", "G_C", "G_D")
CRITIC_NAMES = ("D_A", "D_B", "D_C", "D_D")


class ArchitectureError(ValueError):
    pass


class Module:
    def __init__(self):
        self.params = OrderedDict()

    def named_parameters(self, prefix=""):
        return [(prefix + k, p) for k, p in self.params.items()]

    def parameters(self):
        return list(self.params.values())

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def set_requires_grad(self, flag):
        for p in self.params.values():
            p.requires_grad = flag

    def _param(self, name, arr):
        self.params[name] = Tensor(arr, requires_grad=True, name=name)
        return self.params[name]


def _channels(base, i, cap):
    return min(base * 2 ** i, cap)


class Generator(Module):
    """Encoder of ``depth`` (conv, activation, 2x2 max-pool) stages mirrored by
    ``depth`` (2x upsample, transposed conv, activation, dropout) stages with
    skip concatenation, then a 1-channel conv head squashed by tanh."""

    def __init__(self, cfg, seed=0, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        k, d = cfg.kernel, cfg.depth
        ch = [_channels(cfg.base_channels, i, cfg.max_channels) for i in range(d)]
        self.channels = ch
        slope = cfg.slope if cfg.activation == "leaky_relu" else 0.0
        gain = np.sqrt(2.0 / (1.0 + slope ** 2))
        for i in range(d):
            cin = 1 if i == 0 else ch[i - 1]
            self._param(f"enc{i}.w", (rng.normal(size=(ch[i], cin, k, k)) * gain / np.sqrt(cin * k * k)).astype(dtype))
            self._param(f"enc{i}.b", np.zeros(ch[i], dtype=dtype))
        for i in reversed(range(d)):
            cin = ch[d - 1] if i == d - 1 else 2 * ch[i + 1]
            self._param(f"dec{i}.w", (rng.normal(size=(cin, ch[i], k, k)) * gain / np.sqrt(cin * k * k)).astype(dtype))
            self._param(f"dec{i}.b", np.zeros(ch[i], dtype=dtype))
        self._param("head.w", (rng.normal(size=(1, 2 * ch[0], k, k)) / np.sqrt(2 * ch[0] * k * k)).astype(dtype))
        self._param("head.b", np.zeros(1, dtype=dtype))

    def _act(self, h):
        if self.cfg.activation == "relu":
            return T.relu(h)
        return T.leaky_relu(h, self.cfg.slope)

    def __call__(self, x, training=False, rng=None):
        d, pad = self.cfg.depth, self.cfg.kernel // 2
        h, w = x.shape[2], x.shape[3]
        unit = 2 ** d
        if h % unit or w % unit:
            raise ArchitectureError(f"input {h}x{w} is not divisible by 2**depth={unit}; "
                                    f"pad to {-(-h // unit) * unit}x{-(-w // unit) * unit}")
        p = self.params
        skips = []
        for i in range(d):
            x = self._act(T.conv2d(x, p[f"enc{i}.w"], p[f"enc{i}.b"], stride=self.cfg.conv_stride, padding=pad))
            skips.append(x)
            x = T.maxpool2(x)
        for i in reversed(range(d)):
            x = T.upsample2(x)
            x = self._act(T.conv_transpose2d(x, p[f"dec{i}.w"], p[f"dec{i}.b"], padding=pad))
            if training and self.cfg.dropout > 0:
                x = T.dropout(x, self.cfg.dropout, rng, training=True)
            x = T.concat([x, skips[i]], axis=1)
        return T.tanh(T.conv2d(x, p["head.w"], p["head.b"], padding=pad))


def generator_param_count(cfg):
    k2, d = cfg.kernel ** 2, cfg.depth
    ch = [_channels(cfg.base_channels, i, cfg.max_channels) for i in range(d)]
    total = 0
    for i in range(d):
        cin = 1 if i == 0 else ch[i - 1]
        total += cin * ch[i] * k2 + ch[i]
        cin = ch[d - 1] if i == d - 1 else 2 * ch[i + 1]
        total += cin * ch[i] * k2 + ch[i]
    return total + 2 * ch[0] * k2 + 1


class Critic(Module):
    """Stride-2 conv stack ending in a 1-channel patch map; the score is the
    patch-map mean (no sigmoid)."""

    def __init__(self, cfg, seed=0, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        k = cfg.kernel
        cin = 1
        for i in range(cfg.layers):
            cout = 1 if i == cfg.layers - 1 else _channels(cfg.base_channels, i, cfg.max_channels)
            self._param(f"conv{i}.w", (rng.normal(size=(cout, cin, k, k)) * 0.02).astype(dtype))
            self._param(f"conv{i}.b", np.zeros(cout, dtype=dtype))
            cin = cout

    def patch_map(self, x):
        p, pad = self.params, self.cfg.kernel // 2
        for i in range(self.cfg.layers):
            x = T.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=self.cfg.stride, padding=pad)
            if i < self.cfg.layers - 1:
                x = T.leaky_relu(x, self.cfg.slope)
        return x

    def __call__(self, x):
        return T.mean(self.patch_map(x))


def build_generator(cfg=None, seed=0, dtype=np.float64):
    return Generator(cfg or GeneratorConfig(), seed, dtype)


def build_critic(cfg=None, seed=0, dtype=np.float64):
    return Critic(cfg or CriticConfig(), seed, dtype)


@dataclass
class DualDualModel:
    generators: dict
    critics: dict
    hyper: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        h = self.hyper
        if h.n_critic < 1 or h.batch_size < 1:
            raise ArchitectureError("n_critic and batch_size must be >= 1")

    @property
    def mode(self):
        return self.hyper.mode

    def __getattr__(self, name):
        if name.startswith("G_"):
            return self.__dict__["generators"][name]
        if name.startswith("D_"):
            return self.__dict__["critics"][name]
        raise AttributeError(name)

    def named_parameters(self):
        out = []
        for name, net in list(self.generators.items()) + list(self.critics.items()):
            out += net.named_parameters(prefix=f"{name}.")
        return out

    def generator_params(self, names=None):
        names = names or list(self.generators)
        return [(f"{n}.{k}", p) for n in names for k, p in self.generators[n].params.items()]

    def critic_params(self, names=None):
        names = names or list(self.critics)
        return [(f"{n}.{k}", p) for n in names for k, p in self.critics[n].params.items()]


def build_model(cfg=None, seed=0):
    """All networks of a :class:`RunConfig`, each seeded from ``seed``.

    ``mode = single`` builds only G_A, G_B, D_A, D_B (one DualGAN between
    U and V).  Critic weights start inside ``[-clip, clip]``.
    """
    cfg = cfg or RunConfig()
    dtype = np.float32 if cfg.model.dtype == "float32" else np.float64
    names = 2 if cfg.model.mode == "single" else 4
    ss = np.random.SeedSequence(seed)
    child = [int(s.generate_state(1)[0]) for s in ss.spawn(8)]
    gens = {n: Generator(cfg.generator, child[i], dtype) for i, n in enumerate(GENERATOR_NAMES[:names])}
    crits = {n: Critic(cfg.critic, child[4 + i], dtype) for i, n in enumerate(CRITIC_NAMES[:names])}
    for c in crits.values():
        for p in c.parameters():
            np.clip(p.data, -cfg.model.clip, cfg.model.clip, out=p.data)
    for msg in cfg.lambda_warnings():
        log.warning(msg)
    return DualDualModel(gens, crits, cfg.model)


def forward_translate(model, u, training=False, rng=None):
    """EEG matrix batch -> speech matrix batch: G_D(G_A(u)) (G_A(u) for a single DualGAN)."""
    x = u if isinstance(u, Tensor) else Tensor(np.asarray(u))
    if x.data.ndim == 3:
        x = Tensor(x.data[None])
    with T.no_grad():
        if model.mode == "single":
            return model.G_A(x, training, rng)
        return model.G_D(model.G_A(x, training, rng), training, rng)


def translator(model, depth, side):
    """Callable mapping an EEG record to a synthesized speech vector of the same length."""

    def run(u):
        view = reshape_to_matrix(u, depth, side)
        out = forward_translate(model, view.matrix.astype(_model_dtype(model)))
        view.matrix = out.data[0].astype(np.float64)
        return unreshape(view)

    return run


def _model_dtype(model):
    g = next(iter(model.generators.values()))
    return next(iter(g.params.values())).dtype
