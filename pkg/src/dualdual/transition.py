"""Transition-domain signals: proportional cascades of an (EEG, speech) pair."""
import dataclasses
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .signal_io import PairedExample, SignalRecord, resample_linear

DEFAULT_RHO = Fraction(3, 5)
# EEG:speech proportions 1:4 ... 4:1 in steps of 1/5
SWEEP_GRID = (0.2, 0.4, 0.6, 0.8)
# reference accuracy per proportion; written as comments, never asserted
REFERENCE_ACCURACY = {0.2: 0.63, 0.4: 0.82, 0.6: 0.95, 0.8: 0.88}


class TransitionError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionSpec:
    rho: float = DEFAULT_RHO
    target_len: int = None
    resample: str = "linear"

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise TransitionError(f"rho must lie in (0, 1), got {self.rho}")
        if self.resample != "linear":
            raise TransitionError(f"unsupported resample method {self.resample!r}")
        if self.target_len is not None:
            if self.target_len < 2:
                raise TransitionError(f"target_len must be >= 2, got {self.target_len}")
            n_u = self.eeg_len
            if n_u < 1 or self.target_len - n_u < 1:
                raise TransitionError(f"rho={self.rho} with target_len={self.target_len} leaves an empty segment")

    @property
    def eeg_len(self):
        return int(math.floor(self.rho * self.target_len + 0.5))

    @property
    def speech_len(self):
        return self.target_len - self.eeg_len

    @classmethod
    def default_for(cls, u, v, rho=DEFAULT_RHO):
        return cls(rho=rho, target_len=max(len(u.samples), len(v.samples)))

    def resolved(self, u, v):
        if self.target_len is not None:
            return self
        return dataclasses.replace(self, target_len=max(len(u.samples), len(v.samples)))


def cascade(u, v, spec):
    """EEG resampled to ``round(rho*L)`` samples followed by speech resampled to the rest."""
    spec = spec.resolved(u, v)
    seg_u = resample_linear(u.samples, spec.eeg_len)
    seg_v = resample_linear(v.samples, spec.speech_len)
    meta = {"rho": float(spec.rho), "target_len": spec.target_len,
            "u_len": len(u.samples), "v_len": len(v.samples)}
    return SignalRecord(u.id, "O", np.concatenate([seg_u, seg_v]), u.sample_rate,
                        normalized=u.normalized and v.normalized, meta=meta)


def split(o, spec):
    """Index-level inverse of the concatenation inside :func:`cascade`."""
    x = o.samples if isinstance(o, SignalRecord) else np.asarray(o)
    if spec.target_len is None or x.size != spec.target_len:
        raise TransitionError(f"transition signal has {x.size} samples, spec expects {spec.target_len}")
    return x[:spec.eeg_len].copy(), x[spec.eeg_len:].copy()


def uncascade(o, spec, u_len, v_len):
    """Split and resample both halves back to their original lengths."""
    a, b = split(o, spec)
    return resample_linear(a, u_len), resample_linear(b, v_len)


def with_rho(pairs, rho):
    """Rebuild every pair's transition signal at proportion ``rho``."""
    out = []
    for p in pairs:
        spec = TransitionSpec.default_for(p.u, p.v, rho=rho)
        out.append(PairedExample(p.u, p.v, cascade(p.u, p.v, spec), p.group_label, spec))
    return out


# ---------------------------------------------------------------------------
# proportion sweep


def proportion_sweep(pairs, proportions=SWEEP_GRID, train_budget=50, seed=0, run_config=None, path=None):
    """Train a fresh model per proportion and score nearest-neighbour accuracy.

    Returns the CSV text (``rho,accuracy,seed`` with six decimals) and writes
    it to ``path`` when given.  Reference accuracies are appended as ``#``
    comment lines and never compared against.
    """
    from .config import RunConfig
    from .metrics import translation_accuracy
    from .networks import build_model, translator
    from .trainer import train

    cfg = run_config or RunConfig()
    lines = ["rho,accuracy,seed"]
    for rho in proportions:
        data = with_rho(pairs, rho)
        model = build_model(cfg, seed=seed)
        state = train(data, model, steps=train_budget, seed=seed, config=cfg)
        report = translation_accuracy(translator(state.model, cfg.generator.depth, _side(data, cfg)), data,
                                      cfg.mel, seed=seed)
        lines.append(f"{float(rho):.6f},{report.accuracy:.6f},{seed}")
    for rho in proportions:
        ref = REFERENCE_ACCURACY.get(round(float(rho), 6))
        if ref is not None:
            lines.append(f"# published_reference rho={float(rho):.6f} accuracy={ref:.6f}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        from .signal_io import _atomic_write
        _atomic_write(path, text)
    return text


def _side(pairs, cfg):
    from .trainer import dataset_side
    return dataset_side(pairs, cfg.generator.depth)
