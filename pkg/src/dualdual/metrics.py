"""Translation accuracy, Pearson correlation, mel-cepstral distortion, spectrograms."""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dct

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
MCD_SCALE = 10.0 / math.log(10.0)

# reference figures for both models, stored as report metadata and never asserted
PUBLISHED_REFERENCE = {
    "dual_dualgan": {"accuracy_pct": 78.53, "pcc": 0.838, "mcd_db": 3.793},
    "dualgan": {"accuracy_pct": 56.82, "pcc": 0.624, "mcd_db": 5.015},
}
ACCURACY_NOTE = ("accuracy is nearest-neighbour matching by PCC over the reference speech set "
                 "(ties by lowest MCD), not listener transcription")


class MetricError(ValueError):
    pass


@dataclass
class MelCepstrumConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    mel_bands: int = 26
    n_coeffs: int = 13

    def __post_init__(self):
        if self.n_coeffs > self.mel_bands:
            raise ValueError("n_coeffs must not exceed mel_bands")
        if self.frame_ms <= self.hop_ms:
            raise ValueError("frame_ms must exceed hop_ms")


# ---------------------------------------------------------------------------
# Pearson correlation


def pcc(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise MetricError(f"pcc needs two equal-length 1-d signals of length >= 2, got {x.shape}, {y.shape}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise MetricError("correlation undefined for a constant signal")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


# ---------------------------------------------------------------------------
# mel cepstrum


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands, n_fft, rate, f_lo=0.0, f_hi=None):
    """Triangular filters (HTK mel scale) over the ``n_fft // 2 + 1`` rfft bins."""
    f_hi = rate / 2 if f_hi is None else f_hi
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    fb = np.zeros((n_bands, freqs.size))
    for m in range(n_bands):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def frame_signal(x, flen, hop):
    x = np.asarray(x, dtype=np.float64)
    if x.size < flen:
        x = np.concatenate([x, np.zeros(flen - x.size)])
    n_frames = 1 + (x.size - flen) // hop
    idx = np.arange(flen)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _framing(cfg, rate):
    return int(round(cfg.frame_ms * rate / 1000.0)), int(round(cfg.hop_ms * rate / 1000.0))


def mel_energies(v, cfg, rate):
    flen, hop = _framing(cfg, rate)
    frames = frame_signal(v, flen, hop) * np.hanning(flen)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return power @ mel_filterbank(cfg.mel_bands, flen, rate).T


def mel_cepstrum(v, cfg=None, rate=8000.0):
    """(frames, n_coeffs) matrix; column 0 is the energy-like coefficient."""
    cfg = cfg or MelCepstrumConfig()
    if hasattr(v, "samples"):
        v, rate = v.samples, v.sample_rate
    logmel = np.log(np.maximum(mel_energies(v, cfg, rate), LOG_FLOOR))
    return dct(logmel, type=2, axis=1, norm="ortho")[:, :cfg.n_coeffs]


def mcd_from_cepstra(mc, mc2):
    """Mean over frames of the Euclidean distance over coefficients 1..K-1, in dB."""
    t = min(mc.shape[0], mc2.shape[0])
    if mc.shape[0] != mc2.shape[0]:
        log.warning("mcd: frame counts differ (%d vs %d); truncating to %d", mc.shape[0], mc2.shape[0], t)
    d = mc[:t, 1:] - mc2[:t, 1:]
    return float(MCD_SCALE * np.mean(np.sqrt(np.sum(d * d, axis=1))))


def mcd(v, v_hat, cfg=None, rate=8000.0):
    cfg = cfg or MelCepstrumConfig()
    return mcd_from_cepstra(mel_cepstrum(v, cfg, rate), mel_cepstrum(v_hat, cfg, rate))


# ---------------------------------------------------------------------------
# accuracy


@dataclass
class PairResult:
    pair_id: str
    hit: bool
    pcc: float
    mcd: float
    matched_id: str


@dataclass
class EvalReport:
    rows: list
    seed: int = 0
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def hits(self):
        return sum(r.hit for r in self.rows)

    @property
    def accuracy(self):
        return self.hits / len(self.rows)

    @property
    def mean_pcc(self):
        return float(np.mean([r.pcc for r in self.rows]))

    @property
    def mean_mcd(self):
        return float(np.mean([r.mcd for r in self.rows]))

    def summary(self):
        return {"n_pairs": len(self.rows), "hits": self.hits, "accuracy": self.accuracy,
                "accuracy_pct": 100.0 * self.accuracy, "mean_pcc": self.mean_pcc, "mean_mcd_db": self.mean_mcd,
                "seed": self.seed, "config": self.config, "metadata": self.metadata}

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        lines = ["pair_id,hit,pcc,mcd"]
        lines += [f"{r.pair_id},{int(r.hit)},{r.pcc:.6f},{r.mcd:.6f}" for r in self.rows]
        with open(os.path.join(directory, "report.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(directory, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=str)


def _safe_pcc(a, b):
    try:
        return pcc(a, b)
    except MetricError:
        return 0.0


def translation_accuracy(translate, pairs, cfg=None, seed=0, config=None):
    """Nearest-neighbour accuracy of ``translate(u) -> v_hat`` over ``pairs``.

    A prediction is correct when, among all reference speech signals in
    ``pairs``, its paired ``v`` has the highest PCC with ``v_hat``.  Ties go to
    the lowest MCD, then to the lexicographically smallest pair id, so the
    result does not depend on reference order.  A constant ``v_hat`` counts
    as PCC 0 against every reference.
    """
    if not pairs:
        raise MetricError("no pairs to evaluate")
    cfg = cfg or MelCepstrumConfig()
    refs = [(p.v.id, p.v.samples, p.v.sample_rate) for p in pairs]
    ref_ceps = {rid: mel_cepstrum(x, cfg, rate) for rid, x, rate in refs}
    rows = []
    for p in pairs:
        v_hat = np.asarray(translate(p.u), dtype=np.float64)
        rate = p.v.sample_rate
        hat_ceps = mel_cepstrum(v_hat, cfg, rate)
        best = None
        for rid, x, _ in refs:
            n = min(x.size, v_hat.size)
            score = (-_safe_pcc(v_hat[:n], x[:n]), mcd_from_cepstra(ref_ceps[rid], hat_ceps), rid)
            if best is None or score < best:
                best = score
        n = min(p.v.samples.size, v_hat.size)
        rows.append(PairResult(p.id, best[2] == p.v.id, _safe_pcc(v_hat[:n], p.v.samples[:n]),
                               mcd_from_cepstra(ref_ceps[p.v.id], hat_ceps), best[2]))
    meta = {"accuracy_definition": ACCURACY_NOTE, "published_reference": PUBLISHED_REFERENCE}
    return EvalReport(rows, seed=seed, config=config or asdict(cfg), metadata=meta)


# ---------------------------------------------------------------------------
# spectrogram


def spectrogram(v, cfg=None, rate=8000.0):
    """Log-magnitude STFT, rows = frequency bins, columns = frames."""
    cfg = cfg or MelCepstrumConfig()
    if hasattr(v, "samples"):
        v, rate = v.samples, v.sample_rate
    flen, hop = _framing(cfg, rate)
    frames = frame_signal(v, flen, hop) * np.hanning(flen)
    return np.log(np.maximum(np.abs(np.fft.rfft(frames, axis=1)), LOG_FLOOR)).T


def export_spectrogram(v, cfg, path, rate=8000.0):
    S = spectrogram(v, cfg, rate)
    np.savetxt(path, S, delimiter=",", fmt="%.6f")
    return S
