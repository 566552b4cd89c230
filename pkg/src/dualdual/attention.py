"""EEG attention index from band powers, and the recording gate built on it.

Band power is the integral of a Welch power spectral density (Hann window,
50% overlap) over the band, so a sinusoid of amplitude ``a`` inside a band
contributes ``a**2 / 2``.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

THETA = (4.0, 7.0)
LOW_BETA = (12.0, 15.0)
MID_BETA = (16.0, 20.0)
DEFAULT_THRESHOLD = 60.0
OBSERVATION_SEC = 3.0


class BandError(ValueError):
    pass


@dataclass
class BandPowerReport:
    theta: float
    low_beta: float
    mid_beta: float
    window_sec: float
    P: float
    theta_zero: bool = False


def _samples_rate(sig, rate=None):
    if hasattr(sig, "samples"):
        return np.asarray(sig.samples, dtype=np.float64), float(sig.sample_rate)
    if rate is None:
        raise ValueError("sample rate required for raw arrays")
    return np.asarray(sig, dtype=np.float64), float(rate)


def psd(sig, window_sec=1.0, rate=None):
    x, fs = _samples_rate(sig, rate)
    nper = int(round(window_sec * fs))
    if nper > x.size:
        raise BandError(f"window of {window_sec} s exceeds signal duration {x.size / fs:.3f} s")
    return sps.welch(x, fs=fs, window="hann", nperseg=nper, noverlap=nper // 2, detrend=False,
                     scaling="density")


def band_power(sig, f_lo, f_hi, window_sec=1.0, rate=None, spectrum=None):
    x, fs = _samples_rate(sig, rate)
    if not 0 <= f_lo < f_hi:
        raise BandError(f"bad band [{f_lo}, {f_hi}]")
    if f_hi >= fs / 2:
        raise BandError(f"band [{f_lo}, {f_hi}] Hz reaches Nyquist {fs / 2} Hz")
    f, p = spectrum if spectrum is not None else psd(x, window_sec, fs)
    df = f[1] - f[0]
    sel = (f >= f_lo) & (f <= f_hi)
    return float(np.sum(p[sel]) * df)


def attention_from_powers(theta, low_beta, mid_beta, window_sec=float("nan")):
    if theta > 0:
        return BandPowerReport(theta, low_beta, mid_beta, window_sec, (low_beta + mid_beta) / theta)
    return BandPowerReport(theta, low_beta, mid_beta, window_sec, math.inf, theta_zero=True)


def attention_index(sig, window_sec=1.0, rate=None):
    x, fs = _samples_rate(sig, rate)
    spec = psd(x, window_sec, fs)
    powers = [band_power(x, lo, hi, window_sec, fs, spectrum=spec) for lo, hi in (THETA, LOW_BETA, MID_BETA)]
    return attention_from_powers(*powers, window_sec=window_sec)


def admits(P, threshold=DEFAULT_THRESHOLD):
    # strict: P equal to the threshold is rejected
    return P > threshold


def gate(sig, threshold=DEFAULT_THRESHOLD, window_sec=OBSERVATION_SEC, segment_sec=1.0, rate=None):
    """Decision over the first ``window_sec`` seconds of ``sig``."""
    x, fs = _samples_rate(sig, rate)
    n = int(round(window_sec * fs))
    if n > x.size:
        raise BandError(f"observation window {window_sec} s exceeds signal duration {x.size / fs:.3f} s")
    report = attention_index(x[:n], segment_sec, fs)
    # no theta power means no usable ratio (a flat or dead channel), not infinite attention
    ok = admits(report.P, threshold) and not report.theta_zero
    return ("admit" if ok else "reject"), report


def scan(sig, threshold=DEFAULT_THRESHOLD, window_sec=OBSERVATION_SEC, segment_sec=1.0, rate=None):
    """Consecutive non-overlapping windows -> list of ``(t_start, P, decision)``."""
    x, fs = _samples_rate(sig, rate)
    n = int(round(window_sec * fs))
    rows = []
    for start in range(0, x.size - n + 1, n):
        decision, report = gate(x[start:start + n], threshold, window_sec, segment_sec, fs)
        rows.append((start / fs, report.P, decision))
    return rows
