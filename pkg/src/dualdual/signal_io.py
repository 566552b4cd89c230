"""Signal records, file formats and the synthetic paired corpus.

File formats owned here:

* WAV: RIFF/WAVE, PCM 16-bit little-endian or IEEE float 32-bit, any channel
  count (averaged to mono on read).
* EEG CSV: UTF-8, one header row of channel names, optional ``# rate=<Hz>``
  comment, one sample per row.
* Manifest: one pair per line, ``pair_id<TAB>eeg_path<TAB>wav_path<TAB>group``;
  ``#`` starts a comment; relative paths resolve against the manifest folder.
"""
import csv
import dataclasses
import io
import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

log = logging.getLogger(__name__)

DOMAINS = ("U", "V", "O")
TEMPORAL_CHANNELS = ("T3", "T4", "T5", "T6")
# 24-electrode 10-20 montage used by the synthetic CSV writer
MONTAGE_24 = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4",
              "T5", "P3", "Pz", "P4", "T6", "O1", "Oz", "O2", "A1", "A2", "FT7", "FT8")


class SignalFormatError(ValueError):
    """Malformed or unsupported input file."""


@dataclass
class SignalRecord:
    id: str
    domain: str
    samples: np.ndarray
    sample_rate: float
    channels: list = field(default_factory=list)
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"{self.id}: samples must be a non-empty 1-d array")
        if not self.sample_rate > 0:
            raise ValueError(f"{self.id}: sample_rate must be positive")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class PairedExample:
    u: SignalRecord
    v: SignalRecord
    o: SignalRecord
    group_label: str
    transition: object = None  # TransitionSpec that produced ``o``

    @property
    def id(self):
        return self.u.id


@dataclass
class MatrixView:
    source_id: str
    matrix: np.ndarray  # (1, H, W)
    pad_count: int

    @property
    def side(self):
        return self.matrix.shape[-1]


# ---------------------------------------------------------------------------
# WAV


_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_wav(path, record_id=None, domain="V"):
    with open(path, "rb") as fh:
        raw = fh.read()
    samples, rate = parse_wav_bytes(raw, where=str(path))
    rid = record_id or os.path.splitext(os.path.basename(str(path)))[0]
    return SignalRecord(rid, domain, samples, float(rate), meta={"source": str(path)})


def parse_wav_bytes(raw, where="<bytes>"):
    if len(raw) < 12:
        raise SignalFormatError(f"{where}: file too short for a RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", raw[:12])
    if riff != b"RIFF":
        raise SignalFormatError(f"{where}: bad chunk id {riff!r}, expected b'RIFF'")
    if wave != b"WAVE":
        raise SignalFormatError(f"{where}: bad format {wave!r}, expected b'WAVE'")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack("<4sI", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise SignalFormatError(f"{where}: fmt chunk size {size} < 16")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and size >= 40:
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise SignalFormatError(f"{where}: missing 'fmt ' chunk")
    if data is None:
        raise SignalFormatError(f"{where}: missing 'data' chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1:
        raise SignalFormatError(f"{where}: num_channels={channels}")
    if rate <= 0:
        raise SignalFormatError(f"{where}: sample_rate={rate}")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data[:len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data[:len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise SignalFormatError(f"{where}: unsupported audio_format={tag} with bits_per_sample={bits}")
    frames = x.size // channels
    if frames == 0:
        raise SignalFormatError(f"{where}: data chunk holds no complete frame")
    x = x[:frames * channels].reshape(frames, channels)
    mono = x[:, 0].copy() if channels == 1 else x.mean(axis=1)
    return mono, rate


def wav_bytes(samples, sample_rate, fmt="pcm16"):
    samples = np.asarray(samples, dtype=np.float64)
    if fmt == "pcm16":
        q = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
        payload, tag, bits = q.tobytes(), _WAVE_FORMAT_PCM, 16
    elif fmt == "float32":
        payload, tag, bits = samples.astype("<f4").tobytes(), _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    rate = int(round(sample_rate))
    block = bits // 8
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt_chunk = struct.pack("<4sIHHIIHH", b"fmt ", 16, tag, 1, rate, rate * block, block, bits)
    return header + fmt_chunk + struct.pack("<4sI", b"data", len(payload)) + payload


def write_wav(path, samples, sample_rate, fmt="pcm16"):
    _atomic_write(path, wav_bytes(samples, sample_rate, fmt))


def _atomic_write(path, payload):
    tmp = f"{path}.tmp{os.getpid()}"
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# EEG CSV


def load_eeg_csv(path, selected_channels=TEMPORAL_CHANNELS, sample_rate=None, bandpass=False,
                 passband=(1.0, 50.0), record_id=None):
    """Average the selected channels of an EEG CSV into one trace.

    ``sample_rate`` overrides the ``# rate=`` comment; one of the two must be
    present.  With ``bandpass=True`` a windowed-sinc band-pass over
    ``passband`` is applied after averaging.
    """
    rate, header, rows = None, None, []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, _, val = s[1:].strip().partition("=")
                if key.strip() == "rate":
                    rate = float(val)
                continue
            if header is None:
                header = [h.strip() for h in next(csv.reader([s]))]
                continue
            rows.append(s)
    if header is None:
        raise SignalFormatError(f"{path}: no header row")
    if sample_rate is not None:
        rate = float(sample_rate)
    if rate is None:
        raise SignalFormatError(f"{path}: no '# rate=' line and no sample rate given")
    selected = list(selected_channels)
    missing = [c for c in selected if c not in header]
    if missing:
        raise SignalFormatError(f"{path}: channels {missing} not found; available: {header}")
    if not rows:
        raise SignalFormatError(f"{path}: no samples")
    try:
        table = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise SignalFormatError(f"{path}: {exc}") from None
    if table.shape[1] != len(header):
        raise SignalFormatError(f"{path}: rows have {table.shape[1]} columns, header has {len(header)}")
    cols = [header.index(c) for c in selected]
    trace = table[:, cols].mean(axis=1)
    if not np.all(np.isfinite(trace)):
        raise SignalFormatError(f"{path}: non-finite samples")
    meta = {"source": str(path), "passband_hz": tuple(passband), "bandpass_applied": bool(bandpass)}
    if bandpass:
        trace = bandpass_sinc(trace, rate, *passband)
    rid = record_id or os.path.splitext(os.path.basename(str(path)))[0]
    return SignalRecord(rid, "U", trace, rate, channels=selected, meta=meta)


def write_eeg_csv(path, channels, rate):
    """``channels`` maps channel name -> 1-d array (all the same length)."""
    names = list(channels)
    table = np.column_stack([np.asarray(channels[n], dtype=np.float64) for n in names])
    buf = io.StringIO()
    buf.write(f"# rate={rate:g}\n")
    buf.write(",".join(names) + "\n")
    for row in table:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    _atomic_write(path, buf.getvalue())


def bandpass_sinc(x, rate, f_lo, f_hi, taps=None):
    """Zero-phase windowed-sinc (Hamming) band-pass."""
    if taps is None:
        taps = int(min(4 * rate / max(f_lo, 1e-3), len(x) - 1)) | 1
    taps = max(3, taps | 1)
    h = sps.firwin(taps, [f_lo, f_hi], pass_zero=False, window="hamming", fs=rate)
    return np.convolve(x, h, mode="same")


# ---------------------------------------------------------------------------
# normalization, resampling, reshaping


def normalize(sig):
    """Divide by max |x|; an all-zero signal is returned unchanged and flagged."""
    peak = float(np.max(np.abs(sig.samples)))
    if peak == 0.0:
        log.warning("normalize: %s is all zeros; left unchanged", sig.id)
        return sig.replace(samples=sig.samples.copy(), normalized=True, meta={**sig.meta, "all_zero": True})
    return sig.replace(samples=sig.samples / peak, normalized=True)


def resample_linear(x, n_out):
    """Linear interpolation onto ``n_out`` points with both endpoints aligned."""
    x = np.asarray(x, dtype=np.float64)
    n_in = x.size
    if n_out < 1:
        raise ValueError("n_out must be >= 1")
    if n_out == n_in:
        return x.copy()
    if n_in == 1:
        return np.full(n_out, x[0])
    if n_out == 1:
        return x[:1].copy()
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    return np.interp(pos, np.arange(n_in), x)


def resample_record(sig, rate):
    if sig.sample_rate == rate:
        return sig
    n_out = max(1, int(round(sig.samples.size * rate / sig.sample_rate)))
    return sig.replace(samples=resample_linear(sig.samples, n_out), sample_rate=float(rate),
                       meta={**sig.meta, "resampled_from": sig.sample_rate})


def matrix_side(n_samples, depth):
    unit = 2 ** depth
    side = unit * math.ceil(math.sqrt(n_samples) / unit)
    while side * side < n_samples:
        side += unit
    return max(side, unit)


def reshape_to_matrix(sig, depth, side=None):
    """Zero-pad to a square whose side is a multiple of ``2**depth``; fill row-major."""
    x = sig.samples if isinstance(sig, SignalRecord) else np.asarray(sig, dtype=np.float64)
    sid = sig.id if isinstance(sig, SignalRecord) else ""
    need = matrix_side(x.size, depth)
    if side is None:
        side = need
    elif side < need or side % (2 ** depth):
        raise ValueError(f"side {side} cannot hold {x.size} samples at depth {depth} (need >= {need}, "
                         f"multiple of {2 ** depth})")
    pad = side * side - x.size
    flat = np.concatenate([x, np.zeros(pad)])
    return MatrixView(sid, flat.reshape(1, side, side), pad)


def unreshape(view):
    flat = np.asarray(view.matrix, dtype=np.float64).reshape(-1)
    return flat[:flat.size - view.pad_count].copy()


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    sample_rate: float = 8000.0
    n_samples: int = 256
    f0_band: tuple = (150.0, 400.0)
    n_harmonics: int = 4
    max_bursts: int = 2
    eeg_gain: float = 2.0
    eeg_noise: float = 0.15
    noise_band: tuple = (1.0, 50.0)
    n_groups: int = 4
    speech_floor: float = 1e-3  # white noise under the bursts, like a room recording


# fixed mixing FIR applied to speech to obtain the pseudo-EEG
_MIX_FIR = np.array([0.25, 0.5, 1.0, 0.5, 0.25, -0.1])


def _speech_like(rng, cfg):
    n, fs = cfg.n_samples, cfg.sample_rate
    t = np.arange(n) / fs
    f0 = rng.uniform(*cfg.f0_band)
    v = np.zeros(n)
    for _ in range(int(rng.integers(1, cfg.max_bursts + 1))):
        centre = rng.uniform(0.2, 0.8) * n
        width = rng.uniform(0.25, 0.6) * n
        env = np.clip(1.0 - ((np.arange(n) - centre) / (width / 2)) ** 2, 0.0, None)
        phase = rng.uniform(0, 2 * np.pi, size=cfg.n_harmonics)
        burst = sum(np.sin(2 * np.pi * f0 * (k + 1) * t + phase[k]) / (k + 1) for k in range(cfg.n_harmonics))
        v += rng.uniform(0.5, 1.0) * env * burst
    v += cfg.speech_floor * rng.normal(size=n)
    return v, f0


def _band_noise(rng, n, fs, band):
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    if band[1] < fs / n:  # band narrower than one bin: fall back to a slow random walk
        x = np.cumsum(rng.normal(size=n))
        x -= x.mean()
    s = np.max(np.abs(x))
    return x / s if s > 0 else x


def synthesize_pair(seed, config=None, index=0, transition=None):
    """A (u, v, o) triple that is a pure function of ``(seed, config, index)``."""
    from .transition import TransitionSpec, cascade

    cfg = config or SynthConfig()
    rng = np.random.default_rng([int(seed), int(index)])
    v_raw, f0 = _speech_like(rng, cfg)
    mixed = np.convolve(v_raw, _MIX_FIR, mode="same")
    u_raw = np.tanh(cfg.eeg_gain * mixed) + cfg.eeg_noise * _band_noise(rng, cfg.n_samples, cfg.sample_rate,
                                                                         cfg.noise_band)
    pid = f"pair{index:04d}"
    v = normalize(SignalRecord(pid, "V", v_raw, cfg.sample_rate, meta={"f0": f0}))
    u = normalize(SignalRecord(pid, "U", u_raw, cfg.sample_rate, channels=list(TEMPORAL_CHANNELS)))
    spec = transition.resolved(u, v) if transition else TransitionSpec.default_for(u, v)
    o = cascade(u, v, spec)
    return PairedExample(u, v, o, f"g{index % cfg.n_groups}", spec)


def synthesize_dataset(n, seed, config=None, transition=None):
    return [synthesize_pair(seed, config, i, transition) for i in range(n)]


# ---------------------------------------------------------------------------
# word segmentation


def segment_words(v, energy_threshold, frame_ms=25.0, hop_ms=10.0, min_gap_ms=200.0, min_len_ms=100.0):
    """Energy-gated split of a sentence recording into word-level records.

    Frame energy is the mean square over 25 ms frames (10 ms hop).  Active
    frames separated by fewer than ``min_gap_ms`` of silence are merged;
    segments shorter than ``min_len_ms`` are dropped.  Segment bounds run
    from half a hop before the first active frame centre to half a hop after
    the last.
    """
    x, fs = v.samples, v.sample_rate
    flen = int(round(frame_ms * fs / 1000))
    hop = int(round(hop_ms * fs / 1000))
    if x.size < flen:
        return []
    n_frames = 1 + (x.size - flen) // hop
    idx = np.arange(flen)[None, :] + hop * np.arange(n_frames)[:, None]
    energy = np.mean(x[idx] ** 2, axis=1)
    active = np.flatnonzero(energy >= energy_threshold)
    if active.size == 0:
        return []
    gap_frames = int(math.ceil(min_gap_ms / hop_ms))
    runs, start, prev = [], active[0], active[0]
    for k in active[1:]:
        if k - prev - 1 >= gap_frames:
            runs.append((start, prev))
            start = k
        prev = k
    runs.append((start, prev))
    out = []
    for a, b in runs:
        lo = max(0, a * hop + flen // 2 - hop // 2)
        hi = min(x.size, b * hop + flen // 2 + hop - hop // 2)
        if (hi - lo) * 1000.0 / fs < min_len_ms:
            continue
        out.append(v.replace(id=f"{v.id}_w{len(out)}", samples=x[lo:hi].copy(),
                             meta={**v.meta, "start": lo, "stop": hi}))
    return out


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    pair_id: str
    eeg_path: str
    wav_path: str
    group_label: str


def read_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 4:
                raise SignalFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            pid, eeg, wav, group = parts
            entries.append(ManifestEntry(pid, os.path.join(base, eeg), os.path.join(base, wav), group))
    return entries


def write_manifest(path, entries):
    base = os.path.dirname(os.path.abspath(path))
    lines = ["# pair_id\teeg_path\twav_path\tgroup_label"]
    for e in entries:
        eeg = os.path.relpath(os.path.abspath(e.eeg_path), base)
        wav = os.path.relpath(os.path.abspath(e.wav_path), base)
        lines.append(f"{e.pair_id}\t{eeg}\t{wav}\t{e.group_label}")
    _atomic_write(path, "\n".join(lines) + "\n")


def load_pairs(manifest_path, model_rate=8000.0, eeg_channels=TEMPORAL_CHANNELS, transition=None,
               bandpass=False):
    """Load, resample to ``model_rate``, normalize and cascade every manifest pair."""
    from .transition import TransitionSpec, cascade

    pairs = []
    for e in read_manifest(manifest_path):
        u = load_eeg_csv(e.eeg_path, eeg_channels, bandpass=bandpass, record_id=e.pair_id)
        v = load_wav(e.wav_path, record_id=e.pair_id)
        u = normalize(resample_record(u, model_rate))
        v = normalize(resample_record(v, model_rate))
        spec = transition.resolved(u, v) if transition else TransitionSpec.default_for(u, v)
        pairs.append(PairedExample(u, v, cascade(u, v, spec), e.group_label, spec))
    return pairs
