import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualdual import signal_io as sio
from dualdual.metrics import pcc
from dualdual.signal_io import SignalFormatError, SignalRecord


def rec(x, domain="V", rate=8000.0):
    return SignalRecord("r", domain, np.asarray(x, dtype=float), rate)


# -- WAV -------------------------------------------------------------------------

def _pcm16_wav(values, rate=16000, channels=1):
    data = struct.pack(f"<{len(values)}h", *values)
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_pcm16_scaling():
    samples, rate = sio.parse_wav_bytes(_pcm16_wav([32767, -32768, 0]))
    assert rate == 16000
    assert samples[0] == 32767 / 32768 and samples[1] == -1.0 and samples[2] == 0.0


def test_one_second_at_16k(tmp_path):
    path = tmp_path / "a.wav"
    path.write_bytes(_pcm16_wav([0] * 16000))
    r = sio.load_wav(path)
    assert r.samples.size == 16000 and r.sample_rate == 16000 and r.domain == "V"


def test_multichannel_is_averaged():
    samples, _ = sio.parse_wav_bytes(_pcm16_wav([1000, 3000, -2000, 0], channels=2))
    assert np.allclose(samples, [2000 / 32768, -1000 / 32768])


@pytest.mark.parametrize("fmt", ["pcm16", "float32"])
def test_writer_loopback_is_bit_exact(tmp_path, fmt):
    rng = np.random.default_rng(0)
    if fmt == "pcm16":
        x = rng.integers(-32768, 32768, size=500) / 32768.0
    else:
        x = rng.uniform(-1, 1, 500).astype(np.float32).astype(np.float64)
    path = tmp_path / "x.wav"
    sio.write_wav(path, x, 8000, fmt)
    y = sio.load_wav(path)
    assert np.array_equal(y.samples, x) and y.sample_rate == 8000
    sio.write_wav(tmp_path / "y.wav", y.samples, 8000, fmt)
    assert (tmp_path / "y.wav").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("mutate, field", [
    (lambda b: b"RIFX" + b[4:], "RIFF"),
    (lambda b: b[:8] + b"WAVX" + b[12:], "WAVE"),
    (lambda b: b[:20] + struct.pack("<H", 2) + b[22:], "format"),
    (lambda b: b[:34] + struct.pack("<H", 24) + b[36:], "bits"),
])
def test_bad_headers_name_the_field(mutate, field):
    with pytest.raises(SignalFormatError, match=field):
        sio.parse_wav_bytes(mutate(_pcm16_wav([1, 2, 3])))


# -- EEG CSV -------------------------------------------------------------------

def test_identical_channels_average_to_one_channel(tmp_path):
    x = np.random.default_rng(1).normal(size=50)
    path = tmp_path / "e.csv"
    sio.write_eeg_csv(path, {c: x for c in ("T3", "T4", "T5", "T6")}, 250)
    r = sio.load_eeg_csv(path)
    assert np.allclose(r.samples, x, rtol=0, atol=1e-15) and r.sample_rate == 250 and r.domain == "U"


def test_single_channel_passthrough(tmp_path):
    x = np.random.default_rng(2).normal(size=20)
    path = tmp_path / "e.csv"
    sio.write_eeg_csv(path, {"Cz": x}, 100)
    assert np.array_equal(sio.load_eeg_csv(path, ["Cz"]).samples, x)


def test_24_channel_mean_matches_rowwise_oracle(tmp_path):
    rng = np.random.default_rng(3)
    table = {c: rng.normal(size=30) for c in sio.MONTAGE_24}
    path = tmp_path / "e.csv"
    sio.write_eeg_csv(path, table, 500)
    picked = ["T3", "F7", "O2", "Cz"]
    expected = [sum(table[c][i] for c in picked) / 4 for i in range(30)]
    assert np.allclose(sio.load_eeg_csv(path, picked).samples, expected, rtol=0, atol=1e-14)


def test_missing_channel_lists_available(tmp_path):
    path = tmp_path / "e.csv"
    sio.write_eeg_csv(path, {"A": np.ones(3), "B": np.ones(3)}, 100)
    with pytest.raises(SignalFormatError, match=r"\['T3', 'T4', 'T5', 'T6'\].*available: \['A', 'B'\]"):
        sio.load_eeg_csv(path)


def test_rate_flag_and_missing_rate(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("T3\n1\n2\n")
    with pytest.raises(SignalFormatError, match="rate"):
        sio.load_eeg_csv(path, ["T3"])
    assert sio.load_eeg_csv(path, ["T3"], sample_rate=128).sample_rate == 128


def test_bandpass_removes_out_of_band_tone(tmp_path):
    fs = 250.0
    t = np.arange(2000) / fs
    x = np.sin(2 * np.pi * 10 * t) + np.sin(2 * np.pi * 100 * t)
    y = sio.bandpass_sinc(x, fs, 1.0, 50.0)
    spec = np.abs(np.fft.rfft(y[250:-250]))
    f = np.fft.rfftfreq(1500, 1 / fs)
    assert spec[np.argmin(abs(f - 100))] < 0.01 * spec[np.argmin(abs(f - 10))]


# -- normalize / reshape -------------------------------------------------------

def test_normalize_examples():
    assert np.array_equal(sio.normalize(rec([2.0, -4.0])).samples, [0.5, -1.0])
    z = sio.normalize(rec([0.0, 0.0]))
    assert np.array_equal(z.samples, [0.0, 0.0]) and z.meta["all_zero"]


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200))
def test_normalize_peak_is_exactly_one_and_idempotent(xs):
    r = sio.normalize(rec(xs))
    if any(xs):
        assert np.max(np.abs(r.samples)) == 1.0
    assert np.array_equal(sio.normalize(r).samples, r.samples)


def test_reshape_examples():
    v = sio.reshape_to_matrix(np.arange(16.0), 1)
    assert v.matrix.shape == (1, 4, 4) and v.pad_count == 0
    v = sio.reshape_to_matrix(np.arange(10.0), 1)
    assert v.matrix.shape == (1, 4, 4) and v.pad_count == 6
    assert np.array_equal(v.matrix.reshape(-1)[:10], np.arange(10.0))


def test_reshape_round_trips_every_length_to_10000():
    for depth in (1, 4):
        for n in range(1, 10001):
            x = np.arange(n, dtype=float)
            view = sio.reshape_to_matrix(x, depth)
            side, unit = view.side, 2 ** depth
            # smallest valid square
            assert side % unit == 0 and side * side >= n
            assert side == unit or (side - unit) ** 2 < n
            assert np.array_equal(sio.unreshape(view), x)


def test_reshape_rejects_small_side():
    with pytest.raises(ValueError, match="cannot hold"):
        sio.reshape_to_matrix(np.ones(300), 4, side=16)


# -- resampling ---------------------------------------------------------------

def test_resample_endpoints_and_identity():
    x = np.random.default_rng(5).normal(size=37)
    assert np.array_equal(sio.resample_linear(x, 37), x)
    y = sio.resample_linear(x, 91)
    assert y[0] == x[0] and y[-1] == x[-1]


def test_resample_record_changes_rate():
    r = sio.resample_record(rec(np.ones(160), rate=16000), 8000)
    assert r.samples.size == 80 and r.sample_rate == 8000


# -- synthesis ---------------------------------------------------------------

def test_synthesis_is_deterministic():
    a, b = sio.synthesize_pair(7, index=2), sio.synthesize_pair(7, index=2)
    for d in ("u", "v", "o"):
        assert np.array_equal(getattr(a, d).samples, getattr(b, d).samples)
    assert a.group_label == "g2" and a.id == "pair0002"


def test_different_seeds_give_unrelated_eeg():
    vals = [abs(pcc(sio.synthesize_pair(s).u.samples, sio.synthesize_pair(s + 1000).u.samples)) for s in range(100)]
    assert np.mean(vals) < 0.5


def test_speech_peak_lies_in_configured_band():
    cfg = sio.SynthConfig(n_samples=4096, speech_floor=0.0)
    lo, hi = cfg.f0_band
    for s in range(10):
        v = sio.synthesize_pair(s, cfg).v
        f = np.fft.rfftfreq(v.samples.size, 1 / v.sample_rate)
        peak = f[np.argmax(np.abs(np.fft.rfft(v.samples)))]
        assert lo - 2 <= peak <= hi + 2


def test_eeg_follows_speech():
    p = sio.synthesize_pair(0)
    assert pcc(p.u.samples, p.v.samples) > 0.5
    assert p.u.normalized and p.v.normalized


def test_transition_reproducible_from_pair():
    from dualdual.transition import cascade
    p = sio.synthesize_pair(4)
    assert np.array_equal(cascade(p.u, p.v, p.transition).samples, p.o.samples)


# -- word segmentation -------------------------------------------------------

def _burst(fs, start, length, n):
    x = np.zeros(n)
    t = np.arange(length) / fs
    x[start:start + length] = np.sin(2 * np.pi * 200 * t)
    return x


def test_segment_silence_is_empty():
    assert sio.segment_words(rec(np.zeros(8000)), 1e-4) == []


def test_segment_single_burst():
    fs = 8000
    # threshold at half the in-burst mean square: a frame is active iff its centre is inside the burst
    segs = sio.segment_words(rec(_burst(fs, 2000, 2400, 8000)), 0.25)
    assert len(segs) == 1
    s = segs[0].meta
    assert abs(s["start"] - 2000) <= 80 and abs(s["stop"] - 4400) <= 80


def test_segment_two_bursts_against_scan_oracle():
    fs, hop = 8000, 80
    x = _burst(fs, 800, 1600, 12000) + _burst(fs, 4800, 2000, 12000)
    segs = sio.segment_words(rec(x), 0.25)
    assert len(segs) == 2
    # oracle: first/last sample above a tiny amplitude inside each half
    nz = np.flatnonzero(np.abs(x) > 1e-6)
    halves = [nz[nz < 4000], nz[nz >= 4000]]
    for seg, idx in zip(segs, halves):
        assert abs(seg.meta["start"] - idx[0]) <= hop
        assert abs(seg.meta["stop"] - (idx[-1] + 1)) <= hop


# -- manifest ----------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    entries = [sio.ManifestEntry("p1", str(tmp_path / "e" / "1.csv"), str(tmp_path / "w" / "1.wav"), "g0")]
    path = tmp_path / "m.tsv"
    sio.write_manifest(path, entries)
    assert "e/1.csv\tw/1.wav" in path.read_text()
    assert sio.read_manifest(path) == entries


def test_manifest_bad_line(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("p1\tonly-two\n")
    with pytest.raises(SignalFormatError, match=":1:"):
        sio.read_manifest(path)
