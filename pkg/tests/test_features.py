import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.fft import dct, idct
from scipy.signal import get_window

from lyrictrack import features as F
from lyrictrack.errors import AudioFormatError, BadMagic, EmptyInput, RateMismatch


def tone(seconds, rate, freq=440.0, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return F.AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


# --- framing ---------------------------------------------------------------

def test_one_second_at_16k_gives_99_frames_of_320():
    frames = F.frame_signal(tone(1.0, 16000), 20, 10)
    # floor((16000 - 320) / 160) + 1
    assert frames.shape == (99, 320)


def test_exactly_one_window_gives_one_frame():
    audio = F.AudioBuffer(np.ones(320), 16000)
    assert F.frame_signal(audio, 20, 10).shape == (1, 320)


def test_constant_one_frames_equal_hann_window():
    frames = F.frame_signal(F.AudioBuffer(np.ones(1000), 16000), 20, 10)
    np.testing.assert_array_equal(frames[3], get_window("hann", 320, fftbins=True))


def test_frame_k_starts_at_k_times_hop():
    x = np.arange(2000, dtype=float) / 2000
    frames = F.frame_signal(F.AudioBuffer(x, 16000), 20, 10)
    win = get_window("hann", 320, fftbins=True)
    np.testing.assert_allclose(frames[5], x[800:1120] * win)


def test_short_audio_is_empty_input():
    with pytest.raises(EmptyInput):
        F.frame_signal(F.AudioBuffer(np.zeros(319), 16000), 20, 10)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(30, 5000), variant=st.sampled_from(F.VARIANTS))
def test_frame_count_law(n, variant):
    config = F.FeatureConfig.for_variant(variant)
    w, h = config.window_samples, config.hop_samples
    audio = F.AudioBuffer(np.random.default_rng(n).uniform(-1, 1, max(n, w)), config.sample_rate_hz)
    out = F.extract(audio, config)
    assert out.n_frames == (len(audio.samples) - w) // h + 1
    assert out.dim == config.n_features


# --- MFCC ---------------------------------------------------------------------

def test_model80_shape():
    out = F.mfcc(tone(1.0, 16000), F.FeatureConfig.model80())
    assert out.data.shape == (99, 80)
    assert out.frame_period_ms == 10.0
    assert out.first_frame_center_ms == pytest.approx(10.0)


def test_baseline_keeps_100_of_120_coefficients():
    config = F.FeatureConfig.baseline()
    assert (config.n_coeffs, config.drop_first, config.sample_rate_hz) == (120, 20, 44100)
    out = F.mfcc(tone(1.0, 44100), config)
    assert out.data.shape == ((44100 - 882) // 441 + 1, 100)


def test_baseline_drops_the_leading_coefficients():
    audio = tone(0.3, 44100)
    full = F.FeatureConfig("baseline", 44100, n_mel_bands=120, n_coeffs=120, drop_first=0)
    np.testing.assert_array_equal(F.mfcc(audio, F.FeatureConfig.baseline()).data, F.mfcc(audio, full).data[:, 20:])


def test_silence_gives_identical_frames():
    out = F.mfcc(F.AudioBuffer(np.zeros(16000), 16000), F.FeatureConfig.model80())
    assert np.all(np.isfinite(out.data))
    np.testing.assert_array_equal(out.data, np.broadcast_to(out.data[0], out.data.shape))
    # log floor through an orthonormal DCT: only c0 is non-zero
    assert out.data[0, 0] == pytest.approx(np.log(1e-10) * np.sqrt(80))
    np.testing.assert_allclose(out.data[0, 1:], 0.0, atol=1e-9)


def test_rate_mismatch_names_both_rates():
    with pytest.raises(RateMismatch, match="16000.*8000"):
        F.mfcc(tone(1.0, 8000), F.FeatureConfig.model80())


def test_mfcc_matches_direct_computation():
    # independent route: explicit DFT sums instead of the rfft + filterbank matmul path
    audio = tone(0.05, 16000, freq=1000.0)
    config = F.FeatureConfig.model80()
    frame = F.frame_signal(audio, 20, 10)[0]
    n_fft = 512
    k = np.arange(n_fft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(len(frame))) / n_fft)
    power = np.abs(basis @ frame) ** 2
    fb = F.mel_filterbank(80, n_fft, 16000)
    log_mel = np.log(np.maximum(fb @ power, 1e-10))
    n = np.arange(80)
    dct_matrix = np.sqrt(2 / 80) * np.cos(np.pi * np.outer(n, 2 * n + 1) / 160)
    dct_matrix[0] /= np.sqrt(2)
    np.testing.assert_allclose(F.mfcc(audio, config).data[0], dct_matrix @ log_mel, rtol=1e-9, atol=1e-7)


def test_mel_filterbank_triangles_peak_at_their_centres():
    fb = F.mel_filterbank(10, 1024, 16000)
    assert fb.shape == (10, 513)
    assert np.all(fb >= 0) and np.all(fb <= 1)
    centres = F.mel_to_hz(np.linspace(0, F.hz_to_mel(8000), 12))[1:-1]
    peak_hz = np.argmax(fb, axis=1) * 8000 / 512
    np.testing.assert_allclose(peak_hz, centres, atol=8000 / 512)


def test_htk_mel_formula():
    assert F.hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))
    assert F.mel_to_hz(F.hz_to_mel(1234.5)) == pytest.approx(1234.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=128))
def test_dct_orthonormal_roundtrip(values):
    x = np.array(values)
    back = idct(dct(x, type=2, norm="ortho"), type=2, norm="ortho")
    assert np.linalg.norm(back - x) <= 1e-9 * max(np.linalg.norm(x), 1e-300) + 1e-300


# --- Levinson-Durbin -------------------------------------------------------

def test_ar1_order_one():
    r = 0.9 ** np.arange(2)
    a, err = F.levinson_durbin(r, 1)
    # 1x1 normal equation: r0 * a1 = r1
    assert a[0] == pytest.approx(0.9)
    assert err == pytest.approx(1 - 0.81)


def test_order_zero():
    a, err = F.levinson_durbin([2.5, 1.0], 0)
    assert a.shape == (0,)
    assert err == 2.5


def test_order_two_matches_dense_solve():
    r = np.array([1.0, 0.5, 0.1])
    a, err = F.levinson_durbin(r, 2)
    expected = np.linalg.solve(np.array([[1.0, 0.5], [0.5, 1.0]]), r[1:])
    np.testing.assert_allclose(a, expected, atol=1e-12)
    assert err == pytest.approx(r[0] - expected @ r[1:])


def test_zero_energy_frame():
    a, err = F.levinson_durbin(np.zeros(5), 4)
    np.testing.assert_array_equal(a, 0.0)
    assert err == 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), order=st.integers(1, 16))
def test_levinson_equals_dense_normal_equations(seed, order):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=200) + 0.5 * np.convolve(rng.normal(size=200), [1, 0.8, 0.3], "same")
    r = F.autocorrelation(x, order)
    a, err = F.levinson_durbin(r, order)
    toeplitz = np.array([[r[abs(i - j)] for j in range(order)] for i in range(order)])
    expected = np.linalg.solve(toeplitz, r[1:order + 1])
    np.testing.assert_allclose(a, expected, atol=1e-8, rtol=1e-8)
    assert err >= 0
    assert err == pytest.approx(r[0] - expected @ r[1:order + 1], rel=1e-8, abs=1e-10)


def test_autocorrelation_matches_numpy_correlate(rng):
    x = rng.normal(size=64)
    full = np.correlate(x, x, "full")[63:]
    np.testing.assert_allclose(F.autocorrelation(x, 10), full[:11])


# --- recitative feature -------------------------------------------------------

def test_recitative_shape():
    config = F.FeatureConfig.recitative()
    assert config.lpc_order == 12
    out = F.recitative_feature(tone(2.0, 1500, freq=200.0), config)
    # floor((3000 - 30) / 15) + 1
    assert out.data.shape == (199, 25)
    assert np.all(np.isfinite(out.data))


def test_recitative_silent_frames_identical():
    x = np.zeros(3000)
    x[:600] = np.random.default_rng(0).normal(size=600) * 0.1
    out = F.recitative_feature(F.AudioBuffer(x, 1500), F.FeatureConfig.recitative())
    silent = out.data[60:]
    np.testing.assert_array_equal(silent, np.broadcast_to(silent[0], silent.shape))
    assert not np.array_equal(out.data[0], silent[0])


def test_lpc_envelope_ar1_dc_exceeds_nyquist():
    env = F.lpc_envelope(np.array([0.9]), 1.0, 64)
    # direct evaluation of 1 / |1 - 0.9 e^{-iw}|^2
    assert env[0] == pytest.approx(1 / (1 - 0.9) ** 2)
    assert env[-1] == pytest.approx(1 / (1 + 0.9) ** 2)
    assert env[0] > env[-1]


def test_recitative_requires_1500_hz():
    with pytest.raises(RateMismatch):
        F.recitative_feature(tone(1.0, 16000), F.FeatureConfig.recitative())


def test_config_validation():
    with pytest.raises(ValueError):
        F.FeatureConfig("model80", 16000, n_mel_bands=10, n_coeffs=20)
    with pytest.raises(ValueError):
        F.FeatureConfig("model80", 16000, drop_first=3)
    with pytest.raises(ValueError):
        F.FeatureConfig("model80", 16000, window_ms=5, hop_ms=10)
    with pytest.raises(ValueError):
        F.FeatureConfig.for_variant("chroma")


@pytest.mark.parametrize("variant", F.VARIANTS)
def test_finite_and_deterministic(variant):
    config = F.FeatureConfig.for_variant(variant)
    rng = np.random.default_rng(5)
    for samples in (np.zeros(config.sample_rate_hz // 2), rng.uniform(-1, 1, config.sample_rate_hz // 2)):
        audio = F.AudioBuffer(samples, config.sample_rate_hz)
        a, b = F.extract(audio, config), F.extract(audio, config)
        assert np.all(np.isfinite(a.data))
        assert a.data.tobytes() == b.data.tobytes()


# --- resampling ---------------------------------------------------------------

def test_same_rate_is_identity():
    audio = F.AudioBuffer(np.random.default_rng(0).uniform(-1, 1, 1000), 16000)
    out = F.resample(audio, 16000)
    assert out.samples.tobytes() == audio.samples.tobytes()


def test_resample_length():
    audio = F.AudioBuffer(np.zeros(25600), 16000)
    assert len(F.resample(audio, 1500).samples) == 2400


@pytest.mark.parametrize("source,target", [(16000, 1500), (16000, 44100), (44100, 16000), (1500, 16000)])
def test_resample_preserves_dc(source, target):
    out = F.resample(F.AudioBuffer(np.full(source, 0.5), source), target)
    assert len(out.samples) == target
    np.testing.assert_allclose(out.samples, 0.5, atol=1e-6)


def test_resample_preserves_in_band_sine():
    src = tone(1.0, 16000, freq=100.0, amp=0.5)
    out = F.resample(src, 1500)
    t = np.arange(1500) / 1500
    expected = 0.5 * np.sin(2 * np.pi * 100.0 * t)
    np.testing.assert_allclose(out.samples[100:-100], expected[100:-100], atol=5e-3)


# --- file formats ---------------------------------------------------------------

def test_wav_roundtrip_int16_and_float(tmp_path):
    audio = tone(0.1, 16000)
    F.write_wav(tmp_path / "a.wav", audio)
    back = F.read_wav(tmp_path / "a.wav")
    assert back.sample_rate_hz == 16000
    np.testing.assert_allclose(back.samples, audio.samples, atol=1 / 32768)
    F.write_wav(tmp_path / "b.wav", audio, float32=True)
    np.testing.assert_array_equal(F.read_wav(tmp_path / "b.wav").samples, audio.samples.astype(np.float32))


def test_wav_rejects_stereo(tmp_path):
    from scipy.io import wavfile
    wavfile.write(tmp_path / "s.wav", 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(AudioFormatError, match="2 channels"):
        F.read_wav(tmp_path / "s.wav")


def test_feature_file_roundtrip(tmp_path, rng):
    data = rng.normal(size=(17, 80)).astype(np.float32)
    fm = F.FeatureMatrix(data, 10.0, 10.0)
    F.save_features(fm, tmp_path / "x.feat")
    back = F.load_features(tmp_path / "x.feat")
    assert back.data.tobytes() == data.tobytes()
    assert (back.frame_period_ms, back.first_frame_center_ms) == (10.0, 10.0)
    raw = (tmp_path / "x.feat").read_bytes()
    assert raw[:5] == b"FEAT1"
    (tmp_path / "bad.feat").write_bytes(b"FEAT2" + raw[5:])
    with pytest.raises(BadMagic):
        F.load_features(tmp_path / "bad.feat")
