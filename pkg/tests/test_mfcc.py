import struct
import wave

import numpy as np
import pytest

from qbe.errors import AudioTooShortError, MalformedWavError, UnsupportedCodecError
from qbe.feature_store import read_feature_file, write_feature_file
from qbe.mfcc import (
    AudioBuffer,
    MfccConfig,
    dct_matrix,
    frame_count,
    log_mel_energies,
    mel_filterbank,
    mfcc,
    read_wav,
)


def write_pcm16(path, samples, rate=16000, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        data = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
        fh.writeframes(data.tobytes())


def tone(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


# --- read_wav ------------------------------------------------------------------


def test_pcm16_peak_scaling(tmp_path):
    path = tmp_path / "peak.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(16000)
        fh.writeframes(np.array([32767, -32768, 0], dtype="<i2").tobytes())
    buf = read_wav(path)
    assert buf.samples[0] == pytest.approx(32767 / 32768)
    assert buf.samples[1] == -1.0
    assert buf.samples[2] == 0.0


def test_one_second_sample_count(tmp_path):
    path = tmp_path / "sec.wav"
    write_pcm16(path, tone(440, 1.0))
    buf = read_wav(path)
    assert buf.n_samples == 16000
    assert buf.sample_rate_hz == 16000


def test_stereo_downmixes_to_mono(tmp_path):
    path = tmp_path / "st.wav"
    left = tone(440, 0.1)
    stereo = np.stack([left, -left], axis=1).ravel()
    write_pcm16(path, stereo, channels=2)
    buf = read_wav(path)
    assert buf.n_samples == left.size
    assert np.abs(buf.samples).max() < 1e-4


def test_float32_wav_supported(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "f32.wav"
    wavfile.write(str(path), 16000, tone(300, 0.2).astype(np.float32))
    buf = read_wav(path)
    assert buf.n_samples == 3200


def test_mulaw_rejected_as_unsupported_codec(tmp_path):
    # hand-built RIFF header declaring format tag 7 (mu-law)
    path = tmp_path / "mulaw.wav"
    n = 100
    payload = bytes(n)
    fmt = struct.pack("<HHIIHH", 7, 1, 8000, 8000, 1, 8)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", n) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)
    with pytest.raises(UnsupportedCodecError):
        read_wav(path)


def test_int32_pcm_rejected(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "i32.wav"
    wavfile.write(str(path), 16000, (tone(300, 0.1) * 2**31).astype(np.int32))
    with pytest.raises(UnsupportedCodecError):
        read_wav(path)


def test_malformed_header_rejected(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFFxxxxWAVEfmt garbage")
    with pytest.raises(MalformedWavError):
        read_wav(path)


def test_missing_file_passthrough(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "ghost.wav")


# --- mfcc pipeline -----------------------------------------------------------------


def test_one_second_gives_98_frames_of_13():
    # floor((16000 - 400) / 160) + 1 = 98
    buf = AudioBuffer(tone(440, 1.0), 16000)
    seq = mfcc(buf, source_id="tone")
    assert seq.frames.shape == (98, 13)
    assert seq.frame_rate_hz == 100.0
    assert seq.layer is None
    assert frame_count(16000, 400, 160) == 98


def test_silence_frames_equal_dct_of_log_floor():
    cfg = MfccConfig()
    buf = AudioBuffer(np.zeros(16000), 16000)
    seq = mfcc(buf, cfg)
    # every frame identical
    assert np.ptp(seq.frames, axis=0).max() == 0.0
    # constant log-floor vector: only coefficient 0 is nonzero
    expected0 = np.log(cfg.log_floor) * np.sqrt(cfg.n_mel_filters)
    np.testing.assert_allclose(seq.frames[0, 0], expected0, rtol=1e-6)
    np.testing.assert_allclose(seq.frames[0, 1:], 0.0, atol=1e-4)


def test_pure_tone_peaks_in_covering_mel_filter():
    rate, freq = 16000, 1000.0
    cfg = MfccConfig()
    buf = AudioBuffer(tone(freq, 0.5, rate), rate)
    energies = np.exp(log_mel_energies(buf, cfg))
    bank = mel_filterbank(cfg.n_mel_filters, cfg.fft_size(rate), rate)
    k0 = int(round(freq / (rate / cfg.fft_size(rate))))
    expected_filter = int(np.argmax(bank[:, k0]))
    got = int(np.argmax(energies.mean(axis=0)))
    assert got == expected_filter


def test_dct_matrix_is_orthonormal():
    d = dct_matrix(26)
    np.testing.assert_allclose(d.T @ d, np.eye(26), atol=1e-10)
    np.testing.assert_allclose(d @ d.T, np.eye(26), atol=1e-10)


def test_one_hop_shift_moves_frames_one_index():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=16000)
    seq = mfcc(AudioBuffer(x, 16000))
    shifted = mfcc(AudioBuffer(x[160:], 16000))
    # interior frames (skip frame 0 of the shifted signal: pre-emphasis boundary)
    np.testing.assert_allclose(
        shifted.frames[1:], seq.frames[2 : 1 + shifted.frames.shape[0]], atol=1e-6
    )


def test_amplitude_scaling_only_moves_coefficient_zero():
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.2, 0.2, size=8000)
    alpha = 3.0
    cfg = MfccConfig()
    a = mfcc(AudioBuffer(x, 16000), cfg)
    b = mfcc(AudioBuffer(np.clip(alpha * x, -1, 1), 16000), cfg)
    np.testing.assert_allclose(b.frames[:, 1:], a.frames[:, 1:], atol=1e-5)
    expected_shift = np.log(alpha) * np.sqrt(cfg.n_mel_filters)
    np.testing.assert_allclose(
        b.frames[:, 0] - a.frames[:, 0], expected_shift, atol=1e-5
    )


def test_too_short_audio_errors():
    with pytest.raises(AudioTooShortError):
        mfcc(AudioBuffer(np.zeros(300), 16000))


def test_mfcc_round_trips_through_feature_file(tmp_path):
    buf = AudioBuffer(tone(700, 0.3), 16000)
    seq = mfcc(buf, source_id="rt")
    path = tmp_path / "m.qbef"
    write_feature_file(seq, path)
    back = read_feature_file(path)
    assert back.frames.tobytes() == seq.frames.tobytes()
    assert back.layer is None
    assert back.frame_rate_hz == 100.0


def test_config_validation():
    with pytest.raises(ValueError):
        MfccConfig(n_coeffs=30, n_mel_filters=26)
    with pytest.raises(ValueError):
        MfccConfig(n_fft=128).fft_size(16000)  # 128 < 400-sample window
