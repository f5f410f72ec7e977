"""Classical MFCC front-end: 13 cepstral coefficients over 25 ms Hamming
windows by default, producing FeatureSequences interchangeable with learned
embeddings (layer = none).

Pipeline: pre-emphasis -> framing -> Hamming window -> magnitude spectrum ->
triangular mel filterbank -> log (floored) -> orthonormal DCT-II -> first
n_coeffs coefficients. No deltas, no CMVN, no resampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

from .errors import AudioTooShortError, MalformedWavError, UnsupportedCodecError
from .feature_store import FeatureSequence


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if samples.size < 1:
            raise MalformedWavError("audio has no samples")
        if not np.isfinite(samples).all():
            raise MalformedWavError("audio contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise MalformedWavError(f"bad sample rate {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class MfccConfig:
    """Front-end parameters; defaults follow common ASR practice."""

    n_coeffs: int = 13
    window_s: float = 0.025
    hop_s: float = 0.010
    n_fft: int | None = None  # None: next power of two >= window samples
    n_mel_filters: int = 26
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if not 1 <= self.n_coeffs <= self.n_mel_filters:
            raise ValueError("need 1 <= n_coeffs <= n_mel_filters")
        if self.window_s <= 0 or self.hop_s <= 0:
            raise ValueError("window_s and hop_s must be positive")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.window_s * sample_rate_hz))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_s * sample_rate_hz))

    def fft_size(self, sample_rate_hz: int) -> int:
        win = self.window_samples(sample_rate_hz)
        if self.n_fft is not None:
            if self.n_fft < win:
                raise ValueError(
                    f"n_fft {self.n_fft} smaller than window of {win} samples"
                )
            return self.n_fft
        n = 1
        while n < win:
            n *= 2
        return n


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a RIFF/WAVE file: 16-bit PCM or 32-bit float, mono or stereo.

    Stereo downmixes by averaging; samples normalize to [-1, 1]; the sample
    rate is preserved as-is (no resampling).

    Raises:
        UnsupportedCodecError: for any other codec or sample format.
        MalformedWavError: for unparsable files.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        message = str(exc)
        if "Unknown wave file format" in message:
            raise UnsupportedCodecError(f"{path}: {message}") from None
        raise MalformedWavError(f"{path}: {message}") from None
    except Exception as exc:  # struct errors and friends from bad headers
        raise MalformedWavError(f"{path}: {exc}") from None
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedCodecError(
            f"{path}: sample format {data.dtype} not supported "
            f"(need 16-bit PCM or 32-bit float)"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise MalformedWavError(f"{path}: unexpected array shape {samples.shape}")
    return AudioBuffer(samples, int(rate))


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters mel-spaced from 0 to Nyquist, shape (n_filters, n_fft//2 + 1)."""
    nyquist = sample_rate_hz / 2.0
    mel_points = np.linspace(0.0, hz_to_mel(nyquist), n_filters + 2)
    hz_points = np.asarray(mel_to_hz(mel_points))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    bank = np.zeros((n_filters, bin_freqs.size))
    for f in range(n_filters):
        left, center, right = hz_points[f], hz_points[f + 1], hz_points[f + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[f] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (rows are coefficient bases)."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def frame_count(n_samples: int, window_samples: int, hop_samples: int) -> int:
    if n_samples < window_samples:
        return 0
    return (n_samples - window_samples) // hop_samples + 1


def log_mel_energies(audio: AudioBuffer, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Log mel filterbank energies, shape (n_frames, n_mel_filters)."""
    rate = audio.sample_rate_hz
    win = cfg.window_samples(rate)
    hop = cfg.hop_samples(rate)
    n_frames = frame_count(audio.n_samples, win, hop)
    if n_frames < 1:
        raise AudioTooShortError(
            f"{audio.n_samples} samples < one {win}-sample window"
        )
    x = audio.samples
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    np.subtract(x[1:], cfg.pre_emphasis * x[:-1], out=emphasized[1:])
    frames = np.lib.stride_tricks.sliding_window_view(emphasized, win)[::hop][:n_frames]
    windowed = frames * np.hamming(win)
    spectrum = np.abs(np.fft.rfft(windowed, n=cfg.fft_size(rate), axis=1))
    energies = spectrum @ mel_filterbank(cfg.n_mel_filters, cfg.fft_size(rate), rate).T
    return np.log(np.maximum(energies, cfg.log_floor))


def mfcc(
    audio: AudioBuffer, cfg: MfccConfig = MfccConfig(), source_id: str = ""
) -> FeatureSequence:
    """Compute MFCC features; frame rate is the achieved hop rate.

    Raises:
        AudioTooShortError: if the audio is shorter than one window.
    """
    logm = log_mel_energies(audio, cfg)
    coeffs = logm @ dct_matrix(cfg.n_mel_filters)[: cfg.n_coeffs].T
    rate = audio.sample_rate_hz / cfg.hop_samples(audio.sample_rate_hz)
    return FeatureSequence(coeffs.astype(np.float32), rate, source_id, layer=None)
