"""Time-frequency analysis shared by all other modules.

STFT convention: Hann analysis window (periodic), frames start at sample 0,
no zero-phase centering, one-sided spectrum. Reconstruction is weighted
overlap-add with a least-squares synthesis window, so the round trip is
exact on interior samples for any hop <= window length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window


class LengthError(ValueError):
    pass


@dataclass
class Waveform:
    """Multichannel time-domain signal, samples shaped (n_samples, channels)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2:
            raise ValueError("samples must be (n_samples,) or (n_samples, channels)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class MultichannelSpectrogram:
    """Complex STFT tensor indexed (t, f, m)."""

    data: np.ndarray
    sample_rate: int
    window_len: int
    hop: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError("data must be (T, F, M)")
        if self.data.shape[1] != self.window_len // 2 + 1:
            raise ValueError("F must equal window_len/2 + 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite spectrogram entries")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window_len, d=1.0 / self.sample_rate)


def _hann(window_len: int) -> np.ndarray:
    return get_window("hann", window_len, fftbins=True)


def stft(w: Waveform, window_len: int = 512, hop: int = 160) -> MultichannelSpectrogram:
    """One-sided Hann STFT of every channel; frames start at sample 0."""
    if window_len % 2 != 0:
        raise ValueError("window_len must be even")
    if hop > window_len or hop <= 0:
        raise ValueError("require 0 < hop <= window_len")
    x = w.samples
    if x.shape[0] < window_len:
        raise LengthError(
            f"signal length {x.shape[0]} shorter than one window ({window_len})"
        )
    win = _hann(window_len)
    n_frames = 1 + (x.shape[0] - window_len) // hop
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx, :] * win[None, :, None]          # (T, W, M)
    spec = np.fft.rfft(frames, axis=1)               # (T, F, M)
    return MultichannelSpectrogram(spec, w.sample_rate, window_len, hop)


def istft(S: MultichannelSpectrogram, length: int | None = None) -> Waveform:
    """WOLA reconstruction with least-squares synthesis normalization."""
    if S.n_frames == 0:
        raise LengthError("empty spectrogram")
    win = _hann(S.window_len)
    frames = np.fft.irfft(S.data, n=S.window_len, axis=1)  # (T, W, M)
    n_total = S.window_len + (S.n_frames - 1) * S.hop
    out = np.zeros((n_total, S.channels))
    norm = np.zeros(n_total)
    for t in range(S.n_frames):
        sl = slice(t * S.hop, t * S.hop + S.window_len)
        out[sl] += frames[t] * win[:, None]
        norm[sl] += win ** 2
    nz = norm > 1e-12
    out[nz] /= norm[nz, None]
    if length is not None:
        out = out[:length]
    return Waveform(out, S.sample_rate)


def mean_var_normalize(feat: np.ndarray, var_floor: float = 1e-8) -> np.ndarray:
    """Normalize each frequency column of a (T, F) matrix to zero mean, unit
    variance over time. Columns with variance below the floor are zeroed."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    mean = feat.mean(axis=0, keepdims=True)
    var = feat.var(axis=0, keepdims=True)
    out = np.zeros_like(feat)
    ok = var[0] >= var_floor
    out[:, ok] = (feat[:, ok] - mean[:, ok]) / np.sqrt(var[:, ok])
    return out


def read_wav(path) -> Waveform:
    """Read a PCM-16 or IEEE float-32 WAV file. No resampling is performed."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    if data.ndim == 1:
        data = data[:, None]
    return Waveform(data, rate)


def write_wav(path, w: Waveform, dtype: str = "float32") -> None:
    if dtype == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif dtype == "pcm16":
        clipped = np.clip(w.samples, -1.0, 1.0 - 1.0 / 32768)
        wavfile.write(path, w.sample_rate, (clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unknown dtype {dtype}")
