"""Classical audio-only DoA baselines: wideband MUSIC and SRP-PHAT over the
direction grid, plus circular peak picking.

Both spectra average over the same 100-7600 Hz band used by the mixture
model so the comparison stays like-for-like.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import SteeringField
from .cgmm import DEFAULT_BAND
from .dsp import MultichannelSpectrogram

PHAT_FLOOR = 1e-8


@dataclass
class SpatialSpectrum:
    values: np.ndarray
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("spectrum must be finite and nonnegative")


def music_spectrum(X: MultichannelSpectrogram, field: SteeringField, n_src: int,
                   fmin: float = DEFAULT_BAND[0],
                   fmax: float = DEFAULT_BAND[1]) -> SpatialSpectrum:
    """Incoherent wideband MUSIC: per-bin noise-subspace pseudo-spectrum,
    arithmetically averaged over the band."""
    M = X.channels
    if not 1 <= n_src < M:
        raise ValueError(f"need 1 <= n_src < M, got n_src={n_src}, M={M}")
    band = field.band_indices(fmin, fmax)
    data = X.data[:, band, :]                                  # (T, Fb, M)
    A = field.vectors[band]                                    # (Fb, D, M)
    R = np.einsum("tfm,tfn->fmn", data, data.conj()) / X.n_frames
    vals, vecs = np.linalg.eigh(R)                             # ascending eigenvalues
    E = vecs[:, :, : M - n_src]                                # noise subspace (Fb, M, M-n)
    proj = np.einsum("fdm,fmn->fdn", A.conj(), E)              # a^H E
    denom = (np.abs(proj) ** 2).sum(axis=2) / M                # (Fb, D)
    P = 1.0 / np.maximum(denom, 1e-12)
    return SpatialSpectrum(P.mean(axis=0), "music")


def srp_phat(X: MultichannelSpectrogram, field: SteeringField,
             fmin: float = DEFAULT_BAND[0],
             fmax: float = DEFAULT_BAND[1]) -> SpatialSpectrum:
    """Steered response power with phase-transform whitening."""
    if X.channels < 2:
        raise ValueError("SRP-PHAT needs at least 2 channels")
    band = field.band_indices(fmin, fmax)
    data = X.data[:, band, :]
    white = data / np.maximum(np.abs(data), PHAT_FLOOR)
    A = field.vectors[band]
    beam = np.einsum("tfm,fdm->tfd", white, A.conj())
    return SpatialSpectrum((np.abs(beam) ** 2).sum(axis=(0, 1)), "srp-phat")


def peak_pick(s: SpatialSpectrum, max_peaks: int, rel_thresh: float = 0.5) -> list:
    """Strict local maxima on the circular grid, strongest first, kept when
    at least rel_thresh times the global maximum."""
    if not 0 < rel_thresh <= 1:
        raise ValueError("rel_thresh must lie in (0, 1]")
    v = s.values
    D = v.shape[0]
    peaks = [d for d in range(D)
             if v[d] > v[(d - 1) % D] and v[d] > v[(d + 1) % D]]
    if not peaks:
        return []
    cutoff = rel_thresh * v.max()
    peaks = [d for d in peaks if v[d] >= cutoff]
    peaks.sort(key=lambda d: -v[d])
    return peaks[:max_peaks]
