"""Delay-and-sum beamforming features over the direction grid, and pooling
from direction-wise to source-wise features through DoA indicator weights.

Used for diagnostics and for seeding the variational fit; no trainable
front-end sits behind these features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .arrays import SteeringField
from .dsp import MultichannelSpectrogram, mean_var_normalize

LOG_FLOOR = 1e-8


@dataclass
class DirectionFeatures:
    """Per-direction features shaped (C, D, T); C is F after the log-magnitude stage."""

    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 3:
            raise ValueError("u must be (C, D, T)")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("non-finite feature entries")


def beam_magnitude(X: MultichannelSpectrogram, field: SteeringField) -> np.ndarray:
    """|a_fd^H x_tf| for every (t, f, d); shape (T, F, D)."""
    if X.n_bins != field.n_bins or X.channels != field.n_mics:
        raise ValueError(
            f"spectrogram (F={X.n_bins}, M={X.channels}) does not match "
            f"field (F={field.n_bins}, M={field.n_mics})"
        )
    # sum_m conj(a_fdm) x_tfm
    beam = np.einsum("fdm,tfm->tfd", field.vectors.conj(), X.data)
    return np.abs(beam)


def dsbf_features(X: MultichannelSpectrogram, field: SteeringField) -> DirectionFeatures:
    """Frequency-normalized log DSBF magnitudes, shaped (F, D, T)."""
    mag = beam_magnitude(X, field)                   # (T, F, D)
    logmag = np.log(np.maximum(mag, LOG_FLOOR))
    out = np.empty_like(logmag)
    for d in range(field.n_directions):
        out[:, :, d] = mean_var_normalize(logmag[:, :, d])
    return DirectionFeatures(out.transpose(1, 2, 0))  # (F, D, T)


def beam_power_profile(X: MultichannelSpectrogram, field: SteeringField,
                       fmin: float = 100.0, fmax: float = 7600.0) -> np.ndarray:
    """Time- and band-averaged DSBF power per direction; shape (D,)."""
    mag = beam_magnitude(X, field)
    band = field.band_indices(fmin, fmax)
    return (mag[:, band, :] ** 2).mean(axis=(0, 1))


def pool_directions(u: DirectionFeatures, W_bar: np.ndarray) -> np.ndarray:
    """Pool direction features into source features: v_ck = sum_d Wbar_kd u_cd."""
    W_bar = np.asarray(W_bar, dtype=np.float64)
    if W_bar.ndim != 2 or W_bar.shape[1] != u.u.shape[1]:
        raise ValueError("W_bar must be (K, D) with D matching the features")
    row_sums = W_bar.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValueError("W_bar rows must each sum to 1")
    return np.einsum("kd,cdt->ckt", W_bar, u.u)


def dump_features(path, u: DirectionFeatures) -> None:
    """Binary tensor dump: uint32 ndim, uint32 dims, then little-endian
    float32 values in row-major order."""
    arr = u.u.astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes(order="C"))


def load_features(path) -> DirectionFeatures:
    with open(path, "rb") as f:
        ndim, = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        data = np.frombuffer(f.read(), dtype="<f4").reshape(dims)
    return DirectionFeatures(data.astype(np.float64))
