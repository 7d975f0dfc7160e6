"""Shared helpers: synthetic plane-wave scenes built directly in the STFT
domain, so baseline and model tests have an oracle with a known DoA that
does not depend on the room simulator."""

import numpy as np
import pytest

from mcssl.arrays import ArrayGeometry, DirectionGrid, build_field
from mcssl.dsp import MultichannelSpectrogram


WINDOW, HOP, FS = 512, 160, 16000


def freqs(window=WINDOW, fs=FS):
    return np.fft.rfftfreq(window, d=1.0 / fs)


def make_field(n_mics=6, n_dirs=72, window=WINDOW, fs=FS):
    geom = ArrayGeometry.circular(n_mics)
    return build_field(geom, DirectionGrid(n_dirs), freqs(window, fs))


def plane_wave_spec(field, doa_bins, powers=None, n_frames=20, seed=0,
                    noise=1e-3):
    """Far-field sources at grid bins: X[t,f,:] = sum_i s_i(t,f) a_f(d_i) + noise."""
    rng = np.random.default_rng(seed)
    F, D, M = field.vectors.shape
    if powers is None:
        powers = [1.0] * len(doa_bins)
    X = np.zeros((n_frames, F, M), dtype=np.complex128)
    for d, p in zip(doa_bins, powers):
        s = np.sqrt(p / 2.0) * (rng.standard_normal((n_frames, F))
                                + 1j * rng.standard_normal((n_frames, F)))
        X += s[:, :, None] * field.vectors[None, :, d, :]
    X += np.sqrt(noise / 2.0) * (rng.standard_normal(X.shape)
                                 + 1j * rng.standard_normal(X.shape))
    return MultichannelSpectrogram(X, FS, WINDOW, HOP)


@pytest.fixture(scope="session")
def field6():
    return make_field()
