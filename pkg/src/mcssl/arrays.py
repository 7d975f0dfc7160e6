"""Array geometry, horizontal direction grid, and plane-wave steering vectors.

Sign convention (shared with the room simulator): for a plane wave arriving
from azimuth theta, a microphone at position r receives the wavefront
earlier by (r . u)/c where u points from the array toward the source, so
the steering-vector entry is exp(+j 2 pi f (r . u)/c).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0


@dataclass
class ArrayGeometry:
    """Microphone positions (meters), re-centered so the centroid sits at the origin."""

    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("mic_positions must be (M, 3)")
        if pos.shape[0] < 2:
            raise ValueError("need at least 2 microphones")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite microphone position")
        self.mic_positions = pos - pos.mean(axis=0, keepdims=True)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @classmethod
    def circular(cls, n_mics: int, diameter: float = 0.20,
                 speed_of_sound: float = SPEED_OF_SOUND) -> "ArrayGeometry":
        """Uniform circular array in the horizontal plane, mic 0 on the +x axis."""
        ang = 2.0 * np.pi * np.arange(n_mics) / n_mics
        r = diameter / 2.0
        pos = np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros(n_mics)], axis=1)
        return cls(pos, speed_of_sound)

    @classmethod
    def from_json(cls, path) -> "ArrayGeometry":
        with open(path) as f:
            doc = json.load(f)
        return cls(np.asarray(doc["mics"], dtype=float), float(doc.get("c", SPEED_OF_SOUND)))

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"mics": self.mic_positions.tolist(), "c": self.speed_of_sound}, f)


@dataclass
class DirectionGrid:
    """D azimuths uniform on [0, 2pi), elevation fixed at zero."""

    n_directions: int
    azimuths: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_directions < 1:
            raise ValueError("need at least one direction")
        self.azimuths = 2.0 * np.pi * np.arange(self.n_directions) / self.n_directions

    @property
    def degrees(self) -> np.ndarray:
        return np.degrees(self.azimuths)

    def nearest_bin(self, azimuth_deg: float) -> int:
        step = 360.0 / self.n_directions
        return int(np.round(azimuth_deg / step)) % self.n_directions


def unit_direction(azimuth: float) -> np.ndarray:
    """Horizontal unit vector pointing from the array toward the source."""
    return np.array([np.cos(azimuth), np.sin(azimuth), 0.0])


def steering_vector(g: ArrayGeometry, azimuth: float, freq: float) -> np.ndarray:
    """Plane-wave steering vector, one unit-modulus entry per microphone."""
    if freq < 0:
        raise ValueError("freq must be nonnegative")
    tau = -(g.mic_positions @ unit_direction(azimuth)) / g.speed_of_sound
    return np.exp(-2j * np.pi * freq * tau)


@dataclass
class SteeringField:
    """Steering vectors a_fd for every (frequency, direction) pair, plus the
    rank-1 template SCMs a_fd a_fd^H materialized on demand."""

    vectors: np.ndarray      # complex (F, D, M)
    freqs: np.ndarray        # (F,)
    grid: DirectionGrid
    geometry: ArrayGeometry

    @property
    def n_bins(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_directions(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_mics(self) -> int:
        return self.vectors.shape[2]

    def template(self, f: int, d: int) -> np.ndarray:
        a = self.vectors[f, d]
        return np.outer(a, a.conj())

    def templates(self, f: int) -> np.ndarray:
        """All D templates at bin f, shaped (D, M, M)."""
        a = self.vectors[f]
        return a[:, :, None] * a[:, None, :].conj()

    def band_indices(self, fmin: float, fmax: float) -> np.ndarray:
        return np.flatnonzero((self.freqs >= fmin) & (self.freqs <= fmax))


def build_field(g: ArrayGeometry, grid: DirectionGrid, freqs: np.ndarray) -> SteeringField:
    freqs = np.asarray(freqs, dtype=np.float64)
    u = np.stack([unit_direction(az) for az in grid.azimuths], axis=0)    # (D, 3)
    tau = -(u @ g.mic_positions.T) / g.speed_of_sound                     # (D, M)
    phase = -2.0 * np.pi * freqs[:, None, None] * tau[None, :, :]         # (F, D, M)
    return SteeringField(np.exp(1j * phase), freqs, grid, g)
