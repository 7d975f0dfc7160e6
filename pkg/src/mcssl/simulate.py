"""Scene synthesis: image-method room impulse responses, synthetic source
signals, mixing at randomized powers with diffuse-noise injection, and
dataset generation with ground-truth bookkeeping.

Wall absorption is uniform and derived from the target RT60 by Sabine's
formula; fractional delays use an 81-tap Hann-windowed sinc.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .arrays import ArrayGeometry, DirectionGrid, unit_direction
from .dsp import Waveform, write_wav

SINC_HALF = 40  # 81-tap fractional-delay kernel


class SceneError(ValueError):
    pass


@dataclass
class RoomSpec:
    dims: tuple = (5.0, 5.0, 3.0)
    rt60: float = 0.3
    max_order: int = 50

    def __post_init__(self):
        self.dims = tuple(float(v) for v in self.dims)
        if any(v <= 0 for v in self.dims):
            raise ValueError("room dimensions must be positive")
        if self.rt60 < 0:
            raise ValueError("rt60 must be nonnegative")

    def sabine_absorption(self) -> float:
        """Uniform wall absorption for the target RT60; >= 1 means anechoic."""
        if self.rt60 <= 0:
            return 1.0
        Lx, Ly, Lz = self.dims
        volume = Lx * Ly * Lz
        surface = 2.0 * (Lx * Ly + Ly * Lz + Lz * Lx)
        return min(0.161 * volume / (surface * self.rt60), 1.0)


@dataclass
class SourceSpec:
    azimuth_deg: float
    distance: float
    gain_db: float = 0.0
    active: bool = True
    kind: str = "speechlike"
    seed: int = 0


@dataclass
class SceneSpec:
    room: RoomSpec
    array: ArrayGeometry
    array_center: tuple
    sources: list
    snr_db: float = 20.0
    duration: float = 1.0
    sample_rate: int = 16000
    grid_bins: int = 72
    speed_of_sound: float = 343.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for s in self.sources:
            pos = self.source_position(s)
            if not all(0.0 < pos[i] < self.room.dims[i] for i in range(3)):
                raise SceneError(f"source at azimuth {s.azimuth_deg} lies outside the room")

    def source_position(self, s: SourceSpec) -> np.ndarray:
        return np.asarray(self.array_center) + s.distance * unit_direction(
            math.radians(s.azimuth_deg))

    def mic_positions(self) -> np.ndarray:
        return self.array.mic_positions + np.asarray(self.array_center)


@dataclass
class GroundTruth:
    doas_deg: list             # active sources, snapped to the grid
    doa_bins: list
    active: list               # per-source flags, all sources
    all_doas_deg: list         # per-source azimuths, all sources
    rt60: float
    snr_db: float
    seed: int
    n_mics: int

    @property
    def true_count(self) -> int:
        return len(self.doas_deg)

    def to_dict(self) -> dict:
        return {"doas_deg": self.doas_deg, "doa_bins": self.doa_bins,
                "active": self.active, "all_doas_deg": self.all_doas_deg,
                "rt60": self.rt60, "snr_db": self.snr_db, "seed": self.seed,
                "n_mics": self.n_mics}

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        return cls(doc["doas_deg"], doc["doa_bins"], doc["active"],
                   doc["all_doas_deg"], doc["rt60"], doc["snr_db"],
                   doc["seed"], doc["n_mics"])


# ---------------------------------------------------------------------------
# image-method RIRs

def _axis_images(src: float, length: float, cutoff: float) -> tuple:
    """Mirror-image coordinates along one axis with their reflection counts."""
    n_max = int(math.ceil(cutoff / (2.0 * length))) + 1
    n = np.arange(-n_max, n_max + 1)
    coords, counts = [], []
    for p in (0, 1):
        coords.append((1 - 2 * p) * src + 2.0 * n * length)
        counts.append(np.abs(n - p) + np.abs(n))
    return np.concatenate(coords), np.concatenate(counts)


def _image_cloud(room: RoomSpec, src_pos, cutoff: float):
    """All image-source positions within the distance cutoff, with reflection
    orders, capped at room.max_order."""
    cx, nx = _axis_images(src_pos[0], room.dims[0], cutoff)
    cy, ny = _axis_images(src_pos[1], room.dims[1], cutoff)
    cz, nz = _axis_images(src_pos[2], room.dims[2], cutoff)
    X, Y, Z = np.meshgrid(cx, cy, cz, indexing="ij")
    order = (nx[:, None, None] + ny[None, :, None] + nz[None, None, :])
    keep = order <= room.max_order
    pos = np.stack([X[keep], Y[keep], Z[keep]], axis=1)
    return pos, order[keep]


def _deposit(h: np.ndarray, delays: np.ndarray, amps: np.ndarray) -> None:
    """Accumulate Hann-windowed sinc pulses at fractional sample delays."""
    L = h.shape[0]
    offs = np.arange(-SINC_HALF, SINC_HALF + 1)
    base = np.floor(delays).astype(np.int64)
    jmat = base[:, None] + offs[None, :]
    x = jmat - delays[:, None]
    vals = amps[:, None] * np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / (SINC_HALF + 1)))
    ok = (jmat >= 0) & (jmat < L)
    h += np.bincount(jmat[ok], weights=vals[ok], minlength=L)[:L]


def image_method_rirs(room: RoomSpec, src_pos, mic_positions, sample_rate: int,
                      speed_of_sound: float = 343.0) -> np.ndarray:
    """Impulse responses from one source to every microphone, shape (L, M)."""
    src_pos = np.asarray(src_pos, dtype=float)
    mics = np.atleast_2d(np.asarray(mic_positions, dtype=float))
    for pos in (src_pos, *mics):
        if not all(0.0 < pos[i] < room.dims[i] for i in range(3)):
            raise SceneError("source and microphones must lie strictly inside the room")
    alpha = room.sabine_absorption()
    direct = float(np.max(np.linalg.norm(mics - src_pos, axis=1)))
    if alpha >= 1.0:
        tail = 0.0
    else:
        tail = max(room.rt60 * 1.25, 0.05)
    cutoff = direct + tail * speed_of_sound + 1.0
    L = int(math.ceil((cutoff / speed_of_sound) * sample_rate)) + 2 * SINC_HALF + 2
    h = np.zeros((L, mics.shape[0]))
    if alpha >= 1.0:
        pos, order = src_pos[None, :], np.zeros(1)
    else:
        pos, order = _image_cloud(room, src_pos, cutoff)
    rho = math.sqrt(max(1.0 - alpha, 0.0))
    for m in range(mics.shape[0]):
        dist = np.linalg.norm(pos - mics[m], axis=1)
        keep = dist <= cutoff
        d = np.maximum(dist[keep], 1e-2)
        amps = (rho ** order[keep]) / d
        delays = (d / speed_of_sound) * sample_rate
        _deposit(h[:, m], delays, amps)
    return h


def image_method_rir(room: RoomSpec, src_pos, mic_pos, sample_rate: int,
                     speed_of_sound: float = 343.0) -> np.ndarray:
    """Single source-to-microphone impulse response."""
    return image_method_rirs(room, src_pos, [mic_pos], sample_rate, speed_of_sound)[:, 0]


def estimate_rt60(h: np.ndarray, sample_rate: int) -> float:
    """Schroeder backward integration, fit between -5 and -25 dB."""
    energy = np.cumsum(h[::-1] ** 2)[::-1]
    energy = energy / energy[0]
    db = 10.0 * np.log10(np.maximum(energy, 1e-30))
    idx = np.flatnonzero((db <= -5.0) & (db >= -25.0))
    if idx.size < 10:
        return 0.0
    t = idx / sample_rate
    slope, _ = np.polyfit(t, db[idx], 1)
    if slope >= 0:
        return math.inf
    return -60.0 / slope


# ---------------------------------------------------------------------------
# source signals

def _pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0], dtype=float)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n=n)


def synth_source(kind: str, duration: float, sample_rate: int, seed: int) -> Waveform:
    """Deterministic monaural test signal, peak-normalized to 0.5."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "speechlike":
        x = _pink_noise(n, rng)
        # two or three formant-ish resonances
        for _ in range(rng.integers(2, 4)):
            f0 = rng.uniform(300.0, 3000.0)
            r = 0.97
            w = 2.0 * np.pi * f0 / sample_rate
            x = lfilter([1.0], [1.0, -2.0 * r * np.cos(w), r * r], x)
        # syllabic amplitude modulation in the 2-8 Hz range
        fm = rng.uniform(2.0, 8.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env = 0.15 + 0.85 * (0.5 * (1.0 + np.sin(2.0 * np.pi * fm * t + phase))) ** 1.5
        x = x * env
    elif kind == "tone":
        f0 = rng.uniform(200.0, 2000.0)
        x = np.sin(2.0 * np.pi * f0 * t)
    elif kind == "noiseburst":
        x = rng.standard_normal(n)
        gate = (np.sin(2.0 * np.pi * rng.uniform(2.0, 6.0) * t) > 0).astype(float)
        x = x * (0.1 + 0.9 * gate)
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.5 * x / peak
    return Waveform(x, sample_rate)


# ---------------------------------------------------------------------------
# scene rendering

def render_scene(spec: SceneSpec) -> tuple:
    """Convolve active sources with their RIRs, mix at the drawn gains, add
    spatially-white noise at the requested SNR, and return ground truth."""
    active = [s for s in spec.sources if s.active]
    finite_snr = spec.snr_db is not None and math.isfinite(spec.snr_db)
    if not active and finite_snr:
        raise SceneError("scene has no active sources but finite noise SNR")
    n = int(round(spec.duration * spec.sample_rate))
    M = spec.array.n_mics
    mics = spec.mic_positions()
    mix = np.zeros((n, M))
    for s in active:
        sig = synth_source(s.kind, spec.duration, spec.sample_rate, s.seed)
        h = image_method_rirs(spec.room, spec.source_position(s), mics,
                              spec.sample_rate, spec.speed_of_sound)
        img = fftconvolve(sig.samples, h, axes=0)[:n]
        power = np.mean(img ** 2)
        if power > 0:
            img = img * math.sqrt(10.0 ** (s.gain_db / 10.0) / power)
        mix += img
    if finite_snr:
        noise_rng = np.random.default_rng(spec.noise_seed)
        sig_power = np.mean(mix ** 2)
        noise_var = sig_power / (10.0 ** (spec.snr_db / 10.0))
        mix = mix + math.sqrt(noise_var) * noise_rng.standard_normal((n, M))

    grid = DirectionGrid(spec.grid_bins)
    bins = [grid.nearest_bin(s.azimuth_deg) for s in active]
    gt = GroundTruth(
        doas_deg=[b * 360.0 / spec.grid_bins for b in bins],
        doa_bins=bins,
        active=[s.active for s in spec.sources],
        all_doas_deg=[s.azimuth_deg for s in spec.sources],
        rt60=spec.room.rt60, snr_db=spec.snr_db, seed=spec.noise_seed, n_mics=M)
    return Waveform(mix, spec.sample_rate), gt


# ---------------------------------------------------------------------------
# dataset generation

@dataclass
class DatasetTemplate:
    condition: str = "all-active"      # or "some-silent"
    n_mics: int = 6
    n_sources: tuple = (2, 3)          # inclusive range of rendered persons
    n_active: tuple = (2, 3)           # used by some-silent
    min_separation_deg: float = 20.0
    distance_range: tuple = (0.5, 2.0)
    gain_range_db: tuple = (-2.5, 2.5)
    rt60_range: tuple = (0.2, 0.4)
    snr_db: float = 20.0
    duration: float = 1.0
    sample_rate: int = 16000
    grid_bins: int = 72
    array_diameter: float = 0.20
    room_dims: tuple = (5.0, 5.0, 3.0)
    kind: str = "speechlike"

    def __post_init__(self):
        if self.condition not in ("all-active", "some-silent"):
            raise ValueError(f"unknown condition {self.condition!r}")


def _draw_azimuths(rng: np.random.Generator, n: int, min_sep: float) -> list:
    if n * min_sep >= 360.0:
        raise SceneError("separation constraint infeasible for this source count")
    for _ in range(1000):
        az = sorted(rng.uniform(0.0, 360.0, size=n))
        gaps = [az[(i + 1) % n] - az[i] if i + 1 < n else 360.0 - az[-1] + az[0]
                for i in range(n)]
        if all(g >= min_sep for g in gaps):
            return [float(a) for a in az]
    raise SceneError("could not satisfy the azimuth separation constraint")


def make_scene_spec(template: DatasetTemplate, seed: int) -> SceneSpec:
    rng = np.random.default_rng(seed)
    n_src = int(rng.integers(template.n_sources[0], template.n_sources[1] + 1))
    if template.condition == "all-active":
        n_active = n_src
    else:
        n_active = int(rng.integers(template.n_active[0],
                                    min(template.n_active[1], n_src) + 1))
    active_idx = set(rng.choice(n_src, size=n_active, replace=False).tolist())
    azimuths = _draw_azimuths(rng, n_src, template.min_separation_deg)
    sources = [SourceSpec(
        azimuth_deg=azimuths[i],
        distance=float(rng.uniform(*template.distance_range)),
        gain_db=float(rng.uniform(*template.gain_range_db)),
        active=i in active_idx,
        kind=template.kind,
        seed=int(rng.integers(0, 2 ** 31)),
    ) for i in range(n_src)]
    room = RoomSpec(template.room_dims, float(rng.uniform(*template.rt60_range)))
    center = (template.room_dims[0] / 2.0, template.room_dims[1] / 2.0, 1.5)
    return SceneSpec(
        room=room,
        array=ArrayGeometry.circular(template.n_mics, template.array_diameter),
        array_center=center, sources=sources, snr_db=template.snr_db,
        duration=template.duration, sample_rate=template.sample_rate,
        grid_bins=template.grid_bins, noise_seed=int(rng.integers(0, 2 ** 31)))


def make_dataset(template: DatasetTemplate, n_scenes: int, out_dir,
                 root_seed: int = 0) -> dict:
    """Render scenes to <name>.wav + <name>.json pairs and write a manifest."""
    if n_scenes < 1:
        raise ValueError("need at least one scene")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(root_seed).generate_state(n_scenes)
    entries = []
    for i, seed in enumerate(seeds):
        spec = make_scene_spec(template, int(seed))
        wave, gt = render_scene(spec)
        name = f"scene_{i:04d}"
        write_wav(out / f"{name}.wav", wave)
        doc = gt.to_dict()
        doc["scene_id"] = name
        with open(out / f"{name}.json", "w") as f:
            json.dump(doc, f, indent=1)
        entries.append({"scene_id": name, "wav": f"{name}.wav",
                        "truth": f"{name}.json", "n_mics": template.n_mics,
                        "true_count": gt.true_count})
    manifest = {"root_seed": root_seed, "n_scenes": n_scenes,
                "condition": template.condition, "grid_bins": template.grid_bins,
                "scenes": entries}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest
