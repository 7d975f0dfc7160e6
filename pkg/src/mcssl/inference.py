"""Turn fitted variational parameters into DoA decisions.

A candidate is active when its mixing level clears pi_thresh and the peak
of its softmax DoA indicator clears w_thresh (flat indicators mark the
diffuse class and are rejected). Candidates whose peaks fall on the same
grid direction are duplicates of one source; only the strongest survives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .variational import VariationalParams

DEFAULT_PI_THRESH = 0.02
DEFAULT_W_THRESH = 0.1
DEFAULT_MERGE_BINS = 2


@dataclass
class Candidate:
    k: int
    doa_bin: int
    doa_deg: float
    mixing_level: float
    peak_weight: float
    active: bool

    def to_dict(self) -> dict:
        return {"k": self.k, "doa_bin": self.doa_bin, "doa_deg": self.doa_deg,
                "pi": self.mixing_level, "peak_w": self.peak_weight,
                "active": self.active}


@dataclass
class LocalizationResult:
    candidates: list
    pi_thresh: float
    w_thresh: float

    def active_doas(self) -> list:
        return [c.doa_deg for c in self.candidates if c.active]

    def to_dict(self) -> dict:
        return {"candidates": [c.to_dict() for c in self.candidates],
                "thresholds": {"pi": self.pi_thresh, "w": self.w_thresh}}

    @classmethod
    def from_dict(cls, doc: dict) -> "LocalizationResult":
        cands = [Candidate(c["k"], c.get("doa_bin", -1), c["doa_deg"], c["pi"],
                           c["peak_w"], c["active"]) for c in doc["candidates"]]
        return cls(cands, doc["thresholds"]["pi"], doc["thresholds"]["w"])


def merge_duplicates(cands: list, n_bins: int,
                     merge_bins: int = DEFAULT_MERGE_BINS) -> None:
    """Deactivate active candidates whose peak bin falls within merge_bins
    (circularly) of a stronger active candidate, in place."""
    order = sorted((c for c in cands if c.active),
                   key=lambda c: -c.mixing_level)
    kept = []
    for c in order:
        d = c.doa_bin
        if any(min(abs(d - p), n_bins - abs(d - p)) <= merge_bins for p in kept):
            c.active = False
        else:
            kept.append(d)


def localize(params: VariationalParams, pi_thresh: float = DEFAULT_PI_THRESH,
             w_thresh: float = DEFAULT_W_THRESH,
             merge_bins: int = DEFAULT_MERGE_BINS) -> LocalizationResult:
    """Threshold mixing levels and indicator peaks; argmax gives each DoA.
    Duplicate directions keep only the candidate with the larger mixing level."""
    W_bar = params.doa_indicator()
    pibar = params.pibar
    D = params.n_directions
    step = 360.0 / D
    cands = []
    for k in range(params.n_components):
        d_star = int(np.argmax(W_bar[k]))          # ties: lowest bin index
        peak = float(W_bar[k, d_star])
        active = (pibar[k] > pi_thresh) and (peak > w_thresh)
        cands.append(Candidate(k, d_star, d_star * step, float(pibar[k]), peak, active))
    merge_duplicates(cands, D, merge_bins)
    return LocalizationResult(cands, pi_thresh, w_thresh)


def count_sources(result: LocalizationResult) -> int:
    return sum(1 for c in result.candidates if c.active)
