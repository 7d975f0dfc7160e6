"""Scoring of localization results: F-measure with circular angular-tolerance
matching, source-count correct rate, and the diffuse-rejection threshold sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


def circular_distance_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def match_and_score(est_doas, true_doas, tol: float = 10.0) -> tuple:
    """Greedy one-to-one matching by increasing circular distance.

    Returns (precision, recall, f). Empty estimates against empty truth
    score perfectly; unmatched estimates cost precision, unmatched truths
    cost recall.
    """
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    est = list(est_doas)
    true = list(true_doas)
    if not est and not true:
        return 1.0, 1.0, 1.0
    pairs = sorted(
        ((circular_distance_deg(e, t), i, j)
         for i, e in enumerate(est) for j, t in enumerate(true)),
        key=lambda p: (p[0], p[1], p[2]))
    used_e, used_t = set(), set()
    matches = 0
    for dist, i, j in pairs:
        if dist > tol:
            break
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        matches += 1
    precision = matches / len(est) if est else 0.0
    recall = matches / len(true) if true else 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


@dataclass
class SceneScore:
    scene_id: str
    method: str
    n_mics: int
    true_count: int
    est_count: int
    precision: float
    recall: float
    f_measure: float

    @property
    def count_correct(self) -> bool:
        return self.est_count == self.true_count


@dataclass
class ScoreReport:
    scenes: list
    tol_deg: float
    missing: list = field(default_factory=list)

    def mean_f(self) -> float:
        return float(np.mean([s.f_measure for s in self.scenes])) if self.scenes else 0.0

    def count_accuracy(self) -> float:
        if not self.scenes:
            raise ValueError("no scenes to score")
        return sum(s.count_correct for s in self.scenes) / len(self.scenes)

    def breakdown(self) -> dict:
        """Aggregates keyed by (n_mics, true_count)."""
        groups = {}
        for s in self.scenes:
            groups.setdefault((s.n_mics, s.true_count), []).append(s)
        return {
            f"M={m},L={l}": {
                "n": len(g),
                "precision": float(np.mean([s.precision for s in g])),
                "recall": float(np.mean([s.recall for s in g])),
                "f_measure": float(np.mean([s.f_measure for s in g])),
                "count_accuracy": sum(s.count_correct for s in g) / len(g),
            } for (m, l), g in sorted(groups.items())
        }

    def to_dict(self) -> dict:
        return {
            "tol_deg": self.tol_deg,
            "mean_f": self.mean_f(),
            "count_accuracy": self.count_accuracy() if self.scenes else None,
            "breakdown": self.breakdown(),
            "missing": list(self.missing),
            "scenes": [{
                "scene_id": s.scene_id, "method": s.method, "M": s.n_mics,
                "L": s.true_count, "est_count": s.est_count, "P": s.precision,
                "R": s.recall, "F": s.f_measure, "count_ok": s.count_correct,
            } for s in self.scenes],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["scene", "method", "M", "L", "P", "R", "F", "count_ok"])
            for s in self.scenes:
                w.writerow([s.scene_id, s.method, s.n_mics, s.true_count,
                            f"{s.precision:.6f}", f"{s.recall:.6f}",
                            f"{s.f_measure:.6f}", int(s.count_correct)])


def score_scene(scene_id: str, method: str, n_mics: int, est_doas, true_doas,
                tol: float = 10.0) -> SceneScore:
    p, r, f = match_and_score(est_doas, true_doas, tol)
    return SceneScore(scene_id, method, n_mics, len(list(true_doas)),
                      len(list(est_doas)), p, r, f)


def count_accuracy(report: ScoreReport) -> float:
    return report.count_accuracy()


def rescore_candidates(candidates: dict, pi_thresh: float, w_thresh: float,
                       merge_deg: float = 10.0) -> list:
    """Apply thresholds to a cached candidate list (dicts with pi/peak_w/doa_deg),
    collapsing duplicate directions onto the strongest candidate."""
    passing = sorted((c for c in candidates
                      if c["pi"] > pi_thresh and c["peak_w"] > w_thresh),
                     key=lambda c: -c["pi"])
    kept = []
    for c in passing:
        if all(circular_distance_deg(c["doa_deg"], d) > merge_deg for d in kept):
            kept.append(c["doa_deg"])
    return kept


def sweep_threshold(scene_candidates: dict, truths: dict, w_grid,
                    pi_thresh: float = 0.02, tol: float = 10.0) -> dict:
    """Re-score cached per-scene candidate lists at each diffuse-rejection
    threshold; return the F-maximizing threshold (lowest wins ties).

    scene_candidates: scene_id -> list of candidate dicts.
    truths: scene_id -> list of true DoAs in degrees.
    """
    w_grid = list(w_grid)
    if not w_grid:
        raise ValueError("threshold grid must be nonempty")
    per_threshold = {}
    for w in w_grid:
        fs = []
        for sid, cands in scene_candidates.items():
            est = rescore_candidates(cands, pi_thresh, w)
            _, _, f = match_and_score(est, truths[sid], tol)
            fs.append(f)
        per_threshold[w] = float(np.mean(fs)) if fs else 0.0
    best = min(w_grid, key=lambda w: (-per_threshold[w], w))
    return {"best_threshold": best, "per_threshold": per_threshold}
