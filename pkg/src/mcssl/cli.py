"""Command-line entry point: simulate | localize | evaluate | gradcheck | report.

Every subcommand accepts --config pointing at a JSON file (default taken
from $MCSSL_CONFIG); explicit flags override file values, and the fully
resolved configuration is printed before the run. Exit codes: 0 ok,
1 usage, 2 runtime failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import baselines, report as report_mod
from .arrays import ArrayGeometry, DirectionGrid, build_field
from .dsp import read_wav, stft
from .evaluate import ScoreReport, score_scene, sweep_threshold
from .inference import count_sources, localize
from .simulate import DatasetTemplate, make_dataset
from .variational import FitConfig, Priors, fit, gradient_check

CONFIG_ENV = "MCSSL_CONFIG"

SIMULATE_DEFAULTS = {
    "n": 20, "mics": 6, "condition": "all-active", "seed": 0,
    "rt60_min": 0.2, "rt60_max": 0.4, "min_sep": 20.0, "snr_db": 20.0,
    "duration": 1.0, "sample_rate": 16000, "grid_bins": 72,
    "sources_min": 2, "sources_max": 3, "active_min": 2, "active_max": 3,
}

LOCALIZE_DEFAULTS = {
    "method": "vi", "window": 512, "hop": 160, "fmin": 100.0, "fmax": 7600.0,
    "k": 4, "iters": 600, "lr": 0.05, "n_mc": 1, "seed": 0, "eps": 0.05,
    "alpha0": 0.01, "sigma0": 1.0, "pi_thresh": 0.02, "w_thresh": 0.1,
    "init": "beam-power", "fix_pi": False, "n_src": None, "max_peaks": None,
    "rel_thresh": 0.5, "dump_spectrum": False, "jobs": 1, "grid_bins": 72,
}

EVALUATE_DEFAULTS = {"tol": 10.0, "pi_thresh": 0.02, "sweep": None}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write_json(path: Path, doc: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    os.replace(tmp, path)


def resolve_config(defaults: dict, args: argparse.Namespace) -> dict:
    """Layer: built-in defaults < config file < explicit flags."""
    cfg = dict(defaults)
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if config_path:
        with open(config_path) as f:
            file_cfg = json.load(f)
        for k, v in file_cfg.items():
            if k in cfg:
                cfg[k] = v
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _print_config(name: str, cfg: dict) -> None:
    print(f"[{name}] resolved config: {json.dumps(cfg, sort_keys=True)}")


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    cfg = resolve_config(SIMULATE_DEFAULTS, args)
    _print_config("simulate", cfg)
    template = DatasetTemplate(
        condition=cfg["condition"], n_mics=int(cfg["mics"]),
        n_sources=(int(cfg["sources_min"]), int(cfg["sources_max"])),
        n_active=(int(cfg["active_min"]), int(cfg["active_max"])),
        min_separation_deg=float(cfg["min_sep"]),
        rt60_range=(float(cfg["rt60_min"]), float(cfg["rt60_max"])),
        snr_db=float(cfg["snr_db"]), duration=float(cfg["duration"]),
        sample_rate=int(cfg["sample_rate"]), grid_bins=int(cfg["grid_bins"]))
    manifest = make_dataset(template, int(cfg["n"]), args.out, int(cfg["seed"]))
    print(f"wrote {manifest['n_scenes']} scenes to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# localize

def _music_n_src(M: int, override) -> int:
    if override is not None:
        return int(override)
    return {2: 1, 4: 2, 6: 3}.get(M, max(1, min(3, M - 1)))


def localize_scene(wav_path, scene_id: str, truth: dict | None, cfg: dict) -> dict:
    wave = read_wav(wav_path)
    X = stft(wave, int(cfg["window"]), int(cfg["hop"]))
    D = int(truth.get("grid_bins", cfg["grid_bins"]) if truth else cfg["grid_bins"])
    geom = ArrayGeometry.circular(wave.channels)
    field = build_field(geom, DirectionGrid(D), X.freqs())
    method = cfg["method"]
    out = {"scene_id": scene_id, "method": method}

    if method == "vi":
        priors = Priors(alpha0=float(cfg["alpha0"]), sigma0=float(cfg["sigma0"]))
        fit_cfg = FitConfig(
            iters=int(cfg["iters"]), lr=float(cfg["lr"]), n_mc=int(cfg["n_mc"]),
            seed=int(cfg["seed"]), eps=float(cfg["eps"]),
            init_mode=cfg["init"], n_components=int(cfg["k"]),
            fmin=float(cfg["fmin"]), fmax=float(cfg["fmax"]),
            fix_pi=bool(cfg["fix_pi"]))
        result = fit(X, field, priors, fit_cfg)
        loc = localize(result.params, float(cfg["pi_thresh"]), float(cfg["w_thresh"]))
        out.update(loc.to_dict())
        out["est_doas_deg"] = loc.active_doas()
        out["est_count"] = count_sources(loc)
        out["elbo_trace"] = result.elbo_trace
    elif method in ("music", "srp"):
        if method == "music":
            n_src = _music_n_src(wave.channels, cfg["n_src"])
            spec = baselines.music_spectrum(X, field, n_src,
                                            float(cfg["fmin"]), float(cfg["fmax"]))
            max_peaks = int(cfg["max_peaks"]) if cfg["max_peaks"] is not None else n_src
        else:
            spec = baselines.srp_phat(X, field, float(cfg["fmin"]), float(cfg["fmax"]))
            max_peaks = int(cfg["max_peaks"]) if cfg["max_peaks"] is not None else 3
        peaks = baselines.peak_pick(spec, max_peaks, float(cfg["rel_thresh"]))
        step = 360.0 / D
        out["est_doas_deg"] = [p * step for p in peaks]
        out["est_count"] = len(peaks)
        if cfg["dump_spectrum"]:
            out["spectrum"] = spec.values.tolist()
    else:
        raise UsageError(f"unknown method {method!r}")
    return out


def _scene_list(path: Path) -> tuple:
    """Resolve a manifest path / dataset dir / single WAV into scene entries."""
    if path.is_dir():
        path = path / "manifest.json"
    if path.suffix == ".json":
        with open(path) as f:
            manifest = json.load(f)
        base = path.parent
        scenes = []
        for entry in manifest["scenes"]:
            truth_path = base / entry["truth"]
            with open(truth_path) as f:
                truth = json.load(f)
            truth.setdefault("grid_bins", manifest.get("grid_bins", 72))
            scenes.append((base / entry["wav"], entry["scene_id"], truth))
        return scenes
    if path.suffix == ".wav":
        return [(path, path.stem, None)]
    raise UsageError(f"cannot interpret scene path {path}")


def _localize_one(job):
    wav_path, scene_id, truth, cfg, scene_seed = job
    cfg = dict(cfg, seed=scene_seed)
    try:
        return scene_id, localize_scene(wav_path, scene_id, truth, cfg)
    except (OSError, ValueError) as e:
        return scene_id, {"scene_id": scene_id, "method": cfg["method"],
                          "error": str(e)}


def cmd_localize(args) -> int:
    cfg = resolve_config(LOCALIZE_DEFAULTS, args)
    _print_config("localize", cfg)
    scenes = _scene_list(Path(args.scenes))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, (wav_path, scene_id, truth) in enumerate(scenes):
        scene_seed = int(np.random.SeedSequence([int(cfg["seed"]), i]).generate_state(1)[0])
        jobs.append((wav_path, scene_id, truth, cfg, scene_seed))
    n_workers = int(cfg["jobs"])
    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(_localize_one, jobs))
    else:
        results = [_localize_one(j) for j in jobs]
    n_err = 0
    for scene_id, doc in results:
        if "error" in doc:
            n_err += 1
            print(f"scene {scene_id}: error: {doc['error']}", file=sys.stderr)
        _atomic_write_json(out_dir / f"{scene_id}.{cfg['method']}.json", doc)
    print(f"localized {len(results) - n_err}/{len(results)} scenes "
          f"({cfg['method']}) into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _parse_sweep(text):
    if text is None:
        return None
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        return [round(start + i * step, 10)
                for i in range(int(round((stop - start) / step)) + 1)]
    return [float(v) for v in text.split(",")]


def cmd_evaluate(args) -> int:
    cfg = resolve_config(EVALUATE_DEFAULTS, args)
    _print_config("evaluate", cfg)
    scenes = _scene_list(Path(args.truth))
    results_dir = Path(args.results)
    out_dir = Path(args.out) if args.out else results_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    scored, missing = [], []
    cached_candidates, truths = {}, {}
    for wav_path, scene_id, truth in scenes:
        matches = sorted(results_dir.glob(f"{scene_id}.*.json"))
        if not matches:
            missing.append(scene_id)
            continue
        for rp in matches:
            with open(rp) as f:
                doc = json.load(f)
            if "error" in doc:
                missing.append(scene_id)
                continue
            scored.append(score_scene(
                scene_id, doc["method"], truth["n_mics"], doc["est_doas_deg"],
                truth["doas_deg"], float(cfg["tol"])))
            if "candidates" in doc:
                cached_candidates[scene_id] = doc["candidates"]
                truths[scene_id] = truth["doas_deg"]

    rep = ScoreReport(scored, float(cfg["tol"]), missing)
    _atomic_write_json(out_dir / "report.json", rep.to_dict())
    rep.write_csv(out_dir / "report.csv")
    print(f"mean F = {rep.mean_f():.4f} over {len(scored)} scored scenes "
          f"({len(missing)} missing)")

    grid = _parse_sweep(cfg["sweep"])
    if grid and cached_candidates:
        sweep = sweep_threshold(cached_candidates, truths, grid,
                                float(cfg["pi_thresh"]), float(cfg["tol"]))
        _atomic_write_json(out_dir / "sweep.json", sweep)
        print(f"best indicator threshold {sweep['best_threshold']} "
              f"(F = {sweep['per_threshold'][sweep['best_threshold']]:.4f})")
    return 0


# ---------------------------------------------------------------------------
# gradcheck / report

def cmd_gradcheck(args) -> int:
    result = gradient_check(seed=args.seed, n_configs=args.configs,
                            corrupt=args.corrupt_gradient)
    print(f"{'field':<14}{'max rel error':>14}  status")
    for name, err in result["max_rel_error"].items():
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:<14}{err:>14.3e}  {status}")
    if not result["passed"]:
        print("gradient check FAILED", file=sys.stderr)
        return 3
    print("gradient check passed")
    return 0


def cmd_report(args) -> int:
    written = report_mod.render_report_dir(args.eval, args.results, args.out)
    for p in written:
        print(f"wrote {p}")
    if not written:
        print("nothing to render", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="mcssl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="render a simulated dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--n", type=int)
    sp.add_argument("--mics", type=int)
    sp.add_argument("--condition", choices=["all-active", "some-silent"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--rt60-min", dest="rt60_min", type=float)
    sp.add_argument("--rt60-max", dest="rt60_max", type=float)
    sp.add_argument("--min-sep", dest="min_sep", type=float)
    sp.add_argument("--snr-db", dest="snr_db", type=float)
    sp.add_argument("--duration", type=float)
    sp.add_argument("--sources-min", dest="sources_min", type=int)
    sp.add_argument("--sources-max", dest="sources_max", type=int)
    sp.add_argument("--active-min", dest="active_min", type=int)
    sp.add_argument("--active-max", dest="active_max", type=int)
    sp.set_defaults(func=cmd_simulate)

    lp = sub.add_parser("localize", help="estimate DoAs per scene")
    lp.add_argument("--scenes", required=True,
                    help="manifest JSON, dataset directory, or single WAV")
    lp.add_argument("--out", required=True)
    lp.add_argument("--config")
    lp.add_argument("--method", choices=["vi", "music", "srp"])
    lp.add_argument("--k", type=int)
    lp.add_argument("--iters", type=int)
    lp.add_argument("--lr", type=float)
    lp.add_argument("--n-mc", dest="n_mc", type=int)
    lp.add_argument("--seed", type=int)
    lp.add_argument("--eps", type=float)
    lp.add_argument("--alpha0", type=float)
    lp.add_argument("--sigma0", type=float)
    lp.add_argument("--pi-thresh", dest="pi_thresh", type=float)
    lp.add_argument("--w-thresh", dest="w_thresh", type=float)
    lp.add_argument("--init", choices=["beam-power", "random"])
    lp.add_argument("--fix-pi", dest="fix_pi", action="store_const", const=True)
    lp.add_argument("--n-src", dest="n_src", type=int)
    lp.add_argument("--max-peaks", dest="max_peaks", type=int)
    lp.add_argument("--rel-thresh", dest="rel_thresh", type=float)
    lp.add_argument("--fmin", type=float)
    lp.add_argument("--fmax", type=float)
    lp.add_argument("--dump-spectrum", dest="dump_spectrum",
                    action="store_const", const=True)
    lp.add_argument("--jobs", type=int)
    lp.set_defaults(func=cmd_localize)

    ep = sub.add_parser("evaluate", help="score localization results")
    ep.add_argument("--results", required=True)
    ep.add_argument("--truth", required=True,
                    help="manifest JSON or dataset directory")
    ep.add_argument("--out")
    ep.add_argument("--config")
    ep.add_argument("--tol", type=float)
    ep.add_argument("--pi-thresh", dest="pi_thresh", type=float)
    ep.add_argument("--sweep", help="start:stop:step or comma list of thresholds")
    ep.set_defaults(func=cmd_evaluate)

    gp = sub.add_parser("gradcheck", help="verify ELBO gradients")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--configs", type=int, default=10)
    gp.add_argument("--corrupt-gradient", action="store_true",
                    help=argparse.SUPPRESS)  # negative-control test hook
    gp.set_defaults(func=cmd_gradcheck)

    rp = sub.add_parser("report", help="render figures from evaluation output")
    rp.add_argument("--eval", required=True)
    rp.add_argument("--results")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
