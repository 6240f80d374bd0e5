"""Command-line pipeline: simulate -> reconstruct -> evaluate -> experiment.

Every run writes a manifest (config echo plus content hashes of its inputs)
so it can be replayed, and all CSV outputs are byte-deterministic for a
given config and seed except the wall-clock runtime column.
"""

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .admm import AdmmConfig, history_to_csv, init_admm_state, run_admm
from .basis import (BasisSpec, FBCoeffs, build_basis_spec, build_quadrature,
                    synthesize_image)
from .em import EmConfig, run_em
from .em import history_to_csv as em_history_to_csv
from .errors import ConfigError, SolverError
from .metrics import (TrialReport, joint_alignment, relative_error,
                      reports_to_csv, snr_db, success_rate,
                      total_variation_dist, variance_for_snr)
from .moments import empirical_moments
from .sim import (ViewDistribution, build_line_grid, bump_distribution,
                  generate_batch, load_batch, random_phantom, save_batch,
                  two_bump_distribution, uniform_distribution)
from .spectral import noise_covariance, transform_batch

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "run",
    "phantom": {"c": 0.3, "R": 16.0, "decay": 1.0, "seed": 11, "scale": 1.0},
    "distribution": {"family": "bump", "n_theta": 24, "loc": 1.1,
                     "kappa": 2.5, "loc2": 4.0, "weight": 0.5},
    "acquisition": {"N": 10000, "K": 6, "alpha_deg": 1.5, "L": 32,
                    "sigma2": 0.0, "target_snr_db": None},
    "solver": {"method": "admm", "lambda1": 1.0, "lambda2": 0.5, "rho": 1.0,
               "admm_iters": 500, "em_iters": 100,
               "hybrid_admm_iters": 100, "hybrid_em_iters": 50,
               "n_xi": 64, "pinv_cutoff": 1e-10},
    "experiment": {"snrs_db": [6.6, -4.4], "trials": 10,
                   "methods": ["admm", "em", "admm+em"],
                   "success_threshold": 0.3},
}

_METHODS = ("admm", "em", "admm+em")


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path=None, seed=None, out=None, method=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _deep_merge(cfg, json.load(fh))
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = out
    if method is not None:
        cfg["solver"]["method"] = method
    if cfg["solver"]["method"] not in _METHODS:
        raise ConfigError(f"unknown method {cfg['solver']['method']!r}; "
                          f"choose from {_METHODS}")
    return cfg


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, cfg, inputs, outputs, extra=None):
    manifest = {
        "command": command,
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest["extra"] = extra
    path = Path(out_dir) / f"manifest_{command}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_pgm(path, image):
    """8-bit binary PGM with min/max normalization; returns (lo, hi)."""
    img = np.asarray(image, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(img)
    data = scaled.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    return lo, hi


def save_coeff_file(path, coeffs, p, meta=None):
    """Shared truth/estimate format: one JSON header line, then the complex
    coefficient payload and the distribution, both little-endian."""
    header = {
        "c": coeffs.spec.c,
        "R": coeffs.spec.R,
        "n_a": coeffs.spec.n_a,
        "n_theta": int(p.n_theta),
        "real_symmetric": bool(coeffs.real_symmetric),
    }
    if meta:
        header["meta"] = meta
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(coeffs.values, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(p.p, dtype="<f8").tobytes())


def load_coeff_file(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        spec = build_basis_spec(header["c"], header["R"])
        if spec.n_a != header["n_a"]:
            raise ConfigError(f"basis rebuilt from {path} has {spec.n_a} "
                              f"functions, header says {header['n_a']}")
        vals = np.frombuffer(fh.read(16 * spec.n_a), dtype="<c16").copy()
        p = np.frombuffer(fh.read(8 * header["n_theta"]), dtype="<f8").copy()
    coeffs = FBCoeffs(values=vals, spec=spec,
                      real_symmetric=header["real_symmetric"])
    dist = ViewDistribution(p=np.maximum(p, 0.0) / max(p.sum(), 1e-300),
                            n_theta=header["n_theta"])
    return coeffs, dist, header.get("meta", {})


def _build_problem(cfg):
    ph = cfg["phantom"]
    spec = build_basis_spec(ph["c"], ph["R"])
    truth = random_phantom(spec, ph["decay"], seed=ph["seed"])
    if ph.get("scale", 1.0) != 1.0:
        truth = FBCoeffs(values=ph["scale"] * truth.values, spec=spec,
                         real_symmetric=truth.real_symmetric)
    d = cfg["distribution"]
    family = d["family"]
    if family == "bump":
        p = bump_distribution(d["n_theta"], d["loc"], d["kappa"])
    elif family == "two_bump":
        p = two_bump_distribution(d["n_theta"], d["loc"], d["loc2"],
                                  d["kappa"], d.get("weight", 0.5))
    elif family == "uniform":
        p = uniform_distribution(d["n_theta"])
    else:
        raise ConfigError(f"unknown distribution family {family!r}")
    return spec, truth, p


def _resolve_sigma2(cfg, truth, p, grid, quad):
    acq = cfg["acquisition"]
    target = acq.get("target_snr_db")
    if target is None:
        return float(acq["sigma2"]), None
    clean = generate_batch(truth, p, acq["N"], acq["K"],
                           math.radians(acq["alpha_deg"]), 0.0, grid, quad,
                           seed=cfg["seed"])
    var = float(clean.samples.var())
    return variance_for_snr(var, float(target)), var


def cmd_simulate(cfg, out_dir):
    spec, truth, p = _build_problem(cfg)
    acq = cfg["acquisition"]
    grid = build_line_grid(acq["L"])
    quad = build_quadrature(spec.c, cfg["solver"]["n_xi"])
    sigma2, clean_var = _resolve_sigma2(cfg, truth, p, grid, quad)
    batch = generate_batch(truth, p, acq["N"], acq["K"],
                           math.radians(acq["alpha_deg"]), sigma2, grid, quad,
                           seed=cfg["seed"])
    if clean_var is None:
        noiseless = batch.samples if sigma2 == 0 else None
        if noiseless is None:
            clean = generate_batch(truth, p, acq["N"], acq["K"],
                                   math.radians(acq["alpha_deg"]), 0.0, grid,
                                   quad, seed=cfg["seed"])
            clean_var = float(clean.samples.var())
        else:
            clean_var = float(noiseless.var())
    achieved = snr_db(clean_var, sigma2)

    out_dir.mkdir(parents=True, exist_ok=True)
    batch_path = out_dir / "batch.dat"
    truth_path = out_dir / "truth.dat"
    save_batch(batch, batch_path)
    save_coeff_file(truth_path, truth, p,
                    meta={"kind": "truth", "sigma2": sigma2})
    manifest = _write_manifest(
        out_dir, "simulate", cfg, [], [batch_path, truth_path],
        extra={"sigma2": sigma2, "snr_db": achieved,
               "clean_variance": clean_var})
    print(f"wrote {batch_path} ({batch.N} records), SNR = "
          f"{achieved:.2f} dB, sigma2 = {sigma2:.6g}")
    return [batch_path, truth_path, manifest]


def _random_start(features, spec, n_theta, seed):
    """One shared random starting point per trial; both solver families
    consume it so method comparisons are apples to apples."""
    state = init_admm_state(features, AdmmConfig(seed=seed), spec, n_theta)
    return state


def _init_hash(state):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(state.a).tobytes())
    h.update(np.ascontiguousarray(state.p).tobytes())
    return h.hexdigest()


def _run_method(method, features, spec_batch, noise, spec, n_theta, cfg,
                seed, out_dir=None, tag=""):
    sol = cfg["solver"]
    state = _random_start(features, spec, n_theta, seed)
    start_hash = _init_hash(state)
    histories = []
    t0 = time.perf_counter()
    if method == "admm":
        admm_cfg = AdmmConfig(lam1=sol["lambda1"], lam2=sol["lambda2"],
                              rho=sol["rho"], max_iter=sol["admm_iters"],
                              seed=seed)
        res = run_admm(features, admm_cfg, spec, n_theta, state=state)
        a, p = res.a, res.p
        histories.append(("admm", res.history))
    elif method == "em":
        em_cfg = EmConfig(max_iter=sol["em_iters"],
                          pinv_cutoff=sol["pinv_cutoff"], seed=seed)
        init_a = FBCoeffs(values=state.a, spec=spec, real_symmetric=False)
        init_p = ViewDistribution(p=state.p, n_theta=n_theta)
        res = run_em(spec_batch, init_a, init_p, noise, em_cfg)
        a, p = res.a, res.p
        histories.append(("em", res.history))
    elif method == "admm+em":
        admm_cfg = AdmmConfig(lam1=sol["lambda1"], lam2=sol["lambda2"],
                              rho=sol["rho"],
                              max_iter=sol["hybrid_admm_iters"], seed=seed)
        res1 = run_admm(features, admm_cfg, spec, n_theta, state=state)
        em_cfg = EmConfig(max_iter=sol["hybrid_em_iters"],
                          pinv_cutoff=sol["pinv_cutoff"], seed=seed)
        res2 = run_em(spec_batch, res1.a, res1.p, noise, em_cfg)
        a, p = res2.a, res2.p
        histories.append(("admm", res1.history))
        histories.append(("em", res2.history))
    else:
        raise ConfigError(f"unknown method {method!r}")
    runtime = time.perf_counter() - t0

    if out_dir is not None:
        for kind, hist in histories:
            path = out_dir / f"{tag}{kind}_history.csv"
            if kind == "admm":
                history_to_csv(hist, path)
            else:
                em_history_to_csv(hist, path)
    return a, p, runtime, start_hash


def cmd_reconstruct(batch_path, cfg, out_dir, truth_path=None):
    batch_path = Path(batch_path)
    if not batch_path.exists():
        raise ConfigError(f"batch file not found: {batch_path}")
    batch = load_batch(batch_path)
    spec = build_basis_spec(cfg["phantom"]["c"], cfg["phantom"]["R"])
    quad = build_quadrature(spec.c, cfg["solver"]["n_xi"])
    n_theta = batch.n_theta
    method = cfg["solver"]["method"]

    spec_batch = transform_batch(batch, quad)
    noise = noise_covariance(batch.sigma2, batch.grid, quad, batch.K)
    features = empirical_moments(spec_batch, noise)
    if method in ("em", "admm+em") and batch.sigma2 <= 0:
        raise ConfigError("EM needs a noisy batch; sigma2 = 0 has no "
                          "likelihood model")

    out_dir.mkdir(parents=True, exist_ok=True)
    a, p, runtime, start_hash = _run_method(
        method, features, spec_batch, noise, spec, n_theta, cfg,
        cfg["seed"], out_dir=out_dir)

    est_path = out_dir / "estimate.dat"
    debiased = max(float(batch.samples.var()) - batch.sigma2,
                   np.finfo(float).tiny)
    achieved = snr_db(debiased, batch.sigma2) if batch.sigma2 > 0 else math.inf
    save_coeff_file(est_path, a, p, meta={
        "kind": "estimate", "method": method, "seed": cfg["seed"],
        "runtime_s": runtime, "snr_db": achieved, "init_sha256": start_hash})

    img = synthesize_image(a.symmetrized(), int(round(2 * spec.R)))
    pgm_path = out_dir / "reconstruction.pgm"
    lo, hi = write_pgm(pgm_path, img)

    outputs = sorted(out_dir.glob("*history.csv")) + [est_path, pgm_path]
    extra = {"method": method, "runtime_s": runtime,
             "pgm_normalization": [lo, hi], "init_sha256": start_hash}
    if truth_path is not None:
        truth_a, truth_p, _ = load_coeff_file(truth_path)
        re, gamma = relative_error(truth_a, a, 10 * n_theta)
        tv, shift = total_variation_dist(truth_p, p)
        extra.update({"re": re, "tv": tv})
        print(f"method={method} RE={re:.6g} TV={tv:.6g} "
              f"(rotation {gamma:.4f} rad, shift {shift})")
    manifest = _write_manifest(out_dir, "reconstruct", cfg, [batch_path],
                               outputs, extra=extra)
    print(f"wrote {est_path} in {runtime:.1f}s")
    return outputs + [manifest]


def cmd_evaluate(truth_path, estimate_path, out_dir):
    for p in (truth_path, estimate_path):
        if not Path(p).exists():
            raise ConfigError(f"input not found: {p}")
    truth_a, truth_p, _ = load_coeff_file(truth_path)
    est_a, est_p, meta = load_coeff_file(estimate_path)
    n_theta = truth_p.n_theta

    re, gamma = relative_error(truth_a, est_a, 10 * n_theta)
    tv, shift = total_variation_dist(truth_p, est_p)
    re_joint, tv_joint, l_joint = joint_alignment(truth_a, est_a,
                                                  truth_p, est_p)
    report = TrialReport(
        method=meta.get("method", "unknown"),
        snr_db=float(meta.get("snr_db", math.nan)),
        re=re, tv=tv, aligned_rotation=gamma, aligned_shift=shift,
        success=re <= 0.3, seed=int(meta.get("seed", -1)),
        runtime=float(meta.get("runtime_s", 0.0)))

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    reports_to_csv([report], csv_path)

    size = int(round(2 * truth_a.spec.R))
    lo_t, hi_t = write_pgm(out_dir / "truth.pgm",
                           synthesize_image(truth_a.symmetrized(), size))
    aligned = est_a.rotated(gamma).symmetrized()
    lo_e, hi_e = write_pgm(out_dir / "estimate_aligned.pgm",
                           synthesize_image(aligned, size))
    manifest = _write_manifest(
        out_dir, "evaluate", {}, [truth_path, estimate_path],
        [csv_path, out_dir / "truth.pgm", out_dir / "estimate_aligned.pgm"],
        extra={"re": re, "tv": tv,
               "joint_alignment": {"re": re_joint, "tv": tv_joint,
                                   "shift": l_joint},
               "pgm_normalization": {"truth": [lo_t, hi_t],
                                     "estimate": [lo_e, hi_e]}})
    print(f"RE={re:.6g} TV={tv:.6g} joint(RE={re_joint:.6g}, "
          f"TV={tv_joint:.6g}, shift={l_joint})")
    return [csv_path, manifest]


def _experiment_trial(cfg, spec, truth, p, snr_target, trial):
    """One (snr, trial) cell: one batch, one shared init, every method."""
    acq = cfg["acquisition"]
    grid = build_line_grid(acq["L"])
    quad = build_quadrature(spec.c, cfg["solver"]["n_xi"])
    alpha = math.radians(acq["alpha_deg"])
    seed = cfg["seed"] + trial

    clean = generate_batch(truth, p, acq["N"], acq["K"], alpha, 0.0, grid,
                           quad, seed=seed)
    var = float(clean.samples.var())
    sigma2 = variance_for_snr(var, snr_target)
    batch = generate_batch(truth, p, acq["N"], acq["K"], alpha, sigma2, grid,
                           quad, seed=seed)
    achieved = snr_db(var, sigma2)

    spec_batch = transform_batch(batch, quad)
    noise = noise_covariance(sigma2, grid, quad, acq["K"])
    features = empirical_moments(spec_batch, noise)

    n_theta = p.n_theta
    reports, hashes = [], {}
    for method in cfg["experiment"]["methods"]:
        a, pd, runtime, start_hash = _run_method(
            method, features, spec_batch, noise, spec, n_theta, cfg, seed)
        hashes[method] = start_hash
        re, gamma = relative_error(truth, a, 10 * n_theta)
        tv, shift = total_variation_dist(p, pd)
        reports.append(TrialReport(
            method=method, snr_db=achieved, re=re, tv=tv,
            aligned_rotation=gamma, aligned_shift=shift,
            success=re <= cfg["experiment"]["success_threshold"],
            seed=seed, runtime=runtime))
    return reports, hashes


def cmd_experiment(cfg, out_dir, threads=1):
    spec, truth, p = _build_problem(cfg)
    exp = cfg["experiment"]
    cells = [(snr, t) for snr in exp["snrs_db"] for t in range(exp["trials"])]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda cell: _experiment_trial(cfg, spec, truth, p, *cell),
                cells))
    else:
        results = [_experiment_trial(cfg, spec, truth, p, *cell)
                   for cell in cells]

    out_dir.mkdir(parents=True, exist_ok=True)
    all_reports = [r for reports, _ in results for r in reports]
    trials_path = out_dir / "trial_reports.csv"
    reports_to_csv(all_reports, trials_path)

    methods = list(exp["methods"])
    agg_rows = []
    header = ["snr_db"]
    for m in methods:
        key = m.replace("+", "_")
        header += [f"mean_re_{key}", f"std_re_{key}", f"mean_tv_{key}",
                   f"std_tv_{key}", f"success_rate_{key}"]
    agg_rows.append(",".join(header))
    for i, snr in enumerate(exp["snrs_db"]):
        cell_reports = [r for (s, _), (reports, _) in zip(cells, results)
                        if s == snr for r in reports]
        row = [f"{snr:.17g}"]
        for m in methods:
            rs = [r for r in cell_reports if r.method == m]
            res = np.array([r.re for r in rs])
            tvs = np.array([r.tv for r in rs])
            row += [f"{res.mean():.17g}", f"{res.std():.17g}",
                    f"{tvs.mean():.17g}", f"{tvs.std():.17g}",
                    f"{success_rate(rs, exp['success_threshold']):.17g}"]
        agg_rows.append(",".join(row))
    agg_path = out_dir / "aggregate.csv"
    with open(agg_path, "w") as fh:
        fh.write("\n".join(agg_rows) + "\n")

    init_hashes = [hashes for _, hashes in results]
    shared = all(len(set(h.values())) == 1 for h in init_hashes if h)
    manifest = _write_manifest(
        out_dir, "experiment", cfg, [], [trials_path, agg_path],
        extra={"init_hashes": init_hashes, "shared_inits": shared})
    print(f"wrote {trials_path} ({len(all_reports)} rows) and {agg_path}; "
          f"shared inits per trial: {shared}")
    return [trials_path, agg_path, manifest]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tiltrec",
        description="Recover an image and its view-angle distribution "
                    "from projection tilt series.")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config; missing keys fall back to defaults")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", type=str, default=None,
                        help="output directory (default from config)")
    parser.add_argument("--method", type=str, default=None,
                        choices=_METHODS, help="solver for reconstruct")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for experiment trials")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="generate a batch and its ground truth")
    rec = sub.add_parser("reconstruct", help="solve from a saved batch")
    rec.add_argument("batch", type=str)
    rec.add_argument("--truth", type=str, default=None,
                     help="optional truth file; prints RE/TV when given")
    ev = sub.add_parser("evaluate", help="score an estimate against truth")
    ev.add_argument("truth", type=str)
    ev.add_argument("estimate", type=str)
    sub.add_parser("experiment", help="trial matrix over SNRs and methods")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out,
                          method=args.method)
        out_dir = Path(cfg["out"])
        if args.command == "simulate":
            cmd_simulate(cfg, out_dir)
        elif args.command == "reconstruct":
            cmd_reconstruct(args.batch, cfg, out_dir, truth_path=args.truth)
        elif args.command == "evaluate":
            cmd_evaluate(args.truth, args.estimate, out_dir)
        elif args.command == "experiment":
            cmd_experiment(cfg, out_dir, threads=max(1, args.threads))
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
