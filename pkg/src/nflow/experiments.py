"""Named experiment recipes with reproducible artifacts.

Each recipe consumes a key-value config (JSON file), writes CSV/JSON
artifacts plus a manifest (config hash, package versions, wall time,
artifact content hashes) into the output directory, and returns a process
exit status.  Identical config + seed produce byte-identical CSV output;
sweep points are dispatched to a worker pool and merged in sorted key
order.
"""

import concurrent.futures
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import construction, energy_analysis, fields, flow, gridmaps, manifold
from .bubbles import decompose, neck_oscillation_profile, synthetic_shrinker_trajectory

EXPERIMENTS = ("flow", "blowup-sweep", "bubble-analyze", "construct", "width", "checks")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        return json.load(fh)


def write_manifest(out_dir, experiment, config, seed, wall_time, artifacts):
    import numpy
    import scipy
    versions = {"python": sys.version.split()[0], "numpy": numpy.__version__,
                "scipy": scipy.__version__}
    try:
        import numba
        versions["numba"] = numba.__version__
    except ImportError:
        pass
    from . import __version__
    versions["nflow"] = __version__
    manifest = {
        "experiment": experiment,
        "config_sha256": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "versions": versions,
        "wall_time_s": wall_time,
        "artifacts": {os.path.basename(p): _sha256(p) for p in sorted(artifacts)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def build_initial_profile(section: dict):
    """Profile + FlowConfig from the `flow` config section."""
    n = int(section.get("n", 3))
    num_cells = int(section.get("num_cells", 1024))
    grid_kind = section.get("grid", "uniform")
    if grid_kind == "blowup":
        grid = flow.blowup_grid(num_cells,
                                floor_spacing=float(section.get("floor_spacing", 6e-5)))
    elif grid_kind == "uniform":
        r_max = float(section.get("r_max", math.pi))
        grid = fields.uniform_grid(num_cells, r_max)
    else:
        raise ConfigError(f"unknown grid kind {grid_kind!r}")
    family = section.get("family", "over_the_pole")
    if family == "over_the_pole":
        prof = flow.over_the_pole_profile(grid, float(section.get("amplitude", 1.5)),
                                          section.get("ramp_width"), n=n)
    elif family == "small":
        prof = flow.small_amplitude_profile(grid, float(section.get("amplitude", 0.1)))
    elif family == "identity":
        prof = flow.identity_profile(grid)
    elif family == "bubble":
        prof = flow.bubble_profile(grid, float(section.get("lambda", 1.0)))
    else:
        raise ConfigError(f"unknown initial family {family!r}")
    cfg_fields = {k: section[k] for k in (
        "dt_init", "dt_min", "eps_reg", "cfl_safety", "blowup_grad_threshold",
        "snapshot_stride", "max_time", "tol_stationary", "r_min") if k in section}
    cfg = flow.FlowConfig(n=n, domain_kind=prof.domain_kind, num_cells=num_cells,
                          **cfg_fields)
    return prof, cfg


def write_trajectory_csv(traj, out_dir, stem="snapshots"):
    """Streamed snapshot CSV (t, rho, h) plus the energy/dissipation series."""
    snap_path = os.path.join(out_dir, f"{stem}.csv")
    with open(snap_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rho", "h"])
        for s in traj.snapshots:
            for rho, h in zip(s.profile.grid, s.profile.values):
                w.writerow([_fmt(s.time), _fmt(rho), _fmt(h)])
    series_path = os.path.join(out_dir, "energy.csv")
    with open(series_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy", "dissipation", "scale"])
        scales = traj.scale_series()
        for t, e, d, r in zip(traj.times, traj.energy, traj.dissipation, scales):
            w.writerow([_fmt(t), _fmt(e), _fmt(d), _fmt(r)])
    return [snap_path, series_path]


def run_flow_experiment(config, out_dir, seed, jobs):
    prof, cfg = build_initial_profile(config.get("flow", {}))
    traj = flow.run(prof, cfg)
    artifacts = write_trajectory_csv(traj, out_dir)
    event = flow.detect_blowup(traj)
    events_path = os.path.join(out_dir, "events.json")
    with open(events_path, "w") as fh:
        json.dump({"status": traj.status,
                   "event": None if event is None else event.to_dict()}, fh, indent=2)
    artifacts.append(events_path)
    return artifacts


def _sweep_point(args):
    base, n, amplitude = args
    section = dict(base)
    section["n"] = n
    section["amplitude"] = amplitude
    section.setdefault("family", "over_the_pole")
    prof, cfg = build_initial_profile(section)
    traj = flow.run(prof, cfg)
    event = flow.detect_blowup(traj)
    scales = traj.scale_series()
    row = {
        "n": n, "amplitude": amplitude, "status": traj.status,
        "t_end": float(traj.times[-1]),
        "t_max_estimate": None if event is None else event.t_max_estimate,
        "energy_initial": float(traj.energy[0]),
        "energy_final": float(traj.energy[-1]),
        "max_grad_final": float(1.0 / scales[-1]),
        "scale_tail": [float(x) for x in scales[-8:]],
    }
    return (n, amplitude), row


def run_blowup_sweep(config, out_dir, seed, jobs):
    section = config.get("flow", {})
    ns = config.get("sweep", {}).get("n", [3])
    amplitudes = config.get("sweep", {}).get("amplitude", [1.5])
    points = [(section, int(n), float(a)) for n in ns for a in amplitudes]
    if jobs > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_sweep_point, points))
    else:
        results = dict(_sweep_point(p) for p in points)
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "amplitude", "status", "t_end", "t_max_estimate",
                    "energy_initial", "energy_final", "max_grad_final",
                    "scale_tail"])
        for key in sorted(results):
            r = results[key]
            w.writerow([r["n"], _fmt(r["amplitude"]), r["status"], _fmt(r["t_end"]),
                        "" if r["t_max_estimate"] is None else _fmt(r["t_max_estimate"]),
                        _fmt(r["energy_initial"]), _fmt(r["energy_final"]),
                        _fmt(r["max_grad_final"]),
                        ";".join(_fmt(x) for x in r["scale_tail"])])
    return [path]


def run_bubble_analyze(config, out_dir, seed, jobs):
    section = dict(config.get("flow", {}))
    section.setdefault("grid", "blowup")
    section.setdefault("family", "over_the_pole")
    prof, cfg = build_initial_profile(section)
    traj = flow.run(prof, cfg)
    event = flow.detect_blowup(traj)
    bub = config.get("bubble", {})
    decomp = decompose(traj, event,
                       delta=float(bub.get("delta", 2.0 ** -3)),
                       window_factor=float(bub.get("window_factor", 2.0 ** 5))) \
        if event is not None else decompose(traj, None)
    dec_path = os.path.join(out_dir, "decomposition.json")
    with open(dec_path, "w") as fh:
        fh.write(decomp.to_json())
    artifacts = [dec_path]
    if event is not None:
        neck = neck_oscillation_profile(decomp, traj.final.profile, cfg.n)
        shell_path = os.path.join(out_dir, "shells.csv")
        with open(shell_path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in neck.to_csv_rows():
                w.writerow(row)
        artifacts.append(shell_path)
    return artifacts


def run_construct(config, out_dir, seed, jobs):
    section = config.get("construct", {})
    n = int(section.get("n", 3))
    spec = construction.InitialMapSpec(
        n=n, sigma=float(section.get("sigma", 1e-2)),
        radial_cells=int(section.get("radial_cells", 320)))
    cover = construction.CoverModel(
        m=int(section.get("m", max(n + 1, 4))),
        separation=int(section.get("separation", 1)),
        r_u=float(section.get("r_u", 0.1)))
    sigmas = section.get("sigma_sweep", [1e-2, 1e-3, 1e-4])
    sweep = construction.sigma_sweep(spec, cover, sigmas)
    out = {"slope": sweep["slope"], "expected_slope": sweep["expected_slope"],
           "intercept": sweep["intercept"], "rows": sweep["rows"]}
    path = os.path.join(out_dir, "scaling.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
    rows_path = os.path.join(out_dir, "annulus.csv")
    with open(rows_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma", "L", "computed", "formula", "ratio"])
        for r in sweep["rows"]:
            w.writerow([_fmt(r["sigma"]), _fmt(r["L"]), _fmt(r["computed"]),
                        _fmt(r["formula"]), _fmt(r["ratio"])])
    return [path, rows_path]


def run_width(config, out_dir, seed, jobs):
    section = config.get("construct", {})
    n = int(section.get("n", 3))
    spec = construction.InitialMapSpec(
        n=n, sigma=float(section.get("sigma", 1e-2)),
        radial_cells=int(section.get("radial_cells", 320)))
    artifacts = []
    reports = []
    for sep in section.get("separations", [int(section.get("separation", 1))]):
        cover = construction.CoverModel(m=int(section.get("m", max(n + 1, 4))),
                                        separation=int(sep),
                                        r_u=float(section.get("r_u", 0.1)))
        gmap = construction.build_initial_map(spec, cover)
        rep = construction.width_report(spec, cover, gmap)
        rep["energy"] = construction.total_energy_check(spec, cover, gmap)
        reports.append(rep)
    path = os.path.join(out_dir, "width.json")
    with open(path, "w") as fh:
        json.dump(reports, fh, indent=2)
    artifacts.append(path)
    return artifacts


def _check(name, ok, lines):
    lines.append(f"{'ok  ' if ok else 'FAIL'} {name}")
    return ok


def run_checks(config, out_dir, seed, jobs):
    """Fast invariant battery across the modules; exit nonzero on failure."""
    rng = np.random.default_rng(seed)
    lines = []
    ok = True

    v = rng.normal(size=(50, 4))
    p = manifold.sphere_project(v)
    ok &= _check("sphere_project idempotent unit-norm",
                 np.allclose(np.linalg.norm(p, axis=-1), 1.0, atol=1e-12)
                 and np.allclose(manifold.sphere_project(p), p, atol=1e-12), lines)

    path = np.cumsum(rng.uniform(-0.2, 0.2, size=(300, 3)), axis=0)
    lift = manifold.torus_lift(np.mod(path, 1.0))
    ok &= _check("torus lift round trip",
                 np.allclose(np.mod(lift, 1.0), np.mod(path, 1.0), atol=1e-12), lines)

    t = np.linspace(0, 1, 65)
    loop = np.stack([t % 1.0, np.zeros_like(t), np.zeros_like(t)], axis=1)
    ok &= _check("winding loop displacement",
                 np.array_equal(manifold.winding_vector(np.mod(loop, 1.0)), [1, 0, 0]),
                 lines)

    grid = fields.uniform_grid(2048, math.pi)
    e_id = fields.n_energy(flow.identity_profile(grid), 3).total_energy
    ok &= _check("identity-map energy closed form",
                 abs(e_id - fields.identity_map_energy(3)) < 5e-3 * fields.identity_map_energy(3),
                 lines)

    gridb = fields.uniform_grid(1024, 8.0)
    bub = flow.bubble_profile(gridb, 1.0)
    sup = energy_analysis.tension_sup_interior(bub, 3)
    ok &= _check("bubble stationarity", sup < 5e-4, lines)

    rep = energy_analysis.pohozaev_balance(bub, 3, 2.0)
    ok &= _check("pohozaev identity (bubble)", abs(rep.residual) < 5e-3, lines)

    x = rng.uniform(size=(200, 4))
    x = manifold.sphere_project(x - 0.5)
    keep = np.abs(x[..., -1]) < 0.99
    y = construction.stereographic(x[keep], "north")
    ok &= _check("stereographic round trip",
                 np.allclose(construction.stereographic_inverse(y, "north"), x[keep],
                             atol=1e-12), lines)

    xs = np.linspace(0, 1, 10001)
    phi = construction.cutoff_phi(xs)
    ok &= _check("cutoff properties",
                 phi[0] == 0.0 and phi[-1] == 1.0
                 and np.all(np.diff(phi) >= -1e-15)
                 and np.max(construction.cutoff_phi_prime(xs)) <= 2.0 + 1e-12, lines)

    prof = fields.RadialProfile(gridb, 0.3 * np.sin(gridb / 8.0 * math.pi), fields.FLAT_BALL)
    e_all = fields.region_energy(prof, 3, 0.0, 8.0)
    e_parts = sum(fields.region_energy(prof, 3, a, b)
                  for a, b in ((0.0, 1.3), (1.3, 2.9), (2.9, 8.0)))
    ok &= _check("region-energy additivity", abs(e_all - e_parts) < 1e-12 * max(e_all, 1), lines)

    comp = energy_analysis.radial_comparison_map(bub, 3, j=1, t=1.0)
    lap = energy_analysis.radial_n_laplacian(comp.grid, comp.values, 3)
    ok &= _check("comparison map radially n-harmonic",
                 np.max(np.abs(lap[2:-2])) < 1e-2, lines)

    report_path = os.path.join(out_dir, "checks.txt")
    with open(report_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    if not ok:
        raise RuntimeError("invariant checks failed")
    return [report_path]


_RUNNERS = {
    "flow": run_flow_experiment,
    "blowup-sweep": run_blowup_sweep,
    "bubble-analyze": run_bubble_analyze,
    "construct": run_construct,
    "width": run_width,
    "checks": run_checks,
}


def run_experiment(config: dict, out_dir: str, seed: int = 0, jobs: int = 1) -> int:
    """Execute one named experiment; returns a process exit status."""
    name = config.get("experiment")
    if name not in EXPERIMENTS:
        print(json.dumps({"error": f"unknown or missing experiment {name!r}",
                          "known": list(EXPERIMENTS)}), file=sys.stderr)
        return 2
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        print(json.dumps({"error": f"output directory {out_dir} not writable"}),
              file=sys.stderr)
        return 2
    start = time.time()
    try:
        artifacts = _RUNNERS[name](config, out_dir, seed, jobs)
    except (ConfigError, fields.FieldError, manifold.GeometryError) as exc:
        print(json.dumps({"error": str(exc), "experiment": name}), file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(json.dumps({"error": str(exc), "experiment": name}), file=sys.stderr)
        return 1
    write_manifest(out_dir, name, config, seed, time.time() - start, artifacts)
    return 0
