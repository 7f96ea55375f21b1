"""Experiment driver: ``run <config>``, ``list``, ``validate <config>``.

Configs are INI files; keys carry their unit in the name (``T_seconds``,
``radius_length``, ``c0_speed``).  Outputs go to ``$PATLAB_OUTPUT_ROOT``
(default ``./patlab_runs``) joined with ``[experiment] output_dir``.

Exit codes: 0 success, 1 a numerical check failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import difflib
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .medium import MediumRecipe, MediumSpec, build_medium, smooth_bump, validate_medium
from .wave import (InitialState, RadialWaveConfig, WaveConfig, simulate, simulate_radial)
from . import io

OUTPUT_ENV = "PATLAB_OUTPUT_ROOT"

SCENARIOS = {
    "forward": "forward wave run: boundary trace and local energy of the medium",
    "moments": "time moments: zeroth moment vanishes and A u^(k) = c^-2 u^(k-2)",
    "discriminator": "two media with equal boundary data: weighted moment differences vanish against A-harmonic functions",
    "asymptotics": "constant background: u^(1) is the Newtonian potential of c^-2 f, u^(2) is constant; sign regime of the first nonzero boundary moment",
    "spectral": "Dirichlet eigenbasis of c^2 A on B_R0 and recovery of (f, g) from Laplace data",
    "transmission": "interior transmission eigenvalues of two radial media: matching determinant vs DtN scan",
    "decay": "exponential decay of local energy, finite extinction or possible trapping",
}

DEFAULT_TOLERANCES = {
    "eps_mom": 1e-6,
    "eps_sign": 1e-2,
    "eps_trace": 1e-6,
    "eps_harm": 1e-8,
    "eps_eig": 1e-6,
    "eps_te": 5e-2,
    "eps_scan": 1e-1,
    "recursion_max": 5e-2,
    "zeroth_moment_max": 1e-4,
    "discriminator_max": 1e-8,
    "potential_max": 5e-2,
    "ortho_max": 1e-8,
    "recovery_max": 2e-2,
    "root_match_max": 1e-2,
}


class ConfigError(ValueError):
    pass


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": _jsonable(self.value), "limit": _jsonable(self.limit), "passed": self.passed}


@dataclass
class Experiment:
    scenario: str
    seed: int
    output_dir: str
    raw: configparser.ConfigParser
    tolerances: dict
    grid: GridSpec
    media: list[MediumSpec] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def _value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _section(cfg, name) -> dict:
    if not cfg.has_section(name):
        return {}
    return {k: _value(v) for k, v in cfg.items(name)}


def _strip_unit(key: str) -> str:
    for suffix in ("_length", "_seconds", "_speed", "_per_second", "_per_length"):
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.optionxform = str  # keep key case
    try:
        with open(path) as fh:
            cfg.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return cfg


def build_grid(sec: dict) -> GridSpec:
    sec = {_strip_unit(k): v for k, v in sec.items()}
    dim = int(sec.pop("dim", 3))
    n = int(sec.pop("n_cells", 32))
    kw = {k: float(sec.pop(k)) for k in ("R0", "R_omega") if k in sec}
    R_sim = float(sec.pop("R_sim", 3.0))
    if "omega_shape" in sec:
        kw["omega_shape"] = str(sec.pop("omega_shape"))
    if sec:
        raise ConfigError(f"unknown grid keys {sorted(sec)}")
    try:
        return GridSpec.radial(n, R_sim, **kw) if dim == 1 else GridSpec.cube(n, R_sim, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_medium_section(sec: dict, grid: GridSpec) -> MediumSpec:
    sec = {_strip_unit(k): v for k, v in sec.items()}
    kind = sec.pop("kind", "uniform")
    try:
        return build_medium(MediumRecipe(kind, sec), grid)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"medium: {exc}") from exc


def build_initial(sec: dict, m: MediumSpec, seed: int) -> InitialState:
    """Initial-data recipes: zero, poly-bump, smooth-bump, zero-mean, random-bumps, eigenmode."""
    sec = {_strip_unit(k): v for k, v in sec.items()}
    g = m.grid
    kind = sec.pop("kind", "poly-bump")
    radius = float(sec.pop("radius", 1.0))
    center = np.asarray(sec.pop("center", (0.0, 0.0, 0.0)), float)
    power = int(sec.pop("power", 8))
    amp = float(sec.pop("amplitude", 1.0))

    def dist(c):
        if g.dim == 1:
            return g.r
        x, y, z = g.coords
        return np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)

    def poly(c, R):
        d2 = dist(c) ** 2 / R**2
        return np.where(d2 < 1, (1 - d2) ** power, 0.0)

    if kind == "zero":
        f = np.zeros(g.shape)
    elif kind == "poly-bump":
        f = amp * poly(center, radius)
    elif kind == "smooth-bump":
        f = amp * smooth_bump(dist(center), radius)
    elif kind == "zero-mean":
        inner = float(sec.pop("inner_radius", 0.5))
        a = poly(center, inner)
        b = poly(center, radius)
        w = m.weight * g.volumes
        f = amp * (a - np.sum(w * a) / np.sum(w * b) * b)
    elif kind == "random-bumps":
        rng = np.random.default_rng(seed)
        count = int(sec.pop("count", 4))
        f = np.zeros(g.shape)
        for _ in range(count):
            c = rng.uniform(-0.4, 0.4, 3) * g.R_omega
            f += rng.uniform(0.5, 1.0) * poly(c, 0.5 * radius)
        f *= amp
    elif kind == "eigenmode":
        from .spectral import eigensolve

        k = int(sec.pop("index", 0))
        f = amp * eigensolve(m, k + 1).eigenfunctions[k]
    else:
        raise ConfigError(f"unknown initial recipe {kind!r}")
    if sec:
        raise ConfigError(f"unknown initial keys {sorted(sec)}")
    return InitialState(f)


def parse_experiment(cfg: configparser.ConfigParser) -> Experiment:
    if not cfg.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = _section(cfg, "experiment")
    scenario = str(exp.get("scenario", ""))
    if scenario not in SCENARIOS:
        near = difflib.get_close_matches(scenario, SCENARIOS, n=1, cutoff=0.0)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"unknown scenario {scenario!r}{hint}")
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in _section(cfg, "tolerances").items():
        if k not in tol:
            raise ConfigError(f"unknown tolerance {k!r}")
        tol[k] = float(v)
    grid = build_grid(_section(cfg, "grid"))
    media = [build_medium_section(_section(cfg, "medium"), grid)]
    if cfg.has_section("medium2"):
        media.append(build_medium_section(_section(cfg, "medium2"), grid))
    if scenario in ("discriminator", "transmission") and len(media) < 2:
        raise ConfigError(f"scenario {scenario!r} needs a [medium2] section")
    return Experiment(scenario, int(exp.get("seed", 0)), str(exp.get("output_dir", scenario)),
                      cfg, tol, grid, media)


def _sim_options(exp: Experiment) -> dict:
    sec = {_strip_unit(k): v for k, v in _section(exp.raw, "simulation").items()}
    allowed = {"T", "dt", "sponge_width", "sponge_strength", "record_stride", "adaptive",
               "moment_K", "wall", "energy_tail"}
    bad = set(sec) - allowed
    if bad:
        raise ConfigError(f"unknown simulation keys {sorted(bad)}")
    return sec


def _simulate(exp: Experiment, m: MediumSpec, init: InitialState, **extra):
    opts = {**_sim_options(exp), **extra}
    try:
        if m.grid.dim == 1:
            opts.pop("sponge_width", None); opts.pop("sponge_strength", None); opts.pop("wall", None)
            return simulate_radial(RadialWaveConfig(m, init, **opts))
        return simulate(WaveConfig(m, init, **opts))
    except TypeError as exc:
        raise ConfigError(f"simulation: {exc}") from exc


def _check(name, value, limit, below=True) -> Check:
    ok = bool(value <= limit) if below else bool(value >= limit)
    return Check(name, float(value), float(limit), ok)


# scenarios ----------------------------------------------------------------

def run_forward(exp: Experiment, out: Path) -> list[Check]:
    m = exp.media[0]
    init = build_initial(_section(exp.raw, "initial"), m, exp.seed)
    rec = _simulate(exp, m, init)
    header = ["t"] + [f"s{i}" for i in range(rec.boundary_trace.shape[1])]
    if np.any(rec.boundary_trace):
        rows = (np.concatenate([[t], r]) for t, r in zip(rec.times, rec.boundary_trace))
    else:
        rows = []
    io.write_csv(out / "boundary_trace.csv", header, rows)
    io.write_series(out / "energy.csv", rec.times, rec.energy_history, ("t", "energy"))
    io.write_field(out / "f.bin", init.f, m.grid)
    finite = float(np.all(np.isfinite(rec.boundary_trace)))
    return [_check("finite trace", finite, 1.0, below=False)]


def run_moments(exp: Experiment, out: Path) -> list[Check]:
    from .moments import recursion_residual, time_moments

    m = exp.media[0]
    t = exp.tolerances
    init = build_initial(_section(exp.raw, "initial"), m, exp.seed)
    K = int(_sim_options(exp).get("moment_K", 4)) or 4
    rec = _simulate(exp, m, init, moment_K=K)
    table = time_moments(rec, K, t["eps_mom"], need_tail=False)
    table.to_csv(out / "moments.csv")
    for k, mom in enumerate(table.moments):
        io.write_field(out / f"moment_{k}.bin", mom, m.grid)
    res = recursion_residual(table, m, init.f)
    io.write_csv(out / "recursion.csv", ["k", "residual", "relative"],
                 [(r["k"], r["value"], int(r["relative"])) for r in res])
    checks = [_check(f"recursion r{r['k']}", r["value"], t["recursion_max"]) for r in res]
    if table.norms[1] > 0:
        checks.append(_check("zeroth moment ratio", table.norms[0] / table.norms[1], t["zeroth_moment_max"]))
    return checks


def run_discriminator(exp: Experiment, out: Path) -> list[Check]:
    from .elliptic import harmonic_basis
    from .moments import discriminator, orthogonality_test, reports_to_csv, time_moments

    m1, m2 = exp.media
    t = exp.tolerances
    sec = _section(exp.raw, "initial")
    f1 = build_initial(sec, m1, exp.seed)
    f2 = build_initial(_section(exp.raw, "initial2") or sec, m2, exp.seed)
    K = int(_section(exp.raw, "discriminator").get("moment_K", 6))
    count = int(_section(exp.raw, "discriminator").get("harmonics", 10 if m1.grid.dim == 3 else 1))
    r1 = _simulate(exp, m1, f1, moment_K=K)
    r2 = _simulate(exp, m2, f2, moment_K=K)
    tabs = (time_moments(r1, K, need_tail=False), time_moments(r2, K, need_tail=False))
    basis = harmonic_basis(m1, count, t["eps_harm"])
    reps = orthogonality_test(r1, r2, m1, m2, f1.f, f2.f, basis, K, t["eps_trace"], tabs)
    d = discriminator(r1, r2, m1, m2, K, t["eps_trace"], tabs[0])
    reports_to_csv(reps + [d], out / "discriminator.csv")
    exp.metrics.update(D=d.value, k_used=d.k_used)
    worst = max(r.relative for r in reps)
    return [_check("orthogonality", worst, t["discriminator_max"]),
            _check("discriminator", d.relative, t["discriminator_max"])]


def run_asymptotics(exp: Experiment, out: Path) -> list[Check]:
    from .asymptotics import classify_sign_regime, u1_potential, u2_constant
    from .moments import time_moments

    m = exp.media[0]
    t = exp.tolerances
    init = build_initial(_section(exp.raw, "initial"), m, exp.seed)
    rep = classify_sign_regime(m, init.f, eps_sign=t["eps_sign"])
    rep.to_csv(out / "regime.csv")
    exp.metrics.update(regime=rep.regime, k0_predicted=rep.k0_predicted, kmm=rep.kmm_value)
    (out / "regime.txt").write_text(f"regime = {rep.regime}\nk0_predicted = {rep.k0_predicted}\n"
                                    f"kmm = {rep.kmm_value!r}\n")
    checks = []
    if _section(exp.raw, "asymptotics").get("simulate", False):
        rec = _simulate(exp, m, init, moment_K=4)
        table = time_moments(rec, 4, need_tail=False)
        obs = m.grid.observation
        pot = u1_potential(m, init.f)
        sim = table.moments[1]
        err = np.linalg.norm((sim - pot)[obs]) / np.linalg.norm(pot[obs])
        checks.append(_check("u1 vs potential", err, t["potential_max"]))
        u2 = u2_constant(m, init.f)
        if u2 != 0:
            mean = float(np.mean(table.moments[2][obs]))
            checks.append(_check("u2 vs constant", abs(mean - u2) / abs(u2), t["potential_max"]))
        io.write_field(out / "u1_sim.bin", sim, m.grid)
        io.write_field(out / "u1_potential.bin", pot, m.grid)
    return checks


def run_spectral(exp: Experiment, out: Path) -> list[Check]:
    from .spectral import default_p_samples, eigensolve, reconstruct_initial_data

    m = exp.media[0]
    t = exp.tolerances
    sec = _section(exp.raw, "spectral")
    M = int(sec.get("modes", 8))
    basis = eigensolve(m, M, eps_eig=t["eps_eig"])
    basis.to_csv(out / "basis.csv")
    for i, phi in enumerate(basis.eigenfunctions):
        io.write_field(out / f"phi_{i:02d}.bin", phi, m.grid)
    init = build_initial(_section(exp.raw, "initial"), m, exp.seed)
    ps = tuple(default_p_samples(basis))
    T = float(sec.get("T_seconds", 60.0))
    rec = simulate(WaveConfig(m, init, T=T, wall=m.grid.R0, laplace_p=ps, adaptive=False,
                              record_interior=False))
    recon = reconstruct_initial_data(rec, basis, M, ps, f_true=init.f)
    recon.coeffs.to_csv(out / "coefficients.csv")
    io.write_field(out / "f_hat.bin", recon.initial.f, m.grid)
    io.write_series(out / "spectrum.csv", np.arange(M), basis.eigenvalues, ("index", "lambda"))
    checks = [_check("orthonormality", basis.ortho_tol, t["ortho_max"]),
              _check("eigen residual", float(basis.residuals.max()), t["eps_eig"])]
    exp.metrics["recovery_error"] = recon.relative_error
    exp.metrics["captured_fraction"] = recon.captured_fraction
    exp.metrics["lambda"] = basis.eigenvalues.tolist()
    if sec.get("expect_exact", False) and recon.relative_error is not None:
        checks.append(_check("recovery error", recon.relative_error, t["recovery_max"]))
    return checks


def run_transmission(exp: Experiment, out: Path) -> list[Check]:
    from .transmission import radial_te_oracle, strip_scan

    m1, m2 = exp.media
    t = exp.tolerances
    sec = _section(exp.raw, "transmission")
    lo = float(sec.get("tau_min", 0.5))
    hi = float(sec.get("tau_max", 10.0))
    n = int(sec.get("samples", 200))
    taus = np.linspace(lo, hi, n)
    scan = strip_scan(m1, m2, taus, t["eps_scan"], max_degree=int(sec.get("max_degree", 0)))
    scan.to_csv(out / "scan.csv")
    io.write_series(out / "indicator.csv", taus, np.nan_to_num(scan.indicator, nan=-1.0), ("tau", "indicator"))
    checks = [_check("longest flagged run", scan.longest_flagged_run(), 3)]
    p1, p2 = sec.get("c1_profile"), sec.get("c2_profile")
    if p1 is not None and p2 is not None:
        oracle = radial_te_oracle(p1, p2, (lo, hi), R=m1.grid.R_omega)
        io.write_csv(out / "oracle_roots.csv", ["tau"], [(r,) for r in oracle.roots])
        gaps = [min((abs(r - s.real) for s in scan.refined), default=np.inf) for r in oracle.roots]
        worst = max(gaps, default=0.0)
        checks.append(_check("root match", worst, t["root_match_max"]))
    return checks


def run_decay(exp: Experiment, out: Path) -> list[Check]:
    m = exp.media[0]
    init = build_initial(_section(exp.raw, "initial"), m, exp.seed)
    rec = _simulate(exp, m, init)
    fit = rec.decay
    io.write_series(out / "energy.csv", rec.times, rec.energy_history, ("t", "energy"))
    (out / "decay.txt").write_text(f"delta_hat = {fit.delta_hat!r}\nC_hat = {fit.C_hat!r}\n"
                                   f"flag = {fit.flag}\nwindow = {fit.fit_window}\n")
    exp.metrics.update(delta_hat=fit.delta_hat, flag=fit.flag)
    expected = _section(exp.raw, "decay").get("expect_flag")
    if expected is None:
        return []
    return [Check(f"flag == {expected!r}", float(fit.flag == expected), 1.0, fit.flag == expected)]


RUNNERS = {
    "forward": run_forward,
    "moments": run_moments,
    "discriminator": run_discriminator,
    "asymptotics": run_asymptotics,
    "spectral": run_spectral,
    "transmission": run_transmission,
    "decay": run_decay,
}
assert set(RUNNERS) == set(SCENARIOS)


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def output_root() -> Path:
    import os

    return Path(os.environ.get(OUTPUT_ENV, "patlab_runs"))


def run(config_path) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        exp = parse_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = output_root() / exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(exp.seed)
    status = 0
    error = None
    try:
        checks = RUNNERS[exp.scenario](exp, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        checks = [Check(type(exc).__name__, float("nan"), float("nan"), False)]
        error = str(exc)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        status = 1
        print("failed check: " + ", ".join(failed) + (f" ({error})" if error else ""), file=sys.stderr)
    data = Path(config_path).read_bytes()
    manifest = {
        "scenario": exp.scenario,
        "seed": exp.seed,
        "config": {s: dict(cfg.items(s)) for s in cfg.sections()},
        "input_hash": git_blob_hash(data),
        "wall_clock_seconds": time.perf_counter() - t0,
        "tolerances": exp.tolerances,
        "checks": [c.as_dict() for c in checks],
        "metrics": {k: _jsonable(v) for k, v in exp.metrics.items()},
        "error": error,
        "outputs": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
        "exit_code": status,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return status


def validate(config_path) -> int:
    try:
        exp = parse_experiment(load_config(config_path))
        for m in exp.media:
            rep = validate_medium(m)
            for v in rep.violations[:10]:
                print(f"warning: {v.invariant} at {v.cell}: {v.detail}")
        build_initial(_section(exp.raw, "initial"), exp.media[0], exp.seed)
        _sim_options(exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: scenario {exp.scenario} on {exp.grid.dim}-D grid n={exp.grid.n}")
    return 0


def list_scenarios() -> int:
    width = max(map(len, SCENARIOS))
    for name, claim in SCENARIOS.items():
        print(f"{name:<{width}}  {claim}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="patlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("list", help="print the scenario catalog")
    for name in ("run", "validate"):
        p = sub.add_parser(name)
        p.add_argument("config")
    args = ap.parse_args(argv)
    if args.cmd == "list":
        return list_scenarios()
    if args.cmd == "validate":
        return validate(args.config)
    return run(args.config)


if __name__ == "__main__":
    sys.exit(main())
