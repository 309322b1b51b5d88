"""Command-line entry point.

Exit codes: 0 when every checked tolerance holds, 1 when a tolerance fails
(the report is still written), 2 for invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting, report
from .dynamics import (
    DynamicsError,
    default_time_grid,
    random_state,
    remainder_scan,
)
from .exact import SquareCounterexample, square_counterexample
from .fem import FEMError, solve_eigen
from .geometry import (
    GeometryError,
    altitude,
    faces,
    load_simplex,
    named_simplex,
    normalize,
    parallelepiped_face_volume,
    random_simplex,
    volume,
)
from .mesh import refined_mesh
from .studies import (
    MAX_LEVEL,
    FINEST_LEVEL,
    eigen_convergence,
    half_square_exact,
    identity_study,
    poincare_sweep,
    stationary_state,
    system_at,
)

log = logging.getLogger("simplexobs")

SUBCOMMANDS = ("geom", "eig", "observe", "identity", "counterexample", "poincare")

DEFAULTS = {
    "shape": "half-square-pi",
    "level": None,
    "level_min": 3,
    "modes": None,
    "face": "all",
    "t0": None,
    "t_points": 41,
    "per_octave": 4,
    "min_t_factor": 32.0,
    "seed": 20240601,
    "tol_ratio": 0.10,
    "tol_identity": 0.10,
    "state": "random",
    "mode_index": 1,
    "data_modes": 20,
    "states": 5,
    "n": "1,2,5,10",
    "T": math.pi,
    "samples": 100,
    "triangles": 5,
    "out": None,
    "format": "csv,json,svg",
    "dump_mesh": False,
}


class InvalidInput(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    shape: str = DEFAULTS["shape"]
    level: int | None = None
    level_min: int = 3
    modes: int | None = None
    face: str = "all"
    t0: float | None = None
    t_points: int = 41
    per_octave: int = 4
    min_t_factor: float = 32.0
    seed: int = DEFAULTS["seed"]
    tol_ratio: float = 0.10
    tol_identity: float = 0.10
    state: str = "random"
    mode_index: int = 1
    data_modes: int = 20
    states: int = 5
    n: str = "1,2,5,10"
    T: float = math.pi
    samples: int = 100
    triangles: int = 5
    out: str | None = None
    format: str = "csv,json,svg"
    dump_mesh: bool = False
    formats: tuple = field(default=(), repr=False)

    def validate(self):
        for name in ("tol_ratio", "tol_identity"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if self.t0 is not None and not self.t0 > 0:
            raise InvalidInput("t0 must be positive")
        if self.t_points < 2 or self.per_octave < 1:
            raise InvalidInput("need t_points >= 2 and per_octave >= 1")
        fm = tuple(f.strip() for f in self.format.split(",") if f.strip())
        bad = set(fm) - {"csv", "json", "svg"}
        if bad:
            raise InvalidInput(f"unknown format(s): {sorted(bad)}")
        self.formats = fm
        if self.state not in ("random", "stationary"):
            raise InvalidInput("state must be 'random' or 'stationary'")
        return self

    def check_level(self, n: int, level: int) -> int:
        if n not in MAX_LEVEL:
            raise InvalidInput(f"meshing supports n in {{2, 3}}, got n={n}")
        if not 0 <= level <= MAX_LEVEL[n]:
            raise InvalidInput(f"level {level} outside guardrail 0..{MAX_LEVEL[n]} for n={n}")
        return level


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simplexobs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        a = sp.add_argument
        a("--config", help="JSON file whose keys mirror the flags (flags win)")
        a("--shape", help="named shape, vertex JSON or path to a JSON file")
        a("--level", type=int, help="refinement level")
        a("--modes", type=int, help="number of eigenmodes")
        a("--seed", type=int, help="seed for random data")
        a("--out", help="report directory (default: runs/<command>-<timestamp>)")
        a("--format", help="comma list of csv,json,svg")
        a("--dump-mesh", action="store_true", default=None, help="also write mesh.json")

    sp = sub.add_parser("geom", help="volumes, faces, normals and rate constants")
    common(sp)
    sp = sub.add_parser("eig", help="eigenvalue table and convergence")
    common(sp)
    sp.add_argument("--level-min", type=int)
    sp = sub.add_parser("observe", help="observability remainder scan per face")
    common(sp)
    sp.add_argument("--face", help="face index or 'all'")
    sp.add_argument("--t0", type=float)
    sp.add_argument("--t-points", type=int)
    sp.add_argument("--per-octave", type=int)
    sp.add_argument("--min-t-factor", type=float,
                    help="ratio tolerance is checked for T >= factor * T0")
    sp.add_argument("--tol-ratio", type=float)
    sp.add_argument("--state", choices=["random", "stationary"])
    sp.add_argument("--mode-index", type=int, help="1-based mode for stationary data")
    sp.add_argument("--data-modes", type=int, help="modes carrying random data")
    sp = sub.add_parser("identity", help="commutator flux identity residuals")
    common(sp)
    sp.add_argument("--states", type=int)
    sp.add_argument("--t0", type=float, help="time horizon T (default 2 pi / lambda_1)")
    sp.add_argument("--tol-identity", type=float)
    sp.add_argument("--data-modes", type=int)
    sp = sub.add_parser("counterexample", help="square-domain counterexample")
    common(sp)
    sp.add_argument("--n", help="comma list of mode numbers")
    sp.add_argument("--T", type=float)
    sp = sub.add_parser("poincare", help="Poincare inequality sweep")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--triangles", type=int)
    return p


def make_config(argv=None) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    values = dict(DEFAULTS)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            data = json.loads(Path(cfg_path).read_text())
        except (OSError, ValueError) as exc:
            raise InvalidInput(f"cannot read config {cfg_path}: {exc}") from exc
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            values[k] = v
    return RunConfig(command=args.command, **values).validate(), args.verbose


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path("runs") / f"{cfg.command}-{time.strftime('%Y%m%d-%H%M%S')}"


class Run:
    """Collects written files and the pass flag for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = _out_dir(cfg)
        self.files = []
        self.ok = True

    def want(self, fmt: str) -> bool:
        return fmt in self.cfg.formats

    def csv(self, name, header, rows):
        if self.want("csv"):
            self.files.append(report.write_csv(self.out / name, header, rows))

    def json(self, name, data):
        if self.want("json"):
            self.files.append(report.write_json(self.out / name, data))

    def svg(self, name, fn, *args):
        if self.want("svg"):
            self.files.append(fn(*args, self.out / name))

    def check(self, label: str, ok: bool):
        if not ok:
            log.warning("tolerance failed: %s", label)
        self.ok = self.ok and bool(ok)
        return bool(ok)


def _simplex(cfg):
    try:
        return load_simplex(cfg.shape)
    except (OSError, ValueError, KeyError) as exc:
        raise InvalidInput(f"bad shape {cfg.shape!r}: {exc}") from exc


def _level(cfg, s, default=None):
    level = cfg.level if cfg.level is not None else (
        default if default is not None else FINEST_LEVEL.get(s.dim, 0))
    return cfg.check_level(s.dim, level)


def _maybe_dump(run, s, level):
    if run.cfg.dump_mesh:
        p = run.out / "mesh.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(refined_mesh(s, level).to_json())
        run.files.append(p)


def cmd_geom(run: Run):
    s = _simplex(run.cfg)
    n = s.dim
    fs = faces(s)
    vol = volume(s)
    nrm = normalize(s)
    closure = np.sum([f.volume * f.normal for f in fs], axis=0)
    rows = []
    for f in fs:
        row = [f.index, *f.normal, f.volume, *f.centroid, 2 * f.volume / (n * vol)]
        if n == 2:
            row.append(altitude(s, f.index))
        rows.append(row)
    header = (["face"] + [f"normal_{i}" for i in range(n)] + ["face_volume"]
              + [f"centroid_{i}" for i in range(n)] + ["rate_constant"]
              + (["altitude"] if n == 2 else []))
    run.csv("faces.csv", header, rows)
    det_err = abs(abs(nrm.detA) / (math.factorial(n) * vol) - 1)
    inv_err = float(np.abs(nrm.A @ nrm.B - np.eye(n)).max())
    checks = {
        "closed_surface": run.check("closed surface identity", float(np.abs(closure).max()) < 1e-10),
        "det_volume": run.check("|det A| = n! Vol", det_err < 1e-12),
        "inverse": run.check("AB = I", inv_err < 1e-12),
        "well_conditioned": run.check("cond(A)", not nrm.ill_conditioned),
    }
    if n >= 2:
        pp = parallelepiped_face_volume(s, 0)
        checks["parallelepiped"] = run.check(
            "(n-1)! Vol(G_0)", abs(pp / (math.factorial(n - 1) * fs[0].volume) - 1) < 1e-12)
    else:
        pp = None
    run.json("geom.json", {
        "dimension": n, "volume": vol, "vertices": s.vertices,
        "faces": [{"index": f.index, "normal": f.normal, "volume": f.volume,
                   "centroid": f.centroid, "vertices": list(f.vertex_indices),
                   "rate_constant": 2 * f.volume / (n * vol)} for f in fs],
        "A": nrm.A, "B": nrm.B, "Gamma": nrm.Gamma, "detA": nrm.detA,
        "parallelepiped_face_volume_0": pp,
        "closure_residual": float(np.abs(closure).max()),
        "checks": checks, "pass": run.ok,
    })
    if run.cfg.dump_mesh:
        _maybe_dump(run, s, run.cfg.check_level(n, run.cfg.level or 0))


def _is_half_square(s) -> bool:
    ref = named_simplex("half-square-pi")
    return s.vertices.shape == ref.vertices.shape and np.allclose(s.vertices, ref.vertices, atol=1e-14)


def cmd_eig(run: Run):
    cfg = run.cfg
    s = _simplex(cfg)
    top = _level(cfg, s, default=6 if s.dim == 2 else 4)
    lo = cfg.check_level(s.dim, min(cfg.level_min, top))
    modes = cfg.modes or 10
    exact = half_square_exact(modes) if _is_half_square(s) else None
    try:
        study = eigen_convergence(s, range(lo, top + 1), modes, exact)
    except FEMError as exc:
        raise InvalidInput(str(exc)) from exc
    rows = []
    for L, k, lam, res in study["table"]:
        row = [L, k, lam, res]
        if exact is not None:
            row += [exact[k - 1], abs(lam - exact[k - 1]) / exact[k - 1]]
        rows.append(row)
    header = ["level", "k", "lambda", "residual"] + (["exact", "rel_error"] if exact is not None else [])
    run.csv("eigenvalues.csv", header, rows)
    run.check("eigen residuals", max(r[3] for r in study["table"]) < 1e-9)
    summary = {"levels": study["levels"], "modes": modes,
               "finest": study["eigenvalues"][-1]}
    if exact is not None:
        orders = study["orders"]
        summary["orders"] = orders
        summary["lambda1_rel_error_finest"] = float(study["rel_errors"][-1, 0])
        if len(orders):
            run.check("empirical order in [1.8, 2.2]",
                      bool(np.all((orders[-1] >= 1.8) & (orders[-1] <= 2.2))))
        run.svg("convergence.svg", plotting.convergence_plot, study["levels"], study["rel_errors"])
    summary["pass"] = run.ok
    run.json("eig.json", summary)
    _maybe_dump(run, s, top)


def _faces_arg(cfg, n):
    if str(cfg.face) == "all":
        return list(range(n + 1))
    try:
        j = int(cfg.face)
    except ValueError as exc:
        raise InvalidInput(f"bad face {cfg.face!r}") from exc
    if not 0 <= j <= n:
        raise InvalidInput(f"face {j} out of range 0..{n}")
    return [j]


def cmd_observe(run: Run):
    cfg = run.cfg
    s = _simplex(cfg)
    level = _level(cfg, s)
    face_ids = _faces_arg(cfg, s.dim)
    sys_ = system_at(s, level)
    b = solve_eigen(sys_, cfg.modes)
    if cfg.state == "stationary":
        if not 1 <= cfg.mode_index <= b.m:
            raise InvalidInput(f"mode index {cfg.mode_index} outside 1..{b.m}")
        st = stationary_state(b, cfg.mode_index - 1)
    else:
        st = random_state(b, np.random.default_rng(cfg.seed), modes=cfg.data_modes)
    t0 = cfg.t0 if cfg.t0 is not None else 2 * math.pi / b.eigenvalues[0]
    grid = default_time_grid(b.eigenvalues[0], t0, cfg.t_points, cfg.per_octave)
    reports = []
    summaries = []
    for j in face_ids:
        r = remainder_scan(st, b, j, grid, with_identity=True)
        reports.append(r)
        sm = r.summary(cfg.tol_ratio, min_T=cfg.min_t_factor * t0)
        summaries.append(sm)
        run.check(f"face {j}", sm["pass"])
        run.csv(f"observe_face{j}.csv", ["T", "N", "P", "ratio", "remainder", "oscillatory"],
                zip(r.T, r.N, r.P, r.ratio, r.remainder, r.oscillatory_remainder))
    worst = max(summaries, key=lambda d: d["max_ratio_error"])
    slopes = [d["slope"] for d in summaries if d["slope_applicable"]]
    run.json("observe.json", {
        "shape": cfg.shape, "level": level, "modes": b.m, "state": cfg.state,
        "seed": cfg.seed, "T0": t0, "E0": float(reports[0].E0),
        "ratio": worst["ratio"],
        "sup_T_R": max(d["sup_T_R"] for d in summaries),
        "slope": max(slopes, key=lambda x: abs(x + 1)) if slopes else None,
        "pass": run.ok,
        "faces": summaries,
    })
    run.svg("remainder.svg", plotting.remainder_plot, reports, t0)
    _maybe_dump(run, s, level)


def cmd_identity(run: Run):
    cfg = run.cfg
    s = _simplex(cfg)
    level = _level(cfg, s, default=4)
    levels = [level]
    if level + 1 <= MAX_LEVEL[s.dim]:
        levels.append(level + 1)
    seeds = [cfg.seed + i for i in range(cfg.states)]
    res, details = identity_study(s, levels, seeds, T=cfg.t0, modes=cfg.data_modes)
    run.csv("identity.csv", ["level", "seed", "T", "lhs", "rhs", "volume_term", "E0", "residual"],
            [(d["level"], d["seed"], d["T"], d["lhs"], d["rhs"], d["volume_term"], d["E0"],
              d["residual"]) for d in details])
    run.check("residual below tolerance", bool(np.all(res[:, 0] < cfg.tol_identity)))
    if len(levels) == 2:
        run.check("residual decreases under refinement", bool(np.all(res[:, 1] < res[:, 0])))
    run.json("identity.json", {"levels": levels, "seeds": seeds, "residuals": res,
                               "max_residual": float(res[:, 0].max()), "pass": run.ok})
    run.svg("identity.svg", plotting.residual_plot,
            [f"L{d['level']}/s{d['seed']}" for d in details], [d["residual"] for d in details])


def cmd_counterexample(run: Run):
    cfg = run.cfg
    try:
        ns = [int(x) for x in str(cfg.n).split(",") if x.strip()]
    except ValueError as exc:
        raise InvalidInput(f"bad mode list {cfg.n!r}") from exc
    if not ns or min(ns) < 1 or cfg.T < 0:
        raise InvalidInput("need modes n >= 1 and T >= 0")
    rows = []
    for n in ns:
        d = square_counterexample(n, cfg.T)
        sq = SquareCounterexample(n)
        eq = sq.energy_quadrature()
        oq = sq.edge_observability_quadrature(cfg.T)
        nq = sq.l2_norm_quadrature()
        run.check(f"n={n} energy quadrature", abs(eq - d["energy"]) <= 1e-10 * d["energy"])
        run.check(f"n={n} edge quadrature", abs(oq - d["observability"]) <= 1e-10 * max(1.0, d["observability"]))
        run.check(f"n={n} L2 normalization", abs(nq - 1.0) <= 1e-12)
        rows.append((n, cfg.T, d["energy"], d["observability"], d["ratio"], eq, oq, nq))
    run.csv("counterexample.csv",
            ["n", "T", "energy", "observability", "ratio", "energy_quadrature",
             "observability_quadrature", "l2_norm_quadrature"], rows)
    run.json("counterexample.json", {
        "T": cfg.T, "rows": [dict(zip(["n", "energy", "observability", "ratio"], (r[0], r[2], r[3], r[4])))
                             for r in rows],
        "ratio": [r[4] for r in rows], "pass": run.ok})
    run.svg("counterexample.svg", plotting.counterexample_plot, [r[0] for r in rows], [r[4] for r in rows])


def cmd_poincare(run: Run):
    cfg = run.cfg
    level = cfg.check_level(2, cfg.level if cfg.level is not None else 3)
    rng = np.random.default_rng(cfg.seed)
    tris = [random_simplex(2, rng) for _ in range(cfg.triangles)]
    rows = poincare_sweep(tris, level, cfg.samples, rng)
    violations = sum(1 for r in rows if not r[4])
    run.check("no Poincare violations", violations == 0)
    run.csv("poincare.csv", ["triangle", "sample", "lhs", "rhs", "pass"], rows)
    run.json("poincare.json", {"level": level, "triangles": [t.vertices for t in tris],
                               "samples": cfg.samples, "violations": violations,
                               "max_ratio": max(r[2] / r[3] for r in rows) if rows else None,
                               "pass": run.ok})


HANDLERS = {
    "geom": cmd_geom,
    "eig": cmd_eig,
    "observe": cmd_observe,
    "identity": cmd_identity,
    "counterexample": cmd_counterexample,
    "poincare": cmd_poincare,
}


def _limit_threads():
    n = os.environ.get("OBS_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_info, threadpool_limits
    # a cap only: raising OpenBLAS above its startup pool size can crash it
    try:
        cap = max(1, int(n))
    except ValueError:
        log.warning("ignoring OBS_THREADS=%r", n)
        return None
    current = [p["num_threads"] for p in threadpool_info()]
    return threadpool_limits(limits=min([cap] + current))


def run(argv=None) -> int:
    try:
        cfg, verbose = make_config(argv)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    r = Run(cfg)
    try:
        HANDLERS[cfg.command](r)
    except (InvalidInput, GeometryError, DynamicsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()
    for f in r.files:
        print(f)
    print("PASS" if r.ok else "FAIL")
    return 0 if r.ok else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
