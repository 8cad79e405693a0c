"""Command-line experiment runner.

Subcommands::

    slmsr run --config FILE [--out DIR] [--methods slmsr,standard,reference] [--threads N]
    slmsr convergence --test ID --H 1/8,1/32 --nfine 64 --dt 1/100 [--out DIR]
    slmsr peclet --test ID

Configs are flat ``key = value`` files with ``#`` comments; lists are
comma-separated and fractions such as ``1/300`` are parsed exactly.
Exit codes: 0 success, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError, PropagationError, SingularGeometryError, SolverError, TraceError

__version__ = "0.1.0"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
DEFAULT_METHODS = ("slmsr", "standard", "reference")
PHASES = ("setup", "trace", "reconstruct", "propagate", "assemble", "solve")


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _int(v):
    f = parse_fraction(v)
    if f.denominator != 1:
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(f)


def _float(v):
    return float(parse_fraction(v))


def _bool(v):
    s = v.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _list(parse):
    return lambda v: tuple(parse(x) for x in v.split(",") if x.strip())


def _str(v):
    return v.strip()


KEYS = {
    "test": ("test_id", _str),
    "test_id": ("test_id", _str),
    "n_cells": ("n_cells", _int),
    "n_fine": ("n_fine", _int),
    "levels": ("levels", _int),
    "dt": ("dt", _float),
    "T": ("T", _float),
    "form": ("form", _str),
    "method": ("method", _str),
    "edge_evolution": ("edge_evolution", _bool),
    "alpha": ("alpha", _list(_float)),
    "n_sub_trace": ("n_sub_trace", _int),
    "n_sub_prop": ("n_sub_prop", _int),
    "mass_matrix_time": ("mass_matrix_time", _str),
    "seed": ("seed", _int),
    "fem_subcells": ("fem_subcells", _int),
    "fem_points": ("fem_points", _int),
    "fem_degree": ("fem_degree", _int),
    "ref_cells": ("ref_cells", _int),
    "ref_levels": ("ref_levels", _int),
    "report_times": ("report_times", _list(_float)),
}
EXTRA_KEYS = {
    "H": _list(parse_fraction),
    "methods": _list(_str),
    "mesh": _str,
    "snapshots": _bool,
}


@dataclasses.dataclass
class RunSpec:
    """A parsed config: solver settings plus run-level options."""

    solver: object  # SolverConfig
    methods: tuple = DEFAULT_METHODS
    mesh: str | None = None
    snapshots: bool = False


def parse_config_text(text: str) -> dict:
    """``key = value`` lines into a dict of parsed values."""
    values, unknown = {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in KEYS:
            name, parse = KEYS[key]
        elif key in EXTRA_KEYS:
            name, parse = key, EXTRA_KEYS[key]
        else:
            unknown.append(key)
            continue
        try:
            values[name] = parse(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno} ({key}): {exc}") from None
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return values


def build_run_spec(values: dict) -> RunSpec:
    from .fields import resolve_test_id
    from .solver import METHODS, SolverConfig

    values = dict(values)
    if "test_id" not in values:
        raise ConfigError("missing required key 'test'")
    try:
        values["test_id"] = resolve_test_id(values["test_id"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    H = values.pop("H", None)
    if H is not None:
        if len(H) != 1 or H[0] <= 0 or H[0].numerator != 1:
            raise ConfigError("H must be a single value 1/n")
        values.setdefault("n_cells", H[0].denominator)
    methods = values.pop("methods", DEFAULT_METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    mesh = values.pop("mesh", None)
    snapshots = values.pop("snapshots", False)
    try:
        cfg = SolverConfig(**values).resolved()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.form not in ("nonconservative", "conservative"):
        raise ConfigError(f"form must be nonconservative or conservative, got {cfg.form!r}")
    return RunSpec(cfg, tuple(methods), mesh, snapshots)


def load_config(path) -> RunSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_run_spec(parse_config_text(text))


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


def config_text(spec: RunSpec) -> str:
    """Config file text that re-creates ``spec``."""
    lines = ["# resolved configuration"]
    for f in dataclasses.fields(spec.solver):
        v = getattr(spec.solver, f.name)
        if v is None:
            continue
        key = "test" if f.name == "test_id" else f.name
        lines.append(f"{key} = {_fmt_value(v)}")
    lines.append(f"methods = {', '.join(spec.methods)}")
    if spec.mesh:
        lines.append(f"mesh = {spec.mesh}")
    lines.append(f"snapshots = {_fmt_value(spec.snapshots)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _limit_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _time_tag(t: float) -> str:
    return f"{t:.6f}".rstrip("0").rstrip(".").replace(".", "p")


def cmd_run(spec: RunSpec, out: Path, threads=None) -> dict:
    from . import analysis
    from .mesh import load_mesh
    from .solver import coarse_mesh, run

    out.mkdir(parents=True, exist_ok=True)
    cfg = spec.solver
    if spec.mesh:
        if cfg.dim != 2:
            raise ConfigError("a mesh file is only meaningful for 2D tests")
        try:
            mesh = load_mesh(spec.mesh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load mesh {spec.mesh}: {exc}") from None
    else:
        mesh = coarse_mesh(cfg)
    t0 = time.perf_counter()
    trajs = {}
    # the reference first, so other methods can be compared as they finish
    for m in sorted(spec.methods, key=lambda m: m != "reference"):
        trajs[m] = run(cfg, mesh=mesh, method=m)
    outputs = []
    ref = trajs.get("reference")
    for m, traj in trajs.items():
        if ref is not None and m != "reference":
            series = analysis.error_series(traj, ref, method=m)
            path = out / f"errors_{m}.csv"
            analysis.write_csv(series, path)
            outputs.append(path.name)
        if spec.snapshots:
            for t, snap in zip(traj.times, traj.snapshots):
                path = out / f"snapshot_{m}_t{_time_tag(t)}.csv"
                analysis.write_snapshot(snap, path)
                outputs.append(path.name)
    (out / "config.txt").write_text(config_text(spec))
    manifest = {
        "tool": "slmsr",
        "version": __version__,
        "command": "run",
        "output_dir": str(out),
        "config": dataclasses.asdict(cfg),
        "methods": list(trajs),
        "mesh": spec.mesh,
        "threads": threads,
        "outputs": outputs,
        "wall_clock_s": time.perf_counter() - t0,
        "timings_s": {m: {k: tr.timings.get(k, 0.0) for k in PHASES} for m, tr in trajs.items()},
        "diagnostics": {m: tr.diagnostics for m, tr in trajs.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def convergence_times(test_id: str):
    if test_id.startswith("1d.series"):
        return (1 / 3, 2 / 3, 1.0)
    return (0.5, 1.0)


def cmd_convergence(test_id, H_list, n_fine, dt, out: Path, T=1.0, overrides=None) -> dict:
    """Table of both methods' errors over ``H_list`` plus consecutive EOCs."""
    from . import analysis
    from .solver import SolverConfig, run

    Hs = sorted((Fraction(h) for h in H_list), reverse=True)
    if not Hs:
        raise ConfigError("empty H list")
    for h in Hs:
        if h <= 0 or h.numerator != 1 or h.denominator & (h.denominator - 1):
            raise ConfigError(f"H values must be dyadic 1/2^k, got {h}")
    out.mkdir(parents=True, exist_ok=True)
    times = convergence_times(test_id)
    rows, per_method, timings = [], {"standard": [], "slmsr": []}, {}
    t0 = time.perf_counter()
    for h in Hs:
        try:
            cfg = SolverConfig(test_id, n_cells=h.denominator, n_fine=n_fine, dt=float(dt), T=T,
                               report_times=times, **(overrides or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        ref = run(cfg, method="reference")
        timings[str(h)] = {"reference": ref.timings}
        for m in ("standard", "slmsr"):
            traj = run(cfg, method=m)
            timings[str(h)][m] = traj.timings
            s = analysis.error_series(traj, ref, method=m)
            per_method[m].append(s)
            rows += [(float(h), t, m, a, b) for t, a, b in zip(s.times, s.l2_rel, s.h1_rel)]
    analysis.write_table(rows, out / "table.csv")
    eoc_rows = []
    for (h0, h1), k in zip(zip(Hs, Hs[1:]), range(len(Hs) - 1)):
        q = float(h0 / h1)
        for m in ("standard", "slmsr"):
            a, b = per_method[m][k], per_method[m][k + 1]
            for t, l0, l1, e0, e1 in zip(a.times, a.l2_rel, b.l2_rel, a.h1_rel, b.h1_rel):
                eoc_rows.append((float(h0), float(h1), t, m,
                                 analysis.eoc([l0, l1], q)[0], analysis.eoc([e0, e1], q)[0]))
    written = ["table.csv"]
    if eoc_rows:
        analysis.write_eoc_table(eoc_rows, out / "eoc.csv")
        written.append("eoc.csv")
    manifest = {
        "tool": "slmsr",
        "version": __version__,
        "command": "convergence",
        "test": test_id,
        "H": [str(h) for h in Hs],
        "n_fine": n_fine,
        "dt": str(dt),
        "T": T,
        "overrides": overrides or {},
        "outputs": written,
        "wall_clock_s": time.perf_counter() - t0,
        "timings_s": timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_peclet(test_id: str, seed: int = 0) -> dict:
    from .fields import local_peclet_range, make_test_field, peclet

    field = make_test_field(test_id, seed)
    report = {"test": field.test_id, "global": peclet(field)}
    if field.dim == 2:
        lo, hi = local_peclet_range(field)
        report["local_min"], report["local_max"] = lo, hi
    return report


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="slmsr", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--methods", default=None, help="comma-separated subset of slmsr,standard,reference")
    r.add_argument("--threads", type=int, default=None)
    c = sub.add_parser("convergence", help="error table and EOCs over coarse resolutions")
    c.add_argument("--test", required=True)
    c.add_argument("--H", required=True, help="comma-separated list such as 1/8,1/32")
    c.add_argument("--nfine", type=int, required=True)
    c.add_argument("--dt", required=True)
    c.add_argument("--T", default="1")
    c.add_argument("--alpha", default=None, help="regularization weight(s)")
    c.add_argument("--n-sub-prop", type=int, default=None)
    c.add_argument("--ref-cells", type=int, default=None)
    c.add_argument("--out", default="convergence_out")
    pe = sub.add_parser("peclet", help="Peclet numbers of a catalog test")
    pe.add_argument("--test", required=True)
    pe.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            _limit_threads(args.threads)
            spec = load_config(args.config)
            if args.methods:
                spec = build_run_spec({**parse_config_text(Path(args.config).read_text()),
                                       "methods": _list(_str)(args.methods)})
            out = Path(args.out) if args.out else Path(f"out_{spec.solver.test_id}")
            manifest = cmd_run(spec, out, args.threads)
            print(f"wrote {', '.join(manifest['outputs'] + ['config.txt', 'manifest.json'])} to {out}")
        elif args.command == "convergence":
            from .fields import resolve_test_id

            try:
                test_id = resolve_test_id(args.test)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            overrides = {}
            if args.alpha:
                overrides["alpha"] = _list(_float)(args.alpha)
            if args.n_sub_prop:
                overrides["n_sub_prop"] = args.n_sub_prop
            if args.ref_cells:
                overrides["ref_cells"] = args.ref_cells
            H = _list(parse_fraction)(args.H)
            manifest = cmd_convergence(test_id, H, args.nfine, parse_fraction(args.dt), Path(args.out),
                                       _float(args.T), overrides)
            print(f"wrote {', '.join(manifest['outputs'])} to {args.out}")
        else:
            from .fields import resolve_test_id

            try:
                test_id = resolve_test_id(args.test)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            rep = cmd_peclet(test_id, args.seed)
            print(f"test {rep['test']}: global Peclet {rep['global']:.6g}")
            if "local_max" in rep:
                print(f"local Peclet range [{rep['local_min']:.6g}, {rep['local_max']:.6g}]")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, PropagationError, TraceError, SingularGeometryError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
