"""Command-line front end.

Four verbs: `selftest` runs built-in numerical checks, `freq-conv` measures
single-frequency self-convergence over spectral degrees, `run` performs one
time-domain solve and writes snapshots, `sweep` runs a time-step refinement
study and writes error tables with fitted orders.  Every output directory
gets a run_meta.txt whose key=value block reproduces the parameter table of
the preset it came from, so runs stay diffable against the shipped presets.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bio_assembly import AssemblyParams, calderon_matrix
from .cq_engine import TimeGrid, cq_forward, cq_solve, scheme
from .geometry import circle_one
from .mtf_system import SingularFrequencyError, assemble_F, assemble_rhs_incident
from .postprocess import (
    ErrorTable,
    FieldGrid,
    GuardError,
    NormDefectError,
    TraceNorms,
    ZeroReferenceError,
    embed_coeffs,
    estimate_order,
    eval_field,
    field_on_grid,
    subdomain_field,
    trace_error,
    trace_series_from_fields,
    write_error_table,
    write_snapshots,
)
from .specfun import bessel_k01, cheb2_rule, cheb_grid, gauss_legendre, u_values
from .spectral_basis import DIRICHLET, NEUMANN, moment_coeffs, trial_coeffs
from .td_driver import (
    ConfigError,
    RunConfig,
    load_config,
    load_preset,
    run_simulation,
    serialize_config,
)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    SingularFrequencyError,
    NormDefectError,
    GuardError,
    ZeroReferenceError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

_SCHEME_CHOICES = ("bdf2", "radau2", "lobatto3")


# ---------------------------------------------------------------------------
# self tests
# ---------------------------------------------------------------------------
def _check_quadrature() -> str:
    rule = gauss_legendre(20)
    err = abs(rule.nodes**38 @ rule.weights - 2.0 / 39.0)
    nodes, weights = cheb2_rule(30)
    vals = u_values(3, nodes)
    err = max(err, abs(vals[3] ** 2 @ weights - np.pi / 2.0))
    if err > 5e-14:
        raise AssertionError(f"polynomial exactness off by {err:.2e}")
    return f"exactness defect {err:.1e}"


def _check_bessel() -> str:
    # high-precision reference values for K0, K1
    table = [
        (1.0 + 0.0j, 0.42102443824070834 + 0.0j, 0.6019072301972346 + 0.0j),
        (2.5 + 0.0j, 0.06234755320036619 + 0.0j, 0.07389081634774707 + 0.0j),
        (2.0 + 3.0j, -0.08296852656762552 + 0.027949603635183423j,
         -0.08649997648128173 + 0.039061434005214474j),
        (0.5 - 0.2j, 0.8456023536411914 + 0.31080739798775286j,
         1.3659809995112737 + 0.7343688844349936j),
    ]
    z = np.array([row[0] for row in table])
    k0, k1 = bessel_k01(z)
    ref0 = np.array([row[1] for row in table])
    ref1 = np.array([row[2] for row in table])
    err = max(np.abs((k0 - ref0) / ref0).max(), np.abs((k1 - ref1) / ref1).max())
    if err > 1e-11:
        raise AssertionError(f"K0/K1 relative error {err:.2e}")
    return f"max relative error {err:.1e}"


def _check_cq_scalar() -> str:
    # the impulse response of F(s) = s recovers the backward-difference
    # weights; perturbing any generator constant shifts these at O(1/dt)
    grid = TimeGrid(8, 2.0)
    impulse = np.zeros((9, 1))
    impulse[0, 0] = 1.0
    out, _ = cq_forward(scheme("bdf2"), grid, lambda s, v: s * v, impulse)
    out = out[:, 0]
    dt = 0.25
    ref = np.array([1.5, -2.0, 0.5]) / dt
    err = np.abs(out[:3] - ref).max()
    # trailing weights vanish up to the contour-radius error eps*lambda^-n
    if err > 1e-10 or np.abs(out[3:]).max() > 5e-8:
        raise AssertionError(f"bdf2 weight defect {max(err, np.abs(out[3:]).max()):.2e}")
    # forward map composed with its inverse returns the input
    worst = 0.0
    for name in _SCHEME_CHOICES:
        sch = scheme(name)
        g = TimeGrid(16, 4.0)
        times = g.stage_times(sch) if sch.multistage else g.times()
        data = np.sin(times)[..., None]
        fwd, _ = cq_forward(sch, g, lambda s, v: (s + 1.0) / (s + 2.0) * v, data)
        back, _ = cq_solve(sch, g, lambda s, v: (s + 2.0) / (s + 1.0) * v, fwd)
        worst = max(worst, np.abs(back - data).max() / np.abs(data).max())
    if worst > 1e-8 or err > 1e-10:
        raise AssertionError(f"round-trip defect {worst:.2e}")
    return f"weights {err:.1e}, round-trip {worst:.1e}"


def _check_calderon() -> str:
    # interior traces of a point source must satisfy (A - 1/2 Id) gamma = 0
    scene = circle_one(1.0)
    s = 2.0 + 3.0j
    L = 28
    x0 = np.array([3.0, 2.0])
    grid = cheb_grid(2048)
    b = L + 1
    gam = np.zeros(4 * b, dtype=complex)
    mom = np.zeros(4 * b, dtype=complex)
    for ix, e in enumerate(scene.neighbors(1)):
        side = scene.side(1, e)
        pts = side.point(grid.points)
        nrm = side.normal(grid.points)
        d = pts - x0[None, :]
        r = np.hypot(d[:, 0], d[:, 1])
        k0, k1 = bessel_k01(s * r)
        un = -s * k1 * (d * nrm).sum(axis=1) / r
        gam[2 * b * ix: 2 * b * ix + b] = trial_coeffs(side, k0, grid)[:b]
        gam[2 * b * ix + b: 2 * b * (ix + 1)] = trial_coeffs(side, un, grid)[:b]
        mom[2 * b * ix: 2 * b * ix + b] = moment_coeffs(un, grid)[:b]
        mom[2 * b * ix + b: 2 * b * (ix + 1)] = moment_coeffs(k0.astype(complex), grid)[:b]
    a = calderon_matrix(scene, 1, s, L)
    res = np.abs(a @ gam - 0.5 * mom).max()
    if res > 1e-8:
        raise AssertionError(f"projector residual {res:.2e}")
    return f"projector residual {res:.1e}"


_CHECKS = (
    ("quadrature", _check_quadrature),
    ("bessel", _check_bessel),
    ("cq-scalar", _check_cq_scalar),
    ("calderon", _check_calderon),
)


def _cmd_selftest(args) -> int:
    failed = []
    for name, fn in _CHECKS:
        try:
            detail = fn()
        except Exception as exc:
            print(f"{name:<12} FAIL: {exc}")
            failed.append(name)
            continue
        print(f"{name:<12} ok: {detail}")
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return EXIT_NUMERICAL
    print(f"all {len(_CHECKS)} checks passed")
    return 0


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------
def _int_list(text: str) -> list:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc
    if not values:
        raise ConfigError(f"empty integer list {text!r}")
    return values


def _load_base(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset)
    if getattr(args, "L", None) is not None:
        cfg = replace(cfg, max_degree=int(args.L))
    if getattr(args, "T", None) is not None:
        cfg = replace(cfg, t_final=float(args.T))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _write_meta(out_dir: Path, verb: str, cfg: RunConfig, extra=()) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_meta.txt"
    lines = [f"# wavebie {verb}"]
    lines.extend(f"# {item}" for item in extra)
    text = "\n".join(lines) + "\n" + serialize_config(cfg)
    path.write_text(text, encoding="utf-8")
    return path


def _sample_points(scene, wavespeeds, cap: int = 8):
    grid = FieldGrid.build(scene, 16, margin=0.4, guard=0.08)
    return {i: grid.points_in(i)[:cap] for i in range(len(wavespeeds))}


def _print_orders(label: str, dts, columns: dict) -> list:
    lines = []
    for name, errs in columns.items():
        errs = np.asarray(errs, dtype=float)
        keep = np.isfinite(errs) & (errs > 0)
        if keep.sum() < 3:
            continue
        fit = estimate_order(np.asarray(dts)[keep], errs[keep])
        tag = "monotone" if fit.monotone else "non-monotone"
        lines.append(f"{label} {name}: order {fit.slope:.2f} ({tag})")
    for line in lines:
        print(line)
    return lines


# ---------------------------------------------------------------------------
# frequency-domain convergence
# ---------------------------------------------------------------------------
def _cmd_freq_conv(args) -> int:
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    if cfg.kind != "frequency":
        raise ConfigError(f"preset {cfg.label!r} is not a frequency preset")
    degrees = sorted(set(_int_list(args.L)))
    if len(degrees) < 2:
        raise ConfigError("need at least two degrees, the largest is the reference")
    scene = cfg.build_scene()
    params = AssemblyParams()
    s0 = cfg.s_ref / cfg.wavespeeds[0]
    direction = np.asarray(cfg.direction, dtype=float)

    def value(pts):
        return cfg.amplitude * np.exp(-s0 * (pts @ direction))

    def gradient(pts):
        return -s0 * value(pts)[:, None] * direction[None, :]

    solutions = {}
    for L in degrees:
        system = assemble_F(scene, cfg.s_ref, L, cfg.wavespeeds, params)
        rhs = assemble_rhs_incident(scene, L, value, gradient)
        solutions[L] = system.solve(rhs)

    l_ref = degrees[-1]
    reference = solutions[l_ref]
    norms = TraceNorms(scene, l_ref, params=params)
    ids = range(len(cfg.wavespeeds))
    points = _sample_points(scene, cfg.wavespeeds)
    ref_fields = {
        i: subdomain_field(scene, cfg.wavespeeds, reference, i, cfg.s_ref,
                           points[i], l_ref)
        for i in ids if points[i].shape[0]
    }

    header = ["L"]
    for i in ids:
        header += [f"dirichlet{i}", f"neumann{i}"]
    header += [f"field{i}" for i in ids]
    rows = []
    columns = {name: [] for name in header[1:]}
    for L in degrees[:-1]:
        emb = embed_coeffs(scene, solutions[L], L, l_ref)
        diff = emb - reference
        row = [float(L)]
        for i in ids:
            for comp, name in ((DIRICHLET, f"dirichlet{i}"), (NEUMANN, f"neumann{i}")):
                err = (norms.boundary_norm(diff, i, comp)
                       / norms.boundary_norm(reference, i, comp))
                row.append(err)
                columns[name].append(err)
        for i in ids:
            if i not in ref_fields:
                row.append(float("nan"))
                columns[f"field{i}"].append(float("nan"))
                continue
            got = subdomain_field(scene, cfg.wavespeeds, emb, i, cfg.s_ref,
                                  points[i], l_ref)
            err = float(np.linalg.norm(got - ref_fields[i])
                        / np.linalg.norm(ref_fields[i]))
            row.append(err)
            columns[f"field{i}"].append(err)
        rows.append(row)

    out_dir = Path(cfg.out_dir)
    _write_meta(out_dir, "freq-conv", cfg,
                [f"degrees: {', '.join(str(v) for v in degrees)}",
                 f"reference degree: {l_ref}"])
    table_path = out_dir / f"{cfg.label}_errors.csv"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(f"{int(row[0])}," + ",".join(f"{v:.12e}" for v in row[1:]) + "\n")

    print(f"{cfg.label}: reference L={l_ref}, table -> {table_path}")
    print(" ".join(f"{name:>12}" for name in header))
    for row in rows:
        print(f"{int(row[0]):>12d} " + " ".join(f"{v:12.3e}" for v in row[1:]))
    _print_orders(cfg.label, [1.0 / L for L in degrees[:-1]], columns)
    return 0


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------
def _cmd_run(args) -> int:
    cfg = _load_base(args)
    if args.scheme:
        cfg = replace(cfg, scheme=args.scheme)
    if args.N is not None:
        cfg = replace(cfg, n_steps=int(args.N))
    start = time.perf_counter()
    run = run_simulation(cfg, threads=args.threads)
    wall = time.perf_counter() - start
    rc = run.diagnostics.frequency_conditions
    out_dir = Path(cfg.out_dir)
    extra = [
        f"scheme: {cfg.scheme}, N = {cfg.n_steps}, dim = {run.steps.shape[1]}",
        f"solve wall time: {wall:.2f} s",
        f"frequency rcond range: [{min(rc):.3e}, {max(rc):.3e}]",
    ]
    meta = _write_meta(out_dir, "run", cfg, extra)
    written = [str(meta)]
    if cfg.snapshot_times:
        grid = FieldGrid.build(run.scene, cfg.n_grid)
        values = field_on_grid(run, grid, threads=args.threads)
        written += write_snapshots(out_dir, cfg.label or "run", grid, values,
                                   run.times(), cfg.snapshot_times)
    print(f"{cfg.label}: {cfg.scheme} N={cfg.n_steps} L={cfg.max_degree} "
          f"solved in {wall:.2f} s")
    for path in written:
        print(f"  wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# time-step sweep
# ---------------------------------------------------------------------------
def _closed_form_field_refs(cfg, points, times):
    fields = cfg.manufactured_fields()
    refs = {}
    for i, pts in points.items():
        if not pts.shape[0]:
            continue
        if i in fields:
            refs[i] = np.stack([fields[i].value(pts, float(t)) for t in times])
        else:
            refs[i] = np.zeros((len(times), pts.shape[0]))
    return refs


def _field_errors(run, points, refs, interior_scale, threads):
    out = {}
    for i, pts in points.items():
        if not pts.shape[0] or i not in refs:
            continue
        vals = eval_field(run, i, pts, threads=threads)
        ref = refs[i]
        den = np.linalg.norm(ref)
        if den == 0.0:
            # exact solution vanishes here; report the absolute error against
            # the interior reference scale so the column stays meaningful
            rms = np.sqrt(np.mean(np.abs(vals) ** 2))
            out[i] = float(rms / interior_scale)
        else:
            out[i] = float(np.linalg.norm(vals - ref) / den)
    return out


def _cmd_sweep(args) -> int:
    base = _load_base(args)
    if base.kind == "frequency":
        raise ConfigError(f"preset {base.label!r} is not a time-domain preset")
    steps = sorted(set(_int_list(args.N))) if args.N else [base.n_steps // 2, base.n_steps]
    schemes = args.scheme.split(",") if args.scheme else [base.scheme]
    for name in schemes:
        if name not in _SCHEME_CHOICES:
            raise ConfigError(f"unknown scheme {name!r}; expected one of {_SCHEME_CHOICES}")
    closed_form = base.kind == "manufactured"
    if closed_form:
        row_steps = steps
    else:
        if len(steps) < 2:
            raise ConfigError("self-referenced sweep needs at least two step counts")
        for n in steps[:-1]:
            if steps[-1] % n:
                raise ConfigError(f"reference N={steps[-1]} must be a multiple of N={n}")
        row_steps = steps[:-1]

    scene = base.build_scene()
    ids = tuple(range(len(base.wavespeeds)))
    norms = TraceNorms(scene, base.max_degree, params=base.assembly_params())
    points = _sample_points(scene, base.wavespeeds)
    out_dir = Path(base.out_dir)
    _write_meta(out_dir, "sweep", base,
                [f"schemes: {', '.join(schemes)}",
                 f"step counts: {', '.join(str(n) for n in steps)}",
                 "reference: closed form" if closed_form
                 else f"reference: finest run (N = {steps[-1]})"])

    exit_code = 0
    for sch_name in schemes:
        runs = {}
        for n in steps:
            cfg = replace(base, scheme=sch_name, n_steps=n)
            start = time.perf_counter()
            runs[n] = run_simulation(cfg, threads=args.threads)
            print(f"{base.label}: {sch_name} N={n} solved "
                  f"in {time.perf_counter() - start:.2f} s")

        if closed_form:
            fields = base.manufactured_fields()
        else:
            ref_run = runs[steps[-1]]
            ref_fields_full = {
                i: eval_field(ref_run, i, pts, threads=args.threads)
                for i, pts in points.items() if pts.shape[0]
            }

        table = ErrorTable(subdomains=ids)
        columns = {}
        dts = []
        for n in row_steps:
            run = runs[n]
            times = run.times()
            if closed_form:
                ref_series = trace_series_from_fields(scene, base.max_degree,
                                                      fields, times)
                field_refs = _closed_form_field_refs(base, points, times)
                interior_scale = np.linalg.norm(field_refs[1]) if 1 in field_refs else 1.0
            else:
                stride = steps[-1] // n
                ref_series = ref_run.steps[::stride]
                field_refs = {i: v[::stride] for i, v in ref_fields_full.items()}
                interior_scale = 1.0
            dirichlet = {}
            neumann = {}
            for i in ids:
                for comp, dest in ((DIRICHLET, dirichlet), (NEUMANN, neumann)):
                    try:
                        dest[i] = trace_error(
                            run.steps, ref_series,
                            lambda v, i=i, comp=comp: norms.boundary_norm(v, i, comp))
                    except ZeroReferenceError:
                        pass
            field = _field_errors(run, points, field_refs, interior_scale,
                                  args.threads)
            dt = base.t_final / n
            table.add_row(n, dt, dirichlet, neumann, field)
            dts.append(dt)
            for i in ids:
                columns.setdefault(f"dirichlet{i}", []).append(dirichlet.get(i, np.nan))
                columns.setdefault(f"neumann{i}", []).append(neumann.get(i, np.nan))
                columns.setdefault(f"field{i}", []).append(field.get(i, np.nan))

        table_path = out_dir / f"errors_{base.label}_{sch_name}.csv"
        write_error_table(table_path, table)
        print(f"{base.label}: {sch_name} table -> {table_path}")
        _print_orders(f"{base.label} {sch_name}", dts, columns)

        if base.snapshot_times:
            finest = runs[steps[-1]]
            grid = FieldGrid.build(scene, base.n_grid)
            values = field_on_grid(finest, grid, threads=args.threads)
            paths = write_snapshots(out_dir, f"{base.label}_{sch_name}", grid,
                                    values, finest.times(), base.snapshot_times)
            print(f"{base.label}: {sch_name} snapshots -> {len(paths)} files")
    return exit_code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def _add_common(sub, n_help: str, scheme_help: str, lists: bool):
    sub.add_argument("--preset", default=None, help="named parameter set")
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--N", default=None, type=(str if lists else int), help=n_help)
    sub.add_argument("--scheme", default=None,
                     choices=None if lists else _SCHEME_CHOICES, help=scheme_help)
    sub.add_argument("--L", default=None, type=int, help="spectral degree override")
    sub.add_argument("--T", default=None, type=float, help="final time override")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--threads", default=1, type=int, help="solver threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavebie",
        description="Spectral boundary-integral solver for 2D acoustic "
                    "transmission problems in the time domain.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("selftest", help="run built-in numerical checks")
    p.set_defaults(func=_cmd_selftest)

    p = sub.add_parser("freq-conv",
                       help="single-frequency convergence over spectral degrees")
    p.add_argument("--preset", default="freq_a", help="frequency preset name")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--L", default="5,10,20,40,80",
                   help="comma list of degrees; the largest is the reference")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", default=1, type=int, help="solver threads")
    p.set_defaults(func=_cmd_freq_conv)

    p = sub.add_parser("run", help="one time-domain solve with snapshots")
    _add_common(p, "number of time steps", "time-stepping scheme", lists=False)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="time-step refinement study")
    _add_common(p, "comma list of step counts",
                "comma list of schemes", lists=True)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb != "selftest" and not (getattr(args, "preset", None)
                                        or getattr(args, "config", None)):
        print("config error: need --preset or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
