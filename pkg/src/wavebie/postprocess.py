"""Error norms, field reconstruction, convergence fits, and file output.

Trace errors are measured in equivalent H^{+-1/2} norms built from the single
layer operator at s = 10 per interface; fields are reconstructed from the
densities through the integral representation formula, in the frequency domain
directly and in the time domain by a forward convolution pass over the same
contour frequencies the solver used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bio_assembly import AssemblyParams, pair_workspace
from .cq_engine import cq_forward, steps_from_stages
from .geometry import Scene, SideView
from .specfun import bessel_k01, gauss_legendre, u_values
from .spectral_basis import DIRICHLET, NEUMANN, BlockIndexMap


class NormDefectError(RuntimeError):
    """The norm operator failed to produce a positive quadratic form."""


class ZeroReferenceError(ValueError):
    """Relative error is undefined: the reference series has zero norm."""


class GuardError(ValueError):
    """Field sample points violate the boundary guard band."""


# ---------------------------------------------------------------------------
# equivalent Sobolev norms
# ---------------------------------------------------------------------------
def u_pair_matrix(rows: int, cols: int) -> np.ndarray:
    """R[m, n] = int_{-1}^{1} U_m(u) U_n(u) du, exactly.

    Uses the product ladder U_m U_n = sum_j U_{m+n-2j} and the closed-form
    integral of a single U_k with unit weight.
    """
    out = np.zeros((rows + 1, cols + 1))
    kmax = rows + cols
    single = np.array([2.0 / (k + 1) if k % 2 == 0 else 0.0 for k in range(kmax + 1)])
    for m in range(rows + 1):
        for n in range(cols + 1):
            if (m + n) % 2 == 0:
                # the ladder runs k = |m-n|, |m-n|+2, ..., m+n
                out[m, n] = single[abs(m - n):m + n + 1:2].sum()
    return out


class NormOperator:
    """Equivalent H^{+-1/2} norms on one interface from V at s = 10.

    The Galerkin matrix of the single layer operator in the trial family,
    w[l', l] ~ <V xi_l, xi_l'>, is recovered from the assembled moment rows
    <V xi_l, chi_m> by re-expanding the image in second-kind Chebyshev
    polynomials up to an extended degree; the exact pairing matrix
    u_pair_matrix closes the contraction.  The result is symmetrized (the raw
    asymmetry, recorded in `asymmetry`, reflects the truncated re-expansion of
    corner-induced log terms in the image) and Cholesky-factorized.  The
    H^{+1/2} norm applies the inverse through that factorization, mediated by
    the trial mass matrix.
    """

    def __init__(self, side: SideView, max_degree: int, *, s_norm: float = 10.0,
                 extension: int = 48, params: AssemblyParams | None = None):
        self.side = side
        self.max_degree = max_degree
        self.s_norm = float(s_norm)
        b = max_degree + 1
        ext_degree = max_degree + extension
        ws = pair_workspace(side, side, ext_degree, params)
        v = ws.blocks(complex(self.s_norm))["V"][:, :b]
        if np.abs(v.imag).max() > 1e-12 * np.abs(v.real).max():
            raise NormDefectError("single layer matrix not real at real s")
        w = (2.0 / np.pi) * u_pair_matrix(max_degree, ext_degree) @ v.real
        scale = np.abs(w).max()
        self.asymmetry = float(np.abs(w - w.T).max() / scale)
        w = 0.5 * (w + w.T)
        self.matrix = w
        try:
            self._cho = scipy.linalg.cho_factor(w)
        except np.linalg.LinAlgError as exc:
            raise NormDefectError(f"V({self.s_norm}) Galerkin matrix not positive definite") from exc
        self.mass = _trial_mass(side, max_degree)

    def norm(self, coeffs: np.ndarray, order: float) -> float:
        """Equivalent Sobolev norm of a trial-coefficient vector.

        order -1/2: <V phi, phi>^{1/2}; order +1/2: <V^{-1} u, u>^{1/2}.
        """
        c = np.asarray(coeffs).reshape(-1)
        if c.size != self.max_degree + 1:
            raise ValueError(f"expected {self.max_degree + 1} coefficients, got {c.size}")
        if order == -0.5:
            q = float(np.real(np.vdot(c, self.matrix @ c)))
        elif order == 0.5:
            b = self.mass @ c
            q = float(np.real(np.vdot(b, scipy.linalg.cho_solve(self._cho, b))))
        else:
            raise ValueError("order must be +0.5 or -0.5")
        tol = 1e-12 * max(1.0, float(np.real(np.vdot(c, c))))
        if q < -tol:
            raise NormDefectError(f"quadratic form returned {q}")
        return float(np.sqrt(max(q, 0.0)))


def _trial_mass(side: SideView, max_degree: int) -> np.ndarray:
    """M[l', l] = <xi_l, xi_l'> = int U_l U_l' / J du."""
    rule = gauss_legendre(2 * max_degree + 192)
    vals = u_values(max_degree, rule.nodes)
    wj = rule.weights / side.jacobian(rule.nodes)
    return (vals * wj) @ vals.T


def trace_norm(op: NormOperator, coeffs: np.ndarray, order: float) -> float:
    return op.norm(coeffs, order)


_COMP_ORDER = {DIRICHLET: 0.5, NEUMANN: -0.5}


class TraceNorms:
    """Per-interface norm operators for a scene, with the side bookkeeping.

    One operator is built per interface on the first-listed subdomain's view;
    the opposite view differs only by the parameter reversal u -> -u, realized
    on coefficients as the diagonal sign flip (-1)^l.
    """

    def __init__(self, scene: Scene, max_degree: int, *, s_norm: float = 10.0,
                 extension: int = 48, params: AssemblyParams | None = None):
        self.scene = scene
        self.max_degree = max_degree
        self.index = BlockIndexMap(scene, max_degree)
        self.ops = {
            e: NormOperator(scene.side(p, e), max_degree, s_norm=s_norm,
                            extension=extension, params=params)
            for e, (p, _) in enumerate(scene.pairs)
        }
        self._flip = (-1.0) ** np.arange(max_degree + 1)

    def _canonical(self, vec: np.ndarray, i: int, e: int, comp: int) -> np.ndarray:
        c = np.asarray(vec)[self.index.slice(i, e, comp)]
        if i == self.scene.pairs[e][0]:
            return c
        return c * self._flip

    def side_norm(self, vec: np.ndarray, i: int, e: int, comp: int) -> float:
        return self.ops[e].norm(self._canonical(vec, i, e, comp), _COMP_ORDER[comp])

    def boundary_norm(self, vec: np.ndarray, i: int, comp: int) -> float:
        """Norm over all of subdomain i's boundary: root sum of side norms."""
        return float(np.sqrt(sum(
            self.side_norm(vec, i, e, comp) ** 2 for e in self.scene.neighbors(i))))

    def jump_norm(self, vec: np.ndarray, e: int, comp: int) -> float:
        """Transmission mismatch of a solution vector across interface e.

        Dirichlet traces must match; Neumann traces are taken in each side's
        own normal, so continuity of the flux means they must cancel.
        """
        p, q = self.scene.pairs[e]
        cp = self._canonical(vec, p, e, comp)
        cq = self._canonical(vec, q, e, comp)
        mism = cp - cq if comp == DIRICHLET else cp + cq
        return self.ops[e].norm(mism, _COMP_ORDER[comp])


def embed_coeffs(scene: Scene, vec: np.ndarray, from_degree: int, to_degree: int) -> np.ndarray:
    """Zero-extend a coefficient vector to a higher degree (nested basis)."""
    if to_degree < from_degree:
        raise ValueError("target degree below source degree")
    src = BlockIndexMap(scene, from_degree)
    dst = BlockIndexMap(scene, to_degree)
    vec = np.asarray(vec)
    out = np.zeros(vec.shape[:-1] + (dst.total_dim,), dtype=vec.dtype)
    for i, e in src.sides():
        for comp in (DIRICHLET, NEUMANN):
            s_src = src.slice(i, e, comp)
            start = dst.offset(i, e, comp)
            out[..., start:start + src.block] = vec[..., s_src]
    return out


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------
def trace_series_from_fields(scene: Scene, max_degree: int, fields: dict, times) -> np.ndarray:
    """Trial-coefficient series of known fields' traces, shape (n_times, dim).

    fields maps subdomain id to an object with value(points, t) and
    gradient(points, t); traces are taken in each subdomain's own outward
    normal.  Subdomains without an entry contribute zero rows (their exact
    trace is zero in manufactured setups).
    """
    from .specfun import cheb_grid
    from .spectral_basis import trial_coeffs

    index = BlockIndexMap(scene, max_degree)
    grid = cheb_grid(2 * max_degree + 40)
    times = np.asarray(times, float)
    out = np.zeros((times.size, index.total_dim))
    for i, f in fields.items():
        for e in scene.neighbors(i):
            side = scene.side(i, e)
            pts = side.point(grid.points)
            nrm = side.normal(grid.points)
            for n, t in enumerate(times):
                gd = trial_coeffs(side, f.value(pts, float(t)), grid)[:max_degree + 1]
                gn = trial_coeffs(
                    side, np.einsum("nc,nc->n", f.gradient(pts, float(t)), nrm),
                    grid)[:max_degree + 1]
                out[n, index.slice(i, e, DIRICHLET)] = gd
                out[n, index.slice(i, e, NEUMANN)] = gn
    return out


def trace_error(series: np.ndarray, ref_series: np.ndarray, spatial_norm) -> float:
    """Relative l2-in-time trace error: ||ref - x|| / ||ref||.

    spatial_norm maps one time sample (coefficient vector) to a nonnegative
    real; both series have shape (n_times, dim).
    """
    x = np.atleast_2d(np.asarray(series))
    ref = np.atleast_2d(np.asarray(ref_series))
    if x.shape != ref.shape:
        raise ValueError(f"series shapes differ: {x.shape} vs {ref.shape}")
    num = np.sqrt(sum(spatial_norm(ref[n] - x[n]) ** 2 for n in range(ref.shape[0])))
    den = np.sqrt(sum(spatial_norm(ref[n]) ** 2 for n in range(ref.shape[0])))
    if den == 0.0:
        raise ZeroReferenceError("reference series has zero norm")
    return float(num / den)


def field_error(values: np.ndarray, ref_values: np.ndarray) -> float:
    """Relative field error: flat l2 over (time, sample point) pairs."""
    u = np.asarray(values)
    ref = np.asarray(ref_values)
    if u.shape != ref.shape:
        raise ValueError(f"field shapes differ: {u.shape} vs {ref.shape}")
    den = float(np.sqrt(np.sum(np.abs(ref) ** 2)))
    if den == 0.0:
        raise ZeroReferenceError("reference field has zero norm")
    return float(np.sqrt(np.sum(np.abs(ref - u) ** 2)) / den)


# ---------------------------------------------------------------------------
# field reconstruction
# ---------------------------------------------------------------------------
def potential_matrix(scene: Scene, i: int, s_i: complex, points: np.ndarray,
                     max_degree: int, n_quad: int = 192) -> np.ndarray:
    """Representation-formula map from subdomain i's stacked trace coefficients
    to field values at off-boundary points.

    Green's identity with the side views' own outward normals gives
    u_i(x) = (S_i gamma_n u_i)(x) - (D_i gamma_d u_i)(x), so Dirichlet columns
    carry the negated double layer and Neumann columns the single layer.
    Column layout matches BlockIndexMap: per side, Dirichlet block then
    Neumann block, degree ascending.
    """
    pts = np.asarray(points, float)
    rule = gauss_legendre(n_quad)
    b = max_degree + 1
    sides = scene.neighbors(i)
    out = np.empty((pts.shape[0], 2 * b * len(sides)), dtype=complex)
    uvals = u_values(max_degree, rule.nodes)
    for k, e in enumerate(sides):
        side = scene.side(i, e)
        y = side.point(rule.nodes)
        nrm = side.normal(rule.nodes)
        diff = pts[:, None, :] - y[None, :, :]
        r = np.hypot(diff[:, :, 0], diff[:, :, 1])
        k0, k1 = bessel_k01(s_i * r)
        # jacobians cancel against the 1/J in the trial family
        single = (k0 / (2.0 * np.pi) * rule.weights) @ uvals.T
        ndot = np.einsum("pnc,nc->pn", diff, nrm) / r
        double = (s_i * k1 / (2.0 * np.pi) * ndot * rule.weights) @ uvals.T
        out[:, 2 * b * k:2 * b * k + b] = -double
        out[:, 2 * b * k + b:2 * b * (k + 1)] = single
    return out


def subdomain_field(scene: Scene, wavespeeds, vec: np.ndarray, i: int, s: complex,
                    points: np.ndarray, max_degree: int, n_quad: int = 192) -> np.ndarray:
    """Frequency-domain field of subdomain i from a full solution vector."""
    index = BlockIndexMap(scene, max_degree)
    p = potential_matrix(scene, i, s / wavespeeds[i], points, max_degree, n_quad)
    return p @ np.asarray(vec)[index.subdomain_slice(i)]


def check_guard(scene: Scene, i: int, points: np.ndarray, guard: float) -> None:
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GuardError("points must have shape (n, 2)")
    owner = scene.locate(pts)
    if np.any(owner != i):
        raise GuardError(f"{int(np.sum(owner != i))} points outside subdomain {i}")
    dist = scene.skeleton_distance(pts)
    limit = guard * scene.diameter()
    if np.any(dist < limit):
        raise GuardError(
            f"{int(np.sum(dist < limit))} points inside the {limit:.3g} guard band")


def eval_field(run, subdomain: int, points: np.ndarray, *, n_quad: int = 192,
               guard: float = 0.05, threads: int = 1) -> np.ndarray:
    """Field time series u_i(x, t_n) at step times, shape (N+1, n_points).

    Runs the forward convolution of the representation formula over the same
    contour frequencies the solve used, on the scheme-native samples.
    """
    pts = np.asarray(points, float)
    check_guard(run.scene, subdomain, pts, guard)
    scene = run.scene
    c_i = run.assembler.wavespeeds[subdomain]
    blk = run.assembler.index.subdomain_slice(subdomain)
    max_degree = run.config.max_degree

    def op(s, v):
        p = potential_matrix(scene, subdomain, s / c_i, pts, max_degree, n_quad)
        return p @ v[blk]

    vals, _ = cq_forward(run.scheme, run.grid, op, run.samples, threads=threads)
    if run.scheme.multistage:
        vals = steps_from_stages(vals)
    return vals.real


# ---------------------------------------------------------------------------
# sample grids and snapshots
# ---------------------------------------------------------------------------
@dataclass
class FieldGrid:
    """Regular lattice over the scene with ownership and guard-band mask."""

    scene: Scene
    nx: int
    ny: int
    bbox: tuple
    points: np.ndarray
    owner: np.ndarray
    distance: np.ndarray
    guard: float

    @classmethod
    def build(cls, scene: Scene, n_grid: int, *, margin: float = 0.5,
              guard: float = 0.05) -> "FieldGrid":
        xmin, xmax, ymin, ymax = scene.bbox(margin)
        xs = np.linspace(xmin, xmax, n_grid)
        ys = np.linspace(ymin, ymax, n_grid)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return cls(
            scene=scene, nx=n_grid, ny=n_grid, bbox=(xmin, xmax, ymin, ymax),
            points=pts, owner=scene.locate(pts),
            distance=scene.skeleton_distance(pts), guard=guard,
        )

    def mask(self, i: int) -> np.ndarray:
        return (self.owner == i) & (self.distance >= self.guard * self.scene.diameter())

    def points_in(self, i: int) -> np.ndarray:
        return self.points[self.mask(i)]


def field_on_grid(run, grid: FieldGrid, *, n_quad: int = 192, threads: int = 1) -> np.ndarray:
    """Total field on the grid at all step times; guarded points are NaN.

    For incident-wave runs the exterior values include the incident field, so
    snapshots show the physical total wave; manufactured runs have no incident
    term.  Shape (N+1, n_points).
    """
    n_times = run.grid.n_steps + 1
    out = np.full((n_times, grid.points.shape[0]), np.nan)
    for i in range(run.scene.n_subdomains):
        m = grid.mask(i)
        if not m.any():
            continue
        pts = grid.points[m]
        vals = eval_field(run, i, pts, n_quad=n_quad, guard=grid.guard, threads=threads)
        if i == 0 and run.config.kind == "plane_wave":
            wave = run.config.wave()
            for n, t in enumerate(run.times()):
                vals[n] += wave.value(pts, float(t))
        out[:, m] = vals
    return out


def write_snapshot(path, grid: FieldGrid, values: np.ndarray, time: float) -> None:
    """One plain-text field matrix; header line: nx ny xmin xmax ymin ymax t."""
    xmin, xmax, ymin, ymax = grid.bbox
    rows = np.asarray(values).reshape(grid.ny, grid.nx)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{grid.nx} {grid.ny} {xmin:.12e} {xmax:.12e} "
                 f"{ymin:.12e} {ymax:.12e} {time:.12e}\n")
        for row in rows:
            fh.write(" ".join(f"{v:.12e}" for v in row) + "\n")


def write_snapshots(out_dir, prefix: str, grid: FieldGrid, values: np.ndarray,
                    times: np.ndarray, snapshot_times) -> list:
    """Write one file per requested time, snapped to the nearest step."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    times = np.asarray(times, float)
    paths = []
    for k, t in enumerate(snapshot_times):
        n = int(np.argmin(np.abs(times - t)))
        path = os.path.join(out_dir, f"{prefix}_snap{k:02d}.txt")
        write_snapshot(path, grid, values[n], float(times[n]))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# convergence fits and tables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class OrderFit:
    """Least-squares slope of log(error) against log(dt).

    monotone is False when the errors fail to decrease strictly with dt,
    which marks the fitted slope as low-quality.
    """

    slope: float
    monotone: bool


def estimate_order(dts, errors) -> OrderFit:
    dts = np.asarray(dts, float)
    errors = np.asarray(errors, float)
    if dts.size < 3 or dts.size != errors.size:
        raise ValueError("need at least 3 matching (dt, error) pairs")
    if np.any(errors <= 0.0) or np.any(dts <= 0.0):
        raise ValueError("errors and dts must be positive")
    order = np.argsort(dts)[::-1]
    e = errors[order]
    monotone = bool(np.all(np.diff(e) < 0.0))
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return OrderFit(slope=slope, monotone=monotone)


@dataclass
class ErrorTable:
    """Per-resolution relative errors: traces per subdomain boundary, fields
    per subdomain."""

    subdomains: tuple
    n_steps: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    def add_row(self, n: int, dt: float, dirichlet: dict, neumann: dict, fields: dict) -> None:
        self.n_steps.append(int(n))
        self.dts.append(float(dt))
        for i in self.subdomains:
            self.dirichlet.setdefault(i, []).append(dirichlet.get(i, float("nan")))
            self.neumann.setdefault(i, []).append(neumann.get(i, float("nan")))
            self.fields.setdefault(i, []).append(fields.get(i, float("nan")))


def write_error_table(path, table: ErrorTable) -> None:
    cols = ["N", "dt"]
    for i in table.subdomains:
        cols += [f"dirichlet{i}", f"neumann{i}"]
    cols += [f"field{i}" for i in table.subdomains]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in range(len(table.n_steps)):
            row = [str(table.n_steps[r]), f"{table.dts[r]:.12e}"]
            for i in table.subdomains:
                row += [f"{table.dirichlet[i][r]:.12e}", f"{table.neumann[i][r]:.12e}"]
            row += [f"{table.fields[i][r]:.12e}" for i in table.subdomains]
            fh.write(",".join(row) + "\n")
