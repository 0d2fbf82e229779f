"""Dense multiple-traces system at one complex frequency.

The global operator stacks per-subdomain Calderon blocks on the diagonal and
couples subdomains sharing an interface through plain duality pairings.  Rows
and columns follow BlockIndexMap: subdomain-major, interfaces ascending,
Dirichlet before Neumann, degree ascending.  Per side, the Dirichlet-test row
block pairs with Neumann-type data and vice versa (cross duality), matching
the row convention of bio_assembly.calderon_matrix.

Couplings and right-hand sides are frequency independent, so a matrix
template is precomputed once and only the diagonal blocks are re-evaluated
per frequency; that is what makes long frequency sweeps affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bio_assembly import AssemblyParams, calderon_matrix, subdomain_workspaces
from .geometry import Scene
from .specfun import cheb_grid
from .spectral_basis import (
    DIRICHLET,
    NEUMANN,
    BlockIndexMap,
    moment_coeffs,
    reversed_gram,
)


class SingularFrequencyError(RuntimeError):
    """Factorization of F(s) failed; s is a degenerate frequency."""


class TopologyError(ValueError):
    """Data referenced an interface the scene does not have."""


@dataclass
class MtfSystem:
    """Factorized Galerkin matrix of F(s), reusable for many right-hand sides."""

    s: complex
    index: BlockIndexMap
    matrix: np.ndarray
    rcond: float
    _lu: tuple

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, rhs)

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        scale = np.linalg.norm(rhs)
        if scale == 0.0:
            scale = 1.0
        return float(np.linalg.norm(self.matrix @ x - rhs) / scale)


class MtfAssembler:
    """Frequency-sweep assembler: geometry quadrature and couplings built once.

    wavespeeds holds c_i per subdomain; subdomain i is assembled at s/c_i.
    """

    def __init__(self, scene: Scene, max_degree: int, wavespeeds=None, params: AssemblyParams | None = None):
        self.scene = scene
        self.max_degree = max_degree
        self.params = params or AssemblyParams()
        if wavespeeds is None:
            wavespeeds = np.ones(scene.n_subdomains)
        self.wavespeeds = np.asarray(wavespeeds, float)
        if self.wavespeeds.shape != (scene.n_subdomains,):
            raise ValueError("need one wavespeed per subdomain")
        self.index = BlockIndexMap(scene, max_degree)
        self._work = [
            subdomain_workspaces(scene, i, max_degree, self.params)
            for i in range(scene.n_subdomains)
        ]
        self._template = self._coupling_template()

    def _coupling_template(self) -> np.ndarray:
        idx = self.index
        a = np.zeros((idx.total_dim, idx.total_dim), dtype=complex)
        for e, (p, q) in enumerate(self.scene.pairs):
            for i, k in ((p, q), (q, p)):
                # -1/2 X~ on the shared interface: the neighbor's trial family
                # seen through this side's tests, parameter reversed
                rg = reversed_gram(self.scene.side(i, e), self.max_degree)
                a[idx.slice(i, e, DIRICHLET), idx.slice(k, e, NEUMANN)] = 0.5 * rg
                a[idx.slice(i, e, NEUMANN), idx.slice(k, e, DIRICHLET)] = -0.5 * rg
        return a

    def matrix(self, s: complex) -> np.ndarray:
        a = self._template.copy()
        for i in range(self.scene.n_subdomains):
            blk = self.index.subdomain_slice(i)
            a[blk, blk] = calderon_matrix(
                self.scene, i, s / self.wavespeeds[i], self.max_degree,
                self.params, self._work[i],
            )
        return a

    def system(self, s: complex) -> MtfSystem:
        a = self.matrix(s)
        with np.errstate(all="ignore"):
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        diag = np.abs(np.diagonal(lu))
        if not np.all(np.isfinite(lu)) or diag.min() == 0.0:
            raise SingularFrequencyError(f"singular factorization at s={s}")
        rcond, _ = scipy.linalg.lapack.zgecon(lu, np.linalg.norm(a, 1))
        return MtfSystem(s=s, index=self.index, matrix=a, rcond=float(rcond), _lu=(lu, piv))


def assemble_F(scene: Scene, s: complex, max_degree: int, wavespeeds=None, params: AssemblyParams | None = None) -> MtfSystem:
    """One-shot system assembly; prefer MtfAssembler for frequency sweeps."""
    return MtfAssembler(scene, max_degree, wavespeeds, params).system(s)


def solve(system: MtfSystem, rhs: np.ndarray) -> np.ndarray:
    return system.solve(rhs)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------
def _default_quad(max_degree: int) -> int:
    return max(2 * max_degree + 64, 128)


def assemble_rhs_jumps(scene: Scene, max_degree: int, jumps, n_quad: int | None = None) -> np.ndarray:
    """Right-hand side from prescribed transmission jumps.

    jumps maps an interface id e with pair (p, q), p < q, to two callables
    (jd, jn) of physical points: jd = trace of u_p - u_q, jn = sum of the
    own-normal Neumann traces of both sides.  Per subdomain row group the
    Dirichlet-test block receives (1/2)<jn, test> and the Neumann-test block
    (1/2)<+-jd, test>, positive on the lower-indexed side.
    """
    index = BlockIndexMap(scene, max_degree)
    grid = cheb_grid(n_quad or _default_quad(max_degree))
    b = max_degree + 1
    g = np.zeros(index.total_dim, dtype=complex)
    for e, data in jumps.items():
        if not 0 <= e < len(scene.pairs):
            raise TopologyError(f"no interface {e}")
        jd, jn = data
        p, q = scene.pairs[e]
        for i, sd in ((p, 1.0), (q, -1.0)):
            pts = scene.side(i, e).point(grid.points)
            g[index.slice(i, e, DIRICHLET)] += 0.5 * moment_coeffs(np.asarray(jn(pts), complex), grid)[:b]
            g[index.slice(i, e, NEUMANN)] += 0.5 * sd * moment_coeffs(np.asarray(jd(pts), complex), grid)[:b]
    return g


def assemble_rhs_fields(scene: Scene, max_degree: int, fields, n_quad: int | None = None) -> np.ndarray:
    """Right-hand side when the exact field is known per subdomain.

    fields maps a subdomain id to a pair of callables (value, gradient) of
    physical points; subdomains without an entry carry the zero field.  On
    every interface the transmission data jd = u_p - u_q and jn = sum of
    own-normal Neumann traces is evaluated with each side's own quadrature
    points and normals, then routed with the assemble_rhs_jumps signs.
    """
    index = BlockIndexMap(scene, max_degree)
    grid = cheb_grid(n_quad or _default_quad(max_degree))
    b = max_degree + 1
    g = np.zeros(index.total_dim, dtype=complex)
    for i in fields:
        if not 0 <= i < scene.n_subdomains:
            raise TopologyError(f"no subdomain {i}")
    for e, (p, q) in enumerate(scene.pairs):
        if p not in fields and q not in fields:
            continue
        for i, sd in ((p, 1.0), (q, -1.0)):
            side = scene.side(i, e)
            pts = side.point(grid.points)
            nrm = side.normal(grid.points)
            jd = np.zeros(len(pts), dtype=complex)
            jn = np.zeros(len(pts), dtype=complex)
            for j, sj in ((p, 1.0), (q, -1.0)):
                if j not in fields:
                    continue
                value, gradient = fields[j]
                jd += sj * np.asarray(value(pts), complex)
                own = nrm if j == i else -nrm
                jn += np.einsum("nc,nc->n", np.asarray(gradient(pts), complex), own)
            g[index.slice(i, e, DIRICHLET)] += 0.5 * moment_coeffs(jn, grid)[:b]
            g[index.slice(i, e, NEUMANN)] += 0.5 * sd * moment_coeffs(jd, grid)[:b]
    return g


def assemble_rhs_incident(scene: Scene, max_degree: int, dirichlet, gradient, n_quad: int | None = None) -> np.ndarray:
    """Right-hand side for an incident field impinging from subdomain 0.

    dirichlet(points) -> values and gradient(points) -> (n, 2) vectors of the
    incident field.  The induced jumps across every exterior interface are
    [u] = -u_inc and [du/dn] = -du_inc/dn0, from the scattered-exterior /
    total-interior convention.
    """
    index = BlockIndexMap(scene, max_degree)
    grid = cheb_grid(n_quad or _default_quad(max_degree))
    b = max_degree + 1
    g = np.zeros(index.total_dim, dtype=complex)
    for e in scene.neighbors(0):
        k = scene.opposite(0, e)
        for i, sign in ((0, -1.0), (k, 1.0)):
            side = scene.side(i, e)
            pts = side.point(grid.points)
            nrm = side.normal(grid.points)
            gd = np.asarray(dirichlet(pts), complex)
            gn = np.einsum("nc,nc->n", np.asarray(gradient(pts), complex), nrm)
            # sign < 0: exterior side rows; gn is already w.r.t. that side's
            # own normal, which absorbs the n0 flip between the two sides
            g[index.slice(i, e, DIRICHLET)] += 0.5 * sign * moment_coeffs(gn, grid)[:b]
            g[index.slice(i, e, NEUMANN)] += 0.5 * sign * moment_coeffs(gd, grid)[:b]
    return g
