"""Chebyshev trial/test trace spaces on interface sides.

Per side, the trial family for both Dirichlet and Neumann trace components is
xi_l(u) = U_l(u) / J(u) and the dual test family is
chi_m(u) = U_m(u) sqrt(1 - u^2) / J(u), where U_l is the degree-l second-kind
Chebyshev polynomial and J the parametrization jacobian.  The jacobians cancel
against the arc-length measure in every Galerkin integral, which keeps the
operator entries polynomial-weighted and lets inner integrals reduce to
coefficient extraction.
"""

from __future__ import annotations

import numpy as np

from .geometry import Scene, SideView
from .specfun import ChebGrid, cheb2_coeffs, cheb2_rule, u_series_eval, u_values

DIRICHLET = 0
NEUMANN = 1


class BlockIndexMap:
    """Global coefficient layout: subdomain-major, interface ascending,
    Dirichlet before Neumann, degree ascending."""

    def __init__(self, scene: Scene, max_degree: int):
        if max_degree < 0:
            raise ValueError("max_degree must be >= 0")
        self.scene = scene
        self.max_degree = max_degree
        self.block = max_degree + 1
        self._offset: dict[tuple[int, int, int], int] = {}
        self._sub_start: list[int] = []
        pos = 0
        for i in range(scene.n_subdomains):
            self._sub_start.append(pos)
            for e in scene.neighbors(i):
                for comp in (DIRICHLET, NEUMANN):
                    self._offset[(i, e, comp)] = pos
                    pos += self.block
        self.total_dim = pos

    def offset(self, i: int, e: int, comp: int) -> int:
        return self._offset[(i, e, comp)]

    def slice(self, i: int, e: int, comp: int) -> slice:
        start = self._offset[(i, e, comp)]
        return slice(start, start + self.block)

    def subdomain_slice(self, i: int) -> slice:
        start = self._sub_start[i]
        end = self._sub_start[i + 1] if i + 1 < len(self._sub_start) else self.total_dim
        return slice(start, end)

    def sides(self) -> list[tuple[int, int]]:
        seen = []
        for i in range(self.scene.n_subdomains):
            for e in self.scene.neighbors(i):
                seen.append((i, e))
        return seen


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------
def eval_trial(side: SideView, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sum_l coeffs[l] xi_l(u)."""
    u = np.atleast_1d(np.asarray(u, float))
    return u_series_eval(coeffs, u) / side.jacobian(u)


def eval_test(side: SideView, coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sum_m coeffs[m] chi_m(u)."""
    u = np.atleast_1d(np.asarray(u, float))
    return u_series_eval(coeffs, u) * np.sqrt(1.0 - u * u) / side.jacobian(u)


def trial_coeffs(side: SideView, values: np.ndarray, grid: ChebGrid) -> np.ndarray:
    """Expansion of a trace (values at grid points) in the trial family."""
    return cheb2_coeffs(values * side.jacobian(grid.points), grid)


def moment_coeffs(values: np.ndarray, grid: ChebGrid) -> np.ndarray:
    """Galerkin moments <f, chi_m> of a trace sampled at grid points.

    The jacobians cancel, so this is (pi/2) times the second-kind coefficients.
    """
    return (np.pi / 2.0) * cheb2_coeffs(values, grid)


# ---------------------------------------------------------------------------
# Gram matrices for duality pairings
# ---------------------------------------------------------------------------
def weighted_gram(side: SideView, max_degree: int, n_quad: int | None = None) -> np.ndarray:
    """G[m, l] = <xi_l, chi_m> = int U_l U_m sqrt(1-u^2) / J du."""
    # 1/J can have complex singularities close to [-1, 1]; pad generously
    n = n_quad or (2 * max_degree + 192)
    u, w = cheb2_rule(n)
    vals = u_values(max_degree, u)
    wj = w / side.jacobian(u)
    return (vals * wj) @ vals.T


def reversed_gram(side: SideView, max_degree: int, n_quad: int | None = None) -> np.ndarray:
    """G[m, l] = int U_l(-u) U_m(u) sqrt(1-u^2) / J du.

    Pairing of the opposite side's trial family (parameter reversed across the
    interface) with this side's tests; equals weighted_gram times (-1)^l.
    """
    g = weighted_gram(side, max_degree, n_quad)
    signs = (-1.0) ** np.arange(max_degree + 1)
    return g * signs[None, :]
