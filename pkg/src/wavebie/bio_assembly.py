"""Galerkin assembly of Laplace-domain layer operator blocks.

For a pair of sides (test side X, trial side Y, both belonging to one
subdomain) and a complex frequency s with Re s >= 0, the four operator blocks
are the (L+1)^2 matrices

    V[m,l]  = <V  xi_l, chi_m>     single layer
    K[m,l]  = <K  xi_l, chi_m>     double layer
    Kp[m,l] = <K' xi_l, chi_m>     adjoint double layer
    W[m,l]  = <W  xi_l, chi_m>     hypersingular

with kernels built on G(r) = K0(s r) / (2 pi).  Jacobians cancel against the
trial/test scalings, so every entry is a kernel integral against polynomial
moments.  Three pair classes get distinct quadrature:

  self pairs       outer Gauss nodes, inner Chebyshev coefficient extraction,
                   with the log|eta - tau| part split off and integrated by
                   closed forms
  junction pairs   tensor composite Gauss graded dyadically toward the shared
                   corner(s), built in angular coordinates so the endpoint
                   weights stay benign
  separated pairs  the same two-stage spectral pipeline on the plain kernel

Hypersingular blocks use the arc-wise rearrangement

    <W f, g> = <V f', g'> + s^2 <V (n.n) f, g>
               - sum_e sign(e) f(e) int G(|y(e) - x|) g'(x) ds_x

(test functions vanish at endpoints, so only trial endpoint terms survive;
sign(+1) = +1, sign(-1) = -1 from the parameter orientation).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import SideView, shared_endpoints
from .specfun import (
    bessel_k0,
    bessel_k01,
    cheb1_coeffs,
    cheb1_points,
    cheb2_coeffs,
    cheb_grid,
    gauss_legendre,
    kreg0,
    kreg01,
    t_series_eval,
    u_deriv_values,
    u_values,
)

INV2PI = 1.0 / (2.0 * np.pi)


class AssemblyError(RuntimeError):
    """Raised when an operator block comes out non-finite."""


@dataclass(frozen=True)
class AssemblyParams:
    """Quadrature sizes for operator assembly."""

    n_outer: int = 160
    n_inner_self: int = 1024
    n_inner_separated: int = 768
    graded_levels: int = 12
    graded_order: int = 24
    endpoint_levels: int = 30
    endpoint_order: int = 24
    taylor_cut: float = 2e-3

    def inner_self(self, max_degree: int) -> int:
        return max(self.n_inner_self, 2 * max_degree + 16)

    def inner_separated(self, max_degree: int) -> int:
        return max(self.n_inner_separated, 2 * max_degree + 16)

    @classmethod
    def lean(cls) -> "AssemblyParams":
        """Sweep profile: smaller smooth-part grids for many-frequency runs.

        Block errors stay near 3e-10 for |s| <= 10 and reach ~5e-5 only by
        |s| ~ 200, where the time-domain data spectrum has already decayed;
        single-frequency studies should keep the defaults.
        """
        return cls(n_inner_self=384, n_inner_separated=384)

    @classmethod
    def coarse(cls) -> "AssemblyParams":
        """Quick-look profile, block errors ~4e-7 at moderate frequencies."""
        return cls(n_outer=96, n_inner_self=192, n_inner_separated=192,
                   graded_levels=8, graded_order=16,
                   endpoint_levels=18, endpoint_order=16)


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------
@lru_cache(maxsize=32)
def _theta_graded(levels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on theta in (0, pi), dyadically graded to both ends.

    The top-of-pyramid panels are capped at pi/8: the grading only needs to
    shrink towards the singular endpoints, while wide central panels would
    under-resolve the smooth factors on strongly curved sides.
    """
    fr = 0.5 * np.pi * 2.0 ** -np.arange(levels, -1.0, -1.0)
    breaks = np.concatenate([[0.0], fr, np.pi - fr[::-1][1:], [np.pi]])
    cap = np.pi / 8.0
    rule = gauss_legendre(order)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        pieces = max(int(np.ceil((b - a) / cap)), 1)
        for edge in np.linspace(a, b, pieces + 1)[:-1]:
            half = 0.5 * (b - a) / pieces
            nodes.append(edge + half * (rule.nodes + 1.0))
            weights.append(half * rule.weights)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# closed forms for the log|eta - tau| moments
# ---------------------------------------------------------------------------
def _j_moments(nmax: int) -> np.ndarray:
    """J_k = int U_k(t) dt = 2/(k+1) for even k, else 0; k = 0..nmax."""
    k = np.arange(nmax + 1)
    return np.where(k % 2 == 0, 2.0 / (k + 1.0), 0.0)


def _tu_moments(max_l: int, max_n: int) -> np.ndarray:
    """I[l, n] = int T_n(t) U_l(t) dt = (J_{l+n} + J_{l-n}) / 2.

    Index extension: J_{-1} = 0 and J_{-k} = -J_{k-2} for k >= 2.
    """
    j = _j_moments(max_l + max_n + 2)

    def jx(idx: np.ndarray) -> np.ndarray:
        out = np.where(idx >= 0, j[np.clip(idx, 0, None)], 0.0)
        neg = idx <= -2
        out = np.where(neg, -j[np.clip(-idx - 2, 0, None)], out)
        return out

    l = np.arange(max_l + 1)[:, None]
    n = np.arange(max_n + 1)[None, :]
    return 0.5 * (jx(l + n) + jx(l - n))


@lru_cache(maxsize=16)
def log_moment_matrix(max_degree: int) -> np.ndarray:
    """M[m, l] = int int log|eta - tau| U_l(eta) U_m(tau) sqrt(1-tau^2) dtau deta.

    The inner integral has the closed form
      Lam_m(eta) = -(pi/2) [ log 2 delta_{m0} + T_m(eta)/m [m>=1]
                             - T_{m+2}(eta)/(m+2) ]
    and the outer integral of T_n against U_l is _tu_moments.
    """
    L = max_degree
    ii = _tu_moments(L, L + 2)
    j = _j_moments(L)
    out = np.zeros((L + 1, L + 1))
    for m in range(L + 1):
        row = -ii[:, m + 2] / (m + 2)
        if m >= 1:
            row = row + ii[:, m] / m
        out[m] = -(np.pi / 2.0) * row
    out[0] += -np.log(2.0) * (np.pi / 2.0) * j
    return out


# ---------------------------------------------------------------------------
# side-local scalar factors
# ---------------------------------------------------------------------------
def _beta(side: SideView, u: np.ndarray) -> np.ndarray:
    return 1.0 / side.jacobian(u)


def _beta_prime(side: SideView, u: np.ndarray) -> np.ndarray:
    d1 = side.deriv(u, 1)
    d2 = side.deriv(u, 2)
    j = np.hypot(d1[:, 0], d1[:, 1])
    return -(d1 * d2).sum(axis=1) / j**3


def _p_matrix(side: SideView, max_degree: int, u: np.ndarray) -> np.ndarray:
    """P_l(u) = d/du [ U_l(u) / J(u) ], shape (L+1, n)."""
    return u_deriv_values(max_degree, u) * _beta(side, u) + u_values(max_degree, u) * _beta_prime(side, u)


def _q_sin_matrix(side: SideView, max_degree: int, theta: np.ndarray) -> np.ndarray:
    """sin(theta) * Q_m(cos theta) where Q_m = d/dtau [U_m sqrt(1-tau^2)/J].

    Q_m = -(m+1) T_{m+1} / (J sqrt(1-tau^2)) + (1/J)' U_m sqrt(1-tau^2); the
    sin factor keeps the endpoint blowup out of the stored values.
    """
    tau = np.cos(theta)
    b = _beta(side, tau)
    bp = _beta_prime(side, tau)
    m1 = np.arange(1, max_degree + 2)[:, None]
    return -m1 * np.cos(m1 * theta) * b[None, :] + np.sin(m1 * theta) * (bp * np.sin(theta))[None, :]


def _u_sin_matrix(max_degree: int, theta: np.ndarray) -> np.ndarray:
    """U_m(cos theta) sin(theta) = sin((m+1) theta), shape (L+1, n)."""
    m1 = np.arange(1, max_degree + 2)[:, None]
    return np.sin(m1 * theta)


# ---------------------------------------------------------------------------
# endpoint-stabilized chord distances
# ---------------------------------------------------------------------------
def _anchored_chord(side: SideView, anchor: float, theta: np.ndarray) -> np.ndarray:
    """Distances |x(anchor) - x(cos theta)| for anchor = +-1.

    Near the anchor the direct difference cancels catastrophically, so the
    smooth chord ratio q(tau) = |x(anchor) - x(tau)| / |anchor - tau| is
    interpolated from safely-interior samples; the parameter distance itself
    comes from the half-angle form, which stays exact down to underflow.
    """
    samples = cheb1_points(96)
    d = side.point(np.full(1, anchor)) - side.point(samples)
    q2 = (d * d).sum(axis=1) / (anchor - samples) ** 2
    coeff = cheb1_coeffs(q2)
    q2_at = t_series_eval(coeff, np.cos(theta))
    half = 0.5 * theta
    pdist = 2.0 * (np.sin(half) ** 2 if anchor > 0 else np.cos(half) ** 2)
    return pdist * np.sqrt(np.maximum(q2_at, 0.0))


def _plain_chord(side: SideView, point: np.ndarray, tau: np.ndarray) -> np.ndarray:
    d = point[None, :] - side.point(tau)
    return np.hypot(d[:, 0], d[:, 1])


class _EndpointTerms:
    """Trial-endpoint corrections of the hypersingular block.

    For each trial endpoint e: sign(e) * f_l(e) * int G(s, |y(e)-x|) Q_m dtau,
    integrated by the theta-graded rule (handles both the log distance when
    y(e) lies on the test arc and the 1/sqrt endpoint factor in Q_m).
    """

    def __init__(self, side_x: SideView, side_y: SideView, max_degree: int, params: AssemblyParams):
        theta, wg = _theta_graded(params.endpoint_levels, params.endpoint_order)
        tau = np.cos(theta)
        self.sqw = _q_sin_matrix(side_x, max_degree, theta) * wg[None, :]
        corner_map = dict(shared_endpoints(side_y, side_x))  # trial endpoint -> test anchor
        self.dists = []
        self.trial_vals = []
        self.signs = []
        lvals = np.arange(max_degree + 1)
        for e in (-1.0, 1.0):
            anchor = corner_map.get(e)
            if anchor is not None:
                dist = _anchored_chord(side_x, anchor, theta)
            else:
                dist = _plain_chord(side_x, side_y.point(np.full(1, e))[0], tau)
            self.dists.append(dist)
            beta_e = _beta(side_y, np.full(1, e))[0]
            self.trial_vals.append(np.sign(e) ** lvals * (lvals + 1.0) * beta_e)
            self.signs.append(-np.sign(e))

    def evaluate(self, s: complex) -> np.ndarray:
        out = 0.0
        for dist, tv, sg in zip(self.dists, self.trial_vals, self.signs):
            k0 = bessel_k0(s * dist)
            out = out + sg * INV2PI * np.outer(self.sqw @ k0, tv)
        return out


# ---------------------------------------------------------------------------
# self pairs
# ---------------------------------------------------------------------------
def _side_is_straight(side: SideView) -> bool:
    u = np.linspace(-1.0, 1.0, 7)
    d1 = np.abs(side.deriv(u, 1)).max()
    return max(np.abs(side.deriv(u, k)).max() for k in (2, 3, 4)) < 1e-13 * max(d1, 1.0)


class _SelfPair:
    """One side against itself: log-split spectral pipeline."""

    def __init__(self, side: SideView, max_degree: int, params: AssemblyParams):
        L = self.max_degree = max_degree
        self.params = params
        rule = gauss_legendre(params.n_outer)
        eta, w = rule.nodes, rule.weights
        self.grid2 = cheb_grid(params.inner_self(L))
        tau2 = self.grid2.points
        tau1 = cheb1_points(self.grid2.order)
        self.straight = _side_is_straight(side)

        self.r2, self.logq2, kratio, kpratio, self.nn2 = _self_geometry(side, eta, tau2, params, full=True)
        self.r1, self.logq1 = _self_geometry(side, eta, tau1, params, full=False)
        self.kratio = kratio  # numerator of K over r^2, or None when straight
        self.kpratio = kpratio

        u_eta = u_values(L, eta)
        self.out_u = u_eta * w[None, :]
        self.out_p = _p_matrix(side, L, eta) * w[None, :]
        self.beta_t1 = _beta(side, tau1)
        self.betap_t2 = _beta_prime(side, tau2)

        self.log2d = log_moment_matrix(L)
        self.wcc_log = _wcc_log_matrix(side, L)
        self.wnn_log = _wnn_log_matrix(self.nn2, self.grid2, eta, w, u_eta, L)
        self.endpoints = _EndpointTerms(side, side, L, params)

    def blocks(self, s: complex) -> dict[str, np.ndarray]:
        L = self.max_degree
        z = s * self.r2
        kr0, k1r = kreg01(z)
        r2 = kr0 - np.log(s) - self.logq2
        v = INV2PI * (_pipe2(r2, self.grid2, self.out_u, L) - self.log2d)
        if self.straight:
            kb = np.zeros((L + 1, L + 1), dtype=complex)
            kpb = np.zeros_like(kb)
        else:
            z1 = 1.0 + z * k1r
            kb = _pipe2(INV2PI * self.kratio * z1, self.grid2, self.out_u, L)
            kpb = _pipe2(INV2PI * self.kpratio * z1, self.grid2, self.out_u, L)
        r1 = kreg0(s * self.r1) - np.log(s) - self.logq1
        wcc = INV2PI * _pipe_dual(r1 * self.beta_t1[None, :], r2 * self.betap_t2[None, :], self.grid2, self.out_p, L)
        wnn = INV2PI * _pipe2(r2 * self.nn2, self.grid2, self.out_u, L) + self.wnn_log
        wb = wcc + self.wcc_log + s * s * wnn + self.endpoints.evaluate(s)
        return _check_blocks({"V": v, "K": kb, "Kp": kpb, "W": wb})


def _self_geometry(side: SideView, eta: np.ndarray, tau: np.ndarray, params: AssemblyParams, full: bool):
    """Chord length, log chord ratio and kernel numerators on eta x tau grids.

    All quantities are evaluated through Taylor expansions in delta = tau - eta
    inside |delta| < taylor_cut, using the analytic curve derivatives, which
    removes the cancellation in the direct differences near the diagonal.
    """
    delta = tau[None, :] - eta[:, None]
    x_t = side.point(tau)
    y_e = side.point(eta)
    dvec = x_t[None, :, :] - y_e[:, None, :]
    if _side_is_straight(side):
        jac = side.jacobian(np.zeros(1))[0]
        r = np.abs(delta) * jac
        logq = np.full_like(delta, np.log(jac))
        if not full:
            return r, logq
        return r, logq, None, None, np.ones_like(delta)

    g = {k: side.deriv(eta, k) for k in (1, 2, 3, 4)}
    gt = {k: side.deriv(tau, k) for k in (1, 2, 3, 4)}
    n_e = side.normal(eta)
    n_t = side.normal(tau)

    near = np.abs(delta) < params.taylor_cut
    # q^2 = |x(tau) - y(eta)|^2 / delta^2, expanded about eta
    a0 = (g[1] * g[1]).sum(axis=1)
    a1 = (g[1] * g[2]).sum(axis=1)
    a2 = 0.25 * (g[2] * g[2]).sum(axis=1) + (g[1] * g[3]).sum(axis=1) / 3.0
    a3 = (g[2] * g[3]).sum(axis=1) / 6.0 + (g[1] * g[4]).sum(axis=1) / 12.0
    q2_taylor = a0[:, None] + delta * (a1[:, None] + delta * (a2[:, None] + delta * a3[:, None]))
    with np.errstate(divide="ignore", invalid="ignore"):
        q2_direct = (dvec * dvec).sum(axis=2) / (delta * delta)
    q2 = np.where(near, q2_taylor, q2_direct)
    r = np.abs(delta) * np.sqrt(q2)
    logq = 0.5 * np.log(q2)
    if not full:
        return r, logq

    # K numerator (x - y).n(eta) / delta^2, expanded about eta
    d2 = (g[2] * n_e).sum(axis=1)
    d3 = (g[3] * n_e).sum(axis=1)
    d4 = (g[4] * n_e).sum(axis=1)
    nk_taylor = 0.5 * d2[:, None] + delta * (d3[:, None] / 6.0 + delta * d4[:, None] / 24.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        nk_direct = np.einsum("jkc,jc->jk", dvec, n_e) / (delta * delta)
    nk = np.where(near, nk_taylor, nk_direct)

    # K' numerator (y - x).n(tau) / delta^2, expanded about tau
    e2 = (gt[2] * n_t).sum(axis=1)
    e3 = (gt[3] * n_t).sum(axis=1)
    e4 = (gt[4] * n_t).sum(axis=1)
    nkp_taylor = 0.5 * e2[None, :] - delta * (e3[None, :] / 6.0 - delta * e4[None, :] / 24.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        nkp_direct = -np.einsum("jkc,kc->jk", dvec, n_t) / (delta * delta)
    nkp = np.where(near, nkp_taylor, nkp_direct)

    nn = np.einsum("kc,jc->jk", n_t, n_e)
    return r, logq, nk / q2, nkp / q2, nn


def _pipe2(slab: np.ndarray, grid, out_u: np.ndarray, max_degree: int) -> np.ndarray:
    """Two-stage pipeline: inner coefficient extraction, outer Gauss contraction."""
    coeff = cheb2_coeffs(slab, grid, axis=1)[:, : max_degree + 1]
    return (np.pi / 2.0) * coeff.T @ out_u.T


def _pipe_dual(slab1: np.ndarray, slab2: np.ndarray, grid, out_p: np.ndarray, max_degree: int) -> np.ndarray:
    """Inner integral against Q_m: first-kind part from slab1 (times beta at
    first-kind nodes), second-kind part from slab2 (times beta') ."""
    a = cheb1_coeffs(slab1, axis=1)
    m1 = np.arange(1, max_degree + 2)
    inner = -(np.pi / 2.0) * m1[None, :] * a[:, 1 : max_degree + 2]
    inner = inner + (np.pi / 2.0) * cheb2_coeffs(slab2, grid, axis=1)[:, : max_degree + 1]
    return inner.T @ out_p.T


def _wcc_log_matrix(side: SideView, max_degree: int) -> np.ndarray:
    """Closed form of -(1/2pi) intint log|eta-tau| P_l(eta) Q_m(tau).

    The inner integral reduces by parts to a finite-part integral with the
    exact value pi sum_k c_k T_{k+1}(eta), where c are the U-expansion
    coefficients of U_m / J.
    """
    n_cc = max(2 * max_degree + 160, 256)
    gridc = cheb_grid(n_cc)
    beta_c = _beta(side, gridc.points)
    c = cheb2_coeffs(u_values(max_degree, gridc.points) * beta_c[None, :], gridc, axis=1)  # (L+1, n_cc)
    n_pt = (max_degree + n_cc) // 2 + 48
    rule = gauss_legendre(n_pt)
    p_vals = _p_matrix(side, max_degree, rule.nodes) * rule.weights[None, :]
    k1 = np.arange(1, n_cc + 1)[:, None]
    t_shift = np.cos(k1 * np.arccos(rule.nodes)[None, :])  # T_{k+1} at nodes
    ptint = p_vals @ t_shift.T  # (L+1, n_cc)
    return -0.5 * c @ ptint.T  # [m, l]


def _wnn_log_matrix(nn: np.ndarray, grid, eta: np.ndarray, w: np.ndarray, u_eta: np.ndarray, max_degree: int) -> np.ndarray:
    """-(1/2pi) intint log|eta-tau| (n.n) U_l(eta) U_m(tau) sqrt(1-tau^2).

    Inner integrals come from the exact tail sums Psi_q(eta) = -(pi/2) T_q/q
    (Psi_0 = -(pi/2) log 2) applied to the U-expansion of the smooth slice.
    """
    shat = cheb2_coeffs(nn, grid, axis=1)  # (n_o, N)
    keep = max(np.nonzero(np.abs(shat).max(axis=0) > 1e-15 * np.abs(shat).max())[0].max() + 1, max_degree + 1)
    shat = shat[:, :keep]
    qmax = keep + max_degree + 2
    theta_e = np.arccos(eta)
    q = np.arange(qmax + 1)
    psi = np.empty((qmax + 1, eta.size))
    psi[0] = -(np.pi / 2.0) * np.log(2.0)
    psi[1:] = -(np.pi / 2.0) * np.cos(q[1:, None] * theta_e[None, :]) / q[1:, None]
    p_idx = np.arange(keep)
    a = np.empty((max_degree + 1, eta.size))
    for m in range(max_degree + 1):
        rows = psi[np.abs(p_idx - m)] - psi[p_idx + m + 2]
        a[m] = (shat.T * rows).sum(axis=0)
    return -INV2PI * a @ (u_eta * w[None, :]).T


# ---------------------------------------------------------------------------
# junction pairs
# ---------------------------------------------------------------------------
class _JunctionPair:
    """Sides sharing one or two corners: tensor graded quadrature."""

    def __init__(self, side_x: SideView, side_y: SideView, max_degree: int, params: AssemblyParams):
        L = self.max_degree = max_degree
        self.side_x = side_x
        self.side_y = side_y
        theta, wg = _theta_graded(params.graded_levels, params.graded_order)
        self.tau = np.cos(theta)
        sin_t = np.sin(theta)
        self.test_v = _u_sin_matrix(L, theta) * (wg * sin_t)[None, :]
        self.test_q = _q_sin_matrix(side_x, L, theta) * wg[None, :]
        u_vals = _u_sin_matrix(L, theta) / sin_t[None, :]
        self.trial_u = u_vals * (wg * sin_t)[None, :]
        self.trial_p = _p_matrix(side_y, L, self.tau) * (wg * sin_t)[None, :]
        self.endpoints = _EndpointTerms(side_x, side_y, L, params)

    def _geometry(self):
        x = self.side_x.point(self.tau)
        nx = self.side_x.normal(self.tau)
        y = self.side_y.point(self.tau)
        ny = self.side_y.normal(self.tau)
        dvec = x[None, :, :] - y[:, None, :]  # [j (eta), k (tau), 2]
        # corner-adjacent node pairs sit below subtraction resolution; their
        # weights are ~1e-35, so flooring the distance only avoids 0/0
        r2 = np.maximum((dvec * dvec).sum(axis=2), 1e-30)
        r = np.sqrt(r2)
        nk = np.einsum("jkc,jc->jk", dvec, ny) / r2
        nkp = -np.einsum("jkc,kc->jk", dvec, nx) / r2
        nn = np.einsum("kc,jc->jk", nx, ny)
        return r, nk, nkp, nn

    def blocks(self, s: complex) -> dict[str, np.ndarray]:
        r, nk, nkp, nn = self._geometry()
        k0, k1 = bessel_k01(s * r)
        g = INV2PI * k0
        z1 = s * r * k1
        v = self.test_v @ g.T @ self.trial_u.T
        kb = self.test_v @ (INV2PI * nk * z1).T @ self.trial_u.T
        kpb = self.test_v @ (INV2PI * nkp * z1).T @ self.trial_u.T
        wb = self.test_q @ g.T @ self.trial_p.T
        wb = wb + s * s * (self.test_v @ (g * nn).T @ self.trial_u.T)
        wb = wb + self.endpoints.evaluate(s)
        return _check_blocks({"V": v, "K": kb, "Kp": kpb, "W": wb})


# ---------------------------------------------------------------------------
# separated pairs
# ---------------------------------------------------------------------------
class _SeparatedPair:
    """Disjoint sides: plain two-stage spectral pipeline."""

    def __init__(self, side_x: SideView, side_y: SideView, max_degree: int, params: AssemblyParams):
        L = self.max_degree = max_degree
        self.side_x = side_x
        self.side_y = side_y
        rule = gauss_legendre(params.n_outer)
        self.eta, w = rule.nodes, rule.weights
        self.grid2 = cheb_grid(params.inner_separated(L))
        self.tau1 = cheb1_points(self.grid2.order)
        u_eta = u_values(L, self.eta)
        self.out_u = u_eta * w[None, :]
        self.out_p = _p_matrix(side_y, L, self.eta) * w[None, :]
        self.beta_t1 = _beta(side_x, self.tau1)
        self.betap_t2 = _beta_prime(side_x, self.grid2.points)
        self.endpoints = _EndpointTerms(side_x, side_y, L, params)

    def _geometry(self, tau: np.ndarray, full: bool):
        x = self.side_x.point(tau)
        y = self.side_y.point(self.eta)
        dvec = x[None, :, :] - y[:, None, :]
        r2 = (dvec * dvec).sum(axis=2)
        r = np.sqrt(r2)
        if not full:
            return r
        nx = self.side_x.normal(tau)
        ny = self.side_y.normal(self.eta)
        nk = np.einsum("jkc,jc->jk", dvec, ny) / r2
        nkp = -np.einsum("jkc,kc->jk", dvec, nx) / r2
        nn = np.einsum("kc,jc->jk", nx, ny)
        return r, nk, nkp, nn

    def blocks(self, s: complex) -> dict[str, np.ndarray]:
        L = self.max_degree
        r, nk, nkp, nn = self._geometry(self.grid2.points, full=True)
        k0, k1 = bessel_k01(s * r)
        g2 = INV2PI * k0
        z1 = s * r * k1
        v = _pipe2(g2, self.grid2, self.out_u, L)
        kb = _pipe2(INV2PI * nk * z1, self.grid2, self.out_u, L)
        kpb = _pipe2(INV2PI * nkp * z1, self.grid2, self.out_u, L)
        g1 = INV2PI * bessel_k0(s * self._geometry(self.tau1, full=False))
        wb = _pipe_dual(g1 * self.beta_t1[None, :], g2 * self.betap_t2[None, :], self.grid2, self.out_p, L)
        wb = wb + s * s * _pipe2(g2 * nn, self.grid2, self.out_u, L)
        wb = wb + self.endpoints.evaluate(s)
        return _check_blocks({"V": v, "K": kb, "Kp": kpb, "W": wb})


# ---------------------------------------------------------------------------
# dispatch and subdomain assembly
# ---------------------------------------------------------------------------
def _check_blocks(blocks: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    for name, mat in blocks.items():
        if not np.all(np.isfinite(mat)):
            raise AssemblyError(f"operator block {name} is not finite")
    return blocks


def pair_workspace(side_x: SideView, side_y: SideView, max_degree: int, params: AssemblyParams | None = None):
    """Build the quadrature workspace for one (test, trial) side pair."""
    params = params or AssemblyParams()
    if side_x.param is side_y.param and side_x.flag == side_y.flag:
        return _SelfPair(side_x, max_degree, params)
    if shared_endpoints(side_x, side_y):
        return _JunctionPair(side_x, side_y, max_degree, params)
    return _SeparatedPair(side_x, side_y, max_degree, params)


def operator_blocks(side_x: SideView, side_y: SideView, s: complex, max_degree: int, params: AssemblyParams | None = None) -> dict[str, np.ndarray]:
    """One-shot operator blocks for a side pair at frequency s."""
    return pair_workspace(side_x, side_y, max_degree, params).blocks(s)


def subdomain_workspaces(scene, i: int, max_degree: int, params: AssemblyParams | None = None) -> dict:
    """Workspaces for all ordered side pairs of subdomain i."""
    params = params or AssemblyParams()
    sides = scene.neighbors(i)
    out = {}
    for ex in sides:
        for ey in sides:
            out[(ex, ey)] = pair_workspace(scene.side(i, ex), scene.side(i, ey), max_degree, params)
    return out


def calderon_matrix(scene, i: int, s_i: complex, max_degree: int, params: AssemblyParams | None = None, workspaces: dict | None = None) -> np.ndarray:
    """Galerkin Calderon block of subdomain i at frequency s_i = s / c_i.

    Row/column layout per side (ascending interface id): Dirichlet block then
    Neumann block, degree ascending.  Row blocks hold [W, K'; -K, V] so that
    the interior Calderon identity reads A gamma = (1/2) gamma.
    """
    if workspaces is None:
        workspaces = subdomain_workspaces(scene, i, max_degree, params)
    sides = scene.neighbors(i)
    b = max_degree + 1
    dim = 2 * b * len(sides)
    a = np.zeros((dim, dim), dtype=complex)
    for ix, ex in enumerate(sides):
        rd = slice(2 * b * ix, 2 * b * ix + b)
        rn = slice(2 * b * ix + b, 2 * b * (ix + 1))
        for iy, ey in enumerate(sides):
            cd = slice(2 * b * iy, 2 * b * iy + b)
            cn = slice(2 * b * iy + b, 2 * b * (iy + 1))
            blk = workspaces[(ex, ey)].blocks(s_i)
            a[rd, cd] = blk["W"]
            a[rd, cn] = blk["Kp"]
            a[rn, cd] = -blk["K"]
            a[rn, cn] = blk["V"]
    return a
