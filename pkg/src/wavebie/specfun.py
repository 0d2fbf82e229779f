"""Special functions and quadrature primitives.

Provides the numerical kernels everything else is built on:

- modified Bessel functions K0/K1 of complex argument on Re z >= 0
  (power series, Steed continued fraction, asymptotic expansion, with
  documented switchover radii), plus the regularized combinations
  K0(z) + log z and K1(z) - 1/z that stay finite as z -> 0,
- Gauss-Legendre quadrature rules,
- Chebyshev point sets with the fast second-kind coefficient transform
  (a type-1 discrete sine transform) and evaluation/derivative helpers
  for Chebyshev polynomials of both kinds.

All functions are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, dst

EULER_GAMMA = 0.5772156649015328606065

# Switchover radii for the K0/K1 evaluation regions. The series suffers
# cancellation ~ eps * exp(|z| + Re z), so it is kept to small |z| except
# near the imaginary axis where the budget is eps * exp(|z|). The continued
# fraction requires Re z > 0 and converges slowly near the axis; the
# asymptotic expansion has optimal-truncation error ~ exp(-2|z|).
# series to 5 costs ~4e-12 from cancellation, asym from 12 ~4e-12 from
# truncation; both sit 25x inside the 1e-10 budget and keep the slow
# continued-fraction band as thin as possible
_SERIES_RADIUS = 5.0
_AXIS_SERIES_RADIUS = 11.0
_AXIS_RATIO = 0.12
_ASYM_RADIUS = 12.0
_CF2_MAXIT = 600
_SERIES_MAXIT = 60


# ---------------------------------------------------------------------------
# Modified Bessel K0 / K1, complex argument
# ---------------------------------------------------------------------------
_SER_TERMS_SMALL = 21   # covers |z| <= _SERIES_RADIUS to ~1e-19
_SER_TERMS_AXIS = 31    # covers |z| <= _AXIS_SERIES_RADIUS


def _series_tables(n_terms: int) -> np.ndarray:
    """Scalar coefficient rows, in w = z^2/4, for the four small-z series:
    I0, sum H_k w^k/(k!)^2, I1 shape, and the K1 companion sum."""
    k = np.arange(n_terms, dtype=float)
    fact = np.cumprod(np.concatenate(([1.0], k[1:])))
    harm = np.concatenate(([0.0], np.cumsum(1.0 / k[1:])))
    c_i0 = 1.0 / fact**2
    c_s0 = harm / fact**2
    c_i1 = 1.0 / (fact * fact * (k + 1.0))
    c_s1 = (2.0 * harm + 1.0 / (k + 1.0) - 2.0 * EULER_GAMMA) * c_i1
    return np.vstack([c_i0, c_s0, c_i1, c_s1]).astype(complex)


_SERIES_TABLE = {n: _series_tables(n) for n in (_SER_TERMS_SMALL, _SER_TERMS_AXIS)}


def _powers(w: np.ndarray, n_terms: int) -> np.ndarray:
    """Stack (n_terms, n) of w^k via one cumulative-multiply sweep."""
    p = np.empty((n_terms, w.size), dtype=complex)
    p[0] = 1.0
    for k in range(1, n_terms):
        np.multiply(p[k - 1], w, out=p[k])
    return p


def _series_sums(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    w = (0.25 * z * z).reshape(-1)
    n_terms = _SER_TERMS_SMALL if np.abs(w).max(initial=0.0) <= 0.25 * _SERIES_RADIUS**2 + 1e-9 else _SER_TERMS_AXIS
    sums = _SERIES_TABLE[n_terms] @ _powers(w, n_terms)
    return tuple(row.reshape(z.shape) for row in sums)


def _k01_series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Power series for (K0, K1); accurate for small |z| (DLMF 10.31)."""
    lg = np.log(0.5 * z)
    i0, s0, i1s, s1 = _series_sums(z)
    i1 = 0.5 * z * i1s
    k0 = -(lg + EULER_GAMMA) * i0 + s0
    k1 = 1.0 / z + lg * i1 - 0.25 * z * s1
    return k0, k1


def _k01_cf2(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Steed/Temme continued fraction for (K0, K1); needs Re z > 0.

    Elements converge at very different rates (slower towards the imaginary
    axis), so converged entries are retired from the working set every few
    iterations instead of dragging the whole array to the last straggler.
    """
    a1 = 0.25
    shape = z.shape
    zv = z.reshape(-1)
    h_out = np.empty_like(zv)
    s_out = np.empty_like(zv)
    idx = np.arange(zv.size)
    b = 2.0 * (1.0 + zv)
    d = 1.0 / b
    delh = d.copy()
    h = d.copy()
    q1 = np.zeros_like(zv)
    q2 = np.ones_like(zv)
    q = np.full_like(zv, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _CF2_MAXIT):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh *= b * d - 1.0
        h += delh
        dels = q * delh
        s += dels
        if i % 4 == 0 or i == _CF2_MAXIT - 1:
            done = np.abs(dels) <= 1e-17 * np.abs(s)
            if np.any(done):
                h_out[idx[done]] = h[done]
                s_out[idx[done]] = s[done]
                if done.all():
                    idx = idx[:0]
                    break
                keep = ~done
                idx = idx[keep]
                b, d, delh, h, q1, q2, q, s = (
                    arr[keep] for arr in (b, d, delh, h, q1, q2, q, s)
                )
    if idx.size:
        h_out[idx] = h
        s_out[idx] = s
    h_out = a1 * h_out.reshape(shape)
    s_out = s_out.reshape(shape)
    k0 = np.sqrt(np.pi / (2.0 * z)) * np.exp(-z) / s_out
    k1 = k0 * (z + 0.5 - h_out) / z
    return k0, k1


_ASYM_TERMS = 23    # truncation near-optimal at the |z| ~ 11 entry radius


def _asym_tables(n_terms: int) -> np.ndarray:
    k = np.arange(1, n_terms, dtype=float)
    a0 = np.concatenate(([1.0], np.cumprod(-((2.0 * k - 1.0) ** 2) / (8.0 * k))))
    a1 = np.concatenate(([1.0], np.cumprod((4.0 - (2.0 * k - 1.0) ** 2) / (8.0 * k))))
    return np.vstack([a0, a1]).astype(complex)


_ASYM_TABLE = _asym_tables(_ASYM_TERMS)


def _k01_asym(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Large-|z| asymptotic expansion for (K0, K1) in powers of 1/z."""
    v = (1.0 / z).reshape(-1)
    s0, s1 = _ASYM_TABLE @ _powers(v, _ASYM_TERMS)
    pre = np.sqrt(np.pi / (2.0 * z)) * np.exp(-z)
    return pre * s0.reshape(z.shape), pre * s1.reshape(z.shape)


def bessel_k01(z) -> tuple[np.ndarray, np.ndarray]:
    """Modified Bessel functions (K0(z), K1(z)) for complex z with Re z >= 0.

    Parameters
    ----------
    z : complex scalar or array
        Arguments with Re z >= 0 and z != 0.

    Returns
    -------
    (K0, K1) : complex arrays of the broadcast shape of z.

    Notes
    -----
    Three regimes, selected per element: power series for |z| <= 3 (and up
    to |z| <= 11 within a narrow sector around the imaginary axis where the
    continued fraction degrades), Steed's continued fraction for the middle
    annulus with Re z bounded away from the axis, and the exponential
    asymptotic expansion for |z| >= 16 (earlier near the axis).
    """
    z = np.asarray(z, dtype=np.complex128)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z == 0):
        raise ValueError("bessel_k01: z = 0 is a logarithmic singularity")
    if np.any(z.real < -1e-13 * np.abs(z)):
        raise ValueError("bessel_k01: requires Re z >= 0")
    r = np.abs(z)
    near_axis = z.real <= _AXIS_RATIO * r
    m_series = (r <= _SERIES_RADIUS) | (near_axis & (r <= _AXIS_SERIES_RADIUS))
    m_asym = ~m_series & ((r >= _ASYM_RADIUS) | near_axis)
    m_cf2 = ~m_series & ~m_asym
    k0 = np.empty_like(z)
    k1 = np.empty_like(z)
    for mask, fn in ((m_series, _k01_series), (m_cf2, _k01_cf2), (m_asym, _k01_asym)):
        if np.any(mask):
            a, b = fn(z[mask])
            k0[mask] = a
            k1[mask] = b
    if scalar:
        return k0[0], k1[0]
    return k0, k1


def bessel_k0(z):
    """K0(z) for complex z with Re z >= 0 (see bessel_k01)."""
    return bessel_k01(z)[0]


def bessel_k1(z):
    """K1(z) for complex z with Re z >= 0 (see bessel_k01)."""
    return bessel_k01(z)[1]


def _kreg_series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Small-z series for (K0(z) + log z, K1(z) - 1/z) without cancellation."""
    lg = np.log(0.5 * z)
    w = (0.25 * z * z).reshape(-1)
    table = _SERIES_TABLE[_SER_TERMS_SMALL]
    p = _powers(w, _SER_TERMS_SMALL)
    # I0 - 1 through the shifted series: no subtraction of near-equal terms
    i0m1 = ((table[0, 1:] @ p[:-1]) * w).reshape(z.shape)
    s0 = (table[1] @ p).reshape(z.shape)
    i1s = (table[2] @ p).reshape(z.shape)
    s1 = (table[3] @ p).reshape(z.shape)
    i1 = 0.5 * z * i1s
    kreg = np.log(2.0) - EULER_GAMMA - (lg + EULER_GAMMA) * i0m1 + s0
    k1r = lg * i1 - 0.25 * z * s1
    return kreg, k1r


def kreg01(z) -> tuple[np.ndarray, np.ndarray]:
    """Regularized pair (K0(z) + log z, K1(z) - 1/z), finite as z -> 0.

    K0(z) + log z -> log 2 - gamma and K1(z) - 1/z -> 0. Used to split the
    logarithmic singularity out of layer-potential kernels. Domain as in
    bessel_k01.
    """
    z = np.asarray(z, dtype=np.complex128)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z.real < -1e-13 * np.abs(z)):
        raise ValueError("kreg01: requires Re z >= 0")
    zero = z == 0
    small = (np.abs(z) <= _SERIES_RADIUS) & ~zero
    kreg = np.empty_like(z)
    k1r = np.empty_like(z)
    if np.any(zero):
        kreg[zero] = np.log(2.0) - EULER_GAMMA
        k1r[zero] = 0.0
    if np.any(small):
        a, b = _kreg_series(z[small])
        kreg[small] = a
        k1r[small] = b
    large = ~small & ~zero
    if np.any(large):
        zz = z[large]
        a, b = bessel_k01(zz)
        kreg[large] = a + np.log(zz)
        k1r[large] = b - 1.0 / zz
    if scalar:
        return kreg[0], k1r[0]
    return kreg, k1r


def kreg0(z):
    """K0(z) + log z, finite as z -> 0 (limit log 2 - gamma)."""
    return kreg01(z)[0]


def k1reg(z):
    """K1(z) - 1/z, finite as z -> 0 (limit 0)."""
    return kreg01(z)[1]


def zk1(z):
    """z * K1(z), finite as z -> 0 (limit 1); stable at small |z|."""
    z = np.asarray(z, dtype=np.complex128)
    return 1.0 + z * k1reg(z)


# ---------------------------------------------------------------------------
# Gauss-Legendre quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre rule on (-1, 1).

    Attributes
    ----------
    nodes : (n,) float array, strictly increasing, symmetric about 0.
    weights : (n,) float array, positive, summing to 2.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def validate(self) -> None:
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("GaussRule: nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("GaussRule: weights must be positive")
        if abs(self.weights.sum() - 2.0) > 1e-13:
            raise ValueError("GaussRule: weights must sum to 2")

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Apply the rule along `axis` of values sampled at the nodes."""
        return np.tensordot(values, self.weights, axes=([axis], [0]))


def gauss_legendre(n: int) -> GaussRule:
    """Gauss-Legendre rule with n nodes (exact for degree <= 2n - 1)."""
    if n < 1:
        raise ValueError("gauss_legendre: n must be >= 1")
    x, w = np.polynomial.legendre.leggauss(n)
    rule = GaussRule(nodes=x, weights=w)
    rule.validate()
    return rule


def cheb2_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the sqrt(1 - u^2) weight: int f(u) sqrt(1-u^2) du = sum w f(u).

    Exact for polynomial f of degree <= 2n - 1; nodes are the interior
    second-kind Chebyshev points (descending).
    """
    if n < 1:
        raise ValueError("cheb2_rule: n must be >= 1")
    theta = np.arange(1, n + 1) * np.pi / (n + 1)
    return np.cos(theta), np.pi / (n + 1) * np.sin(theta) ** 2


# ---------------------------------------------------------------------------
# Chebyshev grids and transforms
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ChebGrid:
    """Interior Chebyshev sampling grid for the second-kind transform.

    angles theta_j = j pi / (N_c + 1), j = 1..N_c; points tau_j = cos theta_j
    (strictly decreasing, all interior to (-1, 1)).
    """

    order: int
    angles: np.ndarray
    points: np.ndarray

    def validate(self) -> None:
        if self.order < 1:
            raise ValueError("ChebGrid: order must be >= 1")
        if np.any(np.abs(self.points) >= 1):
            raise ValueError("ChebGrid: points must be interior to (-1, 1)")
        if np.any(np.diff(self.points) >= 0):
            raise ValueError("ChebGrid: points must be strictly monotone")


def cheb_grid(n: int) -> ChebGrid:
    """Grid of n interior second-kind Chebyshev angles/points."""
    j = np.arange(1, n + 1)
    theta = j * np.pi / (n + 1)
    grid = ChebGrid(order=n, angles=theta, points=np.cos(theta))
    grid.validate()
    return grid


def cheb2_coeffs(values: np.ndarray, grid: ChebGrid, axis: int = -1) -> np.ndarray:
    """Second-kind Chebyshev coefficients from samples on a ChebGrid.

    For K sampled at the grid points, returns f with
    K(tau) ~ sum_l f[l] * U_l(tau), computed as a type-1 DST of
    K(cos theta_j) sin theta_j (since U_l(cos t) sin t = sin((l+1) t)).
    Exact (to roundoff) for polynomials of degree <= N_c - 1.

    Parameters
    ----------
    values : array with values.shape[axis] == grid.order
    grid : ChebGrid
    axis : sampling axis

    Returns
    -------
    Coefficient array, same shape as values.
    """
    if values.shape[axis] != grid.order:
        raise ValueError("cheb2_coeffs: sample count does not match grid")
    sin_t = np.sin(grid.angles)
    shape = [1] * values.ndim
    shape[axis] = grid.order
    weighted = values * sin_t.reshape(shape)
    return dst(weighted, type=1, axis=axis) / (grid.order + 1)


def cheb1_points(n: int) -> np.ndarray:
    """First-kind Chebyshev nodes cos((j + 1/2) pi / n), j = 0..n-1 (descending)."""
    if n < 1:
        raise ValueError("cheb1_points: n must be >= 1")
    return np.cos((np.arange(n) + 0.5) * np.pi / n)


def cheb1_coeffs(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """First-kind Chebyshev coefficients from samples at cheb1_points.

    Returns a with f(tau) ~ sum_n a[n] T_n(tau) (a[0] unhalved in the sum);
    exact for polynomials of degree <= n - 1.  The weighted projections follow
    as int f T_m / sqrt(1-tau^2) dtau = (pi/2) a[m] for m >= 1, pi a[0] at m=0.
    """
    n = values.shape[axis]
    a = dct(values, type=2, axis=axis) / n
    sl = [slice(None)] * values.ndim
    sl[axis] = 0
    a[tuple(sl)] *= 0.5
    return a


def u_values(max_degree: int, t: np.ndarray) -> np.ndarray:
    """Matrix of second-kind Chebyshev values U_l(t), l = 0..max_degree.

    Returns array of shape (max_degree + 1,) + t.shape.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((max_degree + 1,) + t.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = 2.0 * t
    for l in range(2, max_degree + 1):
        out[l] = 2.0 * t * out[l - 1] - out[l - 2]
    return out


def t_values(max_degree: int, t: np.ndarray) -> np.ndarray:
    """Matrix of first-kind Chebyshev values T_n(t), n = 0..max_degree."""
    t = np.asarray(t, dtype=float)
    out = np.empty((max_degree + 1,) + t.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = t.copy()
    for n in range(2, max_degree + 1):
        out[n] = 2.0 * t * out[n - 1] - out[n - 2]
    return out


def u_deriv_values(max_degree: int, t: np.ndarray) -> np.ndarray:
    """Matrix of derivatives dU_l/dt, l = 0..max_degree."""
    t = np.asarray(t, dtype=float)
    u = u_values(max_degree, t)
    out = np.empty_like(u)
    out[0] = 0.0
    if max_degree >= 1:
        out[1] = 2.0
    for l in range(1, max_degree):
        # d/dt of U_{l+1} = 2 t U_l - U_{l-1}
        out[l + 1] = 2.0 * u[l] + 2.0 * t * out[l] - out[l - 1]
    return out


def cheb_eval_u(l: int, t):
    """Value of the second-kind Chebyshev polynomial U_l at t."""
    return u_values(l, np.asarray(t, dtype=float))[l]


def cheb_eval_t(n: int, t):
    """Value of the first-kind Chebyshev polynomial T_n at t."""
    return t_values(n, np.asarray(t, dtype=float))[n]


def cheb_deriv_u(l: int, t):
    """Derivative dU_l/dt at t."""
    return u_deriv_values(l, np.asarray(t, dtype=float))[l]


def u_series_eval(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate sum_l coeffs[..., l] U_l(t) by Clenshaw recurrence.

    coeffs has the series along its last axis; t is broadcast against the
    leading axes. Returns array of shape broadcast(coeffs[..., 0], t).
    """
    t = np.asarray(t)
    c = np.asarray(coeffs)
    b1 = np.zeros(np.broadcast(c[..., 0], t).shape, dtype=np.result_type(c, t))
    b2 = b1.copy()
    for k in range(c.shape[-1] - 1, -1, -1):
        b1, b2 = c[..., k] + 2.0 * t * b1 - b2, b1
    return b1


def t_series_eval(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate sum_n coeffs[..., n] T_n(t) by Clenshaw recurrence."""
    t = np.asarray(t)
    c = np.asarray(coeffs)
    b1 = np.zeros(np.broadcast(c[..., 0], t).shape, dtype=np.result_type(c, t))
    b2 = b1.copy()
    for k in range(c.shape[-1] - 1, 0, -1):
        b1, b2 = c[..., k] + 2.0 * t * b1 - b2, b1
    return c[..., 0] + t * b1 - b2


def t_coeffs_from_u(u_coeffs: np.ndarray) -> np.ndarray:
    """Convert a second-kind expansion to first-kind coefficients.

    Uses U_l = 2 (T_l + T_{l-2} + ...) with the trailing T_0 counted once:
    a_n = 2 * sum_{l >= n, l = n mod 2} f_l for n >= 1, and
    a_0 = sum_{l even} f_l. Operates along the last axis.
    """
    f = np.asarray(u_coeffs)
    a = np.zeros_like(f)
    for par in (0, 1):
        sl = f[..., par::2]
        csum = np.cumsum(sl[..., ::-1], axis=-1)[..., ::-1]
        a[..., par::2] = 2.0 * csum
    a[..., 0] *= 0.5
    return a
