"""Independent quadrature oracles for the operator-block tests.

Deliberately written from scratch against the kernel definitions, with no
reuse of the assembly pipeline: composite Gauss rules graded toward singular
points, closed-form chord lengths on circles and segments (cancellation-free
at any separation), and finite differences for the scalar derivative factors.
"""

import numpy as np

from wavebie.geometry import InterfaceParam, SideView, segment_param
from wavebie.specfun import bessel_k01, cheb2_rule, gauss_legendre, u_deriv_values, u_values

TWO_PI = 2.0 * np.pi


def _warped_arc_param(radius, th0, th1, warp, center, label="warped-arc"):
    """Circle arc with angle map psi(t) = th0 + b (t+1) + warp (t^2 - 1).

    The warp leaves the endpoints in place but makes the parameter speed
    (hence beta and beta') non-constant; derivatives come from the exact
    chain rule on R e^{i psi}.
    """
    b = 0.5 * (th1 - th0)
    cx, cy = center

    def fn(t, order):
        t = np.asarray(t, float)
        psi = th0 + b * (t + 1.0) + warp * (t * t - 1.0)
        d1 = 1j * (b + 2.0 * warp * t)
        d2 = 2j * warp
        z = radius * np.exp(1j * psi)
        if order == 0:
            z = z + (cx + 1j * cy)
        elif order == 1:
            z = d1 * z
        elif order == 2:
            z = (d2 + d1 * d1) * z
        elif order == 3:
            z = (3.0 * d2 * d1 + d1**3) * z
        elif order == 4:
            z = (3.0 * d2 * d2 + 6.0 * d2 * d1 * d1 + d1**4) * z
        else:
            raise ValueError(order)
        return np.stack([z.real, z.imag], axis=1)

    return InterfaceParam(label, fn)


# ---------------------------------------------------------------------------
# pair geometry with closed-form distances
# ---------------------------------------------------------------------------
class ArcSpec:
    """A side on a circular arc, carrying its physical-angle map.

    angle(u) = a0 + a1 u + a2 u^2 in the side parameter; warp != 0 varies the
    parameter speed without moving the endpoints.
    """

    def __init__(self, radius, th0, th1, center=(0.0, 0.0), flag=1, warp=0.0):
        if warp:
            param = _warped_arc_param(radius, th0, th1, warp, center)
        else:
            param = _warped_arc_param(radius, th0, th1, 0.0, center, label="arc")
        self.side = SideView(param, flag)
        self.radius = radius
        self.center = np.asarray(center, float)
        b = 0.5 * (th1 - th0)
        self._a0 = th0 + b - warp
        self._a1 = b * flag
        self._a2 = warp
        th = self.theta(np.zeros(1))[0]
        radial = np.array([np.cos(th), np.sin(th)])
        self.sn = float(np.sign(self.side.normal(np.zeros(1))[0] @ radial))

    def theta(self, u):
        u = np.asarray(u, float)
        return self._a0 + self._a1 * u + self._a2 * u * u


def _pivot(phi, spec):
    """Angle offset from the nearer parameter endpoint, in an exact product
    form, plus the matching endpoint angle.

    cos(phi) = 1 - 2 sin^2(phi/2) = -1 + 2 cos^2(phi/2); taking the branch
    nearest to the evaluation point keeps the offset accurate down to the
    denormal range instead of dying in the cos-roundtrip at ~1e-8.
    """
    phi = np.asarray(phi, float)
    lo = phi < np.pi / 2
    delta = np.where(lo, -2.0 * np.sin(0.5 * phi) ** 2, 2.0 * np.cos(0.5 * phi) ** 2)
    # theta(tau) - theta(end) = (tau - end)(a1 + a2 (tau + end))
    offset = delta * (spec._a1 + spec._a2 * (delta + np.where(lo, 2.0, -2.0)))
    one = np.ones(1)
    const = np.where(lo, spec.theta(one)[0], spec.theta(-one)[0])
    return offset, const


class CirclePairGeom:
    """Kernel geometry for two sides on one common circle (possibly equal),
    everything expressed through the physical angle difference.

    Methods take phi arrays (parameter = cos phi) and broadcast with rows
    indexing the trial angle, columns the test angle.
    """

    def __init__(self, spec_x: ArcSpec, spec_y: ArcSpec):
        assert spec_x.radius == spec_y.radius
        assert np.allclose(spec_x.center, spec_y.center)
        self.x = spec_x
        self.y = spec_y

    def _half(self, phit, phie):
        offt, ct = _pivot(phit, self.x)
        offe, ce = _pivot(phie, self.y)
        const = 0.5 * (ct[None, :] - ce[:, None])
        # corner-coincident angles differ by a multiple of 2 pi; |sin| and
        # cos(2 .) are invariant under the reduction.  The residue after
        # reduction is pure rounding (the two sides compute the shared angle
        # through different sums), so snap it away or corner distances would
        # saturate at ~1e-16 instead of decaying with the offsets.
        const = const - np.pi * np.round(const / np.pi)
        const = np.where(np.abs(const) < 1e-12, 0.0, const)
        return const + 0.5 * (offt[None, :] - offe[:, None])

    def r(self, phit, phie):
        return 2.0 * self.x.radius * np.abs(np.sin(self._half(phit, phie)))

    def dk(self, phit, phie):
        # (x - y) . n(y) / r
        return -self.y.sn * np.abs(np.sin(self._half(phit, phie)))

    def dkp(self, phit, phie):
        # (y - x) . n(x) / r
        return -self.x.sn * np.abs(np.sin(self._half(phit, phie)))

    def nn(self, phit, phie):
        return self.x.sn * self.y.sn * np.cos(2.0 * self._half(phit, phie))


class GeneralSpec:
    """A side on an arbitrary curve, for cross-side (corner-sharing) pairs.

    Points are carried as endpoint + offset; the offset switches to the
    midpoint-derivative form delta x'(end + delta/2) once the direct
    difference would lose more digits than that form's O(delta^2) error.
    """

    def __init__(self, side: SideView):
        self.side = side
        one = np.ones(1)
        self._ends = (side.point(one)[0], side.point(-one)[0])

    def pivot_vec(self, phi):
        phi = np.asarray(phi, float)
        lo = phi < np.pi / 2
        delta = np.where(lo, -2.0 * np.sin(0.5 * phi) ** 2, 2.0 * np.cos(0.5 * phi) ** 2)
        end = np.where(lo, 1.0, -1.0)
        const = np.where(lo[:, None], self._ends[0][None, :], self._ends[1][None, :])
        direct = self.side.point(end + delta) - const
        vec_mid = delta[:, None] * self.side.deriv(end + 0.5 * delta, 1)
        use_mid = (np.abs(delta) < 1e-5)[:, None]
        return np.where(use_mid, vec_mid, direct), const

    def normal(self, phi):
        return self.side.normal(np.cos(np.asarray(phi, float)))


class VectorPairGeom:
    """Corner-sharing pair of arbitrary curves via stable pivot vectors."""

    def __init__(self, spec_x: GeneralSpec, spec_y: GeneralSpec):
        self.x = spec_x
        self.y = spec_y
        # the two parametrizations round shared corners differently (~1e-16);
        # snap the trial copy so corner distances decay instead of saturating
        ends_y = list(spec_y._ends)
        for j, ey in enumerate(ends_y):
            for ex in spec_x._ends:
                if np.hypot(*(ex - ey)) < 1e-12:
                    ends_y[j] = ex
        spec_y._ends = tuple(ends_y)

    def _dvec(self, phit, phie):
        vx, cx = self.x.pivot_vec(phit)
        vy, cy = self.y.pivot_vec(phie)
        return (cx[None, :, :] - cy[:, None, :]) + (vx[None, :, :] - vy[:, None, :])

    def r(self, phit, phie):
        d = self._dvec(phit, phie)
        return np.sqrt(np.maximum((d * d).sum(axis=2), 1e-60))

    def dk(self, phit, phie):
        d = self._dvec(phit, phie)
        ny = self.y.normal(phie)
        return np.einsum("jkc,jc->jk", d, ny) / self.r(phit, phie)

    def dkp(self, phit, phie):
        d = self._dvec(phit, phie)
        nx = self.x.normal(phit)
        return -np.einsum("jkc,kc->jk", d, nx) / self.r(phit, phie)

    def nn(self, phit, phie):
        return np.einsum("kc,jc->jk", self.x.normal(phit), self.y.normal(phie))


class GeneralSelfGeom:
    """An arbitrary curved side against itself.

    Same guarded midpoint-derivative trick as GeneralSpec, applied to the
    parameter difference; the trial angles arrive as a short array, so all
    shapes stay (n_trial, n_test).
    """

    def __init__(self, side: SideView):
        self.side = side
        self.x = self.y = self

    def _vec_r(self, phit, phie):
        phit = np.asarray(phit, float)
        phie = np.asarray(phie, float)
        eta = np.cos(phie)
        sm = 0.5 * (phit[None, :] + phie[:, None])
        dm = 0.5 * (phit[None, :] - phie[:, None])
        delta = -2.0 * np.sin(sm) * np.sin(dm)  # cos(phit) - cos(phie)
        vec = np.empty(delta.shape + (2,))
        for j in range(phie.size):
            direct = self.side.point(eta[j] + delta[j]) - self.side.point(eta[j : j + 1])
            mid = self.side.deriv(eta[j] + 0.5 * delta[j], 1) * delta[j][:, None]
            vec[j] = np.where((np.abs(delta[j]) < 1e-5)[:, None], mid, direct)
        r = np.sqrt(np.maximum((vec * vec).sum(axis=2), 1e-60))
        return vec, r

    def r(self, phit, phie):
        return self._vec_r(phit, phie)[1]

    def dk(self, phit, phie):
        vec, r = self._vec_r(phit, phie)
        ny = self.side.normal(np.cos(np.asarray(phie, float)))
        return np.einsum("jkc,jc->jk", vec, ny) / r

    def dkp(self, phit, phie):
        vec, r = self._vec_r(phit, phie)
        nx = self.side.normal(np.cos(np.asarray(phit, float)))
        return -np.einsum("jkc,kc->jk", vec, nx) / r

    def nn(self, phit, phie):
        nx = self.side.normal(np.cos(np.asarray(phit, float)))
        ny = self.side.normal(np.cos(np.asarray(phie, float)))
        return np.einsum("kc,jc->jk", nx, ny)


class SegmentSelfGeom:
    """A straight side against itself: exact distances, vanishing numerators."""

    def __init__(self, p0, p1, flag=1):
        self.side = SideView(segment_param(p0, p1), flag)
        self._half = 0.5 * np.hypot(p1[0] - p0[0], p1[1] - p0[1])
        self.x = self.y = self  # endpoint access mirrors CirclePairGeom

    def r(self, phit, phie):
        phit = np.asarray(phit, float)
        phie = np.asarray(phie, float)
        sm = phit[None, :] + phie[:, None]
        dm = phit[None, :] - phie[:, None]
        # cos(phit) - cos(phie) in product form
        return self._half * np.abs(2.0 * np.sin(0.5 * sm) * np.sin(0.5 * dm))

    def dk(self, phit, phie):
        return np.zeros((np.size(phie), np.size(phit)))

    dkp = dk

    def nn(self, phit, phie):
        return np.ones((np.size(phie), np.size(phit)))


# ---------------------------------------------------------------------------
# graded composite rules and finite-difference factors
# ---------------------------------------------------------------------------
def graded_both(a, b, levels, order):
    """Composite Gauss on [a, b], panels shrinking dyadically into both ends."""
    mid = 0.5 * (a + b)
    fr = (mid - a) * 2.0 ** -np.arange(levels, -1.0, -1.0)
    breaks = np.concatenate([[a], a + fr, b - fr[::-1][1:], [b]])
    rule = gauss_legendre(order)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (rule.nodes + 1.0))
        weights.append(half * rule.weights)
    return np.concatenate(nodes), np.concatenate(weights)


def interior_rule(phi0, levels, order):
    """Rule on [0, pi] graded into 0, pi and the interior point phi0."""
    n1, w1 = graded_both(0.0, phi0, levels, order)
    n2, w2 = graded_both(phi0, np.pi, levels, order)
    return np.concatenate([n1, n2]), np.concatenate([w1, w2])


def _fd5(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def beta_of(side):
    return lambda u: 1.0 / side.jacobian(np.asarray(u, float))


def chi_dphi(side, max_degree, phi, h=5e-5):
    """d/dphi [ sin((m+1) phi) * beta(cos phi) ], rows m = 0..L.

    The trig factor differentiates exactly; only the scalar beta composite
    needs finite differences.
    """
    beta = beta_of(side)
    bc = beta(np.cos(phi))
    bc_d = _fd5(lambda p: beta(np.cos(p)), phi, h)
    m1 = np.arange(1, max_degree + 2)[:, None]
    return m1 * np.cos(m1 * phi) * bc[None, :] + np.sin(m1 * phi) * bc_d[None, :]


def trial_deriv(side, max_degree, eta, h=5e-5):
    """P_l(eta) = d/deta [ U_l(eta) beta(eta) ] with beta' by finite differences."""
    beta = beta_of(side)
    bd = _fd5(beta, eta, h)
    return u_deriv_values(max_degree, eta) * beta(eta)[None, :] + u_values(max_degree, eta) * bd[None, :]


def _endpoint_trial_values(side, max_degree):
    lv = np.arange(max_degree + 1)
    beta = beta_of(side)
    return {
        -1.0: (-1.0) ** lv * (lv + 1.0) * beta([-1.0])[0],
        1.0: (lv + 1.0) * beta([1.0])[0],
    }


# ---------------------------------------------------------------------------
# block oracles
# ---------------------------------------------------------------------------
def _w_endpoint_sum(geom, side_x, side_y, s, max_degree, levels=30, order=44):
    # 1D log accuracy is set by the depth of the grading, not the panel order
    phi, wp = graded_both(0.0, np.pi, levels, order)
    chid = chi_dphi(side_x, max_degree, phi)
    fvals = _endpoint_trial_values(side_y, max_degree)
    out = 0.0
    for e in (-1.0, 1.0):
        dist = geom.r(phi, np.array([0.0 if e > 0 else np.pi]))[0]
        k0 = bessel_k01(s * dist)[0]
        ie = -(chid @ (wp * k0 / TWO_PI))
        out = out + (-e) * np.outer(ie, fvals[e])
    return out


def self_blocks_oracle(geom, s, max_degree, n_outer=96, levels=36, order=24):
    """All four blocks of a side against itself (circle arc or segment)."""
    side = geom.x.side
    b = max_degree + 1
    rule = gauss_legendre(n_outer)
    eta, we = rule.nodes, rule.weights
    uvals = u_values(max_degree, eta)
    pvals = trial_deriv(side, max_degree, eta)
    m1 = np.arange(1, b + 1)

    v = np.zeros((b, b), complex)
    kb = np.zeros((b, b), complex)
    kpb = np.zeros((b, b), complex)
    wcc = np.zeros((b, b), complex)
    wnn = np.zeros((b, b), complex)
    for j, ej in enumerate(eta):
        pj = np.arccos(ej)
        phi, wp = interior_rule(pj, levels, order)
        sphi = np.sin(phi)
        pjv = np.array([pj])
        r = geom.r(phi, pjv)[0]
        k0, k1 = bessel_k01(s * r)
        g = k0 / TWO_PI
        usin = np.sin(np.outer(m1, phi))
        trial_col = we[j] * uvals[:, j]
        v += np.outer(usin @ (wp * sphi * g), trial_col)
        kb += np.outer(usin @ (wp * sphi * (s / TWO_PI) * k1 * geom.dk(phi, pjv)[0]), trial_col)
        kpb += np.outer(usin @ (wp * sphi * (s / TWO_PI) * k1 * geom.dkp(phi, pjv)[0]), trial_col)
        wnn += np.outer(usin @ (wp * sphi * g * geom.nn(phi, pjv)[0]), trial_col)
        chid = chi_dphi(side, max_degree, phi)
        wcc += np.outer(-(chid @ (wp * g)), we[j] * pvals[:, j])
    w = wcc + s * s * wnn + _w_endpoint_sum(geom, side, side, s, max_degree)
    return {"V": v, "K": kb, "Kp": kpb, "W": w}


def junction_blocks_oracle(geom, s, max_degree, levels=16, order=36):
    """All four blocks for two corner-sharing sides of one common circle."""
    side_x = geom.x.side
    side_y = geom.y.side
    b = max_degree + 1
    phi, wp = graded_both(0.0, np.pi, levels, order)
    tau = np.cos(phi)
    sphi = np.sin(phi)
    m1 = np.arange(1, b + 1)
    usin = np.sin(np.outer(m1, phi))

    r = geom.r(phi, phi)  # [j trial, k test]
    k0, k1 = bessel_k01(s * r)
    g = k0 / TWO_PI

    test_v = usin * (wp * sphi)[None, :]
    trial_u = usin * wp[None, :]  # U_l(cos phi) sin(phi) w = sin((l+1)phi) w
    test_q = -chi_dphi(side_x, max_degree, phi) * wp[None, :]
    trial_p = trial_deriv(side_y, max_degree, tau) * (wp * sphi)[None, :]

    v = test_v @ g.T @ trial_u.T
    kb = test_v @ ((s / TWO_PI) * k1 * geom.dk(phi, phi)).T @ trial_u.T
    kpb = test_v @ ((s / TWO_PI) * k1 * geom.dkp(phi, phi)).T @ trial_u.T
    w = test_q @ g.T @ trial_p.T
    w = w + s * s * (test_v @ (g * geom.nn(phi, phi)).T @ trial_u.T)
    w = w + _w_endpoint_sum(geom, side_x, side_y, s, max_degree)
    return {"V": v, "K": kb, "Kp": kpb, "W": w}


def separated_blocks_oracle(side_x, side_y, s, max_degree, n=300):
    """Direct-kernel tensor oracle for disjoint sides, W from the actual
    second-derivative kernel (independent of any rearrangement)."""
    tau, wt = cheb2_rule(n)
    rule = gauss_legendre(n)
    eta, we = rule.nodes, rule.weights
    x = side_x.point(tau)
    nx = side_x.normal(tau)
    y = side_y.point(eta)
    ny = side_y.normal(eta)
    d = x[:, None, :] - y[None, :, :]
    r = np.sqrt((d * d).sum(axis=2))
    k0, k1 = bessel_k01(s * r)
    dn_y = (d * ny[None, :, :]).sum(axis=2)
    dn_x = (d * nx[:, None, :]).sum(axis=2)
    nn = nx @ ny.T
    g = k0 / TWO_PI
    kker = s / TWO_PI * k1 * dn_y / r
    kpker = -s / TWO_PI * k1 * dn_x / r
    wker = -(s / TWO_PI) * (nn * k1 / r - dn_x * dn_y * (s * k0 / r**2 + 2 * k1 / r**3))
    test = u_values(max_degree, tau) * wt[None, :]
    trial = u_values(max_degree, eta) * we[None, :]
    out = {}
    for name, ker in (("V", g), ("K", kker), ("Kp", kpker), ("W", wker)):
        out[name] = test @ ker @ trial.T
    return out
