"""Planar composite scatterer geometry.

A scene is a set of subdomains 0..n-1 (0 is the unbounded exterior) whose
skeleton is a list of open parametrized arcs ("interfaces"), each shared by
exactly two subdomains.  Every interface stores one parametrization
h : [-1, 1] -> R^2 with analytic derivatives up to fourth order; each adjacent
subdomain views it through an orientation flag so that increasing parameter
keeps the subdomain on the left and the normal points outward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# endpoint matching tolerance relative to scene diameter
_MATCH_RTOL = 1e-9
_CHUNK = 4096


@dataclass(frozen=True)
class InterfaceParam:
    """Open arc t in [-1, 1] -> R^2; fn(t, k) returns the k-th derivative."""

    label: str
    fn: Callable[[np.ndarray, int], np.ndarray]

    def eval(self, t: np.ndarray, order: int = 0) -> np.ndarray:
        if not 0 <= order <= 4:
            raise ValueError(f"derivative order {order} outside 0..4")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.fn(t, order)
        if out.shape != (t.size, 2):
            raise ValueError(f"{self.label}: fn returned shape {out.shape}")
        return out

    def check_derivatives(self, rtol: float = 1e-5) -> None:
        t = np.linspace(-0.93, 0.93, 7)
        h = 1e-5
        for k in range(1, 5):
            fd = (self.eval(t + h, k - 1) - self.eval(t - h, k - 1)) / (2 * h)
            an = self.eval(t, k)
            scale = max(np.abs(an).max(), np.abs(fd).max(), 1.0)
            if np.abs(fd - an).max() > rtol * scale:
                raise ValueError(f"{self.label}: derivative order {k} mismatch")


@dataclass(frozen=True)
class SideView:
    """One subdomain's view of an interface: g(u) = h(flag*u), outward normal."""

    param: InterfaceParam
    flag: int

    def point(self, u: np.ndarray) -> np.ndarray:
        return self.param.eval(self.flag * np.atleast_1d(np.asarray(u, float)), 0)

    def deriv(self, u: np.ndarray, order: int) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, float))
        return self.flag**order * self.param.eval(self.flag * u, order)

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        d = self.deriv(u, 1)
        return np.hypot(d[:, 0], d[:, 1])

    def normal(self, u: np.ndarray) -> np.ndarray:
        # subdomain on the left of g => outward normal is tangent rotated by -90
        d = self.deriv(u, 1)
        j = np.hypot(d[:, 0], d[:, 1])
        return np.stack([d[:, 1] / j, -d[:, 0] / j], axis=1)


@dataclass(frozen=True)
class Scene:
    """Composite scatterer: interfaces, adjacency, per-side orientation flags."""

    n_subdomains: int
    interfaces: tuple[InterfaceParam, ...]
    pairs: tuple[tuple[int, int], ...]
    flags: tuple[tuple[int, int], ...]

    # -- topology ----------------------------------------------------------
    def neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(e for e, p in enumerate(self.pairs) if i in p)

    def opposite(self, i: int, e: int) -> int:
        a, b = self.pairs[e]
        if i == a:
            return b
        if i == b:
            return a
        raise ValueError(f"subdomain {i} not adjacent to interface {e}")

    def side_flag(self, i: int, e: int) -> int:
        a, b = self.pairs[e]
        if i == a:
            return self.flags[e][0]
        if i == b:
            return self.flags[e][1]
        raise ValueError(f"subdomain {i} not adjacent to interface {e}")

    def side(self, i: int, e: int) -> SideView:
        return SideView(self.interfaces[e], self.side_flag(i, e))

    # -- metric helpers ----------------------------------------------------
    def skeleton_points(self, per_interface: int = 256) -> np.ndarray:
        t = np.linspace(-1.0, 1.0, per_interface)
        return np.concatenate([p.eval(t, 0) for p in self.interfaces], axis=0)

    def bbox(self, margin: float = 0.0) -> tuple[float, float, float, float]:
        pts = self.skeleton_points()
        xmin, ymin = pts.min(axis=0)
        xmax, ymax = pts.max(axis=0)
        pad = margin * max(xmax - xmin, ymax - ymin)
        return (xmin - pad, xmax + pad, ymin - pad, ymax + pad)

    def diameter(self) -> float:
        xmin, xmax, ymin, ymax = self.bbox()
        return float(np.hypot(xmax - xmin, ymax - ymin))

    def signed_area(self, i: int, n_quad: int = 64) -> float:
        # Green's theorem over the oriented side views; ordering irrelevant
        from .specfun import gauss_legendre

        rule = gauss_legendre(n_quad)
        total = 0.0
        for e in self.neighbors(i):
            s = self.side(i, e)
            p = s.point(rule.nodes)
            d = s.deriv(rule.nodes, 1)
            total += 0.5 * rule.integrate(p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0])
        return float(total)

    def _edges(self, i: int, per_side: int = 512) -> np.ndarray:
        u = np.linspace(-1.0, 1.0, per_side + 1)
        polys = [self.side(i, e).point(u) for e in self.neighbors(i)]
        segs = [np.stack([p[:-1], p[1:]], axis=1) for p in polys]
        return np.concatenate(segs, axis=0)

    def contains(self, i: int, points: np.ndarray, per_side: int = 512) -> np.ndarray:
        if i == 0:
            raise ValueError("use locate() for the unbounded subdomain")
        return _winding_test(self._edges(i, per_side), np.asarray(points, float))

    def locate(self, points: np.ndarray, per_side: int = 512) -> np.ndarray:
        points = np.asarray(points, float)
        owner = np.zeros(points.shape[0], dtype=int)
        for i in range(1, self.n_subdomains):
            inside = self.contains(i, points, per_side)
            owner[inside] = i
        return owner

    def skeleton_distance(self, points: np.ndarray, per_interface: int = 512) -> np.ndarray:
        t = np.linspace(-1.0, 1.0, per_interface + 1)
        segs = []
        for p in self.interfaces:
            pts = p.eval(t, 0)
            segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
        return _segment_distance(np.concatenate(segs, axis=0), np.asarray(points, float))

    # -- structural validation ---------------------------------------------
    def validate(self) -> None:
        if len(self.interfaces) != len(self.pairs) or len(self.pairs) != len(self.flags):
            raise ValueError("interfaces/pairs/flags length mismatch")
        for e, ((a, b), (fa, fb)) in enumerate(zip(self.pairs, self.flags)):
            if a == b or not (0 <= a < self.n_subdomains and 0 <= b < self.n_subdomains):
                raise ValueError(f"interface {e}: bad pair {(a, b)}")
            if fa * fb != -1:
                raise ValueError(f"interface {e}: flags {(fa, fb)} must be opposite")
        for p in self.interfaces:
            p.check_derivatives()
        for i in range(self.n_subdomains):
            if not self.neighbors(i):
                raise ValueError(f"subdomain {i} has no interfaces")
            self._check_loop(i)
        total = sum(self.signed_area(i) for i in range(self.n_subdomains))
        if abs(total) > 1e-8 * self.diameter() ** 2:
            raise ValueError("subdomain boundaries do not cancel")
        self._check_normals()

    def _check_loop(self, i: int) -> None:
        # oriented sides must chain into closed loops: starts match ends
        tol = _MATCH_RTOL * max(self.diameter(), 1.0)
        starts, ends = [], []
        for e in self.neighbors(i):
            s = self.side(i, e)
            starts.append(s.point(np.array([-1.0]))[0])
            ends.append(s.point(np.array([1.0]))[0])
        starts, ends = np.array(starts), np.array(ends)
        dist = np.linalg.norm(starts[:, None, :] - ends[None, :, :], axis=2)
        used = np.zeros(len(ends), bool)
        for k in range(len(starts)):
            j = np.argmin(np.where(used, np.inf, dist[k]))
            if dist[k, j] > tol:
                raise ValueError(f"subdomain {i}: boundary not closed")
            used[j] = True
        area = self.signed_area(i)
        if i > 0 and area <= 0:
            raise ValueError(f"subdomain {i}: boundary not counterclockwise")
        if i == 0 and area >= 0:
            raise ValueError("exterior boundary must be clockwise")

    def _check_normals(self) -> None:
        eps = 1e-3 * self.diameter()
        for i in range(self.n_subdomains):
            for e in self.neighbors(i):
                s = self.side(i, e)
                mid = s.point(np.array([0.0]))[0]
                n = s.normal(np.array([0.0]))[0]
                probe = np.array([mid + eps * n, mid - eps * n])
                owner = self.locate(probe, per_side=2048)
                if owner[0] == i or owner[1] != i:
                    raise ValueError(f"side ({i}, {e}): normal not outward")


def shared_endpoints(side_a: SideView, side_b: SideView, tol: float = 1e-9) -> tuple[tuple[float, float], ...]:
    """Coinciding endpoint pairs (ua, ub) of two side views."""
    ends = np.array([-1.0, 1.0])
    pa = side_a.point(ends)
    pb = side_b.point(ends)
    out = []
    for ia in range(2):
        for ib in range(2):
            if np.linalg.norm(pa[ia] - pb[ib]) < tol:
                out.append((ends[ia], ends[ib]))
    return tuple(out)


# ---------------------------------------------------------------------------
# point-in-polygon / distance kernels
# ---------------------------------------------------------------------------
def _winding_test(edges: np.ndarray, points: np.ndarray) -> np.ndarray:
    # signed angle sum over oriented edges; immune to collinear degeneracies
    x0, y0 = edges[:, 0, 0], edges[:, 0, 1]
    x1, y1 = edges[:, 1, 0], edges[:, 1, 1]
    inside = np.zeros(points.shape[0], bool)
    for lo in range(0, points.shape[0], _CHUNK):
        px = points[lo : lo + _CHUNK, 0:1]
        py = points[lo : lo + _CHUNK, 1:2]
        ax, ay = x0 - px, y0 - py
        bx, by = x1 - px, y1 - py
        ang = np.arctan2(ax * by - ay * bx, ax * bx + ay * by)
        inside[lo : lo + _CHUNK] = np.abs(ang.sum(axis=1)) > np.pi
    return inside


def _segment_distance(segs: np.ndarray, points: np.ndarray) -> np.ndarray:
    a = segs[:, 0, :]
    d = segs[:, 1, :] - a
    dd = np.maximum((d * d).sum(axis=1), 1e-300)
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], _CHUNK):
        p = points[lo : lo + _CHUNK]
        w = p[:, None, :] - a[None, :, :]
        s = np.clip((w * d[None, :, :]).sum(axis=2) / dd[None, :], 0.0, 1.0)
        diff = w - s[:, :, None] * d[None, :, :]
        out[lo : lo + _CHUNK] = np.sqrt((diff * diff).sum(axis=2).min(axis=1))
    return out


# ---------------------------------------------------------------------------
# arc primitives
# ---------------------------------------------------------------------------
def circular_arc_param(radius: float, theta0: float, theta1: float, center=(0.0, 0.0), label: str = "arc") -> InterfaceParam:
    b = 0.5 * (theta1 - theta0)
    cx, cy = center

    def fn(t, order):
        th = theta0 + b * (t + 1.0) + order * np.pi / 2
        amp = radius * b**order
        out = amp * np.stack([np.cos(th), np.sin(th)], axis=1)
        if order == 0:
            out += np.array([cx, cy])
        return out

    return InterfaceParam(label, fn)


def segment_param(p0, p1, label: str = "segment") -> InterfaceParam:
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    mid = 0.5 * (p0 + p1)
    half = 0.5 * (p1 - p0)

    def fn(t, order):
        if order == 0:
            return mid[None, :] + t[:, None] * half[None, :]
        if order == 1:
            return np.broadcast_to(half, (t.size, 2)).copy()
        return np.zeros((t.size, 2))

    return InterfaceParam(label, fn)


def kite_arc_param(theta0: float, theta1: float, label: str = "kite-arc") -> InterfaceParam:
    # (cos th + 0.65 cos 2th, sin th)
    b = 0.5 * (theta1 - theta0)

    def fn(t, order):
        th = theta0 + b * (t + 1.0)
        xs = [
            np.cos(th) + 0.65 * np.cos(2 * th),
            -np.sin(th) - 1.3 * np.sin(2 * th),
            -np.cos(th) - 2.6 * np.cos(2 * th),
            np.sin(th) + 5.2 * np.sin(2 * th),
            np.cos(th) + 10.4 * np.cos(2 * th),
        ][order]
        ys = np.sin(th + order * np.pi / 2)
        return b**order * np.stack([xs, ys], axis=1)

    return InterfaceParam(label, fn)


# ---------------------------------------------------------------------------
# scene builders
# ---------------------------------------------------------------------------
def circle_one(radius: float = 0.5) -> Scene:
    """Disk as a single subdomain, boundary split into two semicircular arcs."""
    right = circular_arc_param(radius, -np.pi / 2, np.pi / 2, label="circle-right")
    left = circular_arc_param(radius, np.pi / 2, 3 * np.pi / 2, label="circle-left")
    return Scene(
        n_subdomains=2,
        interfaces=(right, left),
        pairs=((0, 1), (0, 1)),
        flags=((-1, 1), (-1, 1)),
    )


def circle_two(radius: float = 0.5) -> Scene:
    """Disk split by the vertical diameter into left (1) and right (2) halves."""
    left = circular_arc_param(radius, np.pi / 2, 3 * np.pi / 2, label="circle-left")
    right = circular_arc_param(radius, -np.pi / 2, np.pi / 2, label="circle-right")
    diam = segment_param((0.0, -radius), (0.0, radius), label="diameter")
    return Scene(
        n_subdomains=3,
        interfaces=(left, right, diam),
        pairs=((0, 1), (0, 2), (1, 2)),
        flags=((-1, 1), (-1, 1), (1, -1)),
    )


def square_four(half_width: float = 1.0) -> Scene:
    """Square split by the axes into four quadrants, numbered ccw from top-right."""
    a = half_width
    outer_pts = [
        ((a, 0), (a, a), 1),
        ((a, a), (0, a), 1),
        ((0, a), (-a, a), 2),
        ((-a, a), (-a, 0), 2),
        ((-a, 0), (-a, -a), 3),
        ((-a, -a), (0, -a), 3),
        ((0, -a), (a, -a), 4),
        ((a, -a), (a, 0), 4),
    ]
    interfaces = []
    pairs = []
    flags = []
    for k, (p0, p1, owner) in enumerate(outer_pts):
        interfaces.append(segment_param(p0, p1, label=f"outer-{k}"))
        pairs.append((0, owner))
        flags.append((-1, 1))
    # each spoke keeps the ccw-next quadrant on its left
    spokes = [
        ((0, 0), (a, 0), 1, 4),
        ((0, 0), (0, a), 2, 1),
        ((0, 0), (-a, 0), 3, 2),
        ((0, 0), (0, -a), 4, 3),
    ]
    for k, (p0, p1, left_dom, right_dom) in enumerate(spokes):
        interfaces.append(segment_param(p0, p1, label=f"spoke-{k}"))
        lo, hi = sorted((left_dom, right_dom))
        pairs.append((lo, hi))
        flags.append((1, -1) if lo == left_dom else (-1, 1))
    return Scene(
        n_subdomains=5,
        interfaces=tuple(interfaces),
        pairs=tuple(pairs),
        flags=tuple(flags),
    )


def kite_two() -> Scene:
    """Kite split by the x-axis chord into upper (1) and lower (2) parts."""
    upper = kite_arc_param(0.0, np.pi, label="kite-upper")
    lower = kite_arc_param(np.pi, 2 * np.pi, label="kite-lower")
    chord = segment_param((-0.35, 0.0), (1.65, 0.0), label="chord")
    return Scene(
        n_subdomains=3,
        interfaces=(upper, lower, chord),
        pairs=((0, 1), (0, 2), (1, 2)),
        flags=((-1, 1), (-1, 1), (1, -1)),
    )
