"""Convolution quadrature on a scaled circular contour.

Both forward convolutions and convolutional equation solves reduce to the
same recipe: scale the time samples by powers of the contour radius, FFT
along the time index, apply the transfer function frequency by frequency,
transform back and unscale.  Multistep (BDF2) works on step samples with
N+1 transform nodes; multistage Runge-Kutta works on stage sample vectors
with N nodes and an eigenvalue decoupling of the matrix-valued frequency
argument, step values being the last stages (stiffly accurate schemes).

Transfer functions enter only through a callback op(s, v) -> w, which for
equation solving must apply the inverse.  Real time data lets the engine
skip half the frequencies; that shortcut assumes op commutes with complex
conjugation, which is spot-checked on one frequency pair per run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class CqShapeError(ValueError):
    """Time-sample array does not match the scheme/grid layout."""


class ContourError(RuntimeError):
    """A contour frequency could not be processed."""


# ---------------------------------------------------------------------------
# schemes, grids, contours
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CqScheme:
    """Multistep marker (no Butcher data) or stiffly accurate RK tableau."""

    name: str
    order: int
    stage_order: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    d: np.ndarray | None = None

    @property
    def multistage(self) -> bool:
        return self.a is not None

    @property
    def n_stages(self) -> int:
        return 0 if self.b is None else len(self.b)


def _rk(name: str, order: int, stage_order: int, a, b, d) -> CqScheme:
    return CqScheme(name, order, stage_order, np.array(a, float), np.array(b, float), np.array(d, float))


BDF2 = CqScheme("bdf2", 2, 2)
RADAU2 = _rk(
    "radau2", 3, 2,
    [[5.0 / 12.0, -1.0 / 12.0], [3.0 / 4.0, 1.0 / 4.0]],
    [3.0 / 4.0, 1.0 / 4.0],
    [1.0 / 3.0, 1.0],
)
LOBATTO3 = _rk(
    "lobatto3", 4, 2,
    [[1.0 / 6.0, -1.0 / 3.0, 1.0 / 6.0],
     [1.0 / 6.0, 5.0 / 12.0, -1.0 / 12.0],
     [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [0.0, 0.5, 1.0],
)

_SCHEMES = {s.name: s for s in (BDF2, RADAU2, LOBATTO3)}


def scheme(name: str) -> CqScheme:
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(_SCHEMES)}") from None


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    t_final: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_final > 0.0:
            raise ValueError("t_final must be positive")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def stage_times(self, sch: CqScheme) -> np.ndarray:
        """(n_steps, m) matrix t_n + d_j dt for steps n = 0..N-1."""
        if not sch.multistage:
            raise ValueError("stage times only exist for multistage schemes")
        return self.dt * (np.arange(self.n_steps)[:, None] + sch.d[None, :])


def contour_radius(n_steps: int) -> float:
    return float(np.finfo(float).eps ** (1.0 / (2.0 * n_steps)))


@dataclass(frozen=True)
class ContourSpec:
    """Evaluation circle: n_nodes roots of unity scaled by radius < 1."""

    n_nodes: int
    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ValueError("contour radius must lie in (0, 1)")

    @classmethod
    def for_steps(cls, n_steps: int, n_nodes: int) -> "ContourSpec":
        return cls(n_nodes, contour_radius(n_steps))

    def nodes(self) -> np.ndarray:
        """lambda * zeta^-k for k = 0..n_nodes-1, matching the forward DFT.

        Built exactly conjugate-symmetric (node M-k is the bitwise conjugate
        of node k) so that skipping half the frequencies for real data agrees
        with the full sweep to rounding.
        """
        m = self.n_nodes
        low = self.radius * np.exp(-2j * np.pi * np.arange(m // 2 + 1) / m)
        if m % 2 == 0:
            low[m // 2] = -self.radius
        out = np.empty(m, complex)
        out[: m // 2 + 1] = low
        out[m // 2 + 1:] = np.conj(low[1:(m + 1) // 2][::-1])
        return out


def bdf2_delta(zeta):
    return 1.5 - 2.0 * zeta + 0.5 * zeta * zeta


def rk_delta(zeta: complex, sch: CqScheme) -> np.ndarray:
    """Matrix generating function (A + 1 b^T zeta/(1-zeta))^-1."""
    m = sch.n_stages
    mat = sch.a + (zeta / (1.0 - zeta)) * np.outer(np.ones(m), sch.b)
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise ContourError(f"singular stage matrix at zeta={zeta}") from exc


@dataclass
class CqDiagnostics:
    radius: float = 0.0
    n_frequencies: int = 0
    n_evaluated: int = 0
    halved: bool = False
    fallbacks: int = 0
    max_stage_condition: float = 0.0
    stage_conditions: list = field(default_factory=list)
    frequency_conditions: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------
def _flatten(g, lead_shape, what):
    arr = np.asarray(g)
    if arr.shape[: len(lead_shape)] != lead_shape:
        raise CqShapeError(f"{what} must have leading shape {lead_shape}, got {arr.shape}")
    tail = arr.shape[len(lead_shape):]
    flat = arr.reshape(lead_shape + (-1,)).astype(complex)
    return flat, tail


def _symmetrize(ghat):
    """Enforce the exact DFT conjugate symmetry of real data in place.

    The FFT of real samples satisfies ghat[M-k] = conj(ghat[k]) exactly in
    arithmetic but only to rounding in floating point; enforcing it makes the
    skipped-half and full-spectrum evaluations agree to the last bit for
    transfers that commute with conjugation.
    """
    m = ghat.shape[0]
    ghat[m // 2 + 1:] = np.conj(ghat[1:(m + 1) // 2][::-1])
    if m % 2 == 0:
        ghat[m // 2] = ghat[m // 2].real


def _call(op, s, v, k):
    try:
        return np.asarray(op(s, v))
    except (CqShapeError, ContourError):
        raise
    except Exception as exc:
        raise ContourError(f"transfer evaluation failed at frequency index {k}, s={s}") from exc


def _check_conjugate(op, s, v, w):
    """One-pair probe of op(conj s, conj v) == conj op(s, v)."""
    probe = np.asarray(op(np.conj(s), np.conj(v)))
    scale = float(np.max(np.abs(w))) + 1e-300
    if float(np.max(np.abs(probe - np.conj(w)))) > 1e-6 * scale:
        raise ValueError(
            "transfer does not commute with conjugation; pass assume_real=False")


def _freq_map(work, kmax, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, range(kmax)))
    return [work(k) for k in range(kmax)]


def _multistep(grid, op, g, diag, assume_real, threads):
    m = grid.n_steps + 1
    contour = ContourSpec.for_steps(grid.n_steps, m)
    lam = contour.radius
    data, tail = _flatten(g, (m,), "step samples")
    real_data = not np.iscomplexobj(np.asarray(g))
    real = real_data if assume_real is None else assume_real
    scale = lam ** np.arange(m)
    ghat = np.fft.fft(data * scale[:, None], axis=0)
    if real_data:
        _symmetrize(ghat)
    svals = bdf2_delta(contour.nodes()) / grid.dt
    kmax = m // 2 + 1 if real else m

    def work(k):
        return _call(op, svals[k], ghat[k], k)

    rows = _freq_map(work, kmax, threads)
    if real and m >= 3:
        _check_conjugate(op, svals[1], ghat[1], rows[1])
    # op may map into a different space (rectangular transfer), so size the
    # output from what it returned
    yhat = np.empty((m,) + rows[0].shape, dtype=complex)
    for k, row in enumerate(rows):
        yhat[k] = row
    if real:
        yhat[m - 1:m - kmax:-1] = np.conj(yhat[1:kmax])
    out = np.fft.ifft(yhat, axis=0) / scale[:, None]
    diag.radius = lam
    diag.n_frequencies = m
    diag.n_evaluated = kmax
    diag.halved = real
    out_tail = tail if yhat.shape[1:] == data.shape[1:] else yhat.shape[1:]
    return out.reshape((m,) + out_tail)


def _stage_frequency(k, z, sch, dt, op, ghat_k, invert, scalar_transfer, cond_limit, check):
    """One RK contour frequency: eigendecouple, apply op per eigenvalue.

    Returns (stage rows, eigenvector condition, fallback flag).
    """
    # decompose at the lower-half-plane representative and conjugate back, so
    # mirrored contour nodes get exactly conjugate eigendata
    upper = z.imag > 0.0
    canonical = np.conj(z) if upper else z
    delta = rk_delta(canonical, sch) / dt
    eig, q = np.linalg.eig(delta)
    if upper:
        delta, eig, q = np.conj(delta), np.conj(eig), np.conj(q)
    cond = float(np.linalg.cond(q))
    fallback = cond > cond_limit
    if fallback:
        if scalar_transfer is not None:
            f = scalar_transfer
            fn = (lambda w: 1.0 / f(w)) if invert else f
            mat = scipy.linalg.funm(delta, np.vectorize(fn))
            return mat @ ghat_k, cond, True
        # nudge the node along the contour and retry the decoupling
        z = z * np.exp(-2e-8j * np.pi)
        delta = rk_delta(z, sch) / dt
        eig, q = np.linalg.eig(delta)
        if np.linalg.cond(q) > cond_limit:
            raise ContourError(f"stage decoupling ill-conditioned at frequency index {k}")
    v = np.linalg.solve(q, ghat_k)
    w = np.stack([_call(op, eig[j], v[j], k) for j in range(len(eig))])
    if check:
        _check_conjugate(op, eig[0], v[0], w[0])
    return q @ w, cond, fallback


def _multistage(sch, grid, op, g, diag, invert, scalar_transfer, assume_real, cond_limit, threads):
    n = grid.n_steps
    m = sch.n_stages
    contour = ContourSpec.for_steps(n, n)
    lam = contour.radius
    znodes = contour.nodes()
    data, tail = _flatten(g, (n, m), "stage samples")
    real_data = not np.iscomplexobj(np.asarray(g))
    real = real_data if assume_real is None else assume_real
    scale = lam ** np.arange(n)
    ghat = np.fft.fft(data * scale[:, None, None], axis=0)
    if real_data:
        _symmetrize(ghat)
    kmax = n // 2 + 1 if real else n

    def work(k):
        check = real and n >= 3 and k == 1
        return _stage_frequency(k, znodes[k], sch, grid.dt, op, ghat[k],
                                invert, scalar_transfer, cond_limit, check)

    rows = _freq_map(work, kmax, threads)
    yhat = np.empty((n,) + rows[0][0].shape, dtype=complex)
    for k, (row, cond, fb) in enumerate(rows):
        yhat[k] = row
        diag.stage_conditions.append(cond)
        diag.max_stage_condition = max(diag.max_stage_condition, cond)
        diag.fallbacks += int(fb)
    if real:
        yhat[n - 1:n - kmax:-1] = np.conj(yhat[1:kmax])
    out = np.fft.ifft(yhat, axis=0) / scale[:, None, None]
    diag.radius = lam
    diag.n_frequencies = n
    diag.n_evaluated = kmax
    diag.halved = real
    out_tail = tail if yhat.shape[2:] == data.shape[2:] else yhat.shape[2:]
    return out.reshape((n, m) + out_tail)


def _run(sch, grid, op, g, invert, scalar_transfer, assume_real, cond_limit, threads):
    diag = CqDiagnostics()
    if sch.multistage:
        out = _multistage(sch, grid, op, g, diag, invert, scalar_transfer,
                          assume_real, cond_limit, threads)
    else:
        out = _multistep(grid, op, g, diag, assume_real, threads)
    return out, diag


def cq_forward(sch: CqScheme, grid: TimeGrid, op, g, *, scalar_transfer=None,
               assume_real=None, cond_limit=1e8, threads=1):
    """Discrete convolution h = F * g; op(s, v) applies F(s).

    Samples are scheme-native: (N+1, ...) step values for multistep,
    (N, m, ...) stage values for multistage.  Returns (samples, diagnostics).
    op must be safe to call from several threads when threads > 1.  op may map
    into a space of different dimension (e.g. densities to field samples); the
    output tail then follows op's result shape.
    """
    return _run(sch, grid, op, g, False, scalar_transfer, assume_real, cond_limit, threads)


def cq_solve(sch: CqScheme, grid: TimeGrid, op, g, *, scalar_transfer=None,
             assume_real=None, cond_limit=1e8, threads=1):
    """Solve F * x = g for causal g; op(s, v) must apply F(s)^-1."""
    return _run(sch, grid, op, g, True, scalar_transfer, assume_real, cond_limit, threads)


def steps_from_stages(stages: np.ndarray) -> np.ndarray:
    """Step values t_0..t_N from stage samples of a stiffly accurate scheme.

    The last stage of step n sits at t_{n+1}; the t_0 value is zero by
    causality.
    """
    last = stages[:, -1]
    return np.concatenate([np.zeros((1,) + last.shape[1:], dtype=stages.dtype), last], axis=0)
