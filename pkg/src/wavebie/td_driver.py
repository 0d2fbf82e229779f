"""Time-domain transmission runs.

Problem data (incident plane wave or manufactured interior fields) is sampled
at the scheme's step or stage times, assembled into right-hand-side moment
vectors, and pushed through the convolution-quadrature solve with a transfer
evaluator that lazily factorizes the transmission system per frequency.  The
experiment parameter sets ship as flat key=value preset files under
presets/.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, fields as dataclass_fields, replace
from importlib import resources

import numpy as np

from .bio_assembly import AssemblyParams
from .cq_engine import CqDiagnostics, CqScheme, TimeGrid, cq_solve, scheme, steps_from_stages
from .geometry import Scene, circle_one, circle_two, kite_two, square_four
from .mtf_system import MtfAssembler, assemble_rhs_fields, assemble_rhs_incident
from .spectral_basis import BlockIndexMap


class ConfigError(ValueError):
    """Malformed run configuration file or overrides."""


# ---------------------------------------------------------------------------
# time signals
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SmoothWindow:
    """C-infinity ramp: exactly 0 left of t0, exactly 1 right of t1."""

    t0: float = 0.2
    t1: float = 2.0

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError("need t0 < t1")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tau = (t - self.t0) / (self.t1 - self.t0)
        out = np.zeros(tau.shape)
        out[tau >= 1.0] = 1.0
        inside = (tau > 0.0) & (tau < 1.0)
        ti = tau[inside]
        out[inside] = 1.0 - np.exp(2.0 * np.exp(-1.0 / ti) / (ti - 1.0))
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        tau = (t - self.t0) / (self.t1 - self.t0)
        out = np.zeros(tau.shape)
        inside = (tau > 0.0) & (tau < 1.0)
        ti = tau[inside]
        g = 2.0 * np.exp(-1.0 / ti) / (ti - 1.0)
        gp = 2.0 * np.exp(-1.0 / ti) * ((ti - 1.0) / ti**2 - 1.0) / (ti - 1.0) ** 2
        out[inside] = -gp * np.exp(g) / (self.t1 - self.t0)
        return out if out.ndim else float(out)


def eta(t, t0: float, t1: float):
    """Smoothed step used to switch the signal on, 0 before t0 and 1 after t1."""
    return SmoothWindow(t0, t1)(t)


def _unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,):
        raise ValueError("direction must be a 2-vector")
    if abs(np.hypot(d[0], d[1]) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return d


@dataclass(frozen=True)
class PlaneWave:
    """Incident pulse f(c0 (t - lag) - x.d) with f = amplitude sin(omega t) eta(t)."""

    speed: float = 1.0
    omega: float = 1.0
    lag: float = 0.0
    direction: tuple = (1.0, 0.0)
    window: SmoothWindow = SmoothWindow(0.2, 2.0)
    amplitude: float = 1.0

    def __post_init__(self):
        _unit(self.direction)

    def signal(self, arg):
        arg = np.asarray(arg, dtype=float)
        return self.amplitude * np.sin(self.omega * arg) * self.window(arg)

    def signal_deriv(self, arg):
        arg = np.asarray(arg, dtype=float)
        w = self.omega
        return self.amplitude * (
            w * np.cos(w * arg) * self.window(arg)
            + np.sin(w * arg) * self.window.derivative(arg)
        )

    def _arg(self, points, t):
        return self.speed * (t - self.lag) - np.asarray(points) @ _unit(self.direction)

    def value(self, points, t: float):
        return self.signal(self._arg(points, t))

    def gradient(self, points, t: float):
        return -_unit(self.direction)[None, :] * self.signal_deriv(self._arg(points, t))[:, None]


@dataclass(frozen=True)
class ManufacturedSolution:
    """Travelling pulse f(c t - lag - x.d) solving the speed-c wave equation."""

    speed: float = 0.5
    omega: float = 1.0
    lag: float = 0.0
    direction: tuple = (1.0, 0.0)
    window: SmoothWindow = SmoothWindow(0.2, 2.0)
    amplitude: float = 1.0

    def __post_init__(self):
        _unit(self.direction)

    def signal(self, arg):
        arg = np.asarray(arg, dtype=float)
        return self.amplitude * np.sin(self.omega * arg) * self.window(arg)

    def signal_deriv(self, arg):
        arg = np.asarray(arg, dtype=float)
        w = self.omega
        return self.amplitude * (
            w * np.cos(w * arg) * self.window(arg)
            + np.sin(w * arg) * self.window.derivative(arg)
        )

    def _arg(self, points, t):
        return self.speed * t - self.lag - np.asarray(points) @ _unit(self.direction)

    def value(self, points, t: float):
        return self.signal(self._arg(points, t))

    def gradient(self, points, t: float):
        return -_unit(self.direction)[None, :] * self.signal_deriv(self._arg(points, t))[:, None]


def incident_traces(wave: PlaneWave, side, t: float, n_points: int = 64):
    """Dirichlet and own-normal Neumann samples of the wave on one interface side."""
    u = np.linspace(0.0, 1.0, n_points)
    pts = side.point(u)
    nrm = side.normal(u)
    gd = wave.value(pts, t)
    gn = np.einsum("nc,nc->n", wave.gradient(pts, t), nrm)
    return gd, gn


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------
_SCENES = {
    "circle_one": lambda cfg: circle_one(cfg.radius),
    "circle_two": lambda cfg: circle_two(cfg.radius),
    "square_four": lambda cfg: square_four(cfg.half_width),
    "kite_two": lambda cfg: kite_two(),
}

_KINDS = ("plane_wave", "manufactured", "frequency")


@dataclass(frozen=True)
class RunConfig:
    """Flat experiment description; every field maps to one key=value line."""

    label: str = ""
    scene: str = "circle_one"
    radius: float = 0.5
    half_width: float = 0.5
    wavespeeds: tuple = (1.0, 0.5)
    kind: str = "plane_wave"
    scheme: str = "bdf2"
    n_steps: int = 64
    t_final: float = 5.0
    max_degree: int = 40
    n_quad: int = 0
    n_grid: int = 60
    omega: float = 1.0
    t_lag: float = 0.5
    direction: tuple = (1.0, 0.0)
    amplitude: float = 1.0
    s_ref: complex = 1.0 - 1.0j
    snapshot_times: tuple = ()
    out_dir: str = "out"
    quadrature: str = "lean"

    def __post_init__(self):
        if self.scene not in _SCENES:
            raise ConfigError(f"unknown scene {self.scene!r}; expected one of {sorted(_SCENES)}")
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {list(_KINDS)}")
        if self.quadrature not in ("lean", "full", "coarse"):
            raise ConfigError(f"unknown quadrature profile {self.quadrature!r}")
        if self.n_steps <= 0 or self.max_degree < 0 or self.n_grid <= 0 or self.n_quad < 0:
            raise ConfigError("counts must be positive")
        if self.t_final <= 0.0:
            raise ConfigError("t_final must be positive")
        if any(c <= 0.0 for c in self.wavespeeds):
            raise ConfigError("wavespeeds must be positive")

    def assembly_params(self) -> AssemblyParams:
        if self.quadrature == "lean":
            return AssemblyParams.lean()
        if self.quadrature == "coarse":
            return AssemblyParams.coarse()
        return AssemblyParams()

    def build_scene(self) -> Scene:
        scn = _SCENES[self.scene](self)
        if len(self.wavespeeds) != scn.n_subdomains:
            raise ConfigError(
                f"scene {self.scene!r} has {scn.n_subdomains} subdomains, "
                f"got {len(self.wavespeeds)} wavespeeds"
            )
        return scn

    def wave(self) -> PlaneWave:
        return PlaneWave(
            speed=self.wavespeeds[0], omega=self.omega, lag=self.t_lag,
            direction=self.direction, amplitude=self.amplitude,
        )

    def manufactured_fields(self) -> dict:
        return {
            i: ManufacturedSolution(
                speed=self.wavespeeds[i], omega=self.omega, lag=self.t_lag,
                direction=self.direction, amplitude=self.amplitude,
            )
            for i in range(1, len(self.wavespeeds))
        }


_FLOAT_KEYS = {"radius", "half_width", "t_final", "omega", "t_lag", "amplitude"}
_INT_KEYS = {"n_steps", "max_degree", "n_quad", "n_grid"}
_STR_KEYS = {"label", "scene", "kind", "scheme", "out_dir", "quadrature"}
_TUPLE_KEYS = {"wavespeeds", "direction", "snapshot_times"}
_COMPLEX_KEYS = {"s_ref"}


def _convert(key: str, raw: str):
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _STR_KEYS:
            return raw
        if key in _TUPLE_KEYS:
            return tuple(float(part) for part in raw.split(",") if part.strip())
        if key in _COMPLEX_KEYS:
            return complex(raw.replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def parse_config(text: str) -> RunConfig:
    """Parse flat key=value lines; # starts a comment, blank lines ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        values[key] = _convert(key, raw)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format_scalar(v: float) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _format_complex(z: complex) -> str:
    z = complex(z)
    if z.imag == 0.0:
        return _format_scalar(z.real)
    imag = _format_scalar(abs(z.imag)) + "j"
    sign = "-" if z.imag < 0 else "+"
    if z.real == 0.0:
        return ("-" if z.imag < 0 else "") + imag
    return _format_scalar(z.real) + sign + imag


def serialize_config(config: RunConfig) -> str:
    """Render back to the flat key=value format, one line per field.

    Serializing an unmodified preset reproduces every line of its file, so
    output headers stay diffable against the shipped parameter tables.
    """
    lines = []
    for f in dataclass_fields(RunConfig):
        v = getattr(config, f.name)
        if f.name in _TUPLE_KEYS:
            text = ", ".join(_format_scalar(x) for x in v)
        elif f.name in _COMPLEX_KEYS:
            text = _format_complex(v)
        elif f.name in _FLOAT_KEYS:
            text = _format_scalar(v)
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def preset_names() -> list:
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_preset(name: str) -> RunConfig:
    root = resources.files(__package__) / "presets"
    entry = root / f"{name}.cfg"
    if not entry.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(entry.read_text(encoding="utf-8"))


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    known = {f.name for f in dataclass_fields(RunConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    return replace(config, **overrides)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------
class TransferEvaluator:
    """Lazy per-frequency factorization cache for the transmission solve."""

    def __init__(self, assembler: MtfAssembler):
        self.assembler = assembler
        self._lock = threading.Lock()
        self._systems = {}
        self.rconds = []

    def system(self, s: complex):
        with self._lock:
            sys = self._systems.get(s)
        if sys is None:
            sys = self.assembler.system(s)
            with self._lock:
                if s not in self._systems:
                    self._systems[s] = sys
                    self.rconds.append((s, sys.rcond))
                sys = self._systems[s]
        return sys

    def __call__(self, s: complex, v: np.ndarray) -> np.ndarray:
        return self.system(s).solve(v)


@dataclass
class TdRun:
    """Densities of one time-domain solve plus everything needed to postprocess."""

    config: RunConfig
    scene: Scene
    assembler: MtfAssembler
    grid: TimeGrid
    scheme: CqScheme
    steps: np.ndarray
    samples: np.ndarray
    diagnostics: CqDiagnostics

    def times(self) -> np.ndarray:
        return self.grid.times()


def _rhs_at_time(config: RunConfig, scene: Scene, t: float) -> np.ndarray:
    n_quad = config.n_quad or None
    if config.kind == "plane_wave":
        wave = config.wave()
        return assemble_rhs_incident(
            scene, config.max_degree,
            lambda pts: wave.value(pts, t),
            lambda pts: wave.gradient(pts, t),
            n_quad,
        )
    fields = {
        i: (lambda pts, m=m: m.value(pts, t), lambda pts, m=m: m.gradient(pts, t))
        for i, m in config.manufactured_fields().items()
    }
    return assemble_rhs_fields(scene, config.max_degree, fields, n_quad)


def sample_data(config: RunConfig, scene: Scene, grid: TimeGrid, sch: CqScheme) -> np.ndarray:
    """Real right-hand-side samples at the scheme's native step or stage times."""
    if sch.multistage:
        times = grid.stage_times(sch)
    else:
        times = grid.times()
    flat = times.reshape(-1)
    dim = BlockIndexMap(scene, config.max_degree).total_dim
    out = np.zeros((flat.size, dim), dtype=float)
    for j, t in enumerate(flat):
        out[j] = _rhs_at_time(config, scene, float(t)).real
    return out.reshape(times.shape + (dim,))


def run_simulation(config: RunConfig, *, threads: int = 1) -> TdRun:
    """Solve the transmission problem over [0, t_final] with the configured scheme."""
    if config.kind == "frequency":
        raise ConfigError("frequency presets drive single-frequency sweeps, not time runs")
    scene = config.build_scene()
    sch = scheme(config.scheme)
    grid = TimeGrid(config.n_steps, config.t_final)
    assembler = MtfAssembler(scene, config.max_degree, config.wavespeeds, config.assembly_params())
    data = sample_data(config, scene, grid, sch)
    evaluator = TransferEvaluator(assembler)
    samples, diag = cq_solve(sch, grid, evaluator, data, threads=threads)
    diag.frequency_conditions.extend(rc for _, rc in sorted(evaluator.rconds, key=lambda t: t[0].imag))
    steps = steps_from_stages(samples) if sch.multistage else samples
    return TdRun(
        config=config, scene=scene, assembler=assembler, grid=grid, scheme=sch,
        steps=steps, samples=samples, diagnostics=diag,
    )
