"""Time-domain driver: signals, configs, presets, and full-run properties."""

import numpy as np
import pytest

from wavebie.geometry import SideView, segment_param
from wavebie.mtf_system import assemble_rhs_fields, assemble_rhs_incident
from wavebie.td_driver import (
    ConfigError,
    ManufacturedSolution,
    PlaneWave,
    RunConfig,
    SmoothWindow,
    TransferEvaluator,
    apply_overrides,
    eta,
    incident_traces,
    load_preset,
    parse_config,
    preset_names,
    run_simulation,
    sample_data,
)
from wavebie.cq_engine import TimeGrid, scheme
from wavebie.mtf_system import MtfAssembler
from wavebie.geometry import circle_two


# ---------------------------------------------------------------------------
# smooth window
# ---------------------------------------------------------------------------
def test_eta_branch_values():
    assert eta(0.1, 0.2, 2.0) == 0.0
    assert eta(0.2, 0.2, 2.0) == 0.0
    assert eta(3.0, 0.2, 2.0) == 1.0
    assert eta(2.0, 0.2, 2.0) == 1.0
    # tau = 1/2: 1 - exp(2 e^{-2} / (-1/2))
    assert abs(eta(1.1, 0.2, 2.0) - (1.0 - np.exp(-4.0 * np.exp(-2.0)))) < 1e-14


def test_eta_monotone_and_bounded():
    t = np.linspace(-1.0, 3.0, 2001)
    v = eta(t, 0.2, 2.0)
    assert v.shape == t.shape
    assert np.all(v >= 0.0) and np.all(v <= 1.0)
    assert np.all(np.diff(v) >= 0.0)


def test_window_derivative_matches_finite_differences():
    w = SmoothWindow(0.2, 2.0)
    h = 1e-6
    for t in (0.25, 0.5, 1.1, 1.7, 1.95):
        fd = (w(t + h) - w(t - h)) / (2.0 * h)
        assert abs(w.derivative(t) - fd) < 1e-7 * max(1.0, abs(fd))
    assert w.derivative(0.1) == 0.0
    assert w.derivative(2.5) == 0.0


def test_window_validation():
    with pytest.raises(ValueError):
        SmoothWindow(2.0, 2.0)


# ---------------------------------------------------------------------------
# incident wave and manufactured solution
# ---------------------------------------------------------------------------
def test_plane_wave_requires_unit_direction():
    with pytest.raises(ValueError):
        PlaneWave(direction=(1.0, 1.0))


def test_incident_traces_zero_before_wavefront():
    wave = PlaneWave(speed=1.0, omega=8.0, lag=0.5, direction=(1.0, 0.0))
    side = SideView(segment_param((-0.5, -1.0), (-0.5, 1.0)), 1)
    gd, gn = incident_traces(wave, side, 0.0)
    assert np.all(gd == 0.0) and np.all(gn == 0.0)


def test_incident_traces_tangential_direction_has_zero_neumann():
    wave = PlaneWave(speed=1.0, omega=8.0, lag=0.0, direction=(1.0, 0.0))
    side = SideView(segment_param((0.0, 0.0), (1.0, 0.0)), 1)
    gd, gn = incident_traces(wave, side, 3.0)
    assert np.abs(gd).max() > 0.1
    assert np.abs(gn).max() == 0.0


def test_incident_value_spot_against_high_precision():
    import mpmath as mp

    mp.mp.dps = 40
    wave = PlaneWave(speed=1.0, omega=8.0, lag=0.5, direction=(0.6, 0.8))
    x = np.array([[0.3, -0.2]])
    t = 1.9
    arg = mp.mpf(t) - mp.mpf("0.5") - (mp.mpf("0.6") * mp.mpf("0.3") + mp.mpf("0.8") * mp.mpf("-0.2"))
    tau = (arg - mp.mpf("0.2")) / mp.mpf("1.8")
    ref = mp.sin(8 * arg) * (1 - mp.e ** (2 * mp.e ** (-1 / tau) / (tau - 1)))
    got = wave.value(x, t)[0]
    assert abs(got - float(ref)) < 1e-13 * abs(float(ref))


@pytest.mark.parametrize("obj", [
    PlaneWave(speed=1.0, omega=3.0, lag=0.4, direction=(0.6, 0.8)),
    ManufacturedSolution(speed=0.5, omega=3.0, lag=0.4, direction=(0.6, 0.8)),
])
def test_gradient_matches_finite_differences(obj):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.4, 0.4, (6, 2))
    t = 2.3
    h = 1e-6
    grad = obj.gradient(pts, t)
    for c in range(2):
        dp = pts.copy()
        dm = pts.copy()
        dp[:, c] += h
        dm[:, c] -= h
        fd = (obj.value(dp, t) - obj.value(dm, t)) / (2.0 * h)
        assert np.abs(grad[:, c] - fd).max() < 2e-6


def test_manufactured_solves_its_wave_equation():
    m = ManufacturedSolution(speed=0.5, omega=2.0, lag=0.3, direction=(0.6, 0.8))
    pts = np.array([[0.15, -0.1]])
    t = 2.1
    h = 1e-4
    u_tt = (m.value(pts, t + h) - 2.0 * m.value(pts, t) + m.value(pts, t - h)) / h**2
    lap = 0.0
    for c in range(2):
        dp = pts.copy(); dm = pts.copy()
        dp[:, c] += h; dm[:, c] -= h
        lap = lap + (m.value(dp, t) - 2.0 * m.value(pts, t) + m.value(dm, t)) / h**2
    assert abs(u_tt - 0.25 * lap) < 1e-5 * max(1.0, abs(u_tt))


# ---------------------------------------------------------------------------
# configs and presets
# ---------------------------------------------------------------------------
def test_parse_config_roundtrip():
    cfg = parse_config("""
        # comment line
        scene = circle_two
        kind = plane_wave
        wavespeeds = 1, 0.5, 0.25   # inline comment
        omega = 8
        direction = 0, -1
        n_steps = 32
    """)
    assert cfg.scene == "circle_two"
    assert cfg.wavespeeds == (1.0, 0.5, 0.25)
    assert cfg.direction == (0.0, -1.0)
    assert cfg.n_steps == 32


def test_parse_config_rejects_bad_input():
    with pytest.raises(ConfigError, match="frobnicate"):
        parse_config("frobnicate = 3")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just some words")
    with pytest.raises(ConfigError, match="n_steps"):
        parse_config("n_steps = soon")
    with pytest.raises(ConfigError):
        RunConfig(t_final=-1.0)
    with pytest.raises(ConfigError):
        RunConfig(scene="pentagon")
    with pytest.raises(ConfigError):
        RunConfig(kind="mystery")
    with pytest.raises(ConfigError):
        RunConfig(quadrature="heroic")


def test_wavespeed_count_checked_against_scene():
    cfg = RunConfig(scene="circle_two", wavespeeds=(1.0, 0.5))
    with pytest.raises(ConfigError, match="subdomains"):
        cfg.build_scene()


def test_unknown_preset_lists_names():
    with pytest.raises(ConfigError) as err:
        load_preset("test99")
    assert "test0" in str(err.value) and "kite2" in str(err.value)


def test_apply_overrides():
    cfg = apply_overrides(load_preset("test0"), n_steps=16, scheme="radau2")
    assert cfg.n_steps == 16 and cfg.scheme == "radau2"
    with pytest.raises(ConfigError):
        apply_overrides(cfg, warp_factor=2)


def test_preset_tables():
    assert preset_names() == sorted(
        ["test0", "test1", "circle2", "square4", "kite2",
         "freq_a", "freq_b", "freq_c", "freq_d"])

    t0 = load_preset("test0")
    assert (t0.scene, t0.kind) == ("circle_one", "manufactured")
    assert t0.wavespeeds == (1.0, 0.5)
    assert (t0.omega, t0.t_final, t0.t_lag) == (1.0, 5.0, 0.5)
    assert t0.direction == (1.0, 0.0)
    assert t0.max_degree == 40

    t1 = load_preset("test1")
    assert (t1.scene, t1.wavespeeds) == ("circle_two", (1.0, 0.5, 0.5))

    c2 = load_preset("circle2")
    assert (c2.scene, c2.kind) == ("circle_two", "plane_wave")
    assert c2.wavespeeds == (1.0, 0.5, 0.25)
    assert (c2.omega, c2.t_final, c2.t_lag) == (8.0, 10.0, 0.5)
    assert c2.direction == (np.sqrt(0.5), -np.sqrt(0.5))
    assert c2.max_degree == 80
    assert len(c2.snapshot_times) == 9
    assert c2.snapshot_times[0] == 0.0 and c2.snapshot_times[-1] == 10.0

    s4 = load_preset("square4")
    assert s4.scene == "square_four" and s4.half_width == 0.5
    assert s4.wavespeeds == (1.0, 0.5, 0.25, 0.5, 0.25)
    assert s4.max_degree == 20

    k2 = load_preset("kite2")
    assert k2.scene == "kite_two" and k2.direction == (1.0, 0.0)
    assert k2.max_degree == 80
    assert k2.snapshot_times == tuple(0.5 + i for i in range(9))

    # single-frequency presets: per-subdomain parameters s/c_i
    for name, s0, svals in [
        ("freq_a", -1j, (-1j, -2j, -4j)),
        ("freq_b", 1 - 1j, (1 - 1j, 2 - 2j, 4 - 4j)),
        ("freq_c", 1 - 1j, (1 - 1j, 10 - 10j, 20 - 20j)),
        ("freq_d", 1 - 1j, (1 - 1j, 10 - 10j, 100 - 100j)),
    ]:
        f = load_preset(name)
        assert f.kind == "frequency" and f.scene == "circle_two"
        assert f.s_ref == s0
        assert f.direction == (0.0, -1.0)
        derived = tuple(f.s_ref / c for c in f.wavespeeds)
        assert np.allclose(derived, svals, rtol=1e-14)


# ---------------------------------------------------------------------------
# data sampling and full runs
# ---------------------------------------------------------------------------
def _coarse(preset="test0", **kw):
    base = dict(max_degree=8, n_steps=16, quadrature="coarse")
    base.update(kw)
    return apply_overrides(load_preset(preset), **base)


def test_sample_data_shapes_and_reality():
    cfg = _coarse("test0", scheme="lobatto3", n_steps=6)
    scene = cfg.build_scene()
    sch = scheme("lobatto3")
    grid = TimeGrid(cfg.n_steps, cfg.t_final)
    data = sample_data(cfg, scene, grid, sch)
    assert data.shape[:2] == (6, 3)
    assert data.dtype == np.float64
    bdf = sample_data(cfg, scene, grid, scheme("bdf2"))
    assert bdf.shape[0] == 7


def test_rhs_fields_consistent_with_incident_route():
    scene = circle_two(0.5)
    wave = PlaneWave(speed=1.0, omega=8.0, lag=0.5, direction=(0.0, -1.0))
    t = 1.7
    direct = assemble_rhs_incident(
        scene, 10, lambda p: wave.value(p, t), lambda p: wave.gradient(p, t))
    via_fields = assemble_rhs_fields(
        scene, 10, {0: (lambda p: -wave.value(p, t), lambda p: -wave.gradient(p, t))})
    assert np.abs(direct - via_fields).max() < 1e-14


def test_zero_signal_gives_zero_densities():
    run = run_simulation(_coarse(amplitude=0.0))
    assert np.abs(run.steps).max() <= 1e-12


def test_linearity_in_amplitude():
    base = run_simulation(_coarse())
    tripled = run_simulation(_coarse(amplitude=3.0))
    scale = np.abs(base.steps).max()
    assert scale > 0
    assert np.abs(tripled.steps - 3.0 * base.steps).max() <= 1e-10 * scale


def test_causal_onset_plane_wave():
    # wavefront enters the window at t = t_lag + 0.2 - 0.5 = 1.7
    cfg = _coarse("circle2", t_lag=2.0, n_steps=16, t_final=5.0)
    run = run_simulation(cfg)
    norms = np.linalg.norm(run.steps, axis=1)
    early = run.times() < 1.65
    assert early.sum() >= 5
    assert norms[early].max() <= 1e-8 * norms.max()


def test_scheme_agreement_improves_with_resolution():
    diffs = []
    for n in (12, 24):
        a = run_simulation(_coarse(n_steps=n, scheme="bdf2"))
        b = run_simulation(_coarse(n_steps=n, scheme="radau2"))
        num = np.linalg.norm(a.steps[-1] - b.steps[-1])
        den = np.linalg.norm(a.steps[-1])
        assert den > 0
        diffs.append(num / den)
    assert diffs[1] < diffs[0]
    assert diffs[1] < 0.05


def test_frequency_preset_rejected_by_time_runner():
    with pytest.raises(ConfigError, match="frequency"):
        run_simulation(load_preset("freq_a"))


def test_transfer_evaluator_caches_factorization():
    from wavebie.bio_assembly import AssemblyParams

    assembler = MtfAssembler(circle_two(0.5), 4, (1.0, 0.5, 0.25), AssemblyParams.coarse())
    ev = TransferEvaluator(assembler)
    rhs = np.ones(ev.assembler.index.total_dim, dtype=complex)
    x1 = ev(2.0 + 1.0j, rhs)
    x2 = ev(2.0 + 1.0j, 2.0 * rhs)
    assert len(ev.rconds) == 1
    assert np.allclose(2.0 * x1, x2, rtol=1e-12, atol=0)
    sys = ev.system(2.0 + 1.0j)
    assert sys.residual(x1, rhs) < 1e-10


def test_run_carries_diagnostics():
    run = run_simulation(_coarse(n_steps=8))
    d = run.diagnostics
    assert d.halved
    assert d.n_evaluated == 8 // 2 + 1
    assert len(d.frequency_conditions) >= d.n_evaluated
    assert all(0 < rc <= 1 for rc in d.frequency_conditions)
