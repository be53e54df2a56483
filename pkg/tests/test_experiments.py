import json

import numpy as np
import pytest

from talenti_lab import ConfigurationError, DomainError
from talenti_lab.control import spacetime_volume
from talenti_lab.experiments import (
    CounterexampleConfig,
    CutoffSpec,
    adversarial_controls,
    annulus_control,
    blended_control,
    l1_error,
    maximality_sweep,
    phi_cutoff,
    psi_cutoff,
    random_control,
    run_counterexample,
    scale_to_volume,
    step_approximation,
    sweep_experiment,
    talenti_experiment,
    terminal_states,
    verify_talenti,
)
from talenti_lab.grid import RadialGrid, SpaceTimeField, TimeGrid, integrate_spacetime
from talenti_lab.rearrangement import schwarz_rearrange


def test_cutoff_shape():
    c = CutoffSpec(0.25, 0.5)
    r = np.linspace(0, 1, 1001)
    v = c(r)
    assert np.all(v[r <= 0.25] == 1.0) and np.all(v[r >= 0.5] == 0.0)
    inside = (r > 0.25) & (r < 0.5)
    assert np.all(np.diff(v[inside]) < 0)
    # flat to second order at the ends
    h = 1e-4
    assert abs(c(0.25 + h) - 1.0) < 20 * h ** 3 / 0.25 ** 3
    with pytest.raises(DomainError):
        CutoffSpec(0.5, 0.25)
    with pytest.raises(DomainError):
        CutoffSpec(0.5, 2.0).on(RadialGrid(1.0, 2, 8))


def test_named_cutoffs():
    assert (phi_cutoff(2.0).inner, phi_cutoff(2.0).outer) == (0.25, 0.5)
    assert (psi_cutoff(1.0).inner, psi_cutoff(1.0).outer) == (0.5, 0.75)
    assert "bridge" in psi_cutoff().describe()


def test_step_approximation_one_term():
    s = step_approximation(lambda r: np.full_like(r, 0.7), 1)
    np.testing.assert_array_equal(s.radii, [0.0, 1.0])
    np.testing.assert_array_equal(s.beta, [0.7])


def test_step_forms_agree_cellwise():
    g = RadialGrid(1.0, 2, 96)
    s = step_approximation(psi_cutoff(), 12)
    np.testing.assert_allclose(s.on(g, "annulus").values, s.on(g, "ball").values, rtol=0, atol=1e-15)


def test_step_approximation_is_a_lower_bound():
    phi = psi_cutoff()
    r = np.linspace(0, 1, 4001)[:-1]
    for k in (3, 7, 20):
        assert np.all(step_approximation(phi, k).annulus_form(r) <= phi(r) + 1e-15)
    with pytest.raises(DomainError):
        step_approximation(phi, 0)


def test_l1_error_converges():
    phi = psi_cutoff()
    errs = [l1_error(phi, step_approximation(phi, k), 3, (0.5, 0.75)) for k in (8, 16, 32, 64, 128)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.02


def test_scale_to_volume_hits_target():
    g, t = RadialGrid(1.0, 2, 32), TimeGrid(1.0, 16)
    shape = SpaceTimeField(g, t, np.random.default_rng(1).random((17, 32)))
    f = scale_to_volume(shape, 0.4 * spacetime_volume(g, t))
    assert integrate_spacetime(f) == pytest.approx(0.4 * spacetime_volume(g, t), rel=1e-12)
    tiny = SpaceTimeField(g, t, np.zeros((17, 32)))
    with pytest.raises(DomainError):
        scale_to_volume(tiny, 1.0)


def test_random_control_reproducible():
    g, t = RadialGrid(1.0, 2, 32), TimeGrid(1.0, 16)
    V0 = 0.25 * spacetime_volume(g, t)
    a = random_control(g, t, V0, np.random.default_rng(5))
    b = random_control(g, t, V0, np.random.default_rng(5))
    assert a.f == b.f


def test_talenti_trivial_when_already_rearranged():
    g, t = RadialGrid(1.0, 2, 64), TimeGrid(1.0, 32)
    V0 = 0.25 * spacetime_volume(g, t)
    f = random_control(g, t, V0, np.random.default_rng(2)).f
    sharp = schwarz_rearrange(f)
    res = verify_talenti(sharp)
    assert res.worst_margin <= 1e-12


def test_talenti_annulus():
    g, t = RadialGrid(1.0, 2, 64), TimeGrid(1.0, 64)
    ctrl = annulus_control(g, t, 0.2 * spacetime_volume(g, t), 0.5)
    res = verify_talenti(ctrl)
    assert res.holds and res.level_margins.shape == (65,)


def test_talenti_experiment_summary():
    out = talenti_experiment(samples=2, n_r=32, n_t=32, seed=4)
    assert out["all_hold"] and len(out["margins"]) == 2


def test_config_validation(tmp_path):
    for bad in (dict(R=0), dict(V0_fraction=1.0), dict(n_t=1), dict(d=1.5), dict(scheme="euler"), dict(seed=True)):
        with pytest.raises(ConfigurationError):
            CounterexampleConfig(**bad)
    with pytest.raises(ConfigurationError):
        CounterexampleConfig.from_dict({"bogus": 1})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_r": 64, "n_t": 512, "seed": 9}))
    cfg = CounterexampleConfig.from_json(path)
    assert (cfg.n_r, cfg.n_t, cfg.seed, cfg.R) == (64, 512, 9, 1.0)
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        CounterexampleConfig.from_json(path)


@pytest.fixture(scope="module")
def desk_run():
    return run_counterexample(CounterexampleConfig(n_r=256, n_t=256))


def test_counterexample_frozen_values(desk_run):
    """Regression values at (n_r, n_t) = (256, 256), d = 2, V0 = Vol / 4."""
    r = desk_run.report
    assert r.c_phi == pytest.approx(0.008248390533522743, rel=1e-9)
    assert r.c_psi == pytest.approx(0.08026167502390992, rel=1e-9)
    J = r.cross_objectives
    assert J["J_phi_f_phi"] == pytest.approx(0.022964074143777914, rel=1e-9)
    assert J["J_phi_f_psi"] == pytest.approx(0.022791852548960226, rel=1e-9)
    assert J["J_psi_f_psi"] == pytest.approx(0.2048586474516036, rel=1e-9)
    assert J["J_psi_f_phi"] == pytest.approx(0.19103069215558555, rel=1e-9)
    assert r.control_distance == pytest.approx(0.04042756557464602, rel=1e-9)


def test_counterexample_report_structure(desk_run):
    r = desk_run.report
    d = r.to_dict()
    assert {"c_phi", "c_psi", "control_distance", "cross_objectives", "invariants"} <= set(d)
    assert len(r.r_phi_curve) == 257
    assert r.r_phi_T < 0.25 and r.r_psi_T > 0.5
    assert r.neighbourhood_levels == 16
    assert r.neighbourhood_min_separation > 0
    assert any("3R/4" in n for n in r.notes)
    # at this resolution the last pre-terminal radius has not converged yet
    assert not r.invariants["margins_exceed_10x_duality_gap"]


def test_sweep_witnesses(desk_run):
    adv = {"f_phi": desk_run.f_phi, "f_psi": desk_run.f_psi}
    fails = maximality_sweep(desk_run.f_phi, adv)
    assert [f.sample for f in fails] == ["f_psi"]
    assert fails[0].margin > 1e-9
    fails = maximality_sweep(desk_run.f_psi, adv)
    assert [f.sample for f in fails] == ["f_phi"]
    blend = blended_control(desk_run.f_phi, desk_run.f_psi)
    assert maximality_sweep(blend, adv)


def test_adversarial_set(desk_run):
    rng = np.random.default_rng(0)
    adv = adversarial_controls(desk_run.grid, desk_run.tgrid, desk_run.V0, rng, n_random=2)
    assert {"ball_early_1", "annulus_0.25R", "random_bang_bang_1"} <= set(adv)
    for ctrl in adv.values():
        assert ctrl.volume_residual <= 1e-9 * desk_run.V0


def test_threads_do_not_change_results(desk_run, monkeypatch):
    rng = np.random.default_rng(1)
    adv = adversarial_controls(desk_run.grid, desk_run.tgrid, desk_run.V0, rng, n_random=3)
    monkeypatch.setenv("TALENTI_LAB_THREADS", "1")
    serial = terminal_states(adv)
    monkeypatch.setenv("TALENTI_LAB_THREADS", "4")
    parallel = terminal_states(adv)
    assert all(serial[k] == parallel[k] for k in adv)


def test_sweep_experiment_small():
    run = run_counterexample(CounterexampleConfig(n_r=64, n_t=1024))
    out = sweep_experiment(run, n_random=2)
    assert out["all_falsified"]
    assert set(out["candidates"]) == {"f_phi", "f_psi", "blend"}
