import numpy as np
import pytest

from mzen.datagen import CameraRig, generate_scene_dataset, one_sphere_scene
from mzen.errors import DataError, ManifestError, NumericalError, PhaseViolation
from mzen.field import FieldConfig
from mzen.render import RenderConfig
from mzen.schedule import (ConvergenceExperimentConfig, PoseObjective, TrainConfig, TrainLog, convergence_setup,
                           descend, estimate_constants, init_state, load_checkpoint, predicted_iterations,
                           priming_convergence_experiment, render_config_for, run_config, run_phase_a, run_phase_b,
                           run_stage, save_checkpoint)
from mzen.training import WIDE_TOL

TINY = FieldConfig.desk(trunk_width=8, feature_width=4, color_width=4, levels_position=2, levels_direction=1)


def stub_config(**kw):
    base = dict(steps=3, steps_c=1, rays_per_view=4, n_samples=4, register_steps=1, register_rays=8, field=TINY)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def ds():
    rig = CameraRig(n_cameras=3, columns=3, H=12, W=12)
    d = generate_scene_dataset(one_sphere_scene(), rig, (1, 2), seed=0,
                               render_cfg=RenderConfig(n_samples=16, near=1.0, far=5.0))
    d.split = {"train": [0, 1, 2, 4, 5], "test": [3]}
    return d


def test_config_validation():
    with pytest.raises(DataError):
        TrainConfig(backbone="nerfacto").validate()
    with pytest.raises(DataError):
        TrainConfig(steps=5, steps_c=5).validate()
    with pytest.raises(DataError):
        TrainConfig(barf_start=0.6, barf_end=0.5).validate()
    assert TrainConfig(backbone="camp").mode == "ipe"
    assert TrainConfig(backbone="barf").mode == "plain"


def test_render_config_from_bounds(ds):
    rc = render_config_for(ds, TrainConfig())
    assert rc.near == 1.0 and rc.far == 5.0
    assert rc.scene_center == (0.0, 0.0, 3.0) and rc.scene_scale == 2.0


@pytest.mark.parametrize("pair", [(1, 3), (2, 4)])
def test_pass_parity(ds, pair):
    cfg = stub_config()
    counts = [run_config(n, ds, cfg, evaluate=False).log.total_passes for n in pair]
    assert counts[0] == counts[1]


def test_config4_phase_order_and_budgets(ds):
    run = run_config(4, ds, stub_config(), evaluate=False)
    assert run.log.phases == ["A", "B", "C"]
    wide = [k for k in ds.indices("train") if ds.views[k].zoom <= 1 + WIDE_TOL]
    assert run.log.passes["A"] == 2 * len(wide)
    assert run.log.passes["C"] == 1 * len(ds.indices("train"))
    assert len(run.log.matches) == len(ds.indices("train")) - len(wide)


def test_baselines_keep_unit_zoom(ds):
    run = run_config(2, ds, stub_config(), evaluate=False)
    assert all(float(z.value) == 1.0 for z in run.state.zoom)


def test_phase_a_rejects_zoom_views(ds):
    cfg = stub_config()
    state = init_state(ds, cfg)
    with pytest.raises(PhaseViolation):
        run_stage("A", "A", state, ds, [0, 1], ["field"], 1, cfg, np.random.default_rng(0), TrainLog())


def test_phase_b_rejects_field_updates(ds):
    cfg = stub_config()
    state, log = run_phase_a(ds, cfg, steps=1)
    with pytest.raises(PhaseViolation):
        run_stage("B", "B", state, ds, [1], ["field", "zoom_poses"], 1, cfg, np.random.default_rng(0), log)


def test_phase_b_leaves_field_and_wide_poses_untouched(ds):
    cfg = stub_config()
    state, log = run_phase_a(ds, cfg, steps=1)
    before = state.field.digest(), [state.rotation[k].value.copy() for k in (0, 2, 4)]
    run_phase_b(state, ds, cfg, log=log, steps=2)
    assert state.field.digest() == before[0]
    for k, r in zip((0, 2, 4), before[1]):
        np.testing.assert_array_equal(state.rotation[k].value, r)


def test_phase_a_needs_two_wide_views(ds):
    cfg = stub_config()
    saved = ds.split
    ds.split = {"train": [0, 1], "test": [3]}
    try:
        with pytest.raises(DataError):
            run_phase_a(ds, cfg)
    finally:
        ds.split = saved


def test_evaluation_report(ds):
    run = run_config(4, ds, stub_config())
    assert run.report is not None and run.report.per_image[0]["name"] == ds.views[3].name
    assert 3 in run.test_poses


def test_checkpoint_round_trip(ds, tmp_path):
    run = run_config(3, ds, stub_config(), evaluate=False)
    save_checkpoint(tmp_path, run.state, run.log, ds, run.train_config, 3)
    state, cfg, n = load_checkpoint(tmp_path, ds)
    assert n == 3 and cfg == run.train_config
    assert state.field.digest() == run.state.field.digest()
    np.testing.assert_array_equal(state.translation[2].value, run.state.translation[2].value)
    with pytest.raises(ManifestError):
        load_checkpoint(tmp_path / "missing", ds)


def test_predicted_iterations():
    assert predicted_iterations(1e-6, 1e-5, 0.5, 0.5) == 0
    assert predicted_iterations(1.0, np.exp(-2.0), 0.5, 0.5) == 8
    assert predicted_iterations(1.0, 1.0, 0.1, 0.1) == 0
    assert predicted_iterations(np.e, 1.0, 0.1, 0.1) == 100
    # ceil(10 ln 100) = ceil(46.05)
    assert predicted_iterations(100.0, 1.0, 0.5, 0.2) == 47
    with pytest.raises(DataError):
        predicted_iterations(1.0, 0.1, 2.0, 1.0)


def test_descend_on_quadratic():
    class Quad:
        def value_and_grad(self, p):
            return float(p @ p), 2 * p

    it, censored, trace = descend(Quad(), np.ones(6), 0.25, 1e-8, 100)
    # excess halves in norm each step, so 6 * 0.25^k <= 1e-8
    assert not censored and it == int(np.ceil(np.log(6e8) / np.log(4)))
    assert trace[0] == 6.0
    _, censored, _ = descend(Quad(), np.ones(6), 0.25, 1e-8, 3)
    assert censored


def test_convergence_experiment_rejects_flat_objective(ds):
    cfg = stub_config()
    state = init_state(ds, cfg)
    for t in state.field:
        t.value = np.zeros_like(t.value)
    target = np.full((ds.height, ds.width, 3), 0.5)
    p_star = np.concatenate([ds.views[0].pose.rotation, ds.views[0].pose.translation])
    exp = ConvergenceExperimentConfig(n_random=1, budget=2, n_rays=8)
    with pytest.raises(NumericalError):
        priming_convergence_experiment(state, target, p_star, p_star, 1.0, cfg, render_config_for(ds, cfg), exp)


def test_pose_descent_windowed_loss_never_rises():
    rig = CameraRig(n_cameras=3, columns=3, H=12, W=12, zoom_rotation_drift=0.03, zoom_translation_drift=0.05)
    d = generate_scene_dataset(one_sphere_scene(), rig, (1, 2), seed=0,
                               render_cfg=RenderConfig(n_samples=16, near=1.0, far=5.0))
    field = FieldConfig.desk(trunk_width=16, feature_width=8, color_width=8, levels_position=2, levels_direction=1)
    cfg = TrainConfig(init_poses="gt", n_samples=8, rays_per_view=32, lr_field=1e-2, field=field)
    state, _ = run_phase_a(d, cfg, steps=60)
    k = d.zoom_indices()[0]
    target, p_star, p_primed, _ = convergence_setup(state, d, k, cfg)
    rng = np.random.default_rng(0)
    obj = PoseObjective(state, target, d.views[k].zoom, cfg, render_config_for(d, cfg), rng, 16)
    L_hat, _ = estimate_constants(obj, p_star, rng)
    _, _, trace = descend(obj, p_primed, 1.0 / L_hat, 1e-12, 200)
    windows = np.array(trace[:200]).reshape(4, 50).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)
