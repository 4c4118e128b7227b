import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snlgame.canonical import compute_W
from snlgame.central import CentralState, initial_state, project_box, run_alg1, step_alg1
from snlgame.network import InstanceError, build_instance
from snlgame.report import SolverConfig
from snlgame.verify import rate_check

from conftest import line_instance


def test_project_box_examples():
    assert np.array_equal(project_box([0.3, 0.7], [0, 0], [1, 1]), [0.3, 0.7])
    assert np.array_equal(project_box([2.0, -1.0], [0, 0], [1, 1]), [1.0, 0.0])
    with pytest.raises(ValueError):
        project_box([1.0, 2.0], [0, 0, 0], [1, 1, 1])
    with pytest.raises(ValueError):
        project_box([1.0], [2.0], [1.0])


vecs = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(vecs, vecs)
def test_project_box_idempotent_nonexpansive(v1, v2):
    lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])
    p1, p2 = project_box(v1, lo, hi), project_box(v2, lo, hi)
    assert np.array_equal(project_box(p1, lo, hi), p1)
    assert np.linalg.norm(p1 - p2) <= np.linalg.norm(v1 - v2) + 1e-12


def test_config_validation():
    for bad in ({"alpha0": 0}, {"W": -1.0}, {"t_tol": 0}, {"schedule": "cubic"}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    with pytest.raises(ValueError):
        SolverConfig().alpha(0)
    assert SolverConfig().alpha(4) == pytest.approx(0.0637 / 2)
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"alpha": 1})


def test_zero_step_leaves_state(fig4):
    cfg = SolverConfig(seed=1)
    st0 = initial_state(fig4, cfg)
    st0.sigma = np.full(fig4.q, 0.3)
    st1 = step_alg1(st0, cfg, fig4, alpha=0.0)
    assert np.array_equal(st1.x, st0.x) and np.array_equal(st1.sigma, st0.sigma)
    assert np.array_equal(st1.x_hat, st0.x_hat) and st1.sum_alpha == 0.0


def test_truth_is_fixed_point(fig4):
    cfg = SolverConfig()
    st0 = CentralState(fig4.true_positions.copy(), np.zeros(fig4.q))
    st1 = step_alg1(st0, cfg, fig4)
    assert np.max(np.abs(st1.x - st0.x)) <= 1e-15
    assert np.max(np.abs(st1.sigma)) <= 1e-15


def test_one_step_by_hand():
    # one sensor at 2, anchor at 0, measured 1; sigma = 0.5, alpha = 0.1, W = 10
    inst = line_instance([2.0], [], anchors=[0.0], edges_as=[(0, 0, 1.0)])
    cfg = SolverConfig(alpha0=0.1, schedule="constant", W=10.0)
    st1 = step_alg1(CentralState(np.array([[2.0]]), np.array([0.5])), cfg, inst)
    # x - a * 2 sigma (x - a) = 2 - 0.1 * 2;  sigma + a * ((x^2 - 1) - sigma / 2)
    assert abs(st1.x[0, 0] - 1.8) <= 1e-14
    assert abs(st1.sigma[0] - 0.775) <= 1e-14
    assert st1.k == 2 and st1.sum_alpha == 0.1


def test_dual_clamped_to_W():
    inst = line_instance([2.0], [], anchors=[0.0], edges_as=[(0, 0, 1.0)])
    cfg = SolverConfig(alpha0=10.0, schedule="constant", W=1.5)
    st1 = step_alg1(CentralState(np.array([[2.0]]), np.array([0.5])), cfg, inst)
    assert st1.sigma[0] == 1.5


def test_start_at_truth_stops_immediately(fig4):
    rep = run_alg1(fig4, SolverConfig(), x0=fig4.true_positions)
    assert rep.converged and rep.iterations == 1
    assert rep.certificate["verdict"] == "certified-global-NE"


def test_disconnected_rejected():
    inst = build_instance([[0.1, 0.1], [0.9, 0.9]], [[0.0, 0.0], [0.2, 0.0], [0.0, 0.2]], 0.3, box=(0, 1))
    with pytest.raises(InstanceError):
        run_alg1(inst)


@pytest.fixture(scope="module")
def traced_run(fig4):
    return run_alg1(fig4, SolverConfig(seed=4, max_iters=400), keep_trajectory=True)


def test_feasible_every_iteration(traced_run, fig4):
    X = traced_run.final_state["trajectory_x"]
    S = traced_run.final_state["trajectory_sigma"]
    W = compute_W(fig4)
    assert np.all(X >= fig4.lower) and np.all(X <= fig4.upper)
    assert np.all(S >= 0) and np.all(S <= W)


def test_averages_reproduced_from_trajectory(traced_run):
    X = traced_run.final_state["trajectory_x"]
    S = traced_run.final_state["trajectory_sigma"]
    a = np.array(traced_run.series["step_alpha"])
    K = len(a)
    x_hat = np.tensordot(a, X[:K], axes=1) / a.sum()
    s_hat = a @ S[:K] / a.sum()
    assert np.max(np.abs(x_hat - traced_run.final_state["x_hat"])) <= 1e-12
    assert np.max(np.abs(s_hat - traced_run.final_state["sigma_hat"])) <= 1e-12
    assert traced_run.final_state["sum_alpha"] == pytest.approx(a.sum(), rel=1e-14)


def test_series_columns(traced_run):
    cols = ("k", "phi", "gap", "primal_residual", "dual_residual", "step_alpha")
    assert traced_run.columns == cols
    n = traced_run.iterations
    assert all(len(traced_run.series[c]) == n for c in cols)
    assert not np.any(np.isnan(traced_run.column("phi")))
    assert traced_run.series["k"] == list(range(1, n + 1))


def test_rate_bound_holds(traced_run):
    res = rate_check(traced_run)
    assert res.passed and res.violations == 0


def test_gap_estimated_without_truth(fig4):
    from snlgame.network import NetworkInstance

    blind = NetworkInstance(fig4.dim, fig4.anchors, fig4.edges_ss, fig4.edges_as, fig4.sensing_radius, fig4.boxes)
    rep = run_alg1(blind, SolverConfig(seed=2, max_iters=50), certify=False)
    assert rep.summary["gap_reference"] == "estimated"
    assert "mle" not in rep.summary


def test_nonconvergence_flag(fig4):
    rep = run_alg1(fig4, SolverConfig(seed=1, max_iters=3), certify=False)
    assert not rep.converged and rep.iterations == 3


def test_bitwise_repeatable(fig4):
    a = run_alg1(fig4, SolverConfig(seed=9, max_iters=200), certify=False)
    b = run_alg1(fig4, SolverConfig(seed=9, max_iters=200), certify=False)
    assert a.series_csv() == b.series_csv()


def test_small_duality_residual_implies_certificate(fig4):
    runs = [run_alg1(fig4, SolverConfig(seed=s)) for s in range(3)]
    runs.append(run_alg1(fig4, SolverConfig(), x0=fig4.true_positions))
    hits = 0
    for rep in runs:
        if rep.converged and rep.summary["duality_residual"] <= rep.config["t_tol"]:
            hits += 1
            assert rep.certificate["verdict"] == "certified-global-NE"
    assert hits >= 1
