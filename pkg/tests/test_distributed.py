import numpy as np
import pytest

from snlgame.canonical import compute_W, gamma
from snlgame.distributed import (
    LocalLayout,
    dsdeg_iteration,
    estimate_lipschitz,
    local_gamma,
    pseudo_gradient_F,
    pseudo_gradient_Fprime_and_u,
    run_dsdeg,
    sample_feasible_z,
)
from snlgame.network import NetworkInstance
from snlgame.report import SolverConfig

from conftest import line_instance

TOY = line_instance([0.2, 1.5], [(0, 1, 1.0)], anchors=[0.0], edges_as=[(0, 0, 0.5)])


def local_view(z, layout, inst, i):
    X, _ = layout.split(z)
    blk = z[layout.node_block(i)]
    nbr_x = {j: X[j] for j in layout.sensor_nbrs[i]}
    nbr_s = {}
    for j in layout.sensor_nbrs[i]:
        k = layout.sensor_nbrs[j].index(i)
        nbr_s[j] = z[layout.node_block(j)][k]
    return X[i], nbr_x, blk, nbr_s


def test_layout_positions(dense):
    lay = LocalLayout(dense)
    assert lay.q_total == 2 * dense.num_ss + dense.num_as
    slots = np.concatenate([lay.pos_i, lay.pos_j, lay.pos_a])
    assert np.array_equal(np.sort(slots), np.arange(lay.N * lay.n, lay.size))


def test_local_gamma_hand_value():
    inst = line_instance([0.0, 2.0], [(0, 1, 1.0)])
    # average copy 2, residual 3: 2 * 3 - 2^2 / 4
    assert local_gamma(0, np.array([0.0]), {1: np.array([2.0])}, [1.0], {1: 3.0}, inst) == 5.0
    assert local_gamma(0, np.array([0.0]), {1: np.array([2.0])}, [0.0], {1: 0.0}, inst) == 0.0
    with pytest.raises(ValueError, match="missing"):
        local_gamma(0, np.array([0.0]), {}, [1.0], {}, inst)


def test_local_gammas_sum_to_global(dense, rng):
    lay = LocalLayout(dense)
    for _ in range(20):
        x = rng.uniform(dense.lower, dense.upper)
        s = rng.uniform(0, 3, dense.q)
        z = lay.symmetric(x, s)
        total = sum(local_gamma(i, *local_view(z, lay, dense, i), dense) for i in range(dense.num_sensors))
        ss_only = np.r_[s[: dense.num_ss], np.zeros(dense.num_as)]
        as_only = np.r_[np.zeros(dense.num_ss), s[dense.num_ss :]]
        expect = 2 * gamma(x, ss_only, dense) + gamma(x, as_only, dense)
        assert total == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_F_vanishes_at_truth(dense):
    lay = LocalLayout(dense)
    z = lay.symmetric(dense.true_positions, np.zeros(dense.q))
    assert np.max(np.abs(pseudo_gradient_F(z, dense, lay))) <= 1e-14


def test_F_matches_local_finite_differences(dense, rng):
    lay = LocalLayout(dense)
    W = compute_W(dense)
    h = 1e-6
    for _ in range(20):
        z = sample_feasible_z(lay, W, rng)
        F = pseudo_gradient_F(z, dense, lay)
        fd = np.zeros_like(F)
        for i in range(dense.num_sensors):
            xi, nx, si, ns = local_view(z, lay, dense, i)
            for c in range(dense.dim):
                e = np.zeros(dense.dim)
                e[c] = h
                fd[i * dense.dim + c] = (local_gamma(i, xi + e, nx, si, ns, dense) - local_gamma(i, xi - e, nx, si, ns, dense)) / (2 * h)
            blk = lay.node_block(i)
            for k in range(si.size):
                e = np.zeros(si.size)
                e[k] = h
                fd[blk.start + k] = -(local_gamma(i, xi, nx, si + e, ns, dense) - local_gamma(i, xi, nx, si - e, ns, dense)) / (2 * h)
        assert np.linalg.norm(F - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


def test_controller_identity(dense, rng):
    lay = LocalLayout(dense)
    W = compute_W(dense)
    for _ in range(50):
        z = sample_feasible_z(lay, W, rng)
        fp, u = pseudo_gradient_Fprime_and_u(z, dense, lay)
        assert np.max(np.abs(fp - u - pseudo_gradient_F(z, dense, lay))) <= 1e-12


def test_controller_special_cases(dense, rng):
    lay = LocalLayout(dense)
    x = rng.uniform(dense.lower, dense.upper)
    z = lay.symmetric(x, rng.uniform(0, 2, dense.q))
    _, u = pseudo_gradient_Fprime_and_u(z, dense, lay)
    assert np.max(np.abs(u[: x.size])) <= 1e-15
    z = lay.symmetric(dense.true_positions, np.zeros(dense.q))
    _, u = pseudo_gradient_Fprime_and_u(z, dense, lay)
    assert np.max(np.abs(u[x.size :])) <= 1e-14
    assert np.all(u[lay.pos_a] == 0)


def test_monotone_on_sampled_pairs(dense, rng):
    lay = LocalLayout(dense)
    W = compute_W(dense)
    for _ in range(200):
        z1, z2 = sample_feasible_z(lay, W, rng), sample_feasible_z(lay, W, rng)
        d = z1 - z2
        inner = (pseudo_gradient_F(z1, dense, lay) - pseudo_gradient_F(z2, dense, lay)) @ d
        assert inner >= -1e-8 * (d @ d)


def test_iteration_fixed_point_and_zero_step(dense, rng):
    lay = LocalLayout(dense)
    z = lay.symmetric(dense.true_positions, np.zeros(dense.q))
    zt, zn = dsdeg_iteration(z, 0.05, dense, layout=lay)
    assert np.max(np.abs(zt - z)) <= 1e-15 and np.max(np.abs(zn - z)) <= 1e-15
    z = sample_feasible_z(lay, compute_W(dense), rng)
    zt, zn = dsdeg_iteration(z, 0.0, dense, layout=lay)
    assert np.array_equal(zt, z) and np.array_equal(zn, z)


def test_iteration_by_hand():
    x0, x1, s0, a, s1 = 0.2, 1.5, 0.4, 0.3, 0.6
    beta, W = 0.1, 10.0

    def F(x0, x1, s0, a, s1):
        r = (x0 - x1) ** 2 - 1.0
        ra = x0**2 - 0.25
        return np.array([
            (s0 + s1) * (x0 - x1) + 2 * a * x0,
            (s0 + s1) * (x1 - x0),
            -(0.5 * r - (s0 + s1) / 8),
            -(ra - a / 2),
            -(0.5 * r - (s0 + s1) / 8),
        ])

    lo = np.array([-3, -3, 0, 0, 0.0])
    hi = np.array([3, 3, W, W, W])
    z = np.array([x0, x1, s0, a, s1])
    zt = np.clip(z - beta * F(*z), lo, hi)
    zn = np.clip(z - beta * F(*zt), lo, hi)
    lay = LocalLayout(TOY)
    # node 0 holds (edge copy, anchor copy), node 1 holds its edge copy
    assert list(lay.pos_i) == [2] and list(lay.pos_a) == [3] and list(lay.pos_j) == [4]
    got_t, got_n = dsdeg_iteration(z, beta, TOY, W=W, layout=lay)
    assert np.max(np.abs(got_t - zt)) <= 1e-14
    assert np.max(np.abs(got_n - zn)) <= 1e-14


def test_lipschitz_zero_without_edges():
    inst = NetworkInstance(2, np.zeros((3, 2)), [], [], 0.1, np.tile([[0.0, 1.0]] * 2, (2, 1, 1)))
    assert estimate_lipschitz(inst, 1.0, seed=0, num_samples=5) == 0.0
    with pytest.raises(ValueError):
        estimate_lipschitz(inst, 1.0, seed=0, num_samples=1)


def test_lipschitz_monotone_in_samples(fig4):
    W = compute_W(fig4)
    vals = [estimate_lipschitz(fig4, W, 3, m) for m in (2, 10, 40, 80)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_lipschitz_close_to_jacobian_bound():
    inst = line_instance([1.0], [], anchors=[0.0], edges_as=[(0, 0, 0.7)], box=(-1.0, 2.0))
    W = 3.0
    best = 0.0
    for x in np.linspace(-1, 2, 61):
        for s in np.linspace(0, W, 61):
            J = np.array([[2 * s, 2 * x], [-2 * x, 0.5]])
            best = max(best, np.linalg.norm(J, 2))
    L = estimate_lipschitz(inst, W, seed=0, num_samples=200)
    assert best / 4 <= L <= 4 * best


@pytest.fixture(scope="module")
def ds_run(fig4):
    return run_dsdeg(fig4, SolverConfig(seed=5))


def test_run_basic_fields(ds_run, fig4):
    assert ds_run.converged
    cols = ds_run.columns
    assert cols[-3:] == ("messages_sent", "beta", "z_dist_to_ref")
    assert set(ds_run.series["messages_sent"]) == {4 * fig4.num_ss}
    assert ds_run.summary["messages_total"] == 4 * fig4.num_ss * ds_run.iterations
    assert ds_run.summary["beta"] * ds_run.summary["L_est"] < 1


def test_run_keeps_copies_equal(ds_run):
    assert ds_run.summary["copy_asymmetry"] <= 1e-12


def test_run_fejer_monotone(ds_run):
    d = np.r_[ds_run.summary["z_dist_initial"], ds_run.column("z_dist_to_ref")] ** 2
    assert np.all(np.diff(d) <= 1e-10)


def test_run_from_fixed_point(fig4):
    lay = LocalLayout(fig4)
    z = lay.symmetric(fig4.true_positions, np.zeros(fig4.q))
    rep = run_dsdeg(fig4, SolverConfig(), z0=z)
    assert rep.converged and rep.iterations == 1


def test_thread_count_does_not_change_results(fig4, monkeypatch):
    cfg = SolverConfig(seed=11, max_iters=60)
    monkeypatch.setenv("SNL_THREADS", "1")
    a = run_dsdeg(fig4, cfg, certify=False)
    monkeypatch.setenv("SNL_THREADS", "4")
    b = run_dsdeg(fig4, cfg, certify=False)
    assert b.summary["workers"] == 4
    assert a.series_csv() == b.series_csv()
    assert np.array_equal(a.final_state["sigma_local"], b.final_state["sigma_local"])


def test_message_passing_matches_compact_form(fig4):
    cfg = SolverConfig(seed=2, max_iters=5, beta=0.02)
    rep = run_dsdeg(fig4, cfg, certify=False)
    lay = LocalLayout(fig4)
    from snlgame.distributed import initial_z

    W = compute_W(fig4)
    z = initial_z(fig4, cfg, lay, W)
    for _ in range(rep.iterations):
        _, z = dsdeg_iteration(z, 0.02, fig4, W=W, layout=lay)
    got = np.r_[rep.final_state["x"].ravel(), rep.final_state["sigma_local"]]
    assert np.max(np.abs(got - z)) <= 1e-12


def test_beta_shrunk_when_too_large(fig4):
    rep = run_dsdeg(fig4, SolverConfig(seed=1, beta=5.0, max_iters=20), certify=False)
    assert rep.summary["beta"] * rep.summary["L_est"] < 1
    assert rep.summary["beta_log"] and rep.summary["beta_log"][0]["from"] == 5.0


def test_trace_file(tmp_path, fig4):
    path = tmp_path / "trace.csv"
    rep = run_dsdeg(fig4, SolverConfig(seed=1, max_iters=3), trace_path=path, certify=False)
    lines = path.read_text().splitlines()
    assert lines[0] == "node,k,x,sigma"
    assert len(lines) == 1 + fig4.num_sensors * rep.iterations
