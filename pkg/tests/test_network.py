import itertools
import json

import numpy as np
import pytest

from snlgame.network import (
    DIST_FLOOR,
    InstanceError,
    NetworkInstance,
    apply_noise,
    build_instance,
    expected_rigidity_rank,
    generate_instance,
    is_connected,
    load_instance,
    perturb_distances,
    rigidity_matrix,
    rigidity_rank,
    save_instance,
)


def test_fig4_shape(fig4):
    assert fig4.num_anchors == 3 and fig4.num_sensors == 7
    assert is_connected(fig4)


def test_generation_is_deterministic():
    a = generate_instance(7, sensing_radius=0.75)
    b = generate_instance(7, sensing_radius=0.75)
    assert a.to_json() == b.to_json()
    assert a.fingerprint() == b.fingerprint()
    assert generate_instance(8, sensing_radius=0.75).fingerprint() != a.fingerprint()


def test_single_sensor_three_anchors():
    inst = generate_instance(0, num_sensors=1, num_anchors=3, sensing_radius=5.0)
    assert inst.num_as == 3 and inst.num_ss == 0


@pytest.mark.parametrize("seed", range(5))
def test_distances_round_trip(seed):
    inst = generate_instance(seed, num_sensors=9, num_anchors=4, box=(-2, 2), sensing_radius=2.0)
    x = inst.true_positions
    for i, j, d in inst.edges_ss:
        assert abs(np.linalg.norm(x[i] - x[j]) - d) <= 1e-12 * d
    for i, l, e in inst.edges_as:
        assert abs(np.linalg.norm(x[i] - inst.anchors[l]) - e) <= 1e-12 * e


@pytest.mark.parametrize("seed", range(5))
def test_edges_exactly_within_radius(seed):
    R = 0.6
    inst = generate_instance(seed, num_sensors=8, num_anchors=3, sensing_radius=R)
    x = inst.true_positions
    ss = {(i, j) for i, j, _ in inst.edges_ss}
    for i, j in itertools.combinations(range(8), 2):
        assert ((i, j) in ss) == (np.linalg.norm(x[i] - x[j]) <= R)
    sa = {(i, l) for i, l, _ in inst.edges_as}
    for i in range(8):
        for l in range(3):
            assert ((i, l) in sa) == (np.linalg.norm(x[i] - inst.anchors[l]) <= R)
    assert np.all(inst.lower <= x) and np.all(x <= inst.upper)


def test_generation_rejects_bad_input():
    with pytest.raises(InstanceError):
        generate_instance(0, num_anchors=2)
    with pytest.raises(InstanceError):
        generate_instance(0, sensing_radius=0.0)
    with pytest.raises(InstanceError):
        generate_instance(0, num_sensors=0)
    with pytest.raises(InstanceError, match="connected"):
        generate_instance(0, sensing_radius=0.01, max_attempts=3)


def test_enclosing_layout_puts_sensors_inside_anchor_hull():
    from scipy.spatial import Delaunay

    inst = generate_instance(2, num_sensors=10, num_anchors=4, sensing_radius=2.0, anchor_layout="enclosing")
    assert np.all(Delaunay(inst.anchors).find_simplex(inst.true_positions) >= 0)
    assert np.all(inst.anchors >= 0) and np.all(inst.anchors <= 1)


def test_edge_validation():
    boxes = np.tile([[0.0, 1.0]], (2, 1, 1))
    with pytest.raises(InstanceError):
        NetworkInstance(1, np.zeros((0, 1)), [(1, 0, 0.5)], [], 1.0, boxes)
    with pytest.raises(InstanceError):
        NetworkInstance(1, np.zeros((0, 1)), [(0, 1, 0.0)], [], 1.0, boxes)
    with pytest.raises(InstanceError):
        NetworkInstance(1, np.zeros((0, 1)), [(0, 1, 0.5), (0, 1, 0.7)], [], 1.0, boxes)
    with pytest.raises(InstanceError):
        NetworkInstance(1, np.zeros((1, 1)), [], [(0, 0, -1.0)], 1.0, boxes)


def test_json_round_trip_and_unknown_fields(tmp_path, fig4):
    path = tmp_path / "inst.json"
    save_instance(fig4, path)
    assert load_instance(path) == fig4
    data = json.loads(path.read_text())
    # distances keep full precision
    d = fig4.edges_ss[0][2]
    assert data["edges_ss"][0][2] == d
    data["colour"] = "red"
    path.write_text(json.dumps(data))
    with pytest.raises(InstanceError, match="unknown"):
        load_instance(path)


def test_zero_noise_is_identity(fig4):
    assert apply_noise(fig4, 0.0, seed=1) == fig4


def test_noise_leaves_input_untouched(fig4):
    before = fig4.to_json()
    noisy = apply_noise(fig4, 0.05, seed=1)
    assert fig4.to_json() == before
    assert noisy != fig4
    assert np.array_equal(noisy.true_positions, fig4.true_positions)


def test_noise_stays_within_five_sigma():
    # Monte-Carlo over 10^4 multiplicative draws
    std = np.sqrt(0.001)
    rng = np.random.default_rng(0)
    dbar = rng.uniform(0.1, 3.0, 10_000)
    d = perturb_distances(dbar, rng.normal(0.0, std, dbar.size))
    frac = np.mean(np.abs(d - dbar) <= 5 * std * dbar)
    assert frac >= 0.999


def test_noise_clamps_at_floor():
    assert perturb_distances([1.0], [-1.5])[0] == DIST_FLOOR
    assert perturb_distances([1.0], [-1.5], floor=1e-3)[0] == 1e-3


def test_noise_requires_truth():
    boxes = np.tile([[0.0, 1.0]], (1, 1, 1))
    inst = NetworkInstance(1, np.array([[0.0]]), [], [(0, 0, 0.5)], 1.0, boxes)
    with pytest.raises(InstanceError):
        apply_noise(inst, 0.1, 0)
    with pytest.raises(InstanceError):
        rigidity_rank(inst)


def test_rigidity_triangle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]])
    R = rigidity_matrix(pts, [(0, 1), (1, 2), (0, 2)])
    assert np.linalg.matrix_rank(R) == 3 == expected_rigidity_rank(3, 2)


def test_rigidity_single_node():
    inst = build_instance([[0.5, 0.5]], np.zeros((0, 2)), 1.0, box=(0, 1))
    rep = rigidity_rank(inst)
    assert rep.rigidity_rank == 0 and not rep.connected
    assert not rep.anchor_count_sufficient


def test_rigidity_fig4(fig4):
    rep = rigidity_rank(fig4)
    assert rep.rigidity_rank == rep.expected_rank
    assert rep.connected and rep.anchor_count_sufficient


@pytest.mark.parametrize("seed", range(10))
def test_rigidity_rank_never_exceeds_expected(seed):
    inst = generate_instance(seed, num_sensors=6, num_anchors=3, sensing_radius=0.5)
    rep = rigidity_rank(inst)
    assert rep.rigidity_rank <= rep.expected_rank
