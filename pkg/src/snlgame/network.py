"""Range-based sensor network instances: geometry, measurements, graph.

Sensors (non-anchor nodes) are indexed ``0..N-1`` and anchors ``0..M-1``.
Sensor-sensor edges are stored with ``i < j`` and both edge lists are kept
in lexicographic order, which fixes the ordering of the dual vector used
everywhere else in the package.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

DIST_FLOOR = 1e-9
MAX_RESAMPLE = 100

_INSTANCE_FIELDS = (
    "dim",
    "anchors",
    "true_positions",
    "edges_ss",
    "edges_as",
    "sensing_radius",
    "boxes",
)


class InstanceError(ValueError):
    """Raised for malformed or unusable network instances."""


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """An SNL instance.

    ``edges_ss`` rows are ``(i, j, d_ij)`` and ``edges_as`` rows are
    ``(i, l, e_il)``.  ``boxes`` has shape ``(N, dim, 2)`` holding
    ``[lo, hi]`` per coordinate of every sensor's feasible box.
    """

    dim: int
    anchors: np.ndarray
    edges_ss: list[tuple[int, int, float]]
    edges_as: list[tuple[int, int, float]]
    sensing_radius: float
    boxes: np.ndarray
    true_positions: np.ndarray | None = None
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=float).reshape(-1, self.dim)
        boxes = np.asarray(self.boxes, dtype=float)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "boxes", boxes)
        if self.true_positions is not None:
            tp = np.asarray(self.true_positions, dtype=float).reshape(-1, self.dim)
            object.__setattr__(self, "true_positions", tp)
        ss = sorted((int(i), int(j), float(d)) for i, j, d in self.edges_ss)
        sa = sorted((int(i), int(l), float(e)) for i, l, e in self.edges_as)
        object.__setattr__(self, "edges_ss", ss)
        object.__setattr__(self, "edges_as", sa)
        self._validate()
        object.__setattr__(self, "_arrays", self._build_arrays())

    def _validate(self):
        if self.dim not in (1, 2, 3):
            raise InstanceError(f"unsupported dimension {self.dim}")
        n_sensors = self.boxes.shape[0]
        if self.boxes.shape != (n_sensors, self.dim, 2):
            raise InstanceError(f"boxes must have shape (N, {self.dim}, 2)")
        if np.any(self.boxes[..., 0] > self.boxes[..., 1]):
            raise InstanceError("box lower bound exceeds upper bound")
        seen = set()
        for i, j, d in self.edges_ss:
            if not i < j:
                raise InstanceError(f"sensor edge ({i}, {j}) must satisfy i < j")
            if (i, j) in seen:
                raise InstanceError(f"duplicate sensor edge ({i}, {j})")
            seen.add((i, j))
            if j >= n_sensors or i < 0:
                raise InstanceError(f"sensor edge ({i}, {j}) out of range")
            if not d > 0:
                raise InstanceError(f"non-positive distance on edge ({i}, {j})")
        seen = set()
        for i, l, e in self.edges_as:
            if (i, l) in seen:
                raise InstanceError(f"duplicate anchor edge ({i}, {l})")
            seen.add((i, l))
            if not (0 <= i < n_sensors and 0 <= l < self.num_anchors):
                raise InstanceError(f"anchor edge ({i}, {l}) out of range")
            if not e > 0:
                raise InstanceError(f"non-positive distance on anchor edge ({i}, {l})")
        if self.true_positions is not None and self.true_positions.shape[0] != n_sensors:
            raise InstanceError("true_positions length does not match boxes")

    def _build_arrays(self):
        ss = np.array(self.edges_ss, dtype=float).reshape(-1, 3)
        sa = np.array(self.edges_as, dtype=float).reshape(-1, 3)
        return {
            "ss_i": ss[:, 0].astype(int),
            "ss_j": ss[:, 1].astype(int),
            "ss_d2": ss[:, 2] ** 2,
            "as_i": sa[:, 0].astype(int),
            "as_l": sa[:, 1].astype(int),
            "as_e2": sa[:, 2] ** 2,
        }

    def __eq__(self, other):
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None

    # sizes
    @property
    def num_sensors(self) -> int:
        return self.boxes.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.anchors.shape[0]

    @property
    def num_ss(self) -> int:
        return len(self.edges_ss)

    @property
    def num_as(self) -> int:
        return len(self.edges_as)

    @property
    def q(self) -> int:
        """Length of the edge-indexed dual vector."""
        return self.num_ss + self.num_as

    @property
    def arrays(self) -> dict:
        """Edge index/measurement arrays (read-only views)."""
        return self._arrays

    @property
    def measured_sq(self) -> np.ndarray:
        """Squared measurements in dual-vector order (ss then as)."""
        return np.concatenate([self._arrays["ss_d2"], self._arrays["as_e2"]])

    @property
    def lower(self) -> np.ndarray:
        return self.boxes[..., 0]

    @property
    def upper(self) -> np.ndarray:
        return self.boxes[..., 1]

    def sensor_neighbors(self, i: int) -> list[int]:
        """Sorted sensor neighbours of sensor ``i``."""
        out = [j for a, j, _ in self.edges_ss if a == i]
        out += [a for a, j, _ in self.edges_ss if j == i]
        return sorted(out)

    def anchor_neighbors(self, i: int) -> list[int]:
        return [l for a, l, _ in self.edges_as if a == i]

    def has_truth(self) -> bool:
        return self.true_positions is not None

    # serialization
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "anchors": self.anchors.tolist(),
            "true_positions": None if self.true_positions is None else self.true_positions.tolist(),
            "edges_ss": [[i, j, d] for i, j, d in self.edges_ss],
            "edges_as": [[i, l, e] for i, l, e in self.edges_as],
            "sensing_radius": float(self.sensing_radius),
            "boxes": self.boxes.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkInstance":
        unknown = set(data) - set(_INSTANCE_FIELDS)
        if unknown:
            raise InstanceError(f"unknown instance fields: {sorted(unknown)}")
        missing = set(_INSTANCE_FIELDS) - set(data) - {"true_positions"}
        if missing:
            raise InstanceError(f"missing instance fields: {sorted(missing)}")
        try:
            return cls(
                dim=int(data["dim"]),
                anchors=np.array(data["anchors"], dtype=float),
                edges_ss=[tuple(e) for e in data["edges_ss"]],
                edges_as=[tuple(e) for e in data["edges_as"]],
                sensing_radius=float(data["sensing_radius"]),
                boxes=np.array(data["boxes"], dtype=float),
                true_positions=data.get("true_positions"),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(f"malformed instance: {exc}") from exc

    def to_json(self) -> str:
        # json emits shortest round-trip reprs (up to 17 significant digits)
        return json.dumps(self.to_dict(), sort_keys=True)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def save_instance(inst: NetworkInstance, path) -> None:
    Path(path).write_text(json.dumps(inst.to_dict(), indent=1, sort_keys=True))


def load_instance(path) -> NetworkInstance:
    return NetworkInstance.from_dict(json.loads(Path(path).read_text()))


def _box_array(box, dim):
    box = np.asarray(box, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2):
        raise InstanceError(f"box must be (lo, hi) or shape ({dim}, 2)")
    if np.any(box[:, 1] <= box[:, 0]):
        raise InstanceError("degenerate box")
    return box


def build_instance(sensors, anchors, sensing_radius, box=None, boxes=None) -> NetworkInstance:
    """Build an instance from known positions, keeping every pair within range.

    Distances are exact.  ``box`` applies one region to every sensor;
    ``boxes`` gives per-sensor boxes of shape ``(N, dim, 2)``.
    """
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    dim = sensors.shape[1]
    anchors = np.asarray(anchors, dtype=float).reshape(-1, dim)
    if boxes is None:
        if box is None:
            raise InstanceError("either box or boxes is required")
        boxes = np.tile(_box_array(box, dim), (len(sensors), 1, 1))
    edges_ss = []
    for i, j in itertools.combinations(range(len(sensors)), 2):
        d = float(np.linalg.norm(sensors[i] - sensors[j]))
        if d <= sensing_radius:
            edges_ss.append((i, j, d))
    edges_as = []
    for i in range(len(sensors)):
        for l in range(len(anchors)):
            e = float(np.linalg.norm(sensors[i] - anchors[l]))
            if e <= sensing_radius:
                edges_as.append((i, l, e))
    return NetworkInstance(
        dim=dim,
        anchors=anchors,
        edges_ss=edges_ss,
        edges_as=edges_as,
        sensing_radius=float(sensing_radius),
        boxes=boxes,
        true_positions=sensors,
    )


def measurement_graph(inst: NetworkInstance) -> nx.Graph:
    """Graph on ``("s", i)`` / ``("a", l)`` nodes, including anchor-anchor edges."""
    g = nx.Graph()
    g.add_nodes_from(("s", i) for i in range(inst.num_sensors))
    g.add_nodes_from(("a", l) for l in range(inst.num_anchors))
    g.add_edges_from((("s", i), ("s", j)) for i, j, _ in inst.edges_ss)
    g.add_edges_from((("s", i), ("a", l)) for i, l, _ in inst.edges_as)
    g.add_edges_from(
        (("a", l), ("a", m)) for l, m in itertools.combinations(range(inst.num_anchors), 2)
    )
    return g


def is_connected(inst: NetworkInstance) -> bool:
    """True when every sensor is linked, through the graph, to some anchor."""
    if inst.num_anchors == 0 or inst.num_sensors == 0:
        return False
    return nx.is_connected(measurement_graph(inst))


def generate_instance(
    seed,
    dim: int = 2,
    num_sensors: int = 7,
    num_anchors: int = 3,
    box=(0.0, 1.0),
    sensing_radius: float = 1.0,
    max_attempts: int = MAX_RESAMPLE,
    anchor_layout: str = "uniform",
) -> NetworkInstance:
    """Sample a connected instance.

    Sensor positions are i.i.d. uniform in ``box``.  With
    ``anchor_layout="uniform"`` anchors are drawn the same way; with
    ``"enclosing"`` anchors are spread on a circle circumscribing the box
    and sensors are resampled until they fall inside the anchors' convex
    hull (the layout of the Fig. 4-style demonstration, where anchors
    sit on the outer vertices of the formation).

    Resamples up to ``max_attempts`` times until the graph is connected.
    """
    if num_sensors < 1:
        raise InstanceError("need at least one sensor")
    if num_anchors < dim + 1:
        raise InstanceError(f"need at least {dim + 1} anchors in {dim}-D, got {num_anchors}")
    if sensing_radius <= 0:
        raise InstanceError("sensing radius must be positive")
    box = _box_array(box, dim)
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    for _ in range(max_attempts):
        if anchor_layout == "uniform":
            sensors = rng.uniform(lo, hi, size=(num_sensors, dim))
            anchors = rng.uniform(lo, hi, size=(num_anchors, dim))
        elif anchor_layout == "enclosing":
            anchors = _enclosing_anchors(num_anchors, lo, hi, rng)
            sensors = _sample_in_hull(anchors, lo, hi, num_sensors, rng)
        else:
            raise InstanceError(f"unknown anchor layout {anchor_layout!r}")
        inst = build_instance(sensors, anchors, sensing_radius, box=box)
        if is_connected(inst):
            return inst
    raise InstanceError(
        f"no connected instance after {max_attempts} attempts "
        f"(N={num_sensors}, M={num_anchors}, R_s={sensing_radius})"
    )


def _enclosing_anchors(m, lo, hi, rng):
    # anchors on the ellipse through the box corners, random phase; anchors
    # outside the box are clipped back onto it so a_l stays in the region
    center = (lo + hi) / 2
    half = (hi - lo) / 2
    if len(lo) != 2:
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        idx = rng.permutation(len(corners))[:m]
        extra = rng.uniform(lo, hi, size=(max(m - len(corners), 0), len(lo)))
        return np.vstack([corners[idx], extra])
    phase = rng.uniform(0, 2 * np.pi)
    ang = phase + 2 * np.pi * np.arange(m) / m
    pts = center + np.sqrt(2) * half * np.column_stack([np.cos(ang), np.sin(ang)])
    return np.clip(pts, lo, hi)


def _sample_in_hull(anchors, lo, hi, n, rng):
    from scipy.spatial import Delaunay

    hull = Delaunay(anchors)
    out = []
    while len(out) < n:
        p = rng.uniform(lo, hi, size=(4 * n, len(lo)))
        out.extend(p[hull.find_simplex(p) >= 0])
    return np.array(out[:n])


def perturb_distances(dbar, eps, floor: float = DIST_FLOOR) -> np.ndarray:
    """Multiplicative perturbation ``dbar * (1 + eps)`` clamped below at ``floor``."""
    return np.maximum(np.asarray(dbar, dtype=float) * (1.0 + np.asarray(eps, dtype=float)), floor)


def apply_noise(inst: NetworkInstance, noise_std: float, seed, floor: float = DIST_FLOOR) -> NetworkInstance:
    """Return a copy whose measurements are ``dbar (1 + eps)``, ``eps ~ N(0, noise_std^2)``.

    ``dbar`` are the actual distances, recomputed from the true positions.
    """
    if not inst.has_truth():
        raise InstanceError("apply_noise needs true positions")
    if noise_std < 0:
        raise InstanceError("noise_std must be non-negative")
    if noise_std == 0:
        return inst
    rng = np.random.default_rng(seed)
    x = inst.true_positions
    dbar_ss = np.array([np.linalg.norm(x[i] - x[j]) for i, j, _ in inst.edges_ss])
    dbar_as = np.array([np.linalg.norm(x[i] - inst.anchors[l]) for i, l, _ in inst.edges_as])
    d_ss = perturb_distances(dbar_ss, rng.normal(0.0, noise_std, size=len(dbar_ss)), floor)
    d_as = perturb_distances(dbar_as, rng.normal(0.0, noise_std, size=len(dbar_as)), floor)
    return NetworkInstance(
        dim=inst.dim,
        anchors=inst.anchors.copy(),
        edges_ss=[(i, j, float(d)) for (i, j, _), d in zip(inst.edges_ss, d_ss)],
        edges_as=[(i, l, float(e)) for (i, l, _), e in zip(inst.edges_as, d_as)],
        sensing_radius=inst.sensing_radius,
        boxes=inst.boxes.copy(),
        true_positions=inst.true_positions.copy(),
    )


@dataclass(frozen=True)
class RigidityReport:
    rigidity_rank: int
    expected_rank: int
    connected: bool
    anchor_count_sufficient: bool


def rigidity_matrix(points, edges) -> np.ndarray:
    """Standard rigidity matrix; row for ``(i, j)`` holds ``(p_i - p_j)`` in block i."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k, n = points.shape
    R = np.zeros((len(edges), n * k))
    for row, (i, j) in enumerate(edges):
        diff = points[i] - points[j]
        R[row, n * i : n * i + n] = diff
        R[row, n * j : n * j + n] = -diff
    return R


def expected_rigidity_rank(num_vertices: int, dim: int) -> int:
    """Rank of the rigidity matrix of a generic rigid framework."""
    if num_vertices <= dim:
        return num_vertices * (num_vertices - 1) // 2
    return dim * num_vertices - dim * (dim + 1) // 2


def rigidity_rank(inst: NetworkInstance) -> RigidityReport:
    """Rank diagnostic of the rigidity matrix at the true configuration.

    Vertices are all sensors followed by all anchors; rows cover sensor,
    sensor-anchor and anchor-anchor edges.  A full rank is necessary for
    rigidity, not a proof of global rigidity.
    """
    if not inst.has_truth():
        raise InstanceError("rigidity check is inconclusive without true positions")
    n_s = inst.num_sensors
    points = np.vstack([inst.true_positions, inst.anchors])
    edges = [(i, j) for i, j, _ in inst.edges_ss]
    edges += [(i, n_s + l) for i, l, _ in inst.edges_as]
    edges += [(n_s + l, n_s + m) for l, m in itertools.combinations(range(inst.num_anchors), 2)]
    rank = int(np.linalg.matrix_rank(rigidity_matrix(points, edges))) if edges else 0
    return RigidityReport(
        rigidity_rank=rank,
        expected_rank=expected_rigidity_rank(len(points), inst.dim),
        connected=is_connected(inst),
        anchor_count_sufficient=inst.num_anchors >= inst.dim + 1,
    )
