"""Potential game objective and its canonical-duality reformulation.

Primal profiles ``x`` are accepted flat (length ``n*N``) or as ``(N, n)``
arrays.  Dual vectors ``sigma`` are flat of length ``q`` ordered as all
sensor-sensor edges followed by all sensor-anchor edges, each block in the
instance's lexicographic edge order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .network import NetworkInstance

W_FLOOR = 1.0


def as_points(x, inst: NetworkInstance) -> np.ndarray:
    """View ``x`` as an ``(N, n)`` array, checking its size."""
    x = np.asarray(x, dtype=float)
    if x.size != inst.num_sensors * inst.dim:
        raise ValueError(f"profile has {x.size} entries, expected {inst.num_sensors * inst.dim}")
    return x.reshape(inst.num_sensors, inst.dim)


def _check_sigma(sigma, inst):
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size != inst.q:
        raise ValueError(f"dual vector has {sigma.size} entries, expected {inst.q}")
    return sigma


def edge_vectors(x, inst: NetworkInstance) -> np.ndarray:
    """Rows ``x_i - x_j`` for sensor edges then ``x_i - a_l`` for anchor edges."""
    pts = as_points(x, inst)
    a = inst.arrays
    return np.concatenate(
        [pts[a["ss_i"]] - pts[a["ss_j"]], pts[a["as_i"]] - inst.anchors[a["as_l"]]]
    ).reshape(-1, inst.dim)


def residuals(x, inst: NetworkInstance) -> np.ndarray:
    """Squared-distance residuals ``xi - meas^2`` in dual order."""
    diff = edge_vectors(x, inst)
    return np.einsum("ij,ij->i", diff, diff) - inst.measured_sq


@dataclass(frozen=True)
class CanonicalImage:
    xi_s: np.ndarray
    xi_a: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.xi_s, self.xi_a])


@dataclass(frozen=True)
class DualState:
    sigma_s: np.ndarray
    sigma_a: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.sigma_s, self.sigma_a])

    @classmethod
    def from_vector(cls, sigma, inst: NetworkInstance) -> "DualState":
        sigma = _check_sigma(sigma, inst)
        return cls(sigma[: inst.num_ss].copy(), sigma[inst.num_ss :].copy())


def potential(x, inst: NetworkInstance) -> float:
    """Sum of squared squared-distance residuals over every measured edge."""
    r = residuals(x, inst)
    return float(r @ r)


def payoff(i: int, x, inst: NetworkInstance) -> float:
    """Payoff of sensor ``i``: residual terms of the edges touching it."""
    if not 0 <= i < inst.num_sensors:
        raise IndexError(f"sensor index {i} out of range")
    a = inst.arrays
    r = residuals(x, inst)
    touches = np.concatenate([(a["ss_i"] == i) | (a["ss_j"] == i), a["as_i"] == i])
    rt = r[touches]
    return float(rt @ rt)


def canonical_image(x, inst: NetworkInstance) -> CanonicalImage:
    diff = edge_vectors(x, inst)
    xi = np.einsum("ij,ij->i", diff, diff)
    return CanonicalImage(xi[: inst.num_ss], xi[inst.num_ss :])


def psi(xi, inst: NetworkInstance) -> tuple[float, float]:
    """Canonical quadratic functions ``(Psi_s, Psi_a)`` of the image ``xi``."""
    xi = xi.vector if isinstance(xi, CanonicalImage) else np.asarray(xi, dtype=float)
    r = xi - inst.measured_sq
    ns = inst.num_ss
    return float(r[:ns] @ r[:ns]), float(r[ns:] @ r[ns:])


def psi_conjugate(sigma, inst: NetworkInstance) -> tuple[float, float]:
    """Legendre conjugates ``(Psi_s*, Psi_a*)``: ``sum sigma^2/4 + meas^2 * sigma``."""
    sigma = sigma.vector if isinstance(sigma, DualState) else _check_sigma(sigma, inst)
    terms = 0.25 * sigma**2 + inst.measured_sq * sigma
    ns = inst.num_ss
    return float(terms[:ns].sum()), float(terms[ns:].sum())


def psi_and_conjugate(xi, sigma, inst: NetworkInstance) -> tuple[float, float, float, float]:
    """``(Psi_s(xi), Psi_a(xi), Psi_s*(sigma), Psi_a*(sigma))``."""
    return (*psi(xi, inst), *psi_conjugate(sigma, inst))


def grad_psi_conjugate(sigma, inst: NetworkInstance) -> np.ndarray:
    """``sigma/2 + meas^2``, the inverse of the duality map."""
    return 0.5 * _check_sigma(sigma, inst) + inst.measured_sq


def dual_from_primal(x, inst: NetworkInstance) -> np.ndarray:
    """Dual vector tied to ``x`` by the duality relation, ``2 (xi - meas^2)``."""
    return 2.0 * residuals(x, inst)


def gamma(x, sigma, inst: NetworkInstance) -> float:
    """Complementary function ``sigma . (xi(x) - meas^2) - |sigma|^2 / 4``."""
    sigma = _check_sigma(sigma, inst)
    return float(sigma @ residuals(x, inst) - 0.25 * (sigma @ sigma))


def gamma_gradients(x, sigma, inst: NetworkInstance) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the complementary function in ``x`` (flat) and ``sigma``."""
    sigma = _check_sigma(sigma, inst)
    gx, _, gs = EdgeKernel(inst).gamma_grads(as_points(x, inst), sigma)
    return gx.ravel(), gs


def potential_gradient(x, inst: NetworkInstance) -> np.ndarray:
    """Gradient of the potential (flat)."""
    gx, _ = gamma_gradients(x, dual_from_primal(x, inst), inst)
    return gx


def hessian_P(sigma, inst: NetworkInstance) -> np.ndarray:
    """Hessian of the complementary function in ``x``; depends on ``sigma`` only."""
    sigma = _check_sigma(sigma, inst)
    a = inst.arrays
    ns = inst.num_ss
    N, n = inst.num_sensors, inst.dim
    L = np.zeros((N, N))
    s_ss = sigma[:ns]
    np.add.at(L, (a["ss_i"], a["ss_i"]), s_ss)
    np.add.at(L, (a["ss_j"], a["ss_j"]), s_ss)
    np.add.at(L, (a["ss_i"], a["ss_j"]), -s_ss)
    np.add.at(L, (a["ss_j"], a["ss_i"]), -s_ss)
    np.add.at(L, (a["as_i"], a["as_i"]), sigma[ns:])
    return 2.0 * np.kron(L, np.eye(n))


def in_dual_range(sigma, inst: NetworkInstance, tol: float = 0.0) -> bool:
    """``sigma >= -2 meas^2`` entrywise (the image of ``xi >= 0``)."""
    return bool(np.all(_check_sigma(sigma, inst) >= -2.0 * inst.measured_sq - tol))


def in_E_plus(sigma, inst: NetworkInstance, tol: float = 1e-10) -> bool:
    """Membership in the dual region where the complementary function is convex in ``x``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if not in_dual_range(sigma, inst, tol):
        return False
    if inst.num_sensors == 0:
        return True
    return bool(np.linalg.eigvalsh(hessian_P(sigma, inst))[0] >= -tol)


def _max_box_distance(lo1, hi1, lo2, hi2):
    span = np.maximum(np.abs(hi1 - lo2), np.abs(hi2 - lo1))
    return float(np.sqrt(span @ span))


def _max_point_distance(lo, hi, p):
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    return float(np.max(np.linalg.norm(corners - p, axis=1)))


def w_formula(inst: NetworkInstance) -> float:
    """Largest reachable dual value over all edges (``-inf`` without edges).

    Each edge contributes ``2 (D^2 - meas^2)`` where ``D`` is the largest
    distance the edge can span given the sensors' boxes, which bounds every
    dual value ``2 (xi - meas^2)`` attainable on the feasible set.
    """
    lo, hi = inst.lower, inst.upper
    vals = [-np.inf]
    for i, j, d in inst.edges_ss:
        D = _max_box_distance(lo[i], hi[i], lo[j], hi[j])
        vals.append(2.0 * (D * D - d * d))
    for i, l, e in inst.edges_as:
        D = _max_point_distance(lo[i], hi[i], inst.anchors[l])
        vals.append(2.0 * (D * D - e * e))
    return float(max(vals))


def compute_W(inst: NetworkInstance, floor: float = W_FLOOR) -> float:
    """Upper bound of the dual box: ``max(w_formula(inst), floor)``."""
    if floor <= 0:
        raise ValueError("W floor must be positive")
    return max(w_formula(inst), float(floor))


class EdgeKernel:
    """Index arrays of an instance, cached for tight solver loops.

    Works on ``(N, n)`` point arrays and skips the input checks done by the
    public functions above.  Results agree with them bit for bit.
    """

    def __init__(self, inst: NetworkInstance):
        a = inst.arrays
        self.N, self.n = inst.num_sensors, inst.dim
        self.ns = inst.num_ss
        self.ss_i, self.ss_j = a["ss_i"], a["ss_j"]
        self.as_i = a["as_i"]
        self.anchor_pts = inst.anchors[a["as_l"]].reshape(-1, inst.dim)
        self.m2 = inst.measured_sq

    def diffs(self, X):
        return np.concatenate([X[self.ss_i] - X[self.ss_j], X[self.as_i] - self.anchor_pts])

    def residuals(self, X):
        d = self.diffs(X)
        return np.einsum("ij,ij->i", d, d) - self.m2

    def scatter(self, w_ss, w_as):
        """Sum per-edge row vectors into node rows: ``+w`` at i, ``-w`` at j."""
        g = np.zeros((self.N, self.n))
        np.add.at(g, self.ss_i, w_ss)
        np.add.at(g, self.ss_j, -w_ss)
        np.add.at(g, self.as_i, w_as)
        return g

    def gamma_grads(self, X, sigma):
        """``(grad_x as (N, n), residuals, grad_sigma)`` of the complementary function."""
        d = self.diffs(X)
        r = np.einsum("ij,ij->i", d, d) - self.m2
        w = 2.0 * sigma[:, None] * d
        return self.scatter(w[: self.ns], w[self.ns :]), r, r - 0.5 * sigma
