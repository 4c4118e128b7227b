"""Accuracy metrics, the global-equilibrium certificate and a naive baseline."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .canonical import EdgeKernel, as_points, dual_from_primal, in_E_plus, potential_gradient
from .network import NetworkInstance
from .report import CENTRAL_COLUMNS, STREAM_PROBES, RunReport, SolverConfig, substream

CERTIFIED = "certified-global-NE"
STATIONARY = "stationary-only"
NOT_STATIONARY = "not-stationary"


def mle(x, x_star) -> float:
    """Mean localization error ``sqrt(sum_i |x_i - x_i*|^2) / N``."""
    if x_star is None:
        raise ValueError("ground-truth positions are required")
    x_star = np.asarray(x_star, dtype=float)
    x = np.asarray(x, dtype=float).reshape(x_star.shape)
    return float(np.linalg.norm(x - x_star) / x_star.shape[0])


def duality_residual(x, sigma, inst: NetworkInstance) -> float:
    """Largest violation of ``sigma = 2 (xi(x) - meas^2)``."""
    sigma = np.asarray(sigma, dtype=float).ravel()
    if inst.q == 0:
        return 0.0
    return float(np.max(np.abs(sigma - dual_from_primal(x, inst))))


def constraint_residual(x, inst: NetworkInstance) -> float:
    """Largest ``| |x_i - x_j| - d_ij |`` over all measured edges."""
    if inst.q == 0:
        return 0.0
    d = EdgeKernel(inst).diffs(as_points(x, inst))
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    return float(np.max(np.abs(dist - np.sqrt(inst.measured_sq))))


def stationarity_residual(x, inst: NetworkInstance) -> float:
    """``max |x - Pi(x - grad Phi(x))|``: zero exactly at box-KKT points of the potential."""
    pts = as_points(x, inst)
    g = potential_gradient(pts, inst).reshape(pts.shape)
    step = np.minimum(np.maximum(pts - g, inst.lower), inst.upper)
    return float(np.max(np.abs(pts - step), initial=0.0))


@dataclass
class NeCertificate:
    duality_residual: float
    constraint_residual: float
    in_E_plus: bool
    deviation_margin: float
    stationarity_residual: float
    tol: float
    verdict: str

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_dict(self) -> dict:
        return asdict(self)


class _NodePayoff:
    """Payoff of one sensor as a function of its own position only."""

    def __init__(self, i, pts, inst: NetworkInstance):
        others, m2 = [], []
        for a, b, d in inst.edges_ss:
            if i in (a, b):
                others.append(pts[b if a == i else a])
                m2.append(d * d)
        for a, l, e in inst.edges_as:
            if a == i:
                others.append(inst.anchors[l])
                m2.append(e * e)
        self.others = np.array(others, dtype=float).reshape(-1, inst.dim)
        self.m2 = np.array(m2)

    def __call__(self, y):
        """Payoff at one point ``(n,)`` or at many points ``(P, n)``."""
        y = np.asarray(y, dtype=float)
        d = y[..., None, :] - self.others
        r = np.einsum("...ij,...ij->...i", d, d) - self.m2
        return np.einsum("...i,...i->...", r, r)

    def value_and_grad(self, y):
        d = y - self.others
        r = np.einsum("ij,ij->i", d, d) - self.m2
        return float(r @ r), 4.0 * (r[:, None] * d).sum(axis=0)


def deviation_margin(x, inst: NetworkInstance, probes: int = 16, seed=0) -> float:
    """Smallest payoff change found by unilateral deviations (negative = improvement).

    Each sensor tries ``probes`` uniform points of its box and a bounded
    quasi-Newton descent started from its current position.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    pts = as_points(x, inst)
    rng = substream(seed, STREAM_PROBES)
    margin = np.inf
    for i in range(inst.num_sensors):
        J = _NodePayoff(i, pts, inst)
        base = float(J(pts[i]))
        cand = rng.uniform(inst.lower[i], inst.upper[i], size=(probes, inst.dim))
        best = float(np.min(J(cand))) if J.m2.size else 0.0
        if J.m2.size:
            res = minimize(
                J.value_and_grad,
                pts[i],
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(inst.lower[i], inst.upper[i])),
            )
            best = min(best, float(res.fun))
        margin = min(margin, best - base)
    return float(margin)


def verify_ne(x, sigma, inst: NetworkInstance, tol: float = 1e-3, probes: int = 16, seed=0) -> NeCertificate:
    """Check the duality relation, convexity region and unilateral deviations.

    The verdict is ``certified-global-NE`` when the duality residual is at
    most ``tol``, ``sigma`` lies in the convexity region (up to ``tol``) and
    no probed deviation improves a payoff by more than ``tol``.  Otherwise it
    is ``stationary-only`` if ``x`` is a box-stationary point of the
    potential to within ``tol``, and ``not-stationary`` if not.  Every test
    is monotone in ``tol``.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    pts = as_points(x, inst)
    sigma = np.asarray(sigma, dtype=float).ravel()
    dres = duality_residual(pts, sigma, inst)
    cres = constraint_residual(pts, inst)
    eplus = in_E_plus(sigma, inst, tol=tol)
    margin = deviation_margin(pts, inst, probes, seed)
    stat = stationarity_residual(pts, inst)
    if dres <= tol and eplus and margin >= -tol:
        verdict = CERTIFIED
    elif stat <= tol:
        verdict = STATIONARY
    else:
        verdict = NOT_STATIONARY
    return NeCertificate(dres, cres, eplus, margin, stat, tol, verdict)


def baseline_projected_gradient(
    inst: NetworkInstance, cfg: SolverConfig | None = None, x0=None, certify: bool = True
) -> RunReport:
    """Projected gradient descent on the potential with the solver's step schedule."""
    from .central import finish_report, initial_primal

    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    kern = EdgeKernel(inst)
    X = initial_primal(inst, cfg.seed) if x0 is None else as_points(x0, inst).copy()
    X = np.minimum(np.maximum(X, inst.lower), inst.upper)
    series = {c: [] for c in CENTRAL_COLUMNS}
    converged = False
    ns = kern.ns
    for k in range(1, cfg.max_iters + 1):
        a = cfg.alpha(k)
        d = kern.diffs(X)
        r = np.einsum("ij,ij->i", d, d) - kern.m2
        w = 4.0 * r[:, None] * d
        g = kern.scatter(w[:ns], w[ns:])
        X_new = np.minimum(np.maximum(X - a * g, inst.lower), inst.upper)
        dx = float(np.linalg.norm(X_new - X))
        X = X_new
        r = kern.residuals(X)
        series["k"].append(k)
        series["phi"].append(float(r @ r))
        series["gap"].append(np.nan)
        series["primal_residual"].append(dx)
        series["dual_residual"].append(0.0)
        series["step_alpha"].append(a)
        if dx <= cfg.t_tol:
            converged = True
            break
    sigma = np.zeros(inst.q)
    report = RunReport(
        solver="baseline",
        config=cfg.to_dict(),
        instance_fingerprint=inst.fingerprint(),
        converged=converged,
        iterations=len(series["k"]),
        final_state={"x": X, "sigma": sigma},
        series=series,
        columns=CENTRAL_COLUMNS,
        summary={"phi_final": series["phi"][-1]},
    )
    # no dual iterate: certify against sigma = 0, the dual value of a global solution
    finish_report(report, inst, X, sigma, cfg, t0, certify)
    return report


class RateCheck(NamedTuple):
    passed: bool
    slope: float
    violations: int


def rate_check(report: RunReport, rtol: float = 1e-12) -> RateCheck:
    """Compare the gap series against ``sqrt(2 d) M2 / sqrt(k)``.

    ``slope`` is the least-squares slope of ``log gap`` against ``log k``
    over the positive entries (``nan`` when fewer than two exist).
    """
    if "gap" not in report.series or not len(report.series["gap"]):
        raise ValueError("report has no gap series")
    gap = report.column("gap")
    if np.all(np.isnan(gap)):
        raise ValueError("report has no gap series")
    k = report.column("k")
    d, m2 = report.summary["d"], report.summary["M2"]
    bound = np.sqrt(2.0 * d) * m2 / np.sqrt(k)
    bad = gap > bound * (1.0 + rtol)
    pos = gap > 0
    slope = float(np.polyfit(np.log(k[pos]), np.log(gap[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return RateCheck(bool(not bad.any()), slope, int(bad.sum()))
