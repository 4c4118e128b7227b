"""Distributed extra-gradient solver with symmetric local dual copies.

Every sensor ``i`` keeps its own copy ``sigma_ij^{s_i}`` of the dual value of
each sensor edge and ``sigma_il^{a_i}`` of each anchor edge.  Coupled terms
use the average of the two copies of an edge.  The stacked state is

    z = [x_1, ..., x_N, sigma_1, ..., sigma_N]

where ``sigma_i`` lists node ``i``'s sensor-neighbor copies (neighbors in
increasing order) followed by its anchor copies (anchors in increasing
order).

``run_dsdeg`` executes the method as a synchronous message-passing
simulation: in each of the two sub-rounds of an iteration every node sends
``(x_i, sigma_ij^{s_i})`` to each sensor neighbor ``j`` and then updates
using only its own data and its inbox.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .canonical import EdgeKernel, compute_W
from .central import finish_report, initial_primal, resolve_W
from .network import InstanceError, NetworkInstance, is_connected
from .report import DISTRIBUTED_COLUMNS, STREAM_LIPSCHITZ, RunReport, SolverConfig, substream

log = logging.getLogger(__name__)

DEFAULT_BETA = 0.01
LIPSCHITZ_SAFETY = 2.0
LIPSCHITZ_PROBE = 1e-4


class LocalLayout:
    """Positions of every local dual copy inside the stacked vector ``z``."""

    def __init__(self, inst: NetworkInstance):
        self.N, self.n = inst.num_sensors, inst.dim
        self.kernel = EdgeKernel(inst)
        nbrs = [inst.sensor_neighbors(i) for i in range(self.N)]
        anch = [inst.anchor_neighbors(i) for i in range(self.N)]
        self.sensor_nbrs, self.anchor_nbrs = nbrs, anch
        self.q_local = np.array([len(nbrs[i]) + len(anch[i]) for i in range(self.N)], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.q_local)]).astype(int)
        self.q_total = int(self.offsets[-1])
        base = self.N * self.n

        def slot(i, j):
            return base + self.offsets[i] + nbrs[i].index(j)

        self.pos_i = np.array([slot(i, j) for i, j, _ in inst.edges_ss], dtype=int)
        self.pos_j = np.array([slot(j, i) for i, j, _ in inst.edges_ss], dtype=int)
        self.pos_a = np.array(
            [base + self.offsets[i] + len(nbrs[i]) + anch[i].index(l) for i, l, _ in inst.edges_as],
            dtype=int,
        )
        self.size = base + self.q_total
        lo = np.concatenate([inst.lower.ravel(), np.zeros(self.q_total)])
        self.lower = lo
        self._upper_x = inst.upper.ravel()

    def upper(self, W: float) -> np.ndarray:
        return np.concatenate([self._upper_x, np.full(self.q_total, W)])

    def split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"stacked state must have length {self.size}")
        return z[: self.N * self.n].reshape(self.N, self.n), z[self.N * self.n :]

    def node_block(self, i: int) -> slice:
        b = self.N * self.n
        return slice(b + self.offsets[i], b + self.offsets[i + 1])

    def pack(self, x, sigma_s_i, sigma_s_j, sigma_a) -> np.ndarray:
        """Build ``z`` from per-edge copy values (edge order of the instance)."""
        z = np.zeros(self.size)
        z[: self.N * self.n] = np.asarray(x, dtype=float).ravel()
        z[self.pos_i] = sigma_s_i
        z[self.pos_j] = sigma_s_j
        z[self.pos_a] = sigma_a
        return z

    def symmetric(self, x, sigma) -> np.ndarray:
        """``z`` whose two copies of every sensor edge both equal ``sigma``."""
        ns = self.kernel.ns
        sigma = np.asarray(sigma, dtype=float)
        return self.pack(x, sigma[:ns], sigma[:ns], sigma[ns:])

    def edge_average(self, z) -> np.ndarray:
        """Global dual vector (ss then as) from the local copies."""
        return np.concatenate([0.5 * (z[self.pos_i] + z[self.pos_j]), z[self.pos_a]])


@dataclass
class GlobalZ:
    z: np.ndarray
    z_tilde: np.ndarray | None = None


def _layout(inst, layout):
    return layout if layout is not None else LocalLayout(inst)


def local_gamma(i, x_i, neighbor_xs, sigma_i, neighbor_sigmas, inst: NetworkInstance) -> float:
    """Local complementary function of node ``i``.

    ``sigma_i`` holds node ``i``'s copies in local order; ``neighbor_xs`` and
    ``neighbor_sigmas`` map each sensor neighbor ``j`` to ``x_j`` and to the
    neighbor's copy ``sigma_ij^{s_j}``.
    """
    nbrs, anch = inst.sensor_neighbors(i), inst.anchor_neighbors(i)
    sigma_i = np.asarray(sigma_i, dtype=float).ravel()
    if sigma_i.size != len(nbrs) + len(anch):
        raise ValueError(f"node {i} expects {len(nbrs) + len(anch)} local duals")
    missing = [j for j in nbrs if j not in neighbor_xs or j not in neighbor_sigmas]
    if missing:
        raise ValueError(f"missing neighbor data for node {i}: {missing}")
    x_i = np.asarray(x_i, dtype=float)
    dist = {}
    for a, b, d in inst.edges_ss:
        if i in (a, b):
            dist[b if a == i else a] = d
    anchor_dist = {l: e for a, l, e in inst.edges_as if a == i}
    val = 0.0
    for k, j in enumerate(nbrs):
        avg = 0.5 * (sigma_i[k] + float(neighbor_sigmas[j]))
        diff = x_i - np.asarray(neighbor_xs[j], dtype=float)
        val += avg * (diff @ diff - dist[j] ** 2) - avg * avg / 4.0
    for k, l in enumerate(anch):
        s = sigma_i[len(nbrs) + k]
        diff = x_i - inst.anchors[l]
        val += s * (diff @ diff - anchor_dist[l] ** 2) - s * s / 4.0
    return float(val)


def _edge_terms(z, layout: LocalLayout):
    kern = layout.kernel
    X, _ = layout.split(z)
    si, sj, sa = z[layout.pos_i], z[layout.pos_j], z[layout.pos_a]
    d = kern.diffs(X)
    r = np.einsum("ij,ij->i", d, d) - kern.m2
    ns = kern.ns
    return X, si, sj, sa, d[:ns], d[ns:], r[:ns], r[ns:]


def pseudo_gradient_F(z, inst: NetworkInstance, layout: LocalLayout | None = None) -> np.ndarray:
    """Stacked ``x``-gradients and negated ``sigma``-gradients of the local functions."""
    layout = _layout(inst, layout)
    X, si, sj, sa, ds, da, rs, ra = _edge_terms(z, layout)
    out = np.empty(layout.size)
    gx = layout.kernel.scatter((si + sj)[:, None] * ds, 2.0 * sa[:, None] * da)
    out[: X.size] = gx.ravel()
    gs = -(0.5 * rs - 0.125 * (si + sj))
    out[layout.pos_i] = gs
    out[layout.pos_j] = gs
    out[layout.pos_a] = -(ra - 0.5 * sa)
    return out


def pseudo_gradient_Fprime_and_u(z, inst: NetworkInstance, layout: LocalLayout | None = None):
    """Non-averaged pseudo-gradient ``F'`` and the controller ``u = F' - F``."""
    layout = _layout(inst, layout)
    X, si, sj, sa, ds, da, rs, ra = _edge_terms(z, layout)
    kern = layout.kernel
    fp = np.empty(layout.size)
    # each endpoint weighs the edge with its own copy
    g = np.zeros((kern.N, kern.n))
    np.add.at(g, kern.ss_i, 2.0 * si[:, None] * ds)
    np.add.at(g, kern.ss_j, -2.0 * sj[:, None] * ds)
    np.add.at(g, kern.as_i, 2.0 * sa[:, None] * da)
    fp[: X.size] = g.ravel()
    fp[layout.pos_i] = -(rs - 0.5 * si)
    fp[layout.pos_j] = -(rs - 0.5 * sj)
    fp[layout.pos_a] = -(ra - 0.5 * sa)

    u = np.empty(layout.size)
    ux = np.zeros((kern.N, kern.n))
    np.add.at(ux, kern.ss_i, (si - sj)[:, None] * ds)
    np.add.at(ux, kern.ss_j, -(sj - si)[:, None] * ds)
    u[: X.size] = ux.ravel()
    u[layout.pos_i] = -0.5 * rs + 0.375 * si - 0.125 * sj
    u[layout.pos_j] = -0.5 * rs + 0.375 * sj - 0.125 * si
    u[layout.pos_a] = 0.0
    return fp, u


def project_z(z, layout: LocalLayout, W: float) -> np.ndarray:
    return np.minimum(np.maximum(z, layout.lower), layout.upper(W))


def dsdeg_iteration(z, beta: float, inst: NetworkInstance, W: float | None = None, layout=None):
    """One extra-gradient iteration on the stacked state; returns ``(z_tilde, z_next)``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    layout = _layout(inst, layout)
    W = compute_W(inst) if W is None else W
    z = np.asarray(z, dtype=float)
    z_tilde = project_z(z - beta * pseudo_gradient_F(z, inst, layout), layout, W)
    z_next = project_z(z - beta * pseudo_gradient_F(z_tilde, inst, layout), layout, W)
    return z_tilde, z_next


def sample_feasible_z(layout: LocalLayout, W: float, rng) -> np.ndarray:
    lo, hi = layout.lower, layout.upper(W)
    return rng.uniform(lo, hi)


def estimate_lipschitz(
    inst: NetworkInstance, W: float, seed, num_samples: int = 200, layout=None
) -> float:
    """Sampled Lipschitz constant of the pseudo-gradient, times a safety factor.

    Draws ``num_samples`` feasible points, each with a nearby partner, and
    takes the largest ratio ``|F(z1) - F(z2)| / |z1 - z2|`` over all pairs.
    Samples are drawn sequentially, so a larger ``num_samples`` with the same
    seed covers a superset of pairs.
    """
    if num_samples < 2:
        raise ValueError("num_samples must be at least 2")
    layout = _layout(inst, layout)
    rng = substream(seed, STREAM_LIPSCHITZ)
    lo, hi = layout.lower, layout.upper(W)
    zs, fs, local = [], [], 0.0
    for _ in range(num_samples):
        z1 = rng.uniform(lo, hi)
        z2 = np.clip(z1 + LIPSCHITZ_PROBE * (hi - lo) * rng.standard_normal(z1.size), lo, hi)
        f1, f2 = pseudo_gradient_F(z1, inst, layout), pseudo_gradient_F(z2, inst, layout)
        dz = np.linalg.norm(z1 - z2)
        if dz > 0:
            local = max(local, np.linalg.norm(f1 - f2) / dz)
        zs.append(z1)
        fs.append(f1)
    dz = pdist(np.array(zs))
    df = pdist(np.array(fs))
    ok = dz > 0
    far = float(np.max(df[ok] / dz[ok])) if np.any(ok) else 0.0
    return LIPSCHITZ_SAFETY * max(far, local)


# ---------------------------------------------------------------------------
# message-passing simulation


@dataclass
class NodeState:
    """What sensor ``i`` owns: its position, its dual copies and an inbox."""

    index: int
    x: np.ndarray
    sigma_s: np.ndarray  # copies for sensor neighbors, neighbor order
    sigma_a: np.ndarray  # copies for anchor neighbors, anchor order
    x_tilde: np.ndarray | None = None
    sigma_s_tilde: np.ndarray | None = None
    sigma_a_tilde: np.ndarray | None = None
    inbox: dict = field(default_factory=dict)


class _NodeProgram:
    """Static per-node data: neighbor lists, measurements, bounds."""

    def __init__(self, inst: NetworkInstance, i: int, W: float):
        self.i = i
        self.nbrs = inst.sensor_neighbors(i)
        self.anch = inst.anchor_neighbors(i)
        d = {}
        for a, b, dist in inst.edges_ss:
            if i in (a, b):
                d[b if a == i else a] = dist
        e = {l: dist for a, l, dist in inst.edges_as if a == i}
        self.d2 = np.array([d[j] ** 2 for j in self.nbrs])
        self.e2 = np.array([e[l] ** 2 for l in self.anch])
        self.anchor_pts = inst.anchors[self.anch].reshape(-1, inst.dim)
        self.lo, self.hi = inst.lower[i], inst.upper[i]
        self.W = W
        self.n = inst.dim

    def outgoing(self, x, sigma_s):
        """Messages ``j -> (x_i, sigma_ij^{s_i})`` for every sensor neighbor."""
        return {j: (x, float(sigma_s[k])) for k, j in enumerate(self.nbrs)}

    def local_F(self, x, sigma_s, sigma_a, inbox):
        if self.nbrs:
            xj = np.array([inbox[j][0] for j in self.nbrs])
            sj = np.array([inbox[j][1] for j in self.nbrs])
            ds = x - xj
            rs = np.einsum("ij,ij->i", ds, ds) - self.d2
            tot = sigma_s + sj
            gx = (tot[:, None] * ds).sum(axis=0)
            gs = -(0.5 * rs - 0.125 * tot)
        else:
            gx = np.zeros(self.n)
            gs = np.zeros(0)
        if self.anch:
            da = x - self.anchor_pts
            ra = np.einsum("ij,ij->i", da, da) - self.e2
            gx = gx + (2.0 * sigma_a[:, None] * da).sum(axis=0)
            ga = -(ra - 0.5 * sigma_a)
        else:
            ga = np.zeros(0)
        return gx, gs, ga

    def step(self, node: NodeState, beta, src):
        """Projected step from the node's base state along ``F`` at ``src``."""
        xs, ss, sa = src
        gx, gs, ga = self.local_F(xs, ss, sa, node.inbox)
        x = np.minimum(np.maximum(node.x - beta * gx, self.lo), self.hi)
        s_s = np.clip(node.sigma_s - beta * gs, 0.0, self.W)
        s_a = np.clip(node.sigma_a - beta * ga, 0.0, self.W)
        return x, s_s, s_a, float(np.sqrt(gx @ gx + gs @ gs + ga @ ga))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SNL_THREADS", "1")))
    except ValueError:
        return 1


class SyncNetwork:
    """Round-synchronous message passing among sensor nodes.

    Within a sub-round every node first emits its messages; delivery happens
    after all nodes have emitted (the barrier); then every node computes from
    its inbox.  Node work may run on a thread pool, but each node's result
    depends only on its own state and inbox, so the outcome does not depend
    on the number of workers.
    """

    def __init__(self, inst: NetworkInstance, W: float, nodes: list[NodeState], workers: int = 1):
        self.programs = [_NodeProgram(inst, i, W) for i in range(inst.num_sensors)]
        self.nodes = nodes
        self.workers = workers
        self.messages_sent = 0
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(it) for it in items]
        return list(self._pool.map(fn, items))

    def exchange(self, stage: str) -> int:
        """Broadcast current (stage ``base``) or tilde values to neighbors."""

        def emit(pair):
            prog, node = pair
            if stage == "base":
                return prog.outgoing(node.x, node.sigma_s)
            return prog.outgoing(node.x_tilde, node.sigma_s_tilde)

        out = self._map(emit, list(zip(self.programs, self.nodes)))
        sent = 0
        for node in self.nodes:
            node.inbox = {}
        for src, msgs in enumerate(out):
            for dst, payload in msgs.items():
                self.nodes[dst].inbox[src] = payload
                sent += 1
        self.messages_sent += sent
        return sent

    def extrapolate(self, beta):
        def work(pair):
            prog, node = pair
            return prog.step(node, beta, (node.x, node.sigma_s, node.sigma_a))

        res = self._map(work, list(zip(self.programs, self.nodes)))
        for node, (x, s_s, s_a, _) in zip(self.nodes, res):
            node.x_tilde, node.sigma_s_tilde, node.sigma_a_tilde = x, s_s, s_a

    def correct(self, beta):
        def work(pair):
            prog, node = pair
            return prog.step(node, beta, (node.x_tilde, node.sigma_s_tilde, node.sigma_a_tilde))

        return self._map(work, list(zip(self.programs, self.nodes)))


def _nodes_from_z(z, layout: LocalLayout) -> list[NodeState]:
    X, _ = layout.split(z)
    nodes = []
    for i in range(layout.N):
        blk = z[layout.node_block(i)]
        k = len(layout.sensor_nbrs[i])
        nodes.append(NodeState(i, X[i].copy(), blk[:k].copy(), blk[k:].copy()))
    return nodes


def _z_from_nodes(nodes, layout: LocalLayout, tilde=False) -> np.ndarray:
    z = np.empty(layout.size)
    for node in nodes:
        i = node.index
        x = node.x_tilde if tilde else node.x
        ss = node.sigma_s_tilde if tilde else node.sigma_s
        sa = node.sigma_a_tilde if tilde else node.sigma_a
        z[i * layout.n : (i + 1) * layout.n] = x
        z[layout.node_block(i)] = np.concatenate([ss, sa])
    return z


def initial_z(inst, cfg: SolverConfig, layout: LocalLayout, W: float, x0=None) -> np.ndarray:
    """Initial state with equal copies on every sensor edge."""
    from .canonical import dual_from_primal

    X = initial_primal(inst, cfg.seed) if x0 is None else np.asarray(x0, dtype=float).reshape(inst.num_sensors, inst.dim)
    X = np.minimum(np.maximum(X, inst.lower), inst.upper)
    if cfg.sigma_init == "dual":
        sigma = np.clip(dual_from_primal(X, inst), 0.0, W)
    else:
        sigma = np.zeros(inst.q)
    return layout.symmetric(X, sigma)


def run_dsdeg(
    inst: NetworkInstance,
    cfg: SolverConfig | None = None,
    x0=None,
    z0=None,
    z_ref=None,
    trace_path=None,
    workers: int | None = None,
    certify: bool = True,
) -> RunReport:
    """Run the distributed solver as a synchronous message-passing simulation.

    Stops when ``||z[k+1] - z[k]|| <= t_tol`` or after ``max_iters``.  The
    reference point for the distance column is ``z_ref`` if given, else
    ``(x*, 0)`` when true positions exist, else the final iterate.
    """
    cfg = cfg or SolverConfig()
    if not is_connected(inst):
        raise InstanceError("instance graph is not connected")
    t0 = time.perf_counter()
    W = resolve_W(inst, cfg)
    layout = LocalLayout(inst)
    kernel = layout.kernel
    workers = thread_count() if workers is None else workers

    L_est = estimate_lipschitz(inst, W, cfg.seed, cfg.lipschitz_samples, layout)
    beta = cfg.beta if cfg.beta is not None else (0.9 / L_est if L_est > 0 else DEFAULT_BETA)
    beta_log = []
    while L_est > 0 and beta * L_est >= 1.0:
        beta_log.append({"k": 0, "from": beta, "to": beta / 2, "reason": "beta*L >= 1"})
        log.warning("step %.3g violates beta*L < 1 (L=%.3g); halving", beta, L_est)
        beta /= 2

    z = initial_z(inst, cfg, layout, W, x0) if z0 is None else project_z(np.asarray(z0, dtype=float), layout, W)
    z_init = z.copy()
    if z_ref is None and inst.has_truth():
        z_ref = np.concatenate([inst.true_positions.ravel(), np.zeros(layout.q_total)])
        ref_kind = "x_star"
    elif z_ref is not None:
        z_ref = np.asarray(z_ref, dtype=float)
        ref_kind = "given"
    else:
        ref_kind = "final_iterate"
    r_star = kernel.residuals(inst.true_positions) if inst.has_truth() else None
    # radius of a ball around the feasible set used to detect blow-up
    hi = layout.upper(W)
    escape_radius = 4.0 * float(np.linalg.norm(hi - layout.lower)) + float(np.linalg.norm(hi))

    nodes = _nodes_from_z(z, layout)
    net = SyncNetwork(inst, W, nodes, workers)
    series = {c: [] for c in DISTRIBUTED_COLUMNS}
    history = [] if z_ref is None else None
    trace_rows = [] if trace_path else None
    nx_ = inst.num_sensors * inst.dim
    converged = False
    k = 0
    try:
        while k < cfg.max_iters:
            k += 1
            sent = net.exchange("base")
            net.extrapolate(beta)
            sent += net.exchange("tilde")
            res = net.correct(beta)
            if max(r[3] for r in res) * beta > escape_radius:
                beta_log.append({"k": k, "from": beta, "to": beta / 2, "reason": "divergence"})
                log.warning("iteration %d left the bounding ball; halving beta to %.3g", k, beta / 2)
                beta /= 2
                k -= 1
                continue
            for node, (x, s_s, s_a, _) in zip(nodes, res):
                node.x, node.sigma_s, node.sigma_a = x, s_s, s_a
            z_new = _z_from_nodes(nodes, layout)
            dx = float(np.linalg.norm(z_new[:nx_] - z[:nx_]))
            ds = float(np.linalg.norm(z_new[nx_:] - z[nx_:]))
            z = z_new
            X = z[:nx_].reshape(inst.num_sensors, inst.dim)
            r = kernel.residuals(X)
            sbar = layout.edge_average(z)
            gap = 0.25 * float(sbar @ sbar) - float(sbar @ r_star) if r_star is not None else np.nan
            series["k"].append(k)
            series["phi"].append(float(r @ r))
            series["gap"].append(gap)
            series["primal_residual"].append(dx)
            series["dual_residual"].append(ds)
            series["step_alpha"].append(beta)
            series["messages_sent"].append(sent)
            series["beta"].append(beta)
            if z_ref is not None:
                series["z_dist_to_ref"].append(float(np.linalg.norm(z - z_ref)))
            else:
                history.append(z.copy())
                series["z_dist_to_ref"].append(np.nan)
            if trace_rows is not None:
                for node in nodes:
                    trace_rows.append((node.index, k, node.x.copy(), np.concatenate([node.sigma_s, node.sigma_a])))
            if np.hypot(dx, ds) <= cfg.t_tol:
                converged = True
                break
    finally:
        net.close()

    if history is not None:
        series["z_dist_to_ref"] = [float(np.linalg.norm(h - z)) for h in history]
        z_ref = z
    X = z[:nx_].reshape(inst.num_sensors, inst.dim)
    sigma_local = z[nx_:]
    sbar = layout.edge_average(z)
    from .canonical import dual_from_primal

    target = dual_from_primal(X, inst)
    local_res = max(
        float(np.max(np.abs(z[layout.pos_i] - target[: kernel.ns]), initial=0.0)),
        float(np.max(np.abs(z[layout.pos_j] - target[: kernel.ns]), initial=0.0)),
        float(np.max(np.abs(z[layout.pos_a] - target[kernel.ns :]), initial=0.0)),
    )
    asym = float(np.max(np.abs(z[layout.pos_i] - z[layout.pos_j]), initial=0.0))
    report = RunReport(
        solver="dsdeg",
        config=cfg.to_dict(),
        instance_fingerprint=inst.fingerprint(),
        converged=converged,
        iterations=len(series["k"]),
        final_state={"x": X, "sigma": sbar, "sigma_local": sigma_local},
        series=series,
        columns=DISTRIBUTED_COLUMNS,
        summary={
            "W": W,
            "L_est": L_est,
            "beta": beta,
            "beta_log": beta_log,
            "messages_total": net.messages_sent,
            "z_ref": ref_kind,
            "z_dist_initial": float(np.linalg.norm(z_init - z_ref)),
            "local_duality_residual": local_res,
            "copy_asymmetry": asym,
            "phi_final": series["phi"][-1] if series["phi"] else float("nan"),
            "workers": workers,
        },
    )
    if trace_path:
        write_trace(trace_path, trace_rows)
    finish_report(report, inst, X, sbar, cfg, t0, certify)
    return report


def write_trace(path, rows) -> None:
    """Per-node trace CSV: node, k, x coordinates and local duals (space separated)."""
    from .report import atomic_write

    lines = ["node,k,x,sigma"]
    for i, k, x, s in rows:
        lines.append(f"{i},{k},{' '.join(repr(float(v)) for v in x)},{' '.join(repr(float(v)) for v in s)}")
    atomic_write(path, "\n".join(lines) + "\n")
