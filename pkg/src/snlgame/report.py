"""Run reports: JSON document plus a per-iteration CSV series."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CENTRAL_COLUMNS = ("k", "phi", "gap", "primal_residual", "dual_residual", "step_alpha")
DISTRIBUTED_COLUMNS = CENTRAL_COLUMNS + ("messages_sent", "beta", "z_dist_to_ref")


@dataclass
class SolverConfig:
    """Step sizes, tolerances and seeds shared by every solver.

    ``W=None`` means the dual bound is computed from the instance boxes;
    ``beta=None`` means ``0.9 / L_est`` for the distributed solver.
    """

    alpha0: float = 0.0637
    schedule: str = "sqrt"
    W: float | None = None
    W_floor: float = 1.0
    t_tol: float = 1e-3
    max_iters: int = 200_000
    seed: int = 0
    beta: float | None = None
    lipschitz_samples: int = 200
    constant_samples: int = 10_000
    sigma_init: str = "zero"
    certify_tol: float = 1e-3
    probes: int = 16

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.schedule not in ("sqrt", "constant"):
            raise ValueError(f"unknown step schedule {self.schedule!r}")
        if self.W is not None and self.W <= 0:
            raise ValueError("W must be positive")
        if self.t_tol <= 0:
            raise ValueError("t_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.sigma_init not in ("zero", "dual"):
            raise ValueError(f"unknown sigma_init {self.sigma_init!r}")

    def alpha(self, k: int) -> float:
        """Step size at iteration ``k >= 1``."""
        if k < 1:
            raise ValueError("step schedule starts at k = 1")
        if self.schedule == "constant":
            return self.alpha0
        return self.alpha0 / np.sqrt(k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver config fields: {sorted(unknown)}")
        return cls(**data)


# independent random streams derived from one user seed
STREAM_INIT, STREAM_CONSTANTS, STREAM_LIPSCHITZ, STREAM_PROBES = 1, 2, 3, 4


def substream(seed, tag: int) -> np.random.Generator:
    """Generator for purpose ``tag``, statistically independent of ``default_rng(seed)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


@dataclass
class RunReport:
    solver: str
    config: dict
    instance_fingerprint: str
    converged: bool
    iterations: int
    final_state: dict
    series: dict
    columns: tuple
    summary: dict = field(default_factory=dict)
    certificate: dict | None = None
    wall_clock: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "solver": self.solver,
                "config": self.config,
                "instance_fingerprint": self.instance_fingerprint,
                "converged": self.converged,
                "iterations": self.iterations,
                "final_state": self.final_state,
                "summary": self.summary,
                "certificate": self.certificate,
                "wall_clock": self.wall_clock,
                "columns": list(self.columns),
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in zip(*(self.series[c] for c in self.columns)):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` atomically into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js = out_dir / f"{stem}.json"
        cs = out_dir / f"{stem}.csv"
        atomic_write(js, self.to_json())
        atomic_write(cs, self.series_csv())
        return js, cs


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
