"""Localization with noisy ranges, driven through the experiment config.

The same path the command line uses: an ``ExperimentConfig`` names a
scenario, builds the instance (with multiplicative range noise) and picks
the solver.
"""

# %%
from snlgame.cli import ExperimentConfig, run_solver
from snlgame.report import SolverConfig

exp = ExperimentConfig(scenario="noisy", solver="dsdeg", seed=0)
inst = exp.make_instance()
print(exp.to_json())

# %%
for solver in ("alg1", "dsdeg"):
    rep = run_solver(solver, inst, SolverConfig(seed=0))
    s = rep.summary
    print(f"{solver:>6}: iterations {rep.iterations:5d}  MLE {s['mle']:.4f}  potential {s['phi_final']:.4f}")
