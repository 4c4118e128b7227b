"""Running the centralized primal-dual solver and reading its report.

The run logs the potential, the averaged gap and both step norms.  At
the end we compare the gap against the sublinear bound and print the
equilibrium certificate.
"""

# %%
import numpy as np

from snlgame import SolverConfig, generate_instance, rate_check, run_alg1

inst = generate_instance(7, dim=2, num_sensors=7, num_anchors=3, box=(0, 1), sensing_radius=0.75)
report = run_alg1(inst, SolverConfig(seed=0))
print(f"converged={report.converged} after {report.iterations} iterations in {report.wall_clock:.2f} s")

# %% A few rows of the logged series.
k, phi, gap = report.column("k"), report.column("phi"), report.column("gap")
for row in np.unique(np.geomspace(1, len(k), 8).astype(int)) - 1:
    print(f"k={int(k[row]):6d}  phi={phi[row]:.4e}  gap={gap[row]: .4e}")

# %% The averaged gap never exceeds sqrt(2 d) M2 / sqrt(k).
chk = rate_check(report)
s = report.summary
print(f"d={s['d']:.3f}  M2={s['M2']:.3f}  bound respected: {chk.passed}  log-log slope {chk.slope:.2f}")

# %% Accuracy against the truth and the certificate verdict.
print(f"MLE {s['mle']:.4f}, largest edge-length error {s['constraint_residual']:.4f}")
for key, val in report.certificate.items():
    print(f"  {key}: {val}")

# %% Reports serialize to a JSON summary plus a CSV series.
paths = report.write("/tmp/snlgame_demo", "alg1")
print("written:", *paths)
