"""Where plain gradient descent gets stuck, and what the anchor layout does.

Part one reruns naive projected descent on the potential from 50 random
starts and counts how often it stalls at a spurious local minimum.  Part
two places the anchors around the sensors instead of among them, and
shows how much closer both primal-dual solvers get to the truth.
"""

# %%
import numpy as np

from snlgame import SolverConfig, baseline_projected_gradient, generate_instance, run_alg1, run_dsdeg

inst = generate_instance(7, dim=2, num_sensors=7, num_anchors=3, box=(0, 1), sensing_radius=0.75)
final_phi = np.array(
    [baseline_projected_gradient(inst, SolverConfig(seed=s), certify=False).summary["phi_final"] for s in range(50)]
)
print(f"naive descent stalls above 1e-2 on {np.sum(final_phi > 1e-2)}/50 starts")
print("final potential quartiles:", np.round(np.quantile(final_phi, [0.25, 0.5, 0.75]), 4))

# %% Same 20 seeds, two anchor layouts.
for layout in ("uniform", "enclosing"):
    a_mle, d_mle = [], []
    for seed in range(20):
        net = generate_instance(
            seed, dim=2, num_sensors=7, num_anchors=3, box=(0, 1), sensing_radius=0.75, anchor_layout=layout
        )
        a_mle.append(run_alg1(net, SolverConfig(seed=seed), certify=False).summary["mle"])
        d_mle.append(run_dsdeg(net, SolverConfig(seed=seed), certify=False).summary["mle"])
    print(f"{layout:>9}: median MLE centralized {np.median(a_mle):.4f}, distributed {np.median(d_mle):.4f}")
