"""A small walk through the canonical reformulation on a 7-sensor network.

We build an instance, look at the potential and its canonical image, and
check by hand the identities the solvers rely on.  Run it from the repo
root: ``python3 demos/01_duality_walkthrough.py``.
"""

# %%
import numpy as np

from snlgame import canonical_image, compute_W, dual_from_primal, gamma, generate_instance, in_E_plus, potential
from snlgame.canonical import hessian_P, psi, psi_conjugate

inst = generate_instance(7, dim=2, num_sensors=7, num_anchors=3, box=(0, 1), sensing_radius=0.75)
print(f"{inst.num_sensors} sensors, {inst.num_anchors} anchors, {inst.q} measured edges")

# %% The potential vanishes at the true layout and is positive elsewhere.
x_star = inst.true_positions
rng = np.random.default_rng(1)
x_rand = rng.uniform(inst.lower, inst.upper)
print(f"potential at truth: {potential(x_star, inst):.2e}")
print(f"potential at a random layout: {potential(x_rand, inst):.4f}")

# %% Canonical image: one squared length per edge.
xi = canonical_image(x_rand, inst).vector
print("first squared edge lengths:", np.round(xi[:4], 4))

# %% The dual variable paired with a layout, and the Fenchel-Young equality.
sigma = dual_from_primal(x_rand, inst)
lhs = xi @ sigma
rhs = sum(psi(xi, inst)) + sum(psi_conjugate(sigma, inst))
print(f"<xi, sigma> = {lhs:.6f}   Psi + Psi* = {rhs:.6f}")

# %% On the dual curve the complementary function agrees with the potential.
print(f"Gamma(x, sigma(x)) = {gamma(x_rand, sigma, inst):.6f}  vs potential {potential(x_rand, inst):.6f}")

# %% Convexity region: nonnegative multipliers give a PSD Hessian in x.
W = compute_W(inst)
s_pos = rng.uniform(0, W, inst.q)
eig = np.linalg.eigvalsh(hessian_P(s_pos, inst))
print(f"W = {W:.3f}; smallest Hessian eigenvalue at a random sigma in [0, W]: {eig[0]:.3e}")
print("sigma in E+ :", in_E_plus(s_pos, inst))
print("dual of a random layout in E+ :", in_E_plus(sigma, inst))
