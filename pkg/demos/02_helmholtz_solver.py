# Heterogeneous Helmholtz solver, manufactured solutions and the adjoint
#
# -div(kappa grad u) + eta^2 u = f on [-pi, pi]^2 with u = 0 on the boundary.
# kappa and eta are 1 plus a Gaussian bump each; the six bump parameters are
# what the physical player learns. The forcing is built so that
# u = sin x sin y solves the continuous problem for the true parameters.

# %%
import numpy as np

from hyco.core import normalized_l2_error
from hyco.physics import helmholtz as hh

# %%
# Second-order accuracy: the error against the analytic solution drops by
# about four per grid doubling.

prev = None
for n in (12, 24, 48, 96):
    g = hh.helmholtz_grid(n)
    u = hh.helmholtz_solve(hh.helmholtz_assemble(hh.TRUE_PARAMS, g, hh.compute_forcing(g)))
    err = normalized_l2_error(u, hh.reference_solution(g))
    print(f"n={n:3d}  e_s={err:.3e}" + (f"  ratio {prev / err:.2f}" if prev else ""))
    prev = err

# %%
# One extra solve gives the gradient of any loss of u in all six parameters.

g = hh.helmholtz_grid(32)
f = hh.compute_forcing(g)
guess = hh.HelmholtzParams(2.0, 0.0, 0.0, 0.5, 1.0, 0.0)
target = hh.reference_solution(g).values


def loss(p):
    s = hh.helmholtz_assemble(hh.HelmholtzParams.from_array(p), g, f)
    u = hh.helmholtz_solve(s)
    return 0.5 * np.sum((u.values - target) ** 2), s, u


L, system, u = loss(guess.to_array())
grad = hh.helmholtz_grad_adjoint(system, u, u.values - target)
fd = [(loss(guess.to_array() + 1e-6 * e)[0] - loss(guess.to_array() - 1e-6 * e)[0]) / 2e-6 for e in np.eye(6)]
for name, a, b in zip(hh.PARAM_NAMES, grad, fd):
    print(f"{name:7s} adjoint {a:+.6e}  fd {b:+.6e}")
