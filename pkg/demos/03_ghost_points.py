# Ghost-point estimate of the interaction loss
#
# The two players are coupled by the squared L2 distance between their
# predictions over the whole domain. Each iteration estimates it from H
# uniformly drawn points, independent of any mesh.

# %%
import numpy as np
from scipy.integrate import trapezoid

from hyco.core import Region, sample_uniform_points
from hyco.trainer import interaction_loss_mc

omega = Region(-np.pi, np.pi, -np.pi, np.pi)


def gap(p):
    return (np.sin(p[:, 0]) * np.cos(p[:, 1]) - 0.3 * p[:, 0])[:, None]


# %%
x = np.linspace(-np.pi, np.pi, 801)
X, Y = np.meshgrid(x, x)
exact = trapezoid(trapezoid(gap(np.column_stack([X.ravel(), Y.ravel()]))[:, 0].reshape(801, 801) ** 2, x), x)
print(f"dense quadrature {exact:.4f}")

# %%
# 1000 independent ghost sets of H = 100 points each

est = np.array([
    interaction_loss_mc(gap(p), np.zeros((100, 1)), omega.area)[0]
    for p in (sample_uniform_points(omega, 100, 2024, k) for k in range(1000))
])
se = est.std(ddof=1) / np.sqrt(len(est))
print(f"mean of estimates {est.mean():.4f} +- {se:.4f} (one standard error)")
print(f"single-draw relative spread {est.std() / est.mean():.1%}")
