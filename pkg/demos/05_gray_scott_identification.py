# Recovering the Gray-Scott diffusivities with HYCO
#
# 1000 noise-free samples of (u, v) scattered in space and time. Both
# players see the data; the physical one starts at half the true D_u.

# %%
import sys
from dataclasses import replace

import numpy as np

from hyco.bench.experiments import build_problem, preset
from hyco.trainer import train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else None
cfg = preset("gray_scott", "desk")
if iters is not None:
    cfg = replace(cfg, hyco=replace(cfg.hyco, max_iters=iters))
problem = build_problem(cfg)
truth = problem.model.to_physical(problem.lambda_true)

# %%
for method in ("hyco", "pure_nn"):
    res = train(cfg.hyco, problem, method=method)
    m = res.history.metrics[-1]
    if method == "hyco":
        D = problem.model.to_physical(res.lam)
        rel = np.abs(D - truth) / truth
        print(f"D_u = {D[0]:.4e} ({rel[0]:.1%} off)   D_v = {D[1]:.4e} ({rel[1]:.1%} off)")
        print(f"HYCO physical e_s = {m['e_s_phy']:.4f}   HYCO network e_s = {m['e_s_syn']:.4f}")
    else:
        print(f"network trained on data alone e_s = {m['e_s_syn']:.4f}")
