# Helmholtz coefficient recovery under shrinking sensor coverage
#
# 25 sensors either cover the whole square or only the upper-right quarter.
# With full coverage the data alone pin the six parameters down. With a
# quarter, many coefficient fields explain the sensors equally well, and the
# network's picture of the unobserved region is what HYCO adds.
#
# Pass a smaller iteration count as the first argument for a quick look.

# %%
import sys
from dataclasses import replace

from hyco.bench.experiments import build_problem, preset
from hyco.trainer import train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else None

# %%
for region in ("omega", "q2"):
    cfg = preset("helmholtz", "desk", region)
    if iters is not None:
        cfg = replace(cfg, hyco=replace(cfg.hyco, max_iters=iters))
    problem = build_problem(cfg)
    for method in ("physical_only", "hyco"):
        res = train(cfg.hyco, problem, method=method)
        m = res.history.metrics[-1]
        print(f"{region:5s} {method:13s} e_p={m['e_p']:.3f}  e_s(physical)={m['e_s_phy']:.3f}"
              + (f"  e_s(network)={m['e_s_syn']:.3f}" if "e_s_syn" in m else ""))
