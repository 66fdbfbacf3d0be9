"""
Explicit vs implicit dequantization pipelines
=============================================

ExCP: one warp group loads, one dequantizes (and writes back to shared
memory, then signals a barrier), one runs the MMA.  ImFP: one loader and
several compute groups, each dequantizing a task into registers and
immediately running its MMA; one group's dequant overlaps another's MMA.
"""

import numpy as np

from w4a8lab import cost_model as cm
from w4a8lab import pipeline_sim as ps
from w4a8lab.gemm_ref import GemmShape, TileConfig

h100 = cm.builtin_profile("h100_sxm")
q = cm.CostQuery(GemmShape(128, 8192, 8192), TileConfig(128, 256, 64), 4, 8, 7 / 8)
base = ps.SimConfig.from_cost(q, h100)
print("stage times [ns]: load %.1f  dequant %.1f  mma %.1f  (k = %d)"
      % (base.t_ld * 1e9, base.t_dq * 1e9, base.t_mma * 1e9, base.k_iters))

# Barrier and write-back costs as a fraction of the load time.  Loading
# binds here, so ExCP hides small overheads; once dequant + write-back +
# barrier outgrows the load, the dequant group becomes the bottleneck.
for overhead in (0.0, 0.25, 0.5, 1.0):
    c = ps.SimConfig(base.k_iters, base.t_ld, base.t_dq, base.t_mma,
                     sync_cost=overhead * base.t_ld, roundtrip_cost=overhead * base.t_ld)
    out = ps.compare(c)
    print(f"overhead {overhead:4.2f}: ExCP {out['makespan']['excp'] * 1e6:7.2f} us  "
          f"ImFP {out['makespan']['imfp'] * 1e6:7.2f} us  speedup {out['speedup']:.2f}x")

# Where does ExCP lose time?
c = ps.SimConfig(40, 1.0, 1.0, 1.0, sync_cost=0.3, roundtrip_cost=0.3)
for name, r in (("excp", ps.simulate_excp(c)), ("imfp", ps.simulate_imfp(c))):
    util = {u: round(v, 2) for u, v in r.utilization.items()}
    print(f"\n{name}: makespan {r.makespan:.1f}, utilization {util}")
    print("  waiting:", {k: round(v, 1) for k, v in r.wait_totals().items()})

# Random configs: ImFP never loses once there are at least two compute groups.
rng = np.random.default_rng(0)
wins = sum(ps.simulate_imfp(c).makespan <= ps.simulate_excp(c).makespan + 1e-9
           for c in (ps.random_config(rng) for _ in range(300)))
print(f"\nImFP <= ExCP in {wins}/300 random configs")
