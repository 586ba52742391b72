"""Measure Test 1a/1b C_T at desk scale (criterion 7/8 dry run)."""
import time
import numpy as np
from flocksel import (
    CommunicationKernel, ControlSpec, InitialCondition, KineticConfig,
    RngStream, Selector, TargetState, run_kinetic,
)

TARGET = TargetState(np.array([1.0, 1.0]))

def run_one(mode, kappa, seed, n=50_000, dt=0.01, T=4.0):
    spec = ControlSpec(mode=mode, kappa=kappa, target=TARGET, selector=Selector("ball", radius=5.0))
    cfg = KineticConfig(n_samples=n, epsilon=dt, dt=dt, control=spec, kernel=CommunicationKernel(10.0))
    s = run_kinetic(InitialCondition(), cfg, T=T, rng=RngStream(seed))
    return s.cost.total, s.cost.alignment_final

t0 = time.time()
for mode in ("filtered", "pointwise"):
    print(f"== {mode}")
    for kappa in (4.0, 1.0, 0.25):
        cts = []
        for seed in range(5):
            ct, a = run_one(mode, kappa, seed)
            cts.append(ct)
        print(f"kappa={kappa}: mean C_T={np.mean(cts):.4f}  per-seed={[round(c,4) for c in cts]}  A_last={a:.3f}")
print(f"total {time.time()-t0:.1f}s")
