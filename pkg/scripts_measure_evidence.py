"""Evidence runs: (a) filtered kinetic C_T vs epsilon, (b) micro filtered ordering."""
import time
import numpy as np
from flocksel import (
    CommunicationKernel, ControlSpec, InitialCondition, KineticConfig,
    RngStream, Selector, TargetState, run_kinetic, run_micro, sample_initial,
)

TARGET = TargetState(np.array([1.0, 1.0]))
BALL = Selector("ball", radius=5.0)

t0 = time.time()
print("== (a) filtered kinetic: C_T vs epsilon (N_s=10000, seeds 0-2)")
for eps in (0.01, 0.005, 0.0025):
    for kappa in (1.0, 0.25):
        cts = []
        for seed in range(3):
            spec = ControlSpec(mode="filtered", kappa=kappa, target=TARGET, selector=BALL)
            cfg = KineticConfig(n_samples=10_000, epsilon=eps, dt=eps, control=spec,
                                kernel=CommunicationKernel(10.0))
            s = run_kinetic(InitialCondition(), cfg, T=4.0, rng=RngStream(seed))
            cts.append(s.cost.total)
        print(f"eps={eps} kappa={kappa}: mean C_T={np.mean(cts):.4f}")

print("== (b) micro filtered (deterministic control), N=4096, dt=0.01, seeds 0-2")
for kappa in (4.0, 1.0, 0.25):
    cts = []
    for seed in range(3):
        e0 = sample_initial(InitialCondition(), 4096, RngStream(seed).derive(0))
        spec = ControlSpec(mode="filtered", kappa=kappa, target=TARGET, selector=BALL)
        s = run_micro(e0, spec, CommunicationKernel(10.0), dt=0.01, T=4.0)
        cts.append(s.cost.total)
    print(f"kappa={kappa}: mean C_T={np.mean(cts):.4f}")
print(f"total {time.time()-t0:.1f}s")
