"""Follow one orbit of the time-changed horocycle flow and check the cocycle."""
import numpy as np

from horomix.config import ExperimentConfig
from horomix.lattice import sample_haar
from horomix.timechange import flow_tau, inverse_clock, shear_discrepancy, u_of

cfg = ExperimentConfig.from_file("demos/quick.ini")
clock = cfg.clock()
x = sample_haar(1, cfg.sampler())[0]

for t in (1.0, 10.0, 100.0):
    u = u_of(clock, x, t)
    back = inverse_clock(clock, x, u)
    print(f"t = {t:7.1f}   horocycle time u = {u:10.5f}   round trip error {abs(back - t):.1e}")

y = flow_tau(clock, x, 10.0)
split = u_of(clock, x, 10.0) + u_of(clock, y, 20.0)
print("additivity residual", abs(u_of(clock, x, 30.0) - split))

pts = sample_haar(20, cfg.sampler(index=1))
for T in (10.0, 100.0, 1000.0):
    A = np.abs(shear_discrepancy(clock, pts, 0.1, T))
    print(f"T = {T:6.0f}   max |A| = {A.max():.4f}")
