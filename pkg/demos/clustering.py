"""The time-clustering procedure and the Case A / Case B planner."""
from horomix.cluster import ClusterInput, plan_3mix, plan_kmix, run_procedure

res = run_procedure(ClusterInput((0.5, 0.5), (0, 500, 1000)))
print("radii", res.radii, "anchors", res.anchors, "stop step", res.stop_step)
print("gap exponent xi_k", res.xi_k)

for t1 in (10.0, 5000.0):
    p = plan_3mix(t1, 1e4, 0.45)
    print(f"t1 = {t1:g}: case {p.case}, sigma = {p.sigma:.3e}, threshold {p.threshold:.1f}")

p = plan_kmix((0, 3, 400, 1000), (0.5, 0.5, 0.5))
print("4 times:", p.case, "after", p.stop_step, "steps, sigma", p.sigma)
