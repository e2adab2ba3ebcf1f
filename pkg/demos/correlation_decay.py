"""Two-point correlations of a bump with itself at growing gaps, with a power-law fit."""
from horomix import mixinglab as ml
from horomix.config import ExperimentConfig

# a longer window and more points than quick.ini, so all three gaps clear the noise
cfg = ExperimentConfig.from_file("demos/quick.ini",
                                 ["--correlate.n=40000", "--correlate.window=1000"])
clock = cfg.clock()
f = cfg.bumps(experiment=True)[0].as_observable()
gaps = cfg.getlist("correlate", "gaps")

rows = ml.correlate_grid([f, f], [[0.0, g] for g in gaps], clock, cfg.get("correlate", "n"),
                         cfg.seed, cfg.get("correlate", "window"))
for g, r in zip(gaps, rows):
    print(f"gap {g:6.0f}   correlation {r.value: .3e} +- {r.stderr:.1e}")
try:
    fit = ml.fit_decay([(g, r.value) for g, r in zip(gaps, rows)], [r.stderr for r in rows],
                       min_points=3)
    print(f"fitted exponent {fit.exponent:.3f}  (r^2 {fit.r_squared:.2f})")
except ml.InsufficientData as e:
    print("no fit:", e)
