"""Two smoothings, two different limits.

Smoothing the same rough field with rotation angle pi/2 or pi gives solutions
of the transport equation that converge, as eps shrinks, to two different
functions.  The distances to the respective limits shrink while the distance
between the limits stays put.  A coarser grid than the acceptance run keeps
this quick.
"""
from roughflow.experiments import ExperimentConfig, run_nonuniqueness

cfg = ExperimentConfig(experiment="nonuniqueness", grid_n=40, grid_n_coarse=32)
rep = run_nonuniqueness(cfg)
tab = rep.tables["distances"]
print(f"{'eps':>8} {'d_theta':>10} {'d_phi':>10}")
for e, a, b in zip(tab["eps"], tab["d_theta"], tab["d_phi"]):
    print(f"{e:8.3f} {a:10.4f} {b:10.4f}")
print(f"distance between the limits D = {rep.extra['D']:.4f}")
for name, ok in rep.checks.items():
    print(f"  {name:<36} {'ok' if ok else 'FAILED'}")
