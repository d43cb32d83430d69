"""How singular is the limit field near the origin?

The field grows like |z|^(-3/2) on the paraboloids, so |b|^p is integrable on
a ball only for small p.  Cutting out a thin slab around z = 0 and shrinking
it shows the integral settling for p = 1.2, creeping up slowly at the
borderline p = 4/3, and blowing up for p = 2.
"""
from roughflow.fields import LimitField, integrability_probe

lim = LimitField()
cases = [
    (1.2, [1e-4, 1e-5, 1e-6, 1e-7]),
    (4.0 / 3.0, [1e-2, 1e-3, 1e-4, 1e-5]),
    (2.0, [1e-2, 1e-3, 1e-4]),
]
for p, cuts in cases:
    res = integrability_probe(lim, p, 1.0, cuts)
    print(f"p = {p:.4f}")
    for c, v in zip(cuts, res["values"]):
        print(f"  cutoff {c:8.1e}  integral {v:12.6f}")
    print("  growth per decade:", ", ".join(f"{g:.3f}" for g in res["growth_per_decade"]))
