"""The planar warm-up: two flows of one field.

Inside the cone |x| <= |y| the field is (-sgn(y) x / y^2, -1/|y|), which
pulls points along the rays x/y = const into the origin in finite time.  It
has two flows: they agree until a trajectory hits the origin, then leave it
on mirror-image rays.  Both solve the ODE away from that moment.
"""
import numpy as np

from roughflow.flows import dpl2d_flows

p = np.array([0.3, 1.0])
tc = p[1] ** 2 / 2
for t in np.linspace(0.0, 2 * tc, 9):
    a, b = dpl2d_flows(t, p)
    tag = "before" if t <= tc else "after "
    print(f"t={t:5.3f} {tag}  X={a.round(5)}  X~={b.round(5)}")
