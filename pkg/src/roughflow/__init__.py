"""Numerical laboratory for a rough divergence-free field whose smooth
approximations do not select a unique solution of the transport equation."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    ApproxParams,
    CylCoords,
    Region,
    boundary_values,
    cart_from_cyl,
    classify_eps,
    classify_limit,
    cyl_from_cart,
)
from .fields import (  # noqa: E402
    ApproxField,
    DPLField2D,
    LimitField,
    QuadratureSpec,
    SmoothField,
    divergence_fd,
    eval_b,
    eval_b_dpl2d,
    eval_b_eps,
    lp_local_integral,
    mollify_field,
    normal_flux,
    sup_norm_scan,
)
from .flows import (  # noqa: E402
    Breakpoints,
    breakpoints,
    conserved_ratio,
    dpl2d_flows,
    flow_eps_closed,
    flow_eps_inverse,
    flow_eps_piecewise,
    flow_limit,
    flow_limit_inverse,
    time_shift,
)
from .engine import (  # noqa: E402
    IntegratorConfig,
    TrajectoryRecord,
    integrate,
    integrate_backward,
    track_jacobian,
)
from .transport import (  # noqa: E402
    GridField,
    InitialDatum,
    default_datum,
    l1_loc_distance,
    solve_eps,
    solve_exact,
    weak_form_residual,
    weak_star_pairing,
)
