"""Model order reduction with memory for nonlinear reaction networks.

Partition a network into a retained subnetwork and an eliminated bulk,
reduce with the bulk quasi-steady state, and correct the reduced drift
with memory: either as an explicit kernel under a history integral or as
self-consistent auxiliary variables.  Includes a model zoo, channel
decomposition of the memory, approximate comparison kernels, and an
analysis harness for fixed points, basins, and bifurcation scans.
"""

from .system import SystemSpec, NonFiniteError, fd_jacobian
from .zoo import zoo, build_system, list_models
from .qss import (
    QssError,
    MultipleRootsError,
    QssSolution,
    solve_qss,
    solve_qss_batch,
    qss_drift,
)
from .memory import (
    MemoryIngredients,
    Trajectory,
    memory_ingredients,
    memory_zmn,
    propagator,
    flow_qss,
    random_force_approx,
    integrate_full,
    integrate_qss,
    integrate_zms,
    integrate_zmn,
    trajectory_to_csv,
)
from .channels import (
    ChannelKey,
    ChannelSeries,
    enumerate_channels,
    decompose_zmn,
    decompose_zms,
    rank_channels,
    integrate_zms_star,
)
from .variants import (
    memory_gouasmi,
    memory_gqss,
    LinearKernel,
    linearize_memory,
    linear_amplitude_sweep,
)
from .analysis import (
    FixedPointSet,
    BasinGrid,
    HopfCurve,
    find_fixed_points,
    basin_map,
    hopf_scan,
    memory_amplitude_map,
    compare_timecourses,
    count_crossings,
    time_to_steady,
)
from .dsl import parse_model, eval_expr, pretty_print, config_to_spec

__version__ = "0.1.0"
