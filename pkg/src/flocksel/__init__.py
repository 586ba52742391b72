"""Selectively controlled flocking at particle and kinetic level.

`micro` steps the N-agent alignment dynamics with single-step feedback
controls, `kinetic` solves the mean-field density by binary-interaction
Monte Carlo, `control` supplies the selectivity strategies, `cost` the
running/total cost functionals, and `cli` a reproducible experiment
harness around them.
"""

from .core import (
    CommunicationKernel,
    DensityGrid,
    NumericalBlowupError,
    ParticleEnsemble,
    RngStream,
    TargetState,
    bin_density,
    kernel_eval,
    mean_velocity,
    position_diameter,
    velocity_diameter,
    wasserstein1,
)
from .control import (
    Selector,
    schedule_updates,
    selective_mask,
    selective_value,
    update_variational_center,
)
from .cost import (
    CostTrace,
    misalignment,
    running_cost_filtered,
    running_cost_pointwise,
    sweep_metrics,
)
from .micro import (
    ControlSpec,
    MicroStepReport,
    TrajectorySummary,
    filtered_control,
    micro_step,
    micro_step_implicit,
    pointwise_control,
    run_micro,
)
from .kinetic import (
    InitialCondition,
    KineticConfig,
    binary_interact,
    interaction_step,
    run_kinetic,
    sample_initial,
    transport_step,
)

__version__ = "0.1.0"
