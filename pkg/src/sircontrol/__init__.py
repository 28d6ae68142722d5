"""Design and evaluation of social-distancing schedules for SIR epidemics."""

from .core import (
    FEEDBACK,
    Condition,
    ControlSchedule,
    EpiState,
    Event,
    ModelParams,
    NotReachedError,
    Segment,
    Trajectory,
    derivative,
    find_time,
    i_peak,
    i_rises_to,
    s_falls_to,
    simulate,
    state_at,
)
from .lambertw import lambert_w0
from .analysis import (
    EquilibriumClass,
    FinalSizeResult,
    NotConvergedError,
    auc_infected,
    classify_equilibrium,
    herd_immunity,
    lyapunov_rate,
    lyapunov_value,
    max_s_infinity,
    peak_prevalence,
    s_infinity,
)
from .strategies import (
    EpidemiologicalObjective,
    InfeasibleError,
    NoGoldilocksError,
    RHatResult,
    StrategyReport,
    evaluate_schedule,
    goldilocks,
    open_loop,
    r_hat_single,
    r_star_single,
    sdi,
    wms,
)
from .optcontrol import (
    OptConfig,
    QuantizedConfig,
    WeightedConfig,
    solve_p_opt,
    solve_quantized,
    solve_weighted,
)

__version__ = "0.1.0"
