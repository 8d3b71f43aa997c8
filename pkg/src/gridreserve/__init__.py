"""Reserve co-optimization and resilience verification for radial distribution grids."""
from .conic import ConicProgram, SolveReport, solve
from .dispatch import DispatchSolution, solve_baseline
from .dro import AmbiguitySet, SampleSet, build_ambiguity_set, estimate_C, solve_dro, solve_sigma
from .errors import GridReserveError
from .events import (
    EventModel, ModeSchedule, attack_coordinated, attack_replay, attack_scale, load_events,
    sample_event, select_modes,
)
from .netmodel import GridCase, load_case, save_case
from .robust import (
    DisturbanceSpec, ReserveSchedule, feasibility_radius, load_spec, proportional_dispatch,
    sensitivity_gain, solve_robust, tune_reserve_gain, verify_vertices,
)
from .simharness import ValidationReport, pareto_sweep, validate
from .stochastic import GaussianModel, estimate_var_cvar, load_gaussian, solve_chance, solve_cvar

__version__ = "0.1.0"
