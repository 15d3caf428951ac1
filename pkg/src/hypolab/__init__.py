"""hypolab: hypoelliptic structure checks and recurrence diagnostics for
periodically forced degenerate diffusions.

The system under study couples an observed block x, internal states y that
feel the noise only through x, and an input state z carrying a periodic
signal plus white noise:

    dx = f(x, y) dt + dz,   dy = g(x, y) dt,   dz = (S(t) + b(z)) dt + sigma(z) dW.

Subpackages cover symbolic vector-field algebra, bracket-based rank
certificates, control synthesis with attainability certification, SDE
simulation, and grid-chain recurrence statistics.
"""

from .expr import (EvaluationError, Expr, ExprError, Point, add, bump, const,
                   coord, cos, differentiate, div, evaluate, exp,
                   guarded_quotient, mul, neg, numpy_evaluate, parse_sexpr,
                   power, sin, sub, substitute, tanh, to_sexpr, tvar, xvar,
                   yvar, zvar)
from .fields import (FieldError, TimeSpaceField, VectorField, evaluate_field,
                     evaluate_time_space_field, jacobian_apply, lie_bracket,
                     state_coords, time_space_bracket)
from .engine import (USING_COMPILED, derive_seed, engine_name, eval_tape,
                     eval_tape_many, run_em, run_rk4, worker_count)
from .tape import Tape, TapeError, compile_exprs, exog
from .models import (BUILTIN_NAMES, DerivedFields, ModelError, ModelSpec,
                     SignalSpec, assemble_time_space_fields, b_hat, builtin,
                     equilibrium_state, stratonovich_drift)
from .hoermander import (CoeffTable, ConditionVerdict, RankCertificate,
                         ShapeError, StarConditionReport, cascade_bracket,
                         check_cascade_conditions, check_star_conditions,
                         coeff_table, hoermander_rank, star_bracket)
from .control import (AttainabilityCertificate, ControlPlan, ControlSignal,
                      ExprSegment, KroneckerResult, PlanningError,
                      SampledSegment, SingularNoiseError, SmoothPath,
                      Trajectory, certify_attainability, closed_loop_tape,
                      constant_segment, control_input, integrate_ode,
                      kronecker_search, plan_attain, run_closed_loop,
                      synthesize_rho)
from .simulate import (GridChain, PathRecord, SimConfig, SimulationError,
                       extract_grid_chain, fresh_seed, simulate_batch,
                       simulate_path)
from .recurrence import (DriftReport, ErgodicReport, HittingReport,
                         LyapunovSpec, OccupationHistogram, RecurrenceError,
                         ReturnTimeStats, SpikeTrain, ergodic_consistency,
                         estimate_lyapunov_drift, hitting_frequency,
                         interspike_intervals, occupation_histogram,
                         return_time_stats)

__version__ = "0.1.0"
