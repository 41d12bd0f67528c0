"""Square-root-free adaptive optimizers with a momentum-SGD switching rule,
twin-trajectory stability probes, and theoretical bound tracers."""

from .errors import (ConfigError, DimensionError, HomeoptError,
                     NumericBlowupError, PreconditionError,
                     RecursionOverflowError, ValidationError)
from .numkit import RngStream, derive_seed, draw_index, fd_gradient
from .optim import (HyperParams, OptimizerKind, OptState, StepRecord,
                    init_state, preset, preset_names, step,
                    stepsize_function, update_moments)
from .problems import (Dataset, GradStats, Problem, ProblemKind, Sample,
                       empirical_risk, full_gradient, grad_stats, loss_grad,
                       make_dataset, make_problem, read_dataset,
                       write_dataset)
from .runner import TrainResult, train_run
from .stability import (DivergenceTrace, TwinResult, TwinRun,
                        generalization_gap, make_twin, run_twin,
                        run_twin_ensemble, stability_sweep)
from .bounds import (AnalysisConstants, RecursionState, check_lemma1,
                     check_lemma2_mc, compare_trace_to_bound,
                     theorem_bound_rhs, trace_recursion)

__version__ = "0.1.0"
