"""Two-scale averaging expansions for oscillatory singularly perturbed ODEs."""

from .averaging import (AveragingProfile, FDConfig, QuadratureConfig, StateStack,
                        abar0, abar_k, alpha0, alpha_k, build_profile, tensor_apply,
                        theta_A)
from .errors import (AxisError, BlowUpError, ConfigError, DimensionError,
                     FlowError, QuadratureError, TwoScaleError,
                     UnsupportedOrderError)
from .fields import (EMField, constant_field, field_from_spec, shear_field,
                     spatial_trig_field, theta_harmonic_field)
from .integrate import (AveragedHierarchy, EngineOptions, TimeGrid,
                        TrajectoryBundle, rk4_integrate, solve_hierarchy,
                        solve_reference)
from .model import (PeriodicDeviation, PeriodicFlow, PhaseState, TwoScaleSystem,
                    osc_deviation, projector_P, reduce_phase, rotation_R,
                    rotation_calR, validate_system)
from .reconstruct import (expansion_sum, reconstruct_X, residual_extract,
                          transported_density)
from .regimes import (MAX_ORDER, Regime, RegimeSpec, VariableFieldGeometry,
                      make_regime, make_system, variable_X1_position,
                      variable_Y1_position_rhs)

__version__ = "0.1.0"

from .harness import (ConvergenceReport, CrosscheckReport, crosscheck,  # noqa: E402
                      fit_slope, run_convergence, sup_error)
from .cli import (RunConfig, emit_report_json, emit_trajectory_csv, main,  # noqa: E402
                  parse_config)
