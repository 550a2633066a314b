"""Conservative dynamical low-rank DG solver for the Vlasov-Poisson equation."""

from .mesh import PeriodicMesh, build_uniform, coarsen, refine
from .dg import (DgField, DgSpace, FieldBundle, GAUSS_WEIGHT, UNIT_WEIGHT,
                 WeightDescriptor, discrete_derivative_form,
                 discrete_derivative_matrix, inner, inverse_Pw, norm,
                 numerical_flux, orthonormalize, project, weighted_project_Pw)
from .lowrank import (FixedBasis, LowRankState, augment_bases, fixed_basis,
                      init_state, to_block_qr, truncate)
from .coupling import (CouplingMatrices, assemble_coupling, k_step, l_step,
                       s_step_backward, s_step_full)
from .poisson import (ElectricField, Moments, PoissonSolver, compute_moments,
                      solve_poisson, zero_field)
from .integrators import BUG, KSL, IntegratorConfig, StepReport, bug_step, ksl_step, run
from .diagnostics import DiagnosticsRecord, continuity_residual, fit_decay_rate, observe
from .adaptivity import AdaptConfig, adapt_step, error_indicator
from . import scenarios

__version__ = "0.1.0"
