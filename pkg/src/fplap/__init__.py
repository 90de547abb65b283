"""Nonlocal p-Laplacian interval solver.

Dense discretization of the fractional p-Laplacian Dirichlet problem with a
singular plus growth right-hand side on an interval, together with the scalar
ray analysis, the principal eigenpair, two-branch constrained minimization,
monotone sub/super-solution iteration and parameter-range exploration.
"""

from .domain import (DiscreteFunction, Mesh, build_mesh, integrate,
                     interpolate, norm_lp, zeros)
from .eigen import (EigenPair, ExtremalTrial, embedding_constant,
                    principal_eigenpair, sobolev_constant)
from .fiber import (CriticalPoints, FiberCoefficients, Lambda1Estimate,
                    LambdaStar, critical_points, estimate_lambda1,
                    evaluate_fiber, fiber_coeffs, lambda_bar, lambda_star,
                    m_max, m_max_printed, m_profile, t2_at_lambda0, t_max)
from .kernel import (KernelWeights, ProblemParams, apply_fplap, build_kernel,
                     energy, energy_gradient, load_kernel_cache,
                     save_kernel_cache, seminorm_p)

__version__ = "0.1.0"
