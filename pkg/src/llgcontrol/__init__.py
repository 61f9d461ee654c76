"""Optimal control of the two-dimensional Landau-Lifshitz-Gilbert equation.

Modules: :mod:`mesh` (grid and discrete calculus), :mod:`algebra` (R^3
fields, unit sphere, trajectory files), :mod:`state` (forward solvers),
:mod:`sensitivity` (tangent, costate and costate-derivative solvers),
:mod:`optimize` (cost, gradient, box constraints, audits), :mod:`cli`.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, FormatError, GridMismatchError,  # noqa: E402
                     InstabilityError, LLGError, NormalizationError, StabilityWarning)
from .mesh import Grid  # noqa: E402
from .sensitivity import TargetData  # noqa: E402
from .state import StateProblem, solve_state  # noqa: E402
from .optimize import Control, ControlProblem, optimize  # noqa: E402
