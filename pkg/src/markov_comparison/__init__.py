"""Certified comparison of finite-state, time-inhomogeneous Markov chains.

The package builds evolution systems from rate models, checks generator
conditions that order ``E f(X_t)`` against ``E f(Y_t)``, and verifies every
certificate against the exact expectations and by Monte Carlo.
"""

from .comparison import (CHECKERS, EQ, GE, INCONCLUSIVE, LE, ComparisonPair, ComparisonReport, Condition,
                         check_theorem4, check_theorem7, check_theorem8, check_theorem9, check_theorem10,
                         flip_verdict, oracle_expectation, sweep_function_class)
from .errors import ConfigurationError, ConvergenceError, GridError
from .evolution import EvolutionSystem, KnotSeries, TimeGrid, build_evolution
from .generators import apply_generator, estimate_generator, spacetime_apply
from .montecarlo import (PathBatch, PathSample, linking_supermartingale_test, martingale_test, simulate,
                         spacetime_martingale_test)
from .rates import (AffineRates, ConstantRates, JumpSchedule, PiecewiseConstantRates, ProcessSpec,
                    SampledRates, validate)
from .states import FunctionCone, StateSpace, TestFunction, is_in_cone, upset_generators

__version__ = "0.1.0"
