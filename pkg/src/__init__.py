"""
ABM-Flow: predictor-corrector solvers for rectified-flow ODEs

Second-order Adams-Bashforth-Moulton integration with adaptive step
control, mask guided feature injection, and a convergence study harness.
"""

__version__ = "1.0.0"
__author__ = "ABM-Flow developers"
__description__ = "Adams-Bashforth-Moulton solvers for rectified-flow ODEs"
