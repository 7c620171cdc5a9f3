"""Test problems with the block structure of the semidiscrete MQS DAE."""

from .fem import FemProblem
from .io import (read_matrix_market, read_problem_bundle, write_matrix_market,
                 write_problem_bundle)
from .reluctivity import NU0, ReluctivityCurve, constant_curve
from .synthetic3d import build_synthetic_3d
from .transformer2d import build_transformer_2d

__all__ = [
    "FemProblem", "ReluctivityCurve", "constant_curve", "NU0",
    "build_transformer_2d", "build_synthetic_3d",
    "read_matrix_market", "write_matrix_market",
    "read_problem_bundle", "write_problem_bundle",
]
