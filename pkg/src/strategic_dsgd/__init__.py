"""Decentralized SGD with strategic gradient reports and pairwise payments."""

__version__ = "0.1.0"

from .engine import DivergenceError, ScheduleParams, run, simulate, stepsize
from .mechanism import PaymentCoefficientSchedule, PaymentLedger, coefficient, second_difference
from .problems import HuberRegression, LeastSquares, MeanEstimation, Quadratic
from .strategy import Action, apply_action
from .topology import CouplingMatrix, build_from_graph, build_ring, spectral_gap

__all__ = [
    "Action",
    "CouplingMatrix",
    "DivergenceError",
    "HuberRegression",
    "LeastSquares",
    "MeanEstimation",
    "PaymentCoefficientSchedule",
    "PaymentLedger",
    "Quadratic",
    "ScheduleParams",
    "apply_action",
    "build_from_graph",
    "build_ring",
    "coefficient",
    "run",
    "second_difference",
    "simulate",
    "spectral_gap",
    "stepsize",
]
