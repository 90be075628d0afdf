"""Consensus explanations over Rashomon sets of additive, kernel and forest models."""
from .errors import (ConfigError, ConsensusError, DegenerateColumn, EmptyRashomon, Infeasible, MissingTarget,
                     NonNumericCell, NotPositiveDefinite, ParseError, SignNotEstablished, TransitivityViolation)
from .linalg import EllipsoidFamily, cholesky, linear_range, solve_spd
from .consensus import (AttributionProvider, Comparators, PartialOrder, Sign, Statement, comparators,
                        embedding_check, epsilon_linesearch, explain_instance, sa_set, sg_set, sign_attr, sign_gap,
                        utility)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConsensusError", "DegenerateColumn", "EmptyRashomon", "Infeasible", "MissingTarget",
    "NonNumericCell", "NotPositiveDefinite", "ParseError", "SignNotEstablished", "TransitivityViolation",
    "EllipsoidFamily", "cholesky", "linear_range", "solve_spd",
    "AttributionProvider", "Comparators", "PartialOrder", "Sign", "Statement", "comparators",
    "embedding_check", "epsilon_linesearch", "explain_instance", "sa_set", "sg_set", "sign_attr", "sign_gap",
    "utility",
]
