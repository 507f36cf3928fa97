"""Cross-fitted double machine learning for the partially linear model,
with the score condition number kappa as a built-in diagnostic."""

from .dgp import Dataset, DgpSpec, gen_sample, make_spec, realized_r2
from .dml import DmlFit, Regime, classify_regime, decompose_linearization, run_dml
from .learners import LearnerKind, LearnerSpec
from .stochastics import SeededStream

__version__ = "0.1.0"
