"""Segmentation and denoising of signals with regime changes.

Three estimators share one data model: a regression with a hidden
logistic process fitted by EM (``rhlp``), a piecewise polynomial
regression fitted by dynamic programming (``piecewise``) and a left-right
hidden Markov regression fitted by Baum-Welch (``hmrm``). ``bench`` runs
simulation experiments comparing them and ``mda`` classifies signals
from fitted parameters.
"""

from .core import DataFormatError, InvalidInputError, TimeSeries
from .kernels import BACKEND

__all__ = ["BACKEND", "DataFormatError", "InvalidInputError", "TimeSeries"]
__version__ = "0.1.0"
