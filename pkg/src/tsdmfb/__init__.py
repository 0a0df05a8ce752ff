"""Dirichlet mixture background models with fixed-background novelty detection.

Modules
-------
dirichlet          Dirichlet density, sampling and weighted maximum likelihood
simplex_transform  margin-free map of raw attributes onto the simplex
inner_em           EM for one finite Dirichlet mixture, with BIC selection
tsdm               two-stage background model over labelled classes
fb                 new-class mixture fitted against a frozen background
classify_eval      MAP assignment, confusion matrix and metrics
synth              synthetic ground-truth data
cli                command-line pipeline
"""
from .errors import ConvergenceError, TSDMError, ValidationError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConvergenceError", "TSDMError", "ValidationError", "__version__"]
