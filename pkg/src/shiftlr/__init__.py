"""Noise-robust penalized logistic regression with per-example shift parameters.

Subpackages cover the sparse data model, the penalized weighted GLM solver,
the shift-parameter robust model, an EM label-flipping baseline, kNN label
prefiltering, cross-validated hyperparameter selection, simulation protocols,
and a command-line interface.
"""

__version__ = "0.1.0"
