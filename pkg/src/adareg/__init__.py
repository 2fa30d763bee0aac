"""Adaptive empirical-Bayes regularization for dense feedforward networks.

A matrix-variate normal prior with Kronecker-factored covariance is placed
over one weight matrix; training alternates SGD on the network with
closed-form updates of the prior's row/column precision matrices, both
constrained to a bounded-spectrum cone.  Diagnostics (stable rank, spectral
norm, row correlations, explained variance) and a reproducible experiment
harness round out the package.
"""

from . import cli, data, diagnostics, errors, net, optimizer, prior, spectral

__version__ = "0.1.0"

__all__ = [
    "cli",
    "data",
    "diagnostics",
    "errors",
    "net",
    "optimizer",
    "prior",
    "spectral",
    "__version__",
]
