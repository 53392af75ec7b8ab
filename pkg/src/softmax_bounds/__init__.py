"""Lower-bound surrogates for softmax probabilities and tools to train with them.

The package has three layers:

* :mod:`softmax_bounds.bounds` -- numerically stable scalar kernels: exact
  softmax probabilities, the pairwise one-vs-each lower bound, its
  hierarchical generalization over label partitions, and the variational
  upper bound on log-sum-exp with its induced softmax lower bound.
* :mod:`softmax_bounds.nonparam` -- maximum likelihood estimation of a
  categorical distribution through each surrogate, including a doubly
  stochastic SGD variant that subsamples classes.
* :mod:`softmax_bounds.linear_model` / :mod:`softmax_bounds.trainer` --
  linear multiclass classifiers trained with the exact or surrogate
  likelihoods, either full batch or with the doubly stochastic trainer.

:mod:`softmax_bounds.cli` exposes the ``softmax-bounds`` command.

Submodule attributes are re-exported lazily so that importing the bare
package does not pull in numpy; the CLI relies on this to configure BLAS
thread counts before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "ConvergenceError": "softmax_bounds.bounds",
    "LabelPartition": "softmax_bounds.bounds",
    "bouchard_log_bound": "softmax_bounds.bounds",
    "bouchard_lse_upper": "softmax_bounds.bounds",
    "hierarchical_log_bound": "softmax_bounds.bounds",
    "log_sigmoid": "softmax_bounds.bounds",
    "log_sum_exp": "softmax_bounds.bounds",
    "optimize_alpha": "softmax_bounds.bounds",
    "ove_log_bound": "softmax_bounds.bounds",
    "sigmoid": "softmax_bounds.bounds",
    "softmax": "softmax_bounds.bounds",
    "softmax_prob": "softmax_bounds.bounds",
    "softplus": "softmax_bounds.bounds",
    "ConfigError": "softmax_bounds.config",
    "NumericalError": "softmax_bounds.config",
    "OptimizerSettings": "softmax_bounds.config",
    "TrainConfig": "softmax_bounds.config",
    "CountVector": "softmax_bounds.nonparam",
    "EstimationResult": "softmax_bounds.nonparam",
    "bouchard_fit": "softmax_bounds.nonparam",
    "exact_mle": "softmax_bounds.nonparam",
    "ove_fit": "softmax_bounds.nonparam",
    "ove_objective": "softmax_bounds.nonparam",
    "ove_sgd_fit": "softmax_bounds.nonparam",
    "LinearModel": "softmax_bounds.linear_model",
    "Objective": "softmax_bounds.linear_model",
    "train": "softmax_bounds.trainer",
    "fit_full_batch": "softmax_bounds.trainer",
    "TrainTrace": "softmax_bounds.trainer",
    "MethodReport": "softmax_bounds.metrics",
    "param_norm": "softmax_bounds.metrics",
    "error_rate": "softmax_bounds.metrics",
    "nlpd": "softmax_bounds.metrics",
    "smooth_trace": "softmax_bounds.metrics",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    target = _EXPORTS.get(name)
    if target is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(target), name)


def __dir__():
    return __all__
