"""Grid-based Bayesian point-mass filters with tensor-train compression.

The package has three layers:

* :mod:`ttpmf.tensor_train` / :mod:`ttpmf.tt_algorithms` -- a small
  tensor-train (TT) numerical core: construction (from dense arrays or from
  black-box evaluators via greedy cross approximation), arithmetic, rounding,
  a transition-matrix contraction, FFT convolution and grid interpolation,
  all performed on the level of the decomposed cores.
* :mod:`ttpmf.grids` / :mod:`ttpmf.models` / :mod:`ttpmf.filters` --
  equidistant grids, state-space models and the point-mass filters built on
  top of the numerical core (dense and TT, standard and FFT variants, plus a
  bootstrap particle filter and a Kalman reference).
* :mod:`ttpmf.bench` / :mod:`ttpmf.cli` -- a benchmark harness comparing the
  filters on common trajectories, and its command line interface.
"""

from ttpmf.tensor_train import (
    DenseGuardError,
    TensorTrain,
    tt_add,
    tt_dot,
    tt_eval,
    tt_eval_many,
    tt_from_dense,
    tt_hadamard,
    tt_norm,
    tt_ones,
    tt_rank_one,
    tt_round,
    tt_scale,
    tt_storage_bytes,
    tt_sum,
    tt_to_dense,
)

__all__ = [
    "DenseGuardError",
    "TensorTrain",
    "tt_add",
    "tt_dot",
    "tt_eval",
    "tt_eval_many",
    "tt_from_dense",
    "tt_hadamard",
    "tt_norm",
    "tt_ones",
    "tt_rank_one",
    "tt_round",
    "tt_scale",
    "tt_storage_bytes",
    "tt_sum",
    "tt_to_dense",
]

__version__ = "0.1.0"
