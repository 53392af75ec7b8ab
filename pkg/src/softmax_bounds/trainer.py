"""Doubly stochastic training of the one-vs-each classification bound.

Each optimizer step draws a minibatch of instances and, independently per
instance, a uniform subset of S rival classes. The sampled rival terms are
rescaled by (K - 1) / S, which makes the step an unbiased estimate of the
minibatch gradient of the full bound. An update therefore touches only the
rows {label} union {sampled rivals} and, within each row, only the feature
indices present in the instance: cost O(b * (S + 1) * nnz) per step,
independent of K and D.

L2 regularization would break that cost model (decay touches every
parameter), so it is applied lazily: weights are stored as
``w[r] = scale[r] * v[r]`` with one scalar scale per row, a global running
log-product of decay factors, and a per-row snapshot of that log-product.
Touching a row folds in the decay it missed; materialization at the end
settles every row. Biases are never regularized and update directly.

``fit_full_batch`` is the deterministic counterpart used for the baseline
objectives (exact softmax, full OVE, Bouchard with per-instance alphas);
it drives the analytic gradients from :mod:`softmax_bounds.linear_model`
with scipy's L-BFGS and verifies the gradient norm at the solution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from softmax_bounds.bounds import ConvergenceError, _log_sigmoid_impl, _sigmoid_impl
from softmax_bounds.config import ConfigError, NumericalError, OptimizerSettings, TrainConfig
from softmax_bounds.datasets import SparseDataset, SparseVector
from softmax_bounds.linear_model import (
    KIND_BOUCHARD,
    KIND_EXACT,
    KIND_OVE,
    LinearModel,
    Objective,
    bouchard_loglik,
    exact_loglik,
    full_gradient,
    optimal_alphas,
    ove_loglik,
)
from softmax_bounds.nonparam import sample_rival_classes
from softmax_bounds.rng import substream

__all__ = [
    "TrainTrace",
    "SparseDelta",
    "sample_remaining",
    "stochastic_gradient",
    "train",
    "fit_full_batch",
]

# fold a row's scale into its values once it drifts this small, so long
# untouched stretches under strong decay cannot underflow the scale
_RENORM_THRESHOLD = 1e-6


@dataclass
class TrainTrace:
    """Logged optimizer state: one row per logging step.

    ``rows`` holds (iteration, raw_bound_estimate, lr, epoch, elapsed_ms).
    The bound estimate is the minibatch mean of the sampled per-instance
    lower bound, unsmoothed; smoothing is a reporting concern.
    """

    rows: list[tuple[int, float, float, int, float]] = field(default_factory=list)

    def iterations(self) -> list[int]:
        return [r[0] for r in self.rows]

    def bound_estimates(self) -> list[float]:
        return [r[1] for r in self.rows]

    def validate(self) -> None:
        its = self.iterations()
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("trace iterations must be strictly increasing")

    def to_csv(self, path) -> None:
        """Write the trace as CSV.

        Every column except elapsed_ms is deterministic for a fixed seed
        and config; elapsed_ms is wall-clock and excluded from any
        reproducibility comparison.
        """
        self.validate()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,raw_bound_estimate,lr,epoch,elapsed_ms\n")
            for it, est, lr, epoch, ms in self.rows:
                fh.write(f"{it},{est!r},{lr!r},{epoch},{ms:.3f}\n")


@dataclass
class SparseDelta:
    """Additive update touching few weight rows.

    ``rows`` maps class index -> {feature index -> increment}; ``biases``
    maps class index -> bias increment. Represents the data term only;
    regularization is the caller's business.
    """

    rows: dict[int, dict[int, float]] = field(default_factory=dict)
    biases: dict[int, float] = field(default_factory=dict)

    def touched_rows(self) -> np.ndarray:
        keys = set(self.rows) | set(self.biases)
        return np.array(sorted(keys), dtype=np.int64)

    def add(self, row: int, indices: np.ndarray, values: np.ndarray, coeff: float) -> None:
        """Accumulate coeff * values onto the given feature slots of row."""
        slot = self.rows.setdefault(row, {})
        for i, v in zip(indices, values):
            key = int(i)
            slot[key] = slot.get(key, 0.0) + coeff * float(v)
        self.biases[row] = self.biases.get(row, 0.0) + coeff

    def to_dense(self, num_classes: int, num_features: int) -> tuple[np.ndarray, np.ndarray]:
        grad_w = np.zeros((num_classes, num_features))
        grad_b = np.zeros(num_classes)
        for r, slot in self.rows.items():
            for j, v in slot.items():
                grad_w[r, j] += v
        for r, v in self.biases.items():
            grad_b[r] += v
        return grad_w, grad_b


def sample_remaining(num_classes: int, label: int, num_sampled: int, rng: np.random.Generator) -> np.ndarray:
    """Draw distinct classes uniformly from the complement of ``label``.

    Returns a sorted int64 array of ``num_sampled`` distinct classes, none
    equal to ``label``. Every non-label class is included with probability
    num_sampled / (num_classes - 1).
    """
    if not 0 <= label < num_classes:
        raise ConfigError(f"label {label} out of range for {num_classes} classes")
    picked = sample_rival_classes(
        rng,
        np.array([label], dtype=np.int64),
        num_classes=num_classes,
        num_sampled=num_sampled,
    )[0]
    return np.sort(picked)


def _batch_terms(
    model_scores,
    batch: list[tuple[SparseVector, int]],
    rivals: np.ndarray,
    scale_factor: float,
):
    """Shared core of the stochastic step: coefficients and bound estimate.

    ``model_scores(vec, rows)`` must return the score of each row class on
    the instance. Returns one (vec, label, sampled, coeff_label,
    coeff_rivals) tuple per instance plus the mean sampled bound over the
    batch.
    """
    terms = []
    total_bound = 0.0
    for i, (vec, label) in enumerate(batch):
        sampled = rivals[i]
        joint = np.concatenate(([label], sampled))
        with np.errstate(over="ignore"):
            # overflow is reported as NumericalError below, not as a warning
            scores = model_scores(vec, joint)
        if not np.all(np.isfinite(scores)):
            raise NumericalError(
                f"non-finite score encountered (instance {i}, classes {joint.tolist()})"
            )
        margins = scores[0] - scores[1:]
        total_bound += scale_factor * float(np.sum(_log_sigmoid_impl(margins)))
        # d/df_y sum log sigmoid(f_y - f_m) = sum sigma(f_m - f_y)
        sig = _sigmoid_impl(-margins)
        coeff_label = scale_factor * float(np.sum(sig))
        coeff_rivals = -scale_factor * sig
        terms.append((vec, label, sampled, coeff_label, coeff_rivals))
    return terms, total_bound / len(batch)


def stochastic_gradient(
    model: LinearModel,
    batch: list[tuple[SparseVector, int]],
    num_sampled: int,
    rng: np.random.Generator,
) -> tuple[SparseDelta, float]:
    """One doubly stochastic gradient draw at the model's parameters.

    Samples ``num_sampled`` rival classes per instance and returns the
    rescaled sparse gradient of the summed one-vs-each bound over the
    batch, together with the minibatch mean of the sampled bound values.
    In expectation over the rival draw the delta equals the full-batch
    data gradient restricted to the batch; the L2 term is not included.
    With num_sampled = K - 1 the draw is degenerate and the delta is the
    exact batch gradient.
    """
    if not batch:
        raise ConfigError("batch must be non-empty")
    num_classes = model.num_classes
    labels = np.array([label for _, label in batch], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigError("batch label out of range")
    rivals = sample_rival_classes(rng, labels, num_classes=num_classes, num_sampled=num_sampled)
    scale_factor = (num_classes - 1) / num_sampled

    def scores_on(vec: SparseVector, rows: np.ndarray) -> np.ndarray:
        if vec.nnz == 0:
            return model.biases[rows].copy()
        return model.biases[rows] + model.weights[np.ix_(rows, vec.indices)] @ vec.values

    terms, bound = _batch_terms(scores_on, batch, rivals, scale_factor)
    delta = SparseDelta()
    for vec, label, sampled, coeff_label, coeff_rivals in terms:
        delta.add(label, vec.indices, vec.values, coeff_label)
        for m, c in zip(sampled, coeff_rivals):
            delta.add(int(m), vec.indices, vec.values, float(c))
    return delta, bound


def train(
    model: LinearModel,
    data: SparseDataset,
    config: TrainConfig,
    probe=None,
) -> tuple[LinearModel, TrainTrace]:
    """Run doubly stochastic SGD on the one-vs-each bound.

    Maximizes sum_n bound_n(w) - lam/2 ||W||^2 over weights and biases
    (biases unpenalized). Every step is, in expectation over the rival
    draw, a positive multiple of the gradient of that one objective
    restricted to the minibatch, so the target does not drift with the
    batch size. Epochs sweep a fresh shuffle of the data; the learning
    rate is lr0 * lr_decay ** epoch, constant within an epoch. All
    gradient contributions of a minibatch are evaluated at the parameters
    from the start of the step, then applied in one update. Identical
    seed and config reproduce the run bit for bit. Returns a new model;
    the input model is not modified.

    ``probe``, if given, is called after every step as
    ``probe(step, rows)`` with the sorted array of weight rows the step
    wrote. It exists for instrumentation and must not mutate anything.
    """
    if data.num_classes != model.num_classes or data.num_features != model.num_features:
        raise ConfigError(
            f"model is {model.num_classes} x {model.num_features} but data is "
            f"{data.num_classes} x {data.num_features}"
        )
    config.validate(num_classes=model.num_classes)
    n = len(data.rows)
    if n == 0:
        raise ConfigError("dataset is empty")
    labels_all = data.labels()

    shuffle_rng = substream(config.seed, "shuffle")
    class_rng = substream(config.seed, "classes")

    num_classes = model.num_classes
    scale_factor = (num_classes - 1) / config.num_sampled
    lam = config.lam

    # lazy-decay state: true weights are scale[r] * values[r]; cum_log is
    # the log of the total decay applied so far and row_log[r] records the
    # cum_log at which row r last folded its share in
    values = model.weights.copy()
    scale = np.ones(num_classes)
    biases = model.biases.copy()
    cum_log = 0.0
    row_log = np.zeros(num_classes)

    def materialize_rows(rows: np.ndarray) -> None:
        pending = cum_log - row_log[rows]
        needs = pending != 0.0
        if np.any(needs):
            sel = rows[needs]
            scale[sel] *= np.exp(pending[needs])
            row_log[sel] = cum_log
        else:
            row_log[rows] = cum_log

    trace = TrainTrace()
    t0 = time.perf_counter()
    step = 0
    batch_size = min(config.batch_size, n)
    last_logged = -1

    for epoch in range(config.epochs):
        lr = config.lr0 * config.lr_decay**epoch
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            chosen = order[start : start + batch_size]
            batch_labels = labels_all[chosen]
            rivals = sample_rival_classes(
                class_rng, batch_labels, num_classes=num_classes, num_sampled=config.num_sampled
            )
            touched = np.unique(np.concatenate((batch_labels, rivals.ravel())))
            materialize_rows(touched)

            batch = [(data.rows[i][0], int(labels_all[i])) for i in chosen]

            def scores_on(vec: SparseVector, rows: np.ndarray) -> np.ndarray:
                if vec.nnz == 0:
                    return biases[rows].copy()
                raw = values[np.ix_(rows, vec.indices)] @ vec.values
                return biases[rows] + scale[rows] * raw

            terms, bound = _batch_terms(scores_on, batch, rivals, scale_factor)

            if lam > 0.0:
                # the batch supplies len(batch) of the n data terms, so the
                # penalty share keeping the step unbiased for the summed
                # objective is lam * len(batch) / n
                decay = 1.0 - lr * lam * (len(batch) / n)
                cum_log += np.log(decay)
                scale[touched] *= decay
                row_log[touched] = cum_log

            for vec, label, sampled, coeff_label, coeff_rivals in terms:
                if vec.nnz == 0:
                    biases[label] += lr * coeff_label
                    for m, c in zip(sampled, coeff_rivals):
                        biases[int(m)] += lr * float(c)
                    continue
                values[label, vec.indices] += (lr * coeff_label / scale[label]) * vec.values
                biases[label] += lr * coeff_label
                for m, c in zip(sampled, coeff_rivals):
                    mi = int(m)
                    values[mi, vec.indices] += (lr * float(c) / scale[mi]) * vec.values
                    biases[mi] += lr * float(c)

            small = touched[np.abs(scale[touched]) < _RENORM_THRESHOLD]
            if small.size:
                values[small] *= scale[small, None]
                scale[small] = 1.0

            if probe is not None:
                probe(step, touched)
            if step % config.log_every == 0:
                elapsed_ms = (time.perf_counter() - t0) * 1000.0
                trace.rows.append((step, bound, lr, epoch, elapsed_ms))
                last_logged = step
            step += 1

    if last_logged != step - 1 and step > 0:
        # make sure the trace always reflects the end of the run
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        trace.rows.append((step - 1, bound, lr, epoch, elapsed_ms))

    materialize_rows(np.arange(num_classes))
    values *= scale[:, None]
    final = LinearModel(weights=values, biases=biases)
    final.check_finite()
    return final, trace


def _flatten(model: LinearModel) -> np.ndarray:
    return np.concatenate((model.weights.ravel(), model.biases))


def _unflatten(x: np.ndarray, num_classes: int, num_features: int) -> LinearModel:
    split = num_classes * num_features
    return LinearModel(
        weights=x[:split].reshape(num_classes, num_features).copy(),
        biases=x[split:].copy(),
    )


def fit_full_batch(
    model: LinearModel,
    data: SparseDataset,
    objective: Objective,
    settings: OptimizerSettings | None = None,
) -> tuple[LinearModel, list[tuple[int, float]]]:
    """Deterministically maximize a full-batch training objective.

    Supports all three objective kinds. For the Bouchard bound the
    per-instance alphas are re-solved exactly between weight passes, which
    can only increase the joint objective, and convergence is declared on
    the weight gradient at freshly optimal alphas; any alphas already on
    the objective are ignored. Returns the fitted model and an objective
    trace [(iteration, value)].

    Raises ConvergenceError if the gradient norm at the final iterate
    exceeds ``settings.grad_tol``.
    """
    from scipy.optimize import minimize

    if settings is None:
        settings = OptimizerSettings(grad_tol=1e-6)
    settings.validate()
    if objective.kind not in (KIND_EXACT, KIND_OVE, KIND_BOUCHARD):
        raise ConfigError(f"unknown objective kind {objective.kind!r}")
    if objective.lam < 0:
        raise ConfigError(f"lam must be >= 0, got {objective.lam}")
    if data.num_classes != model.num_classes or data.num_features != model.num_features:
        raise ConfigError(
            f"model is {model.num_classes} x {model.num_features} but data is "
            f"{data.num_classes} x {data.num_features}"
        )

    K, D = model.num_classes, model.num_features
    mat = data.to_csr()
    labels = data.labels()
    trace: list[tuple[int, float]] = []

    if objective.kind == KIND_BOUCHARD:
        return _fit_bouchard(model, data, objective, settings, trace)

    value_fn = exact_loglik if objective.kind == KIND_EXACT else ove_loglik
    last = {"x": None, "f": None}

    def negated(x: np.ndarray):
        m = _unflatten(x, K, D)
        val = value_fn(m, data, lam=objective.lam)
        gw, gb = full_gradient(m, data, objective)
        last["x"], last["f"] = x.copy(), val
        return -val, -np.concatenate((gw.ravel(), gb))

    def record(xk: np.ndarray) -> None:
        trace.append((len(trace), float(last["f"])))

    res = minimize(
        negated,
        _flatten(model),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxiter": settings.max_iter,
            "maxfun": settings.max_iter * 4,
            "gtol": settings.grad_tol * 0.5,
            "ftol": 1e-16,
        },
    )
    fitted = _unflatten(res.x, K, D)
    gw, gb = full_gradient(fitted, data, objective)
    gnorm = max(np.abs(gw).max(), np.abs(gb).max())
    if gnorm > settings.grad_tol:
        raise ConvergenceError(
            f"full-batch fit stalled: gradient inf-norm {gnorm:.3e} exceeds "
            f"{settings.grad_tol:.3e} after {res.nit} iterations ({res.message})"
        )
    trace.append((len(trace), value_fn(fitted, data, lam=objective.lam)))
    return fitted, trace


def _fit_bouchard(
    model: LinearModel,
    data: SparseDataset,
    objective: Objective,
    settings: OptimizerSettings,
    trace: list[tuple[int, float]],
) -> tuple[LinearModel, list[tuple[int, float]]]:
    """Maximize the alpha-profiled Bouchard objective over the weights.

    The joint objective is concave in (weights, alphas) and the inner
    alpha maximum is unique, so the profile g(w) = max_a f(w, a) is
    concave and, by the envelope property, its gradient is the partial
    weight gradient evaluated at the maximizing alphas. Each evaluation
    therefore re-solves the alphas exactly and one quasi-Newton run over
    the weights finds the joint optimum; plain alternation would crawl
    here because the two blocks are strongly coupled.
    """
    from scipy.optimize import minimize

    K, D = model.num_classes, model.num_features
    last = {"f": None}

    def negated(x: np.ndarray):
        m = _unflatten(x, K, D)
        alphas = optimal_alphas(m, data)
        fixed = Objective(kind=KIND_BOUCHARD, lam=objective.lam, per_instance_alpha=alphas)
        v = bouchard_loglik(m, data, fixed)
        w, b = full_gradient(m, data, fixed)
        last["f"] = v
        return -v, -np.concatenate((w.ravel(), b))

    def record(xk: np.ndarray) -> None:
        trace.append((len(trace), float(last["f"])))

    res = minimize(
        negated,
        _flatten(model),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxiter": settings.max_iter,
            "maxfun": settings.max_iter * 4,
            "gtol": settings.grad_tol * 0.5,
            "ftol": 1e-16,
        },
    )
    fitted = _unflatten(res.x, K, D)
    alphas = optimal_alphas(fitted, data)
    fixed = Objective(kind=KIND_BOUCHARD, lam=objective.lam, per_instance_alpha=alphas)
    gw, gb = full_gradient(fitted, data, fixed)
    gnorm = max(np.abs(gw).max(), np.abs(gb).max())
    if gnorm > settings.grad_tol:
        raise ConvergenceError(
            f"variational fit stalled: gradient inf-norm {gnorm:.3e} exceeds "
            f"{settings.grad_tol:.3e} after {res.nit} iterations ({res.message})"
        )
    trace.append((len(trace), bouchard_loglik(fitted, data, fixed)))
    return fitted, trace
