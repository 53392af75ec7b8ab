"""``softmax-bounds``: reproducible estimation, training, and comparison runs.

Three subcommands:

* ``estimate`` fits a categorical distribution from label counts or a
  label stream through the exact MLE, a bound surrogate, or the doubly
  stochastic estimator, and writes the fitted probabilities plus an
  iteration trace.
* ``train`` fits a linear classifier on a sparse dataset with one of the
  training objectives and writes a checkpoint, a trace, and a report.
* ``compare`` scores candidate checkpoints against a reference
  checkpoint on a test set in a method/norm/error/nlpd table.

Every command writes a ``manifest.json`` listing input hashes, output
hashes, and the configuration, so reruns can be verified byte for byte.
Set ``SOFTMAX_BOUNDS_THREADS`` to pin the BLAS/OpenMP thread count; it
must take effect before numpy first loads, which is why this module
imports the numerical stack lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _configure_threads() -> None:
    threads = os.environ.get("SOFTMAX_BOUNDS_THREADS")
    if threads:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softmax-bounds",
        description="Softmax lower-bound estimation and training experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser(
        "estimate", help="fit a categorical distribution through a surrogate"
    )
    est.add_argument(
        "--method",
        required=True,
        choices=["exact", "ove", "bouchard", "ove-sgd"],
    )
    src = est.add_mutually_exclusive_group(required=True)
    src.add_argument("--counts", help="comma-separated class counts, e.g. 2,3,5")
    src.add_argument("--labels", help="text file with one 1-based label per line")
    src.add_argument(
        "--gen",
        choices=["powerlaw"],
        help="draw labels from a synthetic distribution instead of a file",
    )
    est.add_argument("--K", type=int, help="number of classes (required with --gen)")
    est.add_argument("--N", type=int, help="number of draws (required with --gen)")
    est.add_argument("--b", type=int, default=100, help="minibatch size (ove-sgd)")
    est.add_argument("--S", type=int, default=10, help="sampled rival classes (ove-sgd)")
    est.add_argument("--lr", type=float, default=0.005, help="initial step size (ove-sgd)")
    est.add_argument("--lr-decay", type=float, default=0.9)
    est.add_argument("--epochs", type=int, default=50)
    est.add_argument("--log-every", type=int, default=100)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", default=".", help="output directory")

    tr = sub.add_parser("train", help="train a linear classifier")
    tr.add_argument("--train", required=True, help="training set (sparse text format)")
    tr.add_argument("--test", help="held-out set for the report (defaults to train)")
    tr.add_argument(
        "--objective",
        required=True,
        choices=["soft", "ove", "bouchard", "ove-sgd"],
        help="soft/ove/bouchard run the deterministic full-batch fit",
    )
    tr.add_argument("--b", type=int, default=1, help="minibatch size (ove-sgd)")
    tr.add_argument("--S", type=int, default=1, help="sampled rival classes (ove-sgd)")
    tr.add_argument("--lr", type=float, default=0.05, help="initial step size (ove-sgd)")
    tr.add_argument("--lr-decay", type=float, default=0.9)
    tr.add_argument("--epochs", type=int, default=5)
    tr.add_argument("--log-every", type=int, default=100)
    tr.add_argument("--lam", type=float, default=1.0, help="L2 strength")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--num-classes", type=int, help="override inferred class count")
    tr.add_argument("--num-features", type=int, help="override inferred feature count")
    tr.add_argument("--out", default=".", help="output directory")

    cmp_ = sub.add_parser(
        "compare", help="score candidate checkpoints against a reference"
    )
    cmp_.add_argument(
        "--reference", required=True, metavar="NAME=CHECKPOINT",
        help="reference method name and checkpoint path",
    )
    cmp_.add_argument(
        "--candidate", action="append", default=[], metavar="NAME=CHECKPOINT",
        help="candidate method (repeatable)",
    )
    cmp_.add_argument("--test", required=True, help="test set (sparse text format)")
    cmp_.add_argument("--num-classes", type=int, help="override inferred class count")
    cmp_.add_argument("--num-features", type=int, help="override inferred feature count")
    cmp_.add_argument("--out", default=".", help="output directory")
    return parser


def _read_label_file(path) -> "np.ndarray":
    """Labels as 0-based ints from a text file of 1-based labels."""
    import numpy as np

    from softmax_bounds.datasets import DatasetFormatError

    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected an integer label, got {text!r}"
                ) from None
            if value < 1:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: labels are 1-based, got {value}"
                )
            labels.append(value - 1)
    if not labels:
        raise DatasetFormatError(f"{path}: no labels found")
    return np.array(labels, dtype=np.int64)


def _parse_counts(text: str) -> "np.ndarray":
    import numpy as np

    from softmax_bounds.config import ConfigError

    try:
        counts = [int(c) for c in text.split(",")]
    except ValueError:
        raise ConfigError(f"--counts must be comma-separated integers, got {text!r}") from None
    return np.array(counts, dtype=np.int64)


def _write_value_trace(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,value\n")
        for it, value in rows:
            fh.write(f"{it},{float(value)!r}\n")


def _cmd_estimate(args) -> int:
    from softmax_bounds.config import ConfigError, TrainConfig
    from softmax_bounds.datasets import gen_powerlaw_categorical
    from softmax_bounds.manifest import RunManifest
    from softmax_bounds.nonparam import (
        CountVector,
        bouchard_fit,
        exact_mle,
        ove_fit,
        ove_sgd_fit,
    )

    t0 = time.perf_counter()
    manifest = RunManifest(command=["estimate"] + _args_echo(args), seed=args.seed)

    labels = None
    if args.gen is not None:
        if args.K is None or args.N is None:
            raise ConfigError("--gen requires --K and --N")
        labels, _ = gen_powerlaw_categorical(args.K, args.N, seed=args.seed)
        num_classes = args.K
    elif args.labels is not None:
        labels = _read_label_file(args.labels)
        manifest.add_dataset(args.labels)
        num_classes = args.K if args.K is not None else int(labels.max()) + 1
    else:
        counts_arr = _parse_counts(args.counts)
        num_classes = len(counts_arr)

    if args.method == "ove-sgd":
        if labels is None:
            raise ConfigError(
                "--method ove-sgd estimates from a label stream; "
                "use --labels or --gen rather than --counts"
            )
        config = TrainConfig(
            batch_size=args.b,
            num_sampled=args.S,
            lr0=args.lr,
            lr_decay=args.lr_decay,
            epochs=args.epochs,
            seed=args.seed,
            log_every=args.log_every,
        )
        # the trace tracks L1 distance to the exact MLE of the same stream
        reference = exact_mle(CountVector.from_labels(labels, num_classes))
        result = ove_sgd_fit(labels, num_classes, config, ref_probs=reference.probs)
        trace_rows = result.error_trace
        manifest.config = {"method": args.method, **config.to_dict()}
    else:
        if labels is not None:
            counts = CountVector.from_labels(labels, num_classes)
        else:
            counts = CountVector(counts=counts_arr)
        fitter = {"exact": exact_mle, "ove": ove_fit, "bouchard": bouchard_fit}[args.method]
        result = fitter(counts)
        trace_rows = result.objective_trace
        manifest.config = {"method": args.method, "counts": counts.counts.tolist()}

    os.makedirs(args.out, exist_ok=True)
    probs_path = os.path.join(args.out, "probs.json")
    with open(probs_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json_dict(), fh, indent=2)
        fh.write("\n")
    trace_path = os.path.join(args.out, "trace.csv")
    _write_value_trace(trace_path, trace_rows)

    manifest.add_output(probs_path)
    manifest.add_output(trace_path)
    manifest.timings["wall_s"] = time.perf_counter() - t0
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(f"wrote {probs_path}, {trace_path}")
    return EXIT_OK


def _load_dataset(path, num_classes, num_features):
    from softmax_bounds.datasets import load_sparse

    return load_sparse(path, num_classes=num_classes, num_features=num_features)


def _evaluate(model, data):
    import numpy as np

    from softmax_bounds.linear_model import predict_proba_all
    from softmax_bounds.metrics import error_rate, nlpd

    probs = predict_proba_all(model, data)
    truth = data.labels()
    preds = np.argmax(probs, axis=1)
    return error_rate(preds, truth), nlpd(probs, truth)


def _cmd_train(args) -> int:
    from softmax_bounds.config import TrainConfig
    from softmax_bounds.datasets import unify_pair
    from softmax_bounds.linear_model import (
        KIND_BOUCHARD,
        KIND_EXACT,
        KIND_OVE,
        LinearModel,
        Objective,
        ove_loglik,
    )
    from softmax_bounds.manifest import SCOPE_NO_ELAPSED, RunManifest
    from softmax_bounds.metrics import MethodReport
    from softmax_bounds.trainer import fit_full_batch, train

    t0 = time.perf_counter()
    manifest = RunManifest(command=["train"] + _args_echo(args), seed=args.seed)

    train_data = _load_dataset(args.train, args.num_classes, args.num_features)
    manifest.add_dataset(args.train)
    if args.test is not None:
        test_data = _load_dataset(args.test, args.num_classes, args.num_features)
        manifest.add_dataset(args.test)
        train_data, test_data = unify_pair(train_data, test_data)
        eval_data, eval_split = test_data, "test"
    else:
        eval_data, eval_split = train_data, "train"

    model0 = LinearModel.zeros(train_data.num_classes, train_data.num_features)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")

    if args.objective == "ove-sgd":
        config = TrainConfig(
            batch_size=args.b,
            num_sampled=args.S,
            lr0=args.lr,
            lr_decay=args.lr_decay,
            epochs=args.epochs,
            lam=args.lam,
            seed=args.seed,
            log_every=args.log_every,
        )
        fitted, trace = train(model0, train_data, config)
        trace.to_csv(trace_path)
        trace_scope = SCOPE_NO_ELAPSED
        bound_final = ove_loglik(fitted, train_data, lam=args.lam)
        manifest.config = {"objective": args.objective, **config.to_dict()}
    else:
        kind = {
            "soft": KIND_EXACT,
            "ove": KIND_OVE,
            "bouchard": KIND_BOUCHARD,
        }[args.objective]
        fitted, rows = fit_full_batch(model0, train_data, Objective(kind=kind, lam=args.lam))
        _write_value_trace(trace_path, rows)
        trace_scope = None
        bound_final = rows[-1][1]
        manifest.config = {"objective": args.objective, "lam": args.lam}

    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    fitted.save(ckpt_path)

    error, mean_nlpd = _evaluate(fitted, eval_data)
    report = MethodReport(
        method=args.objective, error=error, nlpd=mean_nlpd, bound_final=bound_final
    )
    report.validate()
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"eval_split": eval_split, "report": report.to_json_dict()}, fh, indent=2)
        fh.write("\n")

    if trace_scope is None:
        manifest.add_output(trace_path)
    else:
        manifest.add_output(trace_path, scope=trace_scope)
    manifest.add_output(ckpt_path)
    manifest.add_output(report_path)
    manifest.timings["wall_s"] = time.perf_counter() - t0
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(
        f"{args.objective}: bound_final={bound_final:.6f} "
        f"{eval_split} error={error:.4f} nlpd={mean_nlpd:.4f}"
    )
    return EXIT_OK


def _parse_named_checkpoint(text: str) -> tuple[str, str]:
    from softmax_bounds.config import ConfigError

    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise ConfigError(f"expected NAME=CHECKPOINT, got {text!r}")
    return name, path


def _cmd_compare(args) -> int:
    from softmax_bounds.config import ConfigError
    from softmax_bounds.linear_model import CheckpointError, LinearModel
    from softmax_bounds.manifest import RunManifest
    from softmax_bounds.metrics import (
        MethodReport,
        param_norm,
        write_report_csv,
        write_report_json,
    )

    t0 = time.perf_counter()
    manifest = RunManifest(command=["compare"] + _args_echo(args))

    if not args.candidate:
        raise ConfigError("need at least one --candidate NAME=CHECKPOINT")
    ref_name, ref_path = _parse_named_checkpoint(args.reference)
    candidates = [_parse_named_checkpoint(c) for c in args.candidate]

    test_data = _load_dataset(args.test, args.num_classes, args.num_features)
    manifest.add_dataset(args.test)

    reference = LinearModel.load(ref_path)
    manifest.add_dataset(ref_path)
    if (
        reference.num_classes != test_data.num_classes
        or reference.num_features != test_data.num_features
    ):
        raise CheckpointError(
            f"checkpoint {ref_path} is {reference.num_classes} x "
            f"{reference.num_features} but the test set is "
            f"{test_data.num_classes} x {test_data.num_features}"
        )

    error, mean_nlpd = _evaluate(reference, test_data)
    reports = [MethodReport(method=ref_name, error=error, nlpd=mean_nlpd)]
    for name, path in candidates:
        model = LinearModel.load(path)
        manifest.add_dataset(path)
        if (
            model.num_classes != reference.num_classes
            or model.num_features != reference.num_features
        ):
            raise CheckpointError(
                f"checkpoint {path} shape does not match the reference"
            )
        error, mean_nlpd = _evaluate(model, test_data)
        reports.append(
            MethodReport(
                method=name,
                error=error,
                nlpd=mean_nlpd,
                norm=param_norm(reference, model),
            )
        )

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "reports.csv")
    json_path = os.path.join(args.out, "reports.json")
    write_report_csv(reports, csv_path)
    write_report_json(reports, json_path)
    manifest.config = {
        "reference": ref_name,
        "candidates": [name for name, _ in candidates],
    }
    manifest.add_output(csv_path)
    manifest.add_output(json_path)
    manifest.timings["wall_s"] = time.perf_counter() - t0
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(f"wrote {csv_path} ({len(reports)} methods)")
    return EXIT_OK


def _args_echo(args) -> list[str]:
    """Stable listing of the parsed arguments for the manifest."""
    skip = {"command"}
    out = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if value is None:
            continue
        out.append(f"--{key.replace('_', '-')}={value}")
    return out


def main(argv=None) -> int:
    _configure_threads()
    args = build_parser().parse_args(argv)

    from softmax_bounds.bounds import ConvergenceError
    from softmax_bounds.config import ConfigError, NumericalError
    from softmax_bounds.datasets import DatasetFormatError
    from softmax_bounds.linear_model import CheckpointError

    handlers = {
        "estimate": _cmd_estimate,
        "train": _cmd_train,
        "compare": _cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
