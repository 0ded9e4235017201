"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, io
from .core import DebiasError, HyperParams, LabeledDataset, NonFiniteError, PrototypeModel, dataset_priors
from .evaluation import GridSpec, lodo_evaluate
from .optimizer import DivergenceError, GradientBundle, finite_difference_check, loss_and_gradients, train
from .synth import GeneratorConfig, default_benchmark_config, generate

log = logging.getLogger("protodebias")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _method(name: str) -> str:
    return name.replace("-", "_")


def _load_config(path, loader):
    try:
        return loader(io.read_json(path))
    except (OSError, DebiasError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_data(path) -> LabeledDataset:
    try:
        return io.read_csv(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except DebiasError as exc:
        raise DataError(str(exc)) from exc


def _write(path, text: str) -> None:
    try:
        Path(path).write_bytes(text.encode("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    cfg = default_benchmark_config() if args.config is None else _load_config(args.config, GeneratorConfig.from_dict)
    if args.seed is not None:
        cfg.seed = args.seed
    data = generate(cfg)
    _write(args.out, io.format_csv(data))
    _emit({"rows": data.size, "datasets": data.dataset_count, "features": data.feature_count, "out": str(args.out)})
    return EXIT_OK


def _hyper_dict(args) -> dict:
    return {} if args.config is None else _load_config(args.config, dict)


def cmd_train(args) -> int:
    data = _load_data(args.data)
    method = _method(args.method)
    raw = _hyper_dict(args)
    seed = args.seed
    try:
        if method == "debias":
            hyper = HyperParams.from_dict(raw) if raw else HyperParams()
        elif method == "logistic":
            l2 = float(raw.get("l2", 0.01))
        elif method == "unbiased_svm":
            svm = {k: float(raw.get(k, 1.0)) for k in ("c_common", "c_specific", "delta_penalty")}
        elif method == "study_namer":
            l2 = float(raw.get("l2", 0.01))
    except (DebiasError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc

    try:
        if method == "debias":
            priors = dataset_priors(data, hyper.priors)
            model, trace = train(data, hyper, priors, seed)
            best = min(trace.records, key=lambda r: r.combined)
            summary = {"method": "debias", "iterations": len(trace), **best.breakdown.to_dict()}
            io.save_model(args.out, model, hyper.to_dict(), seed, priors)
        elif method == "logistic":
            model = baselines.train_logistic(data, l2, seed)
            summary = {"method": "logistic", "train_loss": model.train_loss}
            io.save_model(args.out, model, {"l2": l2}, seed)
        elif method == "unbiased_svm":
            model = baselines.train_unbiased_svm(data, seed=seed, **svm)
            summary = {"method": "unbiased_svm", "hinge_objective": model.objective}
            io.save_model(args.out, model, svm, seed)
        else:
            model = baselines.train_study_namer(data, l2, seed)
            summary = {"method": "study_namer", "train_loss": model.train_loss}
            io.save_model(args.out, model, {"l2": l2}, seed)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc}") from exc
    _emit(summary)
    return EXIT_OK


def text_report_path(out) -> Path:
    out = Path(out)
    return out.with_suffix(".txt") if out.suffix != ".txt" else out.with_suffix(".report.txt")


def cmd_lodo(args) -> int:
    data = _load_data(args.data)
    grid = GridSpec() if args.grid is None else _load_config(args.grid, GridSpec.from_dict)
    report = lodo_evaluate(data, _method(args.method), grid, args.seed, args.threads)
    _write(args.out, io.dumps(report.to_dict()))
    _write(text_report_path(args.out), report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_ceiling(args) -> int:
    data = _load_data(args.data)
    l2 = 0.01 if args.config is None else float(_load_config(args.config, dict).get("l2", 0.01))
    res = baselines.within_dataset_ceiling(data, l2, args.seed)
    out = {"l2": l2, "seed": args.seed,
           "datasets": [{"dataset_id": d, "auc": r.auc, "skip_reason": r.skip_reason} for d, r in sorted(res.items())]}
    text = io.dumps(out)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_name_study(args) -> int:
    data = _load_data(args.data)
    res = baselines.study_naming_cv(data, seed=args.seed)
    out = {"accuracy": res["accuracy"], "chance": res["chance"], "per_dataset_confusion": res["confusion"]}
    _emit(out)
    if args.out:
        _write(args.out, io.dumps(out))
    return EXIT_OK


def gradcheck_instances(seed: int, count: int = 20, quadratic: bool = False):
    """Random small problems covering each loss term alone and mixed."""
    rng = np.random.default_rng(seed)
    activations = [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1), (0.7, 1.3, 0.9, 0.2)]
    if quadratic:
        activations = [(0, 0, 0, 1)]
    for i in range(count):
        aj, ae, al, lam = activations[i % len(activations)]
        m, n, k = int(rng.integers(4, 13)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        d, c = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        s = np.concatenate([np.arange(d), rng.integers(0, d, m - d)]) if m >= d else rng.integers(0, d, m)
        data = LabeledDataset(0.7 * rng.standard_normal((m, n)), s, rng.integers(0, c, m), d, c)
        model = PrototypeModel(0.7 * rng.standard_normal((k, n)), rng.standard_normal((c, k)))
        yield model, data, HyperParams(aj, ae, al, lam, k)


def _corrupted(model, data, hyper, priors):
    lb, g = loss_and_gradients(model, data, hyper, priors)
    dv = g.d_prototypes.copy()
    dt = g.d_class_weights.copy()
    # double the largest-magnitude coordinate
    flat = np.concatenate([dv.ravel(), dt.ravel()])
    i = int(np.argmax(np.abs(flat)))
    if i < dv.size:
        dv.flat[i] *= 2
    else:
        dt.flat[i - dv.size] *= 2
    return lb, GradientBundle(dv, dt)


def cmd_gradcheck(args) -> int:
    fn = _corrupted if args.corrupt else None
    step = args.step if args.step is not None else (1e-3 if args.quadratic else 1e-5)
    if not step > 0:
        raise ConfigError("--step must be positive")
    worst = 0.0
    for model, data, hyper in gradcheck_instances(args.seed, args.instances, args.quadratic):
        worst = max(worst, finite_difference_check(model, data, hyper, step=step, gradient_fn=fn))
    ok = bool(worst <= GRADCHECK_TOL)
    _emit({"max_relative_error": float(worst), "tolerance": GRADCHECK_TOL, "instances": args.instances, "pass": ok})
    return EXIT_OK if ok else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="protodebias", description="Prototype-based dataset-bias unlearning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    methods = ["debias", "logistic", "unbiased-svm"]

    g = sub.add_parser("generate", help="write synthetic multi-dataset CSV")
    g.add_argument("--config", help="generator config JSON (default: committed benchmark)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and save it as JSON")
    t.add_argument("--data", required=True)
    t.add_argument("--method", choices=methods + ["study-namer"], default="debias")
    t.add_argument("--config", help="hyperparameter JSON")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    lo = sub.add_parser("lodo", help="leave-one-dataset-out evaluation")
    lo.add_argument("--data", required=True)
    lo.add_argument("--method", choices=methods, default="debias")
    lo.add_argument("--grid", help="grid JSON")
    lo.add_argument("--seed", type=int, default=0)
    lo.add_argument("--threads", type=int, default=1)
    lo.add_argument("--out", required=True, help="JSON report path; a .txt table is written alongside")
    lo.set_defaults(func=cmd_lodo)

    c = sub.add_parser("ceiling", help="within-dataset two-fold CV AUC")
    c.add_argument("--data", required=True)
    c.add_argument("--config", help="JSON with an 'l2' key")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_ceiling)

    n = sub.add_parser("name-study", help="two-fold CV study-naming accuracy")
    n.add_argument("--data", required=True)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out")
    n.set_defaults(func=cmd_name_study)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--step", type=float,
                    help="central-difference step (default 1e-5, or 1e-3 with --quadratic, where a "
                         "wider step has no truncation error and less round-off)")
    gc.add_argument("--quadratic", action="store_true", help="only the L2 penalty term")
    gc.add_argument("--corrupt", action="store_true", help="debug: double one gradient entry")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            parser.error("--threads must be >= 1")
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DebiasError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
