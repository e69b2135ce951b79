"""``oscope`` command line: collect, simulate, rank, train, eval, classify, serve, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from .core import CATALOG, DataError, FeatureId

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class Output:
    """Human text or one JSON object per line (``--format=ndjson``)."""

    def __init__(self, fmt: str, stream=None):
        self.fmt = fmt
        self.stream = stream or sys.stdout

    def emit(self, record: dict, text: str | None = None) -> None:
        if self.fmt == "ndjson":
            self.stream.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")
        elif text is not None:
            self.stream.write(text + "\n")
        self.stream.flush()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _features(text: str | None) -> tuple[FeatureId, ...]:
    if not text:
        return CATALOG
    try:
        return tuple(FeatureId.parse(t.strip()) for t in text.split(",") if t.strip())
    except ValueError as e:
        raise UsageError(f"bad --features: {e}")


def _catalog(args):
    from . import simulator

    if args.catalog:
        sigs, noise = simulator.load_catalog(args.catalog)
    else:
        sigs, noise = simulator.default_catalog(), None
    noise = noise or simulator.NoiseModel()
    if args.onset_jitter is not None:
        sigs = simulator.with_jitter(sigs, onset_jitter=args.onset_jitter)
    if args.baseline_offset is not None:
        from dataclasses import replace

        noise = replace(noise, baseline_offset=args.baseline_offset)
    return sigs, noise


# -- subcommands ---------------------------------------------------------------

def cmd_collect(args, out: Output) -> int:
    from . import collector, traceio

    if args.interval_ms <= 0 or args.duration_s <= 0:
        raise UsageError("--interval-ms and --duration-s must be positive")
    if not args.out and not args.upload:
        raise UsageError("collect needs --out and/or --upload")
    cfg = collector.SamplerConfig(_features(args.features), int(round(args.interval_ms * 1000)),
                                  args.duration_s, args.statvfs_path)
    trace = collector.record(cfg)
    record = {"samples": trace.length, "features": [str(f) for f in trace.features],
              "mean_interval_us": float(np.diff(trace.timestamps_us).mean()) if trace.length > 1 else None}
    if args.out:
        traceio.write(args.out, trace)
        record["path"] = args.out
    if args.upload:
        record["id"] = collector.upload(trace, args.endpoint)
    out.emit(record, " ".join(f"{k}={v}" for k, v in record.items()))
    return EXIT_OK


def cmd_simulate(args, out: Output) -> int:
    from . import simulator
    from .datasets import save_dataset

    if args.per_class < 2:
        raise UsageError("--per-class must be >= 2")
    sigs, noise = _catalog(args)
    if args.multi:
        ds = simulator.synth_multi_dataset(sigs, noise, args.per_class, args.seed)
    else:
        ds = simulator.synth_dataset(sigs, noise, args.per_class, args.seed)
    meta = {"per_class": args.per_class, "seed": args.seed, "multi": args.multi,
            "catalog": args.catalog or "default"}
    save_dataset(args.out, ds, simulator.SIM_INTERVAL_US, meta)
    out.emit({"path": args.out, "windows": len(ds.windows), "classes": ds.n_classes,
              "train": len(ds.train_indices), "test": len(ds.test_indices)},
             f"wrote {args.out}: {len(ds.windows)} windows, {ds.n_classes} classes, "
             f"{len(ds.train_indices)} train / {len(ds.test_indices)} test")
    return EXIT_OK


def cmd_rank(args, out: Output) -> int:
    from . import traceio
    from .ranker import rank_features
    from .signalprep import downsample

    if args.dataset:
        from .datasets import load_dataset

        ds, _ = load_dataset(args.dataset)
        want = args.label if args.label is not None else ds.labels[0].name
        chosen = [w for w in ds.windows if want in (w.label.name, str(w.label.id))]
        if not chosen:
            raise DataError(f"no windows labeled {want!r}")
        feats = ds.features
        series = np.stack([w.values for w in chosen])
    else:
        if not args.traces:
            raise UsageError("rank needs trace files or --dataset")
        traces = [traceio.read(p) for p in args.traces]
        feats = traces[0].features
        length = min(t.length for t in traces)
        series = np.stack([t.as_float()[:length] for t in traces])
    if len(series) < 2:
        raise DataError("ranking needs at least two repetitions")
    series = downsample(series, args.stride)
    report = rank_features({f: series[:, :, i] for i, f in enumerate(feats)}, normalize=not args.raw)
    for row in report.to_rows():
        out.emit(row)
    if out.fmt != "ndjson":
        out.emit({}, report.to_text())
    return EXIT_OK


def cmd_train(args, out: Output) -> int:
    from . import experiments
    from .datasets import load_dataset
    from .nn import serialize
    from .nn.model import TrainConfig

    ds, header = load_dataset(args.dataset)
    interval = header["sample_interval_us"] * args.stride
    if args.model == "dtwknn":
        knn = experiments.fit_knn(ds, args.norm, args.stride, args.k, None if args.band < 0 else args.band)
        serialize.save(args.out, serialize.knn_to_bytes(knn, args.norm, args.stride,
                                                        header["sample_interval_us"], args.device_model, args.seed))
        out.emit({"model": "dtwknn", "path": args.out, "k": args.k, "train": len(ds.train_indices)},
                 f"wrote {args.out}: dtwknn K={args.k} over {len(ds.train_indices)} windows")
        return EXIT_OK

    config = TrainConfig(args.lr, args.epochs, args.batch, args.seed)
    dtype = np.float64 if args.dtype == "float64" else np.float32

    def progress(epoch, history):
        out.emit({"epoch": epoch, "loss": history.loss[-1], "accuracy": history.accuracy[-1]},
                 f"epoch {epoch}/{config.epochs} loss {history.loss[-1]:.4f} acc {history.accuracy[-1]:.4f}")

    model, history = experiments.fit_network(ds, args.model, args.norm, args.stride, config, dtype,
                                             progress, args.device_model)
    model.sample_interval_us = header["sample_interval_us"]
    serialize.save_model(args.out, model)
    out.emit({"model": args.model, "path": args.out, "final_loss": history.loss[-1], "interval_us": interval},
             f"wrote {args.out}")
    return EXIT_OK


def _format_confusion(conf: np.ndarray) -> str:
    width = max(3, len(str(conf.max())) + 1)
    head = " " * 5 + "".join(f"{j:>{width}}" for j in range(conf.shape[1]))
    rows = [f"{i:>4} " + "".join(f"{v:>{width}}" for v in row) for i, row in enumerate(conf)]
    return "\n".join([head] + rows)


def cmd_eval(args, out: Output) -> int:
    from . import experiments
    from .datasets import load_dataset
    from .nn import serialize

    ds, header = load_dataset(args.dataset)
    model = serialize.load(args.model)
    if tuple(model.features) != tuple(ds.features):
        raise DataError("model and dataset feature lists differ")
    if [lb.name for lb in model.labels] != [lb.name for lb in ds.labels]:
        raise DataError("model and dataset label sets differ")
    invocation = "oscope " + " ".join(shlex.quote(a) for a in args.argv)
    out.emit({"invocation": invocation, "model_seed": model.seed, "split_seed": ds.split_seed,
              "dataset_seed": header.get("meta", {}).get("seed")},
             f"# {invocation}\n# model seed {model.seed}, split seed {ds.split_seed}, "
             f"dataset seed {header.get('meta', {}).get('seed')}")
    if model.kind == "dtwknn":
        ks = (args.k,) if args.k else (1, 3, 5, 7)
        report = experiments.eval_knn(model.knn, ds, model.norm, model.stride, ks)
    else:
        report = experiments.eval_network(model, ds)
    record = {"model": report.model, "accuracy": report.accuracy, "test": int(report.confusion.sum()),
              "confusion": report.confusion, "labels": [lb.name for lb in ds.labels], **report.extra}
    text = [f"model {report.model}  accuracy {report.accuracy:.4f} "
            f"({int(np.trace(report.confusion))}/{int(report.confusion.sum())})"]
    if "k_accuracy" in report.extra:
        text.append("K sweep: " + ", ".join(f"K={k}: {a:.4f}" for k, a in report.extra["k_accuracy"].items())
                    + f"  (best K={report.extra['best_k']})")
    text.append("confusion (rows = true class, columns = predicted):")
    text.append(_format_confusion(report.confusion))
    text.append("classes: " + "; ".join(f"{lb.id}={lb.name}" for lb in ds.labels))
    out.emit(record, "\n".join(text))
    return EXIT_OK


def cmd_classify(args, out: Output) -> int:
    from . import traceio
    from .nn import serialize
    from .pipeline import classify_trace

    model = serialize.load(args.model)
    trace = traceio.read(args.trace)
    result, onset, forced = classify_trace(model, trace, force=args.force)
    record = {"label_id": result.label.id, "label": result.label.name, "onset": onset, "forced": forced,
              "probabilities": result.probabilities, "latency_us": result.latency}
    out.emit(record, f"{result.label.name} (p={result.probabilities.max():.4f}, onset {onset}, "
                     f"{result.latency / 1000:.2f} ms)")
    return EXIT_OK


def cmd_serve(args, out: Output) -> int:
    from .service.app import load_config, serve

    config = load_config(args.config, host=args.host, port=args.port, store=args.store,
                         models=args.model or None)
    serve(config)
    return EXIT_OK


def cmd_gradcheck(args, out: Output) -> int:
    from .nn.gradcheck import run_suite

    results = run_suite(seed=args.seed)
    ok = True
    for name, err in results.items():
        limit = 1e-6 if name == "dense_only" else 1e-4
        ok &= err < limit
        out.emit({"model": name, "max_rel_error": err, "limit": limit, "pass": bool(err < limit)},
                 f"{name}: max relative error {err:.3e} (limit {limit:g}) {'PASS' if err < limit else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # accepted before or after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "ndjson"), default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p = _Parser(prog="oscope", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[common], **kw)

    s = sub.add_parser("collect", help="sample syscall counters on this host")
    s.add_argument("--interval-ms", type=float, default=1.0)
    s.add_argument("--duration-s", type=float, default=5.0)
    s.add_argument("--features", help="comma-separated syscall.field list (default: all five)")
    s.add_argument("--statvfs-path")
    s.add_argument("--out", help="write the trace file here")
    s.add_argument("--upload", action="store_true", help="POST the trace to the service")
    s.add_argument("--endpoint", help="service base URL (env OSCOPE_ENDPOINT wins)")
    s.set_defaults(func=cmd_collect)

    def catalog_opts(s):
        s.add_argument("--catalog", help="signature catalog JSON (default: built-in 17 behaviors)")
        s.add_argument("--onset-jitter", type=int)
        s.add_argument("--baseline-offset", type=float)

    s = sub.add_parser("simulate", help="generate a labeled synthetic dataset")
    catalog_opts(s)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--multi", action="store_true", help="41 single/pair/triple behavior classes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rank", help="rank features by average pairwise distance")
    s.add_argument("traces", nargs="*", help="trace files of one repeated behavior")
    s.add_argument("--dataset")
    s.add_argument("--label", help="behavior name or id within --dataset (default: first class)")
    s.add_argument("--raw", action="store_true", help="skip per-series min-max normalization")
    s.add_argument("--stride", type=int, default=1)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("train", help="fit a classifier and write a model file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", choices=("cnn_gru", "gru_only", "dtwknn"), default="cnn_gru")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--norm", choices=("minmax", "mean", "zscore", "meansub", "none"), default="minmax")
    s.add_argument("--stride", type=int, default=1, help="keep every stride-th sample (cadence ablation)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--band", type=int, default=500, help="Sakoe-Chiba radius; negative for none")
    s.add_argument("--device-model", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="accuracy and confusion on the test split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, help="fix K for dtwknn instead of sweeping 1,3,5,7")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("classify", help="run one trace through a model")
    s.add_argument("trace")
    s.add_argument("--model", required=True)
    s.add_argument("--force", action="store_true", help="use the head of the trace if no onset is found")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--config")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--store")
    s.add_argument("--model", action="append", help="model file to load (repeatable)")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def _validate(args) -> None:
    for name in ("epochs", "batch", "stride", "per_class", "k"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if getattr(args, "lr", 1.0) <= 0:
        raise UsageError("--lr must be positive")
    if args.command == "train" and args.model != "dtwknn" and args.k != 1:
        raise UsageError("--k applies only to --model dtwknn")
    if args.command == "rank" and args.dataset and args.traces:
        raise UsageError("give trace files or --dataset, not both")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    args.format = getattr(args, "format", "text")
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Output(args.format)
    try:
        return args.func(args, out)
    except UsageError as e:
        print(f"oscope {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as e:
        print(f"oscope {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # runtime failure
        print(f"oscope {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
