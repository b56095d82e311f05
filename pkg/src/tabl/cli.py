"""Command-line interface: ``tabl {train,eval,gradcheck,bench,stats,synth}``.

Options can also come from a ``key = value`` file given with ``--config``;
explicit flags override it. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import bench, data, gradcheck, layers, model
from .errors import DataError, NumericalError, TablError, ValidationError
from .loss_metrics import METRIC_COLUMNS, average_reports

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("tabl")


class UsageError(TablError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(dims) not in (2, 4) or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected D,T,D',T' (or D,T) positive integers, got {text!r}")
    return dims


def _add_data_args(p):
    p.add_argument("--data", help="FI-2010 directory, single file, or .npz day cache")
    p.add_argument("--orientation", choices=data.ORIENTATIONS, default="auto")
    p.add_argument("--variant", default="ZScore", help="normalisation variant of the FI-2010 fold files")
    p.add_argument("--setup", type=int, choices=(1, 2), default=2)
    p.add_argument("--fold", type=int, choices=range(1, 10), metavar="{1..9}",
                   help="setup 1 fold; omitted means all 9 folds")
    p.add_argument("--horizon", type=int, choices=data.HORIZONS, default=None,
                   help="prediction horizon in events (required)")
    p.add_argument("--stride", type=int, default=1, help="window stride over feature vectors")
    p.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = ArgumentParser(prog="tabl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags win")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="train a network")
    _add_data_args(p)
    p.add_argument("--topology", choices=sorted(model.TOPOLOGIES), default="A")
    p.add_argument("--layer", choices=model.LAYER_KINDS, default="TABL", help="final layer kind")
    p.add_argument("--optimizer", choices=("adam", "sgd_nesterov"), default="adam")
    p.add_argument("--max-norm", type=float, choices=model.MAX_NORMS, default=5.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--c", type=float, default=1e6, help="loss scaling constant")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--no-attention-trace", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--dims", type=_dims, help="fixed D,T,D',T' (default: random in 1..6)")
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("bench", parents=[common], help="complexity estimates and timing")
    p.add_argument("--dims", type=_dims, action="append",
                   help="D,T,D',T' layer for the cost table (repeatable; default: topology C layers)")
    p.add_argument("--rnn-hidden", type=int, default=32, help="ASeq-RNN hidden size for the reference row")
    p.add_argument("--analytic-only", action="store_true", help="skip wall-clock timing")
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--machine", default="", help="free-text machine descriptor for the report")

    p = sub.add_parser("stats", parents=[common], help="export attention and lambda statistics")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="run manifest holding the lambda / attention traces")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic FI-2010-format dataset")
    p.add_argument("--days", type=int, default=10)
    p.add_argument("--vectors-per-day", type=int, default=500)
    p.add_argument("--mode", choices=("random_walk", "separable"), default="random_walk")
    p.add_argument("--threshold", type=float, default=2e-4)
    p.add_argument("--file-orientation", choices=("rows", "cols"), default="cols")
    return parser


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        explicit = {a.dest for a in sub._actions for opt in a.option_strings
                    if any(tok == opt or tok.startswith(opt + "=") for tok in argv)}
        try:
            file_values = _read_config_file(args.config)
        except OSError as exc:
            parser.exit(EXIT_USAGE, f"tabl: error: cannot read config file: {exc}\n")
        except UsageError as exc:
            parser.exit(EXIT_USAGE, f"tabl: error: {exc}\n")
        for key, raw in file_values.items():
            if key not in actions:
                sub.error(f"unknown config key {key!r}")
            if key in explicit:
                continue
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    value = action.type(raw) if action.type else raw
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    sub.error(f"config key {key}: {exc}")
                if action.choices is not None and value not in action.choices:
                    sub.error(f"config key {key}: {value!r} not in {list(action.choices)}")
                if isinstance(action, argparse._AppendAction):
                    value = [value]
            setattr(args, key, value)
    needs_horizon = args.command in ("train", "eval") or (args.command == "stats" and args.data)
    if needs_horizon and args.horizon is None:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.error(f"--horizon is required; choose one of {{{','.join(str(h) for h in data.HORIZONS)}}}")
    if args.command in ("train", "eval") and not args.data:
        parser._subparsers._group_actions[0].choices[args.command].error("--data is required")
    return args


def _load_data(args):
    path = Path(args.data)
    if path.suffix == ".npz":
        return data.load_cache(path)
    return data.load_fi2010(path, args.orientation, variant=args.variant)


def _split(dataset, plan, args):
    try:
        return data.make_split(dataset, plan, args.horizon, args.stride)
    except ValidationError as exc:
        raise DataError(str(exc), args.data) from None


def _plans(args):
    if args.setup == 2:
        return [data.SplitPlan(2)]
    folds = [args.fold] if args.fold else range(1, 10)
    return [data.SplitPlan(1, k) for k in folds]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _metric_row(report):
    return [f"{v:.10f}" for v in report.csv_row()]


def _run_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return json.loads(json.dumps(cfg, default=str))


def cmd_train(args):
    spec = model.NetworkSpec(args.topology, args.layer)
    dataset = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, runs = [], []
    for plan in _plans(args):
        config = model.TrainConfig(
            optimizer=args.optimizer, max_epochs=args.epochs, batch_size=args.batch_size,
            dropout=args.dropout, max_norm=args.max_norm, horizon=args.horizon, setup=plan.setup,
            fold=plan.fold, seed=args.seed, c=args.c, patience=args.patience, dtype=args.dtype,
            threads=args.threads, trace_attention=not args.no_attention_trace)
        train_set, test_set = _split(dataset, plan, args)
        try:
            weights = data.class_counts(train_set, config.c)
        except ValidationError as exc:
            raise DataError(str(exc), args.data) from None
        log.info("%s setup %d fold %s: %d train / %d test windows, class counts %s",
                 spec.name, plan.setup, plan.fold, len(train_set), len(test_set), weights.counts)
        result = model.train(train_set, spec, config, test_set=test_set, weights=weights)
        tag = "" if plan.setup == 2 else f"_fold{plan.fold}"
        layers.save_checkpoint(out / f"checkpoint{tag}.npz", result.params,
                               meta={"topology": spec.topology, "final_layer": spec.final_layer,
                                     "horizon": args.horizon, "setup": plan.setup, "fold": plan.fold})
        reports.append(result.metrics)
        runs.append({
            "setup": plan.setup, "fold": plan.fold,
            "train_days": list(plan.train_days), "test_days": list(plan.test_days),
            "n_train": len(train_set), "n_test": len(test_set),
            "class_counts": list(weights.counts), "train_config": config.to_dict(),
            "loss": result.loss, "lr": result.lr, "train_accuracy": result.train_accuracy,
            "lambda": result.trace.lam, "attention": result.trace.attention,
            "metrics": result.metrics.to_dict(),
        })
    final = reports[0] if len(reports) == 1 else average_reports(reports)
    manifest = {"run_config": _run_config(args), "network": asdict(spec),
                "n_params": model.n_params(result.params), "runs": runs, "metrics": final.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    rows = [_metric_row(r) for r in reports]
    if len(reports) > 1:
        rows.append(_metric_row(final))
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    print(f"{spec.name}: accuracy {final.accuracy:.4f} precision {final.macro_precision:.4f} "
          f"recall {final.macro_recall:.4f} f1 {final.macro_f1:.4f}")
    return EXIT_OK


def _spec_from_checkpoint(params, meta):
    topology = meta.get("topology") or {1: "A", 2: "B", 3: "C"}[len(params)]
    return model.NetworkSpec(topology, params[-1].kind)


def cmd_eval(args):
    params, meta = layers.load_checkpoint(args.checkpoint)
    spec = _spec_from_checkpoint(params, meta)
    dataset = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for plan in _plans(args):
        _, test_set = _split(dataset, plan, args)
        reports.append(model.evaluate(params, spec, test_set, threads=args.threads))
    final = reports[0] if len(reports) == 1 else average_reports(reports)
    _write_csv(out / "eval_metrics.csv", METRIC_COLUMNS, [_metric_row(final)])
    (out / "eval_metrics.json").write_text(final.to_json())
    print(final.to_json())
    return EXIT_OK


def run_gradcheck(args, backward=None):
    report = gradcheck.run_suite(trials=args.trials, dims=args.dims, seed=args.seed, backward=backward)
    failed = []
    for key, (res, dims) in sorted(report.worst().items()):
        status = "ok" if res.ok else "FAIL"
        print(f"{key:8s} max_rel_err {res.max_rel_err:.3e}  dims {dims}  {status}")
        if not res.ok:
            failed.append(f"{key}{list(res.worst_index)} (dims {dims})")
    dims_note = ",".join(map(str, args.dims)) if args.dims else "random 1..6"
    print(f"trials {args.trials} per layer kind, dims {dims_note}, tolerance {gradcheck.TOLERANCE:g}")
    if failed:
        print("FAIL: " + "; ".join(failed))
        return EXIT_NUMERIC
    print("PASS")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.dims is not None and len(args.dims) != 4:
        raise UsageError("--dims needs four values D,T,D',T'")
    return run_gradcheck(args)


def cmd_bench(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims_list = [d for d in (args.dims or model.TOPOLOGIES["C"]) if len(d) == 4]
    if args.dims and len(dims_list) != len(args.dims):
        raise UsageError("--dims needs four values D,T,D',T'")
    rows = bench.cost_rows(dims_list)
    for kind in model.LAYER_KINDS:
        c = bench.network_cost(model.NetworkSpec("C", kind))
        rows.append({"layer": f"C({kind})", "D": 40, "T": 10, "D_out": 3, "T_out": 1,
                     "memory_params": c.memory_params, "compute_madds": c.compute_madds})
    rnn = bench.cost_aseq_rnn(40, args.rnn_hidden, 10)
    rows.append({"layer": "ASeq-RNN", "D": 40, "T": 10, "D_out": args.rnn_hidden, "T_out": 10,
                 "memory_params": rnn.memory_params, "compute_madds": rnn.compute_madds})
    (out / "cost.csv").write_text(bench.to_csv(rows))
    print(bench.to_csv(rows), end="")
    if not args.analytic_only:
        reports = [bench.timing_bench(layer_kind=k, iterations=args.iterations, seed=args.seed,
                                      machine=args.machine) for k in model.LAYER_KINDS]
        timing = [r.to_dict() for r in reports]
        (out / "timing.csv").write_text(bench.to_csv(timing))
        (out / "timing.json").write_text(bench.to_json(timing))
        print(bench.to_csv(timing), end="")
        print(f"TABL/BL total time ratio: {reports[1].total_ms / reports[0].total_ms:.3f}")
    return EXIT_OK


def _time_header(t):
    return [f"t-{t - 1 - j}" if j < t - 1 else "t" for j in range(t)]


def cmd_stats(args):
    params, meta = layers.load_checkpoint(args.checkpoint)
    if params[-1].kind != "TABL":
        raise UsageError("attention statistics require a checkpoint whose final layer is TABL; "
                         "this checkpoint ends in a BL")
    spec = _spec_from_checkpoint(params, meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = params[-1].dims[1]
    if args.data:
        dataset = _load_data(args)
        plan = _plans(args)[0]
        train_set, test_set = _split(dataset, plan, args)
        stats = model.attention_stats(params, spec, train_set if args.split == "train" else test_set)
        _write_csv(out / "attention.csv", ["class"] + _time_header(t),
                   [[name] + [f"{v:.10f}" for v in row] for name, row in zip(data.CLASS_NAMES, stats)])
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        run = manifest["runs"][0]
        _write_csv(out / "lambda.csv", ["epoch", "lambda"],
                   [[i] + [f"{v:.10f}" for v in lam] for i, lam in enumerate(run["lambda"])])
        rows = [[i, name] + [f"{v:.10f}" for v in row]
                for i, epoch in enumerate(run["attention"])
                for name, row in zip(data.CLASS_NAMES, epoch)]
        _write_csv(out / "attention_trace.csv", ["epoch", "class"] + _time_header(t), rows)
    if not args.data and not args.manifest:
        raise UsageError("stats needs --data (attention on a split) and/or --manifest (training traces)")
    return EXIT_OK


def cmd_synth(args):
    ds = data.synth_lob(args.seed, args.days, args.vectors_per_day, args.mode, args.threshold)
    out = Path(args.out)
    data.write_fi2010_days(ds, out, orientation=args.file_orientation)
    data.save_cache(ds, out / "cache.npz")
    print(f"wrote {ds.total} vectors in {len(ds.days)} day files to {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "bench": cmd_bench, "stats": cmd_stats, "synth": cmd_synth}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tabl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"tabl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"tabl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as exc:
        print(f"tabl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
