"""Command-line interface: train, evaluate, calibrate, report.

Every command is one process with no shared state. Numeric output is printed
one metric per line at six significant digits; bundles are written atomically
and exit status 0 means a complete manifest landed on disk.
"""

import argparse
import json
import sys

from .config import ConfigError, OUTPUT_DIR_ENV, build_datasets, build_train_config, \
    load_config, model_widths
from .metrics import binned_ece, report_from_dict
from .mlp import checkpoint_text, init_mlp, load_checkpoint
from .reporting import (CHECKPOINT_JSON, bundle_texts, fmt_sig, run_result_doc,
                        write_bundle)
from .trainer import (TrainingDiverged, evaluate_model, fit_temperature,
                      records_for, train_with_pruning)


def _metric_line(name, value):
    if value is None:
        return f"{name} undefined"
    if isinstance(value, float):
        return f"{name} {fmt_sig(value)}"
    return f"{name} {value}"


def _print_report(report):
    lines = [_metric_line("ece", report.ece)]
    for s in report.subsets:
        tag = f"{s.delta:g}"
        lines.append(_metric_line(f"ece_s{tag}", s.ece))
        lines.append(_metric_line(f"frac_s{tag}_pct", s.fraction_pct))
    lines.append(_metric_line("test_error_pct", report.test_error_pct))
    lines.append(_metric_line("auroc", report.auroc))
    return lines


def cmd_train(args):
    cfg = load_config(args.config, overrides=args.set or ())
    train, val, test = build_datasets(cfg)
    widths = model_widths(cfg, train.x.shape[1], train.n_classes)
    train_config = build_train_config(cfg)
    params = init_mlp(widths, train_config.seed)
    result = train_with_pruning(train, val, test, params, train_config)
    doc = run_result_doc(result, cfg)
    files = bundle_texts(result.report, run_doc=doc)
    write_bundle(cfg["output_dir"], files,
                 extra_files={CHECKPOINT_JSON: checkpoint_text(result.params)})
    for line in _print_report(result.report):
        print(line)
    print(_metric_line("sample_updates", result.total_sample_updates))
    print(_metric_line("sample_updates_full",
                       train_config.max_epochs * len(train)))
    print(_metric_line("output_dir", cfg["output_dir"]))
    return 0


def _load_checkpoint_for(cfg, checkpoint_path, test):
    params = load_checkpoint(checkpoint_path)
    if params.widths[0] != test.x.shape[1]:
        raise ValueError(
            f"checkpoint expects {params.widths[0]} features, dataset has "
            f"{test.x.shape[1]}")
    if params.n_classes != test.n_classes:
        raise ValueError(
            f"checkpoint predicts {params.n_classes} classes, dataset declares "
            f"{test.n_classes}")
    return params


def cmd_evaluate(args):
    cfg = load_config(args.config, overrides=args.set or ())
    _, _, test = build_datasets(cfg)
    params = _load_checkpoint_for(cfg, args.checkpoint, test)
    bins = args.bins if args.bins is not None else cfg["eval"]["bins"]
    deltas = args.delta if args.delta is not None else cfg["eval"]["deltas"]
    report = evaluate_model(params, test, bins, deltas)
    write_bundle(args.out, bundle_texts(report))
    for line in _print_report(report):
        print(line)
    return 0


def cmd_calibrate(args):
    cfg = load_config(args.config, overrides=args.set or ())
    _, val, test = build_datasets(cfg)
    params = _load_checkpoint_for(cfg, args.checkpoint, test)
    temperature = fit_temperature(params, val)
    _, ece_before = binned_ece(records_for(params, test), cfg["eval"]["bins"])
    _, ece_after = binned_ece(records_for(params, test, temperature=temperature),
                              cfg["eval"]["bins"])
    print(_metric_line("temperature", temperature))
    print(_metric_line("ece_before", ece_before))
    print(_metric_line("ece_after", ece_after))
    return 0


def cmd_report(args):
    with open(args.run) as fh:
        doc = json.load(fh)
    report = report_from_dict(doc["report"])
    write_bundle(args.out, bundle_texts(report))
    print(_metric_line("output_dir", args.out))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="calprune",
        description="Calibration-aware training with dynamic data pruning.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model end-to-end from a config file")
    train.add_argument("--config", required=True, help="JSON config path")
    train.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config value (beats the file and "
                            f"the {OUTPUT_DIR_ENV} env var)")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("evaluate", help="evaluate a checkpoint on the test set")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--out", required=True, help="bundle output directory")
    evaluate.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    evaluate.add_argument("--bins", type=int, default=None)
    evaluate.add_argument("--delta", type=float, action="append", default=None,
                          help="high-confidence threshold (repeatable)")
    evaluate.set_defaults(func=cmd_evaluate)

    calibrate = sub.add_parser("calibrate",
                               help="fit a softmax temperature on the validation split")
    calibrate.add_argument("--config", required=True)
    calibrate.add_argument("--checkpoint", required=True)
    calibrate.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    calibrate.set_defaults(func=cmd_calibrate)

    report = sub.add_parser("report", help="regenerate CSV/SVG artifacts from a run JSON")
    report.add_argument("--run", required=True, help="path to run.json")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
