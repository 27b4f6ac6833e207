"""Batch command-line front end.

Subcommands: synth, extract, train, eval, associate, occlude, stats.
Exit codes: 0 success, 2 input format error, 3 configuration error,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _add_synth(sub) -> None:
    p = sub.add_parser("synth", help="generate a labeled synthetic capture")
    p.add_argument("--preset", default="app-mix", help="app-mix | association | sni-only")
    p.add_argument("--spec-json", type=Path, help="JSON corpus config (overrides preset flags)")
    p.add_argument("--apps", type=int, default=10)
    p.add_argument("--sessions", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10, help="intended CV folds (sizes the corpus)")
    p.add_argument("--class-correlated-ips", action="store_true")
    p.add_argument("--gmt-bias", action="store_true")
    p.add_argument("--out-pcap", type=Path, required=True)
    p.add_argument("--out-labels", type=Path, required=True)


def _cmd_synth(args) -> int:
    from .synth import PRESETS, generate_corpus, spec_from_file

    if args.spec_json is not None:
        spec = spec_from_file(args.spec_json)
    else:
        kwargs = dict(n_apps=args.apps, sessions_per_app=args.sessions, seed=args.seed, intended_folds=args.folds)
        if args.preset == "app-mix":
            kwargs.update(class_correlated_ips=args.class_correlated_ips, gmt_bias=args.gmt_bias)
        spec = PRESETS[args.preset](**kwargs)
    report = generate_corpus(spec, args.out_pcap, args.out_labels)
    print(f"wrote {report.n_packets} packets / {report.n_flows} flows to {args.out_pcap}")
    print(f"labels: {json.dumps(report.labels, sort_keys=True)}")
    return EXIT_OK


def _add_extract(sub) -> None:
    p = sub.add_parser("extract", help="pcap -> flow store + encoded dataset")
    p.add_argument("--pcap", type=Path, required=True)
    p.add_argument("--labels", type=Path, help="optional flow_index/label/true_label sidecar")
    p.add_argument("--mode", default="l234", help="strip mode: all | l23 | l234")
    p.add_argument("--udp-timeout", type=float, default=30.0)
    p.add_argument("--out-dataset", type=Path, required=True)
    p.add_argument("--out-flows", type=Path, help="optional binary flow store")


def _cmd_extract(args) -> int:
    from .encoding import StripMode, save_dataset
    from .flows import IngestConfig, save_flow_store
    from .pipeline import extract

    mode = StripMode.parse(args.mode)
    result = extract(
        args.pcap,
        args.labels,
        mode,
        ingest_cfg=IngestConfig(udp_inactivity_timeout=args.udp_timeout),
    )
    ds = result.dataset
    if args.labels is None:
        print("warning: no label sidecar; dataset rows are unlabeled", file=sys.stderr)
    save_dataset(ds, args.out_dataset)
    if args.out_flows is not None:
        save_flow_store(result.flows, args.out_flows)
    n = len(ds)
    print(
        f"{n} flows ({result.ingest_stats.parsed_packets} packets, "
        f"{result.ingest_stats.dropped_packets} dropped, {result.truncated_tail} truncated tail)"
    )
    if n:
        print(
            f"protocol mix: udp {len(ds.slice_udp()) / n:.1%}, "
            f"https {len(ds.slice_https()) / n:.1%}, http {len(ds.slice_http()) / n:.1%}"
        )
    return EXIT_OK


def _train_flags(p, default_epochs: int) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.001)


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="cross-validate and fit the single-flow CNN")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--folds", type=int, default=10, help="0/1 = plain fit without CV")
    p.add_argument("--true-labels", action="store_true", help="train on fine true labels")
    p.add_argument("--no-rebalance", action="store_true")
    _train_flags(p, default_epochs=30)
    p.add_argument("--out-checkpoint", type=Path)
    p.add_argument("--out-report", type=Path)


def _labeled(ds):
    keep = np.flatnonzero(ds.y >= 0)
    return ds.subset(keep) if len(keep) != len(ds) else ds


def _cmd_train(args) -> int:
    from .classifier import train_app_classifier
    from .encoding import load_dataset
    from .pipeline import dataset_with_true_labels

    ds = _labeled(load_dataset(args.dataset))
    if args.true_labels:
        ds = _labeled(dataset_with_true_labels(ds))
    model, report = train_app_classifier(
        ds,
        n_folds=max(args.folds, 1),
        seed=args.seed,
        final_model=args.out_checkpoint is not None,
        rebalance_first=not args.no_rebalance,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs),
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
    )
    if args.out_checkpoint is not None and model is not None:
        model.save(args.out_checkpoint)
    if args.out_report is not None:
        args.out_report.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        if report.fold_reports:
            report.fold_reports[0].confusion_csv(args.out_report.with_suffix(".confusion.csv"))
    print(f"mean accuracy over {len(report.fold_reports)} fold(s): {report.mean_accuracy:.4f}")
    return EXIT_OK


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--true-labels", action="store_true")
    p.add_argument("--out-report", type=Path)


def _cmd_eval(args) -> int:
    from .classifier import CnnAppClassifier
    from .encoding import load_dataset
    from .metrics import MetricsReport
    from .pipeline import dataset_with_true_labels

    ds = _labeled(load_dataset(args.dataset))
    if args.true_labels:
        ds = _labeled(dataset_with_true_labels(ds))
    clf = CnnAppClassifier.load(args.checkpoint)
    if clf.n_features_in_ != ds.X.shape[1]:
        print(f"error: checkpoint expects {clf.n_features_in_} features, dataset has {ds.X.shape[1]}", file=sys.stderr)
        return EXIT_CONFIG
    y_pred = clf.predict(ds.X)
    slices = {"udp": ds.slice_udp(), "http": ds.slice_http(), "https": ds.slice_https()}
    report = MetricsReport.from_predictions(ds.y, y_pred, ds.class_names, slices=slices)
    if args.out_report is not None:
        report.to_json(args.out_report)
    print(report.to_text())
    return EXIT_OK


def _add_associate(sub) -> None:
    p = sub.add_parser("associate", help="train/evaluate the joint model over flow windows")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--cnn-checkpoint", type=Path, required=True, help="pretrained true-label CNN")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--lstm-units", type=int, default=50)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--feed-order", default="reverse", choices=("reverse", "forward"))
    p.add_argument("--holdout", type=float, default=0.25)
    p.add_argument("--scenario", choices=("R2", "R3", "R23"), help="mixed-traffic evaluation")
    p.add_argument("--augment-train", action="store_true", help="also train on mixed windows (+T)")
    _train_flags(p, default_epochs=50)
    p.set_defaults(batch_size=32)
    p.add_argument("--out-checkpoint", type=Path)
    p.add_argument("--out-report", type=Path)
    p.add_argument("--out-windows", type=Path)


def _cmd_associate(args) -> int:
    from .association import (
        FlowAssociationClassifier,
        augment_mixed,
        build_windows,
        evaluate_joint,
        save_windows,
    )
    from .classifier import CnnAppClassifier
    from .encoding import load_dataset

    ds = _labeled(load_dataset(args.dataset))
    cnn = CnnAppClassifier.load(args.cnn_checkpoint)
    windows = build_windows(ds, k=args.k, time_threshold=args.threshold)
    if args.out_windows is not None:
        save_windows(windows, args.out_windows)

    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(windows))
    n_test = max(1, int(len(windows) * args.holdout))
    test_ws = windows.subset(order[:n_test])
    train_ws = windows.subset(order[n_test:])
    if args.scenario is not None:
        test_ws = augment_mixed(test_ws, args.scenario, seed=args.seed + 1)
        if args.augment_train:
            train_ws = augment_mixed(train_ws, args.scenario, seed=args.seed + 2)

    clf = FlowAssociationClassifier(
        cnn=cnn,
        lstm_units=args.lstm_units,
        lstm_dropout=args.dropout,
        feed_order=args.feed_order,
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        patience=min(args.patience, args.epochs),
        batch_size=args.batch_size,
        random_state=args.seed,
    )
    clf.fit(train_ws.packed(), train_ws.y)
    report = evaluate_joint(clf, test_ws)
    if args.out_checkpoint is not None:
        clf.save(args.out_checkpoint)
    if args.out_report is not None:
        report.to_json(args.out_report)
    amb = report.slices.get("ambiguous")
    extra = f", ambiguous {amb.accuracy:.4f}" if amb else ""
    print(f"joint accuracy {report.accuracy:.4f}{extra} on {len(test_ws)} windows")
    return EXIT_OK


def _add_occlude(sub) -> None:
    p = sub.add_parser("occlude", help="field-occlusion accuracy deltas")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--flows", type=Path, required=True, help="flow store from extract")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--slice", default="https", choices=("https", "http", "udp", "all"))
    p.add_argument("--selectors", nargs="*", help="row names; default = full field table")
    p.add_argument("--out-report", type=Path)


def _cmd_occlude(args) -> int:
    from .classifier import CnnAppClassifier
    from .encoding import load_dataset
    from .flows import load_flow_store
    from .occlusion import OcclusionSpec, run_occlusion
    from .pipeline import field_maps
    from .tls import DEFAULT_OCCLUSION_ROWS

    ds = _labeled(load_dataset(args.dataset))
    flows = load_flow_store(args.flows)
    clf = CnnAppClassifier.load(args.checkpoint)
    maps_all = field_maps(flows, ds.mode)
    maps = [maps_all[i] for i in ds.flow_index]

    rows = list(DEFAULT_OCCLUSION_ROWS)
    if args.selectors:
        chosen = {name.lower() for name in args.selectors}
        rows = [r for r in rows if r[0].lower() in chosen]
        missing = chosen - {r[0].lower() for r in rows}
        if missing:
            print(f"error: unknown selector rows {sorted(missing)}", file=sys.stderr)
            return EXIT_CONFIG
    spec = OcclusionSpec(rows=rows, slice_name=args.slice)
    report = run_occlusion(clf, ds, maps, spec)
    if args.out_report is not None:
        report.to_json(args.out_report)
        args.out_report.with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")
    print(report.to_text())
    return EXIT_OK


def _add_stats(sub) -> None:
    p = sub.add_parser("stats", help="distribution summary of a capture")
    p.add_argument("--pcap", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out-json", type=Path)


def _cmd_stats(args) -> int:
    from .synth import corpus_stats

    stats = corpus_stats(args.pcap, args.labels)
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out_json is not None:
        args.out_json.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "associate": _cmd_associate,
    "occlude": _cmd_occlude,
    "stats": _cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="appident", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_extract(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_associate(sub)
    _add_occlude(sub)
    _add_stats(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .errors import FormatError
    from .nn import TrainingDiverged

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
