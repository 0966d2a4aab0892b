"""``tcn`` command line: synth, train, predict, eval, sweep, rf, timeline."""
import argparse
import csv
import io as _stdio
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import io, models, synth, timeline
from .errors import ConfigError, DataError, TCNError
from .metrics import evaluate
from .modelfile import load_model, save_model

PROG = "tcn"


def _say(msg):
    print(msg, file=sys.stderr)


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _taus(text):
    try:
        return io.parse_taus(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --------------------------------------------------------------------------
# synth


def cmd_synth(args):
    base = synth.CompositionSpec(
        num_train=args.num_train, num_test=args.num_test, seq_len=args.seq_len, seed=args.seed
    )
    if args.spec == "shift":
        data = synth.gen_shift(synth.ShiftSpec(base, args.shift))
    else:
        if args.shift:
            raise ConfigError("--shift only applies to --spec shift")
        data = synth.gen_composition(base)
    manifest = io.write_dataset(
        args.out,
        data.train,
        data.test,
        data.class_names,
        binary=args.binary,
        extra={
            "generator": {"spec": args.spec, "seed": args.seed, "shift": data.shift},
            "transitions": data.transitions,
        },
    )
    print(f"wrote {len(data.train)} train + {len(data.test)} test sequences to {manifest.root}")
    return 0


# --------------------------------------------------------------------------
# train / predict


def _load_run_config(args):
    config = io.read_config(args.config)
    overrides = {k: getattr(args, k) for k in ("epochs", "seed") if getattr(args, k, None) is not None}
    return replace(config, **overrides) if overrides else config


def _fit(config, manifest, progress=None):
    data = io.load_split(manifest, "train")
    if not data:
        raise DataError(f"{manifest.root} has no training sequences")
    spec = config.model_spec(manifest.num_classes, manifest.feature_dim)
    model = models.build(spec, seed=config.seed)
    trained = models.train(model, [(f, y) for _, f, y in data], config.train_config(), progress)
    meta = dict(trained.metadata)
    meta["run_config"] = io.format_config(config)
    meta["class_names"] = list(manifest.class_names)
    return replace(trained, metadata=meta)


def cmd_train(args):
    config = _load_run_config(args)
    manifest = io.read_manifest(args.data)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".loss.csv")
    started = time.perf_counter()

    def progress(epoch, loss):
        if args.verbose:
            _say(f"epoch {epoch + 1}/{config.epochs} loss {loss:.5f}")

    model = _fit(config, manifest, progress)
    save_model(model, args.out)
    curve = model.metadata["loss_curve"]
    log_path.write_text("epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(curve)))
    _say(f"trained {model.spec.kind} for {config.epochs} epochs in {time.perf_counter() - started:.1f}s")
    print(f"model={args.out} final_loss={curve[-1]:.6f} loss_log={log_path}")
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    manifest = io.read_manifest(args.data)
    data = io.load_split(manifest, args.split)
    if not data:
        raise DataError(f"{args.data} has no {args.split} sequences")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, features, _ in data:
        probs = model.forward(features.astype(model.dtype))
        labels = models.predict_labels(model, features.astype(model.dtype))
        io.write_labels(labels, out / f"{sid}.txt")
        io.write_features(probs, out / f"{sid}.probs.csv", binary=False)
    print(f"wrote predictions for {len(data)} sequences to {out}")
    return 0


# --------------------------------------------------------------------------
# eval


def _truth_sequences(path, split):
    path = Path(path)
    if (path / io.MANIFEST_NAME).exists():
        manifest = io.read_manifest(path)
        return {rec.id: io.read_labels(path / rec.labels) for rec in manifest.split(split)}
    return {p.stem: io.read_labels(p) for p in sorted(path.glob("*.txt"))}


def cmd_eval(args):
    truths = _truth_sequences(args.truth, args.split)
    if not truths:
        raise DataError(f"no ground-truth label files under {args.truth}")
    pred_dir = Path(args.pred)
    ids = sorted(truths)
    missing = [sid for sid in ids if not (pred_dir / f"{sid}.txt").exists()]
    if missing:
        raise DataError(f"{pred_dir} lacks predictions for {len(missing)} sequences, e.g. {missing[0]}")
    preds = [io.read_labels(pred_dir / f"{sid}.txt") for sid in ids]
    prob_files = [pred_dir / f"{sid}.probs.csv" for sid in ids]
    probs = None
    if all(p.exists() for p in prob_files):
        probs = [io.read_features(p) for p in prob_files]
    ignore = () if args.background_id is None else (args.background_id,)
    report = evaluate(preds, [truths[s] for s in ids], probs, args.tau, ignore)
    text = report.to_text()
    sys.stdout.write(text)
    out = Path(args.out) if args.out else pred_dir / "report.json"
    out.write_text(report.to_json() + "\n")
    return 0


# --------------------------------------------------------------------------
# rf


def cmd_rf(args):
    if args.model == "ed":
        print(models.receptive_field_ed(args.d, args.L))
    else:
        print(models.receptive_field_dilated(args.B, args.L))
    return 0


# --------------------------------------------------------------------------
# sweep


def _sweep_one(config, param, value, data_dir, tau):
    """One sweep row; failures are reported in the row rather than raised."""
    row = {"value": value, "rf": "", "f1": "", "accuracy": "", "status": "ok"}
    try:
        config = replace(config, **{param: value})
        manifest = io.read_manifest(data_dir)
        spec = config.model_spec(manifest.num_classes, manifest.feature_dim)
        row["rf"] = spec.receptive_field
        model = _fit(config, manifest)
        test = io.load_split(manifest, "test")
        preds = [models.predict_labels(model, f.astype(model.dtype)) for _, f, _ in test]
        report = evaluate(preds, [y for _, _, y in test], taus=(tau,), ignore_classes=config.ignore_classes)
        row["f1"] = f"{report.f1[tau]:.4f}"
        row["accuracy"] = f"{report.accuracy:.4f}"
    except (TCNError, ValueError, OSError) as exc:
        row["status"] = "error: " + str(exc).replace("\n", " ")
    return row


def _workers(count):
    cap = os.environ.get("TCN_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"TCN_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, count))


def cmd_sweep(args):
    config = _load_run_config(args)
    param = args.param
    tau = args.tau
    jobs = [(config, param, v, args.data, tau) for v in args.values]
    workers = _workers(len(jobs))
    if workers == 1:
        rows = [_sweep_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, *zip(*jobs)))
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([args.param, "rf", f"f1@{tau * 100:g}", "accuracy", "status"])
    for row in rows:
        writer.writerow([row["value"], row["rf"], row["f1"], row["accuracy"], row["status"]])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    failed = sum(row["status"] != "ok" for row in rows)
    if failed:
        _say(f"{failed} of {len(rows)} sweep runs failed")
    return 0


# --------------------------------------------------------------------------
# timeline


def cmd_timeline(args):
    rows = [("truth", io.read_labels(args.truth))]
    for path in args.pred:
        rows.append((Path(path).stem, io.read_labels(path)))
    names = json.loads(Path(args.names).read_text()) if args.names else None
    out = Path(args.out)
    if out.suffix == ".svg":
        out.write_text(timeline.render_svg(rows, names))
    elif out.suffix == ".txt":
        out.write_text(timeline.render_ascii(rows, args.width))
    else:
        raise ConfigError(f"--out must end in .svg or .txt, got {out.name}")
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, description="Temporal conv nets for action segmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", choices=("composition", "shift"), default="composition")
    p.add_argument("--shift", type=int, default=0, help="feature delay in frames (shift spec)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-train", type=int, default=50)
    p.add_argument("--num-test", type=int, default=10)
    p.add_argument("--seq-len", type=int, default=150)
    p.add_argument("--binary", action="store_true", help="write TCNF binary features")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override the config's epochs")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.add_argument("--log", help="loss-curve CSV (default: <out>.loss.csv)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-frame labels and probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tau", type=_taus, default=(0.1, 0.25, 0.5), help="overlap percentages, e.g. 10,25,50")
    p.add_argument("--background-id", type=int)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="JSON report (default: <pred>/report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per value of d, L or B")
    p.add_argument("--param", required=True, choices=("d", "L", "B"))
    p.add_argument("--values", required=True, type=_int_list)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=lambda s: _taus(s)[0], default=0.25, help="overlap percentage (default 25)")
    p.add_argument("--out", help="CSV path (also printed)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rf", help="print a receptive field in frames")
    p.add_argument("--model", required=True, choices=("ed", "dilated"))
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--d", type=int, default=15)
    p.add_argument("--B", type=int, default=1)
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("timeline", help="render truth and predictions as stacked bars")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--out", required=True, help="FILE.svg or FILE.txt")
    p.add_argument("--names", help="JSON list of class names")
    p.add_argument("--width", type=int, default=80, help="columns for text output")
    p.set_defaults(func=cmd_timeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TCNError, ValueError, OSError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        _say(f"{PROG} {args.command}: error: {msg}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
