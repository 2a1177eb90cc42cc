"""Command-line entry point: ``kanmcp {synth,train,eval,viz,pareto}``.

Failures print a single ``ErrorClass: message`` line to stderr and exit with
the class's code (see :mod:`kanmcp.errors`).
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, load_config, parse_bool
from .errors import IoError, KanMcpError, UsageError
from .kan import edge_attribution
from .model import evaluate, fused_codes, load_checkpoint, new_state, save_checkpoint, train_epoch
from .viz import edge_function_svg, plot_loss_curves, render_dot, render_svg

log = logging.getLogger("kanmcp")

PARETO_HEADER = ["step", "group", "cos_beta", "alpha_m", "lambda", "conflict"]
VIZ_FORMATS = (".svg", ".dot", ".png")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging(timestamps, logfile=None):
    fmt = "%(asctime)s %(levelname)s %(message)s" if timestamps else "%(levelname)s %(message)s"
    _close_logging()
    log.setLevel(logging.INFO)
    log.propagate = False
    handlers = [logging.StreamHandler(sys.stderr)]
    if logfile is not None:
        handlers.append(logging.FileHandler(logfile, mode="w", encoding="utf-8"))
    for h in handlers:
        h.setFormatter(logging.Formatter(fmt))
        log.addHandler(h)


def _close_logging():
    for h in list(log.handlers):
        h.close()
        log.removeHandler(h)


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc.strerror}") from None
    return Path(path)


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def report_record(split, n, rep, unimodal):
    rec = {"split": split, "n": n, **rep.as_dict()}
    for m in data_mod.MODALITIES:
        rec[f"uni_mae_{m}"] = unimodal[m]
    return rec


def format_keyvalue(rec):
    lines = []
    for k, v in rec.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_report(path, rec):
    path = Path(path)
    _write_text(path, format_keyvalue(rec))
    _write_text(path.with_suffix(".json"), json.dumps(rec, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = data_mod.synth_spec_from_file(args.spec)
    ds = data_mod.synth_generate(spec)
    out = data_mod.save_features(ds, args.out)
    snr = ",".join(f"{m}:{v:g}" for m, v in spec.snrs.items())
    print(
        f"synth n={spec.n} train={len(ds.train)} val={len(ds.val)} test={len(ds.test)} "
        f"label_fn={spec.label_fn} snr={snr} out={out}"
    )
    return 0


def cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.mcpareto is not None:
        overrides["mcpareto"] = parse_bool("mcpareto", args.mcpareto)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = cfg.with_overrides(**overrides)
    data_dir = args.data or cfg.data
    if not data_dir:
        raise UsageError("no dataset: pass --data or set data= in the config")
    out = _mkdir(args.out)
    _setup_logging(args.timestamps, out / "train.log")

    ds = data_mod.load_features(data_dir)
    state = new_state(cfg.hyper(ds.dims), stats=ds.stats)
    log.info("train n=%d val=%d test=%d mcpareto=%s", len(ds.train), len(ds.val), len(ds.test), cfg.mcpareto)

    pareto_rows = []

    def on_step(step, decisions):
        for d in decisions:
            pareto_rows.append([step, d.group, repr(d.cos_beta), repr(d.alpha_m), repr(d.lam), int(d.conflict)])

    metric_rows = []
    for _ in range(cfg.epochs):
        train_epoch(state, ds.train, cfg.batch_size, cfg.seed, cfg.mcpareto, on_step)
        rep, uni = evaluate(state.model, ds.val)
        metric_rows.append(report_record("val", len(ds.val), rep, uni) | {"epoch": state.epoch})
        log.info(
            "epoch %d loss_multi=%.5f val_mae=%.5f val_acc2=%.2f",
            state.epoch,
            state.history["multi"][-1],
            rep.mae,
            rep.acc2,
        )

    save_checkpoint(state, out / "checkpoint.kmcp")
    _write_text(out / "config.txt", "\n".join(cfg.to_lines()) + "\n")
    with open(out / "pareto_log.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARETO_HEADER)
        w.writerows(pareto_rows)
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "multi", "t", "a", "v"])
        for i in range(state.epoch):
            w.writerow([i + 1] + [repr(state.history[k][i]) for k in ("multi", "t", "a", "v")])
    keys = ["epoch"] + [k for k in metric_rows[0] if k != "epoch"]
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in metric_rows:
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys])
    rep, uni = evaluate(state.model, ds.test)
    write_report(out / "test_report.txt", report_record("test", len(ds.test), rep, uni))
    plot_loss_curves(state.history, out / "loss_curves.svg")
    if not args.no_figures:
        from .plotting import loss_curves_png

        loss_curves_png(state.history, out / "loss_curves.png")
    log.info("test mae=%.5f corr=%.5f acc2=%.2f f1=%.2f", rep.mae, rep.corr, rep.acc2, rep.f1)
    print(f"train epochs={cfg.epochs} steps={state.step} test_mae={rep.mae!r} out={out}")
    return 0


def _load_for_checkpoint(args):
    state = load_checkpoint(args.checkpoint)
    ds = data_mod.load_features(args.data, stats=state.stats or None)
    if ds.dims != state.model.hyper.dims:
        raise UsageError(f"dataset dims {ds.dims} do not match checkpoint dims {state.model.hyper.dims}")
    return state, ds


def cmd_eval(args):
    state, ds = _load_for_checkpoint(args)
    batch = ds.split(args.split)
    rep, uni = evaluate(state.model, batch, workers=args.workers)
    rec = report_record(args.split, len(batch), rep, uni)
    report_path = Path(args.report) if args.report else Path(args.checkpoint).with_name(f"eval_{args.split}.txt")
    write_report(report_path, rec)
    sys.stdout.write(format_keyvalue(rec))
    return 0


def cmd_viz(args):
    out = Path(args.out)
    if out.suffix.lower() not in VIZ_FORMATS:
        raise UsageError(f"unsupported output {out.suffix or out.name!r}; supported formats: {', '.join(VIZ_FORMATS)}")
    state, ds = _load_for_checkpoint(args)
    probe = fused_codes(state.model, ds.split(args.split))
    net = state.model.head
    attrs = edge_attribution(net, probe)
    if out.parent and not out.parent.exists():
        _mkdir(out.parent)
    suffix = out.suffix.lower()
    if suffix == ".svg":
        render_svg(net, attrs, out=out)
    elif suffix == ".dot":
        render_dot(net, attrs, out=out)
    else:
        from .plotting import kan_diagram_png

        kan_diagram_png(net, attrs, out)
    if args.edge_functions:
        edir = _mkdir(args.edge_functions)
        for layer in net.layers:
            for q in range(layer.n_out):
                for p in range(layer.n_in):
                    edge_function_svg(layer, q, p, out=edir / f"{layer.name}_q{q}_p{p}.svg")
    first = attrs[0]
    size = first.shape[1] // len(data_mod.MODALITIES)
    blocks = {m: float(first[:, i * size : (i + 1) * size].mean()) for i, m in enumerate(data_mod.MODALITIES)}
    print("viz " + " ".join(f"block_{m}={v!r}" for m, v in blocks.items()) + f" out={out}")
    return 0


def cmd_pareto(args):
    """Summarise a Pareto decision log per parameter group."""
    path = Path(args.log)
    if not path.exists():
        raise data_mod.MissingFile(f"{path} not found")
    groups = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PARETO_HEADER:
            raise data_mod.ParseError(path, 1, 1, f"expected header {','.join(PARETO_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            try:
                _, group, cos, alpha, lam, conflict = row
                groups.setdefault(group, []).append((float(cos), float(alpha), float(lam), int(conflict)))
            except ValueError:
                raise data_mod.ParseError(path, lineno, 1, "malformed row") from None
    print("group,steps,conflict_rate,mean_cos_beta,mean_alpha_m_conflict,mean_lambda_conflict")
    for group in sorted(groups):
        arr = np.array(groups[group])
        conf = arr[:, 3] == 1
        mean_alpha = arr[conf, 1].mean() if conf.any() else float("nan")
        mean_lam = arr[conf, 2].mean() if conf.any() else float("nan")
        print(f"{group},{len(arr)},{conf.mean():.6f},{arr[:, 0].mean():.6f},{mean_alpha:.6f},{mean_lam:.6f}")
    return 0


def build_parser():
    p = _Parser(prog="kanmcp", description="KAN fusion with information-bottleneck encoders and Pareto gradient balancing")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic multimodal dataset")
    s.add_argument("--spec", required=True, help="key=value synthetic spec file")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value run config (defaults if omitted)")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", required=True, help="output run directory")
    t.add_argument("--mcpareto", choices=["on", "off"], help="override gradient balancing")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--timestamps", action="store_true", help="wall-clock timestamps in logs")
    t.add_argument("--no-figures", action="store_true", help="skip matplotlib PNG output")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--report", help="report path (default: eval_<split>.txt next to the checkpoint)")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="render the KAN head with attribution-coded edges")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True, help="output file (.svg, .dot or .png)")
    v.add_argument("--split", choices=["train", "val", "test"], default="val", help="probe split")
    v.add_argument("--edge-functions", help="also export one sampled-phi SVG per edge into this directory")
    v.set_defaults(func=cmd_viz)

    d = sub.add_parser("pareto", help="summarise a Pareto decision log")
    d.add_argument("--log", required=True)
    d.set_defaults(func=cmd_pareto)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except KanMcpError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        _close_logging()


if __name__ == "__main__":
    sys.exit(main())
