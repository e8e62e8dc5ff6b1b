"""Command-line entry point: ``elstmd {ingest,synth,train,eval,curve,sweep,embed}``.

Exit codes: 0 success, 2 usage, 3 parse, 4 shape, 5 divergence,
6 undefined metric, 7 bad configuration.
"""
import argparse
import logging
import sys
from pathlib import Path

from . import experiment
from .config import load_config, parse_dims
from .errors import ElstmdError

log = logging.getLogger("elstmd")

COMMANDS = ("ingest", "synth", "train", "eval", "curve", "sweep", "embed")


def _common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--dataset", help="edge-list file or snapshot directory")
    p.add_argument("--snapshots", type=int, dest="num_snapshots")
    p.add_argument("--horizon", type=int, help="transient-link lookahead (0 disables filtering)")
    p.add_argument("--window-len", type=int, dest="window_len")
    p.add_argument("--train-count", type=int, dest="train_count")
    p.add_argument("--undirected", action="store_const", const=True, default=None)
    p.add_argument("--format", dest="fmt", choices=("auto", "csv", "whitespace"))
    p.add_argument("--preset")
    p.add_argument("--encoder", dest="encoder_dims", type=parse_dims, help='widths, e.g. "128" or "512,256"')
    p.add_argument("--lstm", dest="lstm_dims", type=parse_dims, help='widths, e.g. "256|256"')
    p.add_argument("--decoder", dest="decoder_dims", type=parse_dims, help="widths, last must equal n")
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--stateful-lstm", dest="stateful_lstm", action="store_const", const=True, default=None)
    p.add_argument("--clip", action="store_const", const=True, default=None, help="clip gradients at global norm 5")
    p.add_argument("--metric-samples", type=int, dest="metric_samples")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def _synth_flags(p):
    g = p.add_argument_group("synthetic network")
    g.add_argument("--nodes", type=int)
    g.add_argument("--period", type=int)
    g.add_argument("--length", type=int, help="number of snapshots T")
    g.add_argument("--density", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--drift-every", type=int, dest="drift_every")
    g.add_argument("--drift-rate", type=float, dest="drift_rate")
    g.add_argument("--synth-seed", type=int, dest="synth_seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="elstmd", description="Encoder-LSTM-decoder dynamic link prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "edge list -> snapshot directory",
        "synth": "write a synthetic periodic network as a snapshot directory",
        "train": "train a model and write checkpoint, history and manifest",
        "eval": "per-window metrics with first20/all aggregates",
        "curve": "metrics and structural properties as functions of delta",
        "sweep": "train/evaluate over a grid of one parameter",
        "embed": "export node embeddings for the last test window",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        _synth_flags(p)
        if name in ("eval", "curve", "embed"):
            p.add_argument("--checkpoint", help="checkpoint directory (default OUT_DIR/checkpoint)")
        if name == "embed":
            p.add_argument("--output", help="CSV path (default OUT_DIR/embedding.csv)")
        if name == "sweep":
            p.add_argument("--param", required=True, choices=experiment.SWEEP_PARAMS)
            p.add_argument("--values", required=True, help='comma-separated grid, e.g. "5,10,15"')
    return parser


_SYNTH_ARGS = {"nodes": "n", "period": "period", "length": "T", "density": "density", "noise": "noise",
               "drift_every": "drift_every", "drift_rate": "drift_rate"}
_CONFIG_ARGS = ("dataset", "num_snapshots", "horizon", "window_len", "train_count", "undirected", "fmt",
                "preset", "encoder_dims", "lstm_dims", "decoder_dims", "beta", "alpha", "lr", "epochs",
                "seed", "optimizer", "stateful_lstm", "clip", "metric_samples", "threshold", "synth_seed")


def config_from_args(args):
    overrides = {k: getattr(args, k) for k in _CONFIG_ARGS}
    synth = {v: getattr(args, k) for k, v in _SYNTH_ARGS.items() if getattr(args, k) is not None}
    if synth or args.command == "synth":
        overrides["synthetic"] = synth
    return load_config(args.config, overrides)


def _parse_values(text):
    vals = []
    for tok in text.replace("|", ",").split(","):
        tok = tok.strip()
        if tok:
            vals.append(int(tok) if tok.lstrip("-").isdigit() else float(tok))
    return vals


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = config_from_args(args)
    out = Path(args.out_dir or "runs")
    if args.command == "ingest":
        seq = experiment.run_ingest(cfg, out)
        print(f"wrote {len(seq)} snapshots of {seq.node_count} nodes to {out}")
    elif args.command == "synth":
        seq = experiment.run_synth(cfg, out)
        print(f"wrote {len(seq)} synthetic snapshots of {seq.node_count} nodes to {out}")
    elif args.command == "train":
        _, history, manifest = experiment.run_train(cfg, out)
        print(f"trained {len(history)} epochs, final L_total={history.total_loss[-1]:.6g}, "
              f"checkpoint {manifest['checkpoint_digest'][:12]}")
    else:
        ckpt = Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / "checkpoint"
        if args.command == "eval":
            _, aggs = experiment.run_eval(cfg, ckpt, out)
            for a in aggs:
                print(a["row"], " ".join(f"{k}={a[k]:.4f}" for k in ("auc", "gmauc", "error_rate")
                                         if a[k] is not None))
        elif args.command == "curve":
            reports, _ = experiment.run_curve(cfg, ckpt, out)
            print(f"wrote {len(reports)} rows to {out / 'curve.csv'} and {out / 'structure.csv'}")
        elif args.command == "embed":
            dest = Path(args.output) if args.output else out / "embedding.csv"
            H = experiment.run_embed(cfg, ckpt, dest)
            print(f"wrote {H.shape[0]}x{H.shape[1]} embedding to {dest}")
        elif args.command == "sweep":
            rows = experiment.run_sweep(cfg, args.param, _parse_values(args.values), out)
            print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


def main(argv=None):
    try:
        return run(argv)
    except ElstmdError as exc:
        print(f"elstmd: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
