"""Orchestration: data preparation, train / eval / curve / sweep / embed runs and their files."""
import contextlib
import csv
import hashlib
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np

from ._jit import default_backend
from .config import ExperimentConfig
from .errors import ConfigError, DivergenceError, ElstmdError, ShapeError
from .graph_store import load_sequence, make_windows, split_windows, write_snapshot_dir
from .metrics import MetricsReport, avg_clustering, avg_degree, evaluate_window
from .model import binarize, checkpoint_digest, embed, load_checkpoint, save_checkpoint
from .numeric import SeededRng
from .synth import synth_generate
from .training import predict_windows, train

log = logging.getLogger(__name__)

FIRST_K = 20
AUC_STREAM = 1  # derive() key for per-window AUC sampling

METRIC_COLUMNS = ["auc", "gmauc", "prauc_new", "auc_prev", "error_rate", "er_top_dc", "er_top_ebc"]
COUNT_COLUMNS = ["L_A", "L_R", "N_true", "N_false", "false_negatives"]
REPORT_COLUMNS = ["row", "delta", "t"] + METRIC_COLUMNS + COUNT_COLUMNS + ["reason"]


@contextlib.contextmanager
def stage(name):
    """Prefix any error raised inside with the pipeline stage; the exception type is kept."""
    try:
        yield
    except ElstmdError as exc:
        if exc.args:
            exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _sha256_path(path):
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def _versions():
    import scipy

    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
           "backend": default_backend()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        pass
    return out


def prepare_sequence(cfg):
    """Snapshot sequence for ``cfg`` plus a digest of whatever it was built from."""
    if cfg.dataset is not None:
        with stage("ingest"):
            seq = load_sequence(cfg.dataset, num_snapshots=cfg.num_snapshots, horizon=cfg.horizon,
                                undirected=cfg.undirected, fmt=cfg.fmt)
            digest = _sha256_path(cfg.dataset)
    elif cfg.synthetic is not None:
        seed = cfg.seed if cfg.synth_seed is None else cfg.synth_seed
        with stage("synth"):
            seq = synth_generate(cfg.synthetic, seed)
        digest = hashlib.sha256(np.ascontiguousarray(seq.adjacency).tobytes()).hexdigest()
    else:
        raise ConfigError("no dataset given (use --dataset or a [synthetic] section)")
    return seq, digest


def prepare_data(cfg):
    seq, digest = prepare_sequence(cfg)
    with stage("windows"):
        windows = make_windows(seq, cfg.window_len)
        split = split_windows(windows, cfg.train_count)
    return seq, split, digest


def run_ingest(cfg, out_dir):
    seq, digest = prepare_sequence(cfg)
    out = Path(out_dir)
    write_snapshot_dir(seq, out, extra={"source": str(cfg.dataset), "input_digest": digest,
                                        "num_snapshots": cfg.num_snapshots})
    return seq


def run_synth(cfg, out_dir):
    if cfg.synthetic is None:
        raise ConfigError("synth needs a synthetic spec")
    seq, digest = prepare_sequence(cfg.replace(dataset=None))
    seed = cfg.seed if cfg.synth_seed is None else cfg.synth_seed
    write_snapshot_dir(seq, out_dir, extra={"synthetic": cfg.synthetic.to_dict(), "seed": seed,
                                            "input_digest": digest})
    return seq


def run_train(cfg, out_dir):
    """Train and write ``checkpoint/``, ``history.csv`` and the ``run.json`` manifest."""
    out = Path(out_dir)
    seq, split, digest = prepare_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    mc = cfg.model_config(seq.node_count)
    t0 = time.perf_counter()
    with stage("train"):
        try:
            params, history = train(split, mc, cfg.loss_config(), cfg.epochs, seed=cfg.seed,
                                    optimizer=cfg.optimizer, stateful=cfg.stateful_lstm, clip=cfg.clip)
        except DivergenceError as exc:
            if exc.history is not None:
                exc.history.to_csv(out / "history.csv")
            raise
    seconds = time.perf_counter() - t0
    ckpt = save_checkpoint(out / "checkpoint", params, mc, seed=cfg.seed, epoch=cfg.epochs,
                           extra={"optimizer": cfg.optimizer, "stateful_lstm": cfg.stateful_lstm})
    history.to_csv(out / "history.csv")
    manifest = {
        "command": "train",
        "config": cfg.to_dict(),
        "model": mc.to_dict(),
        "seed": cfg.seed,
        "input_digest": digest,
        "checkpoint_digest": checkpoint_digest(ckpt),
        "node_count": seq.node_count,
        "snapshots": len(seq),
        "train_windows": len(split.train),
        "test_windows": len(split.test),
        "final_loss": history.total_loss[-1],
        "train_seconds": seconds,
        "versions": _versions(),
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return params, history, manifest


def _load_for(cfg, checkpoint, seq):
    with stage("checkpoint"):
        params, mc, _ = load_checkpoint(checkpoint)
    if mc.n != seq.node_count:
        raise ShapeError(f"checkpoint is for n={mc.n} but the dataset has {seq.node_count} nodes")
    if mc.window_len != cfg.window_len:
        raise ShapeError(f"checkpoint was trained with N={mc.window_len}, config says N={cfg.window_len}")
    return params, mc


def predict_test(cfg, params, split):
    if not split.test:
        raise ShapeError("test set is empty")
    return predict_windows(params, split.test, stateful=cfg.stateful_lstm, warmup=split.train)


def evaluate_test(cfg, params, split):
    """One MetricsReport per test window, delta = 1 .. |test|."""
    scores = predict_test(cfg, params, split)
    rng = SeededRng(cfg.seed)
    reports = []
    for delta, (s, w) in enumerate(zip(scores, split.test), start=1):
        reports.append(evaluate_window(
            s, w.prev, w.target, delta=delta, t=w.t, samples=cfg.metric_samples,
            rng=rng.derive(AUC_STREAM, w.t), threshold=cfg.threshold, fraction=cfg.top_fraction))
    return reports, scores


def aggregate(reports, label):
    """Mean of every column over the windows where it is defined. Empty if none is."""
    row = {"row": label, "delta": "", "t": ""}
    notes = []
    for col in METRIC_COLUMNS:
        vals = [getattr(r, col) for r in reports if getattr(r, col) is not None]
        row[col] = float(np.mean(vals)) if vals else None
        missing = len(reports) - len(vals)
        if missing:
            notes.append(f"{col}: {missing} of {len(reports)} windows undefined")
    for col in COUNT_COLUMNS:
        row[col] = float(np.mean([getattr(r, col) for r in reports]))
    row["reason"] = "; ".join(notes)
    return row


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_reports(path, reports, aggregates=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            d = r.row()
            d["row"] = "window"
            w.writerow([_fmt(d.get(c)) for c in REPORT_COLUMNS])
        for a in aggregates:
            w.writerow([_fmt(a.get(c)) for c in REPORT_COLUMNS])


def read_reports(path):
    """Parse a metrics CSV back into dict rows (empty cells -> None)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if k in ("row", "reason"):
                    parsed[k] = v
                elif v == "":
                    parsed[k] = None
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out


def run_eval(cfg, checkpoint, out_dir):
    """Per-window metrics plus "first20" and "all" aggregate rows in ``metrics.csv``."""
    out = Path(out_dir)
    seq, split, _ = prepare_data(cfg)
    params, _ = _load_for(cfg, checkpoint, seq)
    out.mkdir(parents=True, exist_ok=True)
    with stage("eval"):
        reports, _ = evaluate_test(cfg, params, split)
    aggs = [aggregate(reports[:FIRST_K], f"first{FIRST_K}"), aggregate(reports, "all")]
    write_reports(out / "metrics.csv", reports, aggs)
    return reports, aggs


def run_curve(cfg, checkpoint, out_dir):
    """``curve.csv`` (metrics per delta) and ``structure.csv`` (true vs predicted structure per delta)."""
    out = Path(out_dir)
    seq, split, _ = prepare_data(cfg)
    params, _ = _load_for(cfg, checkpoint, seq)
    out.mkdir(parents=True, exist_ok=True)
    with stage("curve"):
        reports, scores = evaluate_test(cfg, params, split)
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "t", "auc", "gmauc", "error_rate", "reason"])
        for r in reports:
            w.writerow([r.delta, r.t, _fmt(r.auc), _fmt(r.gmauc), _fmt(r.error_rate), r.reason])
    structure = []
    with open(out / "structure.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "t", "avg_degree_true", "avg_clustering_true",
                    "avg_degree_pred", "avg_clustering_pred"])
        for r, s, win in zip(reports, scores, split.test):
            pred = binarize(s, cfg.threshold)
            row = [r.delta, r.t, avg_degree(win.target), avg_clustering(win.target),
                   avg_degree(pred), avg_clustering(pred)]
            structure.append(row)
            w.writerow([_fmt(v) for v in row])
    return reports, structure


SWEEP_PARAMS = ("N", "beta", "width", "alpha")


def sweep_config(cfg, param, value, n_windows):
    """``cfg`` with one parameter changed. For N the test-set size is held fixed."""
    if param == "N":
        N = int(value)
        test_count = n_windows - cfg.train_count
        train_count = (n_windows + cfg.window_len - N) - test_count
        if train_count < 1:
            raise ConfigError(f"N={N} leaves no training windows")
        return cfg.replace(window_len=N, train_count=train_count)
    if param == "beta":
        return cfg.replace(beta=float(value))
    if param == "alpha":
        return cfg.replace(alpha=float(value))
    if param == "width":
        # every LSTM cell and the last encoder layer take the swept width
        w = int(value)
        base = cfg.model_config(1)
        enc = list(base.encoder_dims[:-1]) + [w]
        return cfg.replace(encoder_dims=enc, lstm_dims=[w] * len(base.lstm_dims))
    raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


SWEEP_COLUMNS = ["param", "value", "auc_first20", "auc_all", "gmauc_first20", "gmauc_all",
                 "error_rate_first20", "error_rate_all", "false_negatives_all", "final_loss", "train_seconds"]


def run_sweep(cfg, param, values, out_dir):
    """Train and evaluate once per value (shared seed); one summary row per value in ``sweep.csv``."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq, split, _ = prepare_data(cfg)
    n_windows = len(split.train) + len(split.test)
    rows = []
    for v in values:
        sub_cfg = sweep_config(cfg, param, v, n_windows)
        sub = out / f"{param}={v}"
        _, _, manifest = run_train(sub_cfg, sub)
        _, aggs = run_eval(sub_cfg, sub / "checkpoint", sub)
        first, full = aggs
        rows.append({
            "param": param, "value": v,
            "auc_first20": first["auc"], "auc_all": full["auc"],
            "gmauc_first20": first["gmauc"], "gmauc_all": full["gmauc"],
            "error_rate_first20": first["error_rate"], "error_rate_all": full["error_rate"],
            "false_negatives_all": full["false_negatives"],
            "final_loss": manifest["final_loss"], "train_seconds": manifest["train_seconds"],
        })
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return rows


def run_embed(cfg, checkpoint, out_path):
    """n x d CSV of node embeddings (stacked LSTM output) for the last test window, no header."""
    seq, split, _ = prepare_data(cfg)
    params, _ = _load_for(cfg, checkpoint, seq)
    state = None
    if cfg.stateful_lstm:
        from .model import forward

        for w in split.train + split.test[:-1]:
            state = forward(params, w, state)[1].final_state
    H = embed(params, split.test[-1], state)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, H, delimiter=",", fmt="%.17g")
    return H


__all__ = [
    "ExperimentConfig", "MetricsReport", "prepare_data", "prepare_sequence", "run_ingest", "run_synth",
    "run_train", "run_eval", "run_curve", "run_sweep", "run_embed", "aggregate", "read_reports",
    "evaluate_test", "sweep_config",
]
