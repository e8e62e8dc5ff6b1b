"""Link-prediction metrics: AUC, GMAUC and its parts, Error Rate, link importance, structure."""
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedMetricError, UndefinedMetricWarning
from .kernels import edge_betweenness_matrix, node_triangles
from .numeric import SeededRng

DEFAULT_TOP_FRACTION = 0.10


def _offdiag(n):
    return ~np.eye(n, dtype=bool)


def _check(scores, *mats):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"scores must be square, got {scores.shape}")
    out = [scores]
    for m in mats:
        m = np.asarray(m)
        if m.shape != scores.shape:
            raise ShapeError(f"shape mismatch: {m.shape} vs {scores.shape}")
        out.append(m != 0)
    return out


def _auc_from_groups(pos, neg):
    """Mann-Whitney probability P(pos > neg) + 0.5 P(pos == neg), ties resolved by midranks."""
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[:pos.size].sum()
    return float((r_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


def auc_exact(scores, target):
    scores, target = _check(scores, target)
    mask = _offdiag(scores.shape[0])
    pos = scores[mask & target]
    neg = scores[mask & ~target]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs at least one existing and one nonexistent link")
    return _auc_from_groups(pos, neg)


def auc_sampled(scores, target, samples=10_000, rng=None, downsample=True):
    """Comparison-sampled AUC ``(n' + 0.5 n'') / n``.

    Nonexistent links are first down-sampled to as many as there are existing
    links; then ``samples`` (existing, nonexistent) pairs are drawn from those
    two pools with replacement. The down-sampling keeps the estimate unbiased
    but adds variance that more samples cannot remove: on graphs with a few
    hundred links a single draw can sit 0.03-0.05 from the exact AUC.
    ``downsample=False`` compares against all nonexistent links.
    """
    scores, target = _check(scores, target)
    if rng is None:
        rng = SeededRng(0)
    elif not isinstance(rng, SeededRng):
        rng = SeededRng(rng)
    mask = _offdiag(scores.shape[0])
    pos = scores[mask & target]
    neg = scores[mask & ~target]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs at least one existing and one nonexistent link")
    if downsample and neg.size > pos.size:
        neg = neg[rng.choice(neg.size, pos.size, replace=False)]
    a = pos[rng.integers(0, pos.size, samples)]
    b = neg[rng.integers(0, neg.size, samples)]
    wins = np.count_nonzero(a > b)
    ties = np.count_nonzero(a == b)
    return (wins + 0.5 * ties) / samples


def average_precision(scores, labels):
    """Step-wise area under the precision-recall curve; tied scores form one threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    P = int(labels.sum())
    if P == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall_step = np.diff(np.r_[0, tp_at]) / P
    return float(np.sum(recall_step * precision))


def added_removed_counts(prev, target):
    prev = np.asarray(prev) != 0
    target = np.asarray(target) != 0
    mask = _offdiag(prev.shape[0])
    L_A = int(np.count_nonzero(mask & ~prev & target))
    L_R = int(np.count_nonzero(mask & prev & ~target))
    return L_A, L_R


def prauc_new(scores, prev, target):
    """Average precision for added links among pairs absent from ``prev``.

    With no added link the random baseline (0 here) is returned and an
    ``UndefinedMetricWarning`` is issued.
    """
    scores, prev, target = _check(scores, prev, target)
    cand = _offdiag(scores.shape[0]) & ~prev
    if not cand.any():
        raise UndefinedMetricError("no candidate pairs: previous snapshot is complete")
    labels = target[cand]
    if not labels.any():
        warnings.warn("no added links; returning the random-classifier baseline", UndefinedMetricWarning)
        return float(labels.sum()) / labels.size
    return average_precision(scores[cand], labels)


def auc_prev(scores, prev, target):
    """AUC over pairs linked in ``prev``: persisting links (positives) against removed ones."""
    scores, prev, target = _check(scores, prev, target)
    obs = _offdiag(scores.shape[0]) & prev
    pos = scores[obs & target]
    neg = scores[obs & ~target]
    if neg.size == 0:
        raise UndefinedMetricError("AUC_prev undefined: no removed links")
    if pos.size == 0:
        raise UndefinedMetricError("AUC_prev undefined: no persisting links")
    return _auc_from_groups(pos, neg)


def gmauc(prauc_new_value, auc_prev_value, L_A, L_R):
    total = L_A + L_R
    if total <= 0:
        raise UndefinedMetricError("GMAUC undefined: no added or removed links")
    if L_R == 0:
        raise UndefinedMetricError("GMAUC undefined: no removed links")
    base = L_A / total
    first = max((prauc_new_value - base) / (1.0 - base), 0.0)
    second = max(2.0 * (auc_prev_value - 0.5), 0.0)
    return math.sqrt(first * second)


def gmauc_from_scores(scores, prev, target):
    L_A, L_R = added_removed_counts(prev, target)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        pr = prauc_new(scores, prev, target)
    return gmauc(pr, auc_prev(scores, prev, target), L_A, L_R)


def error_rate(predicted, target):
    """Mispredicted off-diagonal pairs (false positives + false negatives) over true links."""
    _, predicted, target = _check(np.zeros(np.shape(target)), predicted, target)
    mask = _offdiag(target.shape[0])
    n_true = int(np.count_nonzero(target & mask))
    if n_true == 0:
        raise UndefinedMetricError("Error Rate undefined: target has no links")
    n_false = int(np.count_nonzero((predicted != target) & mask))
    return n_false / n_true


# --------------------------------------------------------------------------
# link importance


@dataclass
class LinkImportance:
    links: np.ndarray  # (m, 2) source/target pairs, row-major order
    score: np.ndarray  # (m,)
    rank: np.ndarray  # (m,) 1 = most important

    def top(self, fraction=DEFAULT_TOP_FRACTION):
        if not 0 < fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        k = math.ceil(fraction * len(self.score))
        return self.links[np.argsort(self.rank)[:k]]


def _rank(links, score):
    # descending score, ties by (i, j); np.nonzero already yields lexicographic order
    order = np.lexsort((np.arange(len(score)), -score))
    rank = np.empty(len(score), dtype=np.int64)
    rank[order] = np.arange(1, len(score) + 1)
    return LinkImportance(links=links, score=score, rank=rank)


def _links(target):
    target = np.asarray(target) != 0
    target = target & _offdiag(target.shape[0])
    src, dst = np.nonzero(target)
    return target, np.stack([src, dst], axis=1)


def degree_importance(target):
    """deg(i) + deg(j) per link, degree = in-degree + out-degree."""
    adj, links = _links(target)
    deg = adj.sum(axis=0) + adj.sum(axis=1)
    score = (deg[links[:, 0]] + deg[links[:, 1]]).astype(np.float64)
    return _rank(links, score)


def edge_betweenness(target, backend=None):
    adj, links = _links(target)
    eb = edge_betweenness_matrix(adj.astype(np.uint8), backend=backend)
    return _rank(links, eb[links[:, 0], links[:, 1]])


def top_fraction_error_rate(predicted, target, importance, fraction=DEFAULT_TOP_FRACTION):
    """Share of the top ``fraction`` most important true links missing from ``predicted``."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if len(importance.score) == 0:
        raise UndefinedMetricError("no links to rank")
    top = importance.top(fraction)
    predicted = np.asarray(predicted) != 0
    missed = np.count_nonzero(~predicted[top[:, 0], top[:, 1]])
    return missed / len(top)


# --------------------------------------------------------------------------
# structural properties on the symmetrised graph


def _symmetrise(snapshot):
    a = np.asarray(snapshot) != 0
    s = a | a.T
    np.fill_diagonal(s, False)
    return s


def avg_degree(snapshot):
    s = _symmetrise(snapshot)
    return float(s.sum()) / s.shape[0]


def avg_clustering(snapshot, backend=None):
    s = _symmetrise(snapshot)
    k = s.sum(axis=1).astype(np.float64)
    tri = node_triangles(s.astype(np.uint8), backend=backend)
    denom = k * (k - 1)
    c = np.divide(2.0 * tri, denom, out=np.zeros_like(tri), where=k >= 2)
    return float(c.mean())


# --------------------------------------------------------------------------
# one test window


@dataclass
class MetricsReport:
    delta: int
    t: int
    auc: float | None = None
    gmauc: float | None = None
    prauc_new: float | None = None
    auc_prev: float | None = None
    error_rate: float | None = None
    er_top_dc: float | None = None
    er_top_ebc: float | None = None
    L_A: int = 0
    L_R: int = 0
    N_true: int = 0
    N_false: int = 0
    false_negatives: int = 0
    reason: str = ""

    def row(self):
        return asdict(self)


def evaluate_window(scores, prev, target, delta, t, samples=10_000, rng=None,
                    threshold=0.5, fraction=DEFAULT_TOP_FRACTION, backend=None):
    """Every metric for one prediction. Undefined metrics stay ``None`` and are named in ``reason``."""
    from .model import binarize

    predicted = binarize(scores, threshold)
    target = np.asarray(target) != 0
    mask = _offdiag(target.shape[0])
    L_A, L_R = added_removed_counts(prev, target)
    rep = MetricsReport(
        delta=delta, t=t, L_A=L_A, L_R=L_R,
        N_true=int(np.count_nonzero(target & mask)),
        N_false=int(np.count_nonzero((predicted != target) & mask)),
        false_negatives=int(np.count_nonzero(target & ~(predicted != 0) & mask)),
    )
    reasons = []

    def attempt(name, fn):
        try:
            setattr(rep, name, fn())
        except UndefinedMetricError as exc:
            reasons.append(f"{name}: {exc}")

    attempt("auc", lambda: auc_sampled(scores, target, samples, rng))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UndefinedMetricWarning)
        attempt("prauc_new", lambda: prauc_new(scores, prev, target))
    if caught:
        reasons.append("prauc_new: no added links")
    attempt("auc_prev", lambda: auc_prev(scores, prev, target))
    if rep.prauc_new is not None and rep.auc_prev is not None and not caught:
        attempt("gmauc", lambda: gmauc(rep.prauc_new, rep.auc_prev, L_A, L_R))
    elif "gmauc" not in reasons:
        reasons.append("gmauc: component undefined")
    attempt("error_rate", lambda: error_rate(predicted, target))
    if rep.N_true:
        attempt("er_top_dc", lambda: top_fraction_error_rate(predicted, target, degree_importance(target), fraction))
        attempt("er_top_ebc", lambda: top_fraction_error_rate(
            predicted, target, edge_betweenness(target, backend=backend), fraction))
    else:
        reasons.append("top-fraction error rates: target has no links")
    rep.reason = "; ".join(reasons)
    return rep
