"""Generalization metrics over evaluation dumps.

Everything here is a pure function of an :class:`EvalDump` — per-sample
predicted distributions, penultimate embeddings, ground-truth labels, and
(optionally) human label distributions.  All accumulation happens in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .probs import check_prob_rows, kl_div, kl_div_rows, cross_entropy_rows


@dataclass
class EvalDump:
    """Per-sample evaluation record: probs [N,C], embeddings [N,d], labels [N]."""

    probs: np.ndarray
    embeddings: np.ndarray
    true_labels: np.ndarray
    human_probs: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        self.embeddings = np.asarray(self.embeddings)
        self.true_labels = np.asarray(self.true_labels)
        check_prob_rows(self.probs, "probs")
        n = self.probs.shape[0]
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != n:
            raise ValueError(f"embeddings shape {self.embeddings.shape} inconsistent with N={n}")
        if self.true_labels.shape != (n,):
            raise ValueError(f"true_labels shape {self.true_labels.shape} inconsistent with N={n}")
        if n and (self.true_labels.min() < 0 or self.true_labels.max() >= self.n_classes):
            raise ValueError(f"true_labels outside [0, {self.n_classes})")
        if self.human_probs is not None:
            self.human_probs = np.asarray(self.human_probs)
            check_prob_rows(self.human_probs, "human_probs")
            if self.human_probs.shape != self.probs.shape:
                raise ValueError(
                    f"human_probs shape {self.human_probs.shape} != probs shape {self.probs.shape}")

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def class_indices(self) -> list[np.ndarray]:
        """Sample indices per true class, in dump order."""
        return [np.flatnonzero(self.true_labels == c) for c in range(self.n_classes)]


def confusion_metrics(dump: EvalDump) -> dict:
    """Accuracy, macro precision/recall/F1, and the CxC confusion count matrix.

    Predictions are the argmax of each probs row (ties break to the lowest
    class index).  Rows of the matrix index the true class, columns the
    predicted class.  Per-class precision/recall with an empty denominator
    count as 0 before macro-averaging.
    """
    if dump.n_samples < 1:
        raise ValueError("confusion metrics need at least one sample")
    c = dump.n_classes
    pred = np.argmax(dump.probs, axis=1)
    truth = dump.true_labels.astype(np.int64)
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    diag = np.diag(cm).astype(np.float64)
    pred_totals = cm.sum(axis=0).astype(np.float64)
    true_totals = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_totals > 0, diag / pred_totals, 0.0)
        recall = np.where(true_totals > 0, diag / true_totals, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return {
        "accuracy": float(diag.sum() / dump.n_samples),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "confusion_matrix": cm,
    }


@dataclass
class BinStat:
    lo: float
    hi: float
    count: int
    conf: float
    acc: float


@dataclass
class ReliabilityReport:
    bins: list[BinStat]
    ece: float
    n_samples: int

    def recompute_ece(self) -> float:
        """Re-derive ECE from the stored bin statistics (same expression)."""
        return _ece_from_bins(self.bins, self.n_samples)


def _ece_from_bins(bins: list[BinStat], n: int) -> float:
    total = 0.0
    for b in bins:
        if b.count:
            total += (b.count / n) * abs(b.acc - b.conf)
    return float(total)


def ece(dump: EvalDump, n_bins: int = 15) -> ReliabilityReport:
    """Expected calibration error with equal-width right-closed bins over (0,1].

    Bin m covers (edges[m], edges[m+1]]; confidence is the max predicted
    probability, accuracy is agreement of the argmax prediction with the true
    label.  Empty bins are recorded with count 0 and contribute nothing.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    if dump.n_samples < 1:
        raise ValueError("ece needs at least one sample")
    conf = np.max(dump.probs, axis=1).astype(np.float64)
    correct = (np.argmax(dump.probs, axis=1) == dump.true_labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # first j with edges[j] >= conf, minus one: conf lands in (edges[m], edges[m+1]]
    idx = np.searchsorted(edges, conf, side="left") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    bins = []
    for m in range(n_bins):
        mask = idx == m
        count = int(mask.sum())
        if count:
            bins.append(BinStat(float(edges[m]), float(edges[m + 1]), count,
                                float(conf[mask].mean()), float(correct[mask].mean())))
        else:
            bins.append(BinStat(float(edges[m]), float(edges[m + 1]), 0, 0.0, 0.0))
    value = _ece_from_bins(bins, dump.n_samples)
    return ReliabilityReport(bins=bins, ece=value, n_samples=dump.n_samples)


def human_kld(dump: EvalDump, mode: str = "kl") -> float:
    """Mean divergence between model and human label distributions.

    mode="kl" is KL(model || human) as written; "kl-reversed" swaps the
    arguments; "cross-entropy" uses -sum(human * log model) instead.
    """
    if dump.human_probs is None:
        raise ValueError("dump has no human_probs; human-label divergence unavailable")
    model = dump.probs.astype(np.float64)
    human = dump.human_probs.astype(np.float64)
    if mode == "kl":
        vals = kl_div_rows(model, human)
    elif mode == "kl-reversed":
        vals = kl_div_rows(human, model)
    elif mode == "cross-entropy":
        vals = cross_entropy_rows(model, human)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(vals.mean())


def _class_mean_rows(rows: np.ndarray, dump: EvalDump, what: str) -> np.ndarray:
    """Per-class mean of `rows`, rejecting any empty class by id."""
    means = np.empty((dump.n_classes, rows.shape[1]), dtype=np.float64)
    for c, idx in enumerate(dump.class_indices()):
        if idx.size == 0:
            raise ValueError(f"class {c} has no samples; cannot average {what}")
        means[c] = rows[idx].mean(axis=0)
    return means


def class_separability(dump: EvalDump) -> float:
    """Mean pairwise KL divergence between per-class average predictions.

    S = (1/C^2) * sum_i sum_j KL(pbar_i || pbar_j), diagonal terms included
    (each exactly 0).
    """
    means = _class_mean_rows(dump.probs.astype(np.float64), dump, "predictions")
    c = dump.n_classes
    total = 0.0
    for i in range(c):
        for j in range(c):
            total += kl_div(means[i], means[j]) if i != j else 0.0
    return total / (c * c)


def standardize_embeddings(emb: np.ndarray) -> np.ndarray:
    """Per-dimension standardization to mean 0, population std 1 (float64).

    Dimensions with zero variance come out as all zeros rather than dividing
    by zero.
    """
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be [N, d], got shape {emb.shape}")
    if emb.shape[0] < 2:
        raise ValueError(f"standardization needs N >= 2, got N={emb.shape[0]}")
    centered = emb - emb.mean(axis=0)
    std = emb.std(axis=0)
    out = np.zeros_like(centered)
    nz = std > 0
    out[:, nz] = centered[:, nz] / std[nz]
    return out


@dataclass
class DiscriminationReport:
    """Cosine cohesion per class, adhesion per unordered class pair, and D."""

    cohesion: np.ndarray                    # [C]
    adhesion: dict[tuple[int, int], float]  # (i, j) with i < j
    discrimination: float
    dim: int
    zero_norm_count: int = 0
    pair_mean: bool = False

    def recompute_discrimination(self) -> float:
        """Re-derive D from the stored cohesion/adhesion parts."""
        return _assemble_d(self.cohesion, self.adhesion, self.dim)


def _assemble_d(cohesion: np.ndarray, adhesion: dict[tuple[int, int], float], dim: int) -> float:
    mean_c = float(np.mean(cohesion))
    mean_a = float(np.mean(list(adhesion.values()))) if adhesion else 0.0
    return (mean_c - mean_a) / math.sqrt(dim)


def class_discrimination(dump: EvalDump, standardize: bool = True,
                         pair_mean: bool = False) -> DiscriminationReport:
    """Embedding-space cohesion/adhesion report under cosine similarity.

    Embeddings are standardized per dimension first (disable with
    standardize=False).  Cohesion for a class divides the upper-triangle sum
    of intra-class cosines by N_c*(N_c - 1) — half the unordered-pair mean;
    pass pair_mean=True for the twice-as-large pair-average convention.
    Adhesion for a class pair is the mean over all cross pairs.
    D = (mean cohesion - mean adhesion) / sqrt(d).

    A sample whose embedding has zero norm gets cosine similarity 0 against
    everything; such samples are tallied in zero_norm_count.
    """
    groups = dump.class_indices()
    for c, idx in enumerate(groups):
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} samples; cohesion needs at least 2")
    emb = standardize_embeddings(dump.embeddings) if standardize \
        else np.asarray(dump.embeddings, dtype=np.float64)
    d = emb.shape[1]
    norms = np.linalg.norm(emb, axis=1)
    zero = norms == 0.0
    unit = np.zeros_like(emb)
    unit[~zero] = emb[~zero] / norms[~zero, None]
    gram = unit @ unit.T
    c = dump.n_classes
    cohesion = np.empty(c, dtype=np.float64)
    for i, idx in enumerate(groups):
        sub = gram[np.ix_(idx, idx)]
        upper = (sub.sum() - np.trace(sub)) / 2.0
        n_c = idx.size
        cohesion[i] = upper / (n_c * (n_c - 1))
        if pair_mean:
            cohesion[i] *= 2.0
    adhesion: dict[tuple[int, int], float] = {}
    for i in range(c):
        for j in range(i + 1, c):
            block = gram[np.ix_(groups[i], groups[j])]
            adhesion[(i, j)] = float(block.sum() / block.size)
    return DiscriminationReport(
        cohesion=cohesion,
        adhesion=adhesion,
        discrimination=_assemble_d(cohesion, adhesion, d),
        dim=d,
        zero_norm_count=int(zero.sum()),
        pair_mean=pair_mean,
    )


def kld_confusion_matrix(dump: EvalDump) -> np.ndarray:
    """CxC matrix of KL(mean human distribution of class i || mean model distribution of class j)."""
    if dump.human_probs is None:
        raise ValueError("dump has no human_probs; KLD matrix unavailable")
    human_means = _class_mean_rows(dump.human_probs.astype(np.float64), dump, "human labels")
    model_means = _class_mean_rows(dump.probs.astype(np.float64), dump, "predictions")
    c = dump.n_classes
    out = np.empty((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(c):
            out[i, j] = kl_div(human_means[i], model_means[j])
    return out


def confidence_matrix(dump: EvalDump, masked: bool = False, source: str = "model") -> np.ndarray:
    """CxC mean probability assigned to class j over samples of true class i.

    source selects the model's predicted distributions or the human label
    distributions.  With masked=True the diagonal is NaN so off-diagonal
    structure can be inspected on its own scale.
    """
    if source == "model":
        rows = dump.probs
    elif source == "human":
        if dump.human_probs is None:
            raise ValueError("dump has no human_probs; human confidence matrix unavailable")
        rows = dump.human_probs
    else:
        raise ValueError(f"unknown source {source!r}")
    means = _class_mean_rows(rows.astype(np.float64), dump, f"{source} rows")
    if masked:
        np.fill_diagonal(means, np.nan)
    return means


def summary_metrics(dump: EvalDump, n_bins: int = 15) -> dict[str, float]:
    """Flat scalar battery for one dump: the table-style column set.

    Human-dependent entries are NaN when the dump carries no human_probs.
    """
    cm = confusion_metrics(dump)
    rel = ece(dump, n_bins)
    disc = class_discrimination(dump)
    out = {
        "accuracy": cm["accuracy"],
        "precision": cm["precision"],
        "recall": cm["recall"],
        "f1": cm["f1"],
        "ece": rel.ece,
        "separability": class_separability(dump),
        "cohesion": float(np.mean(disc.cohesion)),
        "adhesion": float(np.mean(list(disc.adhesion.values()))) if disc.adhesion else 0.0,
        "discrimination": disc.discrimination,
        "human_kld": human_kld(dump) if dump.human_probs is not None else float("nan"),
    }
    return out
