"""Independent brute-force reference implementations used by the tests.

Everything here is written as plain loops over definitions — no shared code
with the package beyond numpy — so agreement is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np

EPS = 1e-12


def kl_scalar(p, q) -> float:
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * (math.log(max(pi, EPS)) - math.log(max(qi, EPS)))
    return total


def softmax_scalar(z, t=1.0):
    m = max(x / t for x in z)
    e = [math.exp(zi / t - m) for zi in z]
    s = sum(e)
    return [x / s for x in e]


def ece_rebin(probs: np.ndarray, labels: np.ndarray, n_bins: int) -> float:
    """O(N*M) re-binning by explicit interval comparison."""
    n = probs.shape[0]
    edges = [m / n_bins for m in range(n_bins + 1)]
    total = 0.0
    for m in range(n_bins):
        lo, hi = edges[m], edges[m + 1]
        members = []
        for i in range(n):
            conf = float(np.max(probs[i]))
            pred = int(np.argmax(probs[i]))
            inside = (lo < conf <= hi) if m > 0 else (conf <= hi)
            if inside:
                members.append((conf, 1.0 if pred == labels[i] else 0.0))
        if members:
            avg_conf = sum(c for c, _ in members) / len(members)
            avg_acc = sum(a for _, a in members) / len(members)
            total += (len(members) / n) * abs(avg_acc - avg_conf)
    return total


def separability_pairs(probs: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    means = []
    for c in range(n_classes):
        rows = [probs[i] for i in range(len(labels)) if labels[i] == c]
        means.append(np.mean(rows, axis=0))
    total = 0.0
    for i in range(n_classes):
        for j in range(n_classes):
            if i != j:
                total += kl_scalar(means[i], means[j])
    return total / (n_classes * n_classes)


def standardize_pop(emb: np.ndarray) -> np.ndarray:
    out = np.zeros_like(emb, dtype=np.float64)
    for j in range(emb.shape[1]):
        col = emb[:, j].astype(np.float64)
        mu = col.mean()
        sd = math.sqrt(((col - mu) ** 2).mean())
        if sd > 0:
            out[:, j] = (col - mu) / sd
    return out


def _cos(u, v) -> float:
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v)) / (nu * nv)


def discrimination_pairs(emb: np.ndarray, labels: np.ndarray, n_classes: int,
                         standardize: bool = True, pair_mean: bool = False):
    """Explicit pairwise cohesion/adhesion/D; returns (cohesion, adhesion, D)."""
    e = standardize_pop(emb) if standardize else emb.astype(np.float64)
    groups = [[i for i in range(len(labels)) if labels[i] == c] for c in range(n_classes)]
    cohesion = []
    for idx in groups:
        s = 0.0
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                s += _cos(e[idx[a]], e[idx[b]])
        val = s / (len(idx) * (len(idx) - 1))
        cohesion.append(2.0 * val if pair_mean else val)
    adhesion = {}
    for i in range(n_classes):
        for j in range(i + 1, n_classes):
            s = 0.0
            for a in groups[i]:
                for b in groups[j]:
                    s += _cos(e[a], e[b])
            adhesion[(i, j)] = s / (len(groups[i]) * len(groups[j]))
    mean_c = sum(cohesion) / len(cohesion)
    mean_a = sum(adhesion.values()) / len(adhesion) if adhesion else 0.0
    d = (mean_c - mean_a) / math.sqrt(e.shape[1])
    return cohesion, adhesion, d


def kld_matrix_loops(probs: np.ndarray, human: np.ndarray, labels: np.ndarray,
                     n_classes: int) -> np.ndarray:
    out = np.zeros((n_classes, n_classes))
    h_means, m_means = [], []
    for c in range(n_classes):
        rows = [i for i in range(len(labels)) if labels[i] == c]
        h_means.append(np.mean([human[i] for i in rows], axis=0))
        m_means.append(np.mean([probs[i] for i in rows], axis=0))
    for i in range(n_classes):
        for j in range(n_classes):
            out[i, j] = kl_scalar(h_means[i], m_means[j])
    return out


def kd_loss_scalar(student, teacher, labels, tau, w) -> float:
    """Definition-level recomputation of the blended objective, loops only."""
    b = len(student)
    total = 0.0
    for i in range(b):
        p1 = softmax_scalar(student[i], 1.0)
        ce = -sum(labels[i][k] * math.log(max(p1[k], EPS)) for k in range(len(p1)))
        pt = softmax_scalar(student[i], tau)
        qt = softmax_scalar(teacher[i], tau)
        kl = kl_scalar(pt, qt)
        total += (1.0 - w) * ce + w * tau * tau * kl
    return total / b


def conv2d_valid_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hand-unrolled stride-1 valid convolution for one batch."""
    bs, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    oh, ow = h - k + 1, wd - k + 1
    out = np.zeros((bs, cout, oh, ow))
    for n in range(bs):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o]
                    for c in range(cin):
                        for di in range(k):
                            for dj in range(k):
                                acc += x[n, c, i + di, j + dj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc
    return out


def random_dump_arrays(rng: np.random.Generator, n_max=500, c_max=10, d_max=64,
                       with_human=True, min_per_class=2):
    """Random EvalDump ingredients guaranteeing every class has samples."""
    c = int(rng.integers(2, c_max + 1))
    n = int(rng.integers(max(min_per_class * c, 20), n_max + 1))
    d = int(rng.integers(2, d_max + 1))
    labels = np.concatenate([np.arange(c)] * min_per_class +
                            [rng.integers(0, c, size=n - min_per_class * c)])
    labels = labels[rng.permutation(n)].astype(np.int64)
    probs = rng.dirichlet(np.full(c, 0.7), size=n)
    emb = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0)
    human = rng.dirichlet(np.full(c, 1.3), size=n) if with_human else None
    return probs, emb, labels, human, c