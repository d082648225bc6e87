"""Independent reference implementations used as test oracles.

Everything here is deliberately written the dumb way (loops, O(n^2) pair
counting, central differences) and never calls into the package's fast paths
it is checking.
"""

import numpy as np

from gateformer.numerics import Tape, backward


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the larger magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` w.r.t. ``x``.

    ``f`` takes no arguments and must read ``x`` (by reference) on each call.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def autodiff_grads(build_loss, params):
    """Run one taped forward/backward; return a grad copy per parameter."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    return [None if p.grad is None else p.grad.copy() for p in params]


def fd_grads(build_loss, params, eps: float = 1e-5):
    """Central-difference gradients of build_loss() w.r.t. each parameter."""
    return [finite_diff_grad(lambda: build_loss().item(), p.data, eps) for p in params]


def check_grads(build_loss, params, eps: float = 1e-5, tol: float = 1e-5) -> float:
    """Assert autodiff matches finite differences; returns the worst rel err.

    Parameters whose true gradient is ~0 (below the central-difference noise
    floor) count as agreement: the relative error is meaningless at 0 vs 0.
    """
    ad = autodiff_grads(build_loss, params)
    fd = fd_grads(build_loss, params, eps)
    worst = 0.0
    for p, a, b in zip(params, ad, fd):
        assert a is not None, f"no gradient reached parameter of shape {p.data.shape}"
        if max(np.abs(a).max(), np.abs(b).max()) < 1e-8:
            continue
        e = rel_err(a, b)
        worst = max(worst, e)
        assert e < tol, f"gradient mismatch {e:.3e} >= {tol} on shape {p.data.shape}"
    return worst


def conv1d_oracle(x: np.ndarray, filters: np.ndarray, bias: np.ndarray, w: int) -> np.ndarray:
    """Direct sliding-window convolution, zero padded by w on both sides."""
    L, d = x.shape
    span = 2 * w + 1
    padded = np.zeros((L + 2 * w, d))
    padded[w:w + L] = x
    out = np.zeros((L, filters.shape[0]))
    for j in range(L):
        out[j] = filters @ padded[j:j + span].reshape(-1) + bias
    return out


def softmax_oracle(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def auc_oracle(scores, labels) -> float:
    """Pairwise P(score_pos > score_neg) with ties counted 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def mrr_oracle(scores, labels) -> float:
    """1 / rank of the best-ranked positive (desc score, index tiebreak)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            return 1.0 / rank
    return 0.0


def ndcg_oracle(scores, labels, k: int) -> float:
    """Binary-gain NDCG@k via full sort (desc score, index tiebreak)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    dcg = 0.0
    for rank, i in enumerate(order[:k], start=1):
        if labels[i] == 1:
            dcg += 1.0 / np.log2(rank + 1)
    n_pos = sum(labels)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, min(k, n_pos) + 1))
    return dcg / idcg if idcg > 0 else 0.0


def recall_at_k_oracle(results, relevant, k: int) -> float:
    return len(set(results[:k]) & set(relevant)) / len(relevant)


def bm25_oracle(query_terms, doc_terms, all_docs, k1: float = 1.2, b: float = 0.75) -> float:
    """Okapi BM25 of one doc for a weighted query, stats from ``all_docs``."""
    n_docs = len(all_docs)
    avg_len = sum(len(d) for d in all_docs) / n_docs
    doc_len = len(doc_terms)
    score = 0.0
    for term, weight in query_terms:
        df = sum(1 for d in all_docs if term in d)
        idf = np.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
        tf = doc_terms.count(term)
        denom = tf + k1 * (1.0 - b + b * doc_len / avg_len)
        score += weight * idf * tf * (k1 + 1.0) / denom if tf > 0 else 0.0
    return score
