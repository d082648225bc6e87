"""Click-prediction training: model assembly, Adam, metrics, train loop.

A model is the gate plus the transformer sharing one word-embedding table.
Batch gradients are the mean over per-sample losses; every sample runs its
own tape and gradients reduce in batch order, so runs are bit-reproducible
for a fixed seed. Validation AUC selects the checkpoint that is kept.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .gating import GateParams, GateSelection, gate_history, heuristic_gate, init_gate_params
from .numerics import Tape, Tensor, backward, tensor
from .text import CorpusStats, ImpressionSample, UserHistory
from .transformer import (
    TransformerParams,
    click_loss,
    encode_candidate,
    encode_candidates,
    encode_sequence,
    encode_user,
    init_transformer_params,
    save_checkpoint,
    weighted_pool,
)

log = logging.getLogger(__name__)


@dataclass
class Model:
    gate: GateParams
    trans: TransformerParams
    k: int = 3
    gate_method: str = "learned"
    stats: CorpusStats | None = None
    seed: int = 0

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "embed.word": self.gate.word_embeddings,
            **self.gate.named_tensors(),
            **self.trans.named_tensors(),
        }

    def trainable_tensors(self) -> dict[str, Tensor]:
        named = self.named_tensors()
        if self.gate_method != "learned":
            named = {k: v for k, v in named.items() if not k.startswith("gate.")}
        return named


def init_model(
    vocab_size: int,
    d: int,
    n_layers: int,
    heads: int,
    max_positions: int,
    n_filters: int,
    window: int,
    seed: int,
    k: int = 3,
    gate_method: str = "learned",
    user_encoder: str = "lstm",
    granularity: str = "token",
    stats: CorpusStats | None = None,
) -> Model:
    rng = np.random.default_rng(seed)
    emb = tensor(rng.normal(0, 0.1, size=(vocab_size, d)), requires_grad=True)
    gate = init_gate_params(
        emb, n_filters, window, rng, user_encoder=user_encoder, granularity=granularity
    )
    trans = init_transformer_params(emb, n_layers, heads, max_positions, rng)
    return Model(gate=gate, trans=trans, k=k, gate_method=gate_method, stats=stats, seed=seed)


def select_history(model: Model, history: UserHistory, sample_index: int = 0) -> list[GateSelection]:
    """Selection policy dispatch; heuristic randomness is derived from the
    model seed and the sample index so it is stable across epochs."""
    if model.gate_method == "learned":
        return gate_history(history, model.gate, model.k)
    rng = None
    if model.gate_method == "random":
        rng = np.random.default_rng([model.seed, 7919, sample_index])
    return heuristic_gate(
        history, model.gate_method, model.k, model.gate, stats=model.stats, rng=rng
    )


def user_embedding(model: Model, history: UserHistory, sample_index: int = 0) -> Tensor:
    return encode_user(select_history(model, history, sample_index), model.trans)


def user_keywords(model: Model, history: UserHistory, sample_index: int = 0) -> list[tuple[int, float]]:
    """(token id, weight) pairs across the gated history, for recall queries."""
    pairs: list[tuple[int, float]] = []
    selections = select_history(model, history, sample_index)
    for seq, sel in zip(history.items, selections):
        for pos, w in zip(sel.positions, sel.weights.data):
            pairs.append((seq.ids[pos], float(w)))
    return pairs


def sample_loss(model: Model, sample: ImpressionSample, sample_index: int = 0) -> Tensor:
    user = user_embedding(model, sample.history, sample_index)
    pos = encode_candidate(sample.positive, model.trans)
    negs = [encode_candidate(n, model.trans) for n in sample.negatives]
    return click_loss(user, pos, negs)


# ---------------------------------------------------------------------------
# batched forward
#
# The per-sample path above is the reference; the functions below compute the
# same values with grouped tensor ops (items bucketed by length, users by
# history size and gated length) so a whole batch runs in a few hundred tape
# nodes instead of tens of thousands. Tests pin the two routes together.
# ---------------------------------------------------------------------------

def _assemble(chunks: list[Tensor], order: list[int]) -> Tensor:
    """Concatenate row chunks and permute rows back to their global order.

    ``order[r]`` is the global index of concatenated row r.
    """
    stacked = chunks[0] if len(chunks) == 1 else nm.concat_rows(chunks)
    if order == list(range(len(order))):
        return stacked
    return nm.gather_rows(stacked, np.argsort(order))


def _batch_select(
    model: Model,
    histories: list[UserHistory],
    rngs: list[np.random.Generator | None],
):
    """Selection over many histories at once.

    Returns (scaled_rows, spans, positions): the weight-scaled selected
    embeddings as one (sum K_eff, d) tensor ordered history-major then
    item-major then selection order, one (start, length) span per history,
    and the raw selected positions.
    """
    from .gating import NEG_MASK, heuristic_scores, select_positions
    from .text import PAD_ID

    gate = model.gate
    items: list = []
    history_start: list[int] = []
    for h in histories:
        history_start.append(len(items))
        items.extend(h.items)
    n_items = len(items)

    if model.gate_method != "learned":
        positions_flat = []
        for h_i, h in enumerate(histories):
            for seq in h.items:
                scores = heuristic_scores(seq, model.gate_method, model.stats, rngs[h_i])
                pos = select_positions(seq, scores, model.k)
                if not pos:
                    raise ValueError("no selectable tokens in item (all padding)")
                positions_flat.append(pos)
        flat_ids = [items[i].ids[p] for i in range(n_items) for p in positions_flat[i]]
        weights = np.concatenate(
            [np.full(len(p), 1.0 / len(p)) for p in positions_flat]
        )
        gathered = nm.gather_rows(gate.word_embeddings, flat_ids)
        scaled_rows = nm.mul(gathered, nm.constant(weights[:, None]))
    else:
        # phase 1: per-length batched item encoding
        by_len: dict[int, list[int]] = {}
        for i, seq in enumerate(items):
            by_len.setdefault(len(seq), []).append(i)
        group_of = np.empty(n_items, dtype=np.intp)
        row_of = np.empty(n_items, dtype=np.intp)
        groups = []
        pooled_chunks, pooled_order = [], []
        for L in sorted(by_len):
            members = by_len[L]
            g_idx = len(groups)
            ids = np.array([items[i].ids for i in members], dtype=np.intp)
            valid = ids != PAD_ID
            emb3 = nm.gather_rows(gate.word_embeddings, ids)
            ctx3 = nm.relu(nm.conv1d(emb3, gate.filters, gate.bias, gate.window))
            logits = nm.matmul(ctx3, gate.pool_v)
            if not valid.all():
                logits = nm.add(logits, nm.constant(np.where(valid, 0.0, NEG_MASK)))
            alpha = nm.softmax(logits, axis=-1)
            G = len(members)
            pooled = nm.reshape(
                nm.matmul(nm.reshape(alpha, (G, 1, L)), ctx3), (G, gate.n_filters)
            )
            for row, i in enumerate(members):
                group_of[i] = g_idx
                row_of[i] = row
            groups.append({"members": members, "L": L, "emb3": emb3, "ctx3": ctx3})
            pooled_chunks.append(pooled)
            pooled_order.extend(members)
        pooled_all = _assemble(pooled_chunks, pooled_order)  # (n_items, n_f)

        # phase 2: user interest, batched over histories of equal length
        by_n: dict[int, list[int]] = {}
        for h_i, h in enumerate(histories):
            by_n.setdefault(len(h), []).append(h_i)
        u_chunks, u_order = [], []
        for N in sorted(by_n):
            hs = by_n[N]
            flat = np.array(
                [history_start[h_i] + j for h_i in hs for j in range(N)], dtype=np.intp
            )
            stacked = nm.reshape(
                nm.gather_rows(pooled_all, flat), (len(hs), N, gate.n_filters)
            )
            if gate.user_encoder == "attn":
                a = nm.softmax(nm.matmul(stacked, gate.attn_v), axis=-1)
                u = nm.reshape(
                    nm.matmul(nm.reshape(a, (len(hs), 1, N)), stacked),
                    (len(hs), gate.n_filters),
                )
            else:
                u = nm.lstm_last(stacked, gate.lstm)
            u_chunks.append(u)
            u_order.extend(hs)
        u_all = _assemble(u_chunks, u_order)  # (n_histories, n_f)

        # phase 3: cosine scores per length group, then discrete selection
        eps = 1e-12
        owner = np.empty(n_items, dtype=np.intp)
        for h_i in range(len(histories)):
            start = history_start[h_i]
            end = history_start[h_i + 1] if h_i + 1 < len(histories) else n_items
            owner[start:end] = h_i
        positions_flat = [None] * n_items
        for grp in groups:
            members, L = grp["members"], grp["L"]
            G = len(members)
            u_item = nm.gather_rows(u_all, owner[members])
            num = nm.vsum(nm.mul(grp["ctx3"], nm.reshape(u_item, (G, 1, gate.n_filters))), axis=2)
            ctx_n = nm.sqrt(nm.clamp_min(nm.vsum(nm.mul(grp["ctx3"], grp["ctx3"]), axis=2), eps * eps))
            u_n = nm.reshape(
                nm.sqrt(nm.clamp_min(nm.vsum(nm.mul(u_item, u_item), axis=1), eps * eps)),
                (G, 1),
            )
            r = nm.div(num, nm.mul(ctx_n, u_n))  # (G, L)
            grp["r"] = r
            grp["r_flat"] = nm.reshape(r, (G * L,))
            grp["emb_flat"] = nm.reshape(grp["emb3"], (G * L, gate.embed_dim))
            for row, i in enumerate(members):
                pos = select_positions(items[i], r.data[row], model.k)
                if not pos:
                    raise ValueError("no selectable tokens in item (all padding)")
                positions_flat[i] = pos

        # phase 4: gather + normalize selections, bucketed by (group, k_eff)
        sel_offset = np.zeros(n_items + 1, dtype=np.intp)
        for i in range(n_items):
            sel_offset[i + 1] = sel_offset[i] + len(positions_flat[i])
        chunks, chunk_order = [], []
        for g_idx, grp in enumerate(groups):
            by_k: dict[int, list[int]] = {}
            for i in grp["members"]:
                by_k.setdefault(len(positions_flat[i]), []).append(i)
            L = grp["L"]
            for kk in sorted(by_k):
                mem = by_k[kk]
                flat_idx = np.array(
                    [row_of[i] * L + p for i in mem for p in positions_flat[i]],
                    dtype=np.intp,
                )
                beta = nm.softmax(
                    nm.reshape(nm.gather_rows(grp["r_flat"], flat_idx), (len(mem), kk)),
                    axis=-1,
                )
                scaled = nm.mul(
                    nm.gather_rows(grp["emb_flat"], flat_idx),
                    nm.reshape(beta, (len(mem) * kk, 1)),
                )
                chunks.append(scaled)
                chunk_order.extend(
                    int(sel_offset[i]) + j for i in mem for j in range(kk)
                )
        scaled_rows = _assemble(chunks, chunk_order)

    spans = []
    offset = 0
    row = 0
    for h_i, h in enumerate(histories):
        n_sel = sum(
            len(positions_flat[history_start[h_i] + j]) for j in range(len(h.items))
        )
        spans.append((offset, n_sel))
        offset += n_sel
    positions = [
        [positions_flat[history_start[h_i] + j] for j in range(len(h.items))]
        for h_i in range(len(histories))
    ]
    return scaled_rows, spans, positions


def batch_user_embeddings(
    model: Model, histories: list[UserHistory], sample_indices: list[int]
) -> Tensor:
    """(B, d) user embeddings for a batch of histories on the current tape.

    Identical history objects are encoded once and shared, except under the
    random selector whose draws are keyed to the sample index.
    """
    dedup = model.gate_method != "random"
    unique: list[UserHistory] = []
    rngs: list = []
    mapping: list[int] = []
    seen: dict[int, int] = {}
    for idx, h in zip(sample_indices, histories):
        key = id(h)
        if dedup and key in seen:
            mapping.append(seen[key])
            continue
        if dedup:
            seen[key] = len(unique)
        mapping.append(len(unique))
        unique.append(h)
        rngs.append(
            np.random.default_rng([model.seed, 7919, idx])
            if model.gate_method == "random"
            else None
        )

    scaled_rows, spans, _ = _batch_select(model, unique, rngs)
    trans = model.trans
    by_t: dict[int, list[int]] = {}
    for u_i, (_, length) in enumerate(spans):
        if length < 1:
            raise ValueError("encode_user needs at least one selected token")
        by_t.setdefault(length, []).append(u_i)
    chunks, order = [], []
    for T in sorted(by_t):
        mem = by_t[T]
        flat = np.concatenate([np.arange(spans[u][0], spans[u][0] + T) for u in mem])
        seq3 = nm.reshape(nm.gather_rows(scaled_rows, flat), (len(mem), T, trans.d))
        if T > trans.max_positions:
            raise ValueError(f"sequence length {T} exceeds max positions {trans.max_positions}")
        x = nm.add(seq3, nm.narrow(trans.pos_embeddings, 0, 0, T))
        encoded = encode_sequence(x, trans)
        chunks.append(weighted_pool(encoded, trans.pool_q))
        order.extend(mem)
    users_unique = _assemble(chunks, order)
    if mapping == list(range(len(histories))):
        return users_unique
    return nm.gather_rows(users_unique, mapping)


def batch_loss(model: Model, samples: list[ImpressionSample], sample_indices: list[int]) -> Tensor:
    """Mean click loss over a batch, computed with the grouped fast path.

    Falls back to the per-sample route for configurations the grouped path
    does not cover (word-level gate granularity, ragged negative counts).
    """
    counts = {len(s.negatives) for s in samples}
    if model.gate.granularity == "word" or len(counts) != 1:
        total = sample_loss(model, samples[0], sample_indices[0])
        for s, i in zip(samples[1:], sample_indices[1:]):
            total = nm.add(total, sample_loss(model, s, i))
        return nm.mul(total, 1.0 / len(samples))

    users = batch_user_embeddings(model, [s.history for s in samples], sample_indices)
    cand_seqs = []
    for s in samples:
        cand_seqs.append(s.positive)
        cand_seqs.extend(s.negatives)
    cands = encode_candidates(cand_seqs, model.trans)
    B = len(samples)
    C = 1 + counts.pop()
    d = model.trans.d
    cands3 = nm.reshape(cands, (B, C, d))
    z = nm.mul(
        nm.vsum(nm.mul(cands3, nm.reshape(users, (B, 1, d))), axis=2),
        1.0 / math.sqrt(d),
    )
    lse = nm.logsumexp(z, axis=-1)
    z_pos = nm.reshape(nm.narrow(z, 1, 0, 1), (B,))
    return nm.mean(nm.sub(lse, z_pos))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def lr_at(state: OptimState, t: int) -> float:
    """Linear warmup to peak_lr, then linear decay to zero at total_steps."""
    if state.warmup_steps > 0 and t <= state.warmup_steps:
        return state.peak_lr * t / state.warmup_steps
    span = state.total_steps - state.warmup_steps
    if span <= 0:
        return state.peak_lr
    return state.peak_lr * max(0.0, (state.total_steps - t) / span)


def adam_step(named: dict[str, Tensor], state: OptimState) -> float:
    """One Adam update with bias correction; returns the lr used.

    Parameters without a populated gradient are treated as zero-gradient.
    A NaN gradient aborts the step before any parameter moves.
    """
    for name, p in named.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise RuntimeError(f"non-finite gradient in {name}; aborting step")
    state.step += 1
    t = state.step
    lr = lr_at(state, t)
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in named.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return lr


def clip_gradients(named: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm."""
    total = 0.0
    for p in named.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in named.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def zero_grads(named: dict[str, Tensor]) -> None:
    for p in named.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int

    def row(self) -> tuple[float, float, float, float]:
        return (self.auc, self.mrr, self.ndcg5, self.ndcg10)


def auc_score(scores, labels) -> float:
    """Rank-based AUC with ties counted half (Mann-Whitney)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _ranking(scores) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def mrr_score(scores, labels) -> float:
    for rank, i in enumerate(_ranking(scores), start=1):
        if labels[i] == 1:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(scores, labels, k: int) -> float:
    order = _ranking(scores)
    dcg = 0.0
    for rank, i in enumerate(order[:k], start=1):
        if labels[i] == 1:
            dcg += 1.0 / math.log2(rank + 1)
    n_pos = int(sum(labels))
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, n_pos) + 1))
    return dcg / idcg if idcg > 0 else 0.0


def _impression_scores(model: Model, sample: ImpressionSample, sample_index: int,
                       cand_cache: dict[str, np.ndarray] | None = None):
    u = user_embedding(model, sample.history, sample_index).data

    def cand(seq, item_id):
        if cand_cache is not None and item_id:
            hit = cand_cache.get(item_id)
            if hit is None:
                hit = encode_candidate(seq, model.trans).data
                cand_cache[item_id] = hit
            return hit
        return encode_candidate(seq, model.trans).data

    d = len(u)
    items = [(sample.positive, sample.positive_id)] + list(
        zip(sample.negatives, sample.negative_ids or [""] * len(sample.negatives))
    )
    scores = [float(u @ cand(seq, iid)) / math.sqrt(d) for seq, iid in items]
    labels = [1] + [0] * len(sample.negatives)
    return scores, labels


def evaluate(model: Model, samples: list[ImpressionSample], threads: int = 1) -> EvalReport:
    """Mean AUC/MRR/NDCG over impressions; forward-only, no tape."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    cache: dict[str, np.ndarray] = {}

    def one(idx_sample):
        idx, sample = idx_sample
        scores, labels = _impression_scores(model, sample, idx, cache)
        return (
            auc_score(scores, labels),
            mrr_score(scores, labels),
            ndcg_at_k(scores, labels, 5),
            ndcg_at_k(scores, labels, 10),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, enumerate(samples)))
    else:
        rows = [one(x) for x in enumerate(samples)]
    arr = np.asarray(rows)
    mean = arr.mean(axis=0)
    return EvalReport(
        auc=float(mean[0]), mrr=float(mean[1]), ndcg5=float(mean[2]),
        ndcg10=float(mean[3]), n_impressions=len(samples),
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    history: list[tuple]            # (step, loss, auc, mrr, ndcg5, ndcg10)
    losses: list[float]             # per-step batch losses
    best_auc: float
    best_step: int
    final_report: EvalReport | None


def split_samples(samples: list[ImpressionSample], val_fraction: float, seed: int):
    """Deterministic shuffle split into (train, validation)."""
    rng = np.random.default_rng([seed, 104729])
    order = rng.permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def train(
    model: Model,
    train_samples: list[ImpressionSample],
    val_samples: list[ImpressionSample],
    steps: int,
    batch_size: int,
    peak_lr: float,
    warmup: int,
    seed: int,
    eval_interval: int = 200,
    log_interval: int = 50,
    clip_norm: float = 0.0,
    out_dir: str | Path | None = None,
    threads: int = 1,
) -> TrainResult:
    """Mini-batch training with best-validation-AUC checkpoint retention.

    With ``out_dir`` set, writes ``best.manifest.json``/``best.bin`` (the
    best-AUC parameters, or the initial ones when no evaluation ran) there.
    """
    if not train_samples and steps > 0:
        raise ValueError("no training samples")
    named = model.named_tensors()
    trainable = model.trainable_tensors()
    state = OptimState(peak_lr=peak_lr, warmup_steps=warmup, total_steps=steps)
    rng = np.random.default_rng([seed, 15485863])

    history: list[tuple] = []
    losses: list[float] = []
    best_auc = -1.0
    best_step = 0
    best_snapshot = {k: v.data.copy() for k, v in named.items()}
    final_report: EvalReport | None = None

    order: list[int] = []

    def next_batch():
        nonlocal order
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = rng.permutation(len(train_samples)).tolist()
            batch.append(order.pop())
        return batch

    for step in range(1, steps + 1):
        batch = next_batch()
        zero_grads(trainable)
        with Tape() as tape:
            loss = batch_loss(model, [train_samples[i] for i in batch], batch)
        value = loss.item()
        if not math.isfinite(value):
            raise RuntimeError(f"diverged: non-finite loss {value} at step {step}")
        backward(tape, loss)
        if clip_norm > 0:
            clip_gradients(trainable, clip_norm)
        adam_step(trainable, state)
        losses.append(value)

        if log_interval and step % log_interval == 0:
            log.info("step %d loss %.4f lr %.2e", step, value, lr_at(state, step))
        if val_samples and eval_interval and (step % eval_interval == 0 or step == steps):
            report = evaluate(model, val_samples, threads=threads)
            history.append((step, value, *report.row()))
            final_report = report
            if report.auc > best_auc:
                best_auc = report.auc
                best_step = step
                best_snapshot = {k: v.data.copy() for k, v in named.items()}

    # restore the retained parameters so the returned model is the best one
    for k, v in named.items():
        v.data[...] = best_snapshot[k]
    if out_dir is not None:
        save_checkpoint(named, Path(out_dir) / "best")
    return TrainResult(
        model=model,
        history=history,
        losses=losses,
        best_auc=best_auc,
        best_step=best_step,
        final_report=final_report,
    )


def write_metrics_csv(path, history: list[tuple], fingerprint: str) -> None:
    """Metrics history as CSV with a config-fingerprint comment line."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config {fingerprint}\n")
        f.write("step,loss,auc,mrr,ndcg5,ndcg10\n")
        for row in history:
            f.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
