"""Compact pre-norm transformer encoder shared by the user and candidate sides.

The user side encodes the concatenation of gated (weight-scaled) token
embeddings from the whole history, with learned positions assigned globally
over the concatenated sequence; the candidate side encodes the full,
ungated token sequence. Both pool to a single vector with a learned query
(weighted pooling aggregation) and share every parameter, including the
word embedding table, which the gate shares too.

Checkpoint format: ``<prefix>.manifest.json`` (sorted tensor names, shapes,
byte offsets) plus ``<prefix>.bin`` holding the raw little-endian float64
arrays concatenated in manifest order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .gating import GateSelection
from .numerics import Tensor, constant, gather_rows, tensor
from .text import TokenSequence


@dataclass
class LayerParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in self.__dict__.items()}


@dataclass
class TransformerParams:
    word_embeddings: Tensor          # (V, d), shared with the gate
    pos_embeddings: Tensor           # (P_max, d)
    layers: list[LayerParams]
    pool_q: Tensor                   # (d,)
    heads: int

    def __post_init__(self):
        d = self.word_embeddings.data.shape[1]
        if d % self.heads != 0:
            raise ValueError(f"model dim {d} not divisible by {self.heads} heads")

    @property
    def d(self) -> int:
        return self.word_embeddings.data.shape[1]

    @property
    def max_positions(self) -> int:
        return self.pos_embeddings.data.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            "embed.pos": self.pos_embeddings,
            "trans.pool.q": self.pool_q,
        }
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"trans.layer{i}"))
        return out


def init_transformer_params(
    word_embeddings: Tensor,
    n_layers: int,
    heads: int,
    max_positions: int,
    rng: np.random.Generator,
) -> TransformerParams:
    d = word_embeddings.data.shape[1]

    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return tensor(rng.uniform(-lim, lim, size=shape), requires_grad=True)

    def zeros(shape):
        return tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return tensor(np.ones(shape), requires_grad=True)

    layers = [
        LayerParams(
            wq=glorot((d, d)), bq=zeros(d),
            wk=glorot((d, d)), bk=zeros(d),
            wv=glorot((d, d)), bv=zeros(d),
            wo=glorot((d, d)), bo=zeros(d),
            ln1_gamma=ones(d), ln1_beta=zeros(d),
            ln2_gamma=ones(d), ln2_beta=zeros(d),
            ffn_w1=glorot((d, 4 * d)), ffn_b1=zeros(4 * d),
            ffn_w2=glorot((4 * d, d)), ffn_b2=zeros(d),
        )
        for _ in range(n_layers)
    ]
    return TransformerParams(
        word_embeddings=word_embeddings,
        pos_embeddings=tensor(rng.normal(0, 0.02, size=(max_positions, d)), requires_grad=True),
        layers=layers,
        pool_q=glorot((d,)),
        heads=heads,
    )


def _attention(x: Tensor, layer: LayerParams, heads: int, collect: list | None = None) -> Tensor:
    """Multi-head self attention over (B, n, d); all heads in one batch."""
    B, n, d = x.data.shape
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)

    def split(t):  # (B, n, d) -> (B, heads, n, dh)
        return nm.transpose(nm.reshape(t, (B, n, heads, dh)), (0, 2, 1, 3))

    q = split(nm.add(nm.matmul(x, layer.wq), layer.bq))
    k = split(nm.add(nm.matmul(x, layer.wk), layer.bk))
    v = split(nm.add(nm.matmul(x, layer.wv), layer.bv))
    scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), scale)
    alpha = nm.softmax(scores, axis=-1)
    if collect is not None:
        collect.append(alpha)
    ctx = nm.reshape(nm.transpose(nm.matmul(alpha, v), (0, 2, 1, 3)), (B, n, d))
    return nm.add(nm.matmul(ctx, layer.wo), layer.bo)


def encode_sequence(x: Tensor, params: TransformerParams, collect: list | None = None) -> Tensor:
    """Run the pre-norm layer stack; with zero layers this is the identity.

    Accepts one sequence (n, d) or a stack of equal-length sequences
    (B, n, d); sequences in a stack never attend to each other.
    """
    single = x.data.ndim == 2
    if single:
        x = nm.reshape(x, (1, *x.data.shape))
    for layer in params.layers:
        attn_in = nm.layer_norm(x, layer.ln1_gamma, layer.ln1_beta)
        x = nm.add(x, _attention(attn_in, layer, params.heads, collect))
        ffn_in = nm.layer_norm(x, layer.ln2_gamma, layer.ln2_beta)
        hidden = nm.relu(nm.add(nm.matmul(ffn_in, layer.ffn_w1), layer.ffn_b1))
        x = nm.add(x, nm.add(nm.matmul(hidden, layer.ffn_w2), layer.ffn_b2))
    if single:
        x = nm.reshape(x, x.data.shape[1:])
    return x


def weighted_pool(x: Tensor, query: Tensor) -> Tensor:
    """Attention-style pooling with a learnable query.

    (n, d) pools to (d,); a stack (B, n, d) pools each sequence to (B, d).
    """
    alpha = nm.softmax(nm.matmul(x, query), axis=-1)
    if x.data.ndim == 2:
        return nm.matmul(alpha, x)
    B, n, _ = x.data.shape
    pooled = nm.matmul(nm.reshape(alpha, (B, 1, n)), x)
    return nm.reshape(pooled, (B, x.data.shape[2]))


def _with_positions(x: Tensor, params: TransformerParams) -> Tensor:
    n = x.data.shape[0]
    if n > params.max_positions:
        raise ValueError(
            f"sequence length {n} exceeds max positions {params.max_positions}"
        )
    return nm.add(x, nm.narrow(params.pos_embeddings, 0, 0, n))


def encode_user(selections: list[GateSelection], params: TransformerParams) -> Tensor:
    """User embedding from the concatenated gated history.

    The weight-scaled gathered embeddings of all items are concatenated
    (ragged per-item lengths are fine), positions 0..T-1 are added over the
    concatenated sequence, and the encoded rows are weight-pooled.
    """
    parts = [s.gathered for s in selections if s.k_eff > 0]
    if not parts:
        raise ValueError("encode_user needs at least one selected token")
    x = _with_positions(nm.concat_rows(parts), params)
    encoded = encode_sequence(x, params)
    return weighted_pool(encoded, params.pool_q)


def encode_candidate(seq: TokenSequence, params: TransformerParams) -> Tensor:
    """Candidate embedding from the full (ungated) token sequence."""
    if len(seq) < 1:
        raise ValueError("cannot encode an empty candidate")
    emb = gather_rows(params.word_embeddings, seq.ids)
    x = _with_positions(emb, params)
    encoded = encode_sequence(x, params)
    return weighted_pool(encoded, params.pool_q)


def encode_candidates(seqs: list[TokenSequence], params: TransformerParams) -> Tensor:
    """All candidate embeddings as one (B, d) tensor, batching equal-length
    sequences through the encoder together. Same math as
    :func:`encode_candidate` per row, far fewer ops."""
    if not seqs:
        raise ValueError("no candidate sequences")
    by_len: dict[int, list[int]] = {}
    for i, seq in enumerate(seqs):
        if len(seq) < 1:
            raise ValueError("cannot encode an empty candidate")
        by_len.setdefault(len(seq), []).append(i)
    chunks = []
    order: list[int] = []
    for L in sorted(by_len):
        members = by_len[L]
        ids = np.array([seqs[i].ids for i in members], dtype=np.intp)
        emb = gather_rows(params.word_embeddings, ids)          # (G, L, d)
        if L > params.max_positions:
            raise ValueError(
                f"sequence length {L} exceeds max positions {params.max_positions}"
            )
        x = nm.add(emb, nm.narrow(params.pos_embeddings, 0, 0, L))
        encoded = encode_sequence(x, params)
        chunks.append(weighted_pool(encoded, params.pool_q))    # (G, d)
        order.extend(members)
    stacked = chunks[0] if len(chunks) == 1 else nm.concat_rows(chunks)
    if order == list(range(len(seqs))):
        return stacked
    inverse = np.argsort(order)
    return gather_rows(stacked, inverse)


def score(user: Tensor, cand: Tensor) -> Tensor:
    """Scaled inner product z = <u, c> / sqrt(d)."""
    if user.data.shape != cand.data.shape:
        raise ValueError(
            f"score dim mismatch: {user.data.shape} vs {cand.data.shape}"
        )
    d = user.data.shape[0]
    return nm.mul(nm.dot(user, cand), 1.0 / math.sqrt(d))


def click_loss(user: Tensor, positive: Tensor, negatives: list[Tensor]) -> Tensor:
    """Sampled-softmax click loss: -log p(positive | positive + negatives)."""
    if not negatives:
        raise ValueError("click_loss needs at least one negative")
    z_pos = score(user, positive)
    zs = [z_pos] + [score(user, n) for n in negatives]
    stacked = nm.concat_rows([nm.reshape(z, (1,)) for z in zs])
    return nm.sub(nm.logsumexp(stacked), z_pos)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(named: dict[str, Tensor], prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(named)
    manifest: dict = {"names": names, "shapes": {}, "offsets": {}}
    blob = bytearray()
    for name in names:
        arr = named[name].data
        manifest["shapes"][name] = list(arr.shape)
        manifest["offsets"][name] = len(blob)
        blob += arr.astype("<f8").tobytes()
    manifest["total_bytes"] = len(blob)
    with open(f"{prefix}.manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
    Path(f"{prefix}.bin").write_bytes(bytes(blob))


def load_checkpoint(prefix) -> dict[str, np.ndarray]:
    with open(f"{prefix}.manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    blob = Path(f"{prefix}.bin").read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise ValueError(f"checkpoint blob size mismatch for {prefix}")
    out = {}
    for name in manifest["names"]:
        shape = tuple(manifest["shapes"][name])
        off = manifest["offsets"][name]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        out[name] = arr.astype(np.float64).reshape(shape)
    return out


def apply_checkpoint(named: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    missing = sorted(set(named) - set(loaded))
    extra = sorted(set(loaded) - set(named))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={missing} extra={extra}")
    for name, t in named.items():
        if t.data.shape != loaded[name].shape:
            raise ValueError(
                f"checkpoint shape mismatch for {name}: "
                f"{loaded[name].shape} vs {t.data.shape}"
            )
        t.data[...] = loaded[name]
