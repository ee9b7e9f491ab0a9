"""Matching tokens and the parameter-shared Transformer that aggregates into them.

Sequences are ``(N, L, D)`` with one row per input column.  No positional
or modality encodings are added, so the token outputs do not depend on the
order of the context rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

MASK_FILL = -1e30


@dataclass
class TransformerConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 32
    ff_dim: int | None = None  # defaults to 4 * dim

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.ff_dim is None:
            self.ff_dim = 4 * self.dim


class MatchingTokens:
    def __init__(self, n_tokens: int, dim: int, rng: np.random.Generator, name: str = "tokens"):
        if n_tokens < 1:
            raise ValueError("need at least one matching token (U >= 1)")
        self.param = Tensor(rng.normal(size=(n_tokens, dim)), requires_grad=True, name=name)
        self.name = name

    @property
    def count(self) -> int:
        return self.param.shape[0]

    @property
    def params(self) -> dict[str, Tensor]:
        return {self.name: self.param}


def _tile(tokens: Tensor, n: int) -> Tensor:
    return nx.mul(Tensor(np.ones((n, 1, 1))), tokens)


def assemble_query(visual: Tensor, text: Tensor, text_mask: np.ndarray, tokens: MatchingTokens):
    """[image rows; text rows; token rows] -> (sequence, key mask).

    Accepts a single representation ``(rows, D)`` or a batch ``(N, rows, D)``.
    """
    single = visual.ndim == 2
    if single:
        visual = nx.reshape(visual, (1,) + visual.shape)
        text = nx.reshape(text, (1,) + text.shape)
        text_mask = np.asarray(text_mask, dtype=bool).reshape(1, -1)
    d = tokens.param.shape[1]
    if visual.shape[-1] != d or text.shape[-1] != d:
        raise DimensionError(f"feature dims differ: image {visual.shape[-1]}, text {text.shape[-1]}, tokens {d}")
    if visual.shape[0] != text.shape[0]:
        raise DimensionError("image and text batch sizes differ")
    n = visual.shape[0]
    seq = nx.concat([visual, text, _tile(tokens.param, n)], axis=1)
    mask = np.concatenate(
        [np.ones((n, visual.shape[1]), bool), np.asarray(text_mask, bool), np.ones((n, tokens.count), bool)], axis=1
    )
    return seq, mask


def assemble_target(visual: Tensor, tokens: MatchingTokens):
    """[image rows; token rows] -> (sequence, key mask)."""
    if visual.ndim == 2:
        visual = nx.reshape(visual, (1,) + visual.shape)
    d = tokens.param.shape[1]
    if visual.shape[-1] != d:
        raise DimensionError(f"feature dims differ: image {visual.shape[-1]}, tokens {d}")
    n = visual.shape[0]
    seq = nx.concat([visual, _tile(tokens.param, n)], axis=1)
    return seq, np.ones((n, seq.shape[1]), bool)


class Transformer:
    """Post-norm encoder stack (self-attention + ReLU feed-forward), dropout-free."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, prefix: str = "tf"):
        self.cfg = cfg
        self.prefix = prefix
        d, f = cfg.dim, cfg.ff_dim
        self.params: dict[str, Tensor] = {}

        def u(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

        for i in range(cfg.layers):
            p = f"{prefix}.{i}"
            for m in ("q", "k", "v", "o"):
                u(f"{p}.{m}.w", (d, d), d)
                u(f"{p}.{m}.b", (d,), d)
            u(f"{p}.ff1.w", (d, f), d)
            u(f"{p}.ff1.b", (f,), d)
            u(f"{p}.ff2.w", (f, d), f)
            u(f"{p}.ff2.b", (d,), f)
            for ln in ("ln1", "ln2"):
                self.params[f"{p}.{ln}.g"] = Tensor(np.ones(d), requires_grad=True, name=f"{p}.{ln}.g")
                self.params[f"{p}.{ln}.b"] = Tensor(np.zeros(d), requires_grad=True, name=f"{p}.{ln}.b")

    def _layer(self, i: int, x: Tensor, bias: np.ndarray, last_rows: int | None) -> Tensor:
        p = self.params
        pre = f"{self.prefix}.{i}"
        n, length, d = x.shape
        a = self.cfg.heads
        dh = d // a
        # the final layer only needs outputs at the token rows
        xq = x if last_rows is None else x[:, length - last_rows :, :]
        lq = xq.shape[1]

        def heads(t: Tensor, rows: int) -> Tensor:
            return nx.transpose(nx.reshape(t, (n, rows, a, dh)), (0, 2, 1, 3))

        q = heads(nx.linear(xq, p[f"{pre}.q.w"], p[f"{pre}.q.b"]), lq)
        k = heads(nx.linear(x, p[f"{pre}.k.w"], p[f"{pre}.k.b"]), length)
        v = heads(nx.linear(x, p[f"{pre}.v.w"], p[f"{pre}.v.b"]), length)
        scores = nx.matmul(q, nx.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh)) + bias
        att = nx.matmul(nx.softmax(scores, axis=-1), v)  # N, A, Lq, dh
        att = nx.reshape(nx.transpose(att, (0, 2, 1, 3)), (n, lq, d))
        att = nx.linear(att, p[f"{pre}.o.w"], p[f"{pre}.o.b"])
        h = nx.layer_norm(xq + att, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        ff = nx.linear(nx.relu(nx.linear(h, p[f"{pre}.ff1.w"], p[f"{pre}.ff1.b"])), p[f"{pre}.ff2.w"], p[f"{pre}.ff2.b"])
        return nx.layer_norm(h + ff, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])

    def __call__(self, seq: Tensor, key_mask: np.ndarray, n_tokens: int) -> Tensor:
        if seq.shape[1] < n_tokens:
            raise DimensionError("sequence shorter than the number of tokens")
        key_mask = np.asarray(key_mask, bool)
        if key_mask.shape != seq.shape[:2]:
            raise DimensionError(f"mask shape {key_mask.shape} does not match sequence {seq.shape[:2]}")
        if not key_mask[:, -n_tokens:].all():
            raise DimensionError("token rows must never be masked")
        bias = np.where(key_mask, 0.0, MASK_FILL)[:, None, None, :]
        x = seq
        for i in range(self.cfg.layers):
            last = n_tokens if i == self.cfg.layers - 1 else None
            x = self._layer(i, x, bias, last)
        return x


def aggregate(seq: Tensor, key_mask: np.ndarray, transformer: Transformer, n_tokens: int) -> Tensor:
    """Run the shared Transformer and return the ``(N, U, D)`` token outputs."""
    return transformer(seq, key_mask, n_tokens)


def normalize_tokens(psi: Tensor, eps: float = 1e-12) -> Tensor:
    """Unit-normalise each token vector (the columns of the D x U matrix)."""
    return nx.l2_normalize(psi, axis=-1, eps=eps)


def match_score(a, b) -> float:
    """Inner product of two normalised token matrices, flattened token by token."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"token matrices differ in shape: {a.shape} vs {b.shape}")
    return float(a.reshape(-1) @ b.reshape(-1))


def score_matrix(queries: Tensor, targets: Tensor) -> Tensor:
    """``(B, U, D)`` x ``(M, U, D)`` -> ``(B, M)`` flattened inner products."""
    if queries.shape[1:] != targets.shape[1:]:
        raise DimensionError(f"token matrices differ: {queries.shape[1:]} vs {targets.shape[1:]}")
    b, m = queries.shape[0], targets.shape[0]
    q = nx.reshape(queries, (b, -1))
    t = nx.reshape(targets, (m, -1))
    return nx.matmul(q, nx.transpose(t, None))


def avepool_score_matrix(queries: Tensor, targets: Tensor) -> Tensor:
    """Cosine between token-averaged vectors (the early-fusion ablation)."""
    q = nx.l2_normalize(nx.mean(queries, axis=1), axis=-1)
    t = nx.l2_normalize(nx.mean(targets, axis=1), axis=-1)
    return nx.matmul(q, nx.transpose(t, None))
