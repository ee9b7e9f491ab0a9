"""Multi-grained image and text encoders.

Representations are stored one column per row: an image becomes an
``(H*W + 3, D)`` array (local cells, then max/avg/gem global rows) and a
caption a ``(K + 1, D)`` array (word rows, then the sentence row).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

POOLS = ("max", "avg", "gem")


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class ImageEncoderConfig:
    in_channels: int = 3
    mid_channels: int = 16  # depth of the second-to-last map
    last_channels: int = 32  # depth of the last map
    input_size: int = 8
    grid: int = 4  # H = W of the second-to-last map
    reduced: int = 2  # H' = W' of the last map
    dim: int = 32
    gem_p: float = 3.0
    use_local: bool = True
    use_global: bool = True

    def __post_init__(self):
        if self.grid * self.grid < 4:
            raise ValueError("H*W must be at least 4")
        if self.input_size % self.grid or self.grid % self.reduced:
            raise ValueError("input_size, grid and reduced must divide evenly")
        if min(self.in_channels, self.mid_channels, self.last_channels, self.dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not (self.use_local or self.use_global):
            raise ValueError("at least one of the local/global branches must be on")

    @property
    def n_columns(self) -> int:
        return self.grid * self.grid * self.use_local + 3 * self.use_global


class ImageEncoder:
    """Two conv stages (X'' then strided X') feeding local and global affine heads."""

    def __init__(self, cfg: ImageEncoderConfig, rng: np.random.Generator, prefix: str = "img"):
        self.cfg = cfg
        c_in, c, c2, d = cfg.in_channels, cfg.mid_channels, cfg.last_channels, cfg.dim
        self.k1 = cfg.input_size // cfg.grid
        self.k2 = cfg.grid // cfg.reduced
        p = prefix
        self.params = {
            f"{p}.conv1.w": _uniform(rng, (c, c_in, self.k1, self.k1), c_in * self.k1**2, f"{p}.conv1.w"),
            f"{p}.conv1.b": _uniform(rng, (c,), c_in * self.k1**2, f"{p}.conv1.b"),
            f"{p}.conv2.w": _uniform(rng, (c2, c, self.k2, self.k2), c * self.k2**2, f"{p}.conv2.w"),
            f"{p}.conv2.b": _uniform(rng, (c2,), c * self.k2**2, f"{p}.conv2.b"),
            f"{p}.fc_local.w": _uniform(rng, (c, d), c, f"{p}.fc_local.w"),
            f"{p}.fc_local.b": _uniform(rng, (d,), c, f"{p}.fc_local.b"),
            f"{p}.fc_global.w": _uniform(rng, (c2, d), c2, f"{p}.fc_global.w"),
            f"{p}.fc_global.b": _uniform(rng, (d,), c2, f"{p}.fc_global.b"),
        }
        self.prefix = p

    def _p(self, key: str) -> Tensor:
        return self.params[f"{self.prefix}.{key}"]

    def feature_maps(self, pixels) -> tuple[Tensor, Tensor]:
        """Rectified second-to-last ``(N, C, H, W)`` and last ``(N, C', H', W')`` maps."""
        x = nx.as_tensor(pixels)
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
            raise DimensionError(
                f"expected (N, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}) pixels, got {x.shape}"
            )
        mid = nx.relu(nx.conv2d(x, self._p("conv1.w"), self._p("conv1.b"), stride=self.k1))
        last = nx.relu(nx.conv2d(mid, self._p("conv2.w"), self._p("conv2.b"), stride=self.k2))
        return mid, last

    def __call__(self, pixels) -> Tensor:
        mid, last = self.feature_maps(pixels)
        n, c = mid.shape[:2]
        parts = []
        if self.cfg.use_local:
            cells = nx.transpose(nx.reshape(mid, (n, c, -1)), (0, 2, 1))  # N, HW, C
            parts.append(nx.linear(cells, self._p("fc_local.w"), self._p("fc_local.b")))
        if self.cfg.use_global:
            pooled = nx.stack([nx.pool(last, k, self.cfg.gem_p) for k in POOLS], axis=1)  # N, 3, C'
            parts.append(nx.linear(pooled, self._p("fc_global.w"), self._p("fc_global.b")))
        return parts[0] if len(parts) == 1 else nx.concat(parts, axis=1)


def encode_image(pixels, encoder: ImageEncoder) -> Tensor:
    """Single image ``(C_in, H0, W0)`` -> ``(H*W + 3, D)`` representation."""
    x = nx.as_tensor(pixels)
    if x.ndim != 3:
        raise DimensionError(f"expected a (C, H, W) image, got {x.shape}")
    out = encoder(nx.reshape(x, (1,) + x.shape))
    return nx.reshape(out, out.shape[1:])


@dataclass
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    dim: int = 32
    max_len: int = 32
    pad_id: int = 0
    use_local: bool = True
    use_global: bool = True

    def __post_init__(self):
        if not 0 <= self.pad_id < self.vocab_size:
            raise ValueError("pad id must be < vocab size")
        if not (self.use_local or self.use_global):
            raise ValueError("at least one of the word/sentence branches must be on")

    def n_columns(self, k: int) -> int:
        return k * self.use_local + self.use_global


class TextEncoder:
    """Embedding, single-layer LSTM, and separate word / sentence affine heads."""

    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator, prefix: str = "txt"):
        self.cfg = cfg
        e, h, d = cfg.embed_dim, cfg.hidden_dim, cfg.dim
        p = prefix
        lstm = lambda shape, n: Tensor(rng.uniform(-0.08, 0.08, size=shape), requires_grad=True, name=n)
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget gate
        self.params = {
            f"{p}.embed": Tensor(rng.normal(scale=1.0, size=(cfg.vocab_size, e)), requires_grad=True, name=f"{p}.embed"),
            f"{p}.lstm.wx": lstm((e, 4 * h), f"{p}.lstm.wx"),
            f"{p}.lstm.wh": lstm((h, 4 * h), f"{p}.lstm.wh"),
            f"{p}.lstm.b": Tensor(bias, requires_grad=True, name=f"{p}.lstm.b"),
            f"{p}.fc_word.w": _uniform(rng, (h, d), h, f"{p}.fc_word.w"),
            f"{p}.fc_word.b": _uniform(rng, (d,), h, f"{p}.fc_word.b"),
            f"{p}.fc_sent.w": _uniform(rng, (h, d), h, f"{p}.fc_sent.w"),
            f"{p}.fc_sent.b": _uniform(rng, (d,), h, f"{p}.fc_sent.b"),
        }
        self.prefix = p

    def _p(self, key: str) -> Tensor:
        return self.params[f"{self.prefix}.{key}"]

    def hidden_states(self, ids: np.ndarray) -> Tensor:
        """LSTM outputs ``(N, K, hidden)`` for a padded id batch ``(N, K)``."""
        n, k = ids.shape
        h_dim = self.cfg.hidden_dim
        x = nx.embedding(self._p("embed"), ids)
        xw = nx.linear(x, self._p("lstm.wx"), self._p("lstm.b"))  # N, K, 4H
        h = Tensor(np.zeros((n, h_dim)))
        c = Tensor(np.zeros((n, h_dim)))
        outs = []
        for t in range(k):
            gates = xw[:, t, :] + nx.matmul(h, self._p("lstm.wh"))
            i = nx.sigmoid(gates[:, :h_dim])
            f = nx.sigmoid(gates[:, h_dim : 2 * h_dim])
            g = nx.tanh(gates[:, 2 * h_dim : 3 * h_dim])
            o = nx.sigmoid(gates[:, 3 * h_dim :])
            c = f * c + i * g
            h = o * nx.tanh(c)
            outs.append(h)
        return nx.stack(outs, axis=1)

    def __call__(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Batch encode -> (``(N, cols, D)`` representation, ``(N, cols)`` validity mask).

        Word rows beyond each sequence's length are padding and flagged
        False in the mask; the sentence row reads the last valid state.
        """
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        n, k = ids.shape
        hs = self.hidden_states(ids)
        parts, masks = [], []
        if self.cfg.use_local:
            parts.append(nx.linear(hs, self._p("fc_word.w"), self._p("fc_word.b")))
            masks.append(np.arange(k)[None, :] < lengths[:, None])
        if self.cfg.use_global:
            last = hs[np.arange(n), lengths - 1]
            sent = nx.linear(last, self._p("fc_sent.w"), self._p("fc_sent.b"))
            parts.append(nx.reshape(sent, (n, 1, self.cfg.dim)))
            masks.append(np.ones((n, 1), dtype=bool))
        rep = parts[0] if len(parts) == 1 else nx.concat(parts, axis=1)
        return rep, np.concatenate(masks, axis=1)


def pad_captions(captions, max_len: int, pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pad to the longest caption in the batch; masked pad rows never reach valid outputs."""
    lengths = np.array([len(c) for c in captions], dtype=np.int64)
    if lengths.size and (lengths.min() < 1 or lengths.max() > max_len):
        raise ValueError(f"caption lengths must lie in [1, {max_len}]")
    width = int(lengths.max()) if lengths.size else 1
    ids = np.full((len(captions), width), pad_id, dtype=np.int64)
    for i, c in enumerate(captions):
        ids[i, : len(c)] = c
    return ids, lengths


def encode_text(token_ids, encoder: TextEncoder) -> Tensor:
    """Single caption -> ``(K + 1, D)``; trailing pad ids are not counted in K."""
    cfg = encoder.cfg
    ids = [int(t) for t in token_ids]
    while ids and ids[-1] == cfg.pad_id:
        ids.pop()
    if not ids:
        raise ValueError("empty token sequence")
    if len(ids) > cfg.max_len:
        raise ValueError(f"sequence longer than max_len={cfg.max_len}")
    bad = [t for t in ids if not 0 <= t < cfg.vocab_size]
    if bad:
        raise ValueError(f"out-of-vocabulary ids {bad}")
    arr = np.array([ids])
    rep, _ = encoder(arr, np.array([len(ids)]))
    return nx.reshape(rep, rep.shape[1:])
