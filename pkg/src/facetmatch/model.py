"""The full retrieval network: encoders -> token aggregation -> normalised token matrices."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .encoders import ImageEncoder, ImageEncoderConfig, TextEncoder, TextEncoderConfig, pad_captions
from .matcher import (
    MatchingTokens,
    Transformer,
    TransformerConfig,
    assemble_query,
    assemble_target,
    normalize_tokens,
)
from .numerics import Tensor


@dataclass
class NetConfig:
    vocab_size: int
    dim: int = 32
    n_tokens: int = 8
    layers: int = 2
    heads: int = 4
    in_channels: int = 3
    input_size: int = 8
    grid: int = 4
    reduced: int = 2
    mid_channels: int = 16
    last_channels: int = 32
    embed_dim: int = 32
    hidden_dim: int = 32
    max_len: int = 32
    gem_p: float = 3.0
    use_local: bool = True
    use_global: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class RetrievalNet:
    """Shared mapping for queries (image + caption) and targets (image) into ``(U, D)`` token matrices."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 10])
        self.image = ImageEncoder(
            ImageEncoderConfig(
                in_channels=cfg.in_channels,
                mid_channels=cfg.mid_channels,
                last_channels=cfg.last_channels,
                input_size=cfg.input_size,
                grid=cfg.grid,
                reduced=cfg.reduced,
                dim=cfg.dim,
                gem_p=cfg.gem_p,
                use_local=cfg.use_local,
                use_global=cfg.use_global,
            ),
            rng,
        )
        self.text = TextEncoder(
            TextEncoderConfig(
                vocab_size=cfg.vocab_size,
                embed_dim=cfg.embed_dim,
                hidden_dim=cfg.hidden_dim,
                dim=cfg.dim,
                max_len=cfg.max_len,
                use_local=cfg.use_local,
                use_global=cfg.use_global,
            ),
            rng,
        )
        self.tokens = MatchingTokens(cfg.n_tokens, cfg.dim, rng)
        self.transformer = Transformer(TransformerConfig(cfg.layers, cfg.heads, cfg.dim), rng)
        self.params: dict[str, Tensor] = {}
        for part in (self.image.params, self.text.params, self.tokens.params, self.transformer.params):
            self.params.update(part)

    # ------------------------------------------------------------ embedding

    def target_tokens(self, images) -> Tensor:
        """Raw aggregated token outputs ``(N, U, D)`` for target images."""
        seq, mask = assemble_target(self.image(images), self.tokens)
        return self.transformer(seq, mask, self.tokens.count)

    def query_tokens(self, images, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        text, tmask = self.text(ids, lengths)
        seq, mask = assemble_query(self.image(images), text, tmask, self.tokens)
        return self.transformer(seq, mask, self.tokens.count)

    def embed_targets(self, images) -> Tensor:
        return normalize_tokens(self.target_tokens(images))

    def embed_queries(self, images, captions) -> Tensor:
        ids, lengths = pad_captions(captions, self.cfg.max_len)
        return normalize_tokens(self.query_tokens(images, ids, lengths))

    # ------------------------------------------------------------ state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def config_dict(self) -> dict:
        return asdict(self.cfg)


def embed_in_chunks(fn, n: int, chunk: int = 64, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn(slice)`` over fixed chunks without recording graphs.

    Chunk boundaries do not depend on ``workers``, and results are written
    back in chunk order, so the output is identical for any worker count.
    """
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run(b):
        with nx.no_grad():
            return fn(slice(*b)).data

    if workers <= 1 or len(bounds) <= 1:
        parts = [run(b) for b in bounds]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    return np.concatenate(parts, axis=0)
