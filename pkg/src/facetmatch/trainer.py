"""Supervised training, R@k evaluation, triplet scoring and checkpoint files."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .model import NetConfig, RetrievalNet, embed_in_chunks
from .numerics import Adam, AdamState, TrainingError
from .objective import LossConfig, ranking_loss, ortho_loss
from .synthio import Catalog, Triplet

log = logging.getLogger(__name__)

ABLATIONS = ("one_factor", "avepool", "no_ortho", "no_global", "no_local")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    decay_epoch: int = 10  # lr is multiplied by decay_factor from this (1-based) epoch on
    decay_factor: float = 0.1
    seed: int = 0
    n_tokens: int = 8
    lam: float = 0.1
    tau: float = 10.0
    temperature_mode: str = "multiply"
    dim: int = 32
    layers: int = 2
    heads: int = 4
    max_len: int = 32
    one_factor: bool = False
    avepool: bool = False
    no_ortho: bool = False
    no_global: bool = False
    no_local: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.no_global and self.no_local:
            raise ValueError("no_global and no_local cannot both be set")

    @property
    def effective_tokens(self) -> int:
        return 1 if self.one_factor else self.n_tokens

    @property
    def effective_lam(self) -> float:
        return 0.0 if self.no_ortho else self.lam

    def loss_config(self) -> LossConfig:
        return LossConfig(
            tau=self.tau,
            lam=self.effective_lam,
            temperature_mode=self.temperature_mode,
            scoring="avepool" if self.avepool else "sum",
        )

    def net_config(self, catalog: Catalog) -> NetConfig:
        spec = catalog.render_spec
        return NetConfig(
            vocab_size=len(catalog.vocab),
            dim=self.dim,
            n_tokens=self.effective_tokens,
            layers=self.layers,
            heads=self.heads,
            in_channels=spec.channels,
            input_size=spec.height,
            max_len=self.max_len,
            use_local=not self.no_local,
            use_global=not self.no_global,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Checkpoint:
    net: RetrievalNet
    train_config: TrainConfig
    optimizer: AdamState | None = None
    curve: list[dict] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return self.net.cfg.n_tokens

    def fingerprint(self) -> str:
        return self.net.fingerprint()

    def save(self, path: str | Path) -> None:
        arrays = {f"param/{k}": v for k, v in self.net.state_dict().items()}
        opt = None
        if self.optimizer is not None:
            s = self.optimizer
            for k, v in s.m.items():
                arrays[f"adam_m/{k}"] = v
            for k, v in s.v.items():
                arrays[f"adam_v/{k}"] = v
            opt = {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step}
        meta = {
            "net": self.net.config_dict(),
            "train": asdict(self.train_config),
            "optimizer": opt,
            "curve": self.curve,
        }
        nx.save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        arrays, meta = nx.load_arrays(path)
        net = RetrievalNet(NetConfig.from_dict(meta["net"]))
        net.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        opt = None
        if meta.get("optimizer"):
            o = meta["optimizer"]
            opt = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"])
            opt.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")}
            opt.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}
        return cls(net, TrainConfig.from_dict(meta["train"]), opt, meta.get("curve", []))


# ---------------------------------------------------------------- training


def batch_loss(net: RetrievalNet, catalog: Catalog, batch: Sequence[Triplet], loss_cfg: LossConfig):
    images = catalog.images()
    refs = np.array([t.ref_id for t in batch])
    tgts = np.array([t.tgt_id for t in batch])
    q = net.embed_queries(images[refs], [t.caption for t in batch])
    t = net.embed_targets(images[tgts])
    rank = ranking_loss(q, t, loss_cfg)
    if loss_cfg.lam:
        orth = ortho_loss(q, t)
        return rank + orth * loss_cfg.lam, rank, orth
    return rank, rank, None


def train(triplets: Sequence[Triplet], catalog: Catalog, cfg: TrainConfig | None = None, eval_fn=None) -> Checkpoint:
    """Minimise ranking + lambda * ortho with Adam; returns the final checkpoint.

    ``eval_fn(checkpoint, epoch)``, if given, is called after each epoch and
    its return value stored in the curve under ``"eval"``.
    """
    cfg = cfg or TrainConfig()
    triplets = list(triplets)
    if not triplets:
        raise ValueError("no training triplets")
    net = RetrievalNet(cfg.net_config(catalog), seed=cfg.seed)
    opt = Adam(net.params, lr=cfg.lr)
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng([cfg.seed, 20])
    ckpt = Checkpoint(net, cfg, opt.state, [])
    n = len(triplets)
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr * (cfg.decay_factor if epoch >= cfg.decay_epoch > 0 else 1.0)
        order = rng.permutation(n)
        totals = np.zeros(3)
        steps = 0
        for s in range(0, n, cfg.batch_size):
            batch = [triplets[i] for i in order[s : s + cfg.batch_size]]
            opt.zero_grad()
            loss, rank, orth = batch_loss(net, catalog, batch, loss_cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {steps}")
            loss.backward()
            opt.step()
            totals += (value, rank.item(), 0.0 if orth is None else orth.item())
            steps += 1
        row = {"epoch": epoch, "lr": opt.lr, "loss": totals[0] / steps, "ranking": totals[1] / steps, "ortho": totals[2] / steps}
        if eval_fn is not None:
            row["eval"] = eval_fn(ckpt, epoch)
        ckpt.curve.append(row)
        log.info("epoch %d loss %.4f", epoch, row["loss"])
    return ckpt


def initial_loss(triplets: Sequence[Triplet], catalog: Catalog, cfg: TrainConfig) -> float:
    """Mean batch loss of the untrained network over one seeded pass."""
    net = RetrievalNet(cfg.net_config(catalog), seed=cfg.seed)
    loss_cfg = cfg.loss_config()
    order = np.random.default_rng([cfg.seed, 20]).permutation(len(triplets))
    vals = []
    with nx.no_grad():
        for s in range(0, len(triplets), cfg.batch_size):
            batch = [triplets[i] for i in order[s : s + cfg.batch_size]]
            vals.append(batch_loss(net, catalog, batch, loss_cfg)[0].item())
    return float(np.mean(vals))


# ---------------------------------------------------------------- evaluation


@dataclass
class RecallReport:
    recalls: dict[int, float]
    gallery_size: int
    n_queries: int

    @property
    def average(self) -> float:
        return float(np.mean(list(self.recalls.values())))

    def to_dict(self) -> dict:
        return {
            "recall": {str(k): v for k, v in sorted(self.recalls.items())},
            "average": self.average,
            "gallery_size": self.gallery_size,
            "n_queries": self.n_queries,
        }


class MissingTargetError(KeyError):
    pass


def target_ranks(scores: np.ndarray, gallery_ids: np.ndarray, target_pos: np.ndarray) -> np.ndarray:
    """1-based rank of each query's target under (score desc, gallery id asc)."""
    tgt_scores = scores[np.arange(len(scores)), target_pos][:, None]
    tgt_ids = gallery_ids[target_pos][:, None]
    ahead = (scores > tgt_scores) | ((scores == tgt_scores) & (gallery_ids[None, :] < tgt_ids))
    return ahead.sum(axis=1) + 1


def recall_report(ranks: np.ndarray, ks: Sequence[int], gallery_size: int) -> RecallReport:
    return RecallReport({int(k): float(np.mean(ranks <= k)) for k in ks}, gallery_size, len(ranks))


class GalleryCache:
    """Target-side embeddings keyed by (checkpoint fingerprint, gallery ids)."""

    def __init__(self):
        self._store: dict[tuple, np.ndarray] = {}

    def get(self, ckpt: Checkpoint, catalog: Catalog, gallery_ids: np.ndarray, workers: int = 1) -> np.ndarray:
        key = (ckpt.fingerprint(), gallery_ids.tobytes())
        if key not in self._store:
            self._store.clear()
            images = catalog.images()[gallery_ids]
            self._store[key] = embed_in_chunks(lambda sl: ckpt.net.embed_targets(images[sl]), len(gallery_ids), workers=workers)
        return self._store[key]


_cache = GalleryCache()


def query_embeddings(ckpt: Checkpoint, catalog: Catalog, refs: Sequence[int], captions: Sequence[Sequence[int]], workers: int = 1) -> np.ndarray:
    images = catalog.images()[np.asarray(refs, dtype=np.int64)]
    return embed_in_chunks(lambda sl: ckpt.net.embed_queries(images[sl], captions[sl]), len(refs), workers=workers)


def pairwise_scores(ckpt: Checkpoint, q: np.ndarray, g: np.ndarray) -> np.ndarray:
    if ckpt.train_config.avepool:
        qa = q.mean(axis=1)
        ga = g.mean(axis=1)
        qa /= np.maximum(np.linalg.norm(qa, axis=1, keepdims=True), 1e-12)
        ga /= np.maximum(np.linalg.norm(ga, axis=1, keepdims=True), 1e-12)
        return qa @ ga.T
    return q.reshape(len(q), -1) @ g.reshape(len(g), -1).T


def score_queries(ckpt: Checkpoint, catalog: Catalog, queries: Sequence[Triplet], gallery_ids, workers: int = 1) -> np.ndarray:
    gallery_ids = np.asarray(gallery_ids, dtype=np.int64)
    g = _cache.get(ckpt, catalog, gallery_ids, workers)
    q = query_embeddings(ckpt, catalog, [t.ref_id for t in queries], [t.caption for t in queries], workers)
    return pairwise_scores(ckpt, q, g)


def evaluate(
    ckpt: Checkpoint,
    queries: Sequence[Triplet],
    gallery: Sequence[int] | Catalog,
    catalog: Catalog | None = None,
    ks: Sequence[int] = (1, 10, 50),
    workers: int = 1,
) -> RecallReport:
    """Rank ``gallery`` for each (reference, caption) query and report R@k."""
    if isinstance(gallery, Catalog):
        catalog = gallery
        gallery = [it.id for it in gallery.items]
    if catalog is None:
        raise ValueError("a catalog is needed to render gallery items")
    gallery_ids = np.asarray(gallery, dtype=np.int64)
    pos = {int(g): i for i, g in enumerate(gallery_ids)}
    target_pos = []
    for i, t in enumerate(queries):
        if t.tgt_id not in pos:
            raise MissingTargetError(f"query {i} (ref {t.ref_id}): target {t.tgt_id} not in gallery")
        target_pos.append(pos[t.tgt_id])
    scores = score_queries(ckpt, catalog, queries, gallery_ids, workers)
    ranks = target_ranks(scores, gallery_ids, np.array(target_pos, dtype=np.int64))
    return recall_report(ranks, ks, len(gallery_ids))


def score_triplet(ckpt: Checkpoint, triplet: Triplet, catalog: Catalog) -> float:
    return float(score_triplets(ckpt, [triplet], catalog)[0])


def score_triplets(ckpt: Checkpoint, triplets: Sequence[Triplet], catalog: Catalog) -> np.ndarray:
    """Match score of each triplet's query against its own target."""
    for t in triplets:
        catalog.item(t.ref_id), catalog.item(t.tgt_id)
    if not triplets:
        return np.zeros(0)
    images = catalog.images()
    tgts = np.array([t.tgt_id for t in triplets])
    q = query_embeddings(ckpt, catalog, [t.ref_id for t in triplets], [t.caption for t in triplets])
    g = embed_in_chunks(lambda sl: ckpt.net.embed_targets(images[tgts[sl]]), len(tgts))
    if ckpt.train_config.avepool:
        return np.array([pairwise_scores(ckpt, q[i : i + 1], g[i : i + 1])[0, 0] for i in range(len(q))])
    return np.einsum("nud,nud->n", q, g)


def image_similarity(ckpt: Checkpoint, catalog: Catalog, a_ids, b_ids) -> np.ndarray:
    """Target-path similarity of item pairs, scaled to [-1, 1]."""
    ids = np.arange(len(catalog))
    g = _cache.get(ckpt, catalog, ids)
    a = g[np.asarray(a_ids, dtype=np.int64)]
    b = g[np.asarray(b_ids, dtype=np.int64)]
    return np.einsum("nud,nud->n", a, b) / ckpt.n_tokens


def all_image_similarity(ckpt: Checkpoint, catalog: Catalog) -> np.ndarray:
    g = _cache.get(ckpt, catalog, np.arange(len(catalog)))
    flat = g.reshape(len(g), -1)
    return flat @ flat.T / ckpt.n_tokens


def write_metrics(out_dir: str | Path, config: dict, ckpt: Checkpoint, reports: dict[str, RecallReport]) -> None:
    """metrics.json plus a CSV mirror of the per-epoch curve and final recalls."""
    out = Path(out_dir)
    doc = {
        "config": config,
        "curve": ckpt.curve,
        "reports": {k: r.to_dict() for k, r in sorted(reports.items())},
    }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = ["split,k,recall"]
    for name, r in sorted(reports.items()):
        for k, v in sorted(r.recalls.items()):
            lines.append(f"{name},{k},{v!r}")
        lines.append(f"{name},avg,{r.average!r}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
