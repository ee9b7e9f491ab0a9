"""Trainable difference captioner: image pair -> per-slot change -> templated caption."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Adam, Tensor
from .synthio import CaptionParseError, Catalog, Triplet
from .textmetrics import CaptionMetrics, corpus_metrics

log = logging.getLogger(__name__)


@dataclass
class CaptionerConfig:
    hidden: int = 64
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "CaptionerConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class DiffCaptioner:
    """Siamese image encoder, a head over (target - reference, target) features,
    and one classifier per slot over {unchanged, value_0, ..., value_n}."""

    def __init__(self, catalog: Catalog, cfg: CaptionerConfig):
        self.cfg = cfg
        self.slot_sizes = [len(s.values) for s in catalog.slots]
        self.skipped = 0
        spec = catalog.render_spec
        n_in = spec.channels * spec.height * spec.width
        h = cfg.hidden
        rng = np.random.default_rng([cfg.seed, 30])

        def u(name, shape, fan_in):
            b = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True, name=name)

        self.params = {
            "enc.w": u("enc.w", (n_in, h), n_in),
            "enc.b": u("enc.b", (h,), n_in),
            "head.w": u("head.w", (2 * h, h), 2 * h),
            "head.b": u("head.b", (h,), 2 * h),
        }
        for i, n in enumerate(self.slot_sizes):
            self.params[f"slot{i}.w"] = u(f"slot{i}.w", (h, n + 1), h)
            self.params[f"slot{i}.b"] = u(f"slot{i}.b", (n + 1,), h)

    def logits(self, ref_images: np.ndarray, tgt_images: np.ndarray) -> list[Tensor]:
        n = len(ref_images)
        both = np.concatenate([ref_images, tgt_images]).reshape(2 * n, -1)
        feats = nx.relu(nx.linear(both, self.params["enc.w"], self.params["enc.b"]))
        fr, ft = feats[:n], feats[n:]
        z = nx.relu(nx.linear(nx.concat([ft - fr, ft], axis=1), self.params["head.w"], self.params["head.b"]))
        return [nx.linear(z, self.params[f"slot{i}.w"], self.params[f"slot{i}.b"]) for i in range(len(self.slot_sizes))]

    def predict(self, ref_images: np.ndarray, tgt_images: np.ndarray) -> np.ndarray:
        """``(N, F)`` class per slot: 0 = unchanged, v + 1 = new value v."""
        with nx.no_grad():
            return np.stack([lg.data.argmax(axis=1) for lg in self.logits(ref_images, tgt_images)], axis=1)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        nx.save_arrays(path, {k: p.data for k, p in self.params.items()}, {"captioner": asdict(self.cfg)})

    @classmethod
    def load(cls, path: str | Path, catalog: Catalog) -> "DiffCaptioner":
        arrays, meta = nx.load_arrays(path)
        model = cls(catalog, CaptionerConfig.from_dict(meta["captioner"]))
        for k, p in model.params.items():
            p.data = arrays[k]
        return model


def slot_targets(catalog: Catalog, triplets: Sequence[Triplet]) -> tuple[np.ndarray, list[int], int]:
    """Per-slot class labels parsed from captions; unparseable captions are skipped."""
    rows, keep, skipped = [], [], 0
    f = len(catalog.slots)
    for i, t in enumerate(triplets):
        try:
            diff = catalog.grammar.parse(catalog.caption_words(t.caption))
        except CaptionParseError:
            skipped += 1
            continue
        rows.append([diff[s] + 1 if s in diff else 0 for s in range(f)])
        keep.append(i)
    return np.array(rows, dtype=np.int64).reshape(-1, f), keep, skipped


def train_captioner(triplets: Sequence[Triplet], catalog: Catalog, cfg: CaptionerConfig | None = None) -> DiffCaptioner:
    cfg = cfg or CaptionerConfig()
    triplets = list(triplets)
    if not triplets:
        raise ValueError("no triplets to train the captioner on")
    labels, keep, skipped = slot_targets(catalog, triplets)
    if skipped:
        log.warning("skipped %d triplets with unparseable captions", skipped)
    if not keep:
        raise ValueError("no parseable captions")
    refs = np.array([triplets[i].ref_id for i in keep])
    tgts = np.array([triplets[i].tgt_id for i in keep])
    images = catalog.images()
    model = DiffCaptioner(catalog, cfg)
    opt = Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 31])
    n = len(keep)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            losses = []
            for si, lg in enumerate(model.logits(images[refs[idx]], images[tgts[idx]])):
                logp = nx.log_softmax(lg, axis=1)
                losses.append(-nx.mean(logp[np.arange(len(idx)), labels[idx, si]]))
            loss = nx.tsum(nx.stack(losses)) * (1.0 / len(losses))
            loss.backward()
            opt.step()
    model.skipped = skipped
    return model


def caption_pairs(
    model: DiffCaptioner,
    catalog: Catalog,
    pairs: Sequence[tuple[int, int]],
    noise: float = 0.0,
    seed: int = 0,
) -> list[tuple[int, ...]]:
    """Greedy captions for (ref, tgt) pairs.

    ``noise`` is the probability of replacing each slot prediction with a
    different random class, for stress-testing the pseudo-triplet filter.
    """
    if not pairs:
        return []
    images = catalog.images()
    refs = np.array([p[0] for p in pairs])
    tgts = np.array([p[1] for p in pairs])
    pred = model.predict(images[refs], images[tgts])
    if noise > 0:
        rng = np.random.default_rng([seed, 32])
        for si, n_vals in enumerate(model.slot_sizes):
            flip = rng.random(len(pairs)) < noise
            shift = rng.integers(1, n_vals + 1, size=len(pairs))
            pred[:, si] = np.where(flip, (pred[:, si] + shift) % (n_vals + 1), pred[:, si])
    pred[refs == tgts] = 0  # an item compared with itself has no difference
    out = []
    for row in pred:
        diff = {si: int(c) - 1 for si, c in enumerate(row) if c > 0}
        out.append(catalog.vocab.encode(catalog.grammar.realize(diff)))
    return out


def generate_caption(model: DiffCaptioner, catalog: Catalog, ref_id: int, tgt_id: int, noise: float = 0.0, seed: int = 0) -> tuple[int, ...]:
    return caption_pairs(model, catalog, [(ref_id, tgt_id)], noise, seed)[0]


def slot_accuracy(model: DiffCaptioner, catalog: Catalog, triplets: Sequence[Triplet]) -> float:
    labels, keep, _ = slot_targets(catalog, triplets)
    images = catalog.images()
    refs = np.array([triplets[i].ref_id for i in keep])
    tgts = np.array([triplets[i].tgt_id for i in keep])
    return float((model.predict(images[refs], images[tgts]) == labels).mean())


def caption_metrics(model: DiffCaptioner, catalog: Catalog, triplets: Sequence[Triplet]) -> CaptionMetrics:
    """BLEU-1 / ROUGE-L of generated captions against the triplets' captions."""
    gen = caption_pairs(model, catalog, [(t.ref_id, t.tgt_id) for t in triplets])
    return corpus_metrics([catalog.caption_words(g) for g in gen], [catalog.caption_words(t.caption) for t in triplets])
