"""Iterative dual self-training: mine unlabeled pairs, caption, filter by match score, retrain."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .captioner import CaptionerConfig, DiffCaptioner, caption_metrics, caption_pairs, train_captioner
from .synthio import Catalog, Pair, Triplet
from .textmetrics import CaptionMetrics
from .trainer import (
    Checkpoint,
    RecallReport,
    TrainConfig,
    evaluate,
    image_similarity,
    recall_report,
    score_triplets,
    target_ranks,
    train,
)

log = logging.getLogger(__name__)

STRATEGIES = ("tfidf_title", "similarity_band", "taxonomy_visual")


# ---------------------------------------------------------------- model port


class CirModelPort(Protocol):
    """What a retrieval model must provide to ride the self-training loop."""

    def train(self, triplets: Sequence[Triplet], catalog: Catalog, seed: int) -> Any: ...

    def score_triplets(self, model: Any, triplets: Sequence[Triplet], catalog: Catalog) -> np.ndarray: ...

    def evaluate(self, model: Any, queries: Sequence[Triplet], catalog: Catalog) -> RecallReport: ...

    def image_similarity(self, model: Any, catalog: Catalog, a_ids, b_ids) -> np.ndarray: ...


@dataclass
class MatcherPort:
    """The token-matching network behind the port."""

    config: TrainConfig = field(default_factory=TrainConfig)
    ks: tuple[int, ...] = (1, 10, 50)

    def train(self, triplets, catalog, seed):
        return train(triplets, catalog, dataclasses.replace(self.config, seed=seed))

    def score_triplets(self, model: Checkpoint, triplets, catalog):
        return score_triplets(model, triplets, catalog)

    def evaluate(self, model: Checkpoint, queries, catalog):
        return evaluate(model, queries, catalog, ks=self.ks)

    def image_similarity(self, model: Checkpoint, catalog, a_ids, b_ids):
        return image_similarity(model, catalog, a_ids, b_ids)


@dataclass
class AttributeBagPort:
    """Counting baseline: caption tokens vote for (slot, value) changes seen in training.

    A query predicts the target's attributes as the reference's, overridden
    wherever a caption token has pointed to a slot change with probability
    above ``threshold``; candidates score by the number of agreeing slots.
    """

    threshold: float = 0.5
    ks: tuple[int, ...] = (1, 10, 50)

    def train(self, triplets, catalog, seed):
        f = len(catalog.slots)
        width = max(len(s.values) for s in catalog.slots)
        counts = np.zeros((len(catalog.vocab), f, width))
        totals = np.zeros(len(catalog.vocab))
        for t in triplets:
            diff = catalog.diff(t.ref_id, t.tgt_id)
            for w in set(t.caption):
                totals[w] += 1
                for s, v in diff.items():
                    counts[w, s, v] += 1
        return counts / np.maximum(totals, 1)[:, None, None]

    def _predict(self, model, catalog, triplets) -> np.ndarray:
        out = np.array([catalog.items[t.ref_id].attributes for t in triplets], dtype=np.int64).reshape(-1, len(catalog.slots))
        for i, t in enumerate(triplets):
            vote = model[list(t.caption)].max(axis=0)  # F x values
            for s in range(vote.shape[0]):
                if vote[s].max() > self.threshold:
                    out[i, s] = int(vote[s].argmax())
        return out

    def _attrs(self, catalog) -> np.ndarray:
        return np.array([it.attributes for it in catalog.items], dtype=np.int64)

    def score_triplets(self, model, triplets, catalog):
        pred = self._predict(model, catalog, triplets)
        tgt = self._attrs(catalog)[[t.tgt_id for t in triplets]]
        return (pred == tgt).sum(axis=1).astype(float)

    def evaluate(self, model, queries, catalog):
        pred = self._predict(model, catalog, queries)
        scores = (pred[:, None, :] == self._attrs(catalog)[None, :, :]).sum(axis=2).astype(float)
        ids = np.arange(len(catalog))
        ranks = target_ranks(scores, ids, np.array([t.tgt_id for t in queries]))
        return recall_report(ranks, self.ks, len(ids))

    def image_similarity(self, model, catalog, a_ids, b_ids):
        attrs = self._attrs(catalog)
        return (attrs[np.asarray(a_ids)] == attrs[np.asarray(b_ids)]).mean(axis=1)


# ---------------------------------------------------------------- mining


@dataclass
class MiningStrategy:
    kind: str = "taxonomy_visual"
    budget: int | None = None  # M; None keeps every mined pair
    band_stat: str = "variance"  # half-width of the similarity band: "variance" or "std"
    band_mu: float | None = None  # fixed band centre; None estimates it from labeled pairs
    band_sigma: float | None = None  # fixed half-width; None estimates it from labeled pairs
    partners: int = 2  # same-taxon references per item
    neighbors: int = 2  # most-similar references per item
    max_draws_factor: int = 50

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown mining strategy {self.kind!r}")
        if self.budget is not None and self.budget < 1:
            raise ValueError("pair budget must be >= 1")
        if self.band_stat not in ("variance", "std"):
            raise ValueError("band_stat must be 'variance' or 'std'")
        for v in (self.band_mu, self.band_sigma):
            if v is not None and not np.isfinite(v):
                raise ValueError("band bounds must be finite")
        if self.band_sigma is not None and self.band_sigma < 0:
            raise ValueError("band half-width must be >= 0")


def tfidf_matrix(titles: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(tf-idf weights, presence) over the title vocabulary; tf = count / title length."""
    words = sorted({w for t in titles for w in t})
    col = {w: i for i, w in enumerate(words)}
    n = len(titles)
    tf = np.zeros((n, len(words)))
    for i, t in enumerate(titles):
        for w in t:
            tf[i, col[w]] += 1.0 / len(t)
    present = (tf > 0).astype(float)
    idf = np.log(n / present.sum(axis=0))
    return tf * idf, present, words


def _pick_max(row: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(row == row.max())
    return int(best[0] if len(best) == 1 else rng.choice(best))


def tfidf_partners(titles: Sequence[Sequence[str]], exclude=(), rng: np.random.Generator | None = None) -> list[tuple[int, int, float]]:
    """For each title, the other title maximising the summed TF-IDF of shared words.

    ``exclude`` holds (i, j) index pairs that may not be chosen.  Ties are
    broken uniformly at random with ``rng`` (lowest index without one).
    Rows with no admissible partner are skipped.
    """
    weights, present, _ = tfidf_matrix(titles)
    score = weights @ present.T
    np.fill_diagonal(score, -np.inf)
    for i, j in exclude:
        score[i, j] = -np.inf
    out = []
    for i in range(len(titles)):
        if not np.isfinite(score[i]).any():
            continue
        j = _pick_max(score[i], rng) if rng is not None else int(np.argmax(score[i]))
        out.append((i, j, float(score[i, j])))
    return out


def band_bounds(catalog, strategy: MiningStrategy, port, model, labeled: Sequence[Triplet]) -> tuple[float, float]:
    """(centre, half-width) of the similarity band, estimated over labeled pairs unless fixed."""
    mu, half = strategy.band_mu, strategy.band_sigma
    if mu is None or half is None:
        if not labeled:
            raise ValueError("similarity_band needs labeled pairs to estimate the band")
        sims = port.image_similarity(model, catalog, [t.ref_id for t in labeled], [t.tgt_id for t in labeled])
        if mu is None:
            mu = float(np.mean(sims))
        if half is None:
            half = float(np.var(sims) if strategy.band_stat == "variance" else np.std(sims))
    return float(mu), float(half)


def mine_pairs(
    catalog: Catalog,
    strategy: MiningStrategy,
    port: CirModelPort | None = None,
    model: Any = None,
    labeled: Sequence[Triplet] = (),
    pool: Sequence[int] | None = None,
    seed: int = 0,
) -> list[Pair]:
    """Potential unlabeled (reference, target) pairs, excluding labeled ones."""
    rng = np.random.default_rng([seed, 40])
    pool = np.array(sorted(set(pool)) if pool is not None else range(len(catalog)), dtype=np.int64)
    taken = {(t.ref_id, t.tgt_id) for t in labeled}
    needs_model = strategy.kind in ("similarity_band", "taxonomy_visual")
    if needs_model and (port is None or model is None):
        raise ValueError(f"strategy {strategy.kind!r} needs a trained model for similarity")

    pairs: list[Pair] = []
    seen: set[tuple[int, int]] = set()

    def push(ref: int, tgt: int, stat=None) -> None:
        key = (int(ref), int(tgt))
        if ref != tgt and key not in taken and key not in seen:
            seen.add(key)
            pairs.append(Pair(key[0], key[1], strategy.kind, None if stat is None else float(stat)))

    if strategy.kind == "tfidf_title":
        pos = {int(g): k for k, g in enumerate(pool)}
        exclude = [(pos[r], pos[t]) for r, t in taken if r in pos and t in pos]
        for i, j, v in tfidf_partners([catalog.items[i].title for i in pool], exclude, rng):
            push(pool[i], pool[j], v)

    elif strategy.kind == "similarity_band":
        mu, half = band_bounds(catalog, strategy, port, model, labeled)
        budget = strategy.budget or len(pool)
        draws = 0
        limit = strategy.max_draws_factor * budget
        while len(pairs) < budget and draws < limit:
            m = min(4096, limit - draws)
            a = pool[rng.integers(len(pool), size=m)]
            b = pool[rng.integers(len(pool), size=m)]
            draws += m
            s = port.image_similarity(model, catalog, a, b)
            for x, y, v in zip(a, b, s):
                if mu - half <= v <= mu + half:
                    push(x, y, v)
                    if len(pairs) >= budget:
                        break

    else:  # taxonomy_visual
        genus: dict[str, list[int]] = {}
        family: dict[str, list[int]] = {}
        for i in pool:
            it = catalog.items[i]
            genus.setdefault(it.taxon[1], []).append(int(i))
            family.setdefault(it.taxon[0], []).append(int(i))
        for i in pool:
            it = catalog.items[i]
            cands = [j for j in genus[it.taxon[1]] if j != i]
            if len(cands) < strategy.partners:
                cands = [j for j in family[it.taxon[0]] if j != i]
            if cands:
                for j in rng.choice(cands, size=min(strategy.partners, len(cands)), replace=False):
                    push(j, i)
        for i in pool:
            sims = port.image_similarity(model, catalog, np.full(len(pool), i), pool)
            sims = np.where(pool == i, -np.inf, sims)
            order = np.lexsort((pool, -sims))  # similarity desc, id asc
            for j in order[: strategy.neighbors]:
                push(pool[j], i, sims[j])

    if strategy.budget is not None and len(pairs) > strategy.budget:
        keep = np.sort(rng.choice(len(pairs), size=strategy.budget, replace=False))
        pairs = [pairs[k] for k in keep]
    return pairs


# ---------------------------------------------------------------- pseudo triplets


@dataclass
class PseudoBatch:
    retained: list[Triplet]
    discarded: list[Triplet]

    def summary(self) -> dict:
        scores = np.array([t.score for t in self.retained + self.discarded])
        if scores.size == 0:
            return {"generated": 0, "retained": 0}
        q = np.quantile(scores, [0.0, 0.25, 0.5, 0.75, 1.0])
        return {
            "generated": int(scores.size),
            "retained": len(self.retained),
            "score_min": float(q[0]),
            "score_q1": float(q[1]),
            "score_median": float(q[2]),
            "score_q3": float(q[3]),
            "score_max": float(q[4]),
            "retained_min_score": float(min(t.score for t in self.retained)) if self.retained else None,
            "discarded_max_score": float(max(t.score for t in self.discarded)) if self.discarded else None,
        }


def build_pseudo_triplets(
    pairs: Sequence[Pair],
    captioner: DiffCaptioner,
    port: CirModelPort,
    model: Any,
    catalog: Catalog,
    kappa: int,
    noise: float = 0.0,
    seed: int = 0,
) -> PseudoBatch:
    """Caption every pair, score it with the retrieval model, keep the top kappa."""
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if not pairs:
        raise ValueError("no pairs to caption")
    caps = caption_pairs(captioner, catalog, [(p.ref_id, p.tgt_id) for p in pairs], noise=noise, seed=seed)
    drafts = [Triplet(p.ref_id, p.tgt_id, c) for p, c in zip(pairs, caps)]
    scores = np.asarray(port.score_triplets(model, drafts, catalog), dtype=float)
    scored = [Triplet(d.ref_id, d.tgt_id, d.caption, "pseudo", float(s)) for d, s in zip(drafts, scores)]
    scored.sort(key=lambda t: (-t.score, t.ref_id, t.tgt_id))
    k = min(kappa, len(scored))
    return PseudoBatch(scored[:k], scored[k:])


def merge_triplets(original: Sequence[Triplet], pseudo: Sequence[Triplet]) -> list[Triplet]:
    """Original triplets followed by pseudo ones not duplicating an existing (ref, tgt, caption)."""
    seen = {(t.ref_id, t.tgt_id, t.caption) for t in original}
    out = list(original)
    for t in pseudo:
        key = (t.ref_id, t.tgt_id, t.caption)
        if key not in seen:
            seen.add(key)
            out.append(t)
    return out


# ---------------------------------------------------------------- the loop


@dataclass
class SelfTrainState:
    """Validation metrics of one iteration; iteration 0 is the S1 baseline."""

    iteration: int
    n_pairs: int
    pseudo: dict
    train_size: int
    recall: RecallReport
    caption: CaptionMetrics
    kappa: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "pairs": self.n_pairs,
            "pseudo": self.pseudo,
            "train_size": self.train_size,
            "kappa": self.kappa,
            "recall": self.recall.to_dict(),
            "caption": self.caption.to_dict(),
        }


@dataclass
class ParadigmResult:
    history: list[SelfTrainState]
    best_iteration: int
    best_model: Any
    best_captioner: DiffCaptioner
    stop_reason: str

    def report(self) -> dict:
        return {
            "iterations": [r.to_dict() for r in self.history],
            "best_iteration": self.best_iteration,
            "stop_reason": self.stop_reason,
        }

    def write_report(self, path: str | Path, config: dict | None = None) -> None:
        doc = self.report()
        if config is not None:
            doc["config"] = config
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class ParadigmError(RuntimeError):
    """A stage failed; carries the iteration it failed in and the history so far."""

    def __init__(self, iteration: int, stage: str, history: list):
        super().__init__(f"self-training failed at iteration {iteration} ({stage})")
        self.iteration = iteration
        self.stage = stage
        self.history = history


def iteration_seed(master: int, iteration: int) -> int:
    return int(np.random.default_rng([master, 50, iteration]).integers(2**31 - 1))


def run_paradigm(
    original: Sequence[Triplet],
    validation: Sequence[Triplet],
    catalog: Catalog,
    port: CirModelPort,
    strategy: MiningStrategy,
    kappa: int | None = None,
    max_iters: int = 3,
    epsilon: float = 0.001,
    captioner_config: CaptionerConfig | None = None,
    caption_noise: float = 0.0,
    seed: int = 0,
) -> ParadigmResult:
    """S1 train both models; repeat (mine, caption + filter, retrain, validate) until gains stall.

    Stops when the validation average recall improves on the previous
    iteration by less than ``epsilon`` (fraction units), when no pairs are
    mined, or after ``max_iters`` passes.  Returns the best-recall models.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    original = list(original)
    kappa = len(original) if kappa is None else kappa
    cap_cfg = captioner_config or CaptionerConfig()
    pool = sorted({t.ref_id for t in original} | {t.tgt_id for t in original})

    def fit(triplets, it):
        s = iteration_seed(seed, it)
        model = port.train(triplets, catalog, s)
        cap = train_captioner(triplets, catalog, dataclasses.replace(cap_cfg, seed=s))
        return model, cap

    history: list[SelfTrainState] = []
    stage = "train"
    try:
        model, cap = fit(original, 0)
        stage = "evaluate"
        rec = port.evaluate(model, validation, catalog)
        history.append(SelfTrainState(0, 0, {}, len(original), rec, caption_metrics(cap, catalog, validation)))
    except Exception as e:
        raise ParadigmError(0, stage, history) from e
    best = (rec.average, 0, model, cap)
    log.info("iteration 0: average recall %.4f", rec.average)
    stop = "max_iters"
    for it in range(1, max_iters + 1):
        try:
            stage = "mine"
            pairs = mine_pairs(catalog, strategy, port, model, original, pool, seed=iteration_seed(seed, it))
            if not pairs:
                stop = "no_pairs"
                break
            stage = "caption"
            batch = build_pseudo_triplets(pairs, cap, port, model, catalog, kappa, caption_noise, iteration_seed(seed, it))
            augmented = merge_triplets(original, batch.retained)
            stage = "train"
            model, cap = fit(augmented, it)
            stage = "evaluate"
            rec = port.evaluate(model, validation, catalog)
            cm = caption_metrics(cap, catalog, validation)
        except Exception as e:
            raise ParadigmError(it, stage, history) from e
        history.append(SelfTrainState(it, len(pairs), batch.summary(), len(augmented), rec, cm, kappa))
        log.info("iteration %d: average recall %.4f", it, rec.average)
        if rec.average > best[0]:
            best = (rec.average, it, model, cap)
        if rec.average - history[-2].recall.average < epsilon:
            stop = "converged"
            break
    return ParadigmResult(history, best[1], best[2], best[3], stop)
