"""Seeded synthetic attribute catalog, renderer, caption grammar and file formats.

Items carry F discrete attribute slots.  Each (slot, value) owns a fixed
random patch signature painted into that slot's band of rows, so changing
one attribute changes exactly one image region.  Modification captions are
realised from per-slot clause templates joined with "and" and can be
parsed back into the exact slot diff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD = "<pad>"
AND = "and"
NO_CHANGE = ("no", "change")

DEFAULT_SLOTS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("color", ("red", "blue", "green", "black", "white", "yellow", "pink", "purple")),
    ("pattern", ("solid", "striped", "floral", "dotted")),
    ("sleeve", ("sleeveless", "short", "long")),
    ("collar", ("crew", "vneck", "polo")),
    ("length", ("mini", "midi", "maxi")),
)

# "{}" marks the value position; two surface variants per slot
_TEMPLATES: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "color": (("make", "it", "{}"), ("change", "the", "color", "to", "{}")),
    "pattern": (("use", "a", "{}", "pattern"), ("change", "the", "pattern", "to", "{}")),
    "sleeve": (("give", "it", "{}", "sleeves"), ("change", "the", "sleeves", "to", "{}")),
    "collar": (("add", "a", "{}", "collar"), ("change", "the", "collar", "to", "{}")),
    "length": (("make", "it", "{}", "length"), ("change", "the", "length", "to", "{}")),
}


def slot_templates(slot: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    return _TEMPLATES.get(slot, (("make", "the", slot, "{}"), ("change", "the", slot, "to", "{}")))


class CaptionParseError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    name: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class Item:
    id: int
    attributes: tuple[int, ...]  # value index per slot
    title: tuple[str, ...]
    taxon: tuple[str, str]


@dataclass(frozen=True)
class Triplet:
    ref_id: int
    tgt_id: int
    caption: tuple[int, ...]
    provenance: str = "original"
    score: float | None = None

    def __post_init__(self):
        if self.ref_id == self.tgt_id:
            raise ValueError("reference and target must differ")
        if self.provenance not in ("original", "pseudo"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if self.provenance == "pseudo" and self.score is None:
            raise ValueError("pseudo triplets carry a score")


@dataclass(frozen=True)
class Pair:
    ref_id: int
    tgt_id: int
    strategy: str
    stat: float | None = None


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != PAD:
            raise ValueError("token 0 must be the pad token")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    pad_id = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index[w] for w in words)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids if i != self.pad_id)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens


def build_vocab(slots: Sequence[Slot]) -> Vocab:
    words: list[str] = []

    def push(w):
        if w not in words:
            words.append(w)

    for s in slots:
        for tpl in slot_templates(s.name):
            for w in tpl:
                if w != "{}":
                    push(w)
        for v in s.values:
            push(v)
    push(AND)
    for w in NO_CHANGE:
        push(w)
    return Vocab([PAD] + words)


# ---------------------------------------------------------------- grammar


class Grammar:
    """Clause templates for a slot set, with an exact inverse parser."""

    def __init__(self, slots: Sequence[Slot]):
        self.slots = list(slots)
        self._lookup: dict[tuple[str, ...], tuple[int, int]] = {}
        for si, s in enumerate(self.slots):
            for tpl in slot_templates(s.name):
                for vi, v in enumerate(s.values):
                    words = tuple(v if w == "{}" else w for w in tpl)
                    if words in self._lookup and self._lookup[words] != (si, vi):
                        raise ValueError(f"ambiguous clause {' '.join(words)!r}")
                    self._lookup[words] = (si, vi)

    def realize(self, diff: dict[int, int], rng: np.random.Generator | None = None) -> tuple[str, ...]:
        """Words for a slot diff ``{slot index: new value index}``.

        Without ``rng`` the first template and slot order are used.
        """
        if not diff:
            return NO_CHANGE
        order = sorted(diff)
        if rng is not None:
            order = [order[i] for i in rng.permutation(len(order))]
        out: list[str] = []
        for k, si in enumerate(order):
            tpls = slot_templates(self.slots[si].name)
            tpl = tpls[int(rng.integers(len(tpls)))] if rng is not None else tpls[0]
            if k:
                out.append(AND)
            value = self.slots[si].values[diff[si]]
            out.extend(value if w == "{}" else w for w in tpl)
        return tuple(out)

    def parse(self, words: Sequence[str]) -> dict[int, int]:
        words = tuple(words)
        if words == NO_CHANGE:
            return {}
        diff: dict[int, int] = {}
        clause: list[str] = []
        for w in words + (AND,):
            if w != AND:
                clause.append(w)
                continue
            hit = self._lookup.get(tuple(clause))
            if hit is None:
                raise CaptionParseError(f"unparseable clause {' '.join(clause)!r}")
            si, vi = hit
            if si in diff:
                raise CaptionParseError(f"slot {self.slots[si].name!r} named twice")
            diff[si] = vi
            clause = []
        return diff


# ---------------------------------------------------------------- catalog + render


@dataclass
class RenderSpec:
    """Per-(slot, value) patch signatures painted into row bands."""

    channels: int
    height: int
    width: int
    sigma: float
    seed: int
    bands: list[tuple[int, int]]
    signatures: list[list[np.ndarray]]  # [slot][value] -> (C, rows, W)

    @classmethod
    def build(cls, slots: Sequence[Slot], seed: int, channels=3, height=8, width=8, sigma=0.1) -> "RenderSpec":
        f = len(slots)
        if f > height:
            raise ValueError("more slots than image rows")
        edges = [round(i * height / f) for i in range(f + 1)]
        bands = [(edges[i], edges[i + 1]) for i in range(f)]
        rng = np.random.default_rng([seed, 1])
        sigs = [
            [rng.normal(size=(channels, b1 - b0, width)) for _ in s.values]
            for s, (b0, b1) in zip(slots, bands)
        ]
        return cls(channels, height, width, sigma, seed, bands, sigs)


@dataclass
class Catalog:
    slots: list[Slot]
    items: list[Item]
    render_spec: RenderSpec
    seed: int
    vocab: Vocab = field(init=False)
    grammar: Grammar = field(init=False)

    def __post_init__(self):
        self.vocab = build_vocab(self.slots)
        self.grammar = Grammar(self.slots)
        self._images: np.ndarray | None = None
        self._by_attr: dict[tuple[int, ...], list[int]] | None = None
        ids = [it.id for it in self.items]
        if ids != list(range(len(ids))):
            raise ValueError("item ids must be 0..n-1 in order")

    def __len__(self) -> int:
        return len(self.items)

    def item(self, item_id: int) -> Item:
        if not 0 <= item_id < len(self.items):
            raise KeyError(f"unknown item id {item_id}")
        return self.items[item_id]

    def images(self, noise: bool = True) -> np.ndarray:
        """All renders stacked ``(n, C, H, W)``; the noisy stack is cached."""
        if not noise:
            return np.stack([render(it, self.render_spec, noise=False) for it in self.items])
        if self._images is None:
            self._images = np.stack([render(it, self.render_spec) for it in self.items])
        return self._images

    def by_attributes(self) -> dict[tuple[int, ...], list[int]]:
        if self._by_attr is None:
            table: dict[tuple[int, ...], list[int]] = {}
            for it in self.items:
                table.setdefault(it.attributes, []).append(it.id)
            self._by_attr = table
        return self._by_attr

    def diff(self, ref_id: int, tgt_id: int) -> dict[int, int]:
        a, b = self.items[ref_id].attributes, self.items[tgt_id].attributes
        return {s: b[s] for s in range(len(a)) if a[s] != b[s]}

    def caption_words(self, caption: Sequence[int]) -> tuple[str, ...]:
        return self.vocab.decode(caption)

    def apply_caption(self, ref_id: int, caption: Sequence[int]) -> tuple[int, ...]:
        attrs = list(self.items[ref_id].attributes)
        for s, v in self.grammar.parse(self.caption_words(caption)).items():
            attrs[s] = v
        return tuple(attrs)


def _make_item(idx: int, attrs: tuple[int, ...], slots: Sequence[Slot]) -> Item:
    title = tuple(s.values[v] for s, v in zip(slots, attrs))
    first = slots[0]
    bucket = attrs[0] * 2 // len(first.values)
    family = f"{first.name}{bucket}"
    genus = family + (f".{slots[1].values[attrs[1]]}" if len(slots) > 1 else "")
    return Item(idx, attrs, title, (family, genus))


def slots_from_spec(spec: Sequence[tuple[str, Sequence[str]]] | None = None) -> list[Slot]:
    return [Slot(name, tuple(vals)) for name, vals in (spec or DEFAULT_SLOTS)]


def generate_catalog(
    n_items: int,
    slots: Sequence[Slot] | None = None,
    seed: int = 0,
    channels: int = 3,
    size: int = 8,
    sigma: float = 0.1,
) -> Catalog:
    if n_items < 2:
        raise ValueError("need at least 2 items")
    slots = list(slots) if slots is not None else slots_from_spec()
    rng = np.random.default_rng([seed, 0])
    cols = [rng.integers(len(s.values), size=n_items) for s in slots]
    items = [_make_item(i, tuple(int(c[i]) for c in cols), slots) for i in range(n_items)]
    spec = RenderSpec.build(slots, seed, channels=channels, height=size, width=size, sigma=sigma)
    return Catalog(slots, items, spec, seed)


def render(item: Item, spec: RenderSpec, noise: bool = True) -> np.ndarray:
    img = np.zeros((spec.channels, spec.height, spec.width))
    for si, v in enumerate(item.attributes):
        b0, b1 = spec.bands[si]
        img[:, b0:b1, :] = spec.signatures[si][v]
    if noise and spec.sigma > 0:
        img += np.random.default_rng([spec.seed, 2, item.id]).normal(scale=spec.sigma, size=img.shape)
    return img


# ---------------------------------------------------------------- triplets


def make_triplets(catalog: Catalog, n_triplets: int, max_edits: int = 2, seed: int = 0) -> list[Triplet]:
    """Sample references, mutate 1..max_edits slots, keep mutations that exist in the catalog."""
    f = len(catalog.slots)
    if not 1 <= max_edits <= f:
        raise ValueError(f"max_edits must lie in [1, {f}]")
    rng = np.random.default_rng([seed, 3])
    table = catalog.by_attributes()
    out: list[Triplet] = []
    attempts = 0
    while len(out) < n_triplets:
        attempts += 1
        if attempts > 1000 * max(n_triplets, 1):
            raise RuntimeError("catalog too sparse to realise the requested triplets")
        ref = catalog.items[int(rng.integers(len(catalog)))]
        n_edit = int(rng.integers(1, max_edits + 1))
        slots = sorted(int(s) for s in rng.choice(f, size=n_edit, replace=False))
        attrs = list(ref.attributes)
        diff = {}
        for s in slots:
            n_vals = len(catalog.slots[s].values)
            new = int(rng.integers(n_vals - 1))
            new += new >= attrs[s]
            attrs[s] = new
            diff[s] = new
        hits = table.get(tuple(attrs))
        if not hits:
            continue
        tgt = hits[int(rng.integers(len(hits)))]
        words = catalog.grammar.realize(diff, rng)
        out.append(Triplet(ref.id, tgt, catalog.vocab.encode(words)))
    return out


def split_triplets(triplets: Sequence[Triplet], seed: int = 0, fractions=(0.7, 0.1, 0.2)):
    """Seeded train/val/test split by triplet."""
    n = len(triplets)
    perm = np.random.default_rng([seed, 4]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    pick = lambda idx: [triplets[i] for i in sorted(idx)]
    return pick(perm[:n_train]), pick(perm[n_train : n_train + n_val]), pick(perm[n_train + n_val :])


# ---------------------------------------------------------------- file formats


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(", ", ": "), ensure_ascii=False)


def _write_lines(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(_dumps(row) + "\n")


def _read_lines(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_items(path, catalog: Catalog) -> None:
    _write_lines(
        Path(path),
        (
            {
                "id": it.id,
                "attributes": {s.name: s.values[v] for s, v in zip(catalog.slots, it.attributes)},
                "title": list(it.title),
                "taxon": list(it.taxon),
            }
            for it in catalog.items
        ),
    )


def write_world(path, catalog: Catalog) -> None:
    """Generation parameters needed to rebuild the renders from items.jsonl."""
    spec = catalog.render_spec
    doc = {
        "seed": catalog.seed,
        "slots": [[s.name, list(s.values)] for s in catalog.slots],
        "channels": spec.channels,
        "size": spec.height,
        "sigma": spec.sigma,
    }
    Path(path).write_text(_dumps(doc) + "\n", encoding="utf-8")


def read_catalog(items_path, world_path) -> Catalog:
    world = json.loads(Path(world_path).read_text(encoding="utf-8"))
    slots = slots_from_spec(world["slots"])
    items = []
    for row in _read_lines(Path(items_path)):
        attrs = tuple(slots[i].values.index(row["attributes"][s.name]) for i, s in enumerate(slots))
        items.append(Item(int(row["id"]), attrs, tuple(row["title"]), tuple(row["taxon"])))
    spec = RenderSpec.build(slots, world["seed"], world["channels"], world["size"], world["size"], world["sigma"])
    return Catalog(slots, items, spec, world["seed"])


def triplet_to_dict(t: Triplet) -> dict:
    row = {"ref_id": t.ref_id, "tgt_id": t.tgt_id, "caption": list(t.caption), "provenance": t.provenance}
    if t.score is not None:
        row["score"] = t.score
    return row


def write_triplets(path, triplets: Iterable[Triplet]) -> None:
    _write_lines(Path(path), (triplet_to_dict(t) for t in triplets))


def read_triplets(path) -> list[Triplet]:
    return [
        Triplet(r["ref_id"], r["tgt_id"], tuple(r["caption"]), r.get("provenance", "original"), r.get("score"))
        for r in _read_lines(Path(path))
    ]


def write_pairs(path, pairs: Iterable[Pair]) -> None:
    rows = []
    for p in pairs:
        row = {"ref_id": p.ref_id, "tgt_id": p.tgt_id, "strategy": p.strategy}
        if p.stat is not None:
            row["stat"] = p.stat
        rows.append(row)
    _write_lines(Path(path), rows)


def read_pairs(path) -> list[Pair]:
    return [Pair(r["ref_id"], r["tgt_id"], r["strategy"], r.get("stat")) for r in _read_lines(Path(path))]


def write_vocab(path, vocab: Vocab) -> None:
    doc = {"tokens": vocab.tokens, "ids": {t: i for i, t in enumerate(vocab.tokens)}}
    Path(path).write_text(_dumps(doc) + "\n", encoding="utf-8")


def read_vocab(path) -> Vocab:
    return Vocab(json.loads(Path(path).read_text(encoding="utf-8"))["tokens"])


def write_captions(path, rows: Iterable[tuple[int, int, Sequence[int]]], model_hash: str) -> None:
    _write_lines(
        Path(path),
        ({"ref_id": r, "tgt_id": t, "caption": list(c), "model_hash": model_hash} for r, t, c in rows),
    )


def read_captions(path) -> list[dict]:
    return _read_lines(Path(path))
