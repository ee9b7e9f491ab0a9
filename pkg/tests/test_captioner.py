import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetmatch.captioner import (
    CaptionerConfig,
    DiffCaptioner,
    caption_metrics,
    caption_pairs,
    generate_caption,
    slot_accuracy,
    slot_targets,
    train_captioner,
)
from facetmatch.synthio import NO_CHANGE, Triplet, generate_catalog, make_triplets, split_triplets
from facetmatch.textmetrics import bleu1, corpus_metrics, lcs_length, rouge_l


@pytest.fixture(scope="module")
def world():
    catalog = generate_catalog(500, seed=7)
    tr, va, te = split_triplets(make_triplets(catalog, 2000, seed=7), seed=7)
    return catalog, tr, va, te


@pytest.fixture(scope="module")
def model(world):
    catalog, tr, _, _ = world
    return train_captioner(tr, catalog, CaptionerConfig(seed=0))


# ---------------------------------------------------------------- text metrics


def test_bleu1_examples():
    assert bleu1("a b c".split(), ["a b c".split()]) == 1.0
    assert bleu1("red dress".split(), ["red long dress".split()]) == pytest.approx(math.exp(1 - 3 / 2), abs=1e-12)
    assert bleu1("red dress".split(), ["red long dress".split()]) == pytest.approx(0.606531, abs=1e-6)
    assert bleu1("x y".split(), ["a b".split()]) == 0.0
    assert bleu1("the the the".split(), ["the cat".split()]) == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        bleu1([], [["a"]])


def test_bleu1_closest_reference_length():
    # lengths 2 and 5 around a length-3 candidate: 2 is closer, so no penalty
    assert bleu1("a b c".split(), ["a b".split(), "a b c d e".split()]) == 1.0


def test_rouge_examples():
    assert rouge_l("a b c".split(), "a b c".split()) == 1.0
    assert rouge_l("a b c".split(), "a c b".split()) == pytest.approx(2 / 3, abs=1e-12)
    assert rouge_l("a b".split(), "c d".split()) == 0.0
    assert lcs_length("a b c b d".split(), "b d c a b".split()) == 3
    with pytest.raises(ValueError):
        rouge_l([], ["a"])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8), st.lists(st.sampled_from("abcde"), min_size=1, max_size=8))
def test_metric_ranges(c, r):
    assert 0 <= bleu1(c, [r]) <= 1
    assert 0 <= rouge_l(c, r) <= 1
    assert rouge_l(c, r) == pytest.approx(rouge_l(r, c))
    assert bleu1(c, [c]) == 1.0 and rouge_l(c, c) == 1.0


def test_corpus_metrics_average():
    m = corpus_metrics([["a", "b"], ["x"]], [["a", "b"], ["y"]])
    assert m.bleu1 == 0.5 and m.rouge_l == 0.5 and m.average == 0.5
    with pytest.raises(ValueError):
        corpus_metrics([], [])


# ---------------------------------------------------------------- captioner


def test_slot_targets_skip_unparseable(world):
    catalog = world[0]
    bad = Triplet(0, 1, catalog.vocab.encode(["make", "it"]))
    labels, keep, skipped = slot_targets(catalog, [world[1][0], bad])
    assert keep == [0] and skipped == 1 and labels.shape == (1, 5)


def test_train_errors(world):
    with pytest.raises(ValueError):
        train_captioner([], world[0])


def test_training_is_deterministic(world):
    catalog, tr, _, _ = world
    cfg = CaptionerConfig(epochs=2, seed=3)
    assert train_captioner(tr[:100], catalog, cfg).fingerprint() == train_captioner(tr[:100], catalog, cfg).fingerprint()


def test_held_out_slot_accuracy(world, model):
    catalog, _, _, te = world
    assert slot_accuracy(model, catalog, te) > 0.9


def test_single_slot_pair_names_new_value(world, model):
    catalog = world[0]
    table = catalog.by_attributes()
    checked = hits = 0
    for it in catalog.items[:80]:
        for s, slot in enumerate(catalog.slots):
            attrs = list(it.attributes)
            attrs[s] = (attrs[s] + 1) % len(slot.values)
            for tgt in table.get(tuple(attrs), [])[:1]:
                words = catalog.caption_words(generate_caption(model, catalog, it.id, tgt))
                checked += 1
                hits += catalog.grammar.parse(words) == {s: attrs[s]}
    assert checked > 50 and hits / checked > 0.9


def test_captions_always_parse_and_repeat(world, model, rng):
    catalog = world[0]
    pairs = [tuple(int(v) for v in rng.choice(len(catalog), 2, replace=False)) for _ in range(200)]
    caps = caption_pairs(model, catalog, pairs)
    for c in caps:
        catalog.grammar.parse(catalog.caption_words(c))
    assert caption_pairs(model, catalog, pairs) == caps
    noisy = caption_pairs(model, catalog, pairs, noise=0.5, seed=1)
    for c in noisy:
        catalog.grammar.parse(catalog.caption_words(c))
    assert noisy != caps


def test_identical_pair_is_no_change(world, model):
    catalog = world[0]
    assert catalog.caption_words(generate_caption(model, catalog, 5, 5)) == NO_CHANGE
    assert catalog.caption_words(generate_caption(model, catalog, 5, 5, noise=1.0)) == NO_CHANGE


def test_caption_metrics_in_range(world, model):
    catalog, _, va, _ = world
    m = caption_metrics(model, catalog, va)
    assert 0.5 < m.bleu1 <= 1 and 0.4 < m.rouge_l <= 1


def test_save_load(tmp_path, world, model):
    model.save(tmp_path / "cap.json")
    back = DiffCaptioner.load(tmp_path / "cap.json", world[0])
    assert back.fingerprint() == model.fingerprint()
    assert back.cfg == model.cfg
