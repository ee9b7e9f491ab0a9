import math

import numpy as np
import pytest

from facetmatch import numerics as nx
from facetmatch.objective import (
    LossConfig,
    ortho_loss,
    ranking_loss,
    ranking_loss_from_scores,
    total_loss,
)
from facetmatch.numerics import DimensionError, Tensor, grad_check


def unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_ranking_b1_is_exactly_zero(rng):
    q, t = Tensor(unit(rng, 1, 4, 6)), Tensor(unit(rng, 1, 4, 6))
    assert ranking_loss(q, t).item() == 0.0


def test_ranking_equal_scores_ln2():
    assert abs(ranking_loss_from_scores(Tensor(np.full((2, 2), 0.37)), 0.1).item() - math.log(2)) <= 1e-12
    same = Tensor(np.tile(np.eye(4)[:2][None], (2, 1, 1)))
    assert abs(ranking_loss(same, same).item() - math.log(2)) <= 1e-12


def test_ranking_closed_form_divide():
    cfg = LossConfig(tau=10)
    loss = ranking_loss_from_scores(Tensor([[10.0, 0.0], [0.0, 10.0]]), cfg.logit_scale).item()
    assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert loss == pytest.approx(0.313262, abs=1e-6)


def test_temperature_modes():
    assert LossConfig(tau=10).logit_scale == pytest.approx(0.1)
    assert LossConfig(tau=10, temperature_mode="multiply").logit_scale == 10.0
    with pytest.raises(ValueError):
        LossConfig(tau=0)
    with pytest.raises(ValueError):
        LossConfig(lam=-1)
    with pytest.raises(ValueError):
        LossConfig(temperature_mode="other")


def test_ranking_row_shift_invariance_and_nonnegative(rng):
    s = rng.normal(size=(5, 5))
    base = ranking_loss_from_scores(Tensor(s), 1.0).item()
    shifted = ranking_loss_from_scores(Tensor(s + rng.normal(size=(5, 1))), 1.0).item()
    assert base == pytest.approx(shifted, abs=1e-12)
    assert base >= 0


def test_ranking_batch_mismatch(rng):
    with pytest.raises(DimensionError):
        ranking_loss(Tensor(unit(rng, 2, 3, 4)), Tensor(unit(rng, 3, 3, 4)))


def test_ortho_examples():
    e = np.eye(4)
    ortho = Tensor(e[None, :3])
    assert ortho_loss(ortho, ortho).item() == 0.0
    dup = Tensor(np.array([[[1.0, 0, 0], [1.0, 0, 0]]]))
    assert abs(ortho_loss(dup, dup).item() - 4.0) <= 1e-12
    c60 = Tensor(np.array([[[1.0, 0.0], [0.5, math.sqrt(3) / 2]]]))
    assert ortho_loss(c60, Tensor(e[None, :2, :2])).item() == pytest.approx(0.5, abs=1e-12)


def test_ortho_equals_offdiagonal_cosines(rng):
    q, t = unit(rng, 3, 4, 6), unit(rng, 3, 4, 6)
    ref = 0.0
    for x in (q, t):
        for g in x @ np.swapaxes(x, 1, 2):
            ref += (g[~np.eye(4, dtype=bool)] ** 2).sum()
    assert ortho_loss(Tensor(q), Tensor(t)).item() == pytest.approx(ref / 3, abs=1e-12)


def test_total_loss_composition(rng):
    q, t = Tensor(unit(rng, 3, 4, 6)), Tensor(unit(rng, 3, 4, 6))
    r = ranking_loss(q, t, LossConfig(lam=0)).item()
    o = ortho_loss(q, t).item()
    assert total_loss(q, t, LossConfig(lam=0)).item() == r
    assert total_loss(q, t, LossConfig(lam=1)).item() == pytest.approx(r + o, abs=1e-12)


def test_total_loss_gradient(rng):
    q = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    t = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    for cfg in (LossConfig(lam=1.0), LossConfig(lam=0.1, temperature_mode="multiply"), LossConfig(scoring="avepool")):
        f = lambda: total_loss(nx.l2_normalize(q), nx.l2_normalize(t), cfg)  # noqa: E731
        assert grad_check(f, [q, t], max_coords=None) <= 1e-4
