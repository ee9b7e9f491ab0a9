"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def rel_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: list[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = 20,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar from the current values of ``params`` each
    call.  With ``max_coords`` set, that many coordinates per parameter are
    sampled (seeded); ``None`` checks every coordinate.
    """
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    for p in plist:
        p.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(plist, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, float(rel_error(ga.reshape(-1)[i], numeric)))
    for p in plist:
        p.grad = None
    return worst


def directional_check(
    f: Callable[[], Tensor],
    params: list[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    n_dirs: int = 3,
    seed: int = 0,
    atol: float = 0.0,
) -> float:
    """Max relative error of directional derivatives along seeded directions.

    Each parameter is perturbed on its own along ``n_dirs`` directions
    ``v ~ g/|g| + r/|r|`` (``r`` Gaussian), and ``g . v`` is compared with
    the central difference.  The random part exposes errors in any gradient
    component; the gradient part keeps ``g . v`` away from zero.  Unlike
    single coordinates this stays well conditioned when many gradient entries
    are tiny, where coordinate differences are dominated by forward roundoff.
    ``atol`` is subtracted from each absolute difference first, an allowance
    for that roundoff when a gradient is structurally zero.
    """
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    for p in plist:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(plist, analytic):
        orig = p.data.copy()
        for _ in range(n_dirs):
            v = rng.normal(size=orig.shape)
            v /= np.linalg.norm(v)
            norm = np.linalg.norm(ga)
            if norm > 0:
                mixed = v + ga / norm
                size = np.linalg.norm(mixed)
                v = mixed / size if size > 1e-6 else ga / norm  # one-element params can cancel
            p.data = orig + h * v
            up = f().item()
            p.data = orig - h * v
            down = f().item()
            p.data = orig.copy()
            a, n = float(np.sum(ga * v)), (up - down) / (2.0 * h)
            worst = max(worst, max(0.0, abs(a - n) - atol) / max(abs(a), abs(n), 1e-8))
    for p in plist:
        p.grad = None
    return worst
