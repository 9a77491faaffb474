"""Shared fixtures and model-drawing helpers."""

from __future__ import annotations

import numpy as np
import pytest

from moelearn import Activation, InputDistribution, MoeModel


def unit_rows(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    a = rng.standard_normal((k, d))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def orthogonal_gating(rng: np.random.Generator, a: np.ndarray, rows: int) -> np.ndarray:
    """Unit-norm gating rows orthogonal to the span of the regressor rows."""
    d = a.shape[1]
    w = rng.standard_normal((rows, d))
    q, _ = np.linalg.qr(a.T)
    w = w - (w @ q) @ q.T
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def make_model(seed: int, k: int, d: int, sigma: float, activation: str = "linear",
               orthogonal: bool = True, radius: float = 1.0) -> MoeModel:
    rng = np.random.default_rng(seed)
    a = unit_rows(rng, k, d)
    if k == 1:
        w = np.zeros((0, d))
    elif orthogonal:
        w = orthogonal_gating(rng, a, k - 1) * min(1.0, radius)
    else:
        w = unit_rows(rng, k - 1, d) * min(1.0, radius)
    return MoeModel(a=a, w=w, sigma=sigma, activation=Activation.by_name(activation),
                    radius=radius)


@pytest.fixture
def gaussian10():
    return InputDistribution.standard_gaussian(10)
