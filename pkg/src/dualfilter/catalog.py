"""Built-in model catalog.

Named desk-scale models used throughout the experiments and tests:

* ``counter_example`` -- the 4-state one-directional cycle with unit rates
  observed through the indicator of states {0, 2}; the classic instance of
  an ergodic chain whose filter does not forget its initialization.
* ``two_state`` -- irreducible 2-state chain with rates ``(a1, a2)``.
* ``doeblin_demo`` -- 3-state chain with every column bounded away from
  zero, so the Doeblin Poincare constant is positive.
* ``two_class_demo`` -- two closed 2-state classes; the observation drift
  separates the classes, so the filter can detect which class the chain
  started in.
* ``scalar_lg`` -- scalar linear-Gaussian model with unit noise gains.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .models import HmmModel, LinearGaussianModel, ObservationMatrix, RateMatrix, SimplexVector


def counter_example() -> HmmModel:
    a = np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [0.0, -1.0, 1.0, 0.0],
        [0.0, 0.0, -1.0, 1.0],
        [1.0, 0.0, 0.0, -1.0],
    ])
    h = np.array([1.0, 0.0, 1.0, 0.0])
    return HmmModel(RateMatrix(a), ObservationMatrix(h), SimplexVector(np.full(4, 0.25)))


def two_state(a1: float = 1.0, a2: float = 1.0) -> HmmModel:
    if a1 <= 0 or a2 <= 0:
        raise ValueError("two_state requires positive rates")
    a = np.array([[-a1, a1], [a2, -a2]])
    return HmmModel(RateMatrix(a), ObservationMatrix([1.0, 0.0]), SimplexVector([0.5, 0.5]))


def doeblin_demo() -> HmmModel:
    a = np.array([
        [-3.0, 2.0, 1.0],
        [1.0, -2.0, 1.0],
        [2.0, 1.0, -3.0],
    ])
    h = np.array([1.0, 0.0, -1.0])
    return HmmModel(RateMatrix(a), ObservationMatrix(h), SimplexVector(np.full(3, 1.0 / 3.0)))


def two_class_demo(h_scale: float = 1.0) -> HmmModel:
    a = np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [1.5, -1.5, 0.0, 0.0],
        [0.0, 0.0, -0.8, 0.8],
        [0.0, 0.0, 1.2, -1.2],
    ])
    h = h_scale * np.array([0.0, 0.0, 1.0, 1.0])
    return HmmModel(RateMatrix(a), ObservationMatrix(h), SimplexVector(np.full(4, 0.25)))


def scalar_lg() -> LinearGaussianModel:
    return LinearGaussianModel(
        a_mat=np.zeros((1, 1)), h_mat=np.ones((1, 1)), sigma=np.ones((1, 1)),
        mean0=np.zeros(1), cov0=np.ones((1, 1)),
    )


CATALOG: dict[str, tuple[Callable, str]] = {
    "counter_example": (counter_example, "4-state cycle, indicator observation; unstable filter benchmark"),
    "two_state": (two_state, "irreducible 2-state chain, rates (a1, a2); closed-form Poincare constant"),
    "doeblin_demo": (doeblin_demo, "3-state chain with positive Doeblin constant"),
    "two_class_demo": (two_class_demo, "two closed 2-state classes, class-indicator observation"),
    "scalar_lg": (scalar_lg, "scalar linear-Gaussian model A=0, H=1, sigma=1"),
}


def build(name: str, **params) -> HmmModel | LinearGaussianModel:
    if name not in CATALOG:
        raise KeyError(f"unknown catalog model {name!r}; known: {', '.join(sorted(CATALOG))}")
    factory, _ = CATALOG[name]
    return factory(**params)


def listing() -> list[tuple[str, str]]:
    """Stable name/description pairs for display."""
    return [(name, CATALOG[name][1]) for name in sorted(CATALOG)]
