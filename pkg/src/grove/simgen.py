"""Synthetic designs with known treatment effects.

Potential outcomes follow ``Y(w) = m(X) + (w - 1/2) tau(X) + noise`` with
unit-variance Gaussian noise, ``X ~ U([0, 1]^d)`` and ``W ~ Bernoulli(e(X))``,
except for the ``corner`` design which has its own outcome model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset
from .sampling import RandomStream

DESIGNS = ("confounded", "smooth", "spike", "dense", "corner")
CORNER_DIM = 10

Fn = Callable[[np.ndarray], np.ndarray]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def beta_2_4(u):
    """Beta(2, 4) density: 20 u (1 - u)^3."""
    u = np.asarray(u, dtype=np.float64)
    return 20.0 * u * (1.0 - u) ** 3


def _zero(X):
    return np.zeros(np.asarray(X).shape[0])


def _half(X):
    return np.full(np.asarray(X).shape[0], 0.5)


def _confounded_propensity(X):
    return 0.25 * (1.0 + beta_2_4(np.asarray(X)[:, 0]))


def _confounded_main(X):
    return 2.0 * np.asarray(X)[:, 0] - 1.0


def smooth_factor(u):
    return 1.0 + _sigmoid(20.0 * (np.asarray(u) - 1.0 / 3.0))


def spike_factor(u):
    return 2.0 * _sigmoid(12.0 * (np.asarray(u) - 0.5))


def _smooth_tau(X):
    X = np.asarray(X)
    return smooth_factor(X[:, 0]) * smooth_factor(X[:, 1])


def _spike_tau(X):
    X = np.asarray(X)
    return spike_factor(X[:, 0]) * spike_factor(X[:, 1])


def _dense_tau(q: int) -> Fn:
    def tau(X):
        X = np.asarray(X)
        return (4.0 / q) * (_sigmoid(12.0 * (X[:, :q] - 0.5)) - 0.5).sum(axis=1)
    return tau


def _corner_tau(X):
    return np.full(np.asarray(X).shape[0], 0.1)


@dataclass(frozen=True)
class Design:
    name: str
    d: int
    true_tau: Fn = field(repr=False)
    main_effect: Fn = field(repr=False)
    propensity: Fn = field(repr=False)
    q: int | None = None

    def params(self) -> dict:
        out = {"design": self.name, "d": self.d}
        if self.q is not None:
            out["q"] = self.q
        return out


def get_design(name: str, d: int, q: int | None = None) -> Design:
    if name == "confounded":
        if d < 1:
            raise ValueError("confounded design needs d >= 1")
        return Design(name, d, _zero, _confounded_main, _confounded_propensity)
    if name in ("smooth", "spike"):
        if d < 2:
            raise ValueError(f"{name} design needs d >= 2")
        tau = _smooth_tau if name == "smooth" else _spike_tau
        return Design(name, d, tau, _zero, _half)
    if name == "dense":
        q = d if q is None else q
        if not (1 <= q <= d):
            raise ValueError("dense design needs 1 <= q <= d")
        return Design(name, d, _dense_tau(q), _zero, _half, q)
    if name == "corner":
        if d != CORNER_DIM:
            raise ValueError(f"corner design is fixed at d = {CORNER_DIM}")
        return Design(name, d, _corner_tau, _zero, _half)
    raise ValueError(f"unknown design {name!r}; choose from {DESIGNS}")


def generate(design: Design, n: int, stream: RandomStream) -> Dataset:
    """Draw ``n`` training rows from ``design``."""
    X = stream.random((n, design.d))
    if design.name == "corner":
        w = (stream.random(n) < 0.5).astype(np.int8)
        a = stream.random(n) < 0.05
        y = 2.0 * w * a + stream.normal(0.0, 0.1, n)
        return Dataset(X, y, w)
    e = design.propensity(X)
    w = (stream.random(n) < e).astype(np.int8)
    mean = design.main_effect(X) + (w - 0.5) * design.true_tau(X)
    y = mean + stream.normal(0.0, 1.0, n)
    return Dataset(X, y, w)


def draw_test_points(d: int, count: int, stream: RandomStream) -> np.ndarray:
    """Fresh uniform evaluation points."""
    return stream.random((count, d))


def gen_confounded(n: int, d: int, stream: RandomStream):
    design = get_design("confounded", d)
    return generate(design, n, stream), design.true_tau


def gen_smooth(n: int, d: int, stream: RandomStream):
    design = get_design("smooth", d)
    return generate(design, n, stream), design.true_tau


def gen_spike(n: int, d: int, stream: RandomStream):
    design = get_design("spike", d)
    return generate(design, n, stream), design.true_tau


def gen_dense(n: int, d: int, q: int, stream: RandomStream):
    design = get_design("dense", d, q)
    return generate(design, n, stream), design.true_tau


def gen_corner(n: int, stream: RandomStream):
    design = get_design("corner", CORNER_DIM)
    return generate(design, n, stream), design.true_tau
