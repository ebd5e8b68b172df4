"""Infinitesimal-jackknife variance for subsampled forests, and intervals.

For a query point x with per-tree predictions T_b(x) and membership
indicators N_ib, the estimate is

    (n - 1)/n * (n/(n - s))**2 * sum_i Cov_b[T_b(x), N_ib]**2

with the covariance taken over trees using 1/B normalization.

With finitely many trees each squared covariance also carries Monte Carlo
noise.  Its expectation is about Var_b[T_b(x)] * (s/n)(1 - s/n) / B per row,
so ``debias=True`` subtracts

    (n - 1) * s / (n - s) * Var_b[T_b(x)] / B

(the correction factor times n (s/n)(1 - s/n) Var_b / B) and clips at zero.

The corrected estimate is a small difference of two noisy numbers when trees
are individually very noisy, so intervals use an empirical-Bayes smoothing
step (``calibrate_eb``) across the query batch: the Monte Carlo noise level is
read off by comparing against a half-forest, a smooth prior for the true
variances is fitted by deconvolution, and each estimate is replaced by its
posterior mean.  A consequence is that calibrated variances depend on which
points are queried together.
"""

from __future__ import annotations

import math
import warnings
from itertools import combinations

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .core import Dataset, ForestConfig, Mode, PredictionResult, as_points
from .forest import Forest, forest_average
from .sampling import SubsampleRecord
from .tree import Tree, leaf_statistics

ENUMERATION_BUDGET = 10**6
_CHUNK = 512


class MonteCarloWarning(UserWarning):
    """Fewer trees than training rows; the variance estimate is noisier."""


def correction_factor(n: int, s: int) -> float:
    if s >= n:
        raise ValueError("variance estimate unsupported for s >= n (correction diverges)")
    return (n - 1) / n * (n / (n - s)) ** 2


def monte_carlo_bias(preds: np.ndarray, n: int, s: int) -> np.ndarray:
    """Expected inflation of the raw estimate due to using finitely many trees."""
    B = preds.shape[0]
    tree_var = preds.var(axis=0)
    return (n - 1) * s / (n - s) * tree_var / B


def variance_ij_matrix(preds: np.ndarray, membership: np.ndarray, s: int,
                       debias: bool = False) -> np.ndarray:
    """Variance estimates from a (B, q) prediction matrix and (B, n) membership."""
    B, n = membership.shape
    if B < 2:
        raise ValueError("need at least two trees")
    factor = correction_factor(n, s)
    Nc = membership - membership.mean(axis=0)
    Pc = preds - preds.mean(axis=0)
    out = np.empty(preds.shape[1])
    for lo in range(0, preds.shape[1], _CHUNK):
        cov = Pc[:, lo:lo + _CHUNK].T @ Nc / B
        out[lo:lo + _CHUNK] = factor * np.einsum("qi,qi->q", cov, cov)
    if debias:
        out = np.maximum(out - monte_carlo_bias(preds, n, s), 0.0)
    return out


def _prior_grid(v: np.ndarray, nbin: int) -> np.ndarray:
    sd = v.std(ddof=1)
    lo = min(v.min() - 2 * sd, 0.0)
    hi = max(v.max() + 2 * sd, sd)
    return np.linspace(lo, hi, nbin)


def fit_variance_prior(v: np.ndarray, sigma: float, degree: int = 5, nbin: int = 200,
                       unif_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Deconvolve ``v = truth + N(0, sigma^2)`` for a prior on the truth.

    The prior lives on a grid over [0, max] and has log-density a polynomial
    of the given degree (no constant term), mixed with a small uniform part so
    that no grid cell gets zero mass.  Returns (grid, weights).
    """
    grid = _prior_grid(v, nbin)
    width = grid[1] - grid[0]
    support = grid >= 0
    basis = np.column_stack([np.where(support, grid ** j, 0.0) for j in range(1, degree + 1)])
    unif = support / support.sum()
    # density of v at each grid cell given truth at each grid cell
    kernel = norm.pdf((grid[:, None] - grid[None, :]) / sigma) * width / sigma

    def prior(eta):
        with np.errstate(over="ignore", invalid="ignore"):
            raw = np.exp(basis @ eta) * support
            total = raw.sum()
        if not np.isfinite(total) or total <= 100 * np.finfo(float).eps:
            return None
        return (1 - unif_fraction) * raw / total + unif_fraction * unif

    def neg_loglik(eta):
        g = prior(eta)
        if g is None:
            return 1000.0 * (len(v) + float(eta @ eta))
        f = kernel @ g
        return float(np.sum(np.interp(v, grid, -np.log(np.maximum(f, 1e-7)))))

    eta = minimize(neg_loglik, np.full(degree, -1.0), method="Nelder-Mead",
                   options={"maxiter": 4000, "xatol": 1e-6, "fatol": 1e-8}).x
    g = prior(eta)
    if g is None:
        g = unif
    return grid, g


def calibrate_eb(v, sigma2: float) -> np.ndarray:
    """Posterior-mean shrinkage of noisy variance estimates.

    ``sigma2`` is the Monte Carlo noise variance of each estimate.  Falls back
    to clipping at zero when there is nothing to learn from.
    """
    v = np.asarray(v, dtype=np.float64)
    if sigma2 <= 0 or v.size < 2 or v.min() == v.max():
        return np.maximum(v, 0.0)
    sigma = math.sqrt(sigma2)
    grid, g = fit_variance_prior(v, sigma)
    out = np.empty_like(v)
    for lo in range(0, v.size, _CHUNK):
        post = norm.pdf((grid[None, :] - v[lo:lo + _CHUNK, None]) / sigma) * g
        out[lo:lo + _CHUNK] = post @ grid / post.sum(axis=1)
    return np.maximum(out, 0.0)


def calibrated_variance(preds: np.ndarray, membership: np.ndarray, s: int) -> np.ndarray:
    """Bias-corrected estimates, then smoothed by ``calibrate_eb``.

    The noise level comes from recomputing the estimate on the first half of
    the trees; the two estimates share that half, which the scaling accounts
    for.
    """
    B = preds.shape[0]
    v = variance_ij_matrix(preds, membership, s, debias=True)
    half = -(-B // 2)
    if half < 2 or half == B or v.size < 2:
        return v
    v_half = variance_ij_matrix(preds[:half], membership[:half], s, debias=True)
    delta = half / B
    sigma2 = (delta ** 2 + (1 - delta) ** 2) / (2 * (1 - delta) ** 2) * float(np.mean((v_half - v) ** 2))
    return calibrate_eb(v, sigma2)


def check_forest(forest: Forest) -> None:
    if forest.num_trees < 2:
        raise ValueError("need at least two trees")
    # enumerated forests of trivial trees are exact, not Monte Carlo
    if forest.num_trees < forest.n_train and forest.config.mode is not Mode.TRIVIAL:
        warnings.warn(f"B={forest.num_trees} < n={forest.n_train}: Monte Carlo noise "
                      "dominates the raw variance estimate and bias-corrected intervals "
                      "may collapse to zero width", MonteCarloWarning, stacklevel=3)


def variance_ij_batch(forest: Forest, xs, debias: bool = False) -> np.ndarray:
    check_forest(forest)
    P = forest.tree_predictions(xs)
    return variance_ij_matrix(P, forest.membership, forest.config.subsample_size, debias)


def variance_ij(forest: Forest, x, debias: bool = False) -> float:
    return float(variance_ij_batch(forest, [x], debias)[0])


def variance_simple(ys) -> float:
    """Unbiased variance of the sample mean: sum (y - ybar)^2 / (n (n - 1))."""
    ys = np.asarray(ys, dtype=np.float64)
    n = ys.shape[0]
    if n < 2:
        raise ValueError("need at least two values")
    dev = ys - ys.mean()
    return float(np.dot(dev, dev) / (n * (n - 1)))


def z_value(level: float) -> float:
    if not (0.0 < level < 1.0):
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def confidence_interval(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = z_value(level) * math.sqrt(variance)
    return estimate - half, estimate + half


def interval_variance(forest: Forest, P: np.ndarray, calibrate: bool = True) -> np.ndarray:
    """Variance used for intervals: bias-corrected, calibrated unless asked not to."""
    s = forest.config.subsample_size
    if calibrate:
        return calibrated_variance(P, forest.membership, s)
    return variance_ij_matrix(P, forest.membership, s, debias=True)


def predict_with_ci(forest: Forest, xs, level: float = 0.95,
                    calibrate: bool = True) -> list[PredictionResult]:
    pts = as_points(xs, forest.d)
    if pts.shape[0] == 0:
        return []
    check_forest(forest)
    P = forest.tree_predictions(pts)
    est = forest_average(P)
    var = interval_variance(forest, P, calibrate)
    z = z_value(level)
    half = z * np.sqrt(var)
    return [PredictionResult(float(e), float(v), float(e - h), float(e + h), level)
            for e, v, h in zip(est, var, half)]


def enumerate_exact_forest(data: Dataset, s: int) -> Forest:
    """One depth-0 tree per size-``s`` subset, each subset exactly once.

    Each tree predicts the mean response of its subsample, so the forest
    realizes the all-subsets average exactly.
    """
    n = data.n
    if not (1 <= s <= n):
        raise ValueError("need 1 <= s <= n")
    if math.comb(n, s) > ENUMERATION_BUDGET:
        raise ValueError(f"C({n}, {s}) exceeds the enumeration budget")
    empty = np.zeros(0, dtype=np.int64)
    trees = []
    for b, subset in enumerate(combinations(range(n), s)):
        idx = np.array(subset, dtype=np.int64)
        w = data.w[idx] if data.w is not None else np.zeros(s, dtype=np.int8)
        trees.append(Tree(
            feature=np.array([-1]), threshold=np.zeros(1),
            left=np.array([-1]), right=np.array([-1]),
            record=SubsampleRecord(b, idx, empty, empty), mode=Mode.TRIVIAL,
            **leaf_statistics(np.zeros(s, dtype=np.int64), data.y[idx], w, 1, Mode.TRIVIAL),
        ))
    cfg = ForestConfig(num_trees=len(trees), subsample_size=s, min_leaf=1,
                       mode=Mode.TRIVIAL)
    return Forest(trees, cfg, n, data.d)
