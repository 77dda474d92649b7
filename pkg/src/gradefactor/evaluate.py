"""Estimate quality metrics and held-out prediction evaluation.

Factorizations are only identified up to concept relabeling and column
scaling, so before any error is computed the W columns and C rows of
both truth and estimate are normalized to unit length and the estimate's
concepts are permuted to best match the truth (summed cosine similarity
over W columns and C rows jointly).  Difficulties are compared raw.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt

from .links import inv_link
from .mle import MLConfig, fit_ml
from .model import FactorModel, ResponseMatrix

_EXHAUSTIVE_LIMIT = 10


@dataclass
class EvalReport:
    """Normalized squared errors, support error, and prediction scores."""

    e_w: float
    e_c: float
    e_mu: float
    e_h: float
    permutation: tuple = ()
    prediction_accuracy: float | None = None
    avg_prediction_likelihood: float | None = None

    def __post_init__(self):
        for name in ("e_w", "e_c", "e_mu", "e_h"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("prediction_accuracy", "avg_prediction_likelihood"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _unit_columns(M):
    norms = np.linalg.norm(M, axis=0, keepdims=True)
    return np.divide(M, norms, out=np.zeros_like(M, dtype=float), where=norms > 0)


def _unit_rows(M):
    return _unit_columns(np.asarray(M, dtype=float).T).T


def match_permutation(W_true, W_est, C_true, C_est):
    """Concept relabeling that best aligns the estimate with the truth.

    Maximizes the summed cosine similarity of matched W columns plus
    matched C rows.  Exhaustive search up to K=10 concepts; larger K
    falls back to the assignment solver (same optimum, documented
    fallback).  Returns perm with perm[a] = estimate concept matched to
    truth concept a.
    """
    Wt = _unit_columns(np.asarray(W_true, dtype=float))
    We = _unit_columns(np.asarray(W_est, dtype=float))
    Ct = _unit_rows(np.asarray(C_true, dtype=float))
    Ce = _unit_rows(np.asarray(C_est, dtype=float))
    K = Wt.shape[1]
    score = Wt.T @ We + Ct @ Ce.T  # score[a, b]: truth a vs estimate b
    if K <= _EXHAUSTIVE_LIMIT:
        best, best_val = None, -np.inf
        idx = np.arange(K)
        for perm in itertools.permutations(range(K)):
            val = float(score[idx, perm].sum())
            if val > best_val:
                best, best_val = perm, val
        return np.asarray(best, dtype=int)
    _, cols = sopt.linear_sum_assignment(-score)
    return np.asarray(cols, dtype=int)


def eval_metrics(truth: FactorModel, estimate: FactorModel) -> EvalReport:
    """Permutation-matched normalized errors of an estimated factorization."""
    if (truth.Q, truth.N, truth.K) != (estimate.Q, estimate.N, estimate.K):
        raise ValueError("truth and estimate dimensions disagree")
    perm = match_permutation(truth.W, estimate.W, truth.C, estimate.C)
    Wt = _unit_columns(truth.W)
    We = _unit_columns(estimate.W)[:, perm]
    Ct = _unit_rows(truth.C)
    Ce = _unit_rows(estimate.C)[perm, :]

    denom_w = float((Wt * Wt).sum())
    denom_c = float((Ct * Ct).sum())
    denom_mu = float(truth.mu @ truth.mu)
    H_t = (truth.W > 0).astype(float)
    H_e = (estimate.W[:, perm] > 0).astype(float)
    denom_h = float((H_t * H_t).sum())
    if min(denom_w, denom_c, denom_mu, denom_h) <= 0:
        raise ValueError("zero-norm ground truth; error ratios undefined")

    return EvalReport(
        e_w=float(((Wt - We) ** 2).sum()) / denom_w,
        e_c=float(((Ct - Ce) ** 2).sum()) / denom_c,
        e_mu=float(((truth.mu - estimate.mu) ** 2).sum()) / denom_mu,
        e_h=float(((H_t - H_e) ** 2).sum()) / denom_h,
        permutation=tuple(int(p) for p in perm),
    )


def predict_heldout(model: FactorModel, heldout: ResponseMatrix):
    """Score held-out responses: (accuracy at the 0.5 rule, mean
    probability assigned to the actual outcomes)."""
    if (model.Q, model.N) != (heldout.Q, heldout.N):
        raise ValueError("model and held-out data dimensions disagree")
    if heldout.n_observed == 0:
        raise ValueError("held-out set is empty")
    z = model.W @ model.C + model.mu[:, None]
    probs = inv_link(z, model.link)[heldout.mask]
    y = heldout.entries[heldout.mask]
    predictions = (probs >= 0.5).astype(float)
    accuracy = float((predictions == y).mean())
    likelihood = float(np.where(y == 1.0, probs, 1.0 - probs).mean())
    return accuracy, likelihood


def _fold_partition(mask, folds, rng):
    coords = np.argwhere(mask)
    if len(coords) < folds:
        raise ValueError("not enough observed entries to build the folds")
    order = rng.permutation(len(coords))
    return [coords[order[f::folds]] for f in range(folds)]


def cross_validate(data: ResponseMatrix, K_grid, lambda_grid, folds: int,
                   seed: int = 0, base_config: MLConfig | None = None):
    """Entry-level cross-validation over (K, lambda).

    The observed entries are split into `folds` disjoint groups; each
    candidate trains on the remainder and is scored by mean held-out
    prediction likelihood.  Ties prefer the smaller K, then the larger
    lambda.  Returns (best_K, best_lambda, scores) where scores maps
    (K, lambda) to the per-fold likelihoods.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    K_grid = sorted(set(int(k) for k in K_grid))
    lambda_grid = sorted(set(float(l) for l in lambda_grid))
    if not K_grid or not lambda_grid:
        raise ValueError("candidate grids must be nonempty")
    rng = np.random.default_rng(seed)
    parts = _fold_partition(data.mask, folds, rng)
    for part in parts:
        if len(part) == 0:
            raise ValueError("a fold has an empty validation set")

    scores = {}
    for K in K_grid:
        for lam in lambda_grid:
            fold_scores = []
            for part in parts:
                val_mask = np.zeros_like(data.mask)
                val_mask[part[:, 0], part[:, 1]] = True
                train_mask = data.mask & ~val_mask
                train = ResponseMatrix(np.where(train_mask, data.entries, 0.0),
                                       train_mask)
                if base_config is None:
                    cfg = MLConfig(lambda_l1=lam, seed=seed)
                else:
                    cfg = dataclasses.replace(base_config, lambda_l1=lam, seed=seed)
                model, _ = fit_ml(train, K, cfg)
                val = ResponseMatrix(np.where(val_mask, data.entries, 0.0), val_mask)
                _, likelihood = predict_heldout(model, val)
                fold_scores.append(likelihood)
            scores[(K, lam)] = fold_scores

    def sort_key(item):
        (K, lam), vals = item
        return (-float(np.mean(vals)), K, -lam)

    (best_K, best_lam), _ = min(scores.items(), key=sort_key)
    return best_K, best_lam, scores


def write_benchmark_csv(path, rows):
    """Emit (trial, method, metric, value) rows for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "method", "metric", "value"])
        for trial, method, metric, value in rows:
            writer.writerow([trial, method, metric, repr(float(value))])
