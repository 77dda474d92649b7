"""Shared independent oracles for the test suite.

Everything here is built from the math module / scipy.integrate only, so
oracle values never flow through the code paths they are checking.
"""

import math

import numpy as np

from gradefactor.links import LinkKind


def phi_scalar(z, link):
    if link is LinkKind.PROBIT:
        return 0.5 * math.erfc(-z / math.sqrt(2.0))
    return 1.0 / (1.0 + math.exp(-z))


def log_phi_scalar(z, link):
    """Stable scalar log Phi(z); asymptotic series deep in the probit tail."""
    if link is LinkKind.LOGIT:
        return min(z, 0.0) - math.log1p(math.exp(-abs(z)))
    if z > -30.0:
        return math.log(0.5 * math.erfc(-z / math.sqrt(2.0)))
    a = -z
    series, coef = 0.0, 1.0
    for n in range(6):
        series += coef / a ** (2 * n)
        coef *= -(2 * n + 1)
    return -0.5 * a * a - math.log(math.sqrt(2.0 * math.pi)) + math.log(series / a)


def smooth_row_oracle(w, C_aug, y, mask, mu_w, link):
    """Scalar-loop smooth objective (NLL + ridge) of one question row."""
    total = 0.5 * mu_w * float(np.dot(w, w))
    for j in range(C_aug.shape[1]):
        if not mask[j]:
            continue
        z = float(C_aug[:, j] @ w)
        total -= log_phi_scalar(z if y[j] == 1 else -z, link)
    return total


def smooth_col_oracle(c, W_aug, y, mask, link):
    """Scalar-loop smooth objective (NLL only) of one learner column."""
    total = 0.0
    for i in range(W_aug.shape[0]):
        if not mask[i]:
            continue
        z = float(W_aug[i, :-1] @ c + W_aug[i, -1])
        total -= log_phi_scalar(z if y[i] == 1 else -z, link)
    return total


def central_diff(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for idx in range(x.size):
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def random_row_instance(rng, K, N):
    """Random augmented row subproblem (difficulty coordinate last)."""
    C_aug = np.vstack([rng.normal(size=(K, N)), np.ones((1, N))])
    y = rng.integers(0, 2, N).astype(float)
    mask = rng.random(N) < 0.8
    if not mask.any():
        mask[0] = True
    w = np.concatenate([np.abs(rng.normal(size=K)), rng.normal(size=1)])
    return w, C_aug, y, mask


def binary_rank2_instance(rng, Q=24, N=16):
    """Noiseless {0,1} responses from a sparse non-negative rank-2 model:
    every question loads exactly one of two distinct binary atom rows."""
    patterns = rng.integers(0, 2, size=(2, N)).astype(float)
    while np.array_equal(patterns[0], patterns[1]) or not patterns.any(axis=1).all():
        patterns = rng.integers(0, 2, size=(2, N)).astype(float)
    assign = rng.integers(0, 2, size=Q)
    W = np.zeros((Q, 2))
    W[np.arange(Q), assign] = 1.0
    return W, patterns, W @ patterns
