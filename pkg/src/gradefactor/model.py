"""Core data model: graded-response matrices and factorizations.

A response dataset is a Q x N binary matrix together with a boolean
observation mask; entries outside the mask are missing (unassigned
questions), never sentinel values.  A factorization holds the
non-negative question--concept weights W (Q x K), the real-valued
learner concept knowledge C (K x N), the per-question difficulty
offsets mu (larger = easier), and the link choice.  The rank-one
difficulty matrix mu * 1^T is never materialized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .links import LinkKind, inv_link, log_inv_link


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dimensions:
    """Problem dimensions; warns when K is not small relative to Q and N."""

    Q: int
    N: int
    K: int

    def __post_init__(self):
        for name in ("Q", "N", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.K > min(self.Q, self.N):
            warnings.warn(
                f"concept count K={self.K} exceeds min(Q, N)="
                f"{min(self.Q, self.N)}; the model expects far fewer "
                "concepts than questions or learners",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ResponseMatrix:
    """Binary graded responses with an observation mask.

    entries : (Q, N) array of {0, 1}; values at unobserved positions are
        ignored.
    mask : (Q, N) boolean array, True where a graded response was observed.
    """

    entries: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ValueError("entries must be a Q x N matrix with Q, N >= 1")
        if self.mask is None:
            mask = np.ones(entries.shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
        if mask.shape != entries.shape:
            raise ValueError("mask shape must match entries shape")
        observed = entries[mask]
        if not np.isin(observed, (0.0, 1.0)).all():
            raise ValueError("observed entries must be 0 or 1")
        entries = np.where(mask, entries, 0.0)
        entries.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_dense(cls, values):
        """Build from a dense matrix where NaN marks a missing response."""
        values = np.asarray(values, dtype=float)
        mask = ~np.isnan(values)
        return cls(np.where(mask, values, 0.0), mask)

    @property
    def Q(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class FactorModel:
    """Factorization (W, C, mu) plus the link used to score slack values."""

    W: np.ndarray
    C: np.ndarray
    mu: np.ndarray
    link: LinkKind = LinkKind.PROBIT

    def __post_init__(self):
        W = _frozen_array(self.W)
        C = _frozen_array(self.C)
        mu = _frozen_array(self.mu)
        if W.ndim != 2 or C.ndim != 2 or mu.ndim != 1:
            raise ValueError("W must be Q x K, C must be K x N, mu length Q")
        if W.shape[1] != C.shape[0]:
            raise ValueError(
                f"inner dimensions disagree: W is {W.shape}, C is {C.shape}"
            )
        if mu.shape[0] != W.shape[0]:
            raise ValueError("mu length must equal the number of questions")
        if not (np.isfinite(W).all() and np.isfinite(C).all() and np.isfinite(mu).all()):
            raise ValueError("factors must be finite")
        if (W < 0).any():
            raise ValueError("question-concept weights must be non-negative")
        if not isinstance(self.link, LinkKind):
            raise TypeError("link must be a LinkKind")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "mu", mu)

    @property
    def Q(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.C.shape[1]

    @property
    def K(self) -> int:
        return self.W.shape[1]


def slack(model: FactorModel) -> np.ndarray:
    """Slack matrix Z with Z[i, j] = w_i . c_j + mu_i."""
    return model.W @ model.C + model.mu[:, None]


def log_likelihood(model: FactorModel, data: ResponseMatrix) -> float:
    """Sum of per-entry log-likelihoods over the observed positions."""
    if (model.Q, model.N) != (data.Q, data.N):
        raise ValueError(
            f"model is {model.Q} x {model.N} but data is {data.Q} x {data.N}"
        )
    z = slack(model)
    ll = np.where(
        data.entries == 1.0,
        log_inv_link(z, model.link),
        log_inv_link(-z, model.link),
    )
    return float(ll[data.mask].sum())


def predict_prob(model: FactorModel, i: int, j: int) -> float:
    """Probability of a correct response by learner j on question i."""
    if not (0 <= i < model.Q and 0 <= j < model.N):
        raise IndexError(f"entry ({i}, {j}) out of range for {model.Q} x {model.N}")
    z = float(model.W[i] @ model.C[:, j] + model.mu[i])
    return float(inv_link(z, model.link))
