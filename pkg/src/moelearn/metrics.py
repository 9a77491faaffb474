"""Permutation-matched evaluation metrics and the fit report.

RegressorFit: max over permutations of the minimum |<a_hat_pi(i), a*_i>| on
unit-normalized rows. GatingFit: |<w_hat, w*>| on unit vectors. E(A, W): the
permutation-minimized sum of the two Frobenius errors, with one permutation
coupling both matrices and the gating matrices padded by an explicit zero row.
Permutations are enumerated for k <= 8; larger k falls back to Hungarian
max-sum matching, which approximates the bottleneck objective and is flagged.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError

BRUTE_FORCE_LIMIT = 8


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def regressor_fit(est: np.ndarray, truth: np.ndarray) -> tuple[float, tuple, bool]:
    """(fit, permutation, exact) with est row pi(i) matched to truth row i."""
    est = _unit_rows(est)
    truth = _unit_rows(truth)
    if est.shape != truth.shape:
        raise ConfigError(f"shape mismatch: {est.shape} vs {truth.shape}")
    k = est.shape[0]
    cos = np.abs(est @ truth.T)   # cos[p, i] = |<est_p, truth_i>|
    if k <= BRUTE_FORCE_LIMIT:
        best, best_pi = -1.0, None
        for pi in itertools.permutations(range(k)):
            val = min(cos[pi[i], i] for i in range(k))
            if val > best:
                best, best_pi = val, pi
        return float(best), tuple(best_pi), True
    rows, cols = linear_sum_assignment(-cos)   # max-sum approximation, flagged
    pi = [0] * k
    for p, i in zip(rows, cols):
        pi[i] = p
    return float(min(cos[pi[i], i] for i in range(k))), tuple(pi), False


def gating_fit(est_w: np.ndarray, truth_w: np.ndarray) -> float:
    """Absolute cosine similarity of unit-normalized gating vectors.

    Returns NaN when the truth is the zero vector (fit undefined).
    """
    est_w = np.asarray(est_w, dtype=float).ravel()
    truth_w = np.asarray(truth_w, dtype=float).ravel()
    tn = np.linalg.norm(truth_w)
    if tn == 0:
        return float("nan")
    en = np.linalg.norm(est_w)
    if en == 0:
        return 0.0
    return float(abs(est_w @ truth_w) / (en * tn))


def _pad_gating(w: np.ndarray, k: int, d: int) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float)) if np.size(w) else np.zeros((0, d))
    if w.shape == (k, d):
        return w
    if w.shape == (k - 1, d):
        return np.vstack([w, np.zeros((1, d))])
    raise ConfigError(f"gating matrix must be ({k - 1}, {d}) or ({k}, {d}), got {w.shape}")


def param_error(a_est: np.ndarray, w_est: np.ndarray,
                a_true: np.ndarray, w_true: np.ndarray) -> tuple[float, tuple]:
    """E(A, W) = inf_pi ||A - A*_pi||_F + ||W - W*_pi||_F, shared permutation."""
    a_est = np.atleast_2d(np.asarray(a_est, dtype=float))
    a_true = np.atleast_2d(np.asarray(a_true, dtype=float))
    if a_est.shape != a_true.shape:
        raise ConfigError(f"shape mismatch: {a_est.shape} vs {a_true.shape}")
    k, d = a_est.shape
    w_est = _pad_gating(w_est, k, d)
    w_true = _pad_gating(w_true, k, d)

    def error_for(pi):
        pi = list(pi)
        ea = np.linalg.norm(a_est - a_true[pi], "fro")
        ew = np.linalg.norm(w_est - w_true[pi], "fro")
        return ea + ew

    if k <= BRUTE_FORCE_LIMIT:
        best, best_pi = float("inf"), None
        for pi in itertools.permutations(range(k)):
            val = error_for(pi)
            if val < best:
                best, best_pi = val, pi
        return float(best), tuple(best_pi)
    # Hungarian on summed squared costs approximates the coupled objective
    cost = (np.linalg.norm(a_est[:, None, :] - a_true[None, :, :], axis=2) ** 2
            + np.linalg.norm(w_est[:, None, :] - w_true[None, :, :], axis=2) ** 2)
    rows, cols = linear_sum_assignment(cost)
    pi = [0] * k
    for r, c in zip(rows, cols):
        pi[r] = c
    return float(error_for(pi)), tuple(pi)


def gauge_representatives(w_padded: np.ndarray) -> list[np.ndarray]:
    """All softmax-equivalent representatives of a padded gating matrix.

    Softmax probabilities are invariant to subtracting one row from all rows;
    each choice pins a different row to zero with rows kept in their slots.
    """
    w = np.atleast_2d(np.asarray(w_padded, dtype=float))
    return [w - w[j] for j in range(w.shape[0])]


def canonical_gauge(w_padded: np.ndarray) -> np.ndarray:
    """Minimum-norm gauge representative (first row wins ties)."""
    best, best_norm = None, np.inf
    for cand in gauge_representatives(w_padded):
        nrm = float(np.sum(cand**2))
        if nrm < best_norm - 1e-15:
            best, best_norm = cand, nrm
    return best


def param_error_min_gauge(a_est: np.ndarray, w_est_padded: np.ndarray,
                          a_true: np.ndarray, w_true: np.ndarray) -> tuple[float, tuple]:
    """E(A, W) scored against the best gauge representative of the estimate.

    A gating estimate is only defined up to the softmax gauge (which expert
    carries the zero row), so the parameter error of the estimated model is
    the minimum over its representatives.
    """
    best, best_pi = float("inf"), None
    for cand in gauge_representatives(w_est_padded):
        err, pi = param_error(a_est, cand, a_true, w_true)
        if err < best:
            best, best_pi = err, pi
    return best, best_pi


def gating_fit_rows(w_est_padded: np.ndarray, w_true_padded: np.ndarray,
                    permutation: tuple) -> float:
    """Min-over-rows gating fit for k > 2, after the regressor-matched permutation.

    The estimate is re-gauged so the row matched to the truth's zero row is
    zero, then each remaining row is scored by absolute cosine. Convention for
    reporting only; the two-expert case reduces to gating_fit.
    """
    w_est = np.atleast_2d(np.asarray(w_est_padded, dtype=float))
    w_true = np.atleast_2d(np.asarray(w_true_padded, dtype=float))
    k = w_true.shape[0]
    pi = list(permutation)
    aligned = w_est[pi]                  # aligned[i] pairs with w_true row i
    aligned = aligned - aligned[-1]      # pin the row matched to the zero row
    fits = []
    for i in range(k - 1):
        f = gating_fit(aligned[i], w_true[i])
        if not np.isnan(f):
            fits.append(f)
    return float(min(fits)) if fits else float("nan")


# ---------------------------------------------------------------------------
# fit report
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class FitReport:
    config: dict
    regressor_fit: float = float("nan")
    gating_fit: float = float("nan")
    param_error: float = float("nan")
    matched_permutation: Optional[tuple] = None
    permutation_exact: bool = True
    cqt: Optional[dict] = None
    decomposition: Optional[dict] = None
    traces: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    rng_name: str = "philox4x64"
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "regressor_fit": self.regressor_fit,
            "gating_fit": self.gating_fit,
            "param_error": self.param_error,
            "matched_permutation": list(self.matched_permutation) if self.matched_permutation else None,
            "permutation_exact": self.permutation_exact,
            "cqt": self.cqt,
            "decomposition": self.decomposition,
            "traces": self.traces,
            "flags": self.flags,
            "rng": self.rng_name,
        }

    def to_json(self, path: Optional[str | Path] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def write_aggregate_csv(path: str | Path, rows: list[dict]) -> None:
    """Aggregate table: config_hash, metric, mean, std, trials."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["config_hash", "metric", "mean", "std", "trials"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def write_trace_csv(path: str | Path, trace: list, include_loglik: bool = False) -> None:
    """Per-iteration trace: iter, step_norm, q_value, dist_to_truth [, loglik]."""
    fields = ["iter", "step_norm", "q_value", "dist_to_truth"]
    if include_loglik:
        fields.append("loglik")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in trace:
            vals = [row.iteration, f"{row.step_norm:.10g}", f"{row.q_value:.10g}",
                    "" if np.isnan(row.dist_to_truth) else f"{row.dist_to_truth:.10g}"]
            if include_loglik:
                vals.append(f"{row.loglik:.10g}")
            writer.writerow(vals)
