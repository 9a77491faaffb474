"""Whitening and the robust tensor power method with deflation.

Pipeline: T2 (after correcting by the sign of c2) is eigendecomposed; the top-k
eigenpairs give a map W with W^T T2 W = I_k. The third-moment tensor contracted
into whitened coordinates, corrected by the sign of c3, is a k x k x k tensor
with an orthogonal rank-one decomposition whose eigenvectors are the whitened
regressor directions. Power iterations with random restarts extract them one at
a time with deflation; back-projection through the pseudo-inverse recovers the
regressors and the component weights |c3| E[p_i].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cqt import CqtCoefficients
from .errors import NumericalError
from .model import make_rng
from .scores import Sym2, Sym3


@dataclass(frozen=True)
class WhiteningMap:
    w_map: np.ndarray                    # (d, k), w_map^T (sign * T2) w_map = I_k
    pseudo_inverse_transpose: np.ndarray  # (d, k) back-projection of whitened vectors
    eigen_signs: np.ndarray              # (k,) signs of the raw T2 eigenvalues used
    eigenvalues: np.ndarray              # (k,) eigenvalues of sign-corrected T2, descending


def whiten(t2: Sym2, k: int, c2_sign: float = 1.0, rank_rtol: float = 1e-6) -> WhiteningMap:
    """Whitening map from the top-k eigenpairs of sign-corrected T2.

    Raises NumericalError when fewer than k eigenvalues clear the rank
    threshold rank_rtol * lambda_max.
    """
    if k < 1:
        raise NumericalError("need at least one component")
    sign = 1.0 if c2_sign >= 0 else -1.0
    m = sign * t2.to_dense()
    evals, evecs = np.linalg.eigh(m)
    order = np.argsort(-np.abs(evals), kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    lam_max = abs(evals[0]) if evals.size else 0.0
    top = evals[:k]
    if lam_max <= 0.0 or np.any(np.abs(top) <= rank_rtol * lam_max):
        raise NumericalError(
            "rank deficient: regressors not linearly independent or n too small "
            f"(top-{k} eigenvalues {np.array2string(top, precision=3)})")
    # a sampling-noise eigenvalue may come out negative; absorb its sign so the
    # whitened metric is positive and record it
    signs = np.sign(top)
    mags = np.abs(top)
    u = evecs[:, :k]
    w_map = u / np.sqrt(mags)
    back = u * np.sqrt(mags)
    return WhiteningMap(w_map, back, signs * sign, mags.copy())


@dataclass
class PowerMethodResult:
    vectors: np.ndarray      # (k, m) rows: unit eigenvectors, descending eigenvalue
    eigenvalues: np.ndarray  # (k,)
    iterations: list         # per-component iteration counts
    restarts: int
    weak_flags: list         # components whose eigenvalue fell below the noise floor
    deflation_norms: list    # Frobenius norm of the tensor after each deflation


def power_method(t3: np.ndarray, n_components: int, restarts: int = 30,
                 iterations: int = 50, seed=0,
                 noise_floor_rtol: float = 1e-6) -> PowerMethodResult:
    """Robust tensor power method on a dense symmetric tensor.

    For each component the best of ``restarts`` random starts (by eigenvalue
    after ``iterations`` fixed-point steps v <- T(I,v,v)/||.||) is polished
    with another round of iterations, then deflated. Restarts iterate as one
    batched matrix, so the per-seed result is deterministic.
    """
    if restarts < 1 or iterations < 1:
        raise NumericalError("restarts and iterations must be >= 1")
    t = np.array(t3, dtype=float)
    m = t.shape[0]
    rng = make_rng(seed)
    vectors = np.zeros((n_components, m))
    eigenvalues = np.zeros(n_components)
    iters_used, weak_flags, deflation_norms = [], [], []
    floor = None

    for comp in range(n_components):
        theta = rng.standard_normal((restarts, m))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        for _ in range(iterations):
            theta = np.einsum("abc,lb,lc->la", t, theta, theta, optimize=True)
            nrm = np.linalg.norm(theta, axis=1, keepdims=True)
            nrm[nrm == 0] = 1.0
            theta /= nrm
        lam = np.einsum("abc,la,lb,lc->l", t, theta, theta, theta, optimize=True)
        best = int(np.argmax(lam))
        v = theta[best]
        for _ in range(iterations):
            v_new = np.einsum("abc,b,c->a", t, v, v, optimize=True)
            nrm = np.linalg.norm(v_new)
            if nrm == 0:
                break
            v = v_new / nrm
        lam_v = float(np.einsum("abc,a,b,c->", t, v, v, v, optimize=True))
        if lam_v < 0:   # canonicalize: odd tensor, flip vector to flip sign
            v, lam_v = -v, -lam_v
        if floor is None:
            floor = noise_floor_rtol * max(abs(lam_v), 1e-300)
        if lam_v < floor:
            warnings.warn(f"component {comp}: eigenvalue {lam_v:.3e} below noise floor",
                          RuntimeWarning)
            weak_flags.append(comp)
        vectors[comp] = v
        eigenvalues[comp] = lam_v
        iters_used.append(2 * iterations)
        t = t - lam_v * np.einsum("a,b,c->abc", v, v, v)
        deflation_norms.append(float(np.linalg.norm(t)))

    order = np.argsort(-eigenvalues, kind="stable")
    position = {old: new for new, old in enumerate(order)}
    return PowerMethodResult(vectors[order], eigenvalues[order],
                             [iters_used[i] for i in order], restarts,
                             sorted(position[i] for i in weak_flags),
                             deflation_norms)


@dataclass
class DecompositionResult:
    vectors: np.ndarray       # (k, d) unit-norm regressor estimates
    weights: np.ndarray       # (k,) positive scales |c3| E[p_i]
    mixing_estimates: np.ndarray  # (k,) implied E[p_i] (diagnostic only)
    residual: float           # Frobenius norm left after deflation (whitened space)
    restarts: int
    iterations: list
    weak_flags: list = field(default_factory=list)
    deflation_norms: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "regressors": self.vectors.tolist(),
            "weights": self.weights.tolist(),
            "residual": self.residual,
            "restarts": self.restarts,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class DecompositionOptions:
    restarts: int = 30
    iterations: int = 50
    seed: int = 0
    rank_rtol: float = 1e-6
    noise_floor_rtol: float = 1e-6


def recover_regressors(t2: Sym2, t3: Sym3, k: int, cqt: CqtCoefficients,
                       opts: DecompositionOptions = DecompositionOptions()) -> DecompositionResult:
    """Whiten, decompose, back-project: unit-norm regressor estimates from (T2, T3).

    Signs: both tensors are corrected by the signs of c2 and c3 so the whitened
    tensor has positive eigenvalues |c3| E[p_i] / (|c2| E[p_i])^{3/2}; each
    back-projected component then aligns with +a_i rather than -a_i.
    """
    if k > t2.d:
        raise NumericalError(f"cannot recover k={k} components in dimension {t2.d}")
    wm = whiten(t2, k, c2_sign=np.sign(cqt.c2), rank_rtol=opts.rank_rtol)
    t3w = t3.contract_all_modes(wm.w_map) * np.sign(cqt.c3)
    pm = power_method(t3w, k, restarts=opts.restarts, iterations=opts.iterations,
                      seed=opts.seed, noise_floor_rtol=opts.noise_floor_rtol)

    back = wm.pseudo_inverse_transpose
    vectors = np.zeros((k, t2.d))
    weights = np.zeros(k)
    for i in range(k):
        b = back @ pm.vectors[i]
        nrm = np.linalg.norm(b)
        if nrm == 0:
            raise NumericalError(f"degenerate component {i}: zero back-projection")
        vectors[i] = b / nrm
        weights[i] = pm.eigenvalues[i] * nrm**3
    mixing = weights / max(abs(cqt.c3), 1e-300)
    return DecompositionResult(vectors, weights, mixing,
                               residual=pm.deflation_norms[-1] if pm.deflation_norms else 0.0,
                               restarts=opts.restarts, iterations=pm.iterations,
                               weak_flags=pm.weak_flags, deflation_norms=pm.deflation_norms)
