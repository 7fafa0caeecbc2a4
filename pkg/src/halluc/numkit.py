"""Self-contained numerical primitives: clustering, mixture fitting,
factorizations, golden-section line search, Adam, and a finite-difference
gradient checker.

Everything is float64 and deterministic for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0  # 0.6180339887...


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """K centroids, one per row."""

    centroids: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centroids must be a K x D matrix with K >= 1")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class GmmModel:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray  # (K,) sums to 1
    means: np.ndarray  # (K, D)
    stds: np.ndarray  # (K, D) strictly positive

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {w.sum()}, expected 1")
        if np.any(s <= 0):
            raise ValueError("all stds must be strictly positive")
        if m.shape != s.shape or w.shape[0] != m.shape[0]:
            raise ValueError("inconsistent GMM shapes")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class ThinSvd:
    """Thin SVD: mat = left_vectors @ diag(singular_values) @ right_vectors.T"""

    left_vectors: np.ndarray  # (d, r), orthonormal columns
    singular_values: np.ndarray  # (r,), non-negative, non-increasing
    right_vectors: np.ndarray  # (N, r), orthonormal columns

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


class GoldenResult(NamedTuple):
    argmin: float
    value: float
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _pairwise_sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _farthest_point_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].copy()


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 300,
    tol: float = 1e-6,
    return_trace: bool = False,
):
    """Lloyd iterations with farthest-point seeding.

    Returns a Dictionary (and, with return_trace, the per-iteration
    within-cluster sum of squares, which is non-increasing).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be an N x D matrix")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    n_distinct = np.unique(pts, axis=0).shape[0]
    if n_distinct < k:
        raise ValueError(
            f"k-means with k={k} needs {k} distinct points but only "
            f"{n_distinct} are distinct ({k - n_distinct} short)"
        )

    rng = np.random.default_rng(seed)
    centroids = _farthest_point_seed(pts, k, rng)

    trace = []
    prev_obj = np.inf
    for _ in range(max_iters):
        d2 = _pairwise_sq_dists(pts, centroids)
        labels = np.argmin(d2, axis=1)

        # re-seed empty clusters at the points worst served by their centroid
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            worst = np.argsort(-d2[np.arange(n), labels], kind="stable")
            for e, w in zip(empties, worst[: empties.size]):
                centroids[e] = pts[w]
                labels[w] = e

        obj = float(((pts - centroids[labels]) ** 2).sum())
        trace.append(obj)

        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = pts[members].mean(axis=0)
        centroids = new_centroids

        if np.isfinite(prev_obj) and prev_obj - obj <= tol * max(abs(prev_obj), 1e-300):
            break
        prev_obj = obj

    result = Dictionary(centroids)
    return (result, trace) if return_trace else result


# ---------------------------------------------------------------------------
# Gaussian mixture fitting (EM, diagonal covariance)
# ---------------------------------------------------------------------------

_STD_FLOOR = 1e-4


def _gmm_log_resp(pts: np.ndarray, model: GmmModel) -> tuple[np.ndarray, float]:
    """Log responsibilities (N, K) and total log-likelihood."""
    diff = (pts[:, None, :] - model.means[None, :, :]) / model.stds[None, :, :]
    log_pdf = -0.5 * (
        (diff**2).sum(axis=2)
        + 2.0 * np.log(model.stds).sum(axis=1)[None, :]
        + model.dim * np.log(2.0 * np.pi)
    )
    log_joint = np.log(model.weights)[None, :] + log_pdf
    norm = np.logaddexp.reduce(log_joint, axis=1)
    return log_joint - norm[:, None], float(norm.sum())


def gmm_fit(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 300,
    tol: float = 1e-6,
    return_trace: bool = False,
):
    """EM fit of a diagonal-covariance GMM, seeded from k-means.

    Log-likelihood is non-decreasing across iterations (up to the 1e-4 std
    floor); a component that loses all responsibility mass is re-seeded at
    a random point and the event is logged.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be an N x D matrix")
    n, d = pts.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")

    rng = np.random.default_rng(seed)
    init = kmeans(pts, k, seed=seed)
    global_std = np.maximum(pts.std(axis=0), _STD_FLOOR)
    model = GmmModel(
        weights=np.full(k, 1.0 / k),
        means=init.centroids,
        stds=np.tile(global_std, (k, 1)),
    )

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        log_r, ll = _gmm_log_resp(pts, model)
        trace.append(ll)
        r = np.exp(log_r)
        nk = r.sum(axis=0)

        dead = np.flatnonzero(nk < 1e-10)
        if dead.size:
            for j in dead:
                pick = int(rng.integers(n))
                model.means[j] = pts[pick]
                model.stds[j] = global_std
                nk[j] = 1.0
            log.warning("re-seeded %d degenerate mixture component(s)", dead.size)

        weights = nk / nk.sum()
        means = (r.T @ pts) / nk[:, None]
        second = (r.T @ (pts**2)) / nk[:, None]
        var = np.maximum(second - means**2, 0.0)
        stds = np.maximum(np.sqrt(var), _STD_FLOOR)
        model = GmmModel(weights=weights, means=means, stds=stds)

        if ll - prev_ll <= tol * max(abs(prev_ll), 1e-300) and np.isfinite(prev_ll):
            break
        prev_ll = ll

    return (model, trace) if return_trace else model


# ---------------------------------------------------------------------------
# thin SVD via one-sided Jacobi on the narrow side
# ---------------------------------------------------------------------------


def _orthonormal_fill(u: np.ndarray, cols: np.ndarray) -> None:
    """Fill the given (zero) columns of u with vectors orthonormal to the rest."""
    d = u.shape[0]
    for c in cols:
        for j in range(d):
            cand = np.zeros(d)
            cand[j] = 1.0
            cand -= u @ (u.T @ cand)
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                u[:, c] = cand / norm
                break


def thin_svd(mat: np.ndarray) -> ThinSvd:
    """Thin SVD of a d x N matrix with r = min(d, N) components.

    Uses one-sided Jacobi column orthogonalization on the narrow side;
    rank deficiency yields zero trailing singular values.
    """
    a = np.asarray(mat, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("mat must be a matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("mat must be finite")
    d, n = a.shape
    transposed = n > d
    work = a.T.copy() if transposed else a.copy()
    r = work.shape[1]

    v = np.eye(r)
    kernels.jacobi_orthogonalize(work, v)

    sig = np.linalg.norm(work, axis=0)
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    work = work[:, order]
    v = v[:, order]

    u = np.zeros_like(work)
    cutoff = sig[0] * 1e-14 if sig.size and sig[0] > 0 else 0.0
    nonzero = sig > cutoff
    u[:, nonzero] = work[:, nonzero] / sig[nonzero]
    sig = np.where(nonzero, sig, 0.0)
    if not nonzero.all():
        _orthonormal_fill(u, np.flatnonzero(~nonzero))

    if transposed:
        return ThinSvd(left_vectors=v, singular_values=sig, right_vectors=u)
    return ThinSvd(left_vectors=u, singular_values=sig, right_vectors=v)


# ---------------------------------------------------------------------------
# Cholesky
# ---------------------------------------------------------------------------


def cholesky_lower(spd: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == spd.

    Raises on asymmetry or a non-positive pivot (naming its index).
    """
    a = np.asarray(spd, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(a - a.T)) > 1e-9:
        raise ValueError("matrix is not symmetric within 1e-9")
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= 0.0:
            raise ValueError(f"matrix is not positive definite: pivot {j} is {pivot:g}")
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


# ---------------------------------------------------------------------------
# golden-section search
# ---------------------------------------------------------------------------


class GoldenSectionSearch:
    """Golden-section bracket over [lo, hi] driven one evaluation at a time.

    Call next_point(), evaluate the objective there, and feed() the value
    back; after the two startup evaluations every feed() shrinks the
    bracket by the golden ratio. This lets a caller that can afford only
    one evaluation per epoch keep a live bracket between epochs.
    """

    def __init__(self, lo: float, hi: float):
        if not lo < hi:
            raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
        self.a = float(lo)
        self.b = float(hi)
        self.x1 = self.b - (self.b - self.a) * _INV_PHI
        self.x2 = self.a + (self.b - self.a) * _INV_PHI
        self.f1: float | None = None
        self.f2: float | None = None
        self.iterations = 0

    def next_point(self) -> float:
        return self.x1 if self.f1 is None else self.x2

    def feed(self, value: float) -> None:
        if self.f1 is None:
            self.f1 = float(value)
        elif self.f2 is None:
            self.f2 = float(value)
        else:  # pragma: no cover - defensive; a pending slot always exists
            raise RuntimeError("no pending point; call next_point() first")
        if self.f1 is None or self.f2 is None:
            return  # startup: waiting for the second interior value
        # both interior values known: shrink once
        if self.f1 <= self.f2:
            self.b, self.x2, self.f2 = self.x2, self.x1, self.f1
            self.x1 = self.b - (self.b - self.a) * _INV_PHI
            self.f1 = None
        else:
            self.a, self.x1, self.f1 = self.x1, self.x2, self.f2
            self.x2 = self.a + (self.b - self.a) * _INV_PHI
            self.f2 = None
        self.iterations += 1

    @property
    def pending_resolution(self) -> float:
        """Interval width to which the next evaluation localizes the minimizer."""
        return (self.b - self.a) * _INV_PHI

    def best_point(self) -> float:
        known = [(f, x) for f, x in ((self.f1, self.x1), (self.f2, self.x2)) if f is not None]
        if known:
            return min(known)[1]
        return 0.5 * (self.a + self.b)


def golden_section(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-6,
    max_iters: int = 200,
) -> GoldenResult:
    """Minimize a unimodal scalar function on [lo, hi].

    Returns the best evaluated point once the bracket width drops below
    tol; if max_iters is exhausted first, returns the bracket midpoint
    flagged as unconverged.
    """
    search = GoldenSectionSearch(lo, hi)
    best_x, best_f = None, np.inf
    evals = 0
    while search.iterations < max_iters:
        x = search.next_point()
        fx = float(f(x))
        evals += 1
        if fx <= best_f:
            best_x, best_f = x, fx
        search.feed(fx)
        if evals >= 2 and search.b - search.a <= tol:
            return GoldenResult(best_x, best_f, True, search.iterations)
    mid = 0.5 * (search.a + search.b)
    return GoldenResult(mid, best_f, False, search.iterations)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam accumulators plus a step-halving learning-rate schedule."""

    lr: float = 1e-4
    halving_period: int = 10  # epochs between rate halvings
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def current_lr(self) -> float:
        return self.lr * 0.5 ** (self.epoch // self.halving_period)

    def advance_epoch(self) -> None:
        self.epoch += 1


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update (bias-corrected) applied in place to each block in grads."""
    state.step_count += 1
    t = state.step_count
    lr = state.current_lr()
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in parameter block {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[np.ndarray], float],
    analytic_grad: np.ndarray,
    point: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic_grad and central differences of f.

    The relative error denominator is max(|analytic|, |numeric|, 1e-8)
    per coordinate.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(point, dtype=np.float64).copy()
    a = np.asarray(analytic_grad, dtype=np.float64)
    if a.shape != x.shape:
        raise ValueError("analytic gradient shape must match the point")
    worst = 0.0
    flat_x = x.ravel()
    flat_a = a.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        f_plus = float(f(x))
        flat_x[i] = orig - step
        f_minus = float(f(x))
        flat_x[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        denom = max(abs(flat_a[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(flat_a[i] - numeric) / denom)
    return worst
