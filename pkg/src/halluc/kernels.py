"""Hot inner-loop kernels with numba-compiled and pure-numpy backends.

The numba backend is used when numba imports successfully; set the
environment variable ``HALLUC_PURE_NUMPY=1`` (before import or via
:func:`set_backend`) to force the numpy fallbacks. Both backends iterate
in the same index order, so results agree to floating-point accumulation
tolerance (`bench/bench_kernels.py` compares their speed).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


_FORCED_NUMPY = os.environ.get("HALLUC_PURE_NUMPY", "") in ("1", "true", "yes")
_USE_NUMBA = HAVE_NUMBA and not _FORCED_NUMPY


def use_numba() -> bool:
    """True when the compiled backend is active."""
    return _USE_NUMBA


def set_backend(name: str) -> None:
    """Select 'numba' or 'numpy' at runtime (used by tests and benchmarks)."""
    global _USE_NUMBA
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not importable")
        _USE_NUMBA = True
    elif name == "numpy":
        _USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------
# count-sketch projection: out[j] = sum_{i: h[i]==j} s[i] * v[i]
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sketch_apply_nb(v, h, s, d_out):
    out = np.zeros(d_out, dtype=np.float64)
    for i in range(v.shape[0]):
        out[h[i]] += s[i] * v[i]
    return out


def _sketch_apply_np(v, h, s, d_out):
    # bincount adds in ascending i order, matching the compiled loop
    return np.bincount(h, weights=s * v, minlength=d_out).astype(np.float64)


def sketch_apply(v: np.ndarray, h: np.ndarray, s: np.ndarray, d_out: int) -> np.ndarray:
    if _USE_NUMBA:
        return _sketch_apply_nb(v, h, s, np.int64(d_out))
    return _sketch_apply_np(v, h, s, d_out)


@njit(cache=True)
def _sketch_inner_trials_nb(v, vp, hs, ss, d_out):
    trials = hs.shape[0]
    d = v.shape[0]
    z = np.empty(trials, dtype=np.float64)
    a = np.zeros(d_out, dtype=np.float64)
    b = np.zeros(d_out, dtype=np.float64)
    for t in range(trials):
        a[:] = 0.0
        b[:] = 0.0
        for i in range(d):
            j = hs[t, i]
            a[j] += ss[t, i] * v[i]
            b[j] += ss[t, i] * vp[i]
        acc = 0.0
        for j in range(d_out):
            acc += a[j] * b[j]
        z[t] = acc
    return z


def _sketch_inner_trials_np(v, vp, hs, ss, d_out):
    trials, d = hs.shape
    rows = np.repeat(np.arange(trials), d)
    flat = rows * d_out + hs.ravel()
    a = np.bincount(flat, weights=(ss * v).ravel(), minlength=trials * d_out)
    b = np.bincount(flat, weights=(ss * vp).ravel(), minlength=trials * d_out)
    return (a.reshape(trials, d_out) * b.reshape(trials, d_out)).sum(axis=1)


def sketch_inner_trials(
    v: np.ndarray, vp: np.ndarray, hs: np.ndarray, ss: np.ndarray, d_out: int
) -> np.ndarray:
    """Sketched inner products <Pv, Pv'> for a batch of plans (one per row of hs/ss)."""
    if _USE_NUMBA:
        return _sketch_inner_trials_nb(v, vp, hs, ss, np.int64(d_out))
    return _sketch_inner_trials_np(v, vp, hs, ss, d_out)


# ---------------------------------------------------------------------------
# saliency gradient histogram: sum_p amp[p] * (ea[p] x eb[p] x ec[p])
# ---------------------------------------------------------------------------


@njit(cache=True)
def _weighted_outer3_nb(amp, ea, eb, ec):
    na = ea.shape[1]
    nb = eb.shape[1]
    nc = ec.shape[1]
    out = np.zeros(na * nb * nc, dtype=np.float64)
    for p in range(amp.shape[0]):
        w = amp[p]
        if w == 0.0:
            continue
        for a in range(na):
            wa = w * ea[p, a]
            base_a = a * nb * nc
            for b in range(nb):
                wab = wa * eb[p, b]
                base = base_a + b * nc
                for c in range(nc):
                    out[base + c] += wab * ec[p, c]
    return out


def _weighted_outer3_np(amp, ea, eb, ec):
    return np.einsum("p,pa,pb,pc->abc", amp, ea, eb, ec, optimize=True).ravel()


def weighted_outer3(
    amp: np.ndarray, ea: np.ndarray, eb: np.ndarray, ec: np.ndarray
) -> np.ndarray:
    """Amplitude-weighted sum of triple Kronecker products over pixels."""
    if _USE_NUMBA:
        return _weighted_outer3_nb(amp, ea, eb, ec)
    return _weighted_outer3_np(amp, ea, eb, ec)


# ---------------------------------------------------------------------------
# one-sided Jacobi column orthogonalization (thin SVD backend)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _jacobi_orthogonalize_nb(b, v, tol, max_sweeps):
    n = b.shape[1]
    sweeps = 0
    for _ in range(max_sweeps):
        off = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(b.shape[0]):
                    alpha += b[r, p] * b[r, p]
                    beta += b[r, q] * b[r, q]
                    gamma += b[r, p] * b[r, q]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for r in range(b.shape[0]):
                    bp = b[r, p]
                    bq = b[r, q]
                    b[r, p] = c * bp - s * bq
                    b[r, q] = s * bp + c * bq
                for r in range(n):
                    vp_ = v[r, p]
                    vq = v[r, q]
                    v[r, p] = c * vp_ - s * vq
                    v[r, q] = s * vp_ + c * vq
        sweeps += 1
        if off == 0:
            break
    return sweeps


def _jacobi_orthogonalize_np(b, v, tol, max_sweeps):
    n = b.shape[1]
    sweeps = 0
    for _ in range(max_sweeps):
        off = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(b[:, p] @ b[:, p])
                beta = float(b[:, q] @ b[:, q])
                gamma = float(b[:, p] @ b[:, q])
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                bp = b[:, p].copy()
                b[:, p] = c * bp - s * b[:, q]
                b[:, q] = s * bp + c * b[:, q]
                vp_ = v[:, p].copy()
                v[:, p] = c * vp_ - s * v[:, q]
                v[:, q] = s * vp_ + c * v[:, q]
        sweeps += 1
        if off == 0:
            break
    return sweeps


def jacobi_orthogonalize(
    b: np.ndarray, v: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60
) -> int:
    """Rotate column pairs of ``b`` (accumulating into ``v``) until mutually orthogonal.

    Modifies both arrays in place; returns the number of sweeps performed.
    """
    if _USE_NUMBA:
        return int(_jacobi_orthogonalize_nb(b, v, tol, max_sweeps))
    return _jacobi_orthogonalize_np(b, v, tol, max_sweeps)
