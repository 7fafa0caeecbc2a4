"""Count-sketch construction and application, multiple-sketch support, and
Monte Carlo estimators for the sketch variance bound and the power-
normalization variance inflation factor.

A plan is the pair (h, s): h hashes each input coordinate to one of d_out
buckets, s flips its sign. The implied projection matrix has exactly one
nonzero per input column, so applying it is a signed scatter-add. Sketched
inner products are unbiased estimates of true inner products with variance
at most (<v,v'>^2 + ||v||^2 ||v'||^2) / d_out.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels

_RECORD = struct.Struct("<QQQQ")  # seed, input_dim, output_dim, copies


def derive_seed(base: int, index: int) -> int:
    """Deterministic child seed for copy `index` of a base seed."""
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SketchPlan:
    """One signed-hash projection from input_dim to output_dim coordinates."""

    h: np.ndarray  # (input_dim,) int64 bucket per input coordinate
    s: np.ndarray  # (input_dim,) float64 signs in {-1, +1}
    input_dim: int
    output_dim: int
    seed: int | None = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.int64)
        s = np.asarray(self.s, dtype=np.float64)
        if h.shape != (self.input_dim,) or s.shape != (self.input_dim,):
            raise ValueError("h and s must both have input_dim entries")
        if h.size and (h.min() < 0 or h.max() >= self.output_dim):
            raise ValueError("h entries must index output coordinates")
        if not np.all(np.abs(s) == 1.0):
            raise ValueError("s entries must be +1 or -1")
        h.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", s)

    def matrix(self) -> np.ndarray:
        """Dense projection matrix (output_dim x input_dim); test/debug use."""
        p = np.zeros((self.output_dim, self.input_dim))
        p[self.h, np.arange(self.input_dim)] = self.s
        return p

    def to_bytes(self) -> bytes:
        if self.seed is None:
            raise ValueError("only seed-derived plans serialize; h/s are never stored")
        return _RECORD.pack(self.seed, self.input_dim, self.output_dim, 1)


def make_plan(d: int, d_out: int, seed: int) -> SketchPlan:
    """Sample a plan from a counter-based (Philox) generator keyed by seed."""
    if d < 1 or d_out < 1:
        raise ValueError("dimensions must be at least 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    h = rng.integers(0, d_out, size=d, dtype=np.int64)
    s = rng.integers(0, 2, size=d).astype(np.float64) * 2.0 - 1.0
    return SketchPlan(h=h, s=s, input_dim=d, output_dim=d_out, seed=int(seed))


def identity_plan(d: int) -> SketchPlan:
    """The forced h = identity, s = all-ones plan (projection matrix I)."""
    return SketchPlan(
        h=np.arange(d, dtype=np.int64),
        s=np.ones(d),
        input_dim=d,
        output_dim=d,
        seed=None,
    )


def plan_from_bytes(buf: bytes) -> "SketchPlan | MultiSketch":
    seed, d, d_out, k = _RECORD.unpack(buf)
    if k == 1:
        return make_plan(int(d), int(d_out), int(seed))
    return make_multi(int(d), int(d_out), int(k), int(seed))


def apply(plan: SketchPlan, v: np.ndarray) -> np.ndarray:
    """Project one vector: out[j] = sum over i with h[i] == j of s[i] v[i]."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (plan.input_dim,):
        raise ValueError(f"vector has shape {v.shape}, plan expects ({plan.input_dim},)")
    return kernels.sketch_apply(v, plan.h, plan.s, plan.output_dim)


def apply_rows(plan: SketchPlan, mat: np.ndarray) -> np.ndarray:
    """Project each row of an (n, input_dim) matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != plan.input_dim:
        raise ValueError(f"matrix has shape {mat.shape}, plan expects (*, {plan.input_dim})")
    signed = mat * plan.s[None, :]
    out = np.zeros((mat.shape[0], plan.output_dim))
    np.add.at(out.T, plan.h, signed.T)
    return out


def apply_rows_backward(plan: SketchPlan, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of apply_rows: gather the output gradient back per column."""
    return grad_out[:, plan.h] * plan.s[None, :]


@dataclass(frozen=True)
class MultiSketch:
    """k independent plans over the same dimensions, seeded from one base."""

    plans: tuple[SketchPlan, ...]
    seed: int | None = None

    def __post_init__(self):
        if len(self.plans) < 1:
            raise ValueError("need at least one plan")
        dims = {(p.input_dim, p.output_dim) for p in self.plans}
        if len(dims) != 1:
            raise ValueError("all plans must share dimensions")
        object.__setattr__(self, "plans", tuple(self.plans))

    @property
    def k(self) -> int:
        return len(self.plans)

    @property
    def input_dim(self) -> int:
        return self.plans[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.plans[0].output_dim

    def to_bytes(self) -> bytes:
        if self.seed is None:
            raise ValueError("only seed-derived multi-sketches serialize")
        return _RECORD.pack(self.seed, self.input_dim, self.output_dim, self.k)


def make_multi(d: int, d_out: int, k: int, seed: int) -> MultiSketch:
    """k plans with distinct derived seeds."""
    if k < 1:
        raise ValueError("k must be at least 1")
    seeds = [derive_seed(seed, i) for i in range(k)]
    if len(set(seeds)) != k:  # pragma: no cover - astronomically unlikely
        raise RuntimeError("derived seed collision")
    return MultiSketch(plans=tuple(make_plan(d, d_out, s) for s in seeds), seed=int(seed))


def apply_multi(ms: MultiSketch, v: np.ndarray) -> list[np.ndarray]:
    """One sketched copy per plan, in plan order."""
    return [apply(p, v) for p in ms.plans]


class ProbeResult(NamedTuple):
    empirical_variance: float
    bound: float
    kappa: float
    mean: float
    true_inner: float
    trials: int


def _trial_hashes(d: int, d_out: int, trials: int, seed: int):
    rng = np.random.Generator(np.random.Philox(key=seed))
    hs = rng.integers(0, d_out, size=(trials, d), dtype=np.int64)
    ss = rng.integers(0, 2, size=(trials, d)).astype(np.float64) * 2.0 - 1.0
    return hs, ss


def variance_probe(
    v: np.ndarray,
    v_prime: np.ndarray,
    trials: int,
    d_out: int,
    seed: int,
) -> ProbeResult:
    """Monte Carlo estimate of the sketched-inner-product variance.

    kappa reports how far the measured normalized variance sits below the
    flat-spectrum worst case 2/d_out: kappa = 2 ||v||^2 ||v'||^2 / (d_out
    * variance). For l2-normalized inputs it lands in [1, 2] and equals
    2 / (<v, v'>^2 + 1) up to Monte Carlo noise.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials for a stable estimate")
    v = np.asarray(v, dtype=np.float64)
    vp = np.asarray(v_prime, dtype=np.float64)
    if v.shape != vp.shape or v.ndim != 1:
        raise ValueError("inputs must be two vectors of equal length")
    hs, ss = _trial_hashes(v.size, d_out, trials, seed)
    z = kernels.sketch_inner_trials(v, vp, hs, ss, d_out)
    true_inner = float(v @ vp)
    norms_sq = float(v @ v) * float(vp @ vp)
    emp_var = float(z.var(ddof=1))
    bound = (true_inner**2 + norms_sq) / d_out
    kappa = 2.0 * norms_sq / (d_out * emp_var) if emp_var > 0 else np.inf
    return ProbeResult(emp_var, bound, kappa, float(z.mean()), true_inner, trials)
