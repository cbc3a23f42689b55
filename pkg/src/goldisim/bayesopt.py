"""Gaussian-process Bayesian optimisation on the unit hypercube.

Squared-exponential kernel with a fixed precision ``gamma``, expected
improvement for maximisation, and Latin-hypercube candidate sets for the
acquisition argmax.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .compositor import SIM_RANGES, SimParams
from .errors import NumericalError, ParameterError
from .rng import generator

DEFAULT_GAMMA = 0.25
DEFAULT_JITTER = 1e-6
DEFAULT_CANDIDATES = 1000


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    discrete: bool = False


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple[Dim, ...]

    def __post_init__(self):
        for d in self.dims:
            if d.discrete:
                if int(d.lower) != d.lower or int(d.upper) != d.upper or d.lower > d.upper:
                    raise ParameterError(f"bad discrete bounds for {d.name}: [{d.lower}, {d.upper}]")
            elif not d.lower < d.upper:
                raise ParameterError(f"bad bounds for {d.name}: [{d.lower}, {d.upper}]")

    @classmethod
    def default(cls) -> "ParamSpace":
        return cls(tuple(Dim(*r) for r in SIM_RANGES))

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def __len__(self) -> int:
        return len(self.dims)


def normalize(space: ParamSpace, phi) -> np.ndarray:
    """Map each coordinate linearly from ``[lower, upper]`` onto ``[0, 1]``."""
    x = phi.as_tuple() if hasattr(phi, "as_tuple") else tuple(phi)
    out = np.empty(len(space))
    for i, (d, v) in enumerate(zip(space.dims, x)):
        if not (d.lower <= v <= d.upper):
            raise ParameterError(f"{d.name}={v} outside [{d.lower}, {d.upper}]")
        out[i] = 0.0 if d.upper == d.lower else (v - d.lower) / (d.upper - d.lower)
    return out


def denormalize_values(space: ParamSpace, y) -> list:
    vals = []
    for d, t in zip(space.dims, np.asarray(y, dtype=np.float64)):
        t = min(max(float(t), 0.0), 1.0)
        if d.discrete:
            lo, hi = int(d.lower), int(d.upper)
            vals.append(min(int(math.floor(lo + (hi - lo + 1) * t)), hi))
        else:
            vals.append(d.lower + (d.upper - d.lower) * t)
    return vals


def denormalize(space: ParamSpace, y) -> SimParams:
    """Inverse of :func:`normalize`; discrete dims use ``floor(l + (u-l+1) y)`` clamped to ``u``."""
    return SimParams(*denormalize_values(space, y))


def se_kernel(a, b, gamma: float = DEFAULT_GAMMA) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.exp(-0.5 * gamma * np.sum((a - b) ** 2)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    sq = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * gamma * sq)


@dataclass
class GpState:
    """Observed (normalised point, objective) pairs and kernel settings."""

    points: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    gamma: float = DEFAULT_GAMMA
    jitter: float = DEFAULT_JITTER
    _factor: Optional[tuple] = field(default=None, repr=False)

    def add(self, point, value: float) -> None:
        p = np.asarray(point, dtype=np.float64)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ParameterError(f"observation {p} lies outside the unit hypercube")
        if not math.isfinite(value):
            raise ParameterError(f"objective must be finite, got {value}")
        self.points.append(p)
        self.values.append(float(value))
        self._factor = None

    def __len__(self) -> int:
        return len(self.values)

    @property
    def X(self) -> np.ndarray:
        return np.array(self.points)

    @property
    def y(self) -> np.ndarray:
        return np.array(self.values)

    def best(self) -> tuple[int, float]:
        """Index and value of the incumbent; ties go to the earliest observation."""
        i = int(np.argmax(self.y))
        return i, self.values[i]

    def _fit(self):
        if self._factor is None:
            if not self.values:
                raise ParameterError("GP posterior needs at least one observation")
            K = kernel_matrix(self.X, self.X, self.gamma) + self.jitter * np.eye(len(self))
            try:
                c = cho_factor(K, lower=True)
            except LinAlgError as e:
                raise NumericalError(f"kernel matrix is not positive definite: {e}") from e
            mean = float(np.mean(self.y))
            alpha = cho_solve(c, self.y - mean)
            self._factor = (c, alpha, mean)
        return self._factor


def gp_posterior_batch(state: GpState, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, alpha, ybar = state._fit()
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    ks = kernel_matrix(Q, state.X, state.gamma)
    mean = ks @ alpha + ybar
    v = cho_solve(c, ks.T)
    var = 1.0 - np.einsum("ij,ji->i", ks, v)
    return mean, np.maximum(var, 0.0)


def gp_posterior(state: GpState, query) -> tuple[float, float]:
    """Zero-mean GP on centred objectives; returns (mean, variance)."""
    m, v = gp_posterior_batch(state, np.asarray(query, dtype=np.float64)[None, :])
    return float(m[0]), float(v[0])


_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _ei(mean: np.ndarray, var: np.ndarray, incumbent: float) -> np.ndarray:
    from scipy.special import ndtr

    sigma = np.sqrt(var)
    out = np.zeros_like(mean)
    ok = sigma > 0
    z = (mean[ok] - incumbent) / sigma[ok]
    out[ok] = sigma[ok] * (z * ndtr(z) + _INV_SQRT2PI * np.exp(-0.5 * z * z))
    return np.maximum(out, 0.0)


def expected_improvement_batch(state: GpState, queries: np.ndarray) -> np.ndarray:
    mean, var = gp_posterior_batch(state, queries)
    return _ei(mean, var, max(state.values))


def expected_improvement(state: GpState, query) -> float:
    """EI over the best observed objective; zero where the posterior is deterministic."""
    return float(expected_improvement_batch(state, np.asarray(query, dtype=np.float64)[None, :])[0])


def latin_hypercube(n: int, d: int, seed: int) -> np.ndarray:
    """``n`` points in ``[0, 1)^d``, one per stratum ``[i/n, (i+1)/n)`` in every dimension."""
    if n < 1:
        raise ParameterError("latin_hypercube needs n >= 1")
    rng = generator(seed, 0x1A71)
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    u = rng.random((n, d))
    pts = (strata + u) / n
    # (k + u)/n can round up to the next boundary for u close to 1
    return np.minimum(pts, np.nextafter((strata + 1) / n, 0.0))


def propose_next(state: GpState, n_candidates: int = DEFAULT_CANDIDATES, seed: int = 0,
                 candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Argmax of EI over a Latin-hypercube candidate set (first index wins ties)."""
    if len(state) == 0:
        raise ParameterError("propose_next needs at least one observation")
    if candidates is None:
        candidates = latin_hypercube(n_candidates, state.X.shape[1], seed)
    ei = expected_improvement_batch(state, candidates)
    return np.array(candidates[int(np.argmax(ei))], dtype=np.float64)


@dataclass
class BoRecord:
    iteration: int
    point: np.ndarray
    values: list
    objective: float
    extra: dict = field(default_factory=dict)


@dataclass
class BoTrace:
    space: ParamSpace
    records: list[BoRecord] = field(default_factory=list)

    def best(self) -> BoRecord:
        return max(self.records, key=lambda r: (r.objective, -r.iteration))


def maximize(objective: Callable[[np.ndarray, int], tuple], space: ParamSpace, n_init: int, total: int,
             seed: int, n_candidates: int = DEFAULT_CANDIDATES, gamma: float = DEFAULT_GAMMA) -> BoTrace:
    """Run ``total`` evaluations: ``n_init`` Latin-hypercube seeds, then EI proposals.

    ``objective(point, iteration)`` returns either a float or ``(float, extra)``.
    """
    if n_init < 1 or n_init > total:
        raise ParameterError(f"need 1 <= n_init <= total, got n_init={n_init}, total={total}")
    state = GpState(gamma=gamma)
    trace = BoTrace(space)
    init = latin_hypercube(n_init, len(space), seed)
    for i in range(total):
        point = init[i] if i < n_init else propose_next(state, n_candidates, seed=seed + 7919 * i)
        res = objective(point, i)
        value, extra = (res if isinstance(res, tuple) else (res, {}))
        state.add(point, value)
        trace.records.append(BoRecord(i, point, denormalize_values(space, point), float(value), extra))
    return trace


def write_bo_trace_csv(path, trace: BoTrace) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter"] + [f"phi_{n}" for n in trace.space.names] + ["objective"])
        for r in trace.records:
            w.writerow([r.iteration] + [repr(v) if isinstance(v, float) else v for v in r.values]
                       + [repr(r.objective)])


def read_bo_trace_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]
