"""Single-level and multilevel Monte Carlo estimators.

Level ``l`` samples ``Y_l = Q_l - Q_{l-1}`` (``Y_0 = Q_0``). Both terms of a
level-``l`` sample are computed from one field realization drawn at the
level-``l`` nodes; the coarse term uses its restriction to level ``l-1``.
Realizations are keyed by ``(seed, level, sample_index, field)``, so sample
sets on different levels are independent and every sample is reproducible
on its own.
"""

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import fem
from .errors import ConvergenceError, InputError, InsufficientDataError, NumericalError
from .mesh import build_hierarchy, DEFAULT_MAX_SIDE
from .qoi import evaluate
from .random_field import (
    DEFAULT_MAX_NODES,
    build_sampler,
    element_coefficients,
    sample_fields,
    smooth_for_level,
)

log = logging.getLogger(__name__)

EPS_LIMIT = math.exp(-1.0)


@dataclass
class LevelStats:
    """Running sums for one level. ``mean``/``var`` describe ``Y_l``."""

    level: int
    h: float = float("nan")
    N: int = 0
    sum: float = 0.0
    sum_sq: float = 0.0
    sum_cube: float = 0.0
    sum_quart: float = 0.0
    cost_sum: float = 0.0

    def add(self, values, costs):
        for v, c in zip(np.asarray(values, dtype=float), np.asarray(costs, dtype=float)):
            v = float(v)
            self.N += 1
            self.sum += v
            self.sum_sq += v * v
            self.sum_cube += v * v * v
            self.sum_quart += v * v * v * v
            self.cost_sum += float(c)

    @property
    def mean(self):
        return self.sum / self.N if self.N else float("nan")

    @property
    def var(self):
        if self.N < 2:
            return float("nan")
        return max(0.0, (self.sum_sq - self.sum * self.sum / self.N) / (self.N - 1))

    @property
    def cost_per_sample(self):
        return self.cost_sum / self.N if self.N else float("nan")

    @property
    def kurtosis(self):
        """Sample kurtosis ``m4 / m2**2`` (3 for Gaussian data)."""
        if self.N < 2:
            return float("nan")
        m = self.mean
        m2 = self.sum_sq / self.N - m * m
        if m2 <= 0.0:
            return float("nan")
        m4 = (
            self.sum_quart / self.N
            - 4 * m * self.sum_cube / self.N
            + 6 * m * m * self.sum_sq / self.N
            - 3 * m**4
        )
        return m4 / (m2 * m2)


class Problem:
    """A sampled elliptic problem on a mesh hierarchy.

    Caches one field sampler per (level, field) and evaluates ``Q_l`` and
    ``Y_l`` samples. Cost is counted in work units: CG iterations times the
    matrix nonzeros of every solve, plus ``n_nodes**2`` per sampled field.
    """

    def __init__(
        self,
        hierarchy,
        model,
        qoi,
        source=1.0,
        seed=0,
        rel_tol=fem.DEFAULT_REL_TOL,
        max_iter=None,
        preconditioner=None,
        smoothing=0,
        max_nodes=DEFAULT_MAX_NODES,
        threads=1,
        batch_size=32,
    ):
        self.hierarchy = hierarchy
        self.model = model
        self.qoi = qoi
        self.source = source
        self.seed = int(seed)
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.preconditioner = preconditioner
        self.smoothing = smoothing
        self.max_nodes = max_nodes
        self.threads = max(1, int(threads))
        self.batch_size = batch_size
        self._samplers = {}
        self._factors = {}
        self._lock = threading.Lock()
        qoi.validate_for(hierarchy[hierarchy.L].h)

    def with_seed(self, seed):
        """Same problem with another seed, sharing the cached factorizations."""
        other = Problem.__new__(Problem)
        other.__dict__.update(self.__dict__)
        other.seed = int(seed)
        other._samplers = {}
        other._lock = threading.Lock()
        return other

    def smoothing_passes(self, level):
        s = self.smoothing
        if np.isscalar(s):
            return int(s)
        return int(s[min(level, len(s) - 1)])

    def sampler(self, level, stream):
        key = (level, stream)
        with self._lock:
            smp = self._samplers.get(key)
            if smp is None:
                cov = self.model.covariances[stream]
                fkey = (level, cov)
                base = self._factors.get(fkey)
                if base is None:
                    base = build_sampler(self.hierarchy[level], cov, self.seed, stream, self.max_nodes)
                    self._factors[fkey] = base
                smp = replace(base, base_seed=self.seed, stream=stream)
                self._samplers[key] = smp
            return smp

    def fields(self, level, indices):
        """Field realizations at the level-``level`` nodes, one array per field."""
        return [sample_fields(self.sampler(level, k), indices) for k in range(self.model.n_fields)]

    def sampling_work(self, level):
        return self.model.n_fields * float(self.hierarchy[level].n_nodes) ** 2

    def solve_level(self, level, fields):
        """Solve on ``level`` with nodal fields of that level; returns ``(Q, work, solution, coeffs)``."""
        mesh = self.hierarchy[level]
        p = self.smoothing_passes(level)
        fields = [smooth_for_level(f, mesh, p) for f in fields]
        coeffs = element_coefficients(self.model, mesh, fields)
        system = fem.assemble(mesh, coeffs, self.source)
        sol, it, _ = fem.solve_cg(system, self.rel_tol, self.max_iter, self.preconditioner)
        return evaluate(self.qoi, sol, coeffs), float(it) * system.nnz, sol, coeffs

    def y_from_fields(self, level, fields):
        """``Y_level`` for fields given at the ``level`` nodes; returns ``(Y, solve work)``."""
        q_f, w_f, _, _ = self.solve_level(level, fields)
        if level == 0:
            return q_f, w_f
        cmap = self.hierarchy.coarse_to_fine[level - 1]
        q_c, w_c, _, _ = self.solve_level(level - 1, [f[cmap] for f in fields])
        return q_f - q_c, w_f + w_c

    def _chunk(self, level, indices, diff):
        fields = self.fields(level, indices)
        vals = np.empty(len(indices))
        costs = np.empty(len(indices))
        for c, idx in enumerate(indices):
            cols = [f[:, c] for f in fields]
            try:
                if diff:
                    v, w = self.y_from_fields(level, cols)
                else:
                    v, w, _, _ = self.solve_level(level, cols)
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"level {level}, sample {idx}: {exc}", exc.residual, exc.iterations
                ) from exc
            except NumericalError as exc:
                raise type(exc)(f"level {level}, sample {idx}: {exc}") from exc
            vals[c] = v
            costs[c] = w + self.sampling_work(level)
        return vals, costs

    def _run(self, level, indices, diff):
        indices = list(indices)
        if level < 0 or level > self.hierarchy.L:
            raise InputError(f"level {level} outside 0..{self.hierarchy.L}")
        if not indices:
            return np.empty(0), np.empty(0)
        chunks = [indices[i : i + self.batch_size] for i in range(0, len(indices), self.batch_size)]
        if self.threads == 1 or len(chunks) == 1:
            parts = [self._chunk(level, ch, diff) for ch in chunks]
        else:
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(lambda ch: self._chunk(level, ch, diff), chunks))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def y_samples(self, level, indices):
        """``Y_level`` for each sample index; returns ``(values, costs)``."""
        return self._run(level, indices, diff=True)

    def q_samples(self, level, indices):
        """``Q_level`` (not differences) for each sample index."""
        return self._run(level, indices, diff=False)

    def y_sample(self, level, index):
        v, c = self.y_samples(level, [index])
        return float(v[0]), float(c[0])


def y_sample(problem, level, sample_index):
    """One coupled level-difference sample ``(Y_l, cost)``."""
    return problem.y_sample(level, sample_index)


def mc_estimate(problem, level, N, start_index=0):
    """Plain Monte Carlo statistics of ``Q_level`` from ``N`` samples."""
    if N < 2:
        raise InputError(f"need N >= 2, got {N}")
    st = LevelStats(level, problem.hierarchy[level].h)
    st.add(*problem.q_samples(level, range(start_index, start_index + N)))
    return st


def level_study(problem, levels, N):
    """Fixed-``N`` statistics of ``Y_l`` on each of ``levels``."""
    out = []
    for lev in levels:
        st = LevelStats(lev, problem.hierarchy[lev].h)
        st.add(*problem.y_samples(lev, range(N)))
        out.append(st)
    return out


def optimal_allocation(variances, costs, eps, variance_fraction=0.5, min_samples=2):
    """Sample counts minimizing total cost subject to ``sum V/N <= f * eps**2``.

    ``N_l = ceil(sqrt(V_l/C_l) * sum_j sqrt(V_j C_j) / (f eps**2))`` with a
    floor of ``min_samples``. A greedy pass then removes single samples
    while the variance constraint still holds, most expensive level first.
    """
    V = np.asarray(variances, dtype=float)
    C = np.asarray(costs, dtype=float)
    if V.shape != C.shape or V.ndim != 1 or V.size == 0:
        raise InputError("variances and costs must be equal-length 1D sequences")
    if np.any(C <= 0) or not np.all(np.isfinite(C)):
        raise InputError(f"costs must be positive, got {C.tolist()}")
    if np.any(V < 0) or not np.all(np.isfinite(V)):
        raise InputError(f"variances must be non-negative, got {V.tolist()}")
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")
    budget = variance_fraction * eps**2
    total = np.sum(np.sqrt(V * C))
    N = np.ceil(np.sqrt(V / C) * total / budget)
    N = np.maximum(N, min_samples).astype(np.int64)

    def excess(n):
        return np.sum(V / n) - budget

    for lev in np.argsort(-C, kind="stable"):
        while N[lev] > min_samples and V[lev] > 0:
            trial = N.copy()
            trial[lev] -= 1
            if excess(trial) > 0:
                break
            N = trial
    return N


@dataclass
class RateFit:
    """Least-squares rate fits over levels ``l >= 1``.

    ``alpha`` and ``beta`` are minus the slopes of ``log2|mean_l|`` and
    ``log2 var_l`` against ``l``; ``gamma`` is the slope of ``log2 cost_l``.
    """

    alpha: float
    beta: float
    gamma: float
    alpha_stderr: float
    beta_stderr: float
    gamma_stderr: float
    intercepts: dict
    residuals: dict
    levels: list

    @property
    def beta_is_twice_alpha(self):
        return abs(self.beta - 2 * self.alpha) < 0.3

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "alpha_stderr": self.alpha_stderr,
            "beta_stderr": self.beta_stderr,
            "gamma_stderr": self.gamma_stderr,
            "intercepts": self.intercepts,
            "residuals": self.residuals,
            "levels": self.levels,
            "beta_approx_2alpha": self.beta_is_twice_alpha,
        }


def _fit_log2(levels, values):
    x = np.asarray(levels, dtype=float)
    y = np.log2(np.asarray(values, dtype=float))
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    stderr = float(res.stderr) if x.size > 2 else float("nan")
    return float(res.slope), float(res.intercept), stderr, resid.tolist()


def estimate_rates(levels):
    """Fit ``alpha, beta, gamma`` from level statistics, skipping level 0."""
    use = [s for s in levels if s.level >= 1]
    if len(use) < 3:
        raise InsufficientDataError(f"need >= 3 levels with l >= 1, got {len(use)}")
    ls = [s.level for s in use]
    means = [abs(s.mean) for s in use]
    varis = [s.var for s in use]
    costs = [s.cost_per_sample for s in use]
    for name, vals in (("mean", means), ("variance", varis), ("cost", costs)):
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise InsufficientDataError(f"non-positive {name} on some level; cannot fit in log scale")
    sa, ia, ea, ra = _fit_log2(ls, means)
    sb, ib, eb, rb = _fit_log2(ls, varis)
    sg, ig, eg, rg = _fit_log2(ls, costs)
    return RateFit(
        alpha=-sa,
        beta=-sb,
        gamma=sg,
        alpha_stderr=ea,
        beta_stderr=eb,
        gamma_stderr=eg,
        intercepts={"mean": ia, "var": ib, "cost": ig},
        residuals={"mean": ra, "var": rb, "cost": rg},
        levels=ls,
    )


@dataclass(frozen=True)
class CostRegime:
    regime: str
    mlmc_exponent: float
    log_factor: bool
    mc_exponent: float


def theoretical_cost_exponent(alpha, beta, gamma):
    """Epsilon-cost exponents of MLMC and plain MC.

    MLMC costs ``eps**-2`` if ``beta > gamma``, ``eps**-2 (log eps)**2`` if
    ``beta == gamma`` and ``eps**-(2 + (gamma-beta)/alpha)`` otherwise; MC
    costs ``eps**-(2 + gamma/alpha)``. Requires ``alpha >= min(beta, gamma)/2``.
    """
    if not (alpha > 0 and beta > 0 and gamma > 0):
        raise InputError("rates must be positive")
    if alpha < 0.5 * min(beta, gamma):
        raise InputError(f"alpha={alpha} violates alpha >= min(beta, gamma)/2")
    mc = 2.0 + gamma / alpha
    if math.isclose(beta, gamma, rel_tol=1e-12, abs_tol=1e-12):
        return CostRegime("beta=gamma", 2.0, True, mc)
    if beta > gamma:
        return CostRegime("beta>gamma", 2.0, False, mc)
    return CostRegime("beta<gamma", 2.0 + (gamma - beta) / alpha, False, mc)


@dataclass
class MlmcConfig:
    eps: float
    model: object
    qoi: object
    m0: int = 4
    L_min: int = 1
    L_max: int = 4
    N_initial: int = 64
    rate_alpha_floor: float = 0.5
    variance_fraction: float = 0.5
    seed: int = 0
    rel_tol: float = fem.DEFAULT_REL_TOL
    max_iter: int = None
    preconditioner: str = None
    smoothing: object = 0
    source: object = 1.0
    max_side: int = DEFAULT_MAX_SIDE
    max_nodes: int = DEFAULT_MAX_NODES
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.eps < EPS_LIMIT:
            raise InputError(f"eps must satisfy 0 < eps < e^-1 = {EPS_LIMIT:.6f}, got {self.eps}")
        if not 0 <= self.L_min <= self.L_max:
            raise InputError(f"need 0 <= L_min <= L_max, got {self.L_min}, {self.L_max}")
        if self.N_initial < 2:
            raise InputError("N_initial must be >= 2")
        if not 0 < self.variance_fraction < 1:
            raise InputError("variance_fraction must lie in (0, 1)")

    def make_problem(self):
        hierarchy = build_hierarchy(self.m0, self.L_max, self.max_side)
        return Problem(
            hierarchy,
            self.model,
            self.qoi,
            source=self.source,
            seed=self.seed,
            rel_tol=self.rel_tol,
            max_iter=self.max_iter,
            preconditioner=self.preconditioner,
            smoothing=self.smoothing,
            max_nodes=self.max_nodes,
            threads=self.threads,
        )


@dataclass
class MlmcResult:
    eps: float
    estimate: float
    levels: list
    bias_estimate: float
    variance_estimate: float
    total_cost: float
    alpha_used: float
    fitted_rates: RateFit = None
    bias_unmet: bool = False
    wall_time: float = 0.0

    @property
    def mse_estimate(self):
        return self.variance_estimate + self.bias_estimate**2

    @property
    def L(self):
        return len(self.levels) - 1


def _alpha_for_bias(levels, floor):
    use = [s for s in levels if s.level >= 1 and s.N > 0 and s.mean != 0]
    if len(use) < 2:
        return floor
    slope, _, _, _ = _fit_log2([s.level for s in use], [abs(s.mean) for s in use])
    return max(-slope, floor)


def run_mlmc(config, problem=None):
    """Adaptive MLMC: pilot levels ``0..L_min``, allocate, extend ``L`` until
    the extrapolated bias is within ``eps * sqrt(1 - f)``.

    Returns a result with ``bias_unmet`` set if ``L_max`` is reached first.
    """
    t0 = time.perf_counter()
    if problem is None:
        problem = config.make_problem()
    if problem.hierarchy.L < config.L_max:
        raise InputError(f"problem hierarchy has only {problem.hierarchy.L} levels")
    eps = config.eps
    var_budget = config.variance_fraction * eps**2
    bias_budget = math.sqrt(1.0 - config.variance_fraction) * eps
    levels = []

    def draw(st, n_new):
        start = st.N
        st.add(*problem.y_samples(st.level, range(start, start + n_new)))

    for lev in range(config.L_min + 1):
        st = LevelStats(lev, problem.hierarchy[lev].h)
        draw(st, config.N_initial)
        levels.append(st)

    bias_unmet = False
    while True:
        while True:
            V = [s.var for s in levels]
            C = [s.cost_per_sample for s in levels]
            N_opt = optimal_allocation(V, C, eps, config.variance_fraction)
            extra = [max(0, int(n) - s.N) for n, s in zip(N_opt, levels)]
            if not any(extra):
                break
            for st, n_new in zip(levels, extra):
                if n_new:
                    draw(st, n_new)
        alpha = _alpha_for_bias(levels, config.rate_alpha_floor)
        L = len(levels) - 1
        if L == 0:
            bias = float("inf")
        else:
            bias = abs(levels[-1].mean) / (2.0**alpha - 1.0)
        log.info("eps=%g L=%d N=%s bias=%.3e", eps, L, [s.N for s in levels], bias)
        if bias <= bias_budget:
            break
        if L >= config.L_max:
            bias_unmet = True
            break
        st = LevelStats(L + 1, problem.hierarchy[L + 1].h)
        draw(st, config.N_initial)
        levels.append(st)

    variance = sum(s.var / s.N for s in levels)
    assert variance <= var_budget * (1 + 1e-12), "allocation failed the variance budget"
    try:
        rates = estimate_rates(levels)
    except InsufficientDataError:
        rates = None
    return MlmcResult(
        eps=eps,
        estimate=sum(s.mean for s in levels),
        levels=levels,
        bias_estimate=bias,
        variance_estimate=variance,
        total_cost=sum(s.cost_sum for s in levels),
        alpha_used=alpha,
        fitted_rates=rates,
        bias_unmet=bias_unmet,
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class McResult:
    eps: float
    level: int
    estimate: float
    stats: LevelStats
    variance_estimate: float
    total_cost: float
    wall_time: float = 0.0


def run_mc(config, level=None, problem=None):
    """Single-level MC on ``level`` (default ``L_max``).

    Starts from ``N_initial`` pilot samples and grows to
    ``N = ceil(V / (f eps**2))``, re-estimating ``V`` after each top-up.
    """
    t0 = time.perf_counter()
    if problem is None:
        problem = config.make_problem()
    level = config.L_max if level is None else level
    st = mc_estimate(problem, level, config.N_initial)
    budget = config.variance_fraction * config.eps**2
    # re-size from the updated variance until the budget holds
    while True:
        target = int(math.ceil(st.var / budget))
        if target <= st.N:
            break
        st.add(*problem.q_samples(level, range(st.N, target)))
    return McResult(
        eps=config.eps,
        level=level,
        estimate=st.mean,
        stats=st,
        variance_estimate=st.var / st.N,
        total_cost=st.cost_sum,
        wall_time=time.perf_counter() - t0,
    )
