"""The optimal mechanism: demand allocation, interim curves, reward schedule.

For a type profile theta the optimal content demand solves the linear system

    A(theta) x = (s+a-p) * 1,      A = (t+b) I - (M G + G^T M),

where M = diag(phi(theta_1), ..., phi(theta_n)) holds the virtual values.
Under the feasibility assumption A is strictly diagonally dominant with
positive diagonal and nonpositive off-diagonal entries (an M-matrix), so the
solve is well posed and the solution is entrywise positive. The solve is a
direct LU factorization: O(n^3), no explicit inverse.

Interim quantities are expectations over the other users' types as a function
of one user's own reported type v:

    gamma_i(v) = E[ x_i * sum_j g_ij x_j ]
    V_i(v)     = E[ (a-p) x_i - (b/2) x_i^2 ]
    C_i(v)     = E[ s x_i - (t/2) x_i^2 ]

estimated either by tensor Gauss-Legendre quadrature (tight, small n) or by
Monte Carlo with common random numbers (any n): one sample set of the other
users' types is reused across the whole type grid so the grid structure of
the curves is not drowned by independent noise.

The interim reward schedule that makes truth-telling optimal is

    r_i(v) = integral_{lower}^{v} gamma_i(y) dy - v * gamma_i(v) - V_i(v)

discretized with a cumulative trapezoid on the curve grid and interpolated
linearly between grid points. The ex-post reward paid to user i depends on
the own report only: R_i(theta_hat) = r_i(theta_hat_i).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .csvio import write_csv
from .distributions import SupportError, TypeDistribution
from .market import Scenario


class SolverError(RuntimeError):
    """The demand system is singular or too ill-conditioned to trust."""


class EngineError(ValueError):
    """An expectation engine cannot serve the requested configuration."""


class NegativeRewardWarning(UserWarning):
    """The reward formula produced negative values somewhere on the grid."""


# maximum condition number (1-norm estimate) accepted by demand_solve
_COND_LIMIT = 1e12
# relative residual accepted after at most one refinement step
_RESIDUAL_TOL = 1e-10


def system_matrix(sc: Scenario, theta) -> np.ndarray:
    """Assemble A = (t+b) I - (M G + G^T M) for one type profile."""
    th = sc.check_profile(theta)
    phi = np.asarray(sc.dist.virtual_value(th), dtype=float)
    g = sc.network.weights
    tb = sc.params.t + sc.params.b
    return tb * np.eye(sc.n) - phi[:, None] * g - g.T * phi[None, :]


def _dominance_slack(a: np.ndarray) -> np.ndarray:
    return np.diag(a) - (np.abs(a).sum(axis=1) - np.abs(np.diag(a)))


def demand_solve(sc: Scenario, theta) -> np.ndarray:
    """Optimal demand profile for one type profile (direct linear solve)."""
    sc.require_valid()
    a = system_matrix(sc, theta)
    rhs_val = sc.params.s + sc.params.a - sc.params.p
    rhs = np.full(sc.n, rhs_val)
    slack = _dominance_slack(a)
    if np.min(slack) <= 0:
        worst = int(np.argmin(slack))
        cond = float(np.linalg.cond(a, 1))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SolverError(
                f"demand system ill-conditioned (cond ~ {cond:.3g}); "
                f"diagonal dominance violated at user {worst} (slack {slack[worst]:g})"
            )
    try:
        x = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        worst = int(np.argmin(slack))
        raise SolverError(
            f"demand system singular; diagonal dominance worst at user {worst} "
            f"(slack {slack[worst]:g})"
        ) from exc
    residual = rhs - a @ x
    if np.max(np.abs(residual)) > _RESIDUAL_TOL * rhs_val:
        x = x + np.linalg.solve(a, residual)  # one iterative refinement step
        residual = rhs - a @ x
        if np.max(np.abs(residual)) > _RESIDUAL_TOL * rhs_val:
            raise SolverError(
                f"solve residual {np.max(np.abs(residual)):.3g} exceeds tolerance"
            )
    return x


def foc_residual(sc: Scenario, theta, x) -> float:
    """Max absolute first-order-condition violation of a candidate demand."""
    th = sc.check_profile(theta)
    x = np.asarray(x, dtype=float)
    phi = np.asarray(sc.dist.virtual_value(th), dtype=float)
    g = sc.network.weights
    p = sc.params
    term = (p.s + p.a - p.p) - (p.t + p.b) * x + phi * (g @ x) + g.T @ (phi * x)
    return float(np.max(np.abs(term)))


def k_matrix(sc: Scenario, theta) -> np.ndarray:
    """Explicit inverse of the system matrix (tests and sensitivity only)."""
    return np.linalg.inv(system_matrix(sc, theta))


def k_sensitivity(sc: Scenario, theta, i: int) -> np.ndarray:
    """Derivative of K = A^{-1} with respect to user i's type: K (E_i G + G^T E_i) K.

    E_i carries d(phi)/d(theta_i) at entry (i, i) and zeros elsewhere; under
    regularity the result is entrywise nonnegative.
    """
    sc.require_valid()
    th = sc.check_profile(theta)
    if not 0 <= i < sc.n:
        raise IndexError(f"user index {i} out of range for n={sc.n}")
    k = k_matrix(sc, th)
    slope = float(sc.dist.virtual_value_slope(th[i]))
    g = sc.network.weights
    b = np.zeros((sc.n, sc.n))
    b[i, :] += slope * g[i, :]
    b[:, i] += slope * g[i, :]
    return k @ b @ k


def solve_profiles(sc: Scenario, phis: np.ndarray) -> np.ndarray:
    """Batched demand solve for a stack of virtual-value profiles (..., n)."""
    g = sc.network.weights
    tb = sc.params.t + sc.params.b
    a = tb * np.eye(sc.n) - phis[..., :, None] * g - g.T * phis[..., None, :]
    rhs = np.full(phis.shape + (1,), sc.params.s + sc.params.a - sc.params.p)
    return np.linalg.solve(a, rhs)[..., 0]


# ---------------------------------------------------------------------------
# expectation engines
# ---------------------------------------------------------------------------


class QuadratureEngine:
    """Tensor Gauss-Legendre expectation over the other users' types.

    The node count grows as order**(n-1); refuse networks beyond ``max_users``
    and point to the Monte Carlo engine instead.
    """

    kind = "quadrature"

    def __init__(self, order: int = 8, max_users: int = 7):
        if order < 1:
            raise EngineError("quadrature order must be >= 1")
        self.order = order
        self.max_users = max_users
        self._cache: dict = {}

    @property
    def metadata(self) -> dict:
        return {"method": "quadrature", "order": self.order}

    def _rule(self, dist: TypeDistribution):
        key = ("rule", dist)
        if key not in self._cache:
            x, w = np.polynomial.legendre.leggauss(self.order)
            half = 0.5 * (dist.upper - dist.lower)
            nodes = dist.lower + (x + 1.0) * half
            weights = w * half * np.asarray(dist.pdf(nodes), dtype=float)
            self._cache[key] = (nodes, weights)
        return self._cache[key]

    def others_samples(self, dist: TypeDistribution, n: int, i: int):
        """(values, weights) for the n-1 other coordinates; independent of i."""
        if n > self.max_users:
            raise EngineError(
                f"tensor quadrature limited to n <= {self.max_users} users "
                f"(got n={n}); use MonteCarloEngine"
            )
        n_others = n - 1
        key = ("tensor", dist, n_others)
        if key not in self._cache:
            nodes, weights = self._rule(dist)
            if n_others == 0:
                self._cache[key] = (np.zeros((1, 0)), np.ones(1))
            else:
                idx = np.indices((self.order,) * n_others).reshape(n_others, -1).T
                self._cache[key] = (nodes[idx], np.prod(weights[idx], axis=1))
        return self._cache[key]


class MonteCarloEngine:
    """Monte Carlo expectation with common random numbers.

    One uniform matrix is drawn per (distribution, n) and mapped through the
    quantile function; user i's sample set is the columns other than i, so it
    is identical across grid points and heavily shared across users.
    """

    kind = "mc"

    def __init__(self, samples: int = 20_000, seed: int = 0):
        if samples < 1:
            raise EngineError("need at least one Monte Carlo sample")
        self.samples = samples
        self.seed = seed
        self._cache: dict = {}

    @property
    def metadata(self) -> dict:
        return {"method": "mc", "samples": self.samples, "seed": self.seed}

    def _values(self, dist: TypeDistribution, n: int) -> np.ndarray:
        key = (dist, n)
        if key not in self._cache:
            rng = np.random.default_rng(self.seed)
            self._cache[key] = np.asarray(
                dist.quantile(rng.random((self.samples, n))), dtype=float
            )
        return self._cache[key]

    def others_samples(self, dist: TypeDistribution, n: int, i: int):
        values = self._values(dist, n)
        others = np.delete(np.arange(n), i)
        return values[:, others], np.full(self.samples, 1.0 / self.samples)


# ---------------------------------------------------------------------------
# interim curves and rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterimCurves:
    """Per-user interim quantities on a common type grid.

    Rows of users that were not requested are NaN; ``users`` lists the
    computed ones. ``gamma_se`` is the Monte Carlo standard error of gamma
    (None for quadrature).
    """

    grid: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    c: np.ndarray
    users: tuple
    method: str
    detail: dict
    gamma_se: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class RewardSchedule:
    """Interim reward r_i on the curve grid, linear interpolation in between."""

    grid: np.ndarray
    rewards: np.ndarray
    users: tuple

    def reward(self, i: int, theta: float) -> float:
        lo, hi = self.grid[0], self.grid[-1]
        if not lo <= theta <= hi:
            raise SupportError(f"report {theta} outside schedule grid [{lo}, {hi}]")
        return float(np.interp(theta, self.grid, self.rewards[i]))

    def rewards_for_profile(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.array([self.reward(i, theta[i]) for i in range(len(theta))])


def _chunk_slices(m: int, chunk: int):
    for start in range(0, m, chunk):
        yield slice(start, min(start + chunk, m))


def interim_curves(
    sc: Scenario,
    grid_size: int,
    engine,
    users=None,
    threads: int = 1,
) -> InterimCurves:
    """Estimate gamma_i, V_i, C_i on a uniform type grid for the given users.

    Deterministic for a fixed engine configuration regardless of ``threads``:
    work is split into independent (user, grid-chunk) tasks whose outputs land
    in preallocated slots, and every reduction runs in a fixed order.
    """
    if grid_size < 9:
        raise ValueError("need grid_size >= 9")
    sc.require_valid()
    n = sc.n
    user_list = list(range(n)) if users is None else sorted(set(int(u) for u in users))
    if any(u < 0 or u >= n for u in user_list):
        raise IndexError("user index out of range")
    dist = sc.dist
    p = sc.params
    grid = np.linspace(dist.lower, dist.upper, grid_size)

    gamma = np.full((n, grid_size), np.nan)
    v = np.full((n, grid_size), np.nan)
    c = np.full((n, grid_size), np.nan)
    track_se = engine.kind == "mc"
    gamma_se = np.full((n, grid_size), np.nan) if track_se else None

    tasks = []
    for i in user_list:
        values, weights = engine.others_samples(dist, n, i)
        n_samples = values.shape[0]
        phis_others = np.asarray(dist.virtual_value(values), dtype=float)
        others = np.delete(np.arange(n), i)
        # chunk so one batch of stacked n x n systems stays near ~8e6 floats
        chunk = max(1, int(8e6 / max(1, n_samples * n * n)))
        for sl in _chunk_slices(grid_size, chunk):
            tasks.append((i, sl, others, phis_others, weights, n_samples))

    g_row = sc.network.weights

    def run_task(task):
        i, sl, others, phis_others, weights, n_samples = task
        grid_vals = grid[sl]
        m = len(grid_vals)
        phis = np.empty((m, n_samples, n))
        phis[:, :, others] = phis_others[None, :, :]
        phis[:, :, i] = np.asarray(dist.virtual_value(grid_vals), dtype=float)[:, None]
        x = solve_profiles(sc, phis.reshape(-1, n)).reshape(m, n_samples, n)
        xi = x[..., i]
        gamma_samples = xi * (x @ g_row[i])
        v_samples = (p.a - p.p) * xi - 0.5 * p.b * xi**2
        c_samples = p.s * xi - 0.5 * p.t * xi**2
        gamma[i, sl] = gamma_samples @ weights
        v[i, sl] = v_samples @ weights
        c[i, sl] = c_samples @ weights
        if track_se:
            resid = gamma_samples - gamma[i, sl][:, None]
            var = (resid**2 @ weights) * n_samples / max(1, n_samples - 1)
            gamma_se[i, sl] = np.sqrt(var / n_samples)

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_task, tasks))
    else:
        for task in tasks:
            run_task(task)

    return InterimCurves(
        grid=grid,
        gamma=gamma,
        v=v,
        c=c,
        users=tuple(user_list),
        method=engine.kind,
        detail=engine.metadata,
        gamma_se=gamma_se,
    )


def cumulative_trapezoid(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Running trapezoid integral along the last axis, zero at the first node."""
    steps = np.diff(x)
    partial = 0.5 * (y[..., 1:] + y[..., :-1]) * steps
    out = np.zeros(y.shape)
    out[..., 1:] = np.cumsum(partial, axis=-1)
    return out


def truthful_interim_utility(curves: InterimCurves) -> np.ndarray:
    """Interim utility of truthful reporting on the grid: cumulative integral of gamma."""
    return cumulative_trapezoid(curves.gamma, curves.grid)


def reward_schedule(curves: InterimCurves) -> RewardSchedule:
    """Build the reward schedule from interim curves.

    Negative rewards are legal output of the formula; they are reported with
    a warning rather than clipped, because clipping would break incentive
    compatibility.
    """
    grid = curves.grid
    if np.any(np.diff(grid) <= 0):
        raise ValueError("curve grid must be strictly ascending")
    integral = cumulative_trapezoid(curves.gamma, grid)
    rewards = integral - grid[None, :] * curves.gamma - curves.v
    negative = []
    for i in curves.users:
        idx = np.flatnonzero(rewards[i] < 0)
        if idx.size:
            negative.append(f"user {i} at theta in [{grid[idx[0]]:g}, {grid[idx[-1]]:g}]")
    if negative:
        warnings.warn(
            "negative rewards on grid: " + "; ".join(negative),
            NegativeRewardWarning,
            stacklevel=2,
        )
    return RewardSchedule(grid=grid, rewards=rewards, users=curves.users)


def cp_expected_utility(sc: Scenario, curves: InterimCurves, rewards: RewardSchedule) -> float:
    """Expected provider utility: sum_i integral of (C_i - r_i) against the pdf."""
    _require_all_users(sc, curves)
    if rewards.grid.shape != curves.grid.shape or np.any(rewards.grid != curves.grid):
        raise ValueError("curves and rewards must share one grid")
    f = np.asarray(sc.dist.pdf(curves.grid), dtype=float)
    integrand = (curves.c - rewards.rewards) * f[None, :]
    return float(np.sum(np.trapezoid(integrand, curves.grid, axis=1)))


def cp_expected_utility_virtual(sc: Scenario, curves: InterimCurves) -> float:
    """Same quantity through the virtual-surplus form: sum_i E[C_i + V_i + phi*gamma_i]."""
    _require_all_users(sc, curves)
    phi = np.asarray(sc.dist.virtual_value(curves.grid), dtype=float)
    f = np.asarray(sc.dist.pdf(curves.grid), dtype=float)
    integrand = (curves.c + curves.v + phi[None, :] * curves.gamma) * f[None, :]
    return float(np.sum(np.trapezoid(integrand, curves.grid, axis=1)))


def _require_all_users(sc: Scenario, curves: InterimCurves) -> None:
    if tuple(curves.users) != tuple(range(sc.n)):
        raise ValueError("provider utility needs curves for every user")


def export_interim_csv(curves: InterimCurves, rewards: RewardSchedule, path) -> None:
    """Write user, theta, gamma, V, C, r rows (12 significant digits)."""
    rows = []
    for i in curves.users:
        for k, theta in enumerate(curves.grid):
            rows.append(
                (
                    i,
                    float(theta),
                    float(curves.gamma[i, k]),
                    float(curves.v[i, k]),
                    float(curves.c[i, k]),
                    float(rewards.rewards[i, k]),
                )
            )
    write_csv(path, ("user", "theta", "gamma", "V", "C", "r"), rows)
