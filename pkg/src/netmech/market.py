"""Market primitives: influence network, scalar parameters, ex-post utilities.

A user's ex-post utility from demand profile x and reward R_i is

    a*x_i - (b/2)*x_i**2  +  theta_i * x_i * sum_j g_ij x_j  -  p*x_i  +  R_i

and the content provider's ex-post utility is

    sum_i [ s*x_i - (t/2)*x_i**2 - R_i ].

Feasibility of the allocation rule needs, per user i,

    t + b > theta_max * sum_{j != i} (g_ij + g_ji)      and      s + a > p,

which makes the allocation problem strictly concave (diagonally dominant
quadratic form). ``validate_assumption2`` checks this and reports the slack
per user; solving an invalid scenario raises ``InvalidScenarioError``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    RegularityReport,
    SupportError,
    TypeDistribution,
    validate_regularity,
)


class InvalidScenarioError(ValueError):
    """The scenario fails a feasibility or regularity requirement."""


@dataclass(frozen=True)
class Network:
    """Nonnegative weighted influence graph over n users (zero diagonal)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be a square matrix, got shape {w.shape}")
        if w.shape[0] < 1:
            raise ValueError("need at least one user")
        if np.any(w < 0):
            raise ValueError("influence weights must be nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-influence g_ii must be zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MarketParams:
    """Scalars of the linear-quadratic utilities.

    a: max internal demand willingness rate, b: willingness elasticity,
    s/t: ad-revenue concavity Q(x) = s*x - (t/2)*x**2, p: per-unit data price.
    """

    a: float
    b: float
    s: float
    t: float
    p: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "s", "t", "p"):
            if getattr(self, name) < 0:
                raise ValueError(f"parameter {name} must be nonnegative")
        if self.b <= 0 and self.t <= 0:
            raise ValueError("need b > 0 or t > 0 (strict concavity)")


@dataclass(frozen=True)
class Assumption2Report:
    """Per-user dominance slack (t+b) - theta_max*sum(g_ij+g_ji) and price slack s+a-p."""

    row_slack: np.ndarray
    price_slack: float
    theta_max: float
    tb: float
    price_sum: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.row_slack > 0) and self.price_slack > 0)

    def failure_message(self) -> str | None:
        msgs = self._messages()
        return "; ".join(msgs) if msgs else None

    def _messages(self) -> list[str]:
        msgs = []
        for i in np.flatnonzero(self.row_slack <= 0):
            bound = self.tb - self.row_slack[i]  # theta_bar * sum(g_ij + g_ji)
            msgs.append(
                f"user {i}: t+b > theta_bar*sum(g_ij+g_ji) fails: {self.tb:g} <= {bound:g}"
            )
        if self.price_slack <= 0:
            msgs.append(f"s+a > p fails: {self.price_sum:g} <= {self.price_sum - self.price_slack:g}")
        return msgs

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"assumption 2 {status}: min row slack {float(np.min(self.row_slack)):.6g}, "
            f"price slack {self.price_slack:.6g}"
        )


@dataclass(frozen=True)
class Scenario:
    """Bundle of network, market parameters, and the type law.

    Feasibility and regularity reports are computed eagerly; construction does
    not raise on failure so invalid scenarios can still be inspected, but
    solving one is an error (``require_valid``).
    """

    network: Network
    params: MarketParams
    dist: TypeDistribution
    assumption2: Assumption2Report = field(init=False, compare=False, repr=False)
    regularity: RegularityReport = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "assumption2", validate_assumption2(self))
        object.__setattr__(self, "regularity", validate_regularity(self.dist))

    @property
    def n(self) -> int:
        return self.network.n

    @property
    def valid(self) -> bool:
        return self.assumption2.passed and self.regularity.passed

    def require_valid(self) -> None:
        problems = []
        if not self.regularity.passed:
            problems.append("assumption 1 (regular distribution): " + self.regularity.summary())
        if not self.assumption2.passed:
            problems.extend(self.assumption2._messages())
        if problems:
            raise InvalidScenarioError("; ".join(problems))

    def check_profile(self, theta) -> np.ndarray:
        """Validate a type profile against n and the support; returns an array."""
        arr = np.asarray(theta, dtype=float)
        if arr.shape != (self.n,):
            raise ValueError(f"type profile must have shape ({self.n},), got {arr.shape}")
        if np.any(arr < self.dist.lower) or np.any(arr > self.dist.upper):
            raise SupportError(
                f"type profile leaves support [{self.dist.lower}, {self.dist.upper}]"
            )
        return arr


def validate_assumption2(sc: Scenario) -> Assumption2Report:
    """Feasibility check: per-row coupling bound and s+a > p."""
    g = sc.network.weights
    coupling = g.sum(axis=1) + g.sum(axis=0)  # sum_j (g_ij + g_ji), diagonal is zero
    tb = sc.params.t + sc.params.b
    row_slack = tb - sc.dist.upper * coupling
    row_slack.setflags(write=False)
    return Assumption2Report(
        row_slack=row_slack,
        price_slack=sc.params.s + sc.params.a - sc.params.p,
        theta_max=sc.dist.upper,
        tb=tb,
        price_sum=sc.params.s + sc.params.a,
    )


def user_utility(sc: Scenario, x, rewards, true_theta, i: int) -> float:
    """Ex-post utility of user i under demand x, rewards R, and true types."""
    x = np.asarray(x, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    theta = np.asarray(true_theta, dtype=float)
    n = sc.n
    if x.shape != (n,) or rewards.shape != (n,) or theta.shape != (n,):
        raise ValueError("x, rewards, and true_theta must all have length n")
    if not 0 <= i < n:
        raise IndexError(f"user index {i} out of range for n={n}")
    p = sc.params
    internal = p.a * x[i] - 0.5 * p.b * x[i] ** 2
    network = theta[i] * x[i] * float(sc.network.weights[i] @ x)
    return float(internal + network - p.p * x[i] + rewards[i])


def cp_ex_post_utility(sc: Scenario, x, rewards) -> float:
    """Content provider's ex-post utility: ad revenue minus rewards paid."""
    x = np.asarray(x, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if x.shape != (sc.n,) or rewards.shape != (sc.n,):
        raise ValueError("x and rewards must have length n")
    p = sc.params
    return float(np.sum(p.s * x - 0.5 * p.t * x**2 - rewards))
