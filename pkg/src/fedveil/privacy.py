"""Privacy accountant for the distributed noise mechanism.

The accountant works with a composite noise-scale parameter ``theta``
derived from the per-client independent noise (``sigma_eta``) and the
pairwise-correlated noise (``sigma_delta``).  A budget ``(epsilon, delta)``
is satisfied when both

    epsilon >= theta/2 + sqrt(theta)
    (epsilon - theta/2)^2 >= 2 * ln(2 / (delta * sqrt(2*pi))) * theta

hold.  Two graph regimes are supported with their published theta formulas,
implemented exactly as printed:

    complete:      theta = 1/(sigma_eta*K) + 1/(sigma_delta*K)
    random n-out:  theta = 1/(K*sigma_eta^2)
                         + (1/(floor((n-1)/3)-1) + (12+6*ln K)/K) / sigma_delta^2

Note the two formulas are not dimensionally consistent with each other (the
complete-graph one is linear in 1/sigma, the n-out one quadratic).  Both are
kept as printed under distinct function names rather than silently
reconciled.  Logarithms are natural throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "DpCheck",
    "PrivacyBudget",
    "theta_complete",
    "theta_random_n_out",
    "check_dp",
    "validate_n_out_preconditions",
    "solve_sigmas",
    "gaussian_mechanism_sigma",
]


def theta_complete(sigma_eta: float, sigma_delta: float, k: int) -> float:
    """Composite noise scale for the complete communication graph."""
    if sigma_eta <= 0 or sigma_delta <= 0:
        raise ValueError("sigma_eta and sigma_delta must be positive")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return 1.0 / (sigma_eta * k) + 1.0 / (sigma_delta * k)


def theta_random_n_out(sigma_eta: float, sigma_delta: float, k: int, n: int) -> float:
    """Composite noise scale for the random n-out communication graph."""
    if sigma_eta <= 0 or sigma_delta <= 0:
        raise ValueError("sigma_eta and sigma_delta must be positive")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    denom = math.floor((n - 1) / 3) - 1
    if denom < 1:
        raise ValueError(
            f"random n-out theta requires floor((n-1)/3) - 1 >= 1; "
            f"n={n} gives {denom}"
        )
    graph_coef = 1.0 / denom + (12.0 + 6.0 * math.log(k)) / k
    return 1.0 / (k * sigma_eta**2) + graph_coef / sigma_delta**2


@dataclass(frozen=True)
class DpCheck:
    """Result of the (epsilon, delta) condition with per-condition slack."""

    ok: bool
    slack_linear: float
    slack_quadratic: float


def check_dp(epsilon: float, delta: float, theta: float) -> DpCheck:
    """Check the budget condition; slacks are lhs - rhs (>= 0 means satisfied)."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    slack1 = epsilon - (theta / 2.0 + math.sqrt(theta))
    slack2 = (epsilon - theta / 2.0) ** 2 - 2.0 * math.log(
        2.0 / (delta * math.sqrt(2.0 * math.pi))
    ) * theta
    return DpCheck(ok=slack1 >= 0.0 and slack2 >= 0.0, slack_linear=slack1,
                   slack_quadratic=slack2)


def validate_n_out_preconditions(k: int, n: int, delta: float) -> list[str]:
    """Return the list of violated applicability conditions (empty iff valid)."""
    violations = []
    if k < 81:
        violations.append(f"K >= 81 required, got K={k}")
    bound = 4.0 * math.log(2.0 * k / (3.0 * delta))
    if n < bound:
        violations.append(f"n >= 4*ln(2K/(3*delta)) = {bound:.4f} required, got n={n}")
    bound = 6.0 * math.log(k / 3.0)
    if n < bound:
        violations.append(f"n >= 6*ln(K/3) = {bound:.4f} required, got n={n}")
    bound = 1.5 + 2.25 * math.log(2.0 * math.e / delta)
    if n < bound:
        violations.append(f"n >= 3/2 + (9/4)*ln(2e/delta) = {bound:.4f} required, got n={n}")
    return violations


def _theta_star(epsilon: float, delta: float) -> float:
    """Largest theta satisfying the budget condition, by monotone bisection.

    The satisfied set is an interval [0, theta*]: the linear condition's rhs
    grows with theta while the quadratic condition's lhs shrinks (on the
    region where the linear one holds) and its rhs grows.
    """
    def ok(th: float) -> bool:
        return check_dp(epsilon, delta, th).ok

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if not ok(hi):
            break
        lo, hi = hi, hi * 2.0
    else:  # pragma: no cover
        raise ValueError("budget condition never fails; inputs out of range")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def solve_sigmas(epsilon: float, delta: float, *, k: int, regime: str = "complete",
                 n: int | None = None, ratio: float = 10.0) -> tuple[float, float]:
    """Invert the budget condition into (sigma_eta, sigma_delta).

    Finds the largest feasible theta, then allocates the two sigmas through
    the regime's theta formula at the requested ratio sigma_delta/sigma_eta.
    The default ratio 10 keeps the pairwise noise large relative to the
    independent noise; it is a configuration knob, not a derived constant.
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be > 0, got {ratio}")
    th = _theta_star(epsilon, delta)
    if th <= 0:
        raise ValueError(f"budget (epsilon={epsilon}, delta={delta}) is infeasible")
    if regime == "complete":
        sigma_eta = (1.0 + 1.0 / ratio) / (th * k)
    elif regime == "random_n_out":
        if n is None:
            raise ValueError("regime 'random_n_out' requires n")
        denom = math.floor((n - 1) / 3) - 1
        if denom < 1:
            raise ValueError(
                f"random n-out theta requires floor((n-1)/3) - 1 >= 1; n={n}"
            )
        graph_coef = 1.0 / denom + (12.0 + 6.0 * math.log(k)) / k
        sigma_eta = math.sqrt((1.0 / k + graph_coef / ratio**2) / th)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return sigma_eta, ratio * sigma_eta


def gaussian_mechanism_sigma(epsilon: float, delta: float) -> float:
    """Minimal noise multiplier for the classical Gaussian mechanism.

    Valid for epsilon < 1 (the stated range of the bound
    delta >= (5/4) * exp(-(sigma*epsilon)^2 / 2)).
    """
    if not 0 < epsilon < 1:
        raise ValueError(
            f"the classical Gaussian mechanism bound requires 0 < epsilon < 1, "
            f"got {epsilon}"
        )
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(5.0 / (4.0 * delta))) / epsilon


@dataclass(frozen=True)
class PrivacyBudget:
    """A per-round budget record with its recomputed theta and verdict."""

    epsilon: float
    delta: float
    sigma_eta: float
    sigma_delta: float
    regime: str
    k: int
    n: int | None = None
    theta: float = field(init=False, default=0.0)
    satisfied: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.regime == "complete":
            th = theta_complete(self.sigma_eta, self.sigma_delta, self.k)
        elif self.regime == "random_n_out":
            if self.n is None:
                raise ValueError("regime 'random_n_out' requires n")
            th = theta_random_n_out(self.sigma_eta, self.sigma_delta, self.k, self.n)
        else:
            raise ValueError(f"unknown regime {self.regime!r}")
        object.__setattr__(self, "theta", th)
        object.__setattr__(
            self, "satisfied", check_dp(self.epsilon, self.delta, th).ok
        )

    def to_dict(self) -> dict:
        chk = check_dp(self.epsilon, self.delta, self.theta)
        out = {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "sigma_eta": self.sigma_eta,
            "sigma_delta": self.sigma_delta,
            "regime": self.regime,
            "k": self.k,
            "n": self.n,
            "theta": self.theta,
            "satisfied": self.satisfied,
            "slack_linear": chk.slack_linear,
            "slack_quadratic": chk.slack_quadratic,
        }
        if self.regime == "random_n_out":
            out["violated_preconditions"] = validate_n_out_preconditions(
                self.k, self.n, self.delta
            )
        return out
