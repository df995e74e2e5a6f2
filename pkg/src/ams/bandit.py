"""Bandit policy mathematics.

Everything here is a pure function of its arguments plus an explicit
``numpy.random.Generator``. The selector loop decides *when* to call these;
this module only decides *what* the allocation is.

Arms are plain strings. Ties between arms are always broken in favour of the
lexicographically smallest id so replays are deterministic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ams.errors import InvalidArgument

PROB_SUM_TOL = 1e-12


class Direction(str, enum.Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class PolicyKind(str, enum.Enum):
    DECAY_EPSILON_GREEDY = "decay_epsilon_greedy"
    SOFTMAX = "softmax"
    UCB = "ucb"
    THOMPSON = "thompson"
    UNIFORM = "uniform"
    # equal-split A/B baseline: arms take turns, one interval each
    ROUND_ROBIN = "round_robin"


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.DECAY_EPSILON_GREEDY
    epsilon0: float = 0.3
    alpha_days: float = 30.0
    # in KPI units; the default suits CTR-sized values
    temperature: float = 0.001
    ucb_c: float = 2.0
    prior_a: float = 1.0
    prior_b: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PolicyKind(self.kind))
        except ValueError:
            raise InvalidArgument(f"unknown policy kind {self.kind!r}") from None
        if not (0.0 <= self.epsilon0 <= 1.0):
            raise InvalidArgument(f"epsilon0 must be in [0, 1], got {self.epsilon0}")
        for name in ("alpha_days", "temperature", "ucb_c", "prior_a", "prior_b"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgument(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ArmScore:
    arm: str
    kpi_value: Optional[float]
    direction: Direction = Direction.MAXIMIZE
    samples: int = 0
    qualified: bool = False

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.qualified and (self.kpi_value is None or not math.isfinite(self.kpi_value)):
            raise InvalidArgument(f"qualified score for {self.arm!r} needs a finite KPI value")


@dataclass(frozen=True)
class ProbabilityVector:
    arms: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        arms = tuple(self.arms)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "probs", probs)
        if not arms:
            raise InvalidArgument("probability vector needs at least one arm")
        if len(arms) != len(probs):
            raise InvalidArgument("arms and probabilities differ in length")
        if len(set(arms)) != len(arms):
            raise InvalidArgument(f"duplicate arm ids in {arms}")
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise InvalidArgument(f"probabilities must lie in [0, 1]: {probs}")
        if abs(math.fsum(probs) - 1.0) > PROB_SUM_TOL:
            raise InvalidArgument(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    @property
    def m(self) -> int:
        return len(self.arms)

    def __getitem__(self, arm: str) -> float:
        return self.probs[self.arms.index(arm)]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.arms, self.probs))

    @classmethod
    def uniform(cls, arms: Sequence[str]) -> ProbabilityVector:
        return cls(tuple(arms), (1.0 / len(arms),) * len(arms))

    @classmethod
    def one_hot(cls, arms: Sequence[str], chosen: str) -> ProbabilityVector:
        return cls(tuple(arms), tuple(1.0 if a == chosen else 0.0 for a in arms))


@dataclass(frozen=True)
class SelectionDecision:
    timestamp: int
    probabilities: ProbabilityVector
    chosen: str
    epsilon_used: float

    def __post_init__(self):
        if self.probabilities[self.chosen] <= 0.0:
            raise InvalidArgument(f"chosen arm {self.chosen!r} has zero probability")


def epsilon_at(t_days: float, epsilon0: float, alpha_days: float) -> float:
    """Linearly decaying exploration rate: ``epsilon0 * max(0, 1 - t/alpha)``."""
    if not (math.isfinite(t_days) and math.isfinite(epsilon0) and math.isfinite(alpha_days)):
        raise InvalidArgument("epsilon_at needs finite inputs")
    if t_days < 0:
        raise InvalidArgument(f"elapsed time must be non-negative, got {t_days}")
    if alpha_days <= 0:
        raise InvalidArgument(f"alpha_days must be positive, got {alpha_days}")
    if not (0.0 <= epsilon0 <= 1.0):
        raise InvalidArgument(f"epsilon0 must be in [0, 1], got {epsilon0}")
    return epsilon0 * max(0.0, 1.0 - t_days / alpha_days)


def _common_direction(scores: Sequence[ArmScore]) -> Direction:
    directions = {s.direction for s in scores}
    if len(directions) > 1:
        raise InvalidArgument("scores mix maximize and minimize directions")
    return directions.pop()


def best_arm(scores: Sequence[ArmScore]) -> Optional[str]:
    """Return the qualified arm with the best KPI, or None if nothing qualifies."""
    if not scores:
        raise InvalidArgument("best_arm needs at least one score")
    direction = _common_direction(scores)
    sign = 1.0 if direction is Direction.MAXIMIZE else -1.0
    qualified = [s for s in scores if s.qualified]
    if not qualified:
        return None
    # smallest (negated signed value, id): best KPI first, then smallest id
    best = min(qualified, key=lambda s: (-sign * s.kpi_value, s.arm))
    return best.arm


def activation_probabilities(scores: Sequence[ArmScore], epsilon: float) -> ProbabilityVector:
    """Decay epsilon-greedy allocation.

    The best arm gets ``(1 - eps) + eps/M``; every other arm gets ``eps/M``.
    With no qualified arm the allocation is uniform.
    """
    if not scores:
        raise InvalidArgument("activation_probabilities needs at least one arm")
    if not (0.0 <= epsilon <= 1.0):
        raise InvalidArgument(f"epsilon must be in [0, 1], got {epsilon}")
    arms = [s.arm for s in scores]
    m = len(arms)
    best = best_arm(scores)
    if best is None:
        return ProbabilityVector.uniform(arms)
    p_other = epsilon / m
    p_best = (1.0 - epsilon) + epsilon / m
    return ProbabilityVector(tuple(arms), tuple(p_best if a == best else p_other for a in arms))


def select_arm(
    probabilities: ProbabilityVector,
    rng: np.random.Generator,
    *,
    timestamp: int = 0,
    epsilon_used: float = 0.0,
) -> SelectionDecision:
    """Draw one arm using a single uniform variate against the CDF in entry order."""
    u = rng.random()
    cumulative = 0.0
    chosen = None
    for arm, p in zip(probabilities.arms, probabilities.probs):
        cumulative += p
        if u < cumulative and p > 0.0:
            chosen = arm
            break
    if chosen is None:
        # u landed in the rounding gap above the last partial sum
        chosen = [a for a, p in zip(probabilities.arms, probabilities.probs) if p > 0.0][-1]
    return SelectionDecision(
        timestamp=timestamp, probabilities=probabilities, chosen=chosen, epsilon_used=epsilon_used
    )


def softmax_probabilities(scores: Sequence[ArmScore], temperature: float) -> ProbabilityVector:
    if not scores:
        raise InvalidArgument("softmax needs at least one arm")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    if any(not s.qualified for s in scores):
        raise InvalidArgument("softmax accepts qualified scores only")
    sign = 1.0 if _common_direction(scores) is Direction.MAXIMIZE else -1.0
    values = np.array([sign * s.kpi_value for s in scores], dtype=float) / temperature
    weights = np.exp(values - values.max())
    probs = weights / weights.sum()
    return ProbabilityVector(tuple(s.arm for s in scores), tuple(probs.tolist()))


def ucb_index(mean: float, pulls: int, total_pulls: int, c: float) -> float:
    """UCB1 index ``mean + sqrt(c ln(total) / pulls)``; unpulled arms are infinite."""
    if total_pulls <= 0:
        raise InvalidArgument("total_pulls must be positive")
    if pulls < 0 or pulls > total_pulls:
        raise InvalidArgument(f"pulls={pulls} outside [0, {total_pulls}]")
    if c <= 0:
        raise InvalidArgument(f"c must be positive, got {c}")
    if pulls == 0:
        return math.inf
    return mean + math.sqrt(c * math.log(total_pulls) / pulls)


def ucb_choice(arms: Sequence[str], means: Sequence[float], pulls: Sequence[int], c: float) -> str:
    """Arm with the highest UCB index; any unpulled arm goes first."""
    if not arms:
        raise InvalidArgument("ucb_choice needs at least one arm")
    unpulled = [a for a, n in zip(arms, pulls) if n == 0]
    if unpulled:
        return min(unpulled)
    total = int(sum(pulls))
    indexed = [(ucb_index(mu, n, total, c), a) for a, mu, n in zip(arms, means, pulls)]
    return min(indexed, key=lambda pair: (-pair[0], pair[1]))[1]


def beta_posterior(clicks: int, impressions: int, prior_a: float = 1.0, prior_b: float = 1.0) -> tuple[float, float]:
    if clicks < 0 or impressions < 0:
        raise InvalidArgument("counts must be non-negative")
    # multi-click impressions can push clicks above impressions; clamp the failure count
    return prior_a + clicks, prior_b + max(impressions - clicks, 0)


def posterior_mean(a: float, b: float) -> float:
    return a / (a + b)


def thompson_draw(posteriors: Iterable[tuple[str, float, float]], rng: np.random.Generator) -> str:
    """Draw one Beta sample per arm, in the given order, and return the argmax."""
    posteriors = list(posteriors)
    if not posteriors:
        raise InvalidArgument("thompson_draw needs at least one arm")
    best_arm_id, best_sample = None, -math.inf
    for arm, a, b in posteriors:
        if a <= 0 or b <= 0:
            raise InvalidArgument(f"Beta parameters for {arm!r} must be positive")
        sample = rng.beta(a, b)
        if sample > best_sample or (sample == best_sample and arm < best_arm_id):
            best_arm_id, best_sample = arm, sample
    return best_arm_id
