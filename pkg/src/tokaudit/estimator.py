"""Unbiased estimation of the conditional expected tokenization length.

The estimator draws a random number K of constrained samples and sums the
telescoping increments of the importance-weighted running mean, each divided
by the survival probability P(K >= k). Any K distribution supported on the
nonnegative integers gives an unbiased estimate; what K controls is cost and
variance. A draw of K = 0 contributes the empty sum, i.e. zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .errors import DomainError, InvariantViolation
from .toymodel import ConstrainedSample, ModelSpec, constrained_sampler

_KINDS = ("poisson", "geometric", "deterministic")


@dataclass(frozen=True)
class TruncationDist:
    """Distribution of the per-estimate sample count K.

    kinds: poisson(rate), geometric(success prob, counting trials from 1),
    deterministic(k0). Poisson and geometric keep P(K >= k) positive for
    every k, which the debiasing relies on.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown truncation kind {self.kind!r}")
        if self.kind == "poisson" and not self.param > 0:
            raise DomainError("poisson rate must be positive")
        if self.kind == "geometric" and not 0 < self.param < 1:
            raise DomainError("geometric success probability must lie in (0, 1)")
        if self.kind == "deterministic":
            if self.param != int(self.param) or self.param < 1:
                raise DomainError("deterministic count must be an integer >= 1")

    @classmethod
    def poisson(cls, rate: float) -> "TruncationDist":
        return cls("poisson", float(rate))

    @classmethod
    def geometric(cls, success_prob: float) -> "TruncationDist":
        return cls("geometric", float(success_prob))

    @classmethod
    def deterministic(cls, k0: int) -> "TruncationDist":
        return cls("deterministic", float(k0))

    def survival(self, k: int) -> float:
        """P(K >= k), for k >= 1."""
        if k < 1:
            raise DomainError("survival is defined for k >= 1")
        if self.kind == "poisson":
            return _poisson_survival(self.param, k)
        if self.kind == "geometric":
            return (1.0 - self.param) ** (k - 1)
        return 1.0 if k <= int(self.param) else 0.0

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self.kind == "poisson":
            return math.exp(-self.param + k * math.log(self.param) - math.lgamma(k + 1))
        if self.kind == "geometric":
            if k < 1:
                return 0.0
            return (1.0 - self.param) ** (k - 1) * self.param
        return 1.0 if k == int(self.param) else 0.0

    def sample(self, rng) -> int:
        if self.kind == "poisson":
            return int(rng.poisson(self.param))
        if self.kind == "geometric":
            return int(rng.geometric(self.param))
        return int(self.param)


@lru_cache(maxsize=65536)
def _poisson_survival(rate: float, k: int) -> float:
    # upward tail sum started at the k-th pmf term; never 1 - cdf, which
    # cancels catastrophically out in the tail
    term = math.exp(-rate + k * math.log(rate) - math.lgamma(k + 1))
    total = term
    j = k
    while term > total * 1e-18 and j < k + 100_000:
        term *= rate / (j + 1)
        total += term
        j += 1
    return min(total, 1.0)


@dataclass(frozen=True)
class LengthEstimate:
    """Result of one randomized-truncation estimate.

    value can leave the [min, max] tokenization-length range and is zero
    whenever K = 0; only its expectation is pinned down.
    """

    value: float
    k_used: int
    samples: tuple


def weighted_running_mean(samples, k: int) -> float:
    """Importance-weighted mean length of the first k constrained samples.

    Weights are exponentiated relative to the largest log weight in the
    window so the ratios never overflow.
    """
    if not 1 <= k <= len(samples):
        raise DomainError(f"k={k} outside 1..{len(samples)}")
    head = samples[:k]
    shift = max(s.log_weight for s in head)
    num = 0.0
    den = 0.0
    for s in head:
        w = math.exp(s.log_weight - shift)
        num += w * len(s.seq)
        den += w
    if den <= 0.0:
        raise InvariantViolation("all importance weights vanished")
    return num / den


def estimate_length(
    spec: ModelSpec,
    prompt: str,
    target: str,
    trunc: TruncationDist,
    rng,
    keep_samples: bool = True,
) -> LengthEstimate:
    """Unbiased estimate of the mean tokenization length of target.

    Draws K ~ trunc, then K constrained samples, and returns
    sum_k (R_k - R_{k-1}) / P(K >= k) where R_k is the weighted running
    mean (R_0 = 0). The running mean is maintained incrementally with the
    same exponent-shifting scheme as weighted_running_mean.
    """
    sampler = constrained_sampler(spec, prompt, target)
    k_total = trunc.sample(rng)
    if k_total == 0:
        return LengthEstimate(value=0.0, k_used=0, samples=())
    samples: list = []
    value = 0.0
    prev = 0.0
    shift = -math.inf
    num = 0.0
    den = 0.0
    for k in range(1, k_total + 1):
        cs = sampler.sample(rng)
        if keep_samples:
            samples.append(cs)
        lw = cs.log_weight
        if lw > shift:
            if den > 0.0:
                rescale = math.exp(shift - lw)
                num *= rescale
                den *= rescale
            shift = lw
        w = math.exp(lw - shift)
        num += w * len(cs.seq)
        den += w
        r = num / den
        value += (r - prev) / trunc.survival(k)
        prev = r
    return LengthEstimate(value=value, k_used=k_total, samples=tuple(samples))
