"""Evidence stream, wealth process, sequential test, and bet-size calibration.

Each audit step compares the provider's reported token count against an
unbiased estimate of the conditional expected tokenization length of the
reported string. The difference is the step's evidence; a faithful provider
makes its expectation exactly zero. Evidence is aggregated multiplicatively
into a wealth process that is a nonnegative martingale under faithfulness,
so stopping when it exceeds 1/alpha bounds the false positive rate by alpha
at any data-dependent stopping time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .errors import ConditionsViolated, DomainError, TokenAuditError
from .estimator import LengthEstimate, TruncationDist, estimate_length
from .policies import PolicySpec, apply_policy
from .tokenspace import str_of
from .toymodel import ModelSpec, sample_sequence


@dataclass(frozen=True)
class LambdaSchedule:
    """Per-step bet sizes: constant lambda0, or lambda0 / step."""

    kind: str
    lambda0: float

    def __post_init__(self):
        if self.kind not in ("constant", "decreasing"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not self.lambda0 > 0:
            raise DomainError("lambda0 must be positive")

    @classmethod
    def constant(cls, lambda0: float) -> "LambdaSchedule":
        return cls("constant", float(lambda0))

    @classmethod
    def decreasing(cls, lambda0: float) -> "LambdaSchedule":
        return cls("decreasing", float(lambda0))

    def at(self, i: int) -> float:
        if i < 1:
            raise DomainError("steps are counted from 1")
        return self.lambda0 if self.kind == "constant" else self.lambda0 / i


@dataclass(frozen=True)
class EvidenceRecord:
    step: int
    prompt_id: int
    reported_len: int
    estimate: float
    evidence: float
    lam: float
    factor: float


@dataclass(frozen=True)
class AnomalyRecord:
    """A nonpositive betting factor observed at some step."""

    step: int
    evidence: float
    lam: float
    factor: float


@dataclass(frozen=True)
class WealthState:
    """Running state of the test process; log wealth is authoritative."""

    step: int = 0
    log_wealth: float = 0.0
    history: tuple = ()
    anomaly: Optional[AnomalyRecord] = None

    @property
    def wealth(self) -> float:
        return math.exp(self.log_wealth)


@dataclass(frozen=True)
class AuditOutcome:
    flagged: bool
    tau: Optional[int]  # None when censored at max_steps or aborted
    trajectory: tuple
    final_log_wealth: float
    anomaly: Optional[AnomalyRecord] = None
    clamped: bool = False

    @property
    def final_wealth(self) -> float:
        return math.exp(self.final_log_wealth)


def evidence(reported: tuple, estimate: LengthEstimate) -> float:
    """Reported token count minus the estimated conditional expected length."""
    return len(reported) - estimate.value


def update_wealth(
    state: WealthState,
    e: float,
    schedule: LambdaSchedule,
    *,
    prompt_id: int = -1,
    reported_len: int = 0,
    estimate: float = float("nan"),
) -> WealthState:
    """Advance the wealth process by one evidence value.

    A nonpositive factor does not advance the process; the state comes back
    with the anomaly attached and the caller decides what to do with it.
    """
    i = state.step + 1
    lam = schedule.at(i)
    factor = 1.0 + lam * e
    if factor <= 0.0:
        return replace(
            state, anomaly=AnomalyRecord(step=i, evidence=e, lam=lam, factor=factor)
        )
    rec = EvidenceRecord(
        step=i,
        prompt_id=prompt_id,
        reported_len=reported_len,
        estimate=estimate,
        evidence=e,
        lam=lam,
        factor=factor,
    )
    return WealthState(
        step=i,
        log_wealth=state.log_wealth + math.log(factor),
        history=state.history + (rec,),
        anomaly=None,
    )


def run_audit(
    spec: ModelSpec,
    policy: PolicySpec,
    prompts,
    schedule: LambdaSchedule,
    alpha: float,
    trunc: TruncationDist,
    max_steps: int,
    rng,
    anomaly_mode: str = "abort",
    clamp_eps: float = 1e-12,
) -> AuditOutcome:
    """Sequential audit: stop and flag once the wealth exceeds 1/alpha.

    Per step: draw a prompt uniformly, let the provider generate and
    report, estimate the conditional expected length of the reported
    string, and bet on the difference. anomaly_mode picks what happens on a
    nonpositive factor: "abort" ends the audit with the anomaly recorded,
    "clamp" substitutes clamp_eps and keeps going (the trajectory is marked
    so validity statistics can exclude it).
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if max_steps < 1:
        raise DomainError("max_steps must be at least 1")
    if len(prompts) == 0:
        raise DomainError("prompt corpus is empty")
    if anomaly_mode not in ("abort", "clamp"):
        raise DomainError(f"unknown anomaly_mode {anomaly_mode!r}")
    if not clamp_eps > 0:
        raise DomainError("clamp_eps must be positive")

    threshold = -math.log(alpha)
    state = WealthState()
    anomaly: Optional[AnomalyRecord] = None
    clamped = False
    while state.step < max_steps:
        pid = int(rng.integers(len(prompts)))
        q = prompts[pid]
        generated = sample_sequence(spec, q, rng)
        reported = apply_policy(policy, spec, q, generated, rng)
        target = str_of(reported, spec.vocab)
        try:
            est = estimate_length(spec, q, target, trunc, rng, keep_samples=False)
        except TokenAuditError as err:
            raise type(err)(f"audit step {state.step + 1} (prompt {pid}): {err}") from err
        e = len(reported) - est.value
        nxt = update_wealth(
            state, e, schedule, prompt_id=pid, reported_len=len(reported), estimate=est.value
        )
        if nxt.anomaly is not None:
            if anomaly is None:
                anomaly = nxt.anomaly
            if anomaly_mode == "abort":
                return AuditOutcome(
                    flagged=False,
                    tau=None,
                    trajectory=state.history,
                    final_log_wealth=state.log_wealth,
                    anomaly=anomaly,
                    clamped=False,
                )
            clamped = True
            i = state.step + 1
            rec = EvidenceRecord(
                step=i,
                prompt_id=pid,
                reported_len=len(reported),
                estimate=est.value,
                evidence=e,
                lam=schedule.at(i),
                factor=clamp_eps,
            )
            state = WealthState(
                step=i,
                log_wealth=state.log_wealth + math.log(clamp_eps),
                history=state.history + (rec,),
            )
        else:
            state = nxt
        if state.log_wealth > threshold:
            return AuditOutcome(
                flagged=True,
                tau=state.step,
                trajectory=state.history,
                final_log_wealth=state.log_wealth,
                anomaly=anomaly,
                clamped=clamped,
            )
    return AuditOutcome(
        flagged=False,
        tau=None,
        trajectory=state.history,
        final_log_wealth=state.log_wealth,
        anomaly=anomaly,
        clamped=clamped,
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Holdout evidence draws and the bet size derived from them."""

    lam: float
    lam_max: float
    evidences: tuple
    safety: float
    cap: float

    @property
    def min_evidence(self) -> float:
        return min(self.evidences)

    @property
    def mean_evidence(self) -> float:
        return sum(self.evidences) / len(self.evidences)


def calibration_report(
    spec: ModelSpec,
    prompts,
    trunc: TruncationDist,
    n_holdout: int,
    safety: float = 0.9,
    cap: float = 1.0,
    rng=None,
) -> CalibrationResult:
    """Pick the largest bet size the faithful holdout evidence tolerates.

    Draws n_holdout evidence values under the faithful policy; the largest
    admissible bet is 1 / (-min evidence) when any draw is negative, else
    cap; the returned bet is scaled by safety. The holdout corpus must be
    disjoint from the audited one, which the harness enforces.
    """
    if n_holdout < 1:
        raise DomainError("n_holdout must be at least 1")
    if not 0 < safety <= 1:
        raise DomainError("safety must lie in (0, 1]")
    if not cap > 0:
        raise DomainError("cap must be positive")
    if len(prompts) == 0:
        raise DomainError("holdout corpus is empty")
    es = []
    for _ in range(n_holdout):
        pid = int(rng.integers(len(prompts)))
        q = prompts[pid]
        seq = sample_sequence(spec, q, rng)
        est = estimate_length(spec, q, str_of(seq, spec.vocab), trunc, rng, keep_samples=False)
        es.append(len(seq) - est.value)
    worst = min(es)
    lam_max = 1.0 / (-worst) if worst < 0 else cap
    return CalibrationResult(
        lam=safety * lam_max,
        lam_max=lam_max,
        evidences=tuple(es),
        safety=safety,
        cap=cap,
    )


def calibrate_lambda(
    spec: ModelSpec,
    prompts,
    trunc: TruncationDist,
    n_holdout: int,
    safety: float = 0.9,
    cap: float = 1.0,
    rng=None,
) -> float:
    """Calibrated bet size; see calibration_report for the full picture."""
    return calibration_report(spec, prompts, trunc, n_holdout, safety, cap, rng).lam


def detection_time_bound(
    lambda0: float,
    alpha: float,
    intensity: float,
    var_e: float,
    b_minus: float,
    b_plus: float,
) -> float:
    """Upper bound on the mean detection step under a constant bet size.

    Requires support bounds 0 < b_minus <= 1 + lambda0 * E <= b_plus and a
    positive growth gap log(1 + lambda0 * intensity) minus the variance
    penalty var_e * lambda0^2 / (2 b_minus^2). Raises ConditionsViolated
    when the gap is not positive.
    """
    if not b_minus > 0 or not b_plus > b_minus:
        raise DomainError("need 0 < b_minus < b_plus")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not lambda0 > 0:
        raise DomainError("lambda0 must be positive")
    if var_e < 0:
        raise DomainError("var_e must be nonnegative")
    if 1.0 + lambda0 * intensity <= 0:
        raise ConditionsViolated("mean factor is nonpositive; no growth possible")
    gap = math.log1p(lambda0 * intensity) - var_e * lambda0**2 / (2.0 * b_minus**2)
    if gap <= 0:
        raise ConditionsViolated(f"growth condition fails (gap = {gap:.6g})")
    return (math.log(1.0 / alpha) + math.log(b_plus)) / gap
