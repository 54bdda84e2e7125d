"""Provider reporting policies and their expected token inflation.

All policies preserve the generated string; the dishonest ones only re-cut
it into more tokens. The random policy applies uniformly chosen 2-way
splits. The heuristic policy deterministically splits the highest-id token
and then keeps the modified sequence only if every token of it survives a
top-p plausibility check against the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, ResourceLimitError
from .tokenspace import TokenSeq, Vocabulary, pair_splits, valid_splits
from .toymodel import ModelSpec, next_token_dist

_KINDS = ("faithful", "random", "heuristic")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    m: int = 0
    p: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown policy kind {self.kind!r}")
        if self.m < 0:
            raise DomainError("split budget m must be nonnegative")
        if self.kind == "heuristic":
            if self.p is None or not 0 < self.p < 1:
                raise DomainError("heuristic policy needs p in (0, 1)")

    @classmethod
    def faithful(cls) -> "PolicySpec":
        return cls("faithful")

    @classmethod
    def random(cls, m: int) -> "PolicySpec":
        return cls("random", m=m)

    @classmethod
    def heuristic(cls, m: int, p: float) -> "PolicySpec":
        return cls("heuristic", m=m, p=p)


def top_p_set(dist, p: float) -> frozenset:
    """Smallest id set reaching cumulative probability p.

    Tokens are taken in descending probability, ties broken by ascending id.
    """
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    order = sorted(range(len(dist)), key=lambda t: (-dist[t], t))
    acc = 0.0
    out = []
    for t in order:
        out.append(t)
        acc += float(dist[t])
        if acc >= p:
            break
    return frozenset(out)


def random_split_policy(generated: TokenSeq, m: int, vocab: Vocabulary, rng) -> TokenSeq:
    """Apply up to m uniformly random string-preserving splits.

    Stops early once no token admits a 2-way split.
    """
    seq = tuple(generated)
    for _ in range(m):
        splits = valid_splits(seq, vocab)
        if not splits:
            break
        i, a, b = splits[int(rng.integers(len(splits)))]
        seq = seq[:i] + (a, b) + seq[i + 1 :]
    return seq


def heuristic_split_policy(
    generated: TokenSeq, m: int, p: float, spec: ModelSpec, prompt: str
) -> TokenSeq:
    """Deterministic split-then-verify policy.

    Repeats up to m times: pick the position with the largest token id
    (ties to the lowest position); stop on a single-character token;
    replace it by the split pair maximizing min(left, right), ties to the
    smallest (left, right). The result is kept only if every one of its
    tokens lies in the model's top-p set at its position; otherwise the
    original sequence is reported unchanged.
    """
    vocab = spec.vocab
    seq = list(generated)
    if not seq:
        return tuple(generated)
    for _ in range(m):
        i = max(range(len(seq)), key=lambda j: (seq[j], -j))
        if len(vocab.strings[seq[i]]) == 1:
            break
        pairs = pair_splits(seq[i], vocab)
        if not pairs:
            break  # multi-character token with no 2-way split
        best = None
        best_min = -1
        for a, b in pairs:  # lex ascending, so first maximum wins ties
            if min(a, b) > best_min:
                best = (a, b)
                best_min = min(a, b)
        seq[i : i + 1] = best
    out = tuple(seq)
    if out == tuple(generated):
        return tuple(generated)
    for idx in range(len(out)):
        # past the length cap the distribution is an EOS point mass, so
        # over-long modifications fail here and fall back
        dist = next_token_dist(spec, prompt, out[:idx])
        if out[idx] not in top_p_set(dist, p):
            return tuple(generated)
    return out


def apply_policy(policy: PolicySpec, spec: ModelSpec, prompt: str, generated: TokenSeq, rng) -> TokenSeq:
    """Dispatch to the configured reporting policy; always string-preserving."""
    if policy.kind == "faithful":
        return tuple(generated)
    if policy.kind == "random":
        return random_split_policy(generated, policy.m, spec.vocab, rng)
    return heuristic_split_policy(generated, policy.m, policy.p, spec, prompt)


def expected_extra_tokens(
    policy: PolicySpec,
    spec: ModelSpec,
    prompt: str,
    generated: TokenSeq,
    *,
    state_cap: int = 10_000,
    rng=None,
    mc_draws: int = 4096,
) -> float:
    """Expected reported-minus-generated length for one generated sequence.

    Exact for the faithful (zero) and heuristic (deterministic) policies.
    For the random policy the split lattice is enumerated exactly up to
    state_cap memoized states; beyond that a Monte Carlo fallback runs when
    an rng is supplied, else the resource error propagates.
    """
    if policy.kind == "faithful":
        return 0.0
    if policy.kind == "heuristic":
        out = heuristic_split_policy(generated, policy.m, policy.p, spec, prompt)
        return float(len(out) - len(generated))
    try:
        return _random_extra_exact(tuple(generated), policy.m, spec.vocab, state_cap)
    except ResourceLimitError:
        if rng is None:
            raise
        draws = [
            len(random_split_policy(generated, policy.m, spec.vocab, rng)) - len(generated)
            for _ in range(mc_draws)
        ]
        return float(np.mean(draws))


def _random_extra_exact(seq: tuple, m: int, vocab: Vocabulary, state_cap: int) -> float:
    memo: dict = {}

    def rec(s: tuple, r: int) -> float:
        if r == 0:
            return 0.0
        key = (s, r)
        cached = memo.get(key)
        if cached is not None:
            return cached
        if len(memo) >= state_cap:
            raise ResourceLimitError(
                f"random-policy split lattice exceeded {state_cap} states",
                partial_count=len(memo),
            )
        splits = valid_splits(s, vocab)
        if not splits:
            val = 0.0
        else:
            total = 0.0
            for i, a, b in splits:
                total += rec(s[:i] + (a, b) + s[i + 1 :], r - 1)
            val = 1.0 + total / len(splits)
        memo[key] = val
        return val

    return rec(tuple(seq), m)
