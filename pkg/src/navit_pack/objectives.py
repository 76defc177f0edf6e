"""Post-training objectives at desk scale.

Preference-pair construction from scored candidate groups, the DPO
logistic loss with an optional negative log-likelihood term and analytic
gradients, group-standardized advantages, verifiable answer scoring, and
multiple-choice to fill-in-the-blank conversion. Sequence log
probabilities arrive as scalars per candidate; there is no token-level
machinery here.

Functional forms and defaults are pinned in docs/objectives.md.
"""

from __future__ import annotations

import enum
import json
import math
import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chat import ThinkingOutput
from .errors import NonFiniteInput

__all__ = [
    "AnswerKind",
    "DpoConfig",
    "DpoResult",
    "GroupTooSmall",
    "PreferenceGroup",
    "PreferencePair",
    "ScoredCandidate",
    "UnknownAnswerLetter",
    "UnparseableNumeric",
    "GRPO_EPSILON",
    "build_pairs",
    "dpo_loss",
    "grpo_advantages",
    "mcq_to_fill_in_blank",
    "parse_group_line",
    "verify_answer",
]

GRPO_EPSILON = 1e-8


class GroupTooSmall(ValueError):
    """Group-relative statistics need at least two members."""


class UnparseableNumeric(ValueError):
    """A value required to be numeric could not be parsed."""


class UnknownAnswerLetter(KeyError):
    """The answer letter does not appear among the options."""


@dataclass(frozen=True)
class ScoredCandidate:
    """One candidate response with its logprobs and verifiable score."""

    response: str
    logprob_policy: float
    logprob_reference: float
    score: float

    def __post_init__(self) -> None:
        for name in ("logprob_policy", "logprob_reference", "score"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteInput(f"{name} must be finite")


@dataclass(frozen=True)
class PreferenceGroup:
    """Scored candidate responses for one query."""

    query_id: str
    candidates: tuple[ScoredCandidate, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) < 2:
            raise GroupTooSmall(
                f"group {self.query_id!r} has {len(self.candidates)} candidates, need >= 2"
            )
        responses = [c.response for c in self.candidates]
        if len(set(responses)) != len(responses):
            raise ValueError(f"group {self.query_id!r} has duplicate responses")

    def score_variance(self) -> float:
        scores = np.array([c.score for c in self.candidates])
        return float(scores.var())

    def passes_difficulty_filter(self, min_score_variance: float) -> bool:
        """Offline difficulty filter: keep groups whose scores actually
        disagree. Zero threshold keeps everything."""
        return self.score_variance() >= min_score_variance


@dataclass(frozen=True)
class PreferencePair:
    chosen_index: int
    rejected_index: int
    chosen: ScoredCandidate
    rejected: ScoredCandidate
    score_gap: float


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    nll_weight: float = 0.0

    def __post_init__(self) -> None:
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.nll_weight < 0.0:
            raise ValueError(f"nll_weight must be non-negative, got {self.nll_weight}")


@dataclass(frozen=True)
class DpoResult:
    """Loss plus its partial derivatives w.r.t. the four logprob inputs."""

    loss: float
    d_logprob_policy_chosen: float
    d_logprob_policy_rejected: float
    d_logprob_reference_chosen: float
    d_logprob_reference_rejected: float


def build_pairs(group: PreferenceGroup, margin: float = 0.0) -> list[PreferencePair]:
    """Every ordered pair whose score gap exceeds `margin`.

    Pairs come out sorted by descending gap, ties by (chosen, rejected)
    index, so output order is deterministic.
    """
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    pairs = []
    for i, chosen in enumerate(group.candidates):
        for j, rejected in enumerate(group.candidates):
            gap = chosen.score - rejected.score
            if gap > margin:
                pairs.append(PreferencePair(i, j, chosen, rejected, gap))
    pairs.sort(key=lambda p: (-p.score_gap, p.chosen_index, p.rejected_index))
    return pairs


def _log_sigmoid(z: float) -> float:
    # log(sigmoid(z)) = -log(1 + exp(-z)), stable for large |z|
    return -np.logaddexp(0.0, -z)


def dpo_loss(chosen: ScoredCandidate, rejected: ScoredCandidate, cfg: DpoConfig) -> DpoResult:
    """Preference loss -log sigmoid(beta * margin) + nll_weight * (-lp_chosen).

    The margin is the policy-minus-reference logprob gap between chosen
    and rejected. Gradients are the true partials of the loss in all four
    logprobs (the reference enters the margin as given data; nothing is
    re-estimated).
    """
    lp_c, lr_c = chosen.logprob_policy, chosen.logprob_reference
    lp_r, lr_r = rejected.logprob_policy, rejected.logprob_reference
    m = (lp_c - lr_c) - (lp_r - lr_r)
    z = cfg.beta * m
    loss = -_log_sigmoid(z) + cfg.nll_weight * (-lp_c)
    # d(-log sigmoid(z))/dz = -sigmoid(-z)
    g = -cfg.beta / (1.0 + np.exp(z)) if z < 40 else -cfg.beta * np.exp(-z)
    return DpoResult(
        loss=float(loss),
        d_logprob_policy_chosen=float(g - cfg.nll_weight),
        d_logprob_policy_rejected=float(-g),
        d_logprob_reference_chosen=float(-g),
        d_logprob_reference_rejected=float(g),
    )


def grpo_advantages(rewards: Sequence[float]) -> list[float]:
    """Group-standardized advantages: (r - mean) / (population std + eps)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 2:
        raise GroupTooSmall(f"need >= 2 rewards, got shape {r.shape}")
    if not np.isfinite(r).all():
        raise NonFiniteInput("rewards contain non-finite entries")
    centered = r - r.mean()
    return [float(a) for a in centered / (r.std() + GRPO_EPSILON)]


class AnswerKind(enum.Enum):
    EXACT = "exact"
    NUMERIC = "numeric"
    CHOICE_LETTER = "choice_letter"


def _normalize_text(s: str) -> str:
    return " ".join(s.split()).casefold()


def _parse_decimal(s: str) -> float:
    try:
        return float(s.strip())
    except ValueError as e:
        raise UnparseableNumeric(f"cannot parse {s!r} as a decimal") from e


def _single_letter(s: str) -> str | None:
    stripped = s.strip().strip(string.punctuation + string.whitespace)
    if len(stripped) == 1 and stripped.isalpha():
        return stripped.casefold()
    return None


def verify_answer(prediction: ThinkingOutput, gold: str, kind: AnswerKind) -> int:
    """Score a prediction's answer against the gold answer: 1 or 0.

    Only the answer field is scored; the thinking section is ignored.
    `exact` compares after trimming, whitespace collapsing, and case
    folding; `numeric` parses both sides as decimals and compares within
    relative 1e-6 (raising UnparseableNumeric when either side fails);
    `choice_letter` compares single letters after stripping punctuation.
    """
    if not gold:
        raise ValueError("gold answer must be non-empty")
    answer = prediction.answer
    if kind is AnswerKind.EXACT:
        return int(_normalize_text(answer) == _normalize_text(gold))
    if kind is AnswerKind.NUMERIC:
        a, b = _parse_decimal(answer), _parse_decimal(gold)
        if a == b:
            return 1
        return int(abs(a - b) <= 1e-6 * max(abs(a), abs(b)))
    if kind is AnswerKind.CHOICE_LETTER:
        a, b = _single_letter(answer), _single_letter(gold)
        return int(a is not None and a == b)
    raise ValueError(f"unknown answer kind: {kind!r}")


def mcq_to_fill_in_blank(
    question: str,
    options: Sequence[tuple[str, str]],
    answer_letter: str,
) -> tuple[str, str]:
    """Convert a multiple-choice item to fill-in-the-blank.

    Options are supplied structurally, so dropping them is exact: the
    question text is returned unchanged and the gold answer becomes the
    text of the answer letter's option. Raises UnknownAnswerLetter when
    the letter has no option.
    """
    wanted = answer_letter.strip().casefold()
    for letter, text in options:
        if letter.strip().casefold() == wanted:
            return question, text
    raise UnknownAnswerLetter(
        f"answer letter {answer_letter!r} not among options "
        f"{[letter for letter, _ in options]}"
    )


_GROUP_KEYS = {"query_id", "candidates"}
_CANDIDATE_KEYS = {"response", "logprob_policy", "logprob_reference", "score"}


def parse_group_line(line: str) -> PreferenceGroup:
    """Parse one scored-group JSONL record, rejecting unknown fields by name."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ValueError(f"record must be a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - _GROUP_KEYS
    if unknown:
        raise ValueError(f"unknown field {sorted(unknown)[0]!r}")
    if not isinstance(obj.get("query_id"), str) or not obj["query_id"]:
        raise ValueError("missing or invalid 'query_id' (non-empty string required)")
    raw = obj.get("candidates")
    if not isinstance(raw, list):
        raise ValueError("'candidates' must be a list")
    candidates = []
    for i, cand in enumerate(raw):
        if not isinstance(cand, dict):
            raise ValueError(f"candidate {i} must be an object")
        unknown = set(cand) - _CANDIDATE_KEYS
        if unknown:
            raise ValueError(f"candidate {i}: unknown field {sorted(unknown)[0]!r}")
        missing = _CANDIDATE_KEYS - set(cand)
        if missing:
            raise ValueError(f"candidate {i}: missing field {sorted(missing)[0]!r}")
        if not isinstance(cand["response"], str):
            raise ValueError(f"candidate {i}: 'response' must be a string")
        values = {}
        for key in ("logprob_policy", "logprob_reference", "score"):
            val = cand[key]
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ValueError(f"candidate {i}: {key!r} must be a number")
            values[key] = float(val)
        candidates.append(ScoredCandidate(response=cand["response"], **values))
    return PreferenceGroup(query_id=obj["query_id"], candidates=tuple(candidates))
