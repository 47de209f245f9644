"""Perplexity-based step rewards, per-node averages and bottleneck selection.

All quantities use natural logs. ``J`` is the mean per-token log-probability
of the ground truth under the Executor (so ``PPL = exp(-J)`` and ``J <= 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import AlignmentError, AlphaRangeError, EmptyTargetError, ProviderError
from .llm import CompletionScore, Gateway
from .runtime import Trajectory

MAGNITUDE = "magnitude"
LITERAL = "literal"
DELTA_MODES = (MAGNITUDE, LITERAL)

EPS = 1e-6
DELTA_CAP = 10.0
DEFAULT_ALPHA = 0.6
DEFAULT_N_REFINE = 3

SCORING_FRAME = "Question: {q}\n\nReasoning so far:\n{context}\n\nAnswer:"


@dataclass(frozen=True)
class StepObjective:
    t: int
    J: float
    token_count: int

    @property
    def ppl(self) -> float:
        return math.exp(-self.J)


@dataclass(frozen=True)
class StepScore:
    t: int
    J: float
    J0: float
    delta: float
    S_i: float
    S_c: float
    S_t: float
    r: float
    token_count: int = 0
    failed: bool = False
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "J": self.J, "J0": self.J0, "delta": self.delta, "S_i": self.S_i,
                "S_c": self.S_c, "S_t": self.S_t, "r": self.r, "token_count": self.token_count,
                "failed": self.failed, "note": self.note}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepScore":
        return cls(int(d["t"]), float(d["J"]), float(d["J0"]), float(d["delta"]), float(d["S_i"]),
                   float(d["S_c"]), float(d["S_t"]), float(d["r"]), int(d.get("token_count", 0)),
                   bool(d.get("failed", False)), str(d.get("note", "")))


# ------------------------------------------------------------------ pure math

def objective(tokens: CompletionScore | Sequence[float], t: int = 0) -> StepObjective:
    lps = tokens.logprobs if isinstance(tokens, CompletionScore) else [float(x) for x in tokens]
    if not lps:
        raise EmptyTargetError("cannot average an empty token sequence")
    return StepObjective(t, math.fsum(lps) / len(lps), len(lps))


def relative_gain(J_t: float, J_0: float, mode: str = MAGNITUDE) -> float:
    """Normalized gain over the no-context baseline, clamped to ``[-10, 10]``.

    ``magnitude`` divides by ``|J_0|`` so a better prediction gives a positive
    gain; ``literal`` divides by ``J_0`` itself (which flips the sign, as J <= 0).
    """
    if mode not in DELTA_MODES:
        raise ValueError(f"unknown delta mode {mode!r}")
    denom = max(abs(J_0), EPS)
    if mode == LITERAL:
        denom = -denom if J_0 <= 0 else denom
    delta = (J_t - J_0) / denom
    return max(-DELTA_CAP, min(DELTA_CAP, delta))


def improvement_score(delta: float) -> float:
    return math.tanh(delta + 1.0)


def _sgn(x: float) -> int:
    return (x > 0) - (x < 0)


def consistency_score(J_values: Sequence[float]) -> float:
    """Kendall-style agreement between step index and J; 0 for a single step."""
    t = len(J_values)
    if t < 1:
        raise ValueError("consistency_score needs at least one value")
    if t == 1:
        return 0.0
    total = 0
    for i in range(t):
        for j in range(i + 1, t):
            total += _sgn(J_values[i] - J_values[j]) * _sgn(i - j)
    return 2 * total / (t * (t - 1))


def check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaRangeError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def quality_score(S_i: float, S_c: float, alpha: float) -> float:
    check_alpha(alpha)
    return (1.0 - alpha) * S_i + alpha * S_c


def step_rewards(qualities: Sequence[float]) -> list[float]:
    if not qualities:
        raise ValueError("step_rewards needs at least one quality")
    return [qualities[0]] + [qualities[t] - qualities[t - 1] for t in range(1, len(qualities))]


# ------------------------------------------------------------------ trajectories

def scoring_prompt(question: str, context: str) -> str:
    return SCORING_FRAME.format(q=question, context=context)


def compose_scores(J0: float, Js: Sequence[float | None], alpha: float, mode: str = MAGNITUDE,
                   token_counts: Sequence[int] | None = None, notes: Sequence[str] | None = None,
                   ) -> list[StepScore]:
    """Build step scores from J_0 and J_1..J_m; ``None`` marks a failed scoring call.

    A failed step keeps the previous quality (reward 0), so rewards still
    telescope to the last quality. Consistency uses the successful J values
    up to each step.
    """
    check_alpha(alpha)
    token_counts = token_counts or [0] * len(Js)
    notes = notes or [""] * len(Js)
    out: list[StepScore] = []
    seen: list[float] = []
    prev = 0.0
    for t, J in enumerate(Js, 1):
        if J is None:
            out.append(StepScore(t, math.nan, J0, math.nan, math.nan, math.nan, prev, 0.0,
                                 token_counts[t - 1], True, notes[t - 1] or "scoring failed"))
            continue
        seen.append(J)
        delta = relative_gain(J, J0, mode)
        s_i = improvement_score(delta)
        s_c = consistency_score(seen)
        s_t = quality_score(s_i, s_c, alpha)
        r = s_t if not out else s_t - prev
        out.append(StepScore(t, J, J0, delta, s_i, s_c, s_t, r, token_counts[t - 1]))
        prev = s_t
    return out


def score_trajectory(traj: Trajectory, alpha: float, gateway: Gateway, mode: str = MAGNITUDE,
                     J0: float | None = None) -> list[StepScore]:
    """Score the ground truth after every accumulated context.

    Issues ``m + 1`` scoring calls (baseline first) unless a cached ``J0`` is
    supplied, in which case the baseline call is skipped.
    """
    check_alpha(alpha)
    if traj.m < 1 or len(traj.accumulated) != traj.m + 1:
        raise AlignmentError(f"trajectory {traj.sample_id} is incomplete")
    if J0 is None:
        try:
            J0 = objective(gateway.score_completion(scoring_prompt(traj.question, ""), traj.ground_truth)).J
        except ProviderError as exc:
            note = f"baseline scoring failed: {exc}"
            return compose_scores(0.0, [None] * traj.m, alpha, mode, notes=[note] * traj.m)
    Js: list[float | None] = []
    counts, notes = [], []
    for t in range(1, traj.m + 1):
        try:
            obj = objective(gateway.score_completion(scoring_prompt(traj.question, traj.accumulated[t]),
                                                     traj.ground_truth), t)
            Js.append(obj.J)
            counts.append(obj.token_count)
            notes.append("")
        except ProviderError as exc:
            Js.append(None)
            counts.append(0)
            notes.append(str(exc))
    return compose_scores(J0, Js, alpha, mode, counts, notes)


# ------------------------------------------------------------------ epoch aggregation

@dataclass(frozen=True)
class RewardLedger:
    epoch: int
    node_order: tuple[str, ...]
    per_sample: Mapping[str, tuple[StepScore, ...]]
    per_node_mean: Mapping[str, float]
    bottleneck: str
    refinement_sample_ids: tuple[str, ...]
    alpha: float = DEFAULT_ALPHA
    delta_mode: str = MAGNITUDE

    def rows(self) -> list[dict[str, Any]]:
        """One flat row per (sample, step), in sample then pipeline order."""
        out = []
        for sid in sorted(self.per_sample):
            for node, s in zip(self.node_order, self.per_sample[sid]):
                out.append({"epoch": self.epoch, "sample_id": sid, "node": node, **s.to_dict()})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "node_order": list(self.node_order),
            "per_sample": {sid: [s.to_dict() for s in steps] for sid, steps in sorted(self.per_sample.items())},
            "per_node_mean": dict(self.per_node_mean),
            "bottleneck": self.bottleneck,
            "refinement_sample_ids": list(self.refinement_sample_ids),
            "alpha": self.alpha,
            "delta_mode": self.delta_mode,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RewardLedger":
        return cls(int(d["epoch"]), tuple(d["node_order"]),
                   {sid: tuple(StepScore.from_dict(s) for s in steps) for sid, steps in d["per_sample"].items()},
                   dict(d["per_node_mean"]), d["bottleneck"], tuple(d["refinement_sample_ids"]),
                   float(d.get("alpha", DEFAULT_ALPHA)), d.get("delta_mode", MAGNITUDE))


def select_bottleneck(means: Mapping[str, float], order: Sequence[str]) -> str:
    """Argmin of the per-node means; ties go to the earliest node in ``order``."""
    best = None
    for name in order:
        if best is None or means[name] < means[best]:
            best = name
    if best is None:
        raise ValueError("no nodes to choose from")
    return best


def refinement_samples(per_sample: Mapping[str, Sequence[StepScore]], index: int,
                       n: int = DEFAULT_N_REFINE) -> list[str]:
    """Samples whose step ``index`` reward is the strict per-sample minimum, worst first."""
    picked = []
    for sid, steps in per_sample.items():
        r = steps[index].r
        others = [s.r for k, s in enumerate(steps) if k != index]
        if all(r < o for o in others):
            picked.append((r, sid))
    picked.sort()
    return [sid for _, sid in picked[:n]]


def aggregate_epoch(scores: Mapping[str, Sequence[StepScore]], node_order: Iterable[str], epoch: int = 0,
                    n_refine: int = DEFAULT_N_REFINE, alpha: float = DEFAULT_ALPHA,
                    delta_mode: str = MAGNITUDE) -> RewardLedger:
    order = tuple(node_order)
    if not scores:
        raise AlignmentError("no scored samples")
    for sid, steps in scores.items():
        if len(steps) != len(order):
            raise AlignmentError(f"sample {sid} has {len(steps)} step scores for {len(order)} nodes")
    means = {name: math.fsum(steps[i].r for steps in scores.values()) / len(scores)
             for i, name in enumerate(order)}
    bottleneck = select_bottleneck(means, order)
    refine = refinement_samples(scores, order.index(bottleneck), n_refine)
    return RewardLedger(epoch, order, {sid: tuple(s) for sid, s in scores.items()}, means, bottleneck,
                        tuple(refine), alpha, delta_mode)
