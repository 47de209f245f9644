"""Independent reference computations used to check the library.

Nothing here imports the package's math; each oracle re-derives its value
from the definition, using exact rationals where that is possible.
"""

import itertools
import math
from fractions import Fraction


def kendall_pairs(J):
    """Exact agreement between step index and J, by enumerating every pair."""
    t = len(J)
    if t < 2:
        return Fraction(0)
    total = 0
    for i, j in itertools.combinations(range(t), 2):
        if J[i] == J[j]:
            continue
        # i < j, so sgn(i - j) = -1: a later, larger J counts as agreement
        total += 1 if J[j] > J[i] else -1
    return Fraction(2 * total, t * (t - 1))


def mean_logprob(lps):
    return math.fsum(lps) / len(lps)


def gain(J_t, J_0, literal=False):
    denom = max(abs(J_0), 1e-6)
    if literal:
        denom = -denom
    return max(-10.0, min(10.0, (J_t - J_0) / denom))


def trajectory_rewards(J0, Js, alpha, literal=False):
    """Step rewards for one trajectory, written out longhand."""
    qualities = []
    for t in range(1, len(Js) + 1):
        s_i = math.tanh(gain(Js[t - 1], J0, literal) + 1.0)
        s_c = float(kendall_pairs(Js[:t]))
        qualities.append((1 - alpha) * s_i + alpha * s_c)
    rewards = []
    prev = 0.0
    for q in qualities:
        rewards.append(q - prev)
        prev = q
    return qualities, rewards


def bottleneck(means, order):
    lowest = min(means[n] for n in order)
    return next(n for n in order if means[n] == lowest)


def strict_minimum_samples(rewards_by_sample, index, n):
    keep = []
    for sid, rewards in rewards_by_sample.items():
        mine = rewards[index]
        if all(mine < r for k, r in enumerate(rewards) if k != index):
            keep.append((mine, sid))
    return [sid for _, sid in sorted(keep)[:n]]
