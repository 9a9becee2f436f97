"""Brute-force reference implementations used as independent test oracles.

Everything here loops over plain Python lists and item ids instead of the
package's padded slot arrays, so an indexing slip in the vectorized code
cannot hide behind the same slip here.
"""

from __future__ import annotations

from collections import defaultdict


def _sets(feasible):
    return feasible.to_lists()


def value(env, pi) -> float:
    """V(pi) = sum_x P(x) sum_a1 pi1 sum_a2 pi2 q."""
    sets = _sets(env.feasible)
    total = 0.0
    for x, row in enumerate(sets):
        for a1, items in enumerate(row):
            for j, _item in enumerate(items):
                total += (env.context_prob[x] * pi.stage1[x][a1] * pi.stage2[x][a1][j]
                          * env.true_reward[x][a1][j])
    return total


def burden(env, pi, floor: float = 0.0) -> float:
    """sum_x P(x) sum pi1^2 pi2^2 / max(mu1 mu2, floor); infinite off support without a floor."""
    sets = _sets(env.feasible)
    b = env.behavior
    total = 0.0
    for x, row in enumerate(sets):
        for a1, items in enumerate(row):
            for j, _item in enumerate(items):
                num = (pi.stage1[x][a1] * pi.stage2[x][a1][j]) ** 2
                den = b.stage1[x][a1] * b.stage2[x][a1][j]
                if den <= 0:
                    if num == 0:
                        continue
                    if floor <= 0:
                        return float("inf")
                den = max(den, floor)
                total += env.context_prob[x] * num / den
    return total


def second_moment(env, pi) -> float:
    """E_mu[w^2] written as an expectation: sum P mu1 mu2 (pi1 pi2 / (mu1 mu2))^2."""
    sets = _sets(env.feasible)
    b = env.behavior
    total = 0.0
    for x, row in enumerate(sets):
        for a1, items in enumerate(row):
            for j, _item in enumerate(items):
                mu = b.stage1[x][a1] * b.stage2[x][a1][j]
                if mu == 0:
                    continue
                w = pi.stage1[x][a1] * pi.stage2[x][a1][j] / mu
                total += env.context_prob[x] * mu * w * w
    return total


def ips(records, pi) -> float:
    """records: iterable of (x, a1, slot, y, mu1, mu2)."""
    s, n = 0.0, 0
    for x, a1, j, y, m1, m2 in records:
        s += pi.stage1[x][a1] * pi.stage2[x][a1][j] / (m1 * m2) * y
        n += 1
    return s / n


def dr(records, pi, qhat_rows, sizes) -> float:
    """Mean of m_qhat + w (y - qhat) with per-record qhat tables ``qhat_rows[i][a1][j]``."""
    s, n = 0.0, 0
    for i, (x, a1, j, y, m1, m2) in enumerate(records):
        q = qhat_rows[i]
        model = 0.0
        for g in range(len(sizes[x])):
            for k in range(sizes[x][g]):
                model += pi.stage1[x][g] * pi.stage2[x][g][k] * q[g][k]
        w = pi.stage1[x][a1] * pi.stage2[x][a1][j] / (m1 * m2)
        s += model + w * (y - q[a1][j])
        n += 1
    return s / n


def ess(weights) -> float:
    s = sum(weights)
    s2 = sum(w * w for w in weights)
    return s * s / s2


def item_reward_means(ys_by_item: dict, smoothing: float, prior: float) -> dict:
    return {it: (sum(ys) + smoothing * prior) / (len(ys) + smoothing) for it, ys in ys_by_item.items()}


def triple_reward_table(records, smoothing: float):
    """Smoothed mean reward per (x, a1, slot) over ``records``; prior is the overall mean."""
    ys = defaultdict(list)
    allys = []
    for x, a1, j, y, *_ in records:
        ys[(x, a1, j)].append(y)
        allys.append(y)
    prior = sum(allys) / len(allys)
    return {k: (sum(v) + smoothing * prior) / (len(v) + smoothing) for k, v in ys.items()}, prior


def strict_prefix(users, stamps):
    """For each event, the number of same-user events with a strictly smaller timestamp (quadratic)."""
    out = []
    for u, t in zip(users, stamps):
        out.append(sum(1 for u2, t2 in zip(users, stamps) if u2 == u and t2 < t))
    return out


def casp_pick(ids, values, burdens, lam):
    """Highest v - lam b, then lower b, then smaller id, by sorting tuples."""
    rows = sorted(zip(ids, values, burdens), key=lambda r: (-(r[1] - lam * r[2]), r[2], r[0]))
    return rows[0][0]


def records_of(data):
    """Plain tuples (x, a1, slot, y, mu1, mu2) for the oracles."""
    return [
        (int(x), int(a), int(j), float(y), float(m1), float(m2))
        for x, a, j, y, m1, m2 in zip(data.context, data.a1, data.slot, data.y, data.mu1, data.mu2)
    ]
