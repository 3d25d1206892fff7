"""Direct pure-Python evaluations used as independent references.

These loop over pairs with ``math`` only and share no code with the
torch implementations they check.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence


def _cos(a: Sequence[float], b: Sequence[float]) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(math.fsum(x * x for x in a)) * math.sqrt(math.fsum(y * y for y in b)))


def contrastive_direct(zx, zm, tau: float, threshold: float = 1e-12) -> float:
    n = len(zx)
    sx = [[_cos(zx[i], zx[j]) for j in range(n)] for i in range(n)]
    sm = [[_cos(zm[i], zm[j]) for j in range(n)] for i in range(n)]
    pair_sm = [sm[i][j] for i in range(n) for j in range(i + 1, n)]
    lo, hi = min(pair_sm), max(pair_sm)
    if hi - lo < threshold:
        return 0.0
    terms = []
    for i in range(n):
        denom = math.fsum(math.exp(sx[i][k] / tau) for k in range(n) if k != i)
        for j in range(i + 1, n):
            s_hat = (sm[i][j] - lo) / (hi - lo)
            terms.append(s_hat * (sx[i][j] / tau - math.log(denom)))
    return -math.fsum(terms) / (n * (n - 1))


def median_direct(values: Sequence[float]) -> float:
    v = sorted(values)
    m = len(v)
    return v[m // 2] if m % 2 else 0.5 * (v[m // 2 - 1] + v[m // 2])


def lipschitz_task_direct(z, y) -> float:
    ratios = []
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            dist = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(z[i], z[j])))
            ratios.append(abs(y[i] - y[j]) / dist)
    med = median_direct(ratios)
    return math.fsum(max(0.0, r - med) for r in ratios)


def lipschitz_direct(groups: Mapping[str, tuple], sizes: Mapping[str, int]) -> float:
    total = sum(sizes.values())
    return math.fsum(total / sizes[t] * lipschitz_task_direct(z, y) for t, (z, y) in groups.items())
