"""Brute-force references and random instance generators used only by tests."""
import itertools

import numpy as np

from sorl.market import Impressions


def random_impressions(rng, n):
    v1 = rng.uniform(0.01, 1.0, n)
    v2 = rng.uniform(0.01, 1.0, n)
    p1 = rng.uniform(0.05, 20.0, n)
    p2 = rng.uniform(0.05, 20.0, n)
    return Impressions(v1, v2, v2.copy(), p1, p2, p2.copy())


def enumerate_won_set(a, imps, budget):
    """The unique won subset, found by checking every subset against the arrival-order rule.

    A subset W is consistent iff for every impression j (in list order):
    j in W  <=>  j passes both stages and the budget left after W's earlier members covers p_j.
    """
    n = len(imps)
    passes = [(a * imps.v1[j] >= imps.p1[j]) and (a * imps.v2[j] >= imps.p2[j]) for j in range(n)]
    found = []
    for bits in itertools.product([False, True], repeat=n):
        ok = True
        for j in range(n):
            spent_before = sum(imps.p[i] for i in range(j) if bits[i])
            should = passes[j] and (budget - spent_before >= imps.p[j])
            if bits[j] != should:
                ok = False
                break
        if ok:
            found.append(np.array(bits))
    assert len(found) == 1, "arrival-order semantics must define exactly one outcome"
    return found[0]


def best_integer_subset(values, prices, budget):
    """Exhaustive 0/1 knapsack optimum."""
    best = 0.0
    n = len(values)
    for bits in itertools.product([0, 1], repeat=n):
        b = np.array(bits, dtype=bool)
        if prices[b].sum() <= budget:
            best = max(best, float(values[b].sum()))
    return best
