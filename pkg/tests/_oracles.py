"""Independent reference computations for constraint-chain behavior.

The claim under test: whatever subset of chain operations runs, in
whatever order, with whatever repetition, the final stage global is 0.
These helpers check that claim by brute force rather than by the
algebraic argument the implementation relies on, so a bug in either
place shows up as a disagreement.
"""

import itertools

import numpy as np

WORD = 0xFFFFFFFF


def chain_final(masks, value, schedule):
    """Replay one schedule with plain dict cells and return the last
    global's value.  Op 0 is the siphon store, op i is stage i."""
    cells = {i: 0 for i in range(len(masks) + 1)}
    for op in schedule:
        if op == 0:
            cells[0] = value & WORD
        else:
            cells[op] = cells[op - 1] & masks[op - 1]
    return cells[len(masks)]


def chain_outcomes_exhaustive(masks, value):
    """Final values over every subset and every order of distinct ops.

    Feasible up to k=3 or so: (k+2)! schedules in the worst case.  A
    prefix of any schedule is itself a schedule, so this also covers a
    reader that samples the final global mid-run.
    """
    ops = range(len(masks) + 1)
    seen = set()
    for r in range(len(masks) + 2):
        for subset in itertools.combinations(ops, r):
            for order in itertools.permutations(subset):
                seen.add(chain_final(masks, value, order))
    return seen


def chain_outcomes_sampled(masks, values, rng, schedules=200, max_len=12):
    """Random schedules with repetition, vectorized across many input
    values at once.  Returns every distinct final value observed."""
    values = np.asarray(values, dtype=np.uint64)
    k = len(masks)
    finals = set()
    for _ in range(schedules):
        length = rng.randrange(0, max_len + 1)
        schedule = [rng.randrange(0, k + 1) for _ in range(length)]
        cells = [np.zeros_like(values) for _ in range(k + 1)]
        for op in schedule:
            if op == 0:
                cells[0] = values & np.uint64(WORD)
            else:
                cells[op] = cells[op - 1] & np.uint64(masks[op - 1])
        finals.update(int(v) for v in np.unique(cells[k]))
    return finals
