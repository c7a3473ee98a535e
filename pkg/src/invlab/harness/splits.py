"""Repeated stratified k-fold plans with a validation carve-out."""

from dataclasses import dataclass

import numpy as np

TRAIN, VAL, TEST = 0, 1, 2


@dataclass
class SplitPlan:
    rep: int
    fold: int
    assignment: np.ndarray  # per-trial code: TRAIN, VAL or TEST

    def indices(self, kind):
        return np.flatnonzero(self.assignment == kind)

    @property
    def train(self):
        return self.indices(TRAIN)

    @property
    def val(self):
        return self.indices(VAL)

    @property
    def test(self):
        return self.indices(TEST)


def largest_remainder(quotas, total):
    """Integer allocation with sum ``total`` closest to real ``quotas``."""
    quotas = np.asarray(quotas, dtype=float)
    base = np.floor(quotas).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:rest]] += 1
    return base


def make_splits(conditions, reps=10, folds=5, val_fraction=0.10, seed=0):
    """Plans for ``reps`` x ``folds`` cross-validation stratified by condition code.

    Within a rep, each stratum is shuffled and cut into ``folds`` disjoint
    test blocks. For each fold a validation subset of
    ``val_fraction`` of the whole stratum (largest-remainder rounding across
    strata) is drawn from the non-test trials; the rest is training data.
    """
    conditions = np.asarray(conditions)
    strata = np.unique(conditions)
    members = {c: np.flatnonzero(conditions == c) for c in strata}
    for c in strata:
        if len(members[c]) < 2 * folds:
            raise ValueError(f"condition {int(c)} has {len(members[c])} trials; "
                             f"need at least {2 * folds}")
    n = len(conditions)
    sizes = [len(members[c]) for c in strata]
    val_counts = largest_remainder([s * val_fraction for s in sizes], round(n * val_fraction))

    plans = []
    for rep in range(reps):
        rng = np.random.default_rng(seed * 1000 + rep)
        blocks = {c: np.array_split(rng.permutation(members[c]), folds) for c in strata}
        for fold in range(folds):
            assignment = np.full(n, TRAIN, dtype=np.int8)
            for c, n_val in zip(strata, val_counts):
                test = blocks[c][fold]
                rest = np.concatenate([b for i, b in enumerate(blocks[c]) if i != fold])
                assignment[test] = TEST
                assignment[rng.permutation(rest)[:n_val]] = VAL
            plans.append(SplitPlan(rep, fold, assignment))
    return plans


def check_plans(plans, conditions, folds=None):
    """Raise ValueError if any rep's test folds fail to partition the data."""
    conditions = np.asarray(conditions)
    by_rep = {}
    for p in plans:
        by_rep.setdefault(p.rep, []).append(p)
    strata = np.unique(conditions)
    for rep, group in by_rep.items():
        if folds is not None and len(group) != folds:
            raise ValueError(f"rep {rep}: {len(group)} folds, expected {folds}")
        covered = np.zeros(len(conditions), dtype=int)
        for p in group:
            covered[p.test] += 1
            for c in strata:
                in_c = conditions == c
                n_test = np.sum(p.assignment[in_c] == TEST)
                target = in_c.sum() / len(group)
                if abs(n_test - target) >= 1:
                    raise ValueError(f"rep {rep} fold {p.fold}: condition {int(c)} "
                                     f"has {n_test} test trials, expected ~{target:g}")
        if not np.all(covered == 1):
            raise ValueError(f"rep {rep}: test folds do not partition the trials")
    return True
