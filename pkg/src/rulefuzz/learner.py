"""Interpretable failure-model induction: a RIPPER-style rule learner.

Rules are grown for the minority class one at a time on a grow split
(atoms chosen by FOIL information gain), pruned on a prune split (metric
(p - n) / (p + n) over deletable suffixes), and accepted until a minimum
description length criterion says the rule set stopped paying for itself.
Accepted rule sets then go through optimization passes that reconsider
each rule against a freshly grown replacement and revision, again decided
by description length.  The learner only ever emits <= / >= atoms; the
split value sits between two observed adjacent values, snapped to the
integer on the covered side.

Everything is deterministic under a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import ABSENCE, PRESENCE, LabeledDataset
from .rules import Atom, Condition, DecisionRule, RuleSet
from . import sampler

_GAIN_EPS = 1e-12
_DL_EPS = 1e-9


class TooFewSamplesError(Exception):
    """Not enough samples for the requested operation."""


@dataclass(frozen=True)
class RipperParams:
    """Induction knobs; the defaults are the standard ones."""

    grow_fraction: float = 2 / 3
    optimization_passes: int = 2
    min_rule_coverage: int = 2
    mdl_slack: float = 64.0
    seed: int = 0


# An internal atom is (field_index, op, threshold) with op in {"<=", ">="}.
_IAtom = tuple[int, str, int]


def _atom_mask(atom: _IAtom, x: np.ndarray) -> np.ndarray:
    idx, op, thr = atom
    col = x[:, idx]
    return col <= np.uint64(thr) if op == "<=" else col >= np.uint64(thr)


def _rule_mask(atoms: Sequence[_IAtom], x: np.ndarray) -> np.ndarray:
    mask = np.ones(len(x), dtype=bool)
    for atom in atoms:
        mask &= _atom_mask(atom, x)
    return mask


def _union_mask(rules: Sequence[Sequence[_IAtom]], x: np.ndarray) -> np.ndarray:
    mask = np.zeros(len(x), dtype=bool)
    for atoms in rules:
        mask |= _rule_mask(atoms, x)
    return mask


# ---------------------------------------------------------------------------
# Growing
# ---------------------------------------------------------------------------

def _best_atom(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> tuple[float, _IAtom] | None:
    """Highest-FOIL-gain threshold atom over the currently covered samples."""
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return None
    yy = y[idx]
    pos = int(yy.sum())
    neg = idx.size - pos
    if pos == 0:
        return None
    base = math.log2(pos / (pos + neg))
    best: tuple[float, _IAtom] | None = None
    for f in range(x.shape[1]):
        v = x[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = yy[order]
        change = np.nonzero(vs[1:] != vs[:-1])[0]
        if change.size == 0:
            continue
        cp = np.cumsum(ys)
        cn = np.cumsum(~ys)
        for op, p_arr, n_arr, thr_arr in (
            ("<=", cp[change], cn[change], vs[change]),
            (">=", cp[-1] - cp[change], cn[-1] - cn[change], vs[change + 1]),
        ):
            p = p_arr.astype(np.float64)
            n = n_arr.astype(np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = p * (np.log2(p / (p + n)) - base)
            gains = np.where(p > 0, gains, -np.inf)
            j = int(np.argmax(gains))
            g = float(gains[j])
            if g > _GAIN_EPS and (best is None or g > best[0]):
                best = (g, (f, op, int(thr_arr[j])))
    return best


def _grow(
    x: np.ndarray,
    y: np.ndarray,
    base_atoms: Sequence[_IAtom] = (),
) -> list[_IAtom]:
    """Add highest-gain atoms until no negatives are covered or gain dries up."""
    atoms = list(base_atoms)
    mask = _rule_mask(atoms, x)
    limit = 2 * x.shape[1] + len(atoms)
    while len(atoms) < limit:
        covered_y = y[mask]
        if covered_y.size == 0 or not (~covered_y).any():
            break
        found = _best_atom(x, y, mask)
        if found is None:
            break
        _, atom = found
        atoms.append(atom)
        mask &= _atom_mask(atom, x)
    return atoms


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

def _prefix_stats(atoms: Sequence[_IAtom], x: np.ndarray, y: np.ndarray):
    """Yield (j, p, n) for every prefix length j in 1..len(atoms)."""
    mask = np.ones(len(x), dtype=bool)
    for j, atom in enumerate(atoms, start=1):
        mask &= _atom_mask(atom, x)
        p = int(y[mask].sum())
        n = int(mask.sum()) - p
        yield j, p, n


def _prune(atoms: list[_IAtom], x: np.ndarray, y: np.ndarray) -> list[_IAtom]:
    """Keep the prefix maximizing (p - n) / (p + n) on the prune split."""
    if not atoms or len(x) == 0:
        return atoms
    best_j, best_v = None, -math.inf
    for j, p, n in _prefix_stats(atoms, x, y):
        v = (p - n) / (p + n) if p + n else 0.0
        if v > best_v + _DL_EPS:
            best_j, best_v = j, v
    return atoms[: best_j or len(atoms)]


def _prune_by_error(atoms: list[_IAtom], x: np.ndarray, y: np.ndarray) -> list[_IAtom]:
    """Optimization-phase pruning: minimize fp + fn of the candidate alone."""
    if not atoms or len(x) == 0:
        return atoms
    total_pos = int(y.sum())
    best_j, best_err = None, math.inf
    for j, p, n in _prefix_stats(atoms, x, y):
        err = n + (total_pos - p)
        if err < best_err - _DL_EPS:
            best_j, best_err = j, err
    return atoms[: best_j or len(atoms)]


# ---------------------------------------------------------------------------
# Description length
# ---------------------------------------------------------------------------

def _subset_dl(t: float, k: float, p: float) -> float:
    if t <= 0:
        return 0.0
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return -k * math.log2(p) - (t - k) * math.log2(1.0 - p)


def _data_dl(exp_fp: float, cover: int, uncover: int, fp: int, fn: int) -> float:
    total = math.log2(cover + uncover + 1)
    if cover >= uncover:
        exp_err = exp_fp * (fp + fn)
        c = _subset_dl(cover, fp, exp_err / cover) if cover else 0.0
        u = _subset_dl(uncover, fn, fn / uncover) if uncover else 0.0
    else:
        exp_err = (1.0 - exp_fp) * (fp + fn)
        c = _subset_dl(cover, fp, fp / cover) if cover else 0.0
        u = _subset_dl(uncover, fn, exp_err / uncover) if uncover else 0.0
    return total + c + u


def _theory_dl(n_atoms: int, n_possible: int) -> float:
    if n_atoms == 0:
        return 0.0
    tdl = math.log2(n_atoms)
    if n_atoms > 1:
        tdl += 2.0 * math.log2(max(tdl, 1.0))
    tdl += n_atoms * math.log2(max(n_possible, 2))
    return 0.5 * tdl  # halved for redundancy among candidate atoms


def _ruleset_dl(
    rules: Sequence[Sequence[_IAtom]],
    x: np.ndarray,
    y: np.ndarray,
    n_possible: int,
    exp_fp: float,
) -> float:
    union = _union_mask(rules, x)
    cover = int(union.sum())
    uncover = len(x) - cover
    fp = int((union & ~y).sum())
    fn = int((~union & y).sum())
    theory = sum(_theory_dl(len(atoms), n_possible) for atoms in rules)
    return theory + _data_dl(exp_fp, cover, uncover, fp, fn)


# ---------------------------------------------------------------------------
# Induction loop
# ---------------------------------------------------------------------------

def _stratified_split(
    indices: np.ndarray, y: np.ndarray, frac: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    grow_parts, prune_parts = [], []
    for cls_mask in (y[indices], ~y[indices]):
        cls_idx = rng.permutation(indices[cls_mask])
        cut = int(round(frac * cls_idx.size))
        grow_parts.append(cls_idx[:cut])
        prune_parts.append(cls_idx[cut:])
    return np.concatenate(grow_parts), np.concatenate(prune_parts)


def _induce(
    x: np.ndarray,
    y: np.ndarray,
    params: RipperParams,
    rng: np.random.Generator,
    n_possible: int,
    exp_fp: float,
    rules: list[list[_IAtom]] | None = None,
) -> list[list[_IAtom]]:
    rules = list(rules or [])
    covered = _union_mask(rules, x)
    dl_min = _ruleset_dl(rules, x, y, n_possible, exp_fp)
    while True:
        rem = np.nonzero(~covered)[0]
        if rem.size == 0 or not y[rem].any():
            break
        grow_idx, prune_idx = _stratified_split(rem, y, params.grow_fraction, rng)
        atoms = _grow(x[grow_idx], y[grow_idx])
        if not atoms:
            break
        if prune_idx.size:
            atoms = _prune(atoms, x[prune_idx], y[prune_idx])
        rem_mask = _rule_mask(atoms, x[rem])
        t_cov = int(rem_mask.sum())
        p_cov = int(y[rem][rem_mask].sum())
        if t_cov < params.min_rule_coverage or p_cov == 0:
            break
        if p_cov / t_cov <= 0.5:
            break
        dl = _ruleset_dl(rules + [atoms], x, y, n_possible, exp_fp)
        if dl > dl_min + params.mdl_slack:
            break
        dl_min = min(dl_min, dl)
        rules.append(atoms)
        covered |= _rule_mask(atoms, x)
    return rules


def _optimize(
    rules: list[list[_IAtom]],
    x: np.ndarray,
    y: np.ndarray,
    params: RipperParams,
    rng: np.random.Generator,
    n_possible: int,
    exp_fp: float,
) -> list[list[_IAtom]]:
    for _ in range(params.optimization_passes):
        for i in range(len(rules)):
            others = rules[:i] + rules[i + 1 :]
            ctx = np.nonzero(~_union_mask(others, x))[0]
            if ctx.size == 0 or not y[ctx].any():
                continue
            grow_idx, prune_idx = _stratified_split(ctx, y, params.grow_fraction, rng)
            candidates = []
            replacement = _grow(x[grow_idx], y[grow_idx])
            if replacement and prune_idx.size:
                replacement = _prune_by_error(replacement, x[prune_idx], y[prune_idx])
            if replacement:
                candidates.append(replacement)
            revision = _grow(x[grow_idx], y[grow_idx], base_atoms=rules[i])
            if revision and prune_idx.size:
                revision = _prune_by_error(revision, x[prune_idx], y[prune_idx])
            if revision:
                candidates.append(revision)
            best, best_dl = rules[i], _ruleset_dl(rules, x, y, n_possible, exp_fp)
            for cand in candidates:
                trial = rules[:i] + [cand] + rules[i + 1 :]
                dl = _ruleset_dl(trial, x, y, n_possible, exp_fp)
                if dl < best_dl - _DL_EPS:
                    best, best_dl = cand, dl
            rules[i] = best
        rules = _induce(x, y, params, rng, n_possible, exp_fp, rules=rules)
    # Drop rules whose removal shortens the description.
    changed = True
    while changed and rules:
        changed = False
        current_dl = _ruleset_dl(rules, x, y, n_possible, exp_fp)
        for i in range(len(rules) - 1, -1, -1):
            trial = rules[:i] + rules[i + 1 :]
            if _ruleset_dl(trial, x, y, n_possible, exp_fp) < current_dl - _DL_EPS:
                rules = trial
                changed = True
                break
    return rules


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------

def learn(dataset: LabeledDataset, params: RipperParams | None = None) -> RuleSet:
    """Induce an ordered rule set for the dataset's minority class.

    Each returned rule carries (t, f, confidence) computed over the whole
    dataset.  A dataset with fewer than two samples, a single class, or no
    learnable structure yields a degenerate rule set (default rule only).
    """
    params = params or RipperParams()
    n = len(dataset)
    counts = dataset.class_counts()
    minority = dataset.minority_label()
    majority = ABSENCE if minority == PRESENCE else PRESENCE

    def degenerate() -> RuleSet:
        default = DecisionRule.build(Condition(), majority, t=n, f=counts[minority])
        return RuleSet((), default)

    if n < 2 or counts[minority] == 0 or counts[majority] == 0:
        return degenerate()

    x, y_presence = dataset.to_arrays()
    y = y_presence if minority == PRESENCE else ~y_presence
    rng = np.random.default_rng(params.seed)
    n_possible = sum(
        2 * len(np.unique(x[:, f])) for f in range(x.shape[1])
    )
    exp_fp = counts[minority] / n
    rules = _induce(x, y, params, rng, n_possible, exp_fp)
    if rules:
        rules = _optimize(rules, x, y, params, rng, n_possible, exp_fp)
    if not rules:
        return degenerate()

    names = dataset.field_names
    minority_rules = []
    union = np.zeros(n, dtype=bool)
    for atoms in rules:
        cond = Condition(tuple(Atom(names[f], op, thr) for f, op, thr in atoms))
        mask = _rule_mask(atoms, x)
        t = int(mask.sum())
        f_count = int((mask & ~y).sum())
        minority_rules.append(DecisionRule.build(cond, minority, t, f_count))
        union |= mask
    t_def = int((~union).sum())
    f_def = int((~union & y).sum())
    default = DecisionRule.build(Condition(), majority, t_def, f_def)
    return RuleSet(tuple(minority_rules), default)


def classify(ruleset: RuleSet, values: Mapping[str, int]) -> str:
    """First matching minority rule wins; otherwise the default fires."""
    for rule in ruleset.minority_rules:
        if sampler.evaluate(rule.condition, values):
            return rule.prediction
    return ruleset.default_rule.prediction


def _condition_mask(cond: Condition, x: np.ndarray, index: Mapping[str, int]) -> np.ndarray:
    mask = np.ones(len(x), dtype=bool)
    for atom in cond.atoms:
        try:
            col = x[:, index[atom.field]]
        except KeyError:
            raise sampler.MissingFieldError(f"values lack field {atom.field!r}") from None
        thr = np.uint64(atom.value) if atom.value >= 0 else atom.value
        if atom.op == "=":
            mask &= col == thr
        elif atom.op == "!=":
            mask &= col != thr
        elif atom.op == "<=":
            mask &= col <= thr
        elif atom.op == ">=":
            mask &= col >= thr
        elif atom.op == "<":
            mask &= col < thr
        else:
            mask &= col > thr
    return mask


def predict_mask(ruleset: RuleSet, dataset: LabeledDataset) -> np.ndarray:
    """Vectorized first-match classification; True means presence."""
    x, _ = dataset.to_arrays()
    index = {name: i for i, name in enumerate(dataset.field_names)}
    pred = np.full(len(dataset), ruleset.default_rule.prediction == PRESENCE)
    assigned = np.zeros(len(dataset), dtype=bool)
    for rule in ruleset.minority_rules:
        m = _condition_mask(rule.condition, x, index) & ~assigned
        pred[m] = rule.prediction == PRESENCE
        assigned |= m
    return pred


def cross_validate(
    dataset: LabeledDataset,
    k: int = 10,
    params: RipperParams | None = None,
    seed: int | None = None,
) -> tuple[float, float]:
    """Stratified k-fold precision and recall, presence as positive class.

    Counts are pooled across folds before computing the ratios; an empty
    denominator yields 0.0 for that metric.
    """
    params = params or RipperParams()
    if len(dataset) < k:
        raise TooFewSamplesError(f"need at least {k} samples, got {len(dataset)}")
    base_seed = params.seed if seed is None else seed
    rng = np.random.default_rng(base_seed)
    _, y = dataset.to_arrays()
    pos_idx = rng.permutation(np.nonzero(y)[0])
    neg_idx = rng.permutation(np.nonzero(~y)[0])
    tp = fp = fn = 0
    for fold in range(k):
        test_idx = np.concatenate((pos_idx[fold::k], neg_idx[fold::k]))
        if test_idx.size == 0:
            continue
        test_set = set(test_idx.tolist())
        train_idx = [i for i in range(len(dataset)) if i not in test_set]
        fold_params = replace(params, seed=(base_seed * 1000003 + fold) % (2**63))
        model = learn(dataset.subset(train_idx), fold_params)
        test_ds = dataset.subset(test_idx.tolist())
        pred = predict_mask(model, test_ds)
        _, y_test = test_ds.to_arrays()
        tp += int((pred & y_test).sum())
        fp += int((pred & ~y_test).sum())
        fn += int((~pred & y_test).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall
