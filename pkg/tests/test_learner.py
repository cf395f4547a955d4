"""Rule induction: recovery of planted predicates, stats, and cross-validation."""

import itertools
import random

import pytest

from rulefuzz.dataset import ABSENCE, PRESENCE, LabeledDataset
from rulefuzz.learner import (
    RipperParams,
    TooFewSamplesError,
    classify,
    cross_validate,
    learn,
    predict_mask,
)
from rulefuzz.rules import (
    Atom,
    Condition,
    DecisionRule,
    RuleSet,
    format_ruleset,
    parse_condition,
)
from rulefuzz.sampler import evaluate

from .conftest import make_schema

WIDE = make_schema({"a": 8, "b": 8, "c": 8})
PLANTED = parse_condition("a >= 200 AND b <= 40")


def draw(schema, rng):
    return {f.name: rng.randrange(f.raw_max + 1) for f in schema.fields}


def balanced_dataset(schema, cond, per_class, rng, flip=0.0):
    ds = LabeledDataset(tuple(f.name for f in schema.fields))
    need = {PRESENCE: per_class, ABSENCE: per_class}
    while any(v > 0 for v in need.values()):
        values = draw(schema, rng)
        label = PRESENCE if evaluate(cond, values) else ABSENCE
        if flip and rng.random() < flip:
            label = ABSENCE if label == PRESENCE else PRESENCE
        if need[label] > 0:
            need[label] -= 1
            ds.append(values, label)
    return ds


def holdout_metrics(ruleset, schema, cond, count, rng):
    tp = fp = fn = 0
    for _ in range(count):
        values = draw(schema, rng)
        truth = evaluate(cond, values)
        pred = classify(ruleset, values) == PRESENCE
        tp += pred and truth
        fp += pred and not truth
        fn += (not pred) and truth
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def test_recovers_planted_two_atom_predicate():
    rng = random.Random(101)
    ds = balanced_dataset(WIDE, PLANTED, 1000, rng)
    model = learn(ds)
    assert model.minority_rules, format_ruleset(model)
    precision, recall = holdout_metrics(model, WIDE, PLANTED, 5000, rng)
    assert precision >= 0.99
    assert recall >= 0.99


def test_exact_on_exhaustive_grid():
    # small enough to enumerate every point of the plane
    tiny = make_schema({"a": 4, "b": 4})
    cond = parse_condition("a >= 10 AND b <= 3")
    rng = random.Random(7)
    ds = balanced_dataset(tiny, cond, 300, rng)
    model = learn(ds)
    mismatches = [
        (a, b)
        for a, b in itertools.product(range(16), range(16))
        if (classify(model, {"a": a, "b": b}) == PRESENCE)
        != evaluate(cond, {"a": a, "b": b})
    ]
    assert mismatches == []


def test_rule_stats_recompute_from_dataset():
    rng = random.Random(31)
    ds = balanced_dataset(WIDE, PLANTED, 400, rng, flip=0.05)
    model = learn(ds)
    assert model.minority_rules
    minority = ds.minority_label()
    for rule in model.minority_rules:
        t = sum(1 for s in ds if evaluate(rule.condition, s.values))
        f = sum(
            1
            for s in ds
            if evaluate(rule.condition, s.values) and s.label != minority
        )
        assert (rule.t, rule.f) == (t, f)
        assert rule.confidence == (t - f) / t
    # default stats cover exactly the samples no minority rule matched
    uncovered = [
        s
        for s in ds
        if not any(evaluate(r.condition, s.values) for r in model.minority_rules)
    ]
    assert model.default_rule.t == len(uncovered)
    assert model.default_rule.f == sum(
        1 for s in uncovered if s.label == minority
    )


def test_single_class_and_tiny_datasets_degenerate():
    ds = LabeledDataset(("a", "b"))
    for i in range(50):
        ds.append({"a": i % 16, "b": (i * 3) % 16}, ABSENCE)
    model = learn(ds)
    assert model.minority_rules == ()
    assert model.default_rule.prediction == ABSENCE

    one = LabeledDataset(("a",))
    one.append({"a": 1}, PRESENCE)
    assert learn(one).minority_rules == ()

    assert learn(LabeledDataset(("a",))).minority_rules == ()


def test_classify_first_match_order():
    rules = (
        DecisionRule.build(parse_condition("a <= 5"), PRESENCE, 10, 0),
        DecisionRule.build(parse_condition("b >= 2"), PRESENCE, 8, 1),
    )
    rs = RuleSet(rules, DecisionRule.build(Condition(), ABSENCE, 20, 2))
    assert classify(rs, {"a": 3, "b": 9}) == PRESENCE
    assert classify(rs, {"a": 9, "b": 9}) == PRESENCE
    assert classify(rs, {"a": 9, "b": 0}) == ABSENCE


def test_predict_mask_matches_scalar_classify():
    rng = random.Random(55)
    ds = balanced_dataset(WIDE, PLANTED, 150, rng, flip=0.1)
    model = learn(ds)
    mask = predict_mask(model, ds)
    for i, sample in enumerate(ds):
        assert mask[i] == (classify(model, sample.values) == PRESENCE)


def test_minority_class_may_be_absence():
    # when absences are rarer the induced rules must predict absence
    rng = random.Random(77)
    ds = LabeledDataset(tuple(f.name for f in WIDE.fields))
    cond = parse_condition("c >= 128")
    added = {PRESENCE: 0, ABSENCE: 0}
    while added[ABSENCE] < 100 or added[PRESENCE] < 300:
        values = draw(WIDE, rng)
        label = ABSENCE if evaluate(cond, values) else PRESENCE
        if added[label] < (100 if label == ABSENCE else 300):
            added[label] += 1
            ds.append(values, label)
    model = learn(ds)
    assert ds.minority_label() == ABSENCE
    assert model.minority_rules
    assert all(r.prediction == ABSENCE for r in model.minority_rules)
    assert model.default_rule.prediction == PRESENCE


def test_cross_validate_separable_and_edge_cases():
    rng = random.Random(13)
    ds = balanced_dataset(WIDE, PLANTED, 300, rng)
    precision, recall = cross_validate(ds, k=10)
    assert precision >= 0.97
    assert recall >= 0.97

    empty_pos = LabeledDataset(("a",))
    for i in range(40):
        empty_pos.append({"a": i % 16}, ABSENCE)
    assert cross_validate(empty_pos, k=10) == (0.0, 0.0)

    small = LabeledDataset(("a",))
    for i in range(5):
        small.append({"a": i}, PRESENCE if i % 2 else ABSENCE)
    with pytest.raises(TooFewSamplesError):
        cross_validate(small, k=10)


def test_cross_validate_uninformative_labels_score_low():
    # labels independent of fields: precision should hover near the prior
    rng = random.Random(97)
    ds = LabeledDataset(tuple(f.name for f in WIDE.fields))
    for _ in range(400):
        ds.append(draw(WIDE, rng), PRESENCE if rng.random() < 0.5 else ABSENCE)
    precision, recall = cross_validate(ds, k=10)
    assert precision <= 0.65
    assert recall <= 0.65


def test_learning_is_deterministic():
    rng = random.Random(211)
    ds = balanced_dataset(WIDE, PLANTED, 400, rng, flip=0.05)
    a = format_ruleset(learn(ds, RipperParams(seed=5)))
    b = format_ruleset(learn(ds, RipperParams(seed=5)))
    assert a == b


def test_noise_keeps_ruleset_small():
    rng = random.Random(303)
    ds = balanced_dataset(WIDE, PLANTED, 800, rng, flip=0.05)
    model = learn(ds)
    assert 1 <= len(model.minority_rules) <= 6
    precision, recall = holdout_metrics(model, WIDE, PLANTED, 3000, rng)
    assert precision >= 0.90
    assert recall >= 0.90


def test_learned_atoms_use_interval_operators_only():
    rng = random.Random(404)
    ds = balanced_dataset(WIDE, PLANTED, 400, rng)
    model = learn(ds)
    for rule in model.minority_rules:
        for atom in rule.condition.atoms:
            assert atom.op in ("<=", ">=")
            assert isinstance(atom, Atom)
