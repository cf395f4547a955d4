"""Campaign orchestration: the fuzz, learn, plan loop end to end.

A campaign repeatedly drives scripted sessions against the simulated
system under test through the intercept proxy.  Iteration one replaces
random field subsets; every later iteration (in guided mode) spends a
planned per-rule budget so that the growing dataset stays balanced and
the rule model sharpens.  All randomness is pre-drawn into per-run fuzz
plans before any session starts, which makes results byte-identical for
a given seed regardless of worker count or scheduling.

Outputs under the campaign directory:
  dataset.csv           every labeled sample, appended per iteration
  rulesets/iter_NNN.txt rule set learned after each iteration
  plans/iter_NNN.json   the fuzz plans executed in each iteration
  ruleset.txt           final rule set (with a message-type header)
  report.json           deterministic campaign summary, no wall-clock data
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random

from .codec import (
    ControlMessage,
    MessageSchema,
    SchemaRegistry,
    builtin_registry,
    decode_as,
    encode,
)
from .dataset import PRESENCE, LabeledDataset
from .fuzzer import (
    MODE_GUIDED,
    MODE_INITIAL,
    FuzzAction,
    FuzzPlan,
    apply_plan,
    make_guided_plan,
    make_initial_plan,
    select_budget_entry,
)
from .learner import RipperParams, learn
from .planner import BudgetClock, plan, progress, should_stop
from .proxy import InterceptConfig, InterceptProxy
from .rules import RuleSet, format_ruleset, parse_ruleset
from .sampler import UnsatisfiableError, solve
from .sut import (
    FailureOracle,
    MockController,
    SutUnavailableError,
    build_procedure,
    connect_sut,
    default_oracle,
    observe_label,
    run_procedure_on,
)

log = logging.getLogger(__name__)

MODES = ("guided", "random", "schema_random")

_TYPE_HEADER = "# message_type: "


class PersistenceFailureError(Exception):
    """A campaign artifact could not be written."""


@dataclass(frozen=True)
class CampaignConfig:
    out_dir: Path
    mode: str = "guided"
    message_type: str = "packet_in"
    procedure: str = "ping_exchange"
    n: int = 200
    iterations: int | None = 10
    mutation_rate: float | None = None  # None: 1 / field count
    budget_seconds: float | None = None
    seed: int = 0
    workers: int = 4
    cv_folds: int = 10
    precision_target: float | None = None
    recall_target: float | None = None
    plateau_window: int = 3
    plateau_epsilon: float = 0.01
    step_timeout: float = 10.0
    max_retries: int = 3
    oracle: FailureOracle | None = None  # None: packaged default
    registry: SchemaRegistry | None = None  # None: builtin schemas

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration campaign facts, all deterministic for a given seed."""

    iteration: int
    fuzz_mode: str
    rows: int
    presence: int
    absence: int
    cumulative_presence: int
    cumulative_absence: int
    precision: float
    recall: float
    rule_count: int
    clamp: str | None

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "fuzz_mode": self.fuzz_mode,
            "rows": self.rows,
            "presence": self.presence,
            "absence": self.absence,
            "cumulative_presence": self.cumulative_presence,
            "cumulative_absence": self.cumulative_absence,
            "precision": self.precision,
            "recall": self.recall,
            "rule_count": self.rule_count,
            "clamp": self.clamp,
        }


@dataclass
class CampaignReport:
    out_dir: Path
    dataset: LabeledDataset
    ruleset: RuleSet
    iterations: list[IterationRecord]
    history: list[tuple[float, float]]
    stop_reason: str


class PlannedHook:
    """Proxy hook that rewrites the sniffed target frame per one plan."""

    def __init__(self, fuzz_plan: FuzzPlan, schema: MessageSchema):
        self.fuzz_plan = fuzz_plan
        self.schema = schema
        self.action: FuzzAction | None = None

    def __call__(self, frame: bytes) -> bytes:
        msg = decode_as(frame, self.schema)
        after, action = apply_plan(msg, self.fuzz_plan)
        self.action = action
        return encode(after)


# ---------------------------------------------------------------------------
# Plan construction
# ---------------------------------------------------------------------------

def _plan_rng(seed: int, iteration: int, index: int) -> Random:
    return Random(f"{seed}/plan/{iteration}/{index}")


def build_iteration_plans(
    config: CampaignConfig,
    schema: MessageSchema,
    dataset: LabeledDataset,
    ruleset: RuleSet | None,
    iteration: int,
    mutation_rate: float,
) -> tuple[list[FuzzPlan], str, str | None]:
    """Pre-draw the n fuzz plans for one iteration.

    Returns (plans, fuzz mode used, clamp marker of the budget estimate).
    Guided mode needs a usable rule set from the previous iteration;
    otherwise the iteration falls back to random field replacement, drawn
    from declared domains except in the protocol-blind "random" mode.
    """
    guided = (
        config.mode == "guided"
        and iteration > 1
        and ruleset is not None
        and not ruleset.is_degenerate
    )
    if not guided:
        valid_only = config.mode != "random"
        plans = [
            make_initial_plan(schema, _plan_rng(config.seed, iteration, j), valid_only)
            for j in range(config.n)
        ]
        return plans, MODE_INITIAL, None

    iter_plan = plan(dataset, ruleset, config.n)
    budget = iter_plan.budget
    budget_rng = Random(f"{config.seed}/budget/{iteration}")
    avoid = ruleset.minority_conditions()
    plans: list[FuzzPlan] = []
    for j in range(config.n):
        rng = _plan_rng(config.seed, iteration, j)
        if budget.is_empty:
            plans.append(make_initial_plan(schema, rng, True))
            continue
        rule, budget = select_budget_entry(budget, budget_rng)
        try:
            plans.append(make_guided_plan(schema, rule, mutation_rate, rng, avoid=avoid))
        except UnsatisfiableError:
            # the rule describes an empty region; release its quota
            budget = budget.without_rule(rule)
            log.warning(
                "iteration %d: rule %s is unsatisfiable, quota released",
                iteration, rule.condition,
            )
            plans.append(make_initial_plan(schema, rng, True))
    return plans, MODE_GUIDED, iter_plan.clamp


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _run_one(
    proxy: InterceptProxy,
    procedure,
    registry: SchemaRegistry,
    oracle: FailureOracle,
    schema: MessageSchema,
    fuzz_plan: FuzzPlan,
    config: CampaignConfig,
    iteration: int,
    index: int,
) -> tuple[int, FuzzAction, str]:
    last = "no attempt made"
    for _ in range(config.max_retries):
        hook = PlannedHook(fuzz_plan, schema)
        try:
            # reserve() pairs the hook with this connection; keep the
            # critical section to the handshake only
            with proxy.reserve(hook) as endpoint:
                sock = connect_sut(endpoint, timeout=config.step_timeout)
        except SutUnavailableError as exc:
            last = str(exc)
            continue
        outcome = run_procedure_on(sock, procedure, registry, oracle=oracle)
        if hook.action is None:
            last = f"target frame never intercepted (error={outcome.error})"
            continue
        if outcome.error is not None:
            last = outcome.error
            continue
        label_rng = Random(f"{config.seed}/noise/{iteration}/{index}")
        label = observe_label(outcome, oracle.noise_rate, label_rng)
        return index, hook.action, label
    raise SutUnavailableError(
        f"iteration {iteration} run {index} failed "
        f"{config.max_retries} times; last: {last}"
    )


def _execute_iteration(
    proxy: InterceptProxy,
    procedure,
    registry: SchemaRegistry,
    oracle: FailureOracle,
    schema: MessageSchema,
    plans: list[FuzzPlan],
    config: CampaignConfig,
    iteration: int,
) -> list[tuple[int, FuzzAction, str]]:
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            pool.submit(
                _run_one, proxy, procedure, registry, oracle, schema,
                fuzz_plan, config, iteration, j,
            )
            for j, fuzz_plan in enumerate(plans)
        ]
        results = [f.result() for f in futures]
    results.sort(key=lambda r: r[0])
    return results


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _plan_entry(index: int, fuzz_plan: FuzzPlan) -> dict:
    if fuzz_plan.rule is None:
        rule_text = None
    else:
        rule_text = str(fuzz_plan.rule.condition) or "<default>"
    return {
        "index": index,
        "mode": fuzz_plan.mode,
        "rule": rule_text,
        "replacements": dict(sorted(fuzz_plan.replacements.items())),
        "mutations": dict(sorted(fuzz_plan.mutations.items())),
    }


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise PersistenceFailureError(f"cannot write {path}: {exc}") from exc


def _write_json(path: Path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _ruleset_text(ruleset: RuleSet, message_type: str) -> str:
    return _TYPE_HEADER + message_type + "\n" + format_ruleset(ruleset)


# ---------------------------------------------------------------------------
# The campaign loop
# ---------------------------------------------------------------------------

def run_campaign(config: CampaignConfig) -> CampaignReport:
    registry = config.registry or builtin_registry()
    oracle = config.oracle or default_oracle()
    oracle.validate_against(registry)
    if oracle.message_type != config.message_type:
        raise ValueError(
            f"oracle watches {oracle.message_type!r} but the campaign "
            f"fuzzes {config.message_type!r}"
        )
    schema = registry.by_name(config.message_type)
    mutation_rate = (
        config.mutation_rate
        if config.mutation_rate is not None
        else 1.0 / len(schema.fields)
    )
    procedure = build_procedure(config.procedure, config.message_type)
    params = RipperParams(seed=config.seed)

    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "rulesets").mkdir(exist_ok=True)
        (out / "plans").mkdir(exist_ok=True)
    except OSError as exc:
        raise PersistenceFailureError(f"cannot create {out}: {exc}") from exc

    dataset = LabeledDataset(schema.field_names())
    clock = BudgetClock(config.budget_seconds)
    history: list[tuple[float, float]] = []
    records: list[IterationRecord] = []
    ruleset: RuleSet | None = None
    stop_reason = "iterations"

    controller = MockController(registry, procedure, oracle, step_timeout=config.step_timeout)
    controller.start()
    proxy = InterceptProxy(
        InterceptConfig(
            "127.0.0.1", 0, *controller.endpoint, target_type=config.message_type
        ),
        registry,
    )
    proxy.start()
    try:
        iteration = 0
        while config.iterations is None or iteration < config.iterations:
            iteration += 1
            plans, fuzz_mode, clamp = build_iteration_plans(
                config, schema, dataset, ruleset, iteration, mutation_rate
            )
            results = _execute_iteration(
                proxy, procedure, registry, oracle, schema, plans, config, iteration
            )
            start_row = len(dataset)
            presence = 0
            for _, action, label in results:
                dataset.append(action.after.values, label, iteration=iteration)
                presence += int(label == PRESENCE)

            ruleset = learn(dataset, params)
            precision, recall = progress(
                dataset, k=config.cv_folds, params=params, seed=config.seed
            )
            history.append((precision, recall))
            counts = dataset.class_counts()
            records.append(
                IterationRecord(
                    iteration=iteration,
                    fuzz_mode=fuzz_mode,
                    rows=len(results),
                    presence=presence,
                    absence=len(results) - presence,
                    cumulative_presence=counts[PRESENCE],
                    cumulative_absence=len(dataset) - counts[PRESENCE],
                    precision=precision,
                    recall=recall,
                    rule_count=len(ruleset.minority_rules),
                    clamp=clamp,
                )
            )
            log.info(
                "iteration %d (%s): +%d rows, %d presence, P=%.3f R=%.3f, %d rules",
                iteration, fuzz_mode, len(results), presence,
                precision, recall, len(ruleset.minority_rules),
            )

            try:
                dataset.append_csv(out / "dataset.csv", start=start_row)
            except OSError as exc:
                raise PersistenceFailureError(f"dataset.csv: {exc}") from exc
            _write_text(
                out / "rulesets" / f"iter_{iteration:03d}.txt",
                _ruleset_text(ruleset, config.message_type),
            )
            _write_json(
                out / "plans" / f"iter_{iteration:03d}.json",
                [_plan_entry(j, p) for j, p in enumerate(plans)],
            )

            stop, reason = should_stop(
                history,
                clock,
                epsilon=config.plateau_epsilon,
                window=config.plateau_window,
                precision_target=config.precision_target,
                recall_target=config.recall_target,
            )
            if stop:
                stop_reason = reason or "stopped"
                break
    finally:
        proxy.stop()
        controller.stop()

    assert ruleset is not None, "campaign ran zero iterations"
    _write_text(out / "ruleset.txt", _ruleset_text(ruleset, config.message_type))
    report_doc = {
        "config": {
            "mode": config.mode,
            "message_type": config.message_type,
            "procedure": config.procedure,
            "n": config.n,
            "iterations": config.iterations,
            "mutation_rate": mutation_rate,
            "budget_seconds": config.budget_seconds,
            "seed": config.seed,
            "cv_folds": config.cv_folds,
            "precision_target": config.precision_target,
            "recall_target": config.recall_target,
            "plateau_window": config.plateau_window,
            "plateau_epsilon": config.plateau_epsilon,
            "oracle": {
                "message_type": oracle.message_type,
                "predicate": str(oracle.condition),
                "failure_mode": oracle.failure_mode,
                "noise_rate": oracle.noise_rate,
            },
        },
        "iterations": [r.as_dict() for r in records],
        "stop_reason": stop_reason,
        "totals": {
            "rows": len(dataset),
            "presence": dataset.class_counts()[PRESENCE],
            "absence": len(dataset) - dataset.class_counts()[PRESENCE],
        },
        "final": {
            "precision": history[-1][0],
            "recall": history[-1][1],
            "rule_count": len(ruleset.minority_rules),
            "ruleset_file": "ruleset.txt",
        },
    }
    _write_json(out / "report.json", report_doc)
    return CampaignReport(
        out_dir=out,
        dataset=dataset,
        ruleset=ruleset,
        iterations=records,
        history=history,
        stop_reason=stop_reason,
    )


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

def load_saved_ruleset(path: str | Path) -> tuple[RuleSet, str | None]:
    """Read a saved rule set plus its message-type header, if present."""
    text = Path(path).read_text(encoding="utf-8")
    message_type = None
    for line in text.splitlines():
        if line.startswith(_TYPE_HEADER):
            message_type = line[len(_TYPE_HEADER):].strip()
            break
    return parse_ruleset(text), message_type


def replay(
    ruleset_path: str | Path,
    out_dir: str | Path,
    count: int = 100,
    seed: int = 0,
    message_type: str | None = None,
    registry: SchemaRegistry | None = None,
) -> Path:
    """Regenerate a corpus of rule-satisfying messages from a saved model.

    Each corpus message picks a learned rule with probability proportional
    to its confidence, solves the rule's condition, and fills every other
    field with a fresh domain draw.  Writes msg_NNNNN.bin files plus a
    manifest; returns the corpus directory.
    """
    registry = registry or builtin_registry()
    ruleset, header_type = load_saved_ruleset(ruleset_path)
    message_type = message_type or header_type
    if message_type is None:
        raise ValueError(
            "rule-set file has no message-type header; pass message_type"
        )
    if ruleset.is_degenerate:
        raise ValueError("rule set has no predictive rules to replay")
    schema = registry.by_name(message_type)

    rng = Random(f"{seed}/replay")
    rules = list(ruleset.minority_rules)
    weights = [r.confidence for r in rules]
    if sum(weights) <= 0:
        weights = None  # uniform fallback

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceFailureError(f"cannot create {out}: {exc}") from exc

    entries = []
    for idx in range(count):
        rule = rng.choices(rules, weights=weights, k=1)[0]
        values = {
            f.name: rng.randint(f.domain_lo, f.domain_hi) for f in schema.fields
        }
        values.update(solve(rule.condition, schema, rng))
        frame = encode(ControlMessage(schema, values))
        name = f"msg_{idx:05d}.bin"
        try:
            (out / name).write_bytes(frame)
        except OSError as exc:
            raise PersistenceFailureError(f"cannot write {name}: {exc}") from exc
        entries.append(
            {
                "file": name,
                "rule": str(rule.condition),
                "prediction": rule.prediction,
                "values": dict(sorted(values.items())),
            }
        )
    _write_json(
        out / "manifest.json",
        {
            "message_type": message_type,
            "count": count,
            "seed": seed,
            "source": str(ruleset_path),
            "messages": entries,
        },
    )
    return out


# ---------------------------------------------------------------------------
# Mode comparison
# ---------------------------------------------------------------------------

def compare(
    base_config: CampaignConfig,
    modes: tuple[str, ...] = ("guided", "random"),
    out_root: str | Path | None = None,
) -> dict:
    """Run one campaign per mode with identical settings and summarize.

    Every campaign shares seed, iteration count, and per-iteration budget,
    so failure counts are directly comparable.  Results land in
    mode_<name>/ subdirectories plus a combined comparison.json.
    """
    root = Path(out_root) if out_root is not None else Path(base_config.out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceFailureError(f"cannot create {root}: {exc}") from exc

    summary: dict[str, dict] = {}
    for mode in modes:
        config = replace(base_config, mode=mode, out_dir=root / f"mode_{mode}")
        report = run_campaign(config)
        counts = report.dataset.class_counts()
        summary[mode] = {
            "out_dir": f"mode_{mode}",
            "rows": len(report.dataset),
            "presence": counts[PRESENCE],
            "absence": len(report.dataset) - counts[PRESENCE],
            "presence_by_iteration": [r.presence for r in report.iterations],
            "final_precision": report.history[-1][0],
            "final_recall": report.history[-1][1],
            "stop_reason": report.stop_reason,
        }
    _write_json(root / "comparison.json", summary)
    return summary
