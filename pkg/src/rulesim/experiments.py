"""Experiment harness: one simulation runner plus the four standard
experiment drivers, the baseline trainer and the expectation bootstrap.

The runner owns the policy/learning loop around the world stepper.
Decisions happen every ``decision_period`` steps; movement and signal
choices persist between decisions while one-shot branches (bite, give,
synthesize, pick up, drop) fire only on the decision step itself.
Repeat runs fan out over processes when RULE_SIM_THREADS allows.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import producers as pp_mod
from . import rule, runio
from .config import ExperimentConfig, apply_coin_schedule
from .learner import (Adam, PolicyNetwork, TrajectoryBuffer, load_checkpoint,
                      ppo_update, save_checkpoint)
from .rule import ConvergenceTracker, ExpectationTable
from .scripted import ScriptedPolicy
from .world import DT, OBS_SIZE, World, observation_index_map

ONE_SHOT_BRANCHES = (0, 1, 2, 6, 7)

CONDITIONS = {
    "2a": (False, False, False),
    "2b": (True, False, False),
    "2c": (False, True, False),
    "2d": (True, True, False),
    "2e": (False, True, True),
    "2f": (True, True, True),
}


class TrainingFailed(RuntimeError):
    pass


class BootstrapFailed(RuntimeError):
    pass


@dataclass
class RunResult:
    survived: bool
    collapse_time: float | None
    duration: float
    births: int
    deaths: int
    coins_collected: int
    event_log_hash: str
    metrics: runio.RunMetrics
    world: World          # final state; events live here


class _Learner:
    """Bundles the network with its optimizer and experience buffer."""

    def __init__(self, policy: PolicyNetwork, hyper, rng):
        self.policy = policy
        self.hyper = hyper
        self.rng = rng
        self.buffer = TrajectoryBuffer()
        self.optimizer = Adam(policy.params, hyper.learning_rate)
        self.updates = 0

    def maybe_update(self, world: World, value_by_id: dict) -> bool:
        if self.buffer.size < self.hyper.buffer_size:
            return False
        stats = ppo_update(self.policy, self.buffer, self.hyper, self.rng,
                           final_values=value_by_id,
                           optimizer=self.optimizer)
        self.updates += 1
        world.log_event("param_update", -1, {
            "minibatches": stats["minibatches"],
            "skipped": stats["skipped"]})
        return True


def build_policy(cfg: ExperimentConfig, world: World):
    if cfg.policy == "scripted":
        if cfg.learning:
            raise ValueError("the learning condition needs a network policy "
                             "(run.policy = fresh or a checkpoint path)")
        return ScriptedPolicy(mode=cfg.scripted_mode, seed=cfg.seed,
                              light=cfg.light,
                              coin_pursuit_range=cfg.scripted_coin_pursuit,
                              mate_store_threshold=cfg.scripted_mate_store)
    if cfg.policy == "fresh":
        return PolicyNetwork(obs_size=OBS_SIZE, hidden=cfg.ppo.hidden,
                             rng=world.rng_policy)
    return load_checkpoint(cfg.policy)


def run_simulation(cfg: ExperimentConfig, seed: int | None = None,
                   out_dir=None, policy=None, learner: _Learner | None = None,
                   rule_mode: str | None = None) -> RunResult:
    """Run one world to its time limit or collapse."""
    if seed is None:
        seed = cfg.seed
    if rule_mode is None:
        rule_mode = rule.MODE_FULL if cfg.reward_updating else rule.MODE_OFF
    world = World(cfg.world_config(rule_mode), seed)
    if policy is None:
        policy = build_policy(cfg, world)
    scripted = isinstance(policy, ScriptedPolicy)
    if cfg.learning and scripted:
        raise ValueError("learning requires a network policy")
    if cfg.learning and learner is None:
        learner = _Learner(policy, cfg.ppo, world.rng_policy)

    total_steps = int(round(cfg.time_limit / DT))
    dp = max(1, cfg.decision_period)
    samples = []
    pending: dict[int, list] = {}
    current_actions: dict[int, np.ndarray] = {}
    movement_actions: dict[int, np.ndarray] = {}

    ids, obs, masks = world.observe()
    sample_every = int(round(1.0 / DT))
    outcome_collapse = False

    for step in range(total_steps):
        decision = step % dp == 0
        if decision:
            acts, logps, values = _policy_act(policy, world, ids, obs, masks,
                                              scripted)
            value_by_id = dict(zip(ids, values)) if values is not None else {}
            if learner is not None:
                for i, ent_id in enumerate(ids):
                    slot = pending.pop(ent_id, None)
                    if slot is not None:
                        learner.buffer.record(ent_id, *slot, done=False)
                learner.maybe_update(world, value_by_id)
                for i, ent_id in enumerate(ids):
                    pending[ent_id] = [obs[i], masks[i], acts[i],
                                       float(logps[i]), float(values[i]), 0.0]
            current_actions = {ent_id: acts[i]
                               for i, ent_id in enumerate(ids)}
            movement_actions = {ent_id: _movement_only(a)
                                for ent_id, a in current_actions.items()}
            step_actions = current_actions
        else:
            step_actions = movement_actions

        result = world.step(step_actions)

        for ent_id, (components, total) in result.rewards.items():
            slot = pending.get(ent_id)
            if slot is not None:
                slot[5] += total
        for ent_id, cause in result.deaths:
            current_actions.pop(ent_id, None)
            movement_actions.pop(ent_id, None)
            slot = pending.pop(ent_id, None)
            if learner is not None and slot is not None:
                learner.buffer.record(ent_id, slot[0], slot[1], slot[2],
                                      slot[3], slot[4], slot[5], done=True)

        if step % sample_every == 0 or step == total_steps - 1:
            samples.append(_sample_row(world))
        if result.collapsed:
            outcome_collapse = True
            break
        if (step + 1) % dp == 0:
            ids, obs, masks = world.observe()

    world.log_event("run_end", -1, {
        "time": world.time, "outcome":
        "collapsed" if outcome_collapse else "survived"})
    metrics = runio.extract_metrics(world.events)
    births = metrics.birth_records
    result = RunResult(
        survived=not outcome_collapse,
        collapse_time=world.time if outcome_collapse else None,
        duration=world.time,
        births=world.births_total, deaths=world.deaths_total,
        coins_collected=world.coins_collected,
        event_log_hash=world.event_log_hash(),
        metrics=metrics, world=world)
    if out_dir is not None:
        manifest = {"seed": seed, "outcome": "collapsed" if outcome_collapse
                    else "survived", "duration": world.time,
                    "event_log_hash": result.event_log_hash,
                    "item_kind": cfg.item_kind,
                    "conditions": {"evolution": cfg.evolution,
                                   "learning": cfg.learning,
                                   "reward_updating": cfg.reward_updating}}
        runio.write_run_artifacts(out_dir, world, samples, births, manifest)
    return result


def _policy_act(policy, world, ids, obs, masks, scripted):
    if len(ids) == 0:
        return np.zeros((0, 8), dtype=np.int64), None, None
    if scripted:
        acts = policy.act(ids, obs, masks)
        zeros = np.zeros(len(ids))
        return acts, zeros, zeros
    return policy.act(obs, masks, world.rng_policy)


def _movement_only(action: np.ndarray) -> np.ndarray:
    out = action.copy()
    for branch in ONE_SHOT_BRANCHES:
        out[branch] = 0
    return out


def _sample_row(world: World):
    pp_count = sum(1 for p in world.pps
                   if p.phase in (pp_mod.GROWING, pp_mod.ALIVE))
    coins = sum(1 for it in world.items if it.kind == "coin")
    return (round(world.time, 2), len(world.alive_ents()), pp_count, coins,
            world.coins_collected, world.births_total, world.deaths_total)


# -- baseline training ---------------------------------------------------------

def run_baseline_training(cfg: ExperimentConfig, out_dir,
                          max_steps: int = 2_000_000,
                          persistence_lifetimes: float = 2.0) -> Path:
    """Train a shared policy until the population is self-sustaining.

    The world resets on collapse (training only; experiments never
    reset). Stops when the population has stayed alive continuously for
    ``persistence_lifetimes`` maximum lifespans with at least one coin
    collected in that window (when coins exist), else fails at the step
    cap with the training curve written for inspection.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg)
    cfg.learning = True
    cfg.reward_updating = False
    cfg.evolution = False
    cfg.policy = "fresh"
    max_age = cfg.build_ent_gene().get("max_age")
    window = persistence_lifetimes * max_age
    coins_required = cfg.coins_base > 0

    world = World(cfg.world_config(rule.MODE_OFF), cfg.seed)
    policy = build_policy(cfg, world)
    learner = _Learner(policy, cfg.ppo, np.random.default_rng(cfg.seed + 101))
    curve = []
    resets = 0
    steps_done = 0
    dp = max(1, cfg.decision_period)

    while steps_done < max_steps:
        world = World(cfg.world_config(rule.MODE_OFF), cfg.seed + resets)
        pending = {}
        current_actions = {}
        movement_actions = {}
        ids, obs, masks = world.observe()
        reward_acc = 0.0
        run_start_step = steps_done
        met = False
        while steps_done < max_steps:
            step_in_run = steps_done - run_start_step
            if step_in_run % dp == 0:
                acts, logps, values = policy.act(obs, masks, world.rng_policy)
                value_by_id = dict(zip(ids, values))
                for i, ent_id in enumerate(ids):
                    slot = pending.pop(ent_id, None)
                    if slot is not None:
                        learner.buffer.record(ent_id, *slot, done=False)
                learner.maybe_update(world, value_by_id)
                for i, ent_id in enumerate(ids):
                    pending[ent_id] = [obs[i], masks[i], acts[i],
                                       float(logps[i]), float(values[i]), 0.0]
                current_actions = {eid: acts[i]
                                   for i, eid in enumerate(ids)}
                movement_actions = {eid: _movement_only(a)
                                    for eid, a in current_actions.items()}
                step_actions = current_actions
            else:
                step_actions = movement_actions
            result = world.step(step_actions)
            steps_done += 1
            for ent_id, (c, total) in result.rewards.items():
                reward_acc += total
                slot = pending.get(ent_id)
                if slot is not None:
                    slot[5] += total
            for ent_id, cause in result.deaths:
                current_actions.pop(ent_id, None)
                movement_actions.pop(ent_id, None)
                slot = pending.pop(ent_id, None)
                if slot is not None:
                    learner.buffer.record(ent_id, slot[0], slot[1], slot[2],
                                          slot[3], slot[4], slot[5],
                                          done=True)
            if steps_done % int(round(1.0 / DT)) == 0:
                curve.append((steps_done, round(world.time, 2),
                              repr(reward_acc), len(world.alive_ents()),
                              world.births_total, resets))
                reward_acc = 0.0
            if result.collapsed:
                resets += 1
                break
            if world.time >= window and (not coins_required
                                         or world.coins_collected > 0):
                met = True
                break
            if step_in_run % dp == dp - 1:
                ids, obs, masks = world.observe()
        if met:
            break
    runio.write_csv(out / "training_curve.csv", runio.TRAINING_COLUMNS, curve)
    if not met:
        raise TrainingFailed(
            f"step cap {max_steps} reached after {resets} resets; "
            f"training curve written to {out / 'training_curve.csv'}")
    ckpt = out / "policy.ckpt"
    save_checkpoint(ckpt, policy)
    _write_index_map(out)
    return ckpt


def _write_index_map(out_dir) -> None:
    import json
    with open(Path(out_dir) / "obs_index_map.json", "w") as f:
        json.dump(observation_index_map(), f, indent=2)


# -- expectation bootstrap -------------------------------------------------------

def bootstrap_expectations(cfg: ExperimentConfig, out_dir=None,
                           policy=None) -> np.ndarray:
    """Build baseline expectation tables under a fixed policy.

    Runs with evolution off and coefficients frozen, applying only the
    expectation half of the birth update, starting from all-zero
    tables. Returns the mean table over the trailing births once the
    rolling mean settles; population collapse is a hard failure.
    """
    cfg = replace(cfg)
    cfg.learning = False
    cfg.reward_updating = False
    cfg.evolution = False
    world = World(cfg.world_config(rule.MODE_EXPECTATION_ONLY), cfg.seed)
    if policy is None:
        policy = build_policy(cfg, world)
    scripted = isinstance(policy, ScriptedPolicy)
    tracker = ConvergenceTracker(window=cfg.bootstrap_window,
                                 tol=cfg.bootstrap_tol,
                                 patience=cfg.bootstrap_patience)
    recent: list[np.ndarray] = []
    keep = cfg.bootstrap_average_births
    total_steps = int(round(cfg.time_limit / DT))
    dp = max(1, cfg.decision_period)
    ids, obs, masks = world.observe()
    current_actions = {}
    movement_actions = {}
    converged_at = None
    for step in range(total_steps):
        if step % dp == 0:
            acts, _, _ = _policy_act(policy, world, ids, obs, masks, scripted)
            current_actions = {eid: acts[i] for i, eid in enumerate(ids)}
            movement_actions = {eid: _movement_only(a)
                                for eid, a in current_actions.items()}
            step_actions = current_actions
        else:
            step_actions = movement_actions
        result = world.step(step_actions)
        for ent_id, _cause in result.deaths:
            current_actions.pop(ent_id, None)
            movement_actions.pop(ent_id, None)
        for child_id in result.births:
            child = next(e for e in world.ents if e.id == child_id)
            recent.append(child.expectations.values.copy())
            if len(recent) > keep:
                recent.pop(0)
            tracker.add(child.expectations)
        if result.collapsed:
            raise BootstrapFailed(
                f"population collapsed at t={world.time:.1f}s after "
                f"{world.births_total} births; expectations not stabilized")
        if tracker.converged and len(recent) >= keep:
            converged_at = world.time
            break
        if (step + 1) % dp == 0:
            ids, obs, masks = world.observe()
    if not tracker.converged:
        raise BootstrapFailed(
            f"no convergence within {cfg.time_limit}s "
            f"({world.births_total} births; tol={cfg.bootstrap_tol})")
    mean_table = np.mean(recent, axis=0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        runio.write_expectations_csv(out / "expectations.csv", mean_table)
    return mean_table


# -- experiments ----------------------------------------------------------------

def worker_count() -> int:
    raw = os.environ.get("RULE_SIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_map(fn, jobs):
    n = worker_count()
    if n <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def _exp1_job(args):
    cfg, rate, seed = args
    run_cfg = replace(cfg)
    run_cfg.coins_base = float(rate)
    run_cfg.coin_schedule = "constant"
    run_cfg.coin_slope = 0.0
    run_cfg.policy = "scripted"
    run_cfg.scripted_mode = "coin"
    run_cfg.learning = False
    run_cfg.reward_updating = False
    run_cfg.evolution = False
    res = run_simulation(run_cfg, seed=seed)
    return (rate, seed, res.metrics.population_at_end(),
            not res.survived,
            res.collapse_time if not res.survived else "")


def run_experiment1(cfg: ExperimentConfig, rates, seeds_per_rate: int = 10,
                    out_dir=None):
    """Constant-rate coin sensitivity sweep under the scripted
    coin-greedy policy; returns rows and per-rate survival."""
    jobs = [(cfg, rate, cfg.seed + 1000 * i + int(rate * 17))
            for rate in rates for i in range(seeds_per_rate)]
    rows = _run_map(_exp1_job, jobs)
    survival = {}
    for rate in rates:
        mine = [r for r in rows if r[0] == rate]
        survival[rate] = sum(1 for r in mine if not r[3]) / len(mine)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        runio.write_csv(out / "sensitivity.csv", runio.SENSITIVITY_COLUMNS,
                        rows)
    return rows, survival


def configure_condition(cfg: ExperimentConfig, condition: str,
                        schedule: str) -> ExperimentConfig:
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}; "
                         f"choose from {sorted(CONDITIONS)}")
    evolution, learning, updating = CONDITIONS[condition]
    out = replace(cfg)
    out.evolution = evolution
    out.learning = learning
    out.reward_updating = updating
    apply_coin_schedule(out, schedule)
    if learning and out.policy == "scripted":
        out.policy = "fresh"
    if not learning and out.policy == "fresh":
        out.policy = "scripted"
        out.scripted_mode = "coin"
    return out


def run_experiment2(cfg: ExperimentConfig, condition: str, schedule: str,
                    seed: int, out_dir=None,
                    expectations: np.ndarray | None = None) -> RunResult:
    run_cfg = configure_condition(cfg, condition, schedule)
    run_cfg.initial_expectations = expectations
    return run_simulation(run_cfg, seed=seed, out_dir=out_dir)


def run_experiment3(cfg: ExperimentConfig, item_kind: str, seed: int,
                    expectations: np.ndarray, out_dir=None) -> RunResult:
    run_cfg = replace(cfg)
    run_cfg.item_kind = item_kind
    run_cfg.evolution = False
    run_cfg.learning = True
    run_cfg.reward_updating = True
    if run_cfg.policy == "scripted":
        run_cfg.policy = "fresh"
    run_cfg.initial_expectations = expectations
    return run_simulation(run_cfg, seed=seed, out_dir=out_dir)


def run_experiment4(cfg: ExperimentConfig, introduced_kind: str, seed: int,
                    expectations: np.ndarray | None = None,
                    out_dir=None) -> RunResult:
    """Dormant-reward run: coin coefficient starts near zero, items
    arrive on the rising schedule; expectations come from a coin-free
    baseline."""
    run_cfg = replace(cfg)
    run_cfg.dormant_mode = True
    run_cfg.item_kind = introduced_kind
    run_cfg.evolution = False
    run_cfg.learning = True
    run_cfg.reward_updating = True
    if run_cfg.policy == "scripted":
        run_cfg.policy = "fresh"
    apply_coin_schedule(run_cfg, "higher")
    run_cfg.initial_expectations = expectations
    return run_simulation(run_cfg, seed=seed, out_dir=out_dir)


def coin_free(cfg: ExperimentConfig) -> ExperimentConfig:
    out = replace(cfg)
    out.coins_base = 0.0
    out.coin_schedule = "constant"
    out.coin_slope = 0.0
    return out
