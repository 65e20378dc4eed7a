"""Run configuration: presets, plain-text key-value files, validation.

A config file is a flat ``key = value`` document ('#' starts a
comment). Every gene slot, hyperparameter and schedule knob has a key;
unknown keys are rejected by name so typos fail loudly. Two presets
ship: ``desk`` (minutes-scale runs on one machine) and ``paper``
(full-scale values; not asserted by the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .genome import (ENT_SLOT_BY_NAME, PP_SLOT_BY_NAME, EntGene, PPGene,
                     default_ent_gene, default_pp_gene)
from .learner import PPOHyper
from .world import ITEM_EFFECTS, WorldConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # condition flags
    evolution: bool = False
    learning: bool = False
    reward_updating: bool = False
    dormant_mode: bool = False
    # run control
    seed: int = 0
    time_limit: float = 1200.0
    decision_period: int = 5
    policy: str = "scripted"          # scripted | fresh | <checkpoint path>
    # world geometry and populations
    arena_side: float = 4.0
    n_ents: int = 14
    n_pps: int = 16
    light: float = 1.0
    ent_zone_fraction: float = 0.6
    pp_zone_fraction: float = 0.7
    coin_zone_fraction: float = 0.4
    friction: float = 5.0
    coin_mass: float = 0.01
    cube_mass: float = 5.0
    item_effect_seconds: float = 10.0
    pp_initial_age_min: float = 1.0
    pp_initial_age_max: float = 30.0
    pp_initial_mass_min: float = 6.0
    pp_initial_mass_max: float = 8.0
    # coin supply
    coins_base: float = 2.0
    coin_schedule: str = "constant"    # constant | linear
    coin_slope: float = 0.0
    coin_cycle_seconds: float = 10.0
    coin_lifetime: float = 20.0
    dropped_item_lifetime: float = 1.0
    item_kind: str = "coin"
    # scripted policy
    scripted_mode: str = "default"
    scripted_coin_pursuit: float = 1.5
    scripted_mate_store: float = 11.0
    # bootstrap convergence
    bootstrap_window: int = 100
    bootstrap_tol: float = 1e-3
    bootstrap_patience: int = 100
    bootstrap_average_births: int = 200
    # learner
    ppo: PPOHyper = field(default_factory=PPOHyper)
    # gene overrides (slot name -> value)
    ent_gene_overrides: dict = field(default_factory=dict)
    pp_gene_overrides: dict = field(default_factory=dict)
    pp_residual_fraction: float = 0.0
    founder_mass_spread: float = 0.0
    # expectation tables (component x bin), loaded from a bootstrap run
    initial_expectations: np.ndarray | None = None

    def validate(self) -> None:
        if self.reward_updating and not self.learning:
            raise ConfigError("reward updating requires learning "
                              "(condition.reward_updating without "
                              "condition.learning)")
        if self.coin_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown coin schedule {self.coin_schedule!r}")
        if self.item_kind not in ITEM_EFFECTS:
            raise ConfigError(f"unknown item kind {self.item_kind!r}")
        for name in self.ent_gene_overrides:
            if name not in ENT_SLOT_BY_NAME:
                raise ConfigError(f"unknown ent gene slot {name!r}")
        for name in self.pp_gene_overrides:
            if name not in PP_SLOT_BY_NAME:
                raise ConfigError(f"unknown pp gene slot {name!r}")

    # -- materialization ----------------------------------------------------

    def build_ent_gene(self) -> EntGene:
        g = default_ent_gene()
        for name, value in self.ent_gene_overrides.items():
            g.set(name, value)
        if self.dormant_mode:
            g.set("reward_c4", 0.001)
        return g

    def build_pp_gene(self) -> PPGene:
        g = default_pp_gene()
        for name, value in self.pp_gene_overrides.items():
            g.set(name, value)
        return g

    def world_config(self, rule_mode: str) -> WorldConfig:
        self.validate()
        return WorldConfig(
            arena_side=self.arena_side,
            ent_zone_fraction=self.ent_zone_fraction,
            pp_zone_fraction=self.pp_zone_fraction,
            coin_zone_fraction=self.coin_zone_fraction,
            n_ents=self.n_ents,
            n_pps=self.n_pps,
            light=self.light,
            time_limit=self.time_limit,
            coin_cycle_seconds=self.coin_cycle_seconds,
            coins_per_cycle=self.coins_base,
            coin_schedule=self.coin_schedule,
            coin_slope=self.coin_slope,
            coin_lifetime=self.coin_lifetime,
            dropped_item_lifetime=self.dropped_item_lifetime,
            coin_mass=self.coin_mass,
            cube_mass=self.cube_mass,
            item_kind=self.item_kind,
            item_effect_seconds=self.item_effect_seconds,
            friction=self.friction,
            evolution=self.evolution,
            rule_mode=rule_mode,
            ent_gene=self.build_ent_gene(),
            pp_gene=self.build_pp_gene(),
            pp_initial_age=(self.pp_initial_age_min, self.pp_initial_age_max),
            pp_initial_mass=(self.pp_initial_mass_min,
                             self.pp_initial_mass_max),
            initial_expectations=self.initial_expectations,
            dormant_c4_noise=0.001 if self.dormant_mode else 0.0,
            founder_mass_spread=self.founder_mass_spread,
            pp_residual_fraction=self.pp_residual_fraction,
        )


# -- key registry --------------------------------------------------------------

_SCALAR_KEYS = {
    "condition.evolution": ("evolution", bool),
    "condition.learning": ("learning", bool),
    "condition.reward_updating": ("reward_updating", bool),
    "condition.dormant_mode": ("dormant_mode", bool),
    "run.seed": ("seed", int),
    "run.time_limit": ("time_limit", float),
    "run.decision_period": ("decision_period", int),
    "run.policy": ("policy", str),
    "world.arena_side": ("arena_side", float),
    "world.n_ents": ("n_ents", int),
    "world.n_pps": ("n_pps", int),
    "world.light": ("light", float),
    "world.ent_zone_fraction": ("ent_zone_fraction", float),
    "world.pp_zone_fraction": ("pp_zone_fraction", float),
    "world.coin_zone_fraction": ("coin_zone_fraction", float),
    "world.friction": ("friction", float),
    "world.coin_mass": ("coin_mass", float),
    "world.cube_mass": ("cube_mass", float),
    "world.item_effect_seconds": ("item_effect_seconds", float),
    "world.pp_initial_age_min": ("pp_initial_age_min", float),
    "world.pp_initial_age_max": ("pp_initial_age_max", float),
    "world.founder_mass_spread": ("founder_mass_spread", float),
    "world.pp_initial_mass_min": ("pp_initial_mass_min", float),
    "world.pp_initial_mass_max": ("pp_initial_mass_max", float),
    "coins.base": ("coins_base", float),
    "coins.schedule": ("coin_schedule", str),
    "coins.slope": ("coin_slope", float),
    "coins.cycle_seconds": ("coin_cycle_seconds", float),
    "coins.lifetime": ("coin_lifetime", float),
    "coins.dropped_lifetime": ("dropped_item_lifetime", float),
    "coins.item_kind": ("item_kind", str),
    "scripted.mode": ("scripted_mode", str),
    "scripted.coin_pursuit_range": ("scripted_coin_pursuit", float),
    "scripted.mate_store_threshold": ("scripted_mate_store", float),
    "bootstrap.window": ("bootstrap_window", int),
    "bootstrap.tol": ("bootstrap_tol", float),
    "bootstrap.patience": ("bootstrap_patience", int),
    "bootstrap.average_births": ("bootstrap_average_births", int),
}

_PPO_KEYS = {
    "ppo.gamma": ("gamma", float),
    "ppo.lambda": ("lam", float),
    "ppo.clip_epsilon": ("clip_epsilon", float),
    "ppo.entropy_beta": ("entropy_beta", float),
    "ppo.learning_rate": ("learning_rate", float),
    "ppo.batch_size": ("batch_size", int),
    "ppo.buffer_size": ("buffer_size", int),
    "ppo.time_horizon": ("time_horizon", int),
    "ppo.epochs": ("epochs", int),
    "ppo.value_coef": ("value_coef", float),
    "ppo.hidden1": (0, int),
    "ppo.hidden2": (1, int),
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _convert(raw: str, typ, key: str):
    if typ is bool:
        return _parse_bool(raw, key)
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, raw = body.split("=", 1)
        key, raw = key.strip(), raw.strip()
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = raw
    return out


def apply_config(cfg: ExperimentConfig, entries: dict[str, str]) -> None:
    hidden = list(cfg.ppo.hidden)
    for key, raw in entries.items():
        if key in _SCALAR_KEYS:
            attr, typ = _SCALAR_KEYS[key]
            setattr(cfg, attr, _convert(raw, typ, key))
        elif key in _PPO_KEYS:
            attr, typ = _PPO_KEYS[key]
            value = _convert(raw, typ, key)
            if isinstance(attr, int):
                hidden[attr] = value
            else:
                setattr(cfg.ppo, attr, value)
        elif key.startswith("ent.gene."):
            name = key[len("ent.gene."):]
            if name not in ENT_SLOT_BY_NAME:
                raise ConfigError(f"unknown config key: {key}")
            cfg.ent_gene_overrides[name] = _convert(raw, float, key)
        elif key.startswith("pp.gene."):
            name = key[len("pp.gene."):]
            if name not in PP_SLOT_BY_NAME:
                raise ConfigError(f"unknown config key: {key}")
            cfg.pp_gene_overrides[name] = _convert(raw, float, key)
        else:
            raise ConfigError(f"unknown config key: {key}")
    cfg.ppo.hidden = tuple(hidden)
    cfg.validate()


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else desk_preset()
    with open(path) as f:
        apply_config(cfg, parse_config_text(f.read()))
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Full key-value dump; parses back to an identical config."""
    lines = ["# rulesim run configuration"]
    for key, (attr, typ) in _SCALAR_KEYS.items():
        value = getattr(cfg, attr)
        if typ is bool:
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    for key, (attr, typ) in _PPO_KEYS.items():
        if isinstance(attr, int):
            lines.append(f"{key} = {cfg.ppo.hidden[attr]}")
        else:
            lines.append(f"{key} = {getattr(cfg.ppo, attr)}")
    gene = cfg.build_ent_gene()
    for name in sorted(ENT_SLOT_BY_NAME):
        if name.startswith("blank_"):
            continue
        lines.append(f"ent.gene.{name} = {gene.get(name)!r}")
    pp = cfg.build_pp_gene()
    for name in sorted(PP_SLOT_BY_NAME):
        lines.append(f"pp.gene.{name} = {pp.get(name)!r}")
    return "\n".join(lines) + "\n"


# -- presets -------------------------------------------------------------------

def desk_preset() -> ExperimentConfig:
    """Minutes-scale preset: small arena, short lives, small network.

    Gene changes relative to the shipped defaults keep the ecology
    viable at 20 agents: smaller adult mass shortens the growth phase,
    and reward-update increments are rescaled to the shorter lifetime
    so expectation tables converge within a run.
    """
    cfg = ExperimentConfig()
    cfg.ent_gene_overrides = {
        "max_biomass": 15.0,
        "max_age": 60.0,
        "offspring_rel_mass": 0.45,
        "offspring_energy": 6.0,
        "repro_min_mass_fraction": 0.9,
        "energy_reserve": 4.0,
        "digestion_rate": 0.2,
        "stomach_mass_ratio": 0.3,
        "reproductions_per_lifetime": 1.5,
        "alpha_c1": 2e-3, "alpha_c2": 2e-3, "alpha_c3": 2e-3,
        "alpha_c4": 2e-3,
        "alpha_consumption": 2e-2, "alpha_reproduction": 2e-2,
        "beta_c1": 4e-3, "beta_c2": 4e-3, "beta_c3": 4e-3,
        "beta_c4": 2e-2,
        "beta_consumption": 1e-2, "beta_reproduction": 5e-3,
    }
    cfg.pp_residual_fraction = 0.05
    cfg.founder_mass_spread = 0.8
    cfg.pp_gene_overrides = {"max_biomass": 12.0, "repro_prob_max": 2e-3,
                             "germination_pause": 30.0,
                             "exclusion_height_ratio": 8.0, "max_age": 200.0}
    cfg.n_pps = 16
    cfg.pp_zone_fraction = 0.9
    return cfg


def paper_preset() -> ExperimentConfig:
    """Full-scale preset mirroring the reference setup; unasserted."""
    cfg = ExperimentConfig(
        arena_side=10.0, n_ents=100, n_pps=100,
        time_limit=25_000.0, decision_period=1,
        coins_base=10.0,
        pp_initial_age_min=1.0, pp_initial_age_max=100.0,
        pp_initial_mass_min=5.0, pp_initial_mass_max=50.0,
    )
    cfg.pp_gene_overrides = {"max_biomass": 50.0}
    cfg.ppo.hidden = (256, 256)
    cfg.ppo.buffer_size = 320_000
    return cfg


def ledger_preset() -> ExperimentConfig:
    """Desk-family preset for long conservation checks.

    One birth per lifetime bounds the population near the founder
    count, keeping multi-thousand-second runs cheap while every energy
    flow (growth, grazing, digestion, births, deaths, coins, drops)
    stays active.
    """
    cfg = desk_preset()
    cfg.arena_side = 3.2
    cfg.n_ents = 8
    cfg.n_pps = 9
    cfg.decision_period = 10
    cfg.ent_gene_overrides = dict(cfg.ent_gene_overrides)
    cfg.ent_gene_overrides.update({"max_age": 280.0,
                                   "reproductions_per_lifetime": 1.0})
    return cfg


PRESETS = {"desk": desk_preset, "paper": paper_preset,
           "ledger": ledger_preset}


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; "
                          f"choose from {sorted(PRESETS)}") from None


# schedule slopes: the desk variants reach the same coins-per-Ent-per-cycle
# endpoints as the reference schedules once populations are rescaled.
COIN_SCHEDULES = {
    "constant": (0.0, None),
    "lower": (0.0097, None),
    "higher": (0.014, None),
}


def apply_coin_schedule(cfg: ExperimentConfig, name: str) -> None:
    if name not in COIN_SCHEDULES:
        raise ConfigError(f"unknown coin schedule {name!r}; "
                          f"choose from {sorted(COIN_SCHEDULES)}")
    slope, _ = COIN_SCHEDULES[name]
    cfg.coin_schedule = "constant" if slope == 0.0 else "linear"
    cfg.coin_slope = slope
