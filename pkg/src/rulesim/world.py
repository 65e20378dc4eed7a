"""Simulation container: square arena, fixed-timestep stepper, items,
contacts, vision rays, coin drops and the global energy ledger.

One world owns all mutable state and a set of named RNG streams, so a
(config, seed) pair fully determines every run. The step order is
fixed and documented on :meth:`World.step`; reward and ledger tests
depend on it. Contact queries run on per-step gap matrices built once
per step; observation building reuses the same arrays.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ents as ent_mod
from . import producers as pp_mod
from . import rule
from .ents import EntState
from .genome import (EntGene, PPGene, compatible, default_ent_gene,
                     default_pp_gene, genetic_distance, inherit,
                     nutrition_coefficient, palatability)
from .producers import PPState

DT = 0.02
PP_UPDATE_STEPS = 25        # growth cadence: 0.5 s
PHYSIOLOGY_NUM = 2          # physiology tick when (2*step) crosses a
PHYSIOLOGY_DEN = 25         # multiple of 25, i.e. every 0.25 s on average

CONTACT_SKIN = 0.01        # touch tolerance (m), absorbs separation round-off
BITE_HALF_ARC_DEG = 45.0   # prey must sit ahead to be bitten
BITE_REACH = 0.15          # grazing reach (m) for producers and cakes
SEED_RADIUS = 0.05

ITEM_EFFECTS = {
    "coin": (0.0, 1.0),
    "vitaminStrong": (1.0, 5.0),
    "vitaminWeak": (0.05, 1.25),
    "poisonStrong": (-2.0, 0.1),
    "poisonWeak": (-0.05, 0.5),
}

RAY_COUNT = 17
RAY_HALF_FOV = 40.0
RAY_CONE_RADIUS = 0.05
RAY_CLASSES = ("ent", "pp", "fruit", "cake", "coin", "cube", "boundary")
RAY_FIELDS = 1 + len(RAY_CLASSES) + 1    # hit flag, one-hot, distance
BASE_OBS = 22
OBS_SIZE = BASE_OBS + RAY_COUNT * RAY_FIELDS
OBS_LAYOUT_VERSION = 1

BRANCH_SIZES = (2, 5, 2, 3, 3, 3, 2, 2)
BRANCH_NAMES = ("bite", "give", "synthesize", "signal", "rotate", "force",
                "pickup", "drop")
BRANCH_OFFSETS = tuple(int(x) for x in np.cumsum((0,) + BRANCH_SIZES[:-1]))
MASK_SIZE = sum(BRANCH_SIZES)
N_BRANCHES = len(BRANCH_SIZES)

BASE_OBS_NAMES = (
    "velocity_x", "velocity_y", "heading", "starvation_level",
    "raw_material_present", "processed_material_present", "carrying_cube",
    "reproduction_ready", "stored_energy", "currency_c1", "currency_c2",
    "currency_c3", "currency_c4", "no_signal_heard", "signal_1_heard",
    "signal_2_heard", "nearest_genetic_distance", "signal_source_distance",
    "signal_source_bearing", "nearby_ent_count", "being_bitten",
    "light_strength",
)

KIND_TO_CLASS = {"fruit": 2, "cake": 3, "coin": 4, "cube": 5}
_ZERO_REWARD = (np.zeros(rule.N_COMPONENTS), 0.0)


def observation_index_map() -> dict:
    """Versioned description of the observation vector layout."""
    names = list(BASE_OBS_NAMES)
    for r in range(RAY_COUNT):
        names.append(f"ray{r:02d}_hit")
        names.extend(f"ray{r:02d}_is_{c}" for c in RAY_CLASSES)
        names.append(f"ray{r:02d}_distance")
    return {"version": OBS_LAYOUT_VERSION, "size": OBS_SIZE,
            "names": names,
            "branches": dict(zip(BRANCH_NAMES, BRANCH_SIZES))}


def ray_length(light: float) -> float:
    return max(1.0, -15.0 + 65.0 * light)


@dataclass
class WorldConfig:
    arena_side: float = 10.0
    ent_zone_fraction: float = 0.6
    pp_zone_fraction: float = 0.7
    coin_zone_fraction: float = 0.4
    n_ents: int = 100
    n_pps: int = 100
    light: float = 1.0
    time_limit: float = 10_000.0
    coin_cycle_seconds: float = 10.0
    coins_per_cycle: float = 10.0
    coin_schedule: str = "constant"        # constant | linear
    coin_slope: float = 0.0
    coin_lifetime: float = 20.0
    dropped_item_lifetime: float = 1.0
    coin_mass: float = 0.01
    cube_mass: float = 5.0
    item_kind: str = "coin"
    item_effect_seconds: float = 10.0
    friction: float = 5.0
    evolution: bool = False
    rule_mode: str = rule.MODE_OFF
    ent_gene: EntGene = field(default_factory=default_ent_gene)
    pp_gene: PPGene = field(default_factory=default_pp_gene)
    pp_initial_age: tuple = (1.0, 100.0)
    pp_initial_mass: tuple = (5.0, 50.0)
    initial_expectations: np.ndarray | None = None
    dormant_c4_noise: float = 0.0
    founder_mass_spread: float = 0.0    # stagger founders up this fraction
    pp_residual_fraction: float = 0.0   # grazing floor as share of max mass
    log_state_digest_every: int = 250
    verbose_events: bool = False        # log bites/gives/drops/synthesis

    def item_effect(self) -> tuple[float, float]:
        return ITEM_EFFECTS[self.item_kind]


@dataclass
class Item:
    id: int
    kind: str                  # coin | fruit | cake | cube
    pos: np.ndarray
    mass: float = 0.0
    rho: float = 0.0
    expiry_step: int | None = None
    spent: bool = False        # pickup effects already consumed

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)

    def radius(self) -> float:
        if self.kind == "coin":
            return 0.03
        if self.kind == "cube":
            return 0.1
        return max(0.03, ent_mod.body_radius(self.mass))

    def energy_equiv(self) -> float:
        if self.kind in ("fruit", "cake"):
            return self.mass * self.rho
        return 0.0


class EnergyLedger:
    """Running energy account; the conservation identity is checked in
    tests against :meth:`World.energy_assets`."""

    CATEGORIES = (ent_mod.SINK_METABOLISM, ent_mod.SINK_MOVEMENT,
                  ent_mod.SINK_COLLISION, ent_mod.SINK_SYNTHESIS,
                  ent_mod.SINK_TRANSACTION, ent_mod.SINK_BIRTH,
                  ent_mod.SINK_POISON, ent_mod.SINK_DIGESTION,
                  ent_mod.SINK_CATABOLISM)

    def __init__(self):
        self.source_in = 0.0
        self.exogenous_in = 0.0
        self.removed_at_death = 0.0
        self.sinks = {c: 0.0 for c in self.CATEGORIES}

    def sink(self, category: str, amount: float) -> None:
        if amount:
            self.sinks[category] += amount

    def total_sinks(self) -> float:
        return sum(self.sinks.values())

    def snapshot(self) -> dict:
        out = {"source_in": self.source_in,
               "exogenous_in": self.exogenous_in,
               "removed_at_death": self.removed_at_death}
        out.update(self.sinks)
        return out


class StepResult:
    __slots__ = ("rewards", "births", "deaths", "collapsed")

    def __init__(self):
        self.rewards: dict[int, tuple[np.ndarray, float]] = {}
        self.births: list[int] = []
        self.deaths: list[tuple[int, str]] = []
        self.collapsed = False


class _Ctx:
    """Per-step geometry: positions, radii and gap matrices.

    Gaps are surface distances (negative = overlapping). Built after
    integration, before contact resolution; mask building reuses the
    same construction between steps.
    """

    __slots__ = ("actors", "pos", "rad", "lean", "stored", "mass", "gap_ee",
                 "pps", "pp_pos", "pp_rad", "gap_ep",
                 "seeds", "seed_pos", "gap_es",
                 "items", "item_pos", "item_rad", "item_mass", "gap_ei",
                 "cake_rows")

    def __init__(self, world: "World", actors, light: bool = False):
        n = len(actors)
        self.actors = actors
        pos = np.empty((n, 2))
        body = np.empty(n)
        lean = np.empty(n)
        stored = np.empty(n)
        coin_mass = world.config.coin_mass
        for i, e in enumerate(actors):
            p = e.pos
            pos[i, 0] = p[0]
            pos[i, 1] = p[1]
            lean[i] = e.lean_mass
            body[i] = e.lean_mass + e.store / e.c_rho + e.stomach_mass
            inv = e.raw_fruit + e.cake + e.coins * coin_mass
            stored[i] = inv
            if e.carrying_cube:
                inv += e.cube_mass
            body[i] += 0.0
            e._inv_mass = inv
        self.pos = pos
        self.lean = lean
        self.stored = stored
        self.mass = body + np.array([e._inv_mass for e in actors])
        self.rad = np.cbrt(3.0 * np.maximum(body, 1e-9)
                           / (4.0 * np.pi * ent_mod.WATER_DENSITY))
        for i, e in enumerate(actors):
            e._radius_cache = self.rad[i]
        if n:
            self.gap_ee = (_dists(pos, pos)
                           - self.rad[:, None] - self.rad[None, :])
            np.fill_diagonal(self.gap_ee, np.inf)
        else:
            self.gap_ee = np.zeros((0, 0))

        self.pps = [p for p in world.pps if p.bitable]
        if self.pps:
            self.pp_pos = np.array([p.pos for p in self.pps])
            self.pp_rad = np.cbrt(
                3.0 * np.maximum([p.mass for p in self.pps], 1e-9)
                / (4.0 * np.pi * ent_mod.WATER_DENSITY))
            self.gap_ep = (_dists(pos, self.pp_pos)
                           - self.rad[:, None] - self.pp_rad[None, :])
        else:
            self.pp_pos = np.zeros((0, 2))
            self.pp_rad = np.zeros(0)
            self.gap_ep = np.zeros((n, 0))

        self.seeds = list(world.surface_seeds)
        if light:
            self.seed_pos = np.zeros((0, 2))
            self.gap_es = np.zeros((n, 0))
            self.item_pos = np.zeros((0, 2))
            self.item_rad = np.zeros(0)
            self.item_mass = np.zeros(0)
            self.gap_ei = np.zeros((n, 0))
            self.items = list(world.items)
            self.cake_rows = np.zeros(0, dtype=bool)
            return
        if self.seeds:
            self.seed_pos = np.array([p.pos for p in self.seeds])
            self.gap_es = (_dists(pos, self.seed_pos)
                           - self.rad[:, None] - SEED_RADIUS)
        else:
            self.seed_pos = np.zeros((0, 2))
            self.gap_es = np.zeros((n, 0))

        self.items = list(world.items)
        if self.items:
            self.item_pos = np.array([it.pos for it in self.items])
            self.item_rad = np.array([it.radius() for it in self.items])
            self.item_mass = np.array(
                [it.mass if it.kind != "coin" else coin_mass
                 for it in self.items])
            self.gap_ei = (_dists(pos, self.item_pos)
                           - self.rad[:, None] - self.item_rad[None, :])
        else:
            self.item_pos = np.zeros((0, 2))
            self.item_rad = np.zeros(0)
            self.item_mass = np.zeros(0)
            self.gap_ei = np.zeros((n, 0))
        self.cake_rows = np.array([it.kind == "cake" for it in self.items],
                                  dtype=bool)


def _dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


class World:
    def __init__(self, config: WorldConfig, seed: int):
        self.config = config
        self.seed = seed
        streams = np.random.SeedSequence(seed).spawn(4)
        self.rng_physics = np.random.default_rng(streams[0])
        self.rng_genetics = np.random.default_rng(streams[1])
        self.rng_items = np.random.default_rng(streams[2])
        self.rng_policy = np.random.default_rng(streams[3])
        self.step_count = 0
        self.ents: list[EntState] = []
        self.pps: list[PPState] = []          # growing | alive | fading
        self.surface_seeds: list[PPState] = []  # collectible, submerge later
        self.dormant_seeds: list[PPState] = []  # ordered by germination step
        self.items: list[Item] = []
        self.ledger = EnergyLedger()
        self.events: list[dict] = []
        self._next_ent_id = 0
        self._next_pp_id = 0
        self._next_item_id = 0
        self.coins_spawned = 0
        self.coins_collected = 0
        self.births_total = 0
        self.deaths_total = 0
        self._competition_key = None
        self._competition_pairs = []
        self._populate()
        self.initial_assets = self.energy_assets()
        self.log_event("run_start", -1, {
            "seed": seed, "n_ents": len(self.ents), "n_pps": len(self.pps),
            "arena": config.arena_side, "item_kind": config.item_kind})

    # -- setup ---------------------------------------------------------------

    def _zone(self, fraction: float) -> tuple[float, float]:
        side = self.config.arena_side
        half = side * fraction / 2.0
        return side / 2.0 - half, side / 2.0 + half

    def _populate(self) -> None:
        cfg = self.config
        lo, hi = self._zone(cfg.pp_zone_fraction)
        for _ in range(cfg.n_pps):
            pos = self.rng_items.uniform(lo, hi, 2)
            age = self.rng_items.uniform(*cfg.pp_initial_age)
            mass = self.rng_items.uniform(*cfg.pp_initial_mass)
            self._add_pp(PPState(id=self._take_pp_id(), gene=cfg.pp_gene.copy(),
                                 pos=pos, mass=mass, age=age,
                                 phase=pp_mod.ALIVE))
        lo, hi = self._zone(cfg.ent_zone_fraction)
        g = cfg.ent_gene
        start_mass = (g.get("max_biomass") * g.get("repro_min_mass_fraction")
                      * g.get("offspring_rel_mass"))
        grown = g.get("max_biomass") * g.get("repro_min_mass_fraction")
        for _ in range(cfg.n_ents):
            pos = self.rng_items.uniform(lo, hi, 2)
            mass = start_mass
            if cfg.founder_mass_spread > 0.0:
                # desynchronize founder maturation
                mass += (self.rng_items.random() * cfg.founder_mass_spread
                         * (grown - start_mass))
            ent = EntState(id=self._take_ent_id(), gene=g.copy(), pos=pos,
                           lean_mass=mass,
                           store=g.get("offspring_energy"),
                           heading=self.rng_items.uniform(0.0, 360.0))
            ent.c2 = g.get("initial_currency")
            ent.expectations = self._initial_expectations(ent.gene)
            self.ents.append(ent)

    def _initial_expectations(self, gene: EntGene) -> rule.ExpectationTable:
        cfg = self.config
        bins = rule.n_bins(gene.get("max_age"))
        if cfg.initial_expectations is not None:
            table = rule.ExpectationTable(cfg.initial_expectations).resized(bins)
        else:
            table = rule.ExpectationTable(np.zeros((rule.N_COMPONENTS, bins)))
        if cfg.dormant_c4_noise > 0.0:
            table.values[rule.C4, :] = self.rng_genetics.uniform(
                -cfg.dormant_c4_noise, cfg.dormant_c4_noise, bins)
        return table

    def _take_ent_id(self) -> int:
        self._next_ent_id += 1
        return self._next_ent_id - 1

    def _take_pp_id(self) -> int:
        self._next_pp_id += 1
        return self._next_pp_id - 1

    def _take_item_id(self) -> int:
        self._next_item_id += 1
        return self._next_item_id - 1

    def _add_pp(self, pp: PPState) -> None:
        np.clip(pp.pos, 0.0, self.config.arena_side, out=pp.pos)
        self.pps.append(pp)

    def _schedule_seed(self, seed: PPState, surface: bool) -> None:
        np.clip(seed.pos, 0.0, self.config.arena_side, out=seed.pos)
        pause = seed.gene.get("germination_pause")
        if surface:
            seed.phase = pp_mod.SEED_SURFACE
            seed.submerge_step = self.step_count + int(
                round(pp_mod.SURFACE_SECONDS / DT))
            seed.germinate_step = seed.submerge_step + int(round(pause / DT))
            self.surface_seeds.append(seed)
        else:
            seed.phase = pp_mod.SEED_DORMANT
            seed.germinate_step = self.step_count + int(round(pause / DT))
            self.dormant_seeds.append(seed)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def time(self) -> float:
        return self.step_count * DT

    def alive_ents(self) -> list[EntState]:
        return [e for e in self.ents if e.alive]

    def log_event(self, kind: str, ent_id: int, payload: dict) -> None:
        self.events.append({"step": self.step_count, "type": kind,
                            "entId": ent_id, "payload": payload})

    def event_log_hash(self) -> str:
        h = hashlib.sha256()
        for ev in self.events:
            h.update(json.dumps(ev, sort_keys=True, default=_json_num).encode())
            h.update(b"\n")
        return h.hexdigest()

    def energy_assets(self) -> float:
        total = 0.0
        for e in self.ents:
            if not e.alive:
                continue
            rho = e.gene.get("energy_density")
            total += e.store + e.pending_energy + e.lean_mass * rho
            total += sum(b.mass * b.rho for b in e.stomach)
            total += e.raw_fruit * e.fruit_rho + e.cake * e.cake_rho
        for p in self.pps:
            total += p.mass * p.gene.get("energy_density")
        for p in self.surface_seeds:
            total += p.mass * p.gene.get("energy_density")
        for p in self.dormant_seeds:
            total += p.mass * p.gene.get("energy_density")
        for it in self.items:
            total += it.energy_equiv()
        return total

    def ledger_residual(self) -> float:
        """Conservation identity error, normalized by current assets."""
        assets = self.energy_assets()
        implied = (self.initial_assets + self.ledger.source_in
                   + self.ledger.exogenous_in - self.ledger.total_sinks()
                   - self.ledger.removed_at_death)
        return (assets - implied) / max(1.0, abs(assets))

    # -- main loop -----------------------------------------------------------

    def step(self, actions: dict[int, np.ndarray] | None = None) -> StepResult:
        """Advance the world by one 0.02 s step.

        Phase order: movement, integration, contacts (bites, gives,
        synthesis, pickups/drops, reproduction, collision damage),
        digestion, 0.25 s physiology, producer updates, coin spawns,
        expiry sweep, rewards. Changing this order changes reward and
        ledger semantics; tests pin it.
        """
        actions = actions or {}
        alive_map = {e.id: e for e in self.ents if e.alive}
        for ent_id in actions:
            if ent_id not in alive_map:
                raise ValueError(f"action supplied for dead/unknown Ent {ent_id}")
        result = StepResult()
        self.step_count += 1
        step = self.step_count

        actors = [e for e in self.ents if e.alive]
        for e in actors:
            e.reset_events()

        self._phase_movement(actors, actions)
        self._phase_integrate(actors)
        self._phase_contacts(actors, actions, result)
        self._phase_digestion(actors)
        if (PHYSIOLOGY_NUM * step) // PHYSIOLOGY_DEN \
                > (PHYSIOLOGY_NUM * (step - 1)) // PHYSIOLOGY_DEN:
            self._phase_physiology(actors)
        self._phase_producers(step)
        if step % int(round(self.config.coin_cycle_seconds / DT)) == 0:
            self._spawn_coin_batch()
        self._phase_expiry(step)
        self._phase_rewards(actors, result)
        self._finalize_deaths(actors, result)

        for e in actors:
            e.age += DT

        if self.config.log_state_digest_every and \
                step % self.config.log_state_digest_every == 0:
            self.log_event("state_digest", -1, {"digest": self._state_digest()})

        if not any(e.alive for e in self.ents):
            result.collapsed = True
            self.log_event("collapse", -1, {"time": self.time})
        return result

    def _state_digest(self) -> str:
        acc = 0.0
        for e in self.ents:
            if e.alive:
                acc += e.pos[0] + e.pos[1] * 1.7 + e.store * 3.1 \
                    + e.lean_mass * 0.37
        acc += sum(p.mass for p in self.pps) + len(self.items) * 0.11
        acc += 0.13 * (len(self.surface_seeds) + len(self.dormant_seeds))
        return repr(acc)

    # -- phases ----------------------------------------------------------

    def _phase_movement(self, actors, actions) -> None:
        for e in actors:
            act = actions.get(e.id)
            if act is None:
                continue
            e.signal = int(act[3])
            rot = int(act[4]) - 1
            force = int(act[5]) - 1
            cost = ent_mod.apply_movement(e, rot, force, DT,
                                          self.config.coin_mass)
            if cost > 0.0:
                self._charge(e, cost, ent_mod.SINK_MOVEMENT)

    def _phase_integrate(self, actors) -> None:
        cfg = self.config
        damp = math.exp(-cfg.friction * DT)
        side = cfg.arena_side
        for e in actors:
            v = e.vel
            vx = v[0] * damp
            vy = v[1] * damp
            speed = math.hypot(vx, vy)
            vmax = e.c_vmax
            if speed > vmax > 0:
                k = vmax / speed
                vx *= k
                vy *= k
            p = e.pos
            px = p[0] + vx * DT
            py = p[1] + vy * DT
            r = e._radius_cache if e._radius_cache > 0 else e.radius()
            hi = side - r
            if px < r or px > hi:
                self._wall_damage(e, abs(vx))
                px = r if px < r else hi
                vx = 0.0
            if py < r or py > hi:
                self._wall_damage(e, abs(vy))
                py = r if py < r else hi
                vy = 0.0
            p[0] = px
            p[1] = py
            v[0] = vx
            v[1] = vy

    def _wall_damage(self, e: EntState, closing_speed: float) -> None:
        if closing_speed <= 0.0:
            return
        m1 = e.total_mass(self.config.coin_mass)
        k = e.c_impact_k
        psi = e.c_psi
        # immovable wall: effective mass saturates at 10 * m1
        d = -(closing_speed * 10.0 * m1 * k) / (11.0 * m1) * m1 * psi
        self._charge(e, -d, ent_mod.SINK_COLLISION)

    # .. contacts ..........................................................

    def _phase_contacts(self, actors, actions, result) -> None:
        if not actors:
            return
        # item and seed matrices are only needed when someone may act
        # on them this step
        needs_items = any(a[0] == 1 or a[6] == 1 for a in actions.values())
        ctx = _Ctx(self, actors, light=not needs_items)
        self._resolve_collisions(ctx)
        for i, e in enumerate(actors):
            act = actions.get(e.id)
            if act is None or not e.alive:
                continue
            if act[0] == 1:
                self._do_bite(ctx, i)
            if act[1] > 0:
                self._do_give(ctx, i, int(act[1]))
            if act[2] == 1:
                self._do_synthesize(e)
            if act[6] == 1:
                self._do_pickup(ctx, i)
            if act[7] == 1:
                self._do_drop(e)
        self._do_reproduction(ctx, result)

    def _frontal(self, ctx: _Ctx, i: int, target_pos: np.ndarray,
                 rows: np.ndarray) -> np.ndarray:
        """Filter candidate rows to those ahead of actor ``i``."""
        if len(rows) == 0:
            return rows
        e = ctx.actors[i]
        phi = math.radians(e.heading)
        fwd = np.array([math.cos(phi), math.sin(phi)])
        vec = target_pos[rows] - ctx.pos[i]
        norm = np.sqrt(np.einsum("ij,ij->i", vec, vec))
        align = vec @ fwd
        keep = (norm < 1e-9) | (align >= norm
                                * math.cos(math.radians(BITE_HALF_ARC_DEG)))
        return rows[keep]

    def _do_bite(self, ctx: _Ctx, i: int) -> None:
        e = ctx.actors[i]
        if e.stomach_mass >= e.q_max:
            return
        # producers and cakes outrank live prey at equal reachability;
        # grazing has reach and works in any direction, prey needs facing
        pp_rows = np.nonzero(ctx.gap_ep[i] <= BITE_REACH)[0]
        amount = 0.0
        if len(pp_rows):
            target = ctx.pps[pp_rows[np.argmin(ctx.gap_ep[i][pp_rows])]]
            stump = self.config.pp_residual_fraction \
                * target.gene.get("max_biomass")
            amount = ent_mod.bite_size(e, max(0.0, target.mass - stump))
            if amount <= 0:
                return
            target.mass -= amount
            target.bites_since_fruit += 1
            eta = nutrition_coefficient(palatability(e.gene.keys,
                                                     target.gene.locks))
            ent_mod.ingest(e, amount, target.gene.get("energy_density"),
                           eta, DT)
        else:
            cake_rows = np.nonzero((ctx.gap_ei[i] <= BITE_REACH)
                                   & ctx.cake_rows)[0]
            cake_rows = [r for r in cake_rows
                         if ctx.items[r] in self.items
                         and ctx.items[r].mass > 0]
            if cake_rows:
                best = min(cake_rows, key=lambda r: ctx.gap_ei[i][r])
                target = ctx.items[best]
                amount = ent_mod.bite_size(e, target.mass)
                if amount <= 0:
                    return
                target.mass -= amount
                ent_mod.ingest(e, amount, target.rho, 1.0, DT)
                if target.mass <= 1e-12:
                    self.items.remove(target)
            else:
                ent_rows = self._frontal(
                    ctx, i, ctx.pos,
                    np.nonzero(ctx.gap_ee[i] <= CONTACT_SKIN)[0])
                ent_rows = [r for r in ent_rows if ctx.actors[r].alive]
                if not ent_rows:
                    return
                victim = ctx.actors[min(ent_rows,
                                        key=lambda r: ctx.gap_ee[i][r])]
                amount = ent_mod.bite_size(e, max(0.0, victim.lean_mass))
                if amount <= 0:
                    return
                victim.lean_mass -= amount
                eta = nutrition_coefficient(palatability(e.gene.keys,
                                                         victim.gene.locks))
                ent_mod.ingest(e, amount, victim.gene.get("energy_density"),
                               eta, DT)
                victim.ev_pain += victim.gene.get("reward_consumption")
                victim.ev_dirty = True
                if victim.lean_mass < victim.starvation_floor:
                    self._mark_death(victim, ent_mod.DEATH_EATEN)
        e.ev_food += amount
        e.ev_dirty = True
        if self.config.verbose_events:
            self.log_event("bite", e.id, {"mass": amount})

    def _nearest_ent(self, ctx: _Ctx, i: int) -> EntState | None:
        rows = np.nonzero(ctx.gap_ee[i] <= CONTACT_SKIN)[0]
        rows = [r for r in rows if ctx.actors[r].alive]
        if not rows:
            return None
        return ctx.actors[min(rows, key=lambda r: ctx.gap_ee[i][r])]

    def _do_give(self, ctx: _Ctx, i: int, which: int) -> None:
        e = ctx.actors[i]
        recv = self._nearest_ent(ctx, i)
        if recv is None:
            return
        g = e.gene
        ok = False
        if which == 1:
            amount = g.get("c1_amount_given")
            if e.cake >= amount:
                e.cake -= amount
                _blend_cake(recv, amount, e.cake_rho)
                e.ev_dc[0] -= amount
                recv.ev_dc[0] += amount
                ok = True
        elif which == 2:
            amount = g.get("c2_amount_given")
            recv.c2 += amount           # non-subtractable
            recv.ev_dc[1] += amount
            ok = True
        elif which == 3:
            amount = g.get("c3_amount_given")
            recv.c3 += amount           # non-subtractable
            recv.ev_dc[2] += amount
            ok = True
        elif which == 4:
            if e.coins >= 1:
                e.coins -= 1
                recv.coins += 1
                e.ev_dc[3] -= 1.0
                recv.ev_dc[3] += 1.0
                ok = True
        if ok:
            e.ev_dirty = True
            recv.ev_dirty = True
            cost = g.get("transaction_cost")
            if cost > 0:
                self._charge(e, cost, ent_mod.SINK_TRANSACTION)
            if self.config.verbose_events:
                self.log_event("give", e.id,
                               {"to": recv.id, "currency": which})

    def _do_synthesize(self, e: EntState) -> None:
        if e.raw_fruit <= 0.0:
            return
        cost = e.gene.get("synthesis_cost")
        if cost > 0:
            paid, loss, fatal = ent_mod.pay_energy(e, cost)
            self.ledger.sink(ent_mod.SINK_SYNTHESIS, paid)
            self.ledger.sink(ent_mod.SINK_CATABOLISM, loss)
            if fatal:
                self._mark_death(e, ent_mod.DEATH_STARVATION)
                return
        amount = e.raw_fruit
        _blend_cake(e, amount, e.fruit_rho)
        e.raw_fruit = 0.0
        e.ev_dc[0] += amount
        e.ev_dirty = True
        if self.config.verbose_events:
            self.log_event("synthesize", e.id, {"mass": amount})

    def _do_pickup(self, ctx: _Ctx, i: int) -> None:
        e = ctx.actors[i]
        if e.carrying_cube:
            return
        lean = e.lean_mass
        stored = ctx.stored[i]
        best = None
        best_key = (np.inf, np.inf)
        for r in np.nonzero(ctx.gap_ei[i] <= CONTACT_SKIN)[0]:
            it = ctx.items[r]
            if it not in self.items:
                continue
            m = ctx.item_mass[r]
            if m >= lean:
                continue
            if it.kind != "cube" and stored + m >= lean:
                continue
            rank = 0 if it.kind == "coin" else 1
            key = (ctx.gap_ei[i][r], rank)
            if key < best_key:
                best, best_key = it, key
        for r in np.nonzero(ctx.gap_es[i] <= CONTACT_SKIN)[0]:
            seed = ctx.seeds[r]
            if seed not in self.surface_seeds:
                continue
            if seed.mass < lean and stored + seed.mass < lean:
                key = (ctx.gap_es[i][r], 2)
                if key < best_key:
                    best, best_key = seed, key
        if best is None:
            return
        if isinstance(best, PPState):
            self.surface_seeds.remove(best)
            e.raw_fruit += best.mass
            e.fruit_rho = best.gene.get("energy_density")
            self.log_event("pickup", e.id, {"kind": "fruit",
                                            "mass": best.mass})
            return
        it: Item = best
        self.items.remove(it)
        e.ev_dirty = True
        if it.kind == "coin":
            e.coins += 1
            e.ev_dc[3] += 1.0
            self.coins_collected += 1
            if not it.spent:
                self._apply_item_effect(e)
        elif it.kind == "fruit":
            e.raw_fruit += it.mass
            e.fruit_rho = it.rho
        elif it.kind == "cake":
            _blend_cake(e, it.mass, it.rho)
            e.ev_dc[0] += it.mass
        elif it.kind == "cube":
            e.carrying_cube = True
            e.cube_mass = it.mass
        self.log_event("pickup", e.id, {"kind": it.kind})

    def _apply_item_effect(self, e: EntState) -> None:
        d_c0, mult = self.config.item_effect()
        if d_c0 > 0:
            e.store += d_c0
            self.ledger.exogenous_in += d_c0
        elif d_c0 < 0:
            drained = min(e.store, -d_c0)   # stored energy floors at zero
            e.store -= drained
            self.ledger.sink(ent_mod.SINK_POISON, drained)
        if mult != 1.0:
            e.repro_boost = mult
            e.repro_boost_until = self.time + self.config.item_effect_seconds

    def _do_drop(self, e: EntState) -> None:
        e.ev_dirty = True
        pos = e.pos.copy()
        if e.carrying_cube:
            e.carrying_cube = False
            self.items.append(Item(self._take_item_id(), "cube", pos,
                                   mass=e.cube_mass))
            e.cube_mass = 0.0
            kind = "cube"
        elif e.cake > 0:
            self.items.append(Item(self._take_item_id(), "cake", pos,
                                   mass=e.cake, rho=e.cake_rho))
            e.ev_dc[0] -= e.cake
            e.cake = 0.0
            kind = "cake"
        elif e.raw_fruit > 0:
            self.items.append(Item(self._take_item_id(), "fruit", pos,
                                   mass=e.raw_fruit, rho=e.fruit_rho))
            e.raw_fruit = 0.0
            kind = "fruit"
        elif e.coins > 0:
            e.coins -= 1
            e.ev_dc[3] -= 1.0
            expiry = self.step_count + int(round(
                self.config.dropped_item_lifetime / DT))
            self.items.append(Item(self._take_item_id(), "coin", pos,
                                   mass=self.config.coin_mass,
                                   expiry_step=expiry, spent=True))
            kind = "coin"
        else:
            return
        if self.config.verbose_events:
            self.log_event("drop", e.id, {"kind": kind})

    def _do_reproduction(self, ctx: _Ctx, result) -> None:
        for i, mother in enumerate(ctx.actors):
            if not (mother.alive and mother.mother):
                continue
            father = self._nearest_ent(ctx, i)
            if father is None:
                continue
            self._try_birth(mother, father, result)

    def _try_birth(self, mother: EntState, father: EntState, result) -> None:
        if not compatible(mother.gene, father.gene):
            return
        cost = mother.birth_cost()
        if mother.store < cost:
            mother.mother = False
            return
        mother.store -= cost
        g = mother.gene
        child_gene = inherit(mother.gene, father.gene, self.rng_genetics,
                             evolution=self.config.evolution)
        new_theta, new_table = rule.on_reproduction(
            g.thetas, mother.ledger, mother.expectations, mother.age,
            g.get("max_age"), g.alphas, g.betas, mode=self.config.rule_mode)
        mother.gene.set_thetas(new_theta)
        mother.expectations = new_table
        child_gene.set_thetas(new_theta)

        m_off = g.get("max_biomass") * g.get("offspring_rel_mass")
        angle = self.rng_genetics.uniform(0.0, 2.0 * np.pi)
        offset = (mother.radius() + ent_mod.body_radius(m_off) + 0.02)
        pos = mother.pos + offset * np.array([np.cos(angle), np.sin(angle)])
        np.clip(pos, 0.0, self.config.arena_side, out=pos)
        child = EntState(
            id=self._take_ent_id(), gene=child_gene, pos=pos,
            lean_mass=m_off, store=g.get("offspring_energy"),
            heading=self.rng_genetics.uniform(0.0, 360.0),
            mother_id=mother.id)
        child.c2 = child_gene.get("initial_currency")
        cake_grant = min(mother.cake, child_gene.get("initial_currency"))
        if cake_grant > 0:
            mother.cake -= cake_grant
            child.cake, child.cake_rho = cake_grant, mother.cake_rho
        child.expectations = new_table.copy().resized(
            rule.n_bins(child_gene.get("max_age")))
        self.ents.append(child)

        mother.mother = False
        mother.births += 1
        mother.ev_births += 1.0
        father.ev_births += 1.0
        mother.ev_dirty = True
        father.ev_dirty = True
        self.births_total += 1
        result.births.append(child.id)
        self.log_event("birth", child.id, {
            "mother": mother.id, "father": father.id,
            "mother_age": mother.age,
            "theta": [float(x) for x in new_theta],
            "gene": [float(x) for x in child_gene.values]})
        if self.config.rule_mode == rule.MODE_FULL:
            self.log_event("theta_change", mother.id,
                           {"theta": [float(x) for x in new_theta]})

    def _resolve_collisions(self, ctx: _Ctx) -> None:
        ii, jj = np.nonzero(np.triu(ctx.gap_ee < 0.0, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            self._collide_pair(ctx.actors[i], ctx.actors[j],
                               float(ctx.mass[i]), float(ctx.mass[j]),
                               float(ctx.rad[i]), float(ctx.rad[j]))
        if ctx.gap_ep.size:
            ii, jj = np.nonzero(ctx.gap_ep < 0.0)
            for i, j in zip(ii.tolist(), jj.tolist()):
                self._collide_with_pp(ctx.actors[i], ctx.pps[j],
                                      float(ctx.pp_rad[j]),
                                      float(ctx.mass[i]),
                                      float(ctx.rad[i]))

    def _collide_pair(self, a: EntState, b: EntState,
                      m_a: float, m_b: float, r_a: float, r_b) -> None:
        cx = (a.pos[0] + b.pos[0]) / 2.0
        cy = (a.pos[1] + b.pos[1]) / 2.0
        for this, m1, m2 in ((a, m_a, m_b), (b, m_b, m_a)):
            dx, dy = cx - this.pos[0], cy - this.pos[1]
            norm = math.hypot(dx, dy)
            if norm <= 1e-12:
                continue
            v_line = (dx * this.vel[0] + dy * this.vel[1]) / norm
            if v_line <= 0.0:
                continue
            m_eff = min(10.0 * m1, m2)
            dmg = (v_line * m_eff * this.c_impact_k) / (m1 + m_eff) \
                * m1 * this.c_psi
            self._charge(this, dmg, ent_mod.SINK_COLLISION)
        self._separate(a, b, m_a, m_b, r_a, r_b)

    def _collide_with_pp(self, e: EntState, p: PPState, p_rad: float,
                         m1: float, e_rad: float) -> None:
        dx, dy = p.pos[0] - e.pos[0], p.pos[1] - e.pos[1]
        norm = math.hypot(dx, dy)
        if norm > 1e-12:
            v_line = (dx * e.vel[0] + dy * e.vel[1]) / norm
            if v_line > 0.0:
                m_eff = min(10.0 * m1, p.mass)
                dmg = (v_line * m_eff * e.c_impact_k) / (m1 + m_eff) \
                    * m1 * e.c_psi
                self._charge(e, dmg, ent_mod.SINK_COLLISION)
        # producers do not move; push the Ent out
        overlap = e_rad + p_rad - norm
        if overlap > 0 and norm > 1e-9:
            nx, ny = dx / norm, dy / norm
            e.pos[0] -= nx * overlap
            e.pos[1] -= ny * overlap
            approach = e.vel[0] * nx + e.vel[1] * ny
            if approach > 0:
                e.vel[0] -= nx * approach
                e.vel[1] -= ny * approach

    def _separate(self, a: EntState, b: EntState, m_a: float, m_b,
                  r_a: float | None = None, r_b: float | None = None) -> None:
        dx, dy = b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]
        dist = math.hypot(dx, dy)
        if r_a is None:
            r_a, r_b = a.radius(), b.radius()
        overlap = r_a + r_b - dist
        if overlap <= 0:
            return
        if dist < 1e-9:
            dx, dy, dist = 1.0, 0.0, 1.0
        nx, ny = dx / dist, dy / dist
        share_a = m_b / (m_a + m_b)
        a.pos[0] -= nx * overlap * share_a
        a.pos[1] -= ny * overlap * share_a
        b.pos[0] += nx * overlap * (1.0 - share_a)
        b.pos[1] += ny * overlap * (1.0 - share_a)
        # kill the closing component so discs do not re-penetrate
        closing = (a.vel[0] - b.vel[0]) * nx + (a.vel[1] - b.vel[1]) * ny
        if closing > 0:
            a.vel[0] -= nx * closing * (1.0 - share_a)
            a.vel[1] -= ny * closing * (1.0 - share_a)
            b.vel[0] += nx * closing * share_a
            b.vel[1] += ny * closing * share_a

    # .. per-step internal updates .........................................

    def _phase_digestion(self, actors) -> None:
        for e in actors:
            if not e.alive or e.stomach_mass <= 0.0:
                continue
            res = ent_mod.digest_tick(e)
            if res.mass <= 0.0:
                continue
            if res.energy >= 0.0:
                e.pending_energy += res.energy
                self.ledger.sink(ent_mod.SINK_DIGESTION,
                                 res.source_equiv - res.energy)
            else:
                paid, loss, fatal = ent_mod.pay_energy(e, -res.energy)
                self.ledger.sink(ent_mod.SINK_DIGESTION,
                                 res.source_equiv + paid)
                self.ledger.sink(ent_mod.SINK_CATABOLISM, loss)
                if fatal:
                    self._mark_death(e, ent_mod.DEATH_STARVATION)

    def _phase_physiology(self, actors) -> None:
        for e in actors:
            if not e.alive:
                continue
            ent_mod.route_pending_energy(e)
            paid, loss, fatal = ent_mod.pay_energy(e, ent_mod.metabolic_cost(e))
            self.ledger.sink(ent_mod.SINK_METABOLISM, paid)
            self.ledger.sink(ent_mod.SINK_CATABOLISM, loss)
            if fatal:
                self._mark_death(e, ent_mod.DEATH_STARVATION)
                continue
            if e.age >= e.c_max_age:
                self._mark_death(e, ent_mod.DEATH_OLD_AGE)
                continue
            ent_mod.update_mother_state(e, self.rng_genetics, self.time)

    def _phase_producers(self, step: int) -> None:
        # surface seeds submerge on schedule, dormant ones germinate
        if self.surface_seeds:
            keep = []
            for seed in self.surface_seeds:
                if step >= seed.submerge_step:
                    seed.phase = pp_mod.SEED_DORMANT
                    self.dormant_seeds.append(seed)
                else:
                    keep.append(seed)
            if len(keep) != len(self.surface_seeds):
                self.surface_seeds = keep
                self.dormant_seeds.sort(key=lambda p: p.germinate_step)
        while self.dormant_seeds \
                and self.dormant_seeds[0].germinate_step <= step:
            seed = self.dormant_seeds.pop(0)
            seed.phase = pp_mod.GROWING
            seed.age = 0.0
            self._add_pp(seed)
            self.log_event("pp_germinated", seed.id, {})

        grow_now = step % PP_UPDATE_STEPS == 0
        new_seeds: list[tuple[PPState, np.ndarray]] = []
        rolls = self.rng_items.random(len(self.pps)) if self.pps else None
        light = self.config.light
        for k, p in enumerate(self.pps):
            p.age += DT
            if p.phase == pp_mod.FADING:
                self.ledger.removed_at_death += (
                    pp_mod.fade_step(p, DT) * p.c_rho)
            else:
                if grow_now:
                    added = pp_mod.grow(p, light, DT, PP_UPDATE_STEPS)
                    self.ledger.source_in += added * p.c_rho
                if p.phase == pp_mod.ALIVE:
                    r_max = p.c_r_max
                    if p.repro_prob < r_max:
                        inc = ((p.mass / p.c_max_bio + p.bites_since_fruit)
                               * p.c_r_inc)
                        p.repro_prob = min(p.repro_prob + inc, r_max)
                    if p.mass > pp_mod.SEED_MASS and rolls[k] < p.repro_prob:
                        p.bites_since_fruit = 0
                        pos = pp_mod.fruit_drop_position(p, self.rng_items)
                        new_seeds.append((p, pos))
        for parent, pos in new_seeds:
            parent.mass -= pp_mod.SEED_MASS
            surface = self.rng_items.random() \
                < parent.gene.get("surface_seed_fraction")
            seed = PPState(id=self._take_pp_id(), gene=parent.gene.copy(),
                           pos=pos, mass=pp_mod.SEED_MASS,
                           phase=pp_mod.SEED_DORMANT)
            self._schedule_seed(seed, surface)
        for loser in self._competition_sweep():
            pp_mod.start_fading(loser, pp_mod.DEATH_COMPETITION)
            self.log_event("pp_died", loser.id, {"cause": "competition"})
        removed = []
        for p in self.pps:
            if p.phase in (pp_mod.ALIVE, pp_mod.GROWING):
                pp_mod.death_check(p)
                if p.phase == pp_mod.FADING:
                    self.log_event("pp_died", p.id, {"cause": p.death_cause})
            if p.phase == pp_mod.FADING and p.mass <= 0.0:
                removed.append(p)
        if removed:
            gone = set(id(p) for p in removed)
            self.pps = [p for p in self.pps if id(p) not in gone]

    def _competition_sweep(self):
        """Spacing competition using cached close pairs.

        Producers never move, so candidate pairs only change when the
        alive set changes; kill rolls still happen every step.
        """
        alive = [p for p in self.pps if p.phase == pp_mod.ALIVE]
        key = len(alive) and (len(self.pps), self._next_pp_id,
                              len(alive))
        if key != self._competition_key:
            self._competition_key = key
            self._competition_pairs = []
            if len(alive) >= 2:
                r_outer = 0.005 * alive[0].c_max_bio \
                    * alive[0].gene.get("exclusion_height_ratio")
                pos = np.array([p.pos for p in alive])
                d = pos[:, None, :] - pos[None, :, :]
                d2 = np.einsum("ijk,ijk->ij", d, d)
                ii, jj = np.nonzero(np.triu(d2 < r_outer * r_outer, k=1))
                self._competition_pairs = [
                    (alive[i], alive[j])
                    for i, j in zip(ii.tolist(), jj.tolist())]
        doomed = {}
        for a, b in self._competition_pairs:
            if a.phase != pp_mod.ALIVE or b.phase != pp_mod.ALIVE:
                continue
            if self.rng_items.random() >= 0.10:
                continue
            if a.mass > b.mass:
                loser = b
            elif b.mass > a.mass:
                loser = a
            else:
                loser = b if a.id < b.id else a
            doomed[loser.id] = loser
        return list(doomed.values())

    def coin_count_for_time(self, t: float) -> int:
        cfg = self.config
        if cfg.coin_schedule == "linear":
            return int(cfg.coins_per_cycle + cfg.coin_slope * t + 0.5)
        return int(cfg.coins_per_cycle + 0.5)

    def _spawn_coin_batch(self) -> None:
        n = self.coin_count_for_time(self.time)
        if n <= 0:
            return
        lo, hi = self._zone(self.config.coin_zone_fraction)
        expiry = self.step_count + int(round(self.config.coin_lifetime / DT))
        for _ in range(n):
            pos = self.rng_items.uniform(lo, hi, 2)
            self.items.append(Item(self._take_item_id(), "coin", pos,
                                   mass=self.config.coin_mass,
                                   expiry_step=expiry))
        self.coins_spawned += n
        self.log_event("coin_spawn", -1, {"count": n})

    def _phase_expiry(self, step: int) -> None:
        kept = []
        for it in self.items:
            if it.expiry_step is not None and step >= it.expiry_step:
                self.ledger.removed_at_death += it.energy_equiv()
            else:
                kept.append(it)
        if len(kept) != len(self.items):
            self.items = kept

    def _phase_rewards(self, actors, result) -> None:
        for e in actors:
            if not e.alive and e.death_cause != ent_mod.DEATH_OLD_AGE:
                e.ev_pain += 1.0   # premature death
                e.ev_dirty = True
            if e.ev_dirty:
                components, total = ent_mod.reward_step(e)
                e.ledger.accumulate(components)
                result.rewards[e.id] = (components, total)
            else:
                result.rewards[e.id] = _ZERO_REWARD

    def _mark_death(self, e: EntState, cause: str) -> None:
        if not e.alive:
            return
        e.alive = False
        e.death_cause = cause

    def _finalize_deaths(self, actors, result) -> None:
        dead = [e for e in actors if not e.alive]
        if not dead:
            return
        for e in dead:
            rho = e.gene.get("energy_density")
            removed = (e.store + e.pending_energy + e.lean_mass * rho
                       + sum(b.mass * b.rho for b in e.stomach)
                       + e.raw_fruit * e.fruit_rho + e.cake * e.cake_rho)
            self.ledger.removed_at_death += removed
            if e.coins > 0:
                expiry = self.step_count + int(round(
                    self.config.dropped_item_lifetime / DT))
                for _ in range(e.coins):
                    self.items.append(Item(
                        self._take_item_id(), "coin", e.pos.copy(),
                        mass=self.config.coin_mass, expiry_step=expiry,
                        spent=True))
                e.coins = 0
            if e.carrying_cube:
                self.items.append(Item(self._take_item_id(), "cube",
                                       e.pos.copy(), mass=e.cube_mass))
                e.carrying_cube = False
            self.deaths_total += 1
            result.deaths.append((e.id, e.death_cause))
            self.log_event("death", e.id, {"cause": e.death_cause,
                                           "age": e.age})
        self.ents = [e for e in self.ents if e.alive]

    def _charge(self, e: EntState, amount: float, category: str) -> None:
        if e.store >= amount:          # fast path, no catabolism needed
            e.store -= amount
            self.ledger.sinks[category] += amount
            return
        paid, loss, fatal = ent_mod.pay_energy(e, amount)
        self.ledger.sink(category, paid)
        self.ledger.sink(ent_mod.SINK_CATABOLISM, loss)
        if fatal:
            self._mark_death(e, ent_mod.DEATH_STARVATION)

    # -- observations and masks -------------------------------------------

    def observe(self) -> tuple[list[int], np.ndarray, np.ndarray]:
        """Observations and action masks for every living Ent.

        Returns (ids, obs[N, OBS_SIZE], masks[N, MASK_SIZE]).
        """
        actors = self.alive_ents()
        n = len(actors)
        obs = np.zeros((n, OBS_SIZE))
        masks = np.zeros((n, MASK_SIZE), dtype=bool)
        if n == 0:
            return [], obs, masks
        ctx = _Ctx(self, actors)
        self._fill_base_obs(ctx, obs)
        self._fill_rays(ctx, obs)
        self._fill_masks(ctx, masks)
        return [e.id for e in actors], obs, masks

    def _fill_base_obs(self, ctx: _Ctx, obs) -> None:
        actors = ctx.actors
        pos = ctx.pos
        n = len(actors)
        for i, e in enumerate(actors):
            g = e.gene
            vmax = max(g.get("max_velocity"), 1e-9)
            obs[i, 0] = min(max((e.vel[0] / vmax + 1.0) / 2.0, 0.0), 1.0)
            obs[i, 1] = min(max((e.vel[1] / vmax + 1.0) / 2.0, 0.0), 1.0)
            obs[i, 2] = e.heading / 360.0
            obs[i, 3] = ent_mod.starvation_level(e)
            obs[i, 4] = 1.0 if e.raw_fruit > 0 else 0.0
            obs[i, 5] = 1.0 if e.cake > 0 else 0.0
            obs[i, 6] = 1.0 if e.carrying_cube else 0.0
            obs[i, 7] = 1.0 if e.mother else 0.0
            obs[i, 8] = min(e.store / 100.0, 1.0)
            obs[i, 9] = min(e.cake / 100.0, 1.0)
            obs[i, 10] = min(e.c2 / 100.0, 1.0)
            obs[i, 11] = min(e.c3 / 100.0, 1.0)
            obs[i, 12] = min(e.coins / 100.0, 1.0)
            obs[i, 20] = -1.0 if e.ev_pain > 0 else 0.0
            obs[i, 21] = self.config.light
        if n > 1:
            dist = ctx.gap_ee + ctx.rad[:, None] + ctx.rad[None, :]
            np.fill_diagonal(dist, np.inf)
            signals = np.array([e.signal for e in actors])
            for i, e in enumerate(actors):
                radius = e.gene.get("sensing_radius")
                within = np.nonzero(dist[i] <= radius)[0]
                obs[i, 19] = len(within) / 100.0
                if len(within):
                    nearest = int(within[np.argmin(dist[i][within])])
                    obs[i, 16] = genetic_distance(e.gene,
                                                  actors[nearest].gene)
                heard = within[signals[within] > 0]
                if len(heard):
                    j = int(heard[np.argmin(dist[i][heard])])
                    obs[i, 13 + actors[j].signal] = 1.0
                    obs[i, 17] = dist[i][j] / max(radius, 1e-9)
                    bearing = math.degrees(math.atan2(
                        pos[j][1] - pos[i][1], pos[j][0] - pos[i][0]))
                    obs[i, 18] = ((bearing - e.heading) % 360.0) / 360.0
                else:
                    obs[i, 13] = 1.0
        else:
            obs[:, 13] = 1.0

    def _fill_rays(self, ctx: _Ctx, obs) -> None:
        actors = ctx.actors
        n = len(actors)
        length = ray_length(self.config.light)
        headings = np.array([e.heading for e in actors])
        offsets = np.linspace(-RAY_HALF_FOV, RAY_HALF_FOV, RAY_COUNT)
        angles = np.deg2rad(headings[:, None] + offsets[None, :])
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)  # (n,17,2)
        origin = ctx.pos

        # object table: other ents, producers, surface seeds, loose items
        blocks = [(ctx.pos, ctx.rad, np.zeros(n, dtype=int),
                   np.arange(n))]
        if ctx.pps:
            blocks.append((ctx.pp_pos, ctx.pp_rad,
                           np.full(len(ctx.pps), 1, dtype=int),
                           np.full(len(ctx.pps), -1)))
        if ctx.seeds:
            blocks.append((ctx.seed_pos,
                           np.full(len(ctx.seeds), SEED_RADIUS),
                           np.full(len(ctx.seeds), 2, dtype=int),
                           np.full(len(ctx.seeds), -1)))
        if ctx.items:
            cls = np.array([KIND_TO_CLASS[it.kind] for it in ctx.items],
                           dtype=int)
            blocks.append((ctx.item_pos, ctx.item_rad, cls,
                           np.full(len(ctx.items), -1)))
        opos = np.concatenate([b[0] for b in blocks])
        orad = np.concatenate([b[1] for b in blocks])
        ocls = np.concatenate([b[2] for b in blocks])
        owner = np.concatenate([b[3] for b in blocks])

        opos32 = opos.astype(np.float32)
        origin32 = origin.astype(np.float32)
        dirs32 = dirs.astype(np.float32)
        delta = opos32[None, None, :, :] - origin32[:, None, None, :]
        t = np.einsum("abmk,abk->abm", delta, dirs32)
        d2 = np.einsum("abmk,abmk->abm", delta, delta) - t * t
        reach = ((orad + RAY_CONE_RADIUS) ** 2).astype(np.float32)
        hit = (t > 0.0) & (d2 <= reach[None, None, :])
        hit &= owner[None, None, :] != np.arange(n)[:, None, None]
        entry = t - np.sqrt(np.maximum(reach[None, None, :] - d2, 0.0))
        entry = np.maximum(entry, 0.0, out=entry)
        entry[~hit] = np.inf
        entry[entry > length] = np.inf
        idx = np.argmin(entry, axis=-1)
        best_dist = np.take_along_axis(entry, idx[:, :, None],
                                       axis=-1)[:, :, 0]
        got = np.isfinite(best_dist)
        best_cls = np.where(got, ocls[idx], -1)

        wall = self._wall_distance(origin, dirs)
        use_wall = (wall <= length) & (wall < best_dist)
        best_dist = np.where(use_wall, wall, best_dist)
        best_cls = np.where(use_wall, len(RAY_CLASSES) - 1, best_cls)

        hit_any = np.isfinite(best_dist)
        block = np.zeros((n, RAY_COUNT, RAY_FIELDS))
        block[:, :, 0] = hit_any
        onehot = (best_cls[:, :, None] == np.arange(len(RAY_CLASSES)))
        block[:, :, 1:1 + len(RAY_CLASSES)] = onehot & hit_any[:, :, None]
        block[:, :, -1] = np.where(hit_any,
                                   np.minimum(best_dist / length, 1.0), 1.0)
        obs[:, BASE_OBS:] = block.reshape(n, -1)

    def _wall_distance(self, origin, dirs) -> np.ndarray:
        side = self.config.arena_side
        with np.errstate(divide="ignore", invalid="ignore"):
            tx_hi = (side - origin[:, None, 0]) / dirs[:, :, 0]
            tx_lo = (0.0 - origin[:, None, 0]) / dirs[:, :, 0]
            ty_hi = (side - origin[:, None, 1]) / dirs[:, :, 1]
            ty_lo = (0.0 - origin[:, None, 1]) / dirs[:, :, 1]
        stack = np.stack([tx_hi, tx_lo, ty_hi, ty_lo], axis=-1)
        stack[~np.isfinite(stack)] = np.inf
        stack[stack < 0] = np.inf
        return np.min(stack, axis=-1)

    def _fill_masks(self, ctx: _Ctx, masks) -> None:
        actors = ctx.actors
        n = len(actors)
        off = BRANCH_OFFSETS
        masks[:, list(off)] = True               # every no-op is legal
        masks[:, off[3]:off[3] + 3] = True       # signals
        masks[:, off[4]:off[4] + 3] = True       # rotation
        masks[:, off[5]:off[5] + 3] = True       # force

        touching_ent = (ctx.gap_ee <= CONTACT_SKIN).any(axis=1) \
            if ctx.gap_ee.size else np.zeros(n, dtype=bool)
        touching_pp = (ctx.gap_ep <= BITE_REACH).any(axis=1) \
            if ctx.gap_ep.size else np.zeros(n, dtype=bool)
        if ctx.gap_ei.size:
            touching_cake = ((ctx.gap_ei <= BITE_REACH)
                             & ctx.cake_rows[None, :]).any(axis=1)
        else:
            touching_cake = np.zeros(n, dtype=bool)
        room = np.array([e.stomach_mass < e.q_max for e in actors])
        masks[:, off[0] + 1] = (touching_ent | touching_pp
                                | touching_cake) & room

        cake_held = np.array([e.cake for e in actors])
        coins_held = np.array([e.coins for e in actors])
        give_amounts = np.array([e.gene.get("c1_amount_given")
                                 for e in actors])
        masks[:, off[1] + 1] = touching_ent & (cake_held >= give_amounts)
        masks[:, off[1] + 2] = touching_ent
        masks[:, off[1] + 3] = touching_ent
        masks[:, off[1] + 4] = touching_ent & (coins_held >= 1)

        raw = np.array([e.raw_fruit > 0 for e in actors])
        masks[:, off[2] + 1] = raw

        carrying = np.array([e.carrying_cube for e in actors])
        if ctx.gap_ei.size:
            eligible = ctx.item_mass[None, :] < ctx.lean[:, None]
            not_cube = np.array([it.kind != "cube" for it in ctx.items])
            fits = (ctx.stored[:, None] + ctx.item_mass[None, :]
                    < ctx.lean[:, None])
            eligible &= np.where(not_cube[None, :], fits, True)
            can_pick = ((ctx.gap_ei <= CONTACT_SKIN) & eligible).any(axis=1)
        else:
            can_pick = np.zeros(n, dtype=bool)
        if ctx.gap_es.size:
            seed_mass = np.array([p.mass for p in ctx.seeds])
            ok = ((seed_mass[None, :] < ctx.lean[:, None])
                  & (ctx.stored[:, None] + seed_mass[None, :]
                     < ctx.lean[:, None]))
            can_pick |= ((ctx.gap_es <= CONTACT_SKIN) & ok).any(axis=1)
        masks[:, off[6] + 1] = can_pick & ~carrying

        droppable = np.array([e.carrying_cube or e.cake > 0
                              or e.raw_fruit > 0 or e.coins > 0
                              for e in actors])
        masks[:, off[7] + 1] = droppable


def _blend_cake(e: EntState, mass: float, rho: float) -> None:
    total = e.cake + mass
    if total > 0:
        e.cake_rho = (e.cake * e.cake_rho + mass * rho) / total
    e.cake = total


def _json_num(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x)}")
