"""Ent bodies: energy budget, digestion, movement, reproduction.

Everything here is per-entity state plus pure-ish update helpers; the
world module owns scheduling, contacts and the energy ledger hooks.
Energy lives in one store (C0). Costs drain the store first and then
catabolize lean mass at reduced efficiency until the starvation floor
is reached, at which point the Ent dies. Income arrives from digestion
in per-step increments and is split between growth and storage at the
slower physiology cadence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rule
from .genome import EntGene, nutrition_coefficient

PHYSIOLOGY_SECONDS = 0.25
WATER_DENSITY = 1000.0  # kg/m^3; bodies are water-density spheres

# Death causes
DEATH_STARVATION = "starvation"
DEATH_EATEN = "eaten"
DEATH_OLD_AGE = "old_age"

# Ledger sink categories (shared with the world ledger)
SINK_METABOLISM = "metabolism"
SINK_MOVEMENT = "movement"
SINK_COLLISION = "collision"
SINK_SYNTHESIS = "synthesis"
SINK_TRANSACTION = "transaction"
SINK_BIRTH = "birth"
SINK_POISON = "poison"
SINK_DIGESTION = "digestion"
SINK_CATABOLISM = "catabolism"


def body_radius(mass: float) -> float:
    """Disc radius of a water-density sphere of the given mass."""
    return float((3.0 * max(mass, 1e-9) / (4.0 * np.pi * WATER_DENSITY))
                 ** (1.0 / 3.0))


@dataclass
class StomachBatch:
    mass: float
    rho: float   # energy density of the source material
    eta: float   # nutrition coefficient at bite time


@dataclass
class EntState:
    id: int
    gene: EntGene
    pos: np.ndarray
    lean_mass: float
    store: float                       # C0, stored energy
    heading: float = 0.0               # degrees
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    age: float = 0.0
    stomach: list = field(default_factory=list)
    stomach_mass: float = 0.0
    digest_dq: float = 0.0             # per-step digestion increment
    pending_energy: float = 0.0        # digested energy awaiting routing
    peak_mass: float = 0.0
    starvation_floor: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    coins: int = 0
    raw_fruit: float = 0.0
    fruit_rho: float = 5.0
    cake: float = 0.0
    cake_rho: float = 5.0
    carrying_cube: bool = False
    cube_mass: float = 0.0
    mother: bool = False
    births: int = 0
    signal: int = 0
    repro_boost: float = 1.0
    repro_boost_until: float = 0.0
    ledger: rule.RewardLedger = field(default_factory=rule.RewardLedger)
    expectations: rule.ExpectationTable = None
    alive: bool = True
    death_cause: str | None = None
    mother_id: int = -1
    _radius_cache: float = 0.0
    _inv_mass: float = 0.0
    # per-step reward events, reset by the world each step
    ev_food: float = 0.0
    ev_births: float = 0.0
    ev_pain: float = 0.0
    ev_dirty: bool = False
    ev_dc: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64).copy()
        self.vel = np.asarray(self.vel, dtype=np.float64).copy()
        self.peak_mass = max(self.peak_mass, self.lean_mass)
        self.starvation_floor = max(
            self.starvation_floor,
            self.lean_mass * self.gene.get("starvation_mass_fraction"))
        if self.expectations is None:
            self.expectations = rule.ExpectationTable.zeros(
                self.gene.get("max_age"))
        self._cache_gene_constants()

    def _cache_gene_constants(self) -> None:
        # physiology slots never change after birth; only the reward
        # coefficients do, and those are always read via the gene
        g = self.gene
        self.c_rho = g.get("energy_density")
        self.c_q_ratio = g.get("stomach_mass_ratio")
        self.c_vmax = g.get("max_velocity")
        self.c_rot_time = g.get("rotation_time")
        self.c_fmax = g.get("max_force_per_kg")
        self.c_move_rate = g.get("movement_cost_rate")
        self.c_psi = g.get("self_mass_conversion")
        self.c_impact_k = g.get("impact_damage_coeff")
        self.c_max_bio = g.get("max_biomass")
        self.c_max_age = g.get("max_age")
        self.c_f_starv = g.get("starvation_mass_fraction")
        self.c_d_rate = g.get("digestion_rate")
        self.c_xi = g.get("conversion_efficiency")

    # -- derived quantities -------------------------------------------------

    @property
    def q_max(self) -> float:
        return self.lean_mass * self.c_q_ratio

    @property
    def fat_mass(self) -> float:
        return self.store / self.c_rho if self.c_rho > 0 else 0.0

    def inventory_mass(self, coin_mass: float) -> float:
        m = self.raw_fruit + self.cake + self.coins * coin_mass
        if self.carrying_cube:
            m += self.cube_mass
        return m

    def total_mass(self, coin_mass: float = 0.0) -> float:
        return (self.lean_mass + self.fat_mass + self.stomach_mass
                + self.inventory_mass(coin_mass))

    def radius(self) -> float:
        return body_radius(self.lean_mass + self.fat_mass + self.stomach_mass)

    @property
    def fully_grown(self) -> bool:
        return self.lean_mass >= self.gene.get("max_biomass")

    def birth_cost(self) -> float:
        g = self.gene
        m_off = g.get("max_biomass") * g.get("offspring_rel_mass")
        return (g.get("offspring_per_reproduction") * m_off
                * g.get("energy_density") + g.get("offspring_energy"))

    def reset_events(self) -> None:
        if self.ev_dirty:
            self.ev_food = 0.0
            self.ev_births = 0.0
            self.ev_pain = 0.0
            self.ev_dc[:] = 0.0
            self.ev_dirty = False


# -- energy ------------------------------------------------------------------

def metabolic_cost(ent: EntState) -> float:
    """Positive base running cost for one physiology tick."""
    rate = ent.gene.get("base_metabolic_rate")
    return -rate * ent.lean_mass ** (2.0 / 3.0)


def catabolize(ent: EntState, deficit: float) -> tuple[float, float]:
    """Convert lean mass to energy to cover ``deficit``.

    Returns (energy released, conversion loss). Stops at the starvation
    floor; the caller decides whether the shortfall is fatal.
    """
    psi = ent.c_psi
    rho = ent.c_rho
    if psi <= 0 or rho <= 0:
        return 0.0, 0.0
    available = max(0.0, ent.lean_mass - ent.starvation_floor)
    mass_needed = deficit / (rho * psi)
    mass_used = min(mass_needed, available)
    ent.lean_mass -= mass_used
    released = mass_used * rho * psi
    loss = mass_used * rho - released
    return released, loss


def pay_energy(ent: EntState, amount: float) -> tuple[float, float, bool]:
    """Drain ``amount`` of energy, catabolizing lean mass when short.

    Returns (paid, catabolism loss, fatal). ``fatal`` means the store
    and all disposable lean mass were exhausted before the bill was
    met; the Ent has starved.
    """
    if amount <= 0.0:
        return 0.0, 0.0, False
    if ent.store >= amount:
        ent.store -= amount
        return amount, 0.0, False
    deficit = amount - ent.store
    paid = ent.store
    ent.store = 0.0
    released, loss = catabolize(ent, deficit)
    paid += released
    fatal = released < deficit - 1e-12
    if fatal:
        # the unpayable remainder pushes lean mass through the floor
        ent.lean_mass = np.nextafter(ent.starvation_floor, -np.inf)
    return paid, loss, fatal


def bite_size(ent: EntState, target_mass: float) -> float:
    """Mass one bite moves into the stomach."""
    return max(0.0, min(ent.q_max - ent.stomach_mass, target_mass))


def ingest(ent: EntState, mass: float, rho: float, eta: float,
           dt: float = 0.02) -> None:
    """Add bitten mass to the stomach and restart the digestion clock."""
    if mass <= 0.0:
        return
    ent.stomach.append(StomachBatch(mass, rho, eta))
    ent.stomach_mass += mass
    _reset_digestion_rate(ent, dt)


def _reset_digestion_rate(ent: EntState, dt: float) -> None:
    q, q_max = ent.stomach_mass, ent.q_max
    d_r = ent.c_d_rate
    if q <= 0.0 or q_max <= 0.0 or d_r <= 0.0:
        ent.digest_dq = 0.0
        return
    t_dig = q / (q_max * d_r)          # seconds to clear the current load
    ent.digest_dq = q_max * dt / t_dig  # q_max / (50 t_dig) at dt = 0.02


@dataclass
class DigestResult:
    energy: float = 0.0       # signed energy released to the Ent
    mass: float = 0.0         # stomach mass processed
    source_equiv: float = 0.0  # energy-equivalent of that mass


def digest_tick(ent: EntState) -> DigestResult:
    """Process one digestion increment from the front of the stomach."""
    res = DigestResult()
    if ent.stomach_mass <= 0.0 or ent.digest_dq <= 0.0:
        return res
    xi = ent.c_xi
    remaining = min(ent.digest_dq, ent.stomach_mass)
    while remaining > 1e-15 and ent.stomach:
        batch = ent.stomach[0]
        take = min(remaining, batch.mass)
        batch.mass -= take
        remaining -= take
        res.mass += take
        res.source_equiv += take * batch.rho
        res.energy += take * batch.rho * xi * batch.eta
        if batch.mass <= 1e-15:
            ent.stomach.pop(0)
    ent.stomach_mass = max(0.0, ent.stomach_mass - res.mass)
    if ent.stomach_mass <= 1e-12:
        ent.stomach_mass = 0.0
        ent.stomach.clear()
        ent.digest_dq = 0.0
    return res


def partition_ratio(ent: EntState) -> float:
    """Share of digested energy routed to growth right now."""
    g = ent.gene
    if ent.fully_grown:
        return 0.0
    if ent.store < g.get("energy_reserve"):
        g0 = g.get("growth_ratio_initial")
        g_con = 0.0
        if g.get("max_biomass") > 0:
            g_con = (g.get("growth_ratio_max_change")
                     / g.get("max_biomass") * g0)
        return float(np.clip(g0 * (1.0 - ent.lean_mass * g_con), 0.0, 1.0))
    return 1.0


def route_pending_energy(ent: EntState) -> float:
    """Split pending digestion income between growth and storage.

    Returns the lean mass added. Called once per physiology tick.
    """
    energy = ent.pending_energy
    ent.pending_energy = 0.0
    if energy <= 0.0:
        return 0.0
    g = partition_ratio(ent)
    rho = ent.gene.get("energy_density")
    growth_energy = energy * g
    grown = growth_energy / rho if rho > 0 else 0.0
    headroom = max(0.0, ent.gene.get("max_biomass") - ent.lean_mass)
    if grown > headroom:
        overflow = (grown - headroom) * rho
        grown = headroom
        growth_energy -= overflow
    ent.lean_mass += grown
    ent.store += energy - growth_energy
    ent.peak_mass = max(ent.peak_mass, ent.lean_mass)
    ent.starvation_floor = max(
        ent.starvation_floor,
        ent.lean_mass * ent.gene.get("starvation_mass_fraction"))
    return grown


# -- movement ----------------------------------------------------------------

MIN_FORCE = 100.0


def apply_movement(ent: EntState, rot_action: int, force_action: int,
                   dt: float, coin_mass: float = 0.0) -> float:
    """Apply one step of steering; returns the energy cost (>= 0)."""
    if rot_action:
        ent.heading = (ent.heading + dt / ent.c_rot_time
                       * rot_action * 360.0) % 360.0
    if not force_action:
        return 0.0
    force = max(ent.c_fmax * ent.lean_mass * (1.0 - ent.c_q_ratio),
                MIN_FORCE)
    phi = math.radians(ent.heading)
    scale = force * force_action / ent.total_mass(coin_mass) * dt
    ent.vel[0] += scale * math.cos(phi)
    ent.vel[1] += scale * math.sin(phi)
    return -ent.c_move_rate * force


def collision_damage(m1: float, m2: float, d_vec, v_vec,
                     k: float, psi: float) -> float:
    """Signed energy delta for the party of mass ``m1`` in a contact.

    ``d_vec`` points from the party toward the contact, ``v_vec`` is
    the party's own velocity. Receding contacts cost nothing.
    """
    d = np.asarray(d_vec, dtype=float)
    norm = float(np.linalg.norm(d))
    if norm <= 0.0:
        return 0.0
    v_line = float(np.dot(d, np.asarray(v_vec, dtype=float))) / norm
    m_eff = min(10.0 * m1, m2)
    d_rel = -(max(0.0, v_line) * m_eff * k) / (m1 + m_eff)
    return d_rel * m1 * psi


# -- reproduction ------------------------------------------------------------

REPRO_CHECKS_PER_UPDATE = 25.0   # steps between reproduction-state checks
GLOBAL_UPDATE_HZ = 50.0


def reproduction_probability(gene: EntGene) -> float:
    """Chance per physiology tick of entering the mother state."""
    ratio = gene.get("repro_min_mass_fraction")
    lam = gene.get("reproductions_per_lifetime")
    a_max = gene.get("max_age")
    if ratio <= 0 or a_max <= 0 or lam <= 0:
        return 0.0
    return (REPRO_CHECKS_PER_UPDATE / ratio
            / (GLOBAL_UPDATE_HZ * a_max / lam))


def eligible_for_mother_state(ent: EntState) -> bool:
    g = ent.gene
    if ent.births >= int(round(g.get("reproductions_per_lifetime"))):
        return False
    min_mass = g.get("repro_min_mass_fraction") * g.get("max_biomass")
    return ent.lean_mass >= min_mass and ent.store >= ent.birth_cost()


def update_mother_state(ent: EntState, rng: np.random.Generator,
                        now: float) -> None:
    """Per-physiology-tick mother-state transition."""
    if not eligible_for_mother_state(ent):
        ent.mother = False
        return
    if ent.mother:
        return
    p = reproduction_probability(ent.gene)
    if now < ent.repro_boost_until:
        p = min(1.0, p * ent.repro_boost)
    if rng.random() < p:
        ent.mother = True


def starvation_level(ent: EntState) -> float:
    if ent.lean_mass <= 0:
        return 0.0
    return 1.0 - ent.starvation_floor / ent.lean_mass


# -- rewards -----------------------------------------------------------------

def reward_step(ent: EntState) -> tuple[np.ndarray, float]:
    """Per-component rewards for this step plus the scalar total.

    Components follow the ledger order (currencies, consumption,
    reproduction); pain feeds only the total, never the ledger.
    """
    v = ent.gene.values
    dc = ent.ev_dc
    components = np.array((dc[0] * v[12], dc[1] * v[13], dc[2] * v[14],
                           dc[3] * v[15], ent.ev_food * v[21],
                           ent.ev_births * v[26]))
    total = float(components.sum()) + ent.ev_pain * v[53]
    return components, total
