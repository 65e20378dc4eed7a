"""Primary producers: light-fed biomass, seeds, spacing, death.

Producers pass through a fixed phase sequence. Seeds start as surface
fruits (collectible) or go straight underground, germinate after a
pause, then grow toward a genetic mass cap while shedding fruits of
their own. Crowded producers kill their smaller neighbours. A dead
producer fades out gradually rather than vanishing, so its remaining
biomass stays available for a short while.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .genome import PPGene

SEED_SURFACE = 0
SEED_DORMANT = 1
GROWING = 2
ALIVE = 3
FADING = 4

PHASE_NAMES = ("seedSurface", "seedDormant", "growing", "alive", "fading")

SURFACE_SECONDS = 10.0    # time a surface seed stays collectible
FADE_RATE_FRACTION = 0.1  # peak-mass fraction lost per second while fading
SEED_MASS = 0.05          # kg carried by one fruit/seed

DEATH_OLD_AGE = "old_age"
DEATH_EATEN = "eaten"
DEATH_COMPETITION = "competition"


@dataclass
class PPState:
    id: int
    gene: PPGene
    pos: np.ndarray
    mass: float
    age: float = 0.0
    phase: int = ALIVE
    repro_prob: float = 0.0
    bites_since_fruit: int = 0
    peak_mass: float = 0.0
    death_cause: str | None = None
    submerge_step: int = 0      # scheduling hooks used by the world
    germinate_step: int = 0

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.peak_mass = max(self.peak_mass, self.mass)
        g = self.gene
        self.c_max_bio = g.get("max_biomass")
        self.c_harvest = g.get("harvest_coeff")
        self.c_growth = g.get("growth_rate")
        self.c_rho = g.get("energy_density")
        self.c_r_inc = g.get("repro_prob_increment")
        self.c_r_max = g.get("repro_prob_max")
        self.c_max_age = g.get("max_age")

    @property
    def height(self) -> float:
        return 0.005 * self.mass

    @property
    def collectible(self) -> bool:
        return self.phase == SEED_SURFACE

    @property
    def bitable(self) -> bool:
        return self.phase in (GROWING, ALIVE, FADING) and self.mass > 0.0


def grow(pp: PPState, light: float, dt: float, steps_per_update: int) -> float:
    """One growth update; returns the biomass added (kg)."""
    if pp.phase not in (GROWING, ALIVE):
        return 0.0
    cap = pp.c_max_bio
    if pp.mass >= cap:
        if pp.phase == GROWING:
            pp.phase = ALIVE
        return 0.0
    added = (light * pp.c_harvest * pp.mass
             * (pp.c_growth / pp.c_rho)
             * dt * steps_per_update)
    added = min(added, cap - pp.mass)
    pp.mass += added
    pp.peak_mass = max(pp.peak_mass, pp.mass)
    if pp.phase == GROWING:
        pp.phase = ALIVE
    return added


def reproduction_update(pp: PPState, rng: np.random.Generator) -> int:
    """Advance fruiting probability; returns how many fruits drop now."""
    if pp.phase != ALIVE:
        return 0
    r_max = pp.c_r_max
    if pp.repro_prob < r_max:
        inc = (pp.mass / pp.c_max_bio) * pp.c_r_inc
        inc += pp.bites_since_fruit * pp.c_r_inc
        pp.repro_prob = min(pp.repro_prob + inc, r_max)
    if pp.mass > SEED_MASS and rng.random() < pp.repro_prob:
        pp.bites_since_fruit = 0
        return 1
    return 0


def fruit_drop_position(pp: PPState, rng: np.random.Generator) -> np.ndarray:
    """Uniform-random point in the ring around the parent.

    The inner radius follows the parent height; the outer radius is
    twice the inner one (configured nowhere genetic, see world config).
    """
    inner = max(pp.height * pp.gene.get("inner_exclusion_ratio") * 0.5, 0.3)
    outer = 2.0 * inner
    radius = rng.uniform(inner, outer)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return pp.pos + radius * np.array([np.cos(angle), np.sin(angle)])


def seed_lifecycle_step(pp: PPState, dt: float) -> None:
    """Surface seeds submerge after 10 s; dormant ones germinate."""
    if pp.phase == SEED_SURFACE:
        if pp.age >= SURFACE_SECONDS:
            pp.phase = SEED_DORMANT
            pp.dormant_since = pp.age
    elif pp.phase == SEED_DORMANT:
        since = getattr(pp, "dormant_since", 0.0)
        if pp.age - since >= pp.gene.get("germination_pause"):
            pp.phase = GROWING


def competition_kills(pps: list[PPState], rng: np.random.Generator,
                      kill_prob: float = 0.10) -> list[PPState]:
    """Resolve one spacing-competition sweep among live producers.

    Every pair closer than the outer competition radius rolls one
    kill chance; the larger producer wins, ties go to the lower id.
    Kills are collected first and applied by the caller, keeping the
    sweep order-independent.
    """
    alive = [p for p in pps if p.phase == ALIVE]
    if len(alive) < 2:
        return []
    r_outer = 0.005 * alive[0].gene.get("max_biomass") \
        * alive[0].gene.get("exclusion_height_ratio")
    pos = np.array([p.pos for p in alive])
    d2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
    ii, jj = np.nonzero(np.triu(d2 < r_outer * r_outer, k=1))
    doomed: dict[int, PPState] = {}
    for i, j in zip(ii.tolist(), jj.tolist()):
        if rng.random() >= kill_prob:
            continue
        a, b = alive[i], alive[j]
        if a.mass > b.mass:
            loser = b
        elif b.mass > a.mass:
            loser = a
        else:
            loser = b if a.id < b.id else a
        doomed[loser.id] = loser
    return list(doomed.values())


def death_check(pp: PPState) -> None:
    """Move a producer into the fading phase when a death cause applies."""
    if pp.phase == FADING or pp.phase in (SEED_SURFACE, SEED_DORMANT):
        return
    if pp.age >= pp.c_max_age:
        start_fading(pp, DEATH_OLD_AGE)
    elif pp.mass <= 0.0:
        start_fading(pp, DEATH_EATEN)


def start_fading(pp: PPState, cause: str) -> None:
    pp.phase = FADING
    pp.death_cause = cause


def fade_step(pp: PPState, dt: float) -> float:
    """Linear mass loss while fading; returns the mass removed."""
    if pp.phase != FADING:
        return 0.0
    loss = min(pp.mass, FADE_RATE_FRACTION * pp.peak_mass * dt)
    pp.mass -= loss
    return loss
