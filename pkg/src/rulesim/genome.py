"""Gene vectors for Ents and primary producers.

A gene is a flat float64 vector with a named-slot registry on top. Slot
indices are stable and never reused; blank slots are kept as zero
placeholders so indices stay aligned with the configuration files.
Inheritance, mutation, genetic distance and the lock/key palatability
system all live here because both entity kinds share them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

INF = float("inf")


@dataclass(frozen=True)
class Slot:
    index: int
    name: str
    lo: float
    hi: float
    default: float
    evolvable: bool = False


def _registry(slots: Iterable[Slot], size: int):
    table = {s.index: s for s in slots}
    for i in range(size):
        if i not in table:
            table[i] = Slot(i, f"blank_{i}", 0.0, 0.0, 0.0)
    ordered = [table[i] for i in range(size)]
    lo = np.array([s.lo for s in ordered])
    hi = np.array([s.hi for s in ordered])
    defaults = np.array([s.default for s in ordered])
    evolvable = np.array([s.evolvable for s in ordered], dtype=bool)
    by_name = {s.name: s.index for s in ordered}
    return ordered, lo, hi, defaults, evolvable, by_name


ENT_GENE_SIZE = 70

ENT_SLOTS = [
    Slot(0, "max_biomass", 0.01, 50.0, 25.0, True),
    Slot(1, "lock1", 0.0, 1.0, 0.05),
    Slot(2, "lock2", 0.0, 1.0, 0.20),
    Slot(3, "lock3", 0.0, 1.0, 0.40),
    Slot(4, "key1", 0.0, 1.0, 0.10),
    Slot(5, "key2", 0.0, 1.0, 0.30),
    Slot(6, "key3", 0.0, 1.0, 0.10),
    Slot(7, "max_age", 20.0, 300.0, 200.0, True),
    Slot(8, "growth_ratio_initial", 0.2, 0.8, 0.5, True),
    Slot(9, "max_force_per_kg", 0.0, 35.0, 30.0, True),
    Slot(12, "reward_c1", -1.0, 1.0, 0.10),
    Slot(13, "reward_c2", -1.0, 1.0, 0.10),
    Slot(14, "reward_c3", -1.0, 1.0, 0.10),
    Slot(15, "reward_c4", -1.0, 1.0, 0.30),
    Slot(16, "tag_number", 1.0, INF, 1.0),
    Slot(17, "repro_min_mass_fraction", 0.2, 1.0, 0.75, True),
    Slot(18, "offspring_per_reproduction", 1.0, INF, 1.0),
    Slot(19, "offspring_rel_mass", 0.0, 0.5, 0.2, True),
    Slot(21, "reward_consumption", 0.0, 1.0, 0.25),
    Slot(22, "starvation_mass_fraction", 0.2, 0.9, 0.75),
    Slot(23, "rotation_time", 0.9, 1.1, 1.0),
    Slot(24, "digestion_rate", 0.0, 1.0, 0.2),
    Slot(25, "growth_ratio_max_change", 0.0, INF, 0.0),
    Slot(26, "reward_reproduction", 0.0, 1.0, 1.0),
    Slot(27, "reproductions_per_lifetime", 1.0, INF, 4.0, True),
    Slot(28, "alpha_c1", 0.0, INF, 1.87e-3),
    Slot(29, "alpha_c2", 0.0, INF, 1.25e-2),
    Slot(30, "alpha_c3", 0.0, INF, 1.83e-2),
    Slot(31, "alpha_c4", 0.0, INF, 1.13e-3),
    Slot(32, "alpha_consumption", 0.0, INF, 6.2e-1),
    Slot(33, "alpha_reproduction", 0.0, INF, 8.29e-1),
    Slot(34, "energy_reserve", 0.0, INF, 1.0, True),
    Slot(35, "synthesizable_c1", 0.0, 1.0, 1.0),
    Slot(36, "synthesizable_c2", 0.0, 1.0, 0.0),
    Slot(37, "synthesizable_c3", 0.0, 1.0, 1.0),
    Slot(38, "synthesizable_c4", 0.0, 1.0, 0.0),
    Slot(40, "entity_type", 1.0, INF, 1.0),
    Slot(41, "sensing_radius", 0.0, INF, 3.0, True),
    Slot(42, "max_gene_difference", 0.0, 0.2, 0.15, True),
    Slot(43, "initial_currency", 0.0, INF, 0.1, True),
    Slot(44, "impact_damage_coeff", 0.0, INF, 0.001),
    Slot(45, "conversion_efficiency", 0.0, INF, 0.9),
    Slot(46, "max_velocity", 0.0, 3.0, 1.0, True),
    Slot(47, "self_mass_conversion", 0.0, INF, 0.9),
    Slot(48, "movement_cost_rate", -INF, 0.0, -4e-5),
    Slot(49, "transaction_cost", 0.0, INF, 0.0),
    Slot(50, "currency_amount_given", 0.0, INF, 0.1),
    Slot(51, "base_metabolic_rate", -INF, 0.0, -0.002),
    Slot(52, "synthesis_cost", 0.0, 1.0, 0.02, True),
    Slot(53, "reward_pain", -1.0, 1.0, -1.0),
    Slot(54, "n_locks", 1.0, INF, 3.0),
    Slot(55, "energy_density", 0.0, INF, 1.0),
    Slot(56, "copying_noise", 0.01, 0.05, 0.015, True),
    Slot(57, "stomach_mass_ratio", 0.05, 0.5, 0.2, True),
    Slot(58, "offspring_energy", 0.0, INF, 1.0),
    Slot(60, "beta_c1", 0.0, INF, 3.8e-3),
    Slot(61, "beta_c2", 0.0, INF, 3.8e-3),
    Slot(62, "beta_c3", 0.0, INF, 3.8e-3),
    Slot(63, "beta_c4", 0.0, INF, 1.14e-2),
    Slot(64, "beta_consumption", 0.0, INF, 9.5e-3),
    Slot(65, "beta_reproduction", 0.0, INF, 5e-3),
    Slot(66, "c1_amount_given", 0.0, INF, 0.1, True),
    Slot(67, "c2_amount_given", 0.0, INF, 0.1, True),
    Slot(68, "c3_amount_given", 0.0, INF, 0.1, True),
    Slot(69, "c4_amount_given", 0.0, INF, 1.0),
]

(ENT_SLOT_LIST, ENT_LO, ENT_HI, ENT_TABLE_DEFAULTS, ENT_EVOLVABLE,
 ENT_SLOT_BY_NAME) = _registry(ENT_SLOTS, ENT_GENE_SIZE)

# Reward-coefficient slot indices in ledger-component order:
# currencies C1..C4, then consumption, then reproduction.
THETA_SLOTS = (12, 13, 14, 15, 21, 26)
ALPHA_SLOTS = (28, 29, 30, 31, 32, 33)
BETA_SLOTS = (60, 61, 62, 63, 64, 65)

PP_GENE_SIZE = 16

PP_SLOTS = [
    Slot(0, "max_biomass", 0.0, INF, 50.0),
    Slot(1, "lock1", 0.0, 1.0, 0.9),
    Slot(2, "lock2", 0.0, 1.0, 0.7),
    Slot(3, "lock3", 0.0, 1.0, 0.9),
    Slot(4, "repro_prob_increment", 0.0, 1.0, 5e-5),
    Slot(5, "repro_prob_initial", 0.0, 1.0, 0.0),
    Slot(6, "max_age", 0.0, INF, 100.0),
    Slot(7, "copying_noise", 0.0, 1.0, 0.0),
    Slot(8, "harvest_coeff", 0.0, INF, 2.0),
    Slot(9, "energy_density", 0.0, INF, 5.0),
    Slot(10, "repro_prob_max", 0.0, 1.0, 0.005),
    Slot(11, "exclusion_height_ratio", 0.0, INF, 3.0),
    Slot(12, "growth_rate", 0.0, INF, 0.5),
    Slot(13, "germination_pause", 0.0, INF, 5.0),
    Slot(14, "inner_exclusion_ratio", 0.0, INF, 0.2),
    Slot(15, "surface_seed_fraction", 0.0, 1.0, 0.05),
]

(PP_SLOT_LIST, PP_LO, PP_HI, PP_TABLE_DEFAULTS, PP_EVOLVABLE,
 PP_SLOT_BY_NAME) = _registry(PP_SLOTS, PP_GENE_SIZE)


class _Gene:
    """Flat gene vector with named access; subclasses bind a registry."""

    SIZE = 0
    LO = HI = DEFAULTS = EVOLVABLE = None
    BY_NAME: dict = {}

    __slots__ = ("values",)

    def __init__(self, values=None):
        if values is None:
            values = self.DEFAULTS
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.SIZE,):
            raise ValueError(f"expected {self.SIZE} gene slots, got {v.shape}")
        self.values = v.copy()

    def __getitem__(self, index: int) -> float:
        return float(self.values[index])

    def __setitem__(self, index: int, value: float) -> None:
        self.values[index] = value

    def get(self, name: str) -> float:
        return float(self.values[self.BY_NAME[name]])

    def set(self, name: str, value: float) -> None:
        self.values[self.BY_NAME[name]] = value

    def copy(self):
        return type(self)(self.values)

    def clamped(self):
        g = type(self)(np.clip(self.values, self.LO, self.HI))
        return g

    def __eq__(self, other):
        return isinstance(other, _Gene) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"{type(self).__name__}({self.values!r})"


class EntGene(_Gene):
    SIZE = ENT_GENE_SIZE
    LO, HI = ENT_LO, ENT_HI
    DEFAULTS = ENT_TABLE_DEFAULTS
    EVOLVABLE = ENT_EVOLVABLE
    BY_NAME = ENT_SLOT_BY_NAME

    @property
    def locks(self) -> np.ndarray:
        return self.values[1:4]

    @property
    def keys(self) -> np.ndarray:
        return self.values[4:7]

    @property
    def thetas(self) -> np.ndarray:
        return self.values[list(THETA_SLOTS)]

    @property
    def alphas(self) -> np.ndarray:
        return self.values[list(ALPHA_SLOTS)]

    @property
    def betas(self) -> np.ndarray:
        return self.values[list(BETA_SLOTS)]

    def set_thetas(self, thetas) -> None:
        self.values[list(THETA_SLOTS)] = thetas


class PPGene(_Gene):
    SIZE = PP_GENE_SIZE
    LO, HI = PP_LO, PP_HI
    DEFAULTS = PP_TABLE_DEFAULTS
    EVOLVABLE = PP_EVOLVABLE
    BY_NAME = PP_SLOT_BY_NAME

    @property
    def locks(self) -> np.ndarray:
        return self.values[1:4]


def default_ent_gene() -> EntGene:
    """Shipped default Ent gene.

    Matches the slot table except the consumption reward, which the
    reference runs used at 0.3 rather than the tabled 0.25. The raw
    table is available as ``EntGene()``.
    """
    g = EntGene()
    g.set("reward_consumption", 0.3)
    return g


def default_pp_gene() -> PPGene:
    return PPGene()


def genetic_distance(g1: _Gene, g2: _Gene) -> float:
    """Mean absolute difference over the three lock/tissue slots."""
    return float(np.mean(np.abs(g1.values[1:4] - g2.values[1:4])))


def compatible(g1: EntGene, g2: EntGene) -> bool:
    """True when the pair can reproduce: lock distance below g1's limit."""
    return genetic_distance(g1, g2) < g1.get("max_gene_difference")


def inherit(mother: EntGene, father: EntGene, rng: np.random.Generator,
            evolution: bool = True) -> EntGene:
    """Build an offspring gene.

    With evolution enabled each slot comes from either parent with equal
    probability, then evolvable slots are perturbed by copying noise.
    With evolution disabled the offspring is an exact copy of the mother.
    """
    if not evolution:
        return mother.copy()
    pick_father = rng.random(ENT_GENE_SIZE) < 0.5
    child = EntGene(np.where(pick_father, father.values, mother.values))
    return mutate(child, rng)


def mutate(g: EntGene, rng: np.random.Generator) -> EntGene:
    """Perturb evolvable slots by +/- copying noise, then re-clamp."""
    delta = g.get("copying_noise")
    if delta == 0.0:
        return g.copy()
    noise = delta * rng.uniform(-1.0, 1.0, ENT_GENE_SIZE)
    out = g.values.copy()
    out[ENT_EVOLVABLE] += noise[ENT_EVOLVABLE]
    return EntGene(out).clamped()


def palatability(keys, locks) -> float:
    """Lock/key compatibility score in [-1, 1]; 0 is neutral."""
    keys = np.asarray(keys, dtype=float)
    locks = np.asarray(locks, dtype=float)
    n = len(keys)
    return float(np.sum(1.0 - (keys + locks)) / n)


def nutrition_coefficient(p: float) -> float:
    """Energy-yield multiplier for palatability ``p``, clamped to [-1, 1]."""
    return float(max(min(1.0 - 4.0 * abs(p), 1.0), -1.0))
