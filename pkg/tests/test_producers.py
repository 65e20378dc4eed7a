import numpy as np
import pytest

from rulesim import producers as pp_mod
from rulesim.genome import PPGene, default_pp_gene
from rulesim.producers import (
    ALIVE,
    FADING,
    GROWING,
    SEED_DORMANT,
    SEED_SURFACE,
    PPState,
    competition_kills,
    death_check,
    fade_step,
    fruit_drop_position,
    grow,
    reproduction_update,
    seed_lifecycle_step,
)

DT = 0.02
STEPS_PER_UPDATE = 25


def make_pp(mass=25.0, phase=ALIVE, pos=(0.0, 0.0), pid=0, gene=None):
    return PPState(id=pid, gene=gene or default_pp_gene(),
                   pos=np.array(pos, dtype=float), mass=mass, phase=phase)


def test_grow_tabled_increment():
    # light 1, harvest 2, mass 10, rate 0.5, density 5 -> 1 kg per update
    pp = make_pp(mass=10.0)
    added = grow(pp, 1.0, DT, STEPS_PER_UPDATE)
    assert added == pytest.approx(1.0)
    assert pp.mass == pytest.approx(11.0)


def test_grow_no_light_no_growth():
    pp = make_pp(mass=10.0)
    assert grow(pp, 0.0, DT, STEPS_PER_UPDATE) == 0.0


def test_grow_capped_at_max_biomass():
    pp = make_pp(mass=50.0)
    assert grow(pp, 1.0, DT, STEPS_PER_UPDATE) == 0.0
    pp2 = make_pp(mass=49.99)
    added = grow(pp2, 1.0, DT, STEPS_PER_UPDATE)
    assert pp2.mass == 50.0
    assert added == pytest.approx(0.01)


def test_reproduction_increment_mass_ratio():
    pp = make_pp(mass=25.0)
    rng = np.random.default_rng(0)
    reproduction_update(pp, rng)
    assert pp.repro_prob == pytest.approx(2.5e-5)


def test_reproduction_increment_bites():
    pp = make_pp(mass=1e-9)
    pp.bites_since_fruit = 2
    pp.mass = 0.0
    pp.phase = ALIVE
    rng = np.random.default_rng(0)
    reproduction_update(pp, rng)
    assert pp.repro_prob == pytest.approx(1e-4)


def test_reproduction_prob_capped():
    pp = make_pp(mass=50.0)
    pp.repro_prob = pp.gene.get("repro_prob_max")
    rng = np.random.default_rng(0)
    reproduction_update(pp, rng)
    assert pp.repro_prob == pp.gene.get("repro_prob_max")


def test_fruiting_rate_matches_probability():
    rng = np.random.default_rng(42)
    pp = make_pp(mass=50.0)
    pp.repro_prob = pp.gene.get("repro_prob_max")  # stays at cap
    fruits = sum(reproduction_update(pp, rng) for _ in range(100_000))
    assert fruits == pytest.approx(100_000 * 0.005, rel=0.15)


def test_fruit_positions_within_ring():
    pp = make_pp(mass=50.0)
    inner = max(pp.height * 0.2 * 0.5, 0.3)
    rng = np.random.default_rng(1)
    for _ in range(200):
        r = np.linalg.norm(fruit_drop_position(pp, rng) - pp.pos)
        assert inner <= r <= 2 * inner + 1e-12


def test_seed_lifecycle_timing():
    seed = make_pp(mass=pp_mod.SEED_MASS, phase=SEED_SURFACE)
    seed.age = 9.0
    seed_lifecycle_step(seed, DT)
    assert seed.phase == SEED_SURFACE       # still collectible
    seed.age = 10.0
    seed_lifecycle_step(seed, DT)
    assert seed.phase == SEED_DORMANT
    seed.age = 14.9
    seed_lifecycle_step(seed, DT)
    assert seed.phase == SEED_DORMANT
    seed.age = 15.0
    seed_lifecycle_step(seed, DT)
    assert seed.phase == GROWING


def test_buried_seed_germinates_after_pause_only():
    seed = make_pp(mass=pp_mod.SEED_MASS, phase=SEED_DORMANT)
    seed.age = 4.9
    seed_lifecycle_step(seed, DT)
    assert seed.phase == SEED_DORMANT
    seed.age = 5.0
    seed_lifecycle_step(seed, DT)
    assert seed.phase == GROWING


def test_competition_out_of_range():
    a = make_pp(pos=(0.0, 0.0), pid=0)
    b = make_pp(pos=(10.0, 0.0), pid=1)
    rng = np.random.default_rng(0)
    assert competition_kills([a, b], rng) == []


def test_competition_kill_rate_about_ten_percent():
    rng = np.random.default_rng(7)
    kills = 0
    trials = 10_000
    for _ in range(trials):
        a = make_pp(mass=30.0, pos=(0.0, 0.0), pid=0)
        b = make_pp(mass=10.0, pos=(0.1, 0.0), pid=1)
        dead = competition_kills([a, b], rng)
        if dead:
            assert dead[0] is b  # larger kills smaller
            kills += 1
    assert kills == pytest.approx(0.10 * trials, rel=0.1)


def test_competition_equal_mass_lower_id_wins():
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(200):
        a = make_pp(mass=20.0, pos=(0.0, 0.0), pid=5)
        b = make_pp(mass=20.0, pos=(0.1, 0.0), pid=9)
        for loser in competition_kills([a, b], rng):
            seen.add(loser.id)
    assert seen == {9}


def test_death_check_causes():
    old = make_pp()
    old.age = 100.0
    death_check(old)
    assert old.phase == FADING and old.death_cause == pp_mod.DEATH_OLD_AGE

    eaten = make_pp(mass=25.0)
    eaten.mass = 0.0
    death_check(eaten)
    assert eaten.phase == FADING and eaten.death_cause == pp_mod.DEATH_EATEN

    healthy = make_pp()
    healthy.age = 50.0
    death_check(healthy)
    assert healthy.phase == ALIVE


def test_fade_loses_peak_fraction_per_second():
    pp = make_pp(mass=40.0)
    pp.peak_mass = 40.0
    pp_mod.start_fading(pp, pp_mod.DEATH_OLD_AGE)
    lost = fade_step(pp, 1.0)
    assert lost == pytest.approx(4.0)
    assert pp.mass == pytest.approx(36.0)
    # runs dry without going negative
    drained = sum(fade_step(pp, 1.0) for _ in range(20))
    assert pp.mass == 0.0
    assert drained == pytest.approx(36.0)
