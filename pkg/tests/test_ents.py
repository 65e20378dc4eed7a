import numpy as np
import pytest

from rulesim import ents as em
from rulesim.ents import (
    DigestResult,
    EntState,
    apply_movement,
    bite_size,
    catabolize,
    collision_damage,
    digest_tick,
    eligible_for_mother_state,
    ingest,
    metabolic_cost,
    partition_ratio,
    pay_energy,
    reproduction_probability,
    reward_step,
    route_pending_energy,
)
from rulesim.genome import default_ent_gene


def make_ent(lean=25.0, store=5.0, **kw):
    return EntState(id=0, gene=default_ent_gene(), pos=np.zeros(2),
                    lean_mass=lean, store=store, **kw)


def test_metabolic_cost_tabled():
    ent = make_ent(lean=25.0)
    per_tick = metabolic_cost(ent)
    assert per_tick == pytest.approx(0.002 * 25.0 ** (2 / 3), rel=1e-12)
    assert per_tick == pytest.approx(0.0171, abs=2e-4)
    # 200 s at 4 ticks/s
    assert 800 * per_tick == pytest.approx(13.7, abs=0.05)


def test_metabolic_cost_zero_mass():
    ent = make_ent(lean=0.0)
    ent.starvation_floor = 0.0
    assert metabolic_cost(ent) == 0.0


def test_bite_size_examples():
    ent = make_ent(lean=25.0)
    ent.stomach_mass = 3.0
    assert bite_size(ent, 10.0) == pytest.approx(2.0)   # q_max = 5
    ent.stomach_mass = ent.q_max
    assert bite_size(ent, 10.0) == 0.0
    ent.stomach_mass = 0.0
    assert bite_size(ent, 1.0) == pytest.approx(1.0)


def test_digestion_full_stomach_takes_250_steps():
    ent = make_ent(lean=25.0)
    ingest(ent, 5.0, rho=5.0, eta=1.0)
    assert ent.digest_dq == pytest.approx(0.02)
    steps = 0
    energy = 0.0
    while ent.stomach_mass > 0:
        res = digest_tick(ent)
        energy += res.energy
        steps += 1
        assert steps <= 251
    assert steps == 250
    assert energy == pytest.approx(22.5)   # 5 kg * rho 5 * xi 0.9 * eta 1


def test_digestion_increment_energy():
    ent = make_ent(lean=25.0)
    ingest(ent, 5.0, rho=5.0, eta=1.0)
    res = digest_tick(ent)
    assert res.mass == pytest.approx(0.02)
    assert res.energy == pytest.approx(0.09)
    assert res.source_equiv == pytest.approx(0.10)


def test_digestion_zero_eta_yields_zero_energy():
    ent = make_ent(lean=25.0)
    ingest(ent, 1.0, rho=5.0, eta=0.0)
    res = digest_tick(ent)
    assert res.energy == 0.0
    assert res.mass > 0.0


def test_digestion_conserves_mass_across_mixed_batches():
    ent = make_ent(lean=25.0)
    ingest(ent, 1.5, rho=5.0, eta=1.0)
    ingest(ent, 2.0, rho=1.0, eta=-0.5)
    total = 0.0
    for _ in range(10_000):
        total += digest_tick(ent).mass
        if ent.stomach_mass == 0:
            break
    assert total == pytest.approx(3.5, abs=1e-9)
    assert ent.stomach_mass == 0.0


def test_partition_cases():
    grown = make_ent(lean=25.0, store=0.5)
    assert partition_ratio(grown) == 0.0

    growing_rich = make_ent(lean=10.0, store=2.0)
    assert partition_ratio(growing_rich) == 1.0

    growing_poor = make_ent(lean=10.0, store=0.5)
    assert partition_ratio(growing_poor) == pytest.approx(0.5)


def test_route_pending_energy_splits_and_caps():
    ent = make_ent(lean=10.0, store=0.5)
    ent.pending_energy = 1.0
    grown = route_pending_energy(ent)
    assert grown == pytest.approx(0.5)          # half to growth at rho 1
    assert ent.lean_mass == pytest.approx(10.5)
    assert ent.store == pytest.approx(1.0)

    nearly = make_ent(lean=24.9999, store=50.0)
    nearly.pending_energy = 1.0
    grown = route_pending_energy(nearly)
    assert grown == pytest.approx(1e-4, abs=1e-8)
    assert nearly.lean_mass == pytest.approx(25.0)
    # overflow beyond the growth cap lands in the store
    assert nearly.store == pytest.approx(50.0 + 1.0 - 1e-4, abs=1e-8)


def test_catabolize_efficiency():
    ent = make_ent(lean=25.0)
    released, loss = catabolize(ent, 0.09)
    assert released == pytest.approx(0.09)
    assert ent.lean_mass == pytest.approx(24.9)
    assert loss == pytest.approx(0.01)


def test_starvation_floor_monotone():
    ent = make_ent(lean=25.0)
    assert ent.starvation_floor == pytest.approx(18.75)
    ent.lean_mass = 20.0
    route_pending_energy(ent)  # refresh floor bookkeeping
    assert ent.starvation_floor == pytest.approx(18.75)


def test_pay_energy_fatal_at_floor():
    ent = make_ent(lean=25.0, store=0.0)
    psi = 0.9
    disposable = (25.0 - 18.75) * psi
    paid, loss, fatal = pay_energy(ent, disposable + 1.0)
    assert fatal
    assert paid == pytest.approx(disposable)
    assert ent.lean_mass < 18.75


def test_movement_rotation_rate():
    ent = make_ent()
    apply_movement(ent, 1, 0, dt=0.02)
    assert ent.heading == pytest.approx(7.2)


def test_movement_force_and_cost():
    ent = make_ent(lean=25.0, store=5.0)
    cost = apply_movement(ent, 0, 1, dt=0.02)
    assert cost == pytest.approx(4e-5 * 600.0)  # F = 30*25*0.8 = 600
    small = make_ent(lean=1.0, store=5.0)
    small.starvation_floor = 0.0
    cost = apply_movement(small, 0, 1, dt=0.02)
    assert cost == pytest.approx(4e-5 * 100.0)  # force floor engaged


def test_movement_velocity_direction():
    ent = make_ent(lean=25.0)
    ent.heading = 0.0
    apply_movement(ent, 0, 1, dt=0.02)
    assert ent.vel[0] > 0
    assert ent.vel[1] == pytest.approx(0.0)


def test_collision_damage_worked_example():
    d = collision_damage(10.0, 5.0, (1.0, 0.0), (2.0, 0.0), 0.001, 0.9)
    assert d == pytest.approx(-0.006)


def test_collision_damage_receding_is_free():
    d = collision_damage(10.0, 5.0, (1.0, 0.0), (-2.0, 0.0), 0.001, 0.9)
    assert d == 0.0


def test_collision_damage_mass_cap():
    # huge m2 saturates at 10 * m1
    big = collision_damage(10.0, 1e9, (1.0, 0.0), (2.0, 0.0), 0.001, 0.9)
    capped = collision_damage(10.0, 100.0, (1.0, 0.0), (2.0, 0.0), 0.001, 0.9)
    assert big == pytest.approx(capped)


def test_reproduction_probability_default():
    p = reproduction_probability(default_ent_gene())
    assert p == pytest.approx(25 * (1 / 0.75) / (50 * 200 / 4), rel=1e-9)
    assert p == pytest.approx(0.013333, abs=1e-5)


def test_mother_eligibility():
    thin = make_ent(lean=10.0, store=100.0)
    assert not eligible_for_mother_state(thin)
    poor = make_ent(lean=20.0, store=5.9)
    assert not eligible_for_mother_state(poor)   # birth cost is 6
    ready = make_ent(lean=20.0, store=6.0)
    assert eligible_for_mother_state(ready)
    spent = make_ent(lean=20.0, store=100.0)
    spent.births = 4
    assert not eligible_for_mother_state(spent)


def test_birth_cost_tabled():
    assert make_ent().birth_cost() == pytest.approx(6.0)  # 1*5*1 + 1


def test_reward_step_consumption():
    ent = make_ent()
    ent.ev_food = 0.02
    comps, total = reward_step(ent)
    assert comps[4] == pytest.approx(0.006)
    assert total == pytest.approx(0.006)


def test_reward_step_birth_and_pain():
    ent = make_ent()
    ent.ev_births = 1.0
    comps, total = reward_step(ent)
    assert comps[5] == pytest.approx(1.0)

    hurt = make_ent()
    hurt.ev_pain = 1.0   # premature death
    comps, total = reward_step(hurt)
    assert total == pytest.approx(-1.0)

    bitten = make_ent()
    bitten.ev_pain = bitten.gene.get("reward_consumption")
    _, total = reward_step(bitten)
    assert total == pytest.approx(-0.3)


def test_reward_step_currency_changes():
    ent = make_ent()
    ent.ev_dc[3] = 1.0
    comps, total = reward_step(ent)
    assert comps[3] == pytest.approx(0.3)
    ent2 = make_ent()
    ent2.ev_dc[0] = -0.1
    comps, _ = reward_step(ent2)
    assert comps[0] == pytest.approx(-0.01)
