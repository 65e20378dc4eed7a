import numpy as np
import pytest

from rulesim import producers as pp_mod
from rulesim import world as wm
from rulesim.ents import body_radius
from rulesim.genome import default_ent_gene, default_pp_gene
from rulesim.producers import PPState
from rulesim.world import (
    BRANCH_SIZES,
    DT,
    Item,
    MASK_SIZE,
    OBS_SIZE,
    World,
    WorldConfig,
    observation_index_map,
    ray_length,
)

NOOP = np.array([0, 0, 0, 0, 1, 1, 0, 0])


def tiny_config(**kw):
    base = dict(arena_side=10.0, n_ents=0, n_pps=0,
                log_state_digest_every=0)
    base.update(kw)
    return WorldConfig(**base)


def add_ent(world, pos, lean=25.0, store=5.0, heading=0.0):
    from rulesim.ents import EntState
    ent = EntState(id=world._take_ent_id(), gene=world.config.ent_gene.copy(),
                   pos=np.array(pos, float), lean_mass=lean, store=store,
                   heading=heading)
    world.ents.append(ent)
    world.initial_assets = world.energy_assets()
    return ent


def add_pp(world, pos, mass=25.0, phase=pp_mod.ALIVE):
    pp = PPState(id=world._take_pp_id(), gene=world.config.pp_gene.copy(),
                 pos=np.array(pos, float), mass=mass, phase=phase)
    world.pps.append(pp)
    world.initial_assets = world.energy_assets()
    return pp


def forward(world, ent, steps, **extra):
    act = NOOP.copy()
    act[5] = 2  # forward force
    for k, v in extra.items():
        act[k] = v
    for _ in range(steps):
        world.step({ent.id: act})


def test_empty_world_step_advances_clock():
    w = World(tiny_config(), seed=1)
    before = len([e for e in w.events if e["type"] not in ("run_start",)])
    res = w.step({})
    assert w.step_count == 1
    after = [e for e in w.events
             if e["type"] not in ("run_start", "collapse")]
    assert len(after) == before
    assert res.births == [] and res.deaths == []


def test_unknown_ent_action_rejected():
    w = World(tiny_config(), seed=1)
    with pytest.raises(ValueError, match="dead/unknown"):
        w.step({42: NOOP})


def test_coin_cycle_spawns_every_500_steps():
    w = World(tiny_config(coins_per_cycle=10), seed=2)
    add_ent(w, (5.0, 5.0))  # keep the run from collapsing
    for _ in range(500):
        w.step({})
    spawns = [e for e in w.events if e["type"] == "coin_spawn"]
    assert len(spawns) == 1
    assert spawns[0]["payload"]["count"] == 10
    assert w.coins_spawned == 10


def test_coin_schedule_values():
    const = World(tiny_config(), seed=3)
    assert const.coin_count_for_time(0.0) == 10
    assert const.coin_count_for_time(9999.0) == 10

    higher = World(tiny_config(coin_schedule="linear", coin_slope=0.014),
                   seed=3)
    assert higher.coin_count_for_time(0.0) == 10
    assert higher.coin_count_for_time(10_000.0) == 150

    lower = World(tiny_config(coin_schedule="linear", coin_slope=0.0097),
                  seed=3)
    assert lower.coin_count_for_time(10_000.0) == 107
    assert lower.coin_count_for_time(5_000.0) == 59  # 58.5 rounds up


def test_coin_expiry_is_exact():
    w = World(tiny_config(coins_per_cycle=3, coin_lifetime=2.0), seed=4)
    add_ent(w, (5.0, 5.0))
    for _ in range(500):
        w.step({})
    assert sum(1 for it in w.items if it.kind == "coin") == 3
    # expiry at spawn step + 100
    for _ in range(99):
        w.step({})
    assert sum(1 for it in w.items if it.kind == "coin") == 3
    w.step({})
    assert sum(1 for it in w.items if it.kind == "coin") == 0


def test_item_effects():
    for kind, dc0, mult in (("vitaminStrong", 1.0, 5.0),
                            ("poisonStrong", -2.0, 0.1),
                            ("coin", 0.0, 1.0)):
        w = World(tiny_config(item_kind=kind), seed=5)
        e = add_ent(w, (5.0, 5.0), store=1.0)
        w._apply_item_effect(e)
        if dc0 >= 0:
            assert e.store == pytest.approx(1.0 + dc0)
        else:
            assert e.store == 0.0   # floored, poison bigger than store
        if mult != 1.0:
            assert e.repro_boost == mult
            assert e.repro_boost_until > 0


def test_poison_sink_records_only_drained_energy():
    w = World(tiny_config(item_kind="poisonStrong"), seed=6)
    e = add_ent(w, (5.0, 5.0), store=0.5)
    w._apply_item_effect(e)
    assert w.ledger.sinks["poison"] == pytest.approx(0.5)


def test_ray_length_rule():
    assert ray_length(1.0) == 50.0
    assert ray_length(0.25) == pytest.approx(1.25)
    assert ray_length(0.0) == 1.0


def test_ray_hits_object_dead_ahead():
    w = World(tiny_config(arena_side=100.0), seed=7)
    e = add_ent(w, (20.0, 50.0), heading=0.0)
    add_pp(w, (30.0, 50.0), mass=25.0)
    ids, obs, masks = w.observe()
    center = wm.BASE_OBS + 8 * wm.RAY_FIELDS
    assert obs[0, center] == 1.0            # hit flag
    assert obs[0, center + 2] == 1.0        # class: producer
    r = body_radius(25.0) + wm.RAY_CONE_RADIUS
    expected = (10.0 - r) / 50.0
    assert obs[0, center + 8] == pytest.approx(expected, abs=1e-6)


def test_rays_all_miss_in_dim_light():
    w = World(tiny_config(light=0.25), seed=8)
    e = add_ent(w, (5.0, 5.0))
    ids, obs, masks = w.observe()
    for r in range(wm.RAY_COUNT):
        col = wm.BASE_OBS + r * wm.RAY_FIELDS
        assert obs[0, col] == 0.0
        assert obs[0, col + 8] == 1.0


def test_boundary_visible_in_full_light():
    w = World(tiny_config(), seed=9)
    add_ent(w, (5.0, 5.0))
    ids, obs, masks = w.observe()
    hits = [obs[0, wm.BASE_OBS + r * wm.RAY_FIELDS] for r in range(17)]
    classes = [obs[0, wm.BASE_OBS + r * wm.RAY_FIELDS + 7] for r in range(17)]
    assert all(h == 1.0 for h in hits)
    assert all(c == 1.0 for c in classes)


def test_velocity_observation_normalization():
    w = World(tiny_config(), seed=10)
    e = add_ent(w, (5.0, 5.0))
    e.vel[:] = (e.gene.get("max_velocity"), 0.0)
    _, obs, _ = w.observe()
    assert obs[0, 0] == pytest.approx(1.0)
    assert obs[0, 1] == pytest.approx(0.5)  # zero maps to midpoint


def test_signal_observations():
    w = World(tiny_config(), seed=11)
    a = add_ent(w, (5.0, 5.0))
    b = add_ent(w, (6.0, 5.0))
    b.signal = 2
    _, obs, _ = w.observe()
    assert obs[0, 13] == 0.0 and obs[0, 15] == 1.0
    assert obs[0, 17] == pytest.approx(1.0 / 3.0)    # 1 m of 3 m radius
    # b hears nothing
    assert obs[1, 13] == 1.0


def test_mask_shapes_and_fresh_spawn():
    w = World(tiny_config(), seed=12)
    add_ent(w, (5.0, 5.0))
    ids, obs, masks = w.observe()
    assert obs.shape == (1, OBS_SIZE)
    assert masks.shape == (1, MASK_SIZE)
    off = np.cumsum((0,) + BRANCH_SIZES[:-1])
    assert not masks[0, off[0] + 1]          # nothing to bite
    assert not masks[0, off[7] + 1]          # nothing to drop
    assert masks[0, off[3]:off[3] + 3].all()  # signals free
    assert masks[0, off[4]:off[4] + 3].all()  # rotation free
    assert masks[0, off[5]:off[5] + 3].all()  # force free
    assert masks[0, off].all()               # all no-ops legal


def test_mask_bite_when_touching_producer():
    w = World(tiny_config(), seed=13)
    e = add_ent(w, (5.0, 5.0))
    add_pp(w, (5.0, 5.0 + 0.1), mass=25.0)
    _, _, masks = w.observe()
    off = np.cumsum((0,) + BRANCH_SIZES[:-1])
    assert masks[0, off[0] + 1]
    e.stomach_mass = e.q_max
    _, _, masks = w.observe()
    assert not masks[0, off[0] + 1]          # stomach full


def test_bite_transfers_mass_and_rewards():
    w = World(tiny_config(), seed=14)
    e = add_ent(w, (5.0, 5.0))
    pp = add_pp(w, (5.2, 5.0), mass=25.0)
    act = NOOP.copy()
    act[0] = 1
    res = w.step({e.id: act})
    # one digestion increment (0.02) already ran in the same step
    assert e.stomach_mass == pytest.approx(4.98)
    assert pp.mass == pytest.approx(20.0)
    assert pp.bites_since_fruit == 1
    comps, total = res.rewards[e.id]
    assert comps[4] == pytest.approx(5.0 * 0.3)


def test_ent_bite_hurts_victim():
    w = World(tiny_config(), seed=15)
    a = add_ent(w, (5.0, 5.0))
    b = add_ent(w, (5.3, 5.0))
    act = NOOP.copy()
    act[0] = 1
    res = w.step({a.id: act, b.id: NOOP})
    assert a.stomach_mass > 0
    assert b.lean_mass == pytest.approx(20.0)   # lost one bite of lean mass
    _, total_b = res.rewards[b.id]
    assert total_b == pytest.approx(-0.3)       # bitten pain


def test_give_currency_rules():
    w = World(tiny_config(), seed=16)
    a = add_ent(w, (5.0, 5.0))
    b = add_ent(w, (5.2, 5.0))
    a.cake, a.cake_rho = 1.0, 5.0
    a.coins = 2
    act = NOOP.copy()
    act[1] = 1   # give cake (subtractable)
    res = w.step({a.id: act, b.id: NOOP})
    assert a.cake == pytest.approx(0.9)
    assert b.cake == pytest.approx(0.1)
    comps_a, _ = res.rewards[a.id]
    comps_b, _ = res.rewards[b.id]
    assert comps_a[0] == pytest.approx(-0.01)
    assert comps_b[0] == pytest.approx(0.01)

    act[1] = 2   # give innate service (non-subtractable)
    w.step({a.id: act, b.id: NOOP})
    assert b.c2 == pytest.approx(a.gene.get("initial_currency") + 0.1, abs=1e-9) \
        or b.c2 == pytest.approx(0.1)

    act[1] = 4   # give one coin
    w.step({a.id: act, b.id: NOOP})
    assert a.coins == 1 and b.coins == 1


def test_pickup_and_drop_coin():
    w = World(tiny_config(), seed=17)
    e = add_ent(w, (5.0, 5.0))
    w.items.append(Item(w._take_item_id(), "coin", (5.05, 5.0), mass=0.01))
    act = NOOP.copy()
    act[6] = 1
    res = w.step({e.id: act})
    assert e.coins == 1
    assert not w.items
    comps, _ = res.rewards[e.id]
    assert comps[3] == pytest.approx(0.3)
    assert w.coins_collected == 1

    act = NOOP.copy()
    act[7] = 1
    res = w.step({e.id: act})
    assert e.coins == 0
    dropped = [it for it in w.items if it.kind == "coin"]
    assert len(dropped) == 1 and dropped[0].spent
    comps, _ = res.rewards[e.id]
    assert comps[3] == pytest.approx(-0.3)


def test_dropped_coin_expires_after_one_second():
    w = World(tiny_config(), seed=18)
    e = add_ent(w, (5.0, 5.0))
    e.coins = 1
    act = NOOP.copy()
    act[7] = 1
    w.step({e.id: act})
    for _ in range(49):
        w.step({e.id: NOOP})
    assert any(it.kind == "coin" for it in w.items)
    w.step({e.id: NOOP})
    assert not any(it.kind == "coin" for it in w.items)


def test_pickup_too_heavy_is_masked():
    w = World(tiny_config(), seed=19)
    e = add_ent(w, (5.0, 5.0), lean=4.0)
    e.starvation_floor = 1.0
    w.items.append(Item(w._take_item_id(), "cube", (5.05, 5.0), mass=5.0))
    _, _, masks = w.observe()
    off = np.cumsum((0,) + BRANCH_SIZES[:-1])
    assert not masks[0, off[6] + 1]


def test_synthesize_fruit_to_cake():
    w = World(tiny_config(), seed=20)
    e = add_ent(w, (5.0, 5.0))
    e.raw_fruit, e.fruit_rho = 1.0, 5.0
    act = NOOP.copy()
    act[2] = 1
    res = w.step({e.id: act})
    assert e.raw_fruit == 0.0
    assert e.cake == pytest.approx(1.0)
    comps, _ = res.rewards[e.id]
    assert comps[0] == pytest.approx(0.1)   # +1 kg of c1 at theta 0.1
    assert w.ledger.sinks["synthesis"] == pytest.approx(0.02)


def test_surface_seed_pickup():
    w = World(tiny_config(), seed=21)
    e = add_ent(w, (5.0, 5.0))
    seed = PPState(id=w._take_pp_id(), gene=w.config.pp_gene.copy(),
                   pos=np.array([5.05, 5.0]), mass=0.05,
                   phase=pp_mod.SEED_SURFACE)
    w._schedule_seed(seed, surface=True)
    w.initial_assets = w.energy_assets()
    act = NOOP.copy()
    act[6] = 1
    w.step({e.id: act})
    assert e.raw_fruit == pytest.approx(0.05)
    assert seed not in w.surface_seeds


def test_seed_queue_timing_matches_lifecycle():
    w = World(tiny_config(), seed=42)
    add_ent(w, (5.0, 5.0))
    seed = PPState(id=w._take_pp_id(), gene=w.config.pp_gene.copy(),
                   pos=np.array([2.0, 2.0]), mass=0.05,
                   phase=pp_mod.SEED_SURFACE)
    w._schedule_seed(seed, surface=True)
    w.initial_assets = w.energy_assets()
    for _ in range(499):
        w.step({})
    assert seed in w.surface_seeds          # still collectible at 9.98 s
    w.step({})
    assert seed not in w.surface_seeds      # submerged at 10 s
    assert seed in w.dormant_seeds
    for _ in range(249):
        w.step({})
    assert seed in w.dormant_seeds          # pause not yet over
    w.step({})
    assert seed in w.pps                    # germinated at 15 s
    # step 750 is also a growth update, which promotes growing plants
    assert seed.phase in (pp_mod.GROWING, pp_mod.ALIVE)


def test_reproduction_produces_offspring():
    w = World(tiny_config(), seed=22)
    mother = add_ent(w, (5.0, 5.0), lean=20.0, store=10.0)
    father = add_ent(w, (5.3, 5.0), lean=20.0, store=10.0)
    mother.mother = True
    res = w.step({mother.id: NOOP, father.id: NOOP})
    assert len(res.births) == 1
    child = [e for e in w.ents if e.id == res.births[0]][0]
    assert child.lean_mass == pytest.approx(5.0)
    assert child.store == pytest.approx(1.0)
    assert child.mother_id == mother.id
    assert mother.store == pytest.approx(4.0)       # paid 6
    assert not mother.mother and mother.births == 1
    comps_m, _ = res.rewards[mother.id]
    comps_f, _ = res.rewards[father.id]
    assert comps_m[5] == comps_f[5] == pytest.approx(1.0)


def test_reproduction_requires_compatibility():
    w = World(tiny_config(), seed=23)
    mother = add_ent(w, (5.0, 5.0), lean=20.0, store=10.0)
    father = add_ent(w, (5.3, 5.0), lean=20.0, store=10.0)
    father.gene.values[1:4] = (0.5, 0.5, 0.5)
    mother.mother = True
    res = w.step({mother.id: NOOP, father.id: NOOP})
    assert res.births == []
    assert mother.store == pytest.approx(10.0)


def test_contact_pairs_counting():
    w = World(tiny_config(), seed=24)
    a = add_ent(w, (5.0, 5.0))
    b = add_ent(w, (9.0, 5.0))
    r = a.radius()
    w.step({})
    # far apart: no collision sinks
    assert w.ledger.sinks["collision"] == 0.0
    c = add_ent(w, (5.0 + 1.5 * r, 5.0))
    c.vel[:] = (-0.5, 0.0)
    a.vel[:] = (0.5, 0.0)
    w.step({})
    assert w.ledger.sinks["collision"] > 0.0
    # overlap resolved
    assert abs(c.pos[0] - a.pos[0]) >= a.radius() + c.radius() - 1e-6


def test_determinism_same_seed_same_hash():
    def run(seed):
        cfg = WorldConfig(arena_side=5.0, n_ents=6, n_pps=6,
                          pp_initial_mass=(5.0, 20.0),
                          pp_initial_age=(1.0, 50.0))
        w = World(cfg, seed=seed)
        rng = np.random.default_rng(99)
        for _ in range(300):
            acts = {}
            for e in w.alive_ents():
                a = NOOP.copy()
                a[4] = rng.integers(0, 3)
                a[5] = rng.integers(0, 3)
                a[0] = 1
                acts[e.id] = a
            w.step(acts)
        return w.event_log_hash()

    assert run(7) == run(7)
    assert run(7) != run(8)


def test_energy_ledger_identity_micro():
    cfg = WorldConfig(arena_side=5.0, n_ents=8, n_pps=8,
                      pp_initial_mass=(5.0, 20.0),
                      pp_initial_age=(1.0, 50.0), coins_per_cycle=3)
    w = World(cfg, seed=31)
    rng = np.random.default_rng(5)
    for step in range(1500):
        acts = {}
        for e in w.alive_ents():
            a = NOOP.copy()
            a[0] = 1
            a[4] = rng.integers(0, 3)
            a[5] = rng.integers(0, 3)
            a[6] = 1
            a[7] = 1 if rng.random() < 0.01 else 0
            acts[e.id] = a
        w.step(acts)
        if step % 250 == 0:
            assert abs(w.ledger_residual()) < 1e-9
    assert abs(w.ledger_residual()) < 1e-9


def test_observation_index_map_is_consistent():
    m = observation_index_map()
    assert m["size"] == OBS_SIZE == len(m["names"])
    assert m["version"] == 1
    assert sum(m["branches"].values()) == MASK_SIZE
