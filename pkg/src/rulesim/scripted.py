"""Deterministic heuristic policy for tests and inference-style runs.

Reads the same observation/mask vectors as the learned policy, keeps a
tiny amount of per-agent wander state, and never touches anything
random outside its own seeded generator, so runs replay exactly.

Modes:
  "default"   eat, grow, seek company when ready to reproduce
  "coin"      additionally chase any visible coin inside the pursuit
              range, at the expense of everything else
"""

from __future__ import annotations

import numpy as np

from .world import (BASE_OBS, BRANCH_SIZES, RAY_CLASSES, RAY_COUNT,
                    RAY_FIELDS, ray_length)

_OFFSETS = np.cumsum((0,) + BRANCH_SIZES[:-1])
BITE, GIVE, SYNTH, SIGNAL, ROTATE, FORCE, PICKUP, DROP = range(8)

CLS_ENT = RAY_CLASSES.index("ent")
CLS_PP = RAY_CLASSES.index("pp")
CLS_CAKE = RAY_CLASSES.index("cake")
CLS_COIN = RAY_CLASSES.index("coin")

RAY_STEP_DEG = 80.0 / (RAY_COUNT - 1)


class ScriptedPolicy:
    def __init__(self, mode: str = "default", seed: int = 0,
                 light: float = 1.0, coin_pursuit_range: float = 1.5,
                 mate_store_threshold: float = 11.0,
                 feed_until: float = 14.0):
        if mode not in ("default", "coin"):
            raise ValueError(f"unknown scripted mode {mode!r}")
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.ray_length = ray_length(light)
        self.pursuit_norm = coin_pursuit_range / self.ray_length
        self.mate_store = mate_store_threshold
        self.feed_until = feed_until
        self._wander: dict[int, tuple[int, int]] = {}

    def _ray_view(self, row: np.ndarray):
        rays = row[BASE_OBS:].reshape(RAY_COUNT, RAY_FIELDS)
        classes = rays[:, 1:1 + len(RAY_CLASSES)]
        dist = rays[:, -1]
        return classes, dist

    def _nearest(self, classes, dist, cls: int) -> tuple | None:
        hits = np.nonzero(classes[:, cls] > 0)[0]
        if len(hits) == 0:
            return None
        best = hits[np.argmin(dist[hits])]
        return int(best), float(dist[best]), cls

    def _steer(self, action: np.ndarray, ray_index: int) -> None:
        offset = -40.0 + RAY_STEP_DEG * ray_index
        if offset > RAY_STEP_DEG / 2:
            action[ROTATE] = 2
        elif offset < -RAY_STEP_DEG / 2:
            action[ROTATE] = 0
        else:
            action[ROTATE] = 1
        action[FORCE] = 2

    def _wander_action(self, agent_id: int, action: np.ndarray) -> None:
        rot, left = self._wander.get(agent_id, (1, 0))
        if left <= 0:
            rot = int(self.rng.integers(0, 3))
            left = int(self.rng.integers(10, 40))
        self._wander[agent_id] = (rot, left - 1)
        action[ROTATE] = rot
        action[FORCE] = 2

    def act(self, ids, obs: np.ndarray, masks: np.ndarray) -> np.ndarray:
        n = obs.shape[0]
        actions = np.zeros((n, 8), dtype=np.int64)
        actions[:, ROTATE] = 1
        actions[:, FORCE] = 1
        touch_norm = 0.18 / self.ray_length   # pressed-against distance
        for i in range(n):
            row = obs[i]
            mask = masks[i]
            action = actions[i]
            classes, dist = self._ray_view(row)
            hungry = row[8] * 100.0 < self.feed_until
            if hungry and mask[_OFFSETS[BITE] + 1]:
                # bite only when food is the thing being touched; biting
                # a fellow Ent poisons the biter under the default genes
                food_near = np.any(
                    ((classes[:, CLS_PP] > 0) | (classes[:, CLS_CAKE] > 0))
                    & (dist <= touch_norm))
                if food_near:
                    action[BITE] = 1
            if mask[_OFFSETS[SYNTH] + 1]:
                action[SYNTH] = 1
            can_pickup = mask[_OFFSETS[PICKUP] + 1]
            if can_pickup:
                action[PICKUP] = 1
            if row[6] > 0:           # holding a cube: free the hands
                action[DROP] = 1
                action[PICKUP] = 0
            elif row[5] > 0 and hungry and mask[_OFFSETS[DROP] + 1]:
                action[DROP] = 1     # drop cake so it can be eaten
                action[PICKUP] = 0

            target = None
            if self.mode == "coin":
                coin = self._nearest(classes, dist, CLS_COIN)
                if coin is not None and coin[1] <= self.pursuit_norm:
                    target = coin
            if target is None:
                want_mate = (row[7] > 0
                             or row[8] * 100.0 >= self.mate_store)
                if want_mate:
                    target = self._nearest(classes, dist, CLS_ENT)
                if target is None and hungry:
                    food = self._nearest(classes, dist, CLS_PP)
                    cake = self._nearest(classes, dist, CLS_CAKE)
                    if food and cake:
                        target = cake if cake[1] < food[1] else food
                    else:
                        target = food or cake
            if target is not None:
                self._steer(action, target[0])
                if target[2] == CLS_ENT and target[1] <= touch_norm:
                    action[FORCE] = 1   # already touching the mate
            else:
                self._wander_action(ids[i], action)
            if action[BITE] == 1:
                action[FORCE] = 1   # coast while eating
        return actions
