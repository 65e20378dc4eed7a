"""Policy layer: masked multi-discrete network, PPO training, checkpoints.

The network and the optimizer are plain numpy so the whole training
path stays dependency-free and byte-deterministic for a fixed seed.
Eight independent categorical heads share a tanh MLP trunk with a
value head; masked logits are driven to -inf before the softmax, so
illegal actions carry exactly zero probability. Gradients are written
out by hand and validated against finite differences in the tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .world import BRANCH_SIZES, MASK_SIZE, OBS_LAYOUT_VERSION, OBS_SIZE

NEG_INF = -1e9


@dataclass
class PPOHyper:
    gamma: float = 0.99
    lam: float = 0.99
    clip_epsilon: float = 0.15
    entropy_beta: float = 0.0035
    learning_rate: float = 2.5e-5
    batch_size: int = 32
    buffer_size: int = 8192
    time_horizon: int = 32
    epochs: int = 3
    value_coef: float = 0.5
    hidden: tuple = (64, 64)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int,
                scale: float) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a if rows >= cols else a.T)
    q = q if rows >= cols else q.T
    return np.ascontiguousarray(scale * q[:rows, :cols])


class PolicyNetwork:
    """Two hidden tanh layers, per-branch logit heads, one value head."""

    def __init__(self, obs_size: int = OBS_SIZE,
                 branches: tuple = BRANCH_SIZES,
                 hidden: tuple = (64, 64),
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.obs_size = obs_size
        self.branches = tuple(branches)
        self.hidden = tuple(hidden)
        h1, h2 = hidden
        self.params = {
            "w0": _orthogonal(rng, obs_size, h1, np.sqrt(2.0)),
            "b0": np.zeros(h1),
            "w1": _orthogonal(rng, h1, h2, np.sqrt(2.0)),
            "b1": np.zeros(h2),
            "wv": _orthogonal(rng, h2, 1, 1.0),
            "bv": np.zeros(1),
        }
        for i, n in enumerate(self.branches):
            self.params[f"wh{i}"] = _orthogonal(rng, h2, n, 0.01)
            self.params[f"bh{i}"] = np.zeros(n)

    # -- forward -----------------------------------------------------------

    def trunk(self, obs: np.ndarray):
        p = self.params
        z0 = obs @ p["w0"] + p["b0"]
        a0 = np.tanh(z0)
        z1 = a0 @ p["w1"] + p["b1"]
        a1 = np.tanh(z1)
        return a0, a1

    def forward(self, obs: np.ndarray, masks: np.ndarray):
        """Masked per-branch log-probabilities and state values."""
        a0, a1 = self.trunk(obs)
        logps = []
        offset = 0
        for i, n in enumerate(self.branches):
            logits = a1 @ self.params[f"wh{i}"] + self.params[f"bh{i}"]
            m = masks[:, offset:offset + n]
            logits = np.where(m, logits, NEG_INF)
            logits = logits - logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(logits).sum(axis=1, keepdims=True))
            logps.append(logits - lse)
            offset += n
        value = (a1 @ self.params["wv"] + self.params["bv"])[:, 0]
        return logps, value, (a0, a1)

    def act(self, obs: np.ndarray, masks: np.ndarray,
            rng: np.random.Generator, argmax: bool = False):
        """Sample one action tuple per row; returns (acts, logp, value)."""
        logps, value, _ = self.forward(obs, masks)
        n = obs.shape[0]
        actions = np.zeros((n, len(self.branches)), dtype=np.int64)
        total_logp = np.zeros(n)
        for i, lp in enumerate(logps):
            probs = np.exp(lp)
            if argmax:
                choice = np.argmax(probs, axis=1)
            else:
                u = rng.random((n, 1))
                choice = (np.cumsum(probs, axis=1) < u).sum(axis=1)
                choice = np.minimum(choice, probs.shape[1] - 1)
            actions[:, i] = choice
            total_logp += np.take_along_axis(lp, choice[:, None],
                                             axis=1)[:, 0]
        return actions, total_logp, value

    def value_of(self, obs: np.ndarray) -> np.ndarray:
        _, a1 = self.trunk(obs)
        return (a1 @ self.params["wv"] + self.params["bv"])[:, 0]

    def param_fingerprint(self) -> float:
        return float(sum(np.abs(v).sum() for v in self.params.values()))

    # -- loss and gradients -------------------------------------------------

    def loss_and_grads(self, batch: dict, hyper: PPOHyper):
        """Clipped-surrogate PPO loss with entropy and value terms.

        Returns (stats dict, grads dict). Grads are exact analytic
        derivatives for the minibatch.
        """
        obs = batch["obs"]
        masks = batch["masks"]
        actions = batch["actions"]
        old_logp = batch["logp"]
        adv = batch["advantages"]
        returns = batch["returns"]
        n = obs.shape[0]
        p = self.params

        logps, value, (a0, a1) = self.forward(obs, masks)
        new_logp = np.zeros(n)
        probs = []
        for i, lp in enumerate(logps):
            new_logp += np.take_along_axis(lp, actions[:, i:i + 1],
                                           axis=1)[:, 0]
            probs.append(np.exp(lp))

        ratio = np.exp(new_logp - old_logp)
        clipped = np.clip(ratio, 1.0 - hyper.clip_epsilon,
                          1.0 + hyper.clip_epsilon)
        obj = np.minimum(ratio * adv, clipped * adv)
        policy_loss = -obj.mean()
        # gradient flows only through samples where the raw ratio is active
        active = (ratio * adv) <= (clipped * adv)
        dlogp = -(adv * ratio * active) / n

        entropies = []
        for pr, lp in zip(probs, logps):
            h = -np.sum(np.where(pr > 0, pr * lp, 0.0), axis=1)
            entropies.append(h)
        entropy = np.stack(entropies, axis=1).sum(axis=1)
        entropy_loss = -hyper.entropy_beta * entropy.mean()

        v_err = value - returns
        value_loss = hyper.value_coef * 0.5 * np.mean(v_err ** 2)

        loss = policy_loss + entropy_loss + value_loss

        # backward pass
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        d_a1 = np.zeros_like(a1)
        offset = 0
        for i, nb in enumerate(self.branches):
            lp = logps[i]
            pr = probs[i]
            onehot = np.zeros_like(pr)
            np.put_along_axis(onehot, actions[:, i:i + 1], 1.0, axis=1)
            d_logits = dlogp[:, None] * (onehot - pr)
            logp_safe = np.where(pr > 0, lp, 0.0)
            h = entropies[i]
            d_logits += (hyper.entropy_beta / n) \
                * pr * (logp_safe + h[:, None])
            grads[f"wh{i}"] = a1.T @ d_logits
            grads[f"bh{i}"] = d_logits.sum(axis=0)
            d_a1 += d_logits @ p[f"wh{i}"].T
            offset += nb

        d_value = hyper.value_coef * v_err / n
        grads["wv"] = a1.T @ d_value[:, None]
        grads["bv"] = np.array([d_value.sum()])
        d_a1 += d_value[:, None] @ p["wv"].T

        d_z1 = d_a1 * (1.0 - a1 * a1)
        grads["w1"] = a0.T @ d_z1
        grads["b1"] = d_z1.sum(axis=0)
        d_a0 = d_z1 @ p["w1"].T
        d_z0 = d_a0 * (1.0 - a0 * a0)
        grads["w0"] = obs.T @ d_z0
        grads["b0"] = d_z0.sum(axis=0)

        stats = {"loss": float(loss), "policy_loss": float(policy_loss),
                 "value_loss": float(value_loss),
                 "entropy": float(entropy.mean()),
                 "ratio_clipped": float(np.mean(~active))}
        return stats, grads


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1t) \
                / (np.sqrt(self.v[k] / b2t) + self.eps)


@dataclass
class _AgentTrack:
    obs: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    value: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    done: list = field(default_factory=list)


class TrajectoryBuffer:
    """Per-agent experience, segmented by the time horizon at update."""

    def __init__(self):
        self.tracks: dict[int, _AgentTrack] = {}
        self.size = 0

    def record(self, agent_id: int, obs, mask, actions, logp, value,
               reward, done) -> None:
        tr = self.tracks.setdefault(agent_id, _AgentTrack())
        tr.obs.append(obs)
        tr.masks.append(mask)
        tr.actions.append(actions)
        tr.logp.append(logp)
        tr.value.append(value)
        tr.reward.append(reward)
        tr.done.append(done)
        self.size += 1

    def clear(self) -> None:
        self.tracks.clear()
        self.size = 0

    def assemble(self, hyper: PPOHyper, final_values: dict) -> dict:
        """Flatten all tracks into training arrays with GAE targets."""
        obs, masks, actions, logp, adv, ret = [], [], [], [], [], []
        for agent_id, tr in self.tracks.items():
            n = len(tr.reward)
            values = np.array(tr.value)
            rewards = np.array(tr.reward)
            dones = np.array(tr.done, dtype=bool)
            a = np.zeros(n)
            last = 0.0
            tail = 0.0 if dones[-1] else float(final_values.get(agent_id,
                                                                values[-1]))
            for t in range(n - 1, -1, -1):
                if dones[t]:
                    next_v, last = 0.0, 0.0
                elif t == n - 1:
                    next_v = tail
                else:
                    next_v = values[t + 1]
                    if (t + 1) % hyper.time_horizon == 0:
                        last = 0.0     # horizon cut: restart the GAE tail
                delta = rewards[t] + hyper.gamma * next_v - values[t]
                last = delta + hyper.gamma * hyper.lam \
                    * (0.0 if dones[t] else last)
                a[t] = last
            adv.append(a)
            ret.append(a + values)
            obs.extend(tr.obs)
            masks.extend(tr.masks)
            actions.extend(tr.actions)
            logp.extend(tr.logp)
        advantages = np.concatenate(adv)
        std = advantages.std()
        normalized = (advantages - advantages.mean()) / (std + 1e-8)
        return {"obs": np.array(obs), "masks": np.array(masks),
                "actions": np.array(actions, dtype=np.int64),
                "logp": np.array(logp), "advantages": normalized,
                "returns": np.concatenate(ret)}


def ppo_update(policy: PolicyNetwork, buffer: TrajectoryBuffer,
               hyper: PPOHyper, rng: np.random.Generator,
               final_values: dict | None = None,
               optimizer: Adam | None = None) -> dict:
    """One PPO update over the collected buffer; clears it afterwards."""
    if buffer.size == 0:
        return {"minibatches": 0, "skipped": 0}
    data = buffer.assemble(hyper, final_values or {})
    optimizer = optimizer or Adam(policy.params, hyper.learning_rate)
    n = data["obs"].shape[0]
    stats = {"minibatches": 0, "skipped": 0, "loss": 0.0, "entropy": 0.0}
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2:
                continue
            batch = {k: v[idx] for k, v in data.items()}
            mb_stats, grads = policy.loss_and_grads(batch, hyper)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                stats["skipped"] += 1
                continue
            optimizer.step(policy.params, grads)
            stats["minibatches"] += 1
            stats["loss"] += mb_stats["loss"]
            stats["entropy"] += mb_stats["entropy"]
    if stats["minibatches"]:
        stats["loss"] /= stats["minibatches"]
        stats["entropy"] /= stats["minibatches"]
    buffer.clear()
    return stats


# -- checkpoint format --------------------------------------------------------
#
# magic "RSIMCKPT" | u32 format version | u32 observation layout version |
# u32 array count | per array: u16 name length, name bytes (utf-8),
# u8 ndim, ndim x u32 dims, float32 little-endian data.

CKPT_MAGIC = b"RSIMCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, policy: PolicyNetwork) -> None:
    arrays = dict(policy.params)
    arrays["_meta"] = np.array([policy.obs_size, *policy.hidden,
                                *policy.branches], dtype=np.float64)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, OBS_LAYOUT_VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.asarray(arrays[name], dtype="<f4")
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> PolicyNetwork:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError("not a policy checkpoint")
        version, obs_version = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if obs_version != OBS_LAYOUT_VERSION:
            raise ValueError(
                f"observation layout {obs_version} does not match "
                f"current layout {OBS_LAYOUT_VERSION}")
        count = struct.unpack("<I", f.read(4))[0]
        arrays = {}
        for _ in range(count):
            name_len = struct.unpack("<H", f.read(2))[0]
            name = f.read(name_len).decode()
            ndim = struct.unpack("<B", f.read(1))[0]
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * n_items), dtype="<f4")
            arrays[name] = data.reshape(shape).astype(np.float64)
    meta = arrays.pop("_meta")
    obs_size = int(meta[0])
    hidden = tuple(int(x) for x in meta[1:3])
    branches = tuple(int(x) for x in meta[3:])
    policy = PolicyNetwork(obs_size=obs_size, branches=branches,
                           hidden=hidden)
    for k in policy.params:
        policy.params[k] = arrays[k]
    return policy
