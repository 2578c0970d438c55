"""PPO training loop: rollouts, GAE and clipped-surrogate updates."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .env import PlacementEnv
from .metrics import total_wl
from .policy import AllMaskedError, PolicyNet, masked_entropy


class IncompleteEpisodeError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 32  # optimisation passes per update
    rounds: int = 10  # collect/update rounds
    lr: float = 2.5e-4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    episodes_per_update: int = 16
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.episodes_per_update < 1:
            raise ValueError("episodes_per_update must be positive")


@dataclass
class EpisodeRecord:
    ids: list[int] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)  # flat (W*W,) bool
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    terminal: float | None = None  # scaled R_t + exploration bonus
    done: bool = False
    aborted: bool = False
    overall: float | None = None  # raw R_t
    bonus: float | None = None
    hpwl: float | None = None
    final: object = None  # final Snapshot when completed
    state: object = None  # last PlacementState

    def __len__(self):
        return len(self.actions)

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards) + (self.terminal or 0.0))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    u = rng.random() * c[-1]
    a = int(np.searchsorted(c, u, side="right"))
    a = min(a, len(probs) - 1)
    while probs[a] <= 0:  # guard against landing on a zero-width cell at the edge
        a -= 1
    return a


def run_episode(env: PlacementEnv, net: PolicyNet, std_placer, rng: np.random.Generator,
                greedy: bool = False, reward_scale: float = 1.0, finalize: bool = True) -> EpisodeRecord:
    """Play one episode with actions drawn from the masked policy."""
    rec = EpisodeRecord()
    state = env.reset()
    W = env.W
    while not state.done:
        mask = env.legal_mask(state).reshape(-1)
        if not mask.any():
            out = env.abort(state)
            if rec.rewards:
                rec.rewards[-1] += out.reward
            else:
                rec.terminal = out.reward
            state = out.state
            break
        with torch.no_grad():
            logp, value = net(torch.tensor([state.id]), torch.from_numpy(mask)[None])
        logp = logp[0].numpy()
        probs = np.where(mask, np.exp(logp), 0.0)
        a = int(np.argmax(np.where(mask, logp, -np.inf))) if greedy else sample_action(probs, rng)
        out = env.step(state, divmod(a, W))
        rec.ids.append(state.id)
        rec.masks.append(mask)
        rec.actions.append(a)
        rec.log_probs.append(float(logp[a]))
        rec.values.append(float(value[0]))
        rec.rewards.append(out.reward)
        state = out.state
    rec.done = True
    rec.aborted = state.aborted
    if not state.aborted and finalize:
        final, rt, bonus = env.finalize(state, std_placer, rng)
        rec.overall, rec.bonus, rec.final = rt, bonus, final
        rec.hpwl = total_wl(final, env.netlist)
        rec.terminal = (rt + bonus) / reward_scale
    elif state.aborted and rec.terminal is None:
        rec.terminal = 0.0
    rec.state = state
    return rec


def collect_rollouts(env: PlacementEnv, net: PolicyNet, std_placer, n_episodes: int, rng,
                     reward_scale: float = 1.0) -> list[EpisodeRecord]:
    rng = np.random.default_rng(rng)
    return [run_episode(env, net, std_placer, rng, reward_scale=reward_scale) for _ in range(n_episodes)]


def compute_advantages(record: EpisodeRecord, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and return targets; the terminal reward is added to the last step."""
    if not record.done:
        raise IncompleteEpisodeError("episode has not finished")
    r = np.array(record.rewards, dtype=float)
    v = np.array(record.values, dtype=float)
    if len(r) == 0:
        return np.zeros(0), np.zeros(0)
    r[-1] += record.terminal or 0.0
    adv = np.zeros_like(r)
    last = 0.0
    for t in range(len(r) - 1, -1, -1):
        nxt = v[t + 1] if t + 1 < len(r) else 0.0
        delta = r[t] + gamma * nxt - v[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + v


@dataclass
class Batch:
    ids: torch.Tensor
    masks: torch.Tensor
    actions: torch.Tensor
    old_logp: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor


def make_batch(records: list[EpisodeRecord], gamma: float, lam: float) -> Batch:
    ids, masks, acts, logp, advs, rets = [], [], [], [], [], []
    for rec in records:
        a, ret = compute_advantages(rec, gamma, lam)
        ids += rec.ids
        masks += rec.masks
        acts += rec.actions
        logp += rec.log_probs
        advs.append(a)
        rets.append(ret)
    if not ids:
        raise ValueError("no steps to train on")
    return Batch(
        torch.tensor(ids, dtype=torch.long),
        torch.from_numpy(np.stack(masks)),
        torch.tensor(acts, dtype=torch.long),
        torch.tensor(logp, dtype=torch.float64),
        torch.from_numpy(np.concatenate(advs)),
        torch.from_numpy(np.concatenate(rets)),
    )


def normalize(adv: torch.Tensor) -> torch.Tensor:
    if adv.numel() < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / adv.std(unbiased=False).clamp_min(1e-8)


def ppo_loss(net: PolicyNet, batch: Batch, config: TrainConfig, normalize_adv: bool = True):
    logp_all, values = net(batch.ids, batch.masks)
    logp = logp_all.gather(1, batch.actions[:, None]).squeeze(1)
    adv = normalize(batch.advantages) if normalize_adv else batch.advantages
    ratio = torch.exp(logp - batch.old_logp)
    surr = torch.minimum(ratio * adv, torch.clamp(ratio, 1 - config.clip, 1 + config.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = 0.5 * ((values - batch.returns) ** 2).mean()
    entropy = masked_entropy(logp_all, batch.masks).mean()
    loss = policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy
    clip_frac = ((ratio - 1).abs() > config.clip).double().mean()
    stats = {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "clip_fraction": float(clip_frac),
    }
    return loss, stats


def update(net: PolicyNet, optimizer: torch.optim.Optimizer, records: list[EpisodeRecord], config: TrainConfig) -> dict:
    """Run ``config.epochs`` full-batch passes of the clipped PPO objective."""
    if not records:
        raise ValueError("update needs at least one episode")
    batch = make_batch(records, config.gamma, config.lam)
    saved_params = copy.deepcopy(net.state_dict())
    saved_opt = copy.deepcopy(optimizer.state_dict())
    stats = {}
    for _ in range(config.epochs):
        loss, stats = ppo_loss(net, batch, config)
        if not torch.isfinite(loss):
            net.load_state_dict(saved_params)
            optimizer.load_state_dict(saved_opt)
            raise NonFiniteLossError("non-finite PPO loss; parameters restored")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return stats


def make_optimizer(net: PolicyNet, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(net.parameters(), lr=config.lr)


class Trainer:
    """Alternates rollout collection and PPO updates on one design."""

    def __init__(self, env: PlacementEnv, net: PolicyNet, std_placer, config: TrainConfig, reward_scale: float | None = None):
        config.validate()
        self.env = env
        self.net = net
        self.std_placer = std_placer
        self.config = config
        self.optimizer = make_optimizer(net, config)
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
        if reward_scale is None:
            reward_scale = env.random_baseline_wl(int(np.random.SeedSequence(config.seed, spawn_key=(2,)).generate_state(1)[0]))
        self.reward_scale = reward_scale if reward_scale > 0 else 1.0
        self.history: list[EpisodeRecord] = []

    def round(self, index: int, n_episodes: int | None = None) -> dict:
        t0 = time.time()
        n = n_episodes or self.config.episodes_per_update
        records = collect_rollouts(self.env, self.net, self.std_placer, n, self.rng, self.reward_scale)
        self.history.extend(records)
        stats = update(self.net, self.optimizer, records, self.config)
        stats.update(
            round=index,
            mean_return=float(np.mean([r.total_return for r in records])),
            mean_terminal=float(np.mean([r.terminal for r in records])),
            aborted=sum(r.aborted for r in records),
            wall_time=time.time() - t0,
        )
        return stats

    def train(self, rounds: int | None = None, on_round=None) -> list[dict]:
        logs = []
        for k in range(self.config.rounds if rounds is None else rounds):
            s = self.round(k)
            logs.append(s)
            if on_round is not None:
                on_round(k, s)
        return logs


def log_line(stats: dict) -> str:
    return json.dumps({k: (v if not isinstance(v, float) or math.isfinite(v) else None) for k, v in stats.items()})


def greedy_episode(env: PlacementEnv, net: PolicyNet, std_placer, seed: int = 0, reward_scale: float = 1.0):
    return run_episode(env, net, std_placer, np.random.default_rng(seed), greedy=True, reward_scale=reward_scale)


__all__ = [
    "AllMaskedError",
    "EpisodeRecord",
    "TrainConfig",
    "Trainer",
    "collect_rollouts",
    "compute_advantages",
    "update",
]
