"""Goal-conditioned SAC-Discrete: masked policy, twin critics, auto-tuned
entropy temperature, and the collection/gradient training loop.

Expectations over the discrete action set are computed exactly as
probability-weighted sums (never single-sample estimates), the critic
target uses the elementwise minimum of the two Polyak-averaged target
networks, and invalid actions carry exactly zero probability so no
gradient ever flows through their logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import env as env_mod
from . import geometry, net
from .env import EnvConfig, ReconfigEnv
from .net import MlpParams, NonFiniteError, OptimState
from .replay import ReplayBuffer, Transition

METRIC_COLUMNS = (
    "epoch",
    "env_steps",
    "actor_loss",
    "critic_loss",
    "alpha",
    "policy_entropy",
    "train_success_rate",
    "eval_success_rate",
    "avg_reward",
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; message carries the
    epoch/step diagnostics."""


@dataclass
class SacConfig:
    epochs: int = 500
    episodes_per_epoch: int = 16
    batch_number: int = 200  # gradient steps per epoch
    batch_size: int = 512
    buffer_capacity: int = 20_000_000
    hidden: tuple[int, ...] = (256, 256)
    lr_actor: float = 9e-4
    lr_critic: float = 9e-4
    lr_alpha: float = 3e-4
    init_log_alpha: float = -2.0
    tau: float = 0.005
    target_entropy: Optional[float] = None  # None -> 0.6 * log(action count)
    her_ratio: float = 0.8
    disable_her: bool = False
    disable_masking: bool = False
    store_masks: bool = False
    eval_every: int = 10
    eval_goals: int = 100
    stop_at_success: Optional[float] = None  # early-exit threshold on eval


@dataclass
class MaskedDistribution:
    """Categorical policy with invalid actions carrying exactly zero mass.

    log_probs is 0 (not -inf) at invalid entries; every consumer multiplies
    it by the matching zero probability, so expectations stay finite.
    """

    probs: np.ndarray
    log_probs: np.ndarray
    mask: np.ndarray

    def entropy(self) -> np.ndarray:
        return -(self.probs * self.log_probs).sum(axis=-1)


def masked_policy(logits: np.ndarray, mask: np.ndarray) -> MaskedDistribution:
    """Softmax over the valid entries; invalid logits act as -inf."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if logits.shape != mask.shape:
        raise ValueError(f"logits {logits.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("every state must admit at least one valid action")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    expv = np.where(mask, np.exp(shifted), 0.0)
    total = expv.sum(axis=1, keepdims=True)
    probs = expv / total
    log_probs = np.where(mask, shifted - np.log(total), 0.0)
    return MaskedDistribution(probs, log_probs, mask)


def soft_update(online: MlpParams, target: MlpParams, tau: float) -> None:
    """Polyak averaging: target <- tau * online + (1 - tau) * target."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o


@dataclass
class Batch:
    obs: np.ndarray
    next_obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    masks: np.ndarray
    next_masks: np.ndarray


class _MaskCache:
    """Memoized geometry.action_mask; the mask is a pure function of the
    state (dynamics are deterministic), so caching is bit-identical."""

    def __init__(self, strict_connectivity: bool):
        self.strict = strict_connectivity
        self._cache: dict = {}

    def __call__(self, state) -> np.ndarray:
        m = self._cache.get(state)
        if m is None:
            m = geometry.action_mask(state, self.strict)
            m.setflags(write=False)
            self._cache[state] = m
        return m


def batch_arrays(
    transitions: Sequence[Transition], mask_of: "_MaskCache"
) -> Batch:
    obs = np.stack([env_mod.encode_observation(t.state, t.goal) for t in transitions])
    next_obs = np.stack(
        [env_mod.encode_observation(t.next_state, t.goal) for t in transitions]
    )
    b = len(transitions)
    actions = np.fromiter((t.action for t in transitions), np.intp, b)
    rewards = np.fromiter((t.reward for t in transitions), float, b)
    dones = np.fromiter((t.done for t in transitions), bool, b)
    masks = np.stack(
        [t.mask if t.mask is not None else mask_of(t.state) for t in transitions]
    )
    next_masks = np.stack(
        [
            t.next_mask if t.next_mask is not None else mask_of(t.next_state)
            for t in transitions
        ]
    )
    return Batch(obs, next_obs, actions, rewards, dones, masks, next_masks)


class SacAgent:
    """Actor, twin critics with Polyak targets, and log-temperature."""

    def __init__(
        self,
        n: int,
        cfg: SacConfig,
        gamma: float,
        rng: np.random.Generator,
    ):
        self.n = n
        self.cfg = cfg
        self.gamma = gamma
        self.action_dim = geometry.num_actions(n)
        obs_dim = 6 * n
        sizes = (obs_dim, *cfg.hidden, self.action_dim)
        self.actor = net.init_mlp(sizes, rng)
        self.critic1 = net.init_mlp(sizes, rng)
        self.critic2 = net.init_mlp(sizes, rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.log_alpha = np.array([cfg.init_log_alpha], dtype=float)
        self.target_entropy = (
            cfg.target_entropy
            if cfg.target_entropy is not None
            else 0.6 * math.log(self.action_dim)
        )
        self.opt_actor = OptimState.for_arrays(self.actor.arrays(), cfg.lr_actor)
        self.opt_critic1 = OptimState.for_arrays(self.critic1.arrays(), cfg.lr_critic)
        self.opt_critic2 = OptimState.for_arrays(self.critic2.arrays(), cfg.lr_critic)
        self.opt_alpha = OptimState.for_arrays([self.log_alpha], cfg.lr_alpha)
        self.masked = not cfg.disable_masking

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # -- policy ---------------------------------------------------------------

    def distribution(self, obs: np.ndarray, masks: np.ndarray) -> MaskedDistribution:
        """Policy distribution; with masking disabled the softmax runs over
        the full action set regardless of validity."""
        logits, _ = net.forward(self.actor, obs)
        if not self.masked:
            masks = np.ones_like(np.atleast_2d(logits), dtype=bool)
        return masked_policy(logits, masks)

    def act_sample(self, state, goal, mask: np.ndarray, rng: np.random.Generator) -> int:
        obs = env_mod.encode_observation(state, goal)
        dist = self.distribution(obs[None, :], mask[None, :])
        probs = dist.probs[0]
        if self.masked:
            return int(rng.choice(self.action_dim, p=probs))
        # Penalty-free resampling fallback: draw from the unmasked policy,
        # rejecting invalid actions; degenerate rows fall back to a uniform
        # valid choice.
        for _ in range(20):
            a = int(rng.choice(self.action_dim, p=probs))
            if mask[a]:
                return a
        return int(rng.choice(np.flatnonzero(mask)))

    def act_greedy(self, state, goal, mask: np.ndarray) -> int:
        obs = env_mod.encode_observation(state, goal)
        probs = self.distribution(obs[None, :], mask[None, :]).probs[0]
        return int(np.argmax(np.where(mask, probs, -1.0)))

    # -- losses and updates ---------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        dist = self.distribution(batch.next_obs, batch.next_masks)
        q1t, _ = net.forward(self.target1, batch.next_obs)
        q2t, _ = net.forward(self.target2, batch.next_obs)
        qmin = np.minimum(q1t, q2t)
        value = (dist.probs * (qmin - self.alpha * dist.log_probs)).sum(axis=1)
        return batch.rewards + self.gamma * ~batch.dones * value

    def update_critics(self, batch: Batch) -> float:
        y = self.critic_targets(batch)
        rows = np.arange(len(y))
        loss = 0.0
        for critic, opt in (
            (self.critic1, self.opt_critic1),
            (self.critic2, self.opt_critic2),
        ):
            q, cache = net.forward(critic, batch.obs)
            diff = q[rows, batch.actions] - y
            loss += float(np.mean(diff**2))
            grad_q = np.zeros_like(q)
            grad_q[rows, batch.actions] = 2.0 * diff / len(y)
            net.adam_step(critic.arrays(), net.backward(critic, cache, grad_q), opt)
        if not np.isfinite(loss):
            raise NonFiniteError(f"critic loss {loss}")
        return loss

    def update_actor(self, batch: Batch) -> tuple[float, float]:
        logits, cache = net.forward(self.actor, batch.obs)
        masks = (
            batch.masks if self.masked else np.ones_like(logits, dtype=bool)
        )
        dist = masked_policy(logits, masks)
        q1, _ = net.forward(self.critic1, batch.obs)
        q2, _ = net.forward(self.critic2, batch.obs)
        qmin = np.minimum(q1, q2)
        f = self.alpha * dist.log_probs - qmin
        per_state = (dist.probs * f).sum(axis=1)
        loss = float(per_state.mean())
        # dL/dlogit_b = pi_b * (f_b - sum_a pi_a f_a); zero where invalid.
        grad_logits = dist.probs * (f - per_state[:, None]) / len(per_state)
        net.adam_step(
            self.actor.arrays(), net.backward(self.actor, cache, grad_logits), self.opt_actor
        )
        entropy = float(dist.entropy().mean())
        if not np.isfinite(loss):
            raise NonFiniteError(f"actor loss {loss}")
        return loss, entropy

    def update_alpha(self, batch: Batch) -> float:
        dist = self.distribution(batch.obs, batch.masks)
        entropy = dist.entropy()
        # L = mean_s alpha * (H_s - H_target); dL/dlog_alpha equals L because
        # the loss is linear in alpha = exp(log_alpha).
        loss = self.alpha * float((entropy - self.target_entropy).mean())
        net.adam_step([self.log_alpha], [np.array([loss])], self.opt_alpha)
        if not np.isfinite(loss):
            raise NonFiniteError(f"temperature loss {loss}")
        return loss

    def soft_update_targets(self) -> None:
        soft_update(self.critic1, self.target1, self.cfg.tau)
        soft_update(self.critic2, self.target2, self.cfg.tau)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        net.save_checkpoint(
            path,
            n=self.n,
            action_dim=self.action_dim,
            actor=self.actor,
            critic1=self.critic1,
            critic2=self.critic2,
            target1=self.target1,
            target2=self.target2,
            log_alpha=float(self.log_alpha[0]),
            opt_actor=self.opt_actor,
            opt_critic1=self.opt_critic1,
            opt_critic2=self.opt_critic2,
            opt_alpha=self.opt_alpha,
        )

    @classmethod
    def load(cls, path, cfg: Optional[SacConfig] = None, gamma: float = 0.98) -> "SacAgent":
        data = net.load_checkpoint(path)
        cfg = cfg or SacConfig()
        cfg.hidden = tuple(data["actor"].sizes[1:-1])
        agent = cls(data["n"], cfg, gamma, np.random.default_rng(0))
        if agent.action_dim != data["action_dim"]:
            raise ValueError(
                f"checkpoint action dim {data['action_dim']} does not match "
                f"n={data['n']} (expected {agent.action_dim})"
            )
        agent.actor = data["actor"]
        agent.critic1 = data["critic1"]
        agent.critic2 = data["critic2"]
        agent.target1 = data["target1"]
        agent.target2 = data["target2"]
        agent.log_alpha = np.array([data["log_alpha"]], dtype=float)
        agent.opt_actor = data["opt_actor"]
        agent.opt_critic1 = data["opt_critic1"]
        agent.opt_critic2 = data["opt_critic2"]
        agent.opt_alpha = data["opt_alpha"]
        agent.opt_alpha.m = [np.asarray(m).reshape(1) for m in agent.opt_alpha.m]
        agent.opt_alpha.v = [np.asarray(v).reshape(1) for v in agent.opt_alpha.v]
        return agent


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalReport:
    success_rates: list[float]
    mean_rewards: list[float]

    @property
    def mean_success(self) -> float:
        return float(np.mean(self.success_rates))

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.mean_rewards))


def run_episode_greedy(
    agent: SacAgent, env_cfg: EnvConfig, goal
) -> tuple[bool, float, list[tuple[int, env_mod.StepResult]]]:
    """One deterministic episode from the line start toward `goal`."""
    state = env_mod.line_start(env_cfg.n)
    mask = geometry.action_mask(state, env_cfg.strict_connectivity)
    total = 0.0
    trace = []
    for step_idx in range(env_cfg.max_steps):
        action = agent.act_greedy(state, goal, mask)
        result = env_mod.step(state, action, goal, step_idx, env_cfg)
        trace.append((action, result))
        total += result.reward
        state, mask = result.state, result.mask
        if result.done:
            return True, total, trace
        if result.truncated:
            break
    return False, total, trace


def evaluate(
    agent: SacAgent,
    env_cfg: EnvConfig,
    n_goals: int,
    rounds: int,
    seed: int,
) -> EvalReport:
    """Greedy success rate and mean episode reward, averaged over `n_goals`
    sampled goals per round; round rngs derive deterministically from `seed`."""
    start_set = frozenset(env_mod.line_start(env_cfg.n))
    success_rates, mean_rewards = [], []
    for rnd in range(rounds):
        rng = np.random.default_rng([seed, rnd])
        wins = 0
        rewards = []
        for _ in range(n_goals):
            goal = env_mod.sample_goal(env_cfg.n, rng)
            while frozenset(goal) == start_set:
                goal = env_mod.sample_goal(env_cfg.n, rng)
            ok, total, _ = run_episode_greedy(agent, env_cfg, goal)
            wins += ok
            rewards.append(total)
        success_rates.append(wins / n_goals)
        mean_rewards.append(float(np.mean(rewards)))
    return EvalReport(success_rates, mean_rewards)


# -- training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    agent: SacAgent
    rows: list[dict]
    env_steps: int = 0


def train(
    env_cfg: EnvConfig,
    cfg: SacConfig,
    seed: int,
    log_fn=None,
) -> TrainResult:
    """Alternate collection and gradient phases for cfg.epochs epochs.

    Per epoch: collect episodes with the (masked) stochastic policy, then run
    cfg.batch_number gradient steps; critics update every step, the actor and
    temperature on even steps, targets right after each actor update. Fully
    deterministic given (env_cfg, cfg, seed).
    """
    root = np.random.SeedSequence(seed)
    init_ss, env_ss, act_ss, replay_ss = root.spawn(4)
    rng_init = np.random.default_rng(init_ss)
    rng_act = np.random.default_rng(act_ss)
    rng_replay = np.random.default_rng(replay_ss)

    env = ReconfigEnv(env_cfg, np.random.default_rng(env_ss))
    agent = SacAgent(env_cfg.n, cfg, env_cfg.gamma, rng_init)
    buffer = ReplayBuffer(
        cfg.buffer_capacity,
        store_masks=cfg.store_masks,
        printed_reward_sign=env_cfg.printed_reward_sign,
    )
    mask_of = _MaskCache(env_cfg.strict_connectivity)

    rows: list[dict] = []
    env_steps = 0
    episode_id = 0
    her_ratio = 0.0 if cfg.disable_her else cfg.her_ratio

    for epoch in range(cfg.epochs):
        # ---- collection phase
        successes = 0
        ep_rewards = []
        for _ in range(cfg.episodes_per_epoch):
            state, goal, mask = env.reset()
            total = 0.0
            step_idx = 0
            while True:
                action = agent.act_sample(state, goal, mask, rng_act)
                result = env.step(action)
                buffer.push(
                    Transition(
                        state,
                        action,
                        result.reward,
                        result.state,
                        result.done,
                        goal,
                        episode_id,
                        step_idx,
                        mask=mask if cfg.store_masks else None,
                        next_mask=result.mask if cfg.store_masks else None,
                    )
                )
                total += result.reward
                env_steps += 1
                step_idx += 1
                state, mask = result.state, result.mask
                if result.done or result.truncated:
                    successes += result.done
                    break
            ep_rewards.append(total)
            episode_id += 1

        # ---- gradient phase
        critic_losses, actor_losses, alpha_losses, entropies = [], [], [], []
        for t in range(cfg.batch_number):
            try:
                batch = batch_arrays(
                    buffer.sample(cfg.batch_size, her_ratio, rng_replay), mask_of
                )
                critic_losses.append(agent.update_critics(batch))
                if t % 2 == 0:
                    a_loss, entropy = agent.update_actor(batch)
                    actor_losses.append(a_loss)
                    entropies.append(entropy)
                    alpha_losses.append(agent.update_alpha(batch))
                    agent.soft_update_targets()
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch} gradient step {t}: {exc}; "
                    f"alpha={agent.alpha:.3e}, "
                    f"actor |w|max={max(np.abs(a).max() for a in agent.actor.arrays()):.3e}, "
                    f"critic1 |w|max={max(np.abs(a).max() for a in agent.critic1.arrays()):.3e}"
                ) from exc

        row = {
            "epoch": epoch,
            "env_steps": env_steps,
            "actor_loss": float(np.mean(actor_losses)) if actor_losses else math.nan,
            "critic_loss": float(np.mean(critic_losses)) if critic_losses else math.nan,
            "alpha": agent.alpha,
            "policy_entropy": float(np.mean(entropies)) if entropies else math.nan,
            "train_success_rate": successes / cfg.episodes_per_epoch,
            "eval_success_rate": None,
            "avg_reward": float(np.mean(ep_rewards)),
        }

        stop = False
        if cfg.eval_every and (
            (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        ):
            report = evaluate(agent, env_cfg, cfg.eval_goals, 1, seed=_eval_seed(seed, epoch))
            row["eval_success_rate"] = report.mean_success
            if cfg.stop_at_success is not None and report.mean_success >= cfg.stop_at_success:
                stop = True

        rows.append(row)
        if log_fn is not None:
            log_fn(row)
        if stop:
            break

    return TrainResult(agent, rows, env_steps)


def _eval_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, epoch]).generate_state(1)[0])


# -- metrics CSV -----------------------------------------------------------------


def write_metrics_csv(rows: Sequence[dict], path, header_meta: Optional[dict] = None) -> None:
    """Metrics log: '#'-prefixed key=value header lines (the effective
    config), then one CSV row per epoch. Missing evals are blank."""
    with open(path, "w", newline="") as f:
        f.write("# format=pivotcube-metrics v=1\n")
        for key in sorted(header_meta or {}):
            f.write(f"# {key}={header_meta[key]}\n")
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            values = []
            for col in METRIC_COLUMNS:
                v = row.get(col)
                values.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
            f.write(",".join(values) + "\n")


def read_metrics_csv(path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    rows: list[dict] = []
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            stripped = ln[1:].strip()
            if "=" in stripped:
                for part in stripped.split():
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k] = v
        elif ln:
            body.append(ln)
    header = body[0].split(",")
    for ln in body[1:]:
        rec: dict = {}
        for key, raw in zip(header, ln.split(",")):
            if raw == "":
                rec[key] = None
            elif key in ("epoch", "env_steps"):
                rec[key] = int(raw)
            else:
                rec[key] = float(raw)
        rows.append(rec)
    return meta, rows
