"""Soft actor-critic over continuous proto-actions.

Clipped double-Q with target networks and a tanh-squashed Gaussian
actor.  The belief GRU lives in the critic's parameter store and is
trained by the critic loss alone; the actor sees beliefs as constants.
Updates recompute beliefs from the raw histories in the replay batch,
so sampled transitions always use the current GRU weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .belief import BeliefConfig, BeliefEncoder
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Mlp
from .optim import AdamConfig, ParameterStore, adam_step, polyak_update
from .replay import ReplayBuffer, TransitionBatch
from .rng import substream

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SacConfig:
    action_dim: int
    gamma: float = 0.8
    tau: float = 0.002
    alpha: float = 0.2
    critic_lr: float = 0.001
    actor_lr: float = 0.003
    batch_size: int = 256
    update_per_step: int = 1
    hidden: tuple = (256, 256)

    def __post_init__(self):
        if self.action_dim <= 0:
            raise ValueError("action_dim must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        if self.batch_size <= 0 or self.update_per_step <= 0:
            raise ValueError("batch_size and update_per_step must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


class SacModel:
    """Actor, two critics, their targets, and the shared belief encoder."""

    def __init__(self, cfg: SacConfig, belief_cfg: BeliefConfig, slate_size: int,
                 item_embeddings: np.ndarray, rng: np.random.Generator):
        self.cfg = cfg
        self.belief_cfg = belief_cfg
        self.critic_store = ParameterStore()
        self.belief = BeliefEncoder(self.critic_store, belief_cfg, slate_size,
                                    item_embeddings, rng)
        h, d = belief_cfg.belief_dim, cfg.action_dim
        critic_sizes = [h + d, *cfg.hidden, 1]
        self.q1 = Mlp(self.critic_store, "q1", critic_sizes, rng, "relu")
        self.q2 = Mlp(self.critic_store, "q2", critic_sizes, rng, "relu")
        self.actor_store = ParameterStore()
        self.actor = Mlp(self.actor_store, "pi", [h, *cfg.hidden, 2 * d], rng, "relu")
        self.target_store = ParameterStore()
        for name, p in self.critic_store.items():
            if name.startswith(("q1.", "q2.")):
                self.target_store.add(name, p.value.copy())
        self.target_q1 = Mlp.attach(self.target_store, "q1", critic_sizes, "relu")
        self.target_q2 = Mlp.attach(self.target_store, "q2", critic_sizes, "relu")
        self.critic_adam = AdamConfig(cfg.critic_lr)
        self.actor_adam = AdamConfig(cfg.actor_lr)


def _bound_log_sigma_array(raw: np.ndarray) -> np.ndarray:
    mid = 0.5 * (LOG_SIGMA_MIN + LOG_SIGMA_MAX)
    half = 0.5 * (LOG_SIGMA_MAX - LOG_SIGMA_MIN)
    return mid + half * np.tanh(raw)


def actor_stats_array(model: SacModel, hidden: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Actor forward without a graph: (mu, log_sigma), both [B, d]."""
    d = model.cfg.action_dim
    out = model.actor.forward_array(hidden)
    return out[:, :d], _bound_log_sigma_array(out[:, d:])


def squashed_log_prob_array(mu: np.ndarray, log_sigma: np.ndarray,
                            u: np.ndarray) -> np.ndarray:
    """log pi(tanh(u)) for u drawn from N(mu, diag(exp(log_sigma)^2))."""
    z = (u - mu) * np.exp(-log_sigma)
    base = -0.5 * z * z - log_sigma - 0.5 * _LOG_2PI
    correction = 2.0 * (np.log(2.0) - u - ad._softplus(-2.0 * u))
    return np.sum(base - correction, axis=-1)


def select_action(model: SacModel, hidden: np.ndarray, mode: str = "sample",
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Sample (or take the mode of) the squashed Gaussian policy."""
    single = np.asarray(hidden).ndim == 1
    h = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    mu, log_sigma = actor_stats_array(model, h)
    if mode == "mean":
        a = np.tanh(mu)
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        a = np.tanh(mu + np.exp(log_sigma) * rng.standard_normal(mu.shape))
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return a[0] if single else a


def _sample_with_log_prob_array(model: SacModel, hidden: np.ndarray,
                                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    mu, log_sigma = actor_stats_array(model, hidden)
    u = mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)
    return np.tanh(u), squashed_log_prob_array(mu, log_sigma, u)


def _frozen_mlp_graph(store: ParameterStore, prefix: str, n_layers: int,
                      x: Tensor) -> Tensor:
    """Critic forward with weights as constants: gradients flow only
    through the input (the actor's action), never into the critic."""
    h = x
    for i in range(n_layers):
        w = ad.constant(store[f"{prefix}.l{i}.W"].value)
        b = ad.constant(store[f"{prefix}.l{i}.b"].value)
        h = ad.add(ad.matmul(h, w), b)
        if i != n_layers - 1:
            h = ad.relu(h)
    return h


def td_target(model: SacModel, batch: TransitionBatch, cfg: SacConfig,
              rng: np.random.Generator) -> np.ndarray:
    """y = r + gamma*(1-done)*(min Q' - alpha*log pi') with a' freshly sampled.

    Computed without a graph: the target is a constant of the critic loss.
    """
    next_hidden = model.belief.recompute_array(batch.next_slates, batch.next_clicks,
                                               batch.next_lengths)
    next_action, next_log_pi = _sample_with_log_prob_array(model, next_hidden, rng)
    target_in = np.concatenate([next_hidden, next_action], axis=1)
    tq = np.minimum(model.target_q1.forward_array(target_in)[:, 0],
                    model.target_q2.forward_array(target_in)[:, 0])
    return batch.rewards + cfg.gamma * (1.0 - batch.dones) * (tq - cfg.alpha * next_log_pi)


def critic_loss(model: SacModel, batch: TransitionBatch, cfg: SacConfig,
                rng: np.random.Generator,
                target: Optional[np.ndarray] = None) -> Tuple[Tensor, dict]:
    """Mean over the batch and both critics of (Q(s,a) - y)^2.

    The target is recomputed unless given; passing one keeps y fixed while
    parameters are varied (e.g. by a finite-difference oracle), matching
    the no-gradient-through-y semantics exactly.
    """
    b = batch.actions.shape[0]
    y = td_target(model, batch, cfg, rng) if target is None else target

    hidden = model.belief.recompute_graph(batch.prev_slates, batch.prev_clicks,
                                          batch.prev_lengths)
    q_in = ad.concat([hidden, ad.constant(batch.actions)], axis=-1)
    q1 = ad.reshape(model.q1(q_in), (b,))
    q2 = ad.reshape(model.q2(q_in), (b,))
    neg_y = ad.constant(-y)
    err = ad.add(ad.mean(ad.square(ad.add(q1, neg_y))),
                 ad.mean(ad.square(ad.add(q2, neg_y))))
    loss = ad.scale(err, 0.5)
    diag = {"critic_loss": loss.item(), "mean_q": float(np.mean(q1.value)),
            "mean_target": float(np.mean(y))}
    return loss, diag


def actor_loss(model: SacModel, batch: TransitionBatch, cfg: SacConfig,
               rng: np.random.Generator) -> Tuple[Tensor, dict]:
    """mean(alpha*log pi - min Q); beliefs and critic weights enter as
    constants, so only actor parameters receive gradients."""
    hidden = model.belief.recompute_array(batch.prev_slates, batch.prev_clicks,
                                          batch.prev_lengths)
    b, d = hidden.shape[0], cfg.action_dim
    out = model.actor(ad.constant(hidden))
    mu = ad.slice_(out, (slice(None), slice(0, d)))
    raw = ad.slice_(out, (slice(None), slice(d, 2 * d)))
    mid = 0.5 * (LOG_SIGMA_MIN + LOG_SIGMA_MAX)
    half = 0.5 * (LOG_SIGMA_MAX - LOG_SIGMA_MIN)
    log_sigma = ad.add(ad.scale(ad.tanh(raw), half), ad.constant(np.full((1, d), mid)))
    eps = rng.standard_normal((b, d))
    u = ad.add(mu, ad.mul(ad.exp(log_sigma), ad.constant(eps)))
    action = ad.tanh(u)

    neg_mu = ad.scale(mu, -1.0)
    z = ad.mul(ad.add(u, neg_mu), ad.exp(ad.scale(log_sigma, -1.0)))
    base = ad.add(ad.scale(ad.square(z), -0.5),
                  ad.add(ad.scale(log_sigma, -1.0), ad.constant(-0.5 * _LOG_2PI)))
    correction = ad.scale(
        ad.add(ad.constant(np.log(2.0)),
               ad.add(ad.scale(u, -1.0),
                      ad.scale(ad.softplus(ad.scale(u, -2.0)), -1.0))), 2.0)
    log_pi = ad.sum_(ad.add(base, ad.scale(correction, -1.0)), axis=1)

    q_in = ad.concat([ad.constant(hidden), action], axis=-1)
    n_layers = len(model.cfg.hidden) + 1
    q1 = ad.reshape(_frozen_mlp_graph(model.critic_store, "q1", n_layers, q_in), (b,))
    q2 = ad.reshape(_frozen_mlp_graph(model.critic_store, "q2", n_layers, q_in), (b,))
    q_min = ad.minimum(q1, q2)
    loss = ad.mean(ad.add(ad.scale(log_pi, cfg.alpha), ad.scale(q_min, -1.0)))
    diag = {"actor_loss": loss.item(), "mean_log_pi": float(np.mean(log_pi.value)),
            "mean_sigma": float(np.mean(np.exp(log_sigma.value)))}
    return loss, diag


def sac_update(model: SacModel, buffer: ReplayBuffer, cfg: SacConfig,
               rng: np.random.Generator) -> dict:
    """One critic step, one actor step, one polyak step."""
    if len(buffer) < cfg.batch_size:
        raise ValueError("replay buffer holds fewer transitions than a batch")
    batch = buffer.sample(cfg.batch_size, rng)
    c_loss, c_diag = critic_loss(model, batch, cfg, rng)
    ad.backward(c_loss)
    adam_step(model.critic_store, model.critic_adam)
    a_loss, a_diag = actor_loss(model, batch, cfg, rng)
    ad.backward(a_loss)
    adam_step(model.actor_store, model.actor_adam)
    polyak_update(model.target_store, model.critic_store, cfg.tau)
    return {**c_diag, **a_diag}


def save_sac(model: SacModel, path, metadata: Optional[dict] = None) -> None:
    meta = {
        "kind": "sac",
        "config": asdict(model.cfg),
        "belief": asdict(model.belief_cfg),
        "slate_size": model.belief.slate_size,
        "num_items": model.belief.num_items,
        "item_dim": model.belief.item_dim,
    }
    if metadata:
        meta.update(metadata)
    stores = {"critic": model.critic_store, "actor": model.actor_store,
              "target": model.target_store}
    if not model.belief.trainable_table:
        frozen = ParameterStore()
        frozen.add("belief.items", model.belief.table_value())
        stores["frozen"] = frozen
    save_checkpoint(path, stores, meta)


def load_sac(path) -> Tuple[SacModel, dict]:
    stores, meta = load_checkpoint(path)
    raw_cfg = dict(meta["config"])
    raw_cfg["hidden"] = tuple(raw_cfg["hidden"])
    cfg = SacConfig(**raw_cfg)
    belief_cfg = BeliefConfig(**meta["belief"])
    if "frozen" in stores:
        table = stores["frozen"]["belief.items"].value
    else:
        table = stores["critic"]["belief.items"].value
    model = SacModel(cfg, belief_cfg, meta["slate_size"], table, substream(0, "init"))
    model.critic_store.load_state_from(stores["critic"])
    model.actor_store.load_state_from(stores["actor"])
    model.target_store.load_state_from(stores["target"])
    return model, meta
