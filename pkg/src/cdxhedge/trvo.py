"""Risk-averse trust-region policy search on the hedging MDP.

The learner maximises the mean-volatility objective ``eta = J - lam * nu2``,
where ``J`` is the discount-weighted mean step reward and ``nu2`` the weighted
variance of step rewards around it. The gradient of ``nu2`` is obtained by
transforming rewards, ``r - lam * (r - J)**2``, with ``J`` held fixed within a
batch, and the transformed rewards are fed to a TRPO step (conjugate
gradient on the Fisher-vector product plus a KL-constrained line search).

Rewards reach the learner in units of the initial option premium. The user
risk aversion is quoted on the 0.1-100 scale; the internal coefficient on EUR
rewards is ``lam_user * 1e-5``, i.e. ``lam_user * 1e-5 * premium`` on
premium-unit rewards.
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .env import EnvState, HedgingEnv

log = logging.getLogger(__name__)

LAMBDA_SCALE = 1e-5
LOG_STD_BOUNDS = (-6.0, 1.0)
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = "cdxhedge-policy"

torch.set_default_dtype(torch.float64)


class TrainingError(RuntimeError):
    """Non-finite network output or gradients, or a diverging objective."""


@dataclass
class Hyperparams:
    lam: float = 0.0
    gamma: float = 0.999
    max_kl: float = 0.01
    batch_size: int = 64
    iterations: int = 625
    seed: int = 0
    hidden: tuple = (64, 64)
    init_log_std: float = math.log(0.2)
    init_mean: float = 0.5
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_steps: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("risk aversion must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.max_kl <= 0:
            raise ValueError("KL bound must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size >= 1 and iterations >= 0 required")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def desk(cls, **kw) -> "Hyperparams":
        """Reduced preset: about 4,000 training episodes."""
        kw.setdefault("iterations", 63)
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "Hyperparams":
        """About 40,000 training episodes."""
        kw.setdefault("iterations", 625)
        return cls(**kw)


# ---------------------------------------------------------------------------
# policy


class PolicyParams:
    """Gaussian policy: MLP mean over the scaled observation, state-free log-std.

    Observations ``(S, Pay, N_h, a_prev)`` are scaled to spreads in bp/100,
    prices in units of ``premium``, the last two raw.
    """

    def __init__(self, weights: Sequence[tuple[np.ndarray, np.ndarray]], log_std: float, premium: float):
        self.weights = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in weights]
        self.log_std = float(np.clip(log_std, *LOG_STD_BOUNDS))
        self.premium = float(premium)

    @classmethod
    def init(cls, premium: float, hidden=(64, 64), init_log_std=math.log(0.2), init_mean=0.5, seed=0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        sizes = [4, *hidden, 1]
        weights = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            scale = 0.01 if last else 1.0 / math.sqrt(n_in)
            w = rng.normal(0.0, scale, size=(n_out, n_in))
            b = np.full(n_out, init_mean) if last else np.zeros(n_out)
            weights.append((w, b))
        return cls(weights, init_log_std, premium)

    @property
    def obs_scale(self) -> np.ndarray:
        return np.array([100.0, 1.0 / self.premium, 1.0, 1.0])

    @property
    def std(self) -> float:
        return math.exp(self.log_std)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.weights) + 1

    def scale(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=float) * self.obs_scale

    def mean(self, obs: np.ndarray) -> np.ndarray:
        """Action mean for raw observations of shape ``(..., 4)``."""
        h = self.scale(obs)
        for i, (w, b) in enumerate(self.weights):
            h = h @ w.T + b
            if i < len(self.weights) - 1:
                h = np.tanh(h)
        out = h[..., 0]
        if not np.all(np.isfinite(out)):
            raise TrainingError(f"non-finite policy output; log_std={self.log_std}, max|w|={self.max_abs_weight():.3g}")
        return out

    def max_abs_weight(self) -> float:
        return max(float(np.max(np.abs(a))) for wb in self.weights for a in wb)

    def act(self, state: EnvState) -> np.ndarray:
        """Deterministic action (the Gaussian mean), used for evaluation."""
        return self.mean(state.observation())

    __call__ = act

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for wb in self.weights for a in wb]
        return np.concatenate(parts + [np.array([self.log_std])])

    def with_flat(self, theta: np.ndarray) -> "PolicyParams":
        theta = np.asarray(theta, dtype=float)
        weights, i = [], 0
        for w, b in self.weights:
            nw = theta[i : i + w.size].reshape(w.shape)
            i += w.size
            nb = theta[i : i + b.size].reshape(b.shape)
            i += b.size
            weights.append((nw, nb))
        return PolicyParams(weights, theta[i], self.premium)

    # -- torch views -------------------------------------------------------

    def torch_mean_fn(self):
        """``(theta, scaled_obs) -> (mean, log_std)`` as a differentiable function."""
        shapes = [(w.shape, b.shape) for w, b in self.weights]

        def fn(theta: torch.Tensor, x: torch.Tensor):
            i = 0
            h = x
            for j, (ws, bs) in enumerate(shapes):
                nw, nb = int(np.prod(ws)), int(np.prod(bs))
                w = theta[i : i + nw].view(ws)
                i += nw
                b = theta[i : i + nb].view(bs)
                i += nb
                h = h @ w.T + b
                if j < len(shapes) - 1:
                    h = torch.tanh(h)
            log_std = torch.clamp(theta[i], *LOG_STD_BOUNDS)
            return h[..., 0], log_std

        return fn

    # -- checkpoint ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the text checkpoint atomically (temp file + rename)."""
        lines = [
            f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
            f"premium {float(self.premium).hex()}",
            f"log_std {float(self.log_std).hex()}",
            f"layers {len(self.weights)}",
        ]
        for w, b in self.weights:
            lines.append(f"layer {w.shape[0]} {w.shape[1]}")
            lines.append(" ".join(float(v).hex() for v in w.ravel()))
            lines.append(" ".join(float(v).hex() for v in b.ravel()))
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write("\n".join(lines) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        with open(path) as fh:
            lines = [l.rstrip("\n") for l in fh]
        magic, version = lines[0].split()
        if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} policy checkpoint")
        premium = float.fromhex(lines[1].split()[1])
        log_std = float.fromhex(lines[2].split()[1])
        n_layers = int(lines[3].split()[1])
        weights, i = [], 4
        for _ in range(n_layers):
            _, rows, cols = lines[i].split()
            w = np.array([float.fromhex(v) for v in lines[i + 1].split()]).reshape(int(rows), int(cols))
            b = np.array([float.fromhex(v) for v in lines[i + 2].split()])
            weights.append((w, b))
            i += 3
        return cls(weights, log_std, premium)


def gaussian_log_prob(action, mean, log_std):
    std = np.exp(log_std)
    return -0.5 * ((action - mean) / std) ** 2 - log_std - 0.5 * math.log(2 * math.pi)


def sample_action(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Draw ``mean + std * Z``; the log-probability is of the unclipped draw."""
    mu = params.mean(obs)
    a = mu + params.std * rng.standard_normal(np.shape(mu))
    return a, gaussian_log_prob(a, mu, params.log_std)


# ---------------------------------------------------------------------------
# batches and objective pieces


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Complete episodes, arrays of shape ``(n_episodes, horizon)``.

    ``rewards`` are in EUR as produced by the environment; ``reward_scale``
    converts them to learner units.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    reward_scale: float = 1.0

    @property
    def scaled_rewards(self) -> np.ndarray:
        return self.rewards / self.reward_scale

    def __len__(self) -> int:
        return self.rewards.shape[0]


def _step_weights(horizon: int, gamma: float) -> np.ndarray:
    if gamma >= 1.0:
        w = np.ones(horizon)
    else:
        w = (1.0 - gamma) * gamma ** np.arange(horizon)
    return w / w.sum()


def estimate_J(rewards: np.ndarray, gamma: float) -> float:
    """Discount-weighted mean step reward, normalised so constant rewards give that constant."""
    rewards = np.atleast_2d(rewards)
    return float(np.mean(rewards @ _step_weights(rewards.shape[1], gamma)))


def reward_volatility(rewards: np.ndarray, J: float, gamma: float) -> float:
    rewards = np.atleast_2d(rewards)
    return float(np.mean(((rewards - J) ** 2) @ _step_weights(rewards.shape[1], gamma)))


def transform_rewards(rewards: np.ndarray, J: float, lam: float) -> np.ndarray:
    if lam == 0:
        return np.asarray(rewards, dtype=float)
    return rewards - lam * (rewards - J) ** 2


def discounted_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards, dtype=float)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        out[:, t] = acc
    return out


def compute_advantages(rewards: np.ndarray, gamma: float, normalize: bool = True) -> np.ndarray:
    """Reward-to-go minus its per-timestep batch mean, optionally standardised."""
    g = discounted_to_go(np.atleast_2d(rewards), gamma)
    adv = g - g.mean(axis=0, keepdims=True)
    if normalize:
        sd = adv.std()
        adv = adv - adv.mean()
        adv = adv / sd if sd > 1e-12 else np.zeros_like(adv)
    return adv


# ---------------------------------------------------------------------------
# trust-region step


@dataclass
class UpdateInfo:
    accepted: bool
    kl: float
    improvement: float
    step_fraction: float
    grad_norm: float


def _as_tensors(params: PolicyParams, batch: TrajectoryBatch, advantages):
    x = torch.as_tensor(params.scale(batch.observations).reshape(-1, 4))
    a = torch.as_tensor(np.asarray(batch.actions, dtype=float).reshape(-1))
    adv = torch.as_tensor(np.asarray(advantages, dtype=float).reshape(-1))
    return x, a, adv


def _log_prob_t(a, mean, log_std):
    return -0.5 * ((a - mean) / torch.exp(log_std)) ** 2 - log_std - 0.5 * math.log(2 * math.pi)


def _kl_t(mu_old, ls_old, mu_new, ls_new):
    var_old, var_new = torch.exp(2 * ls_old), torch.exp(2 * ls_new)
    return torch.mean(ls_new - ls_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5)


def surrogate_and_grad(params: PolicyParams, batch: TrajectoryBatch, advantages) -> tuple[float, np.ndarray]:
    """Importance-weighted surrogate at the current parameters and its gradient."""
    fn = params.torch_mean_fn()
    x, a, adv = _as_tensors(params, batch, advantages)
    theta = torch.as_tensor(params.flat()).requires_grad_(True)
    with torch.no_grad():
        mu0, ls0 = fn(theta, x)
        lp_old = _log_prob_t(a, mu0, ls0)
    mu, ls = fn(theta, x)
    surr = torch.mean(torch.exp(_log_prob_t(a, mu, ls) - lp_old) * adv)
    (g,) = torch.autograd.grad(surr, theta)
    return float(surr.detach()), g.numpy().copy()


def surrogate_value(params: PolicyParams, theta: np.ndarray, batch: TrajectoryBatch, advantages) -> float:
    """Surrogate of parameters ``theta`` relative to ``params`` (the behaviour policy)."""
    fn = params.torch_mean_fn()
    x, a, adv = _as_tensors(params, batch, advantages)
    with torch.no_grad():
        mu0, ls0 = fn(torch.as_tensor(params.flat()), x)
        mu, ls = fn(torch.as_tensor(np.asarray(theta, dtype=float)), x)
        return float(torch.mean(torch.exp(_log_prob_t(a, mu, ls) - _log_prob_t(a, mu0, ls0)) * adv))


def mean_kl(old: PolicyParams, new: PolicyParams, observations: np.ndarray) -> float:
    x = old.scale(observations).reshape(-1, 4)
    mu0, mu1 = old.mean(observations).reshape(-1), new.mean(observations).reshape(-1)
    ls0, ls1 = old.log_std, new.log_std
    return float(np.mean(ls1 - ls0 + (math.exp(2 * ls0) + (mu0 - mu1) ** 2) / (2 * math.exp(2 * ls1)) - 0.5)) if len(x) else 0.0


def _conjugate_gradient(fvp: Callable, b: torch.Tensor, iters: int, tol: float = 1e-10) -> torch.Tensor:
    x = torch.zeros_like(b)
    r, p = b.clone(), b.clone()
    rr = r @ r
    for _ in range(iters):
        fp = fvp(p)
        alpha = rr / (p @ fp)
        x += alpha * p
        r -= alpha * fp
        rr_new = r @ r
        if rr_new < tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def trust_region_update(
    params: PolicyParams,
    batch: TrajectoryBatch,
    advantages: np.ndarray,
    max_kl: float,
    cg_iters: int = 10,
    cg_damping: float = 0.1,
    backtrack_steps: int = 10,
) -> tuple[PolicyParams, UpdateInfo]:
    """Natural-gradient step on the surrogate, kept inside ``mean KL <= max_kl``.

    Returns the old parameters unchanged when no step along the search
    direction both improves the surrogate and satisfies the KL bound.
    """
    fn = params.torch_mean_fn()
    x, a, adv = _as_tensors(params, batch, advantages)
    theta0 = torch.as_tensor(params.flat())
    with torch.no_grad():
        mu0, ls0 = fn(theta0, x)
        lp_old = _log_prob_t(a, mu0, ls0)

    def surrogate(theta):
        mu, ls = fn(theta, x)
        return torch.mean(torch.exp(_log_prob_t(a, mu, ls) - lp_old) * adv)

    theta = theta0.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(surrogate(theta), theta)
    if not torch.all(torch.isfinite(g)):
        raise TrainingError(f"non-finite policy gradient (log_std={params.log_std}, max|w|={params.max_abs_weight():.3g})")
    grad_norm = float(g.norm())
    if grad_norm == 0.0:
        return params, UpdateInfo(False, 0.0, 0.0, 0.0, 0.0)

    theta_k = theta0.clone().requires_grad_(True)
    mu_k, ls_k = fn(theta_k, x)
    kl = _kl_t(mu0, ls0, mu_k, ls_k)
    (grad_kl,) = torch.autograd.grad(kl, theta_k, create_graph=True)

    def fvp(v):
        (hv,) = torch.autograd.grad(grad_kl @ v, theta_k, retain_graph=True)
        return hv + cg_damping * v

    step_dir = _conjugate_gradient(fvp, g, cg_iters)
    shs = float(step_dir @ fvp(step_dir))
    if not math.isfinite(shs) or shs <= 0:
        raise TrainingError(f"degenerate Fisher quadratic form {shs}")
    full_step = math.sqrt(2.0 * max_kl / shs) * step_dir

    with torch.no_grad():
        base = float(surrogate(theta0))
        for k in range(backtrack_steps):
            frac = 0.5**k
            cand = theta0 + frac * full_step
            mu_c, ls_c = fn(cand, x)
            kl_c = float(_kl_t(mu0, ls0, mu_c, ls_c))
            gain = float(surrogate(cand)) - base
            if math.isfinite(gain) and kl_c <= max_kl and gain > 0:
                return params.with_flat(cand.numpy()), UpdateInfo(True, kl_c, gain, frac, grad_norm)
    return params, UpdateInfo(False, 0.0, 0.0, 0.0, grad_norm)


# ---------------------------------------------------------------------------
# rollouts and training loop


def collect(env: HedgingEnv, params: PolicyParams, rng: np.random.Generator, reward_scale: float) -> TrajectoryBatch:
    """Run the stochastic policy over every path of ``env``."""
    state = env.reset()
    n, horizon = len(env), env.n_steps - 1
    obs = np.empty((n, horizon, 4))
    acts, rews, lps = (np.empty((n, horizon)) for _ in range(3))
    for t in range(horizon):
        o = state.observation()
        a, lp = sample_action(params, o, rng)
        res = env.step(state, a)
        obs[:, t], acts[:, t], rews[:, t], lps[:, t] = o, a, res.reward, lp
        state = res.state
    return TrajectoryBatch(obs, acts, rews, lps, reward_scale)


EnvFactory = Callable[[int], HedgingEnv]


@dataclass
class TrainLogRow:
    iteration: int
    J: float
    nu2: float
    eta: float
    mean_kl: float
    episodes_seen: int
    accepted: bool = True


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[TrainLogRow] = field(default_factory=list)

    def write_log(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,J,nu2,eta,mean_kl,episodes_seen\n")
            for r in self.log:
                fh.write(f"{r.iteration},{r.J!r},{r.nu2!r},{r.eta!r},{r.mean_kl!r},{r.episodes_seen}\n")


def internal_lambda(lam_user: float, premium: float) -> float:
    """Coefficient on premium-unit rewards equivalent to ``lam_user * 1e-5`` on EUR."""
    return lam_user * LAMBDA_SCALE * premium


def train(
    env_factory: EnvFactory,
    hp: Hyperparams,
    premium: float,
    init: Optional[PolicyParams] = None,
    on_iteration: Optional[Callable[[int, PolicyParams, TrainLogRow], None]] = None,
) -> TrainResult:
    """Collect a batch, transform rewards, step the policy; ``hp.iterations`` times.

    ``env_factory(i)`` returns the environment (``hp.batch_size`` paths) for
    iteration ``i``. J, nu2 and eta are logged in learner (premium) units.
    """
    params = init or PolicyParams.init(premium, hp.hidden, hp.init_log_std, hp.init_mean, hp.seed)
    lam = internal_lambda(hp.lam, premium)
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 0x5EED]))
    result = TrainResult(params)
    seen = 0
    for it in range(hp.iterations):
        env = env_factory(it)
        batch = collect(env, params, rng, premium)
        r = batch.scaled_rewards
        J = estimate_J(r, hp.gamma)
        if abs(J) > 100.0:
            raise TrainingError(f"objective diverged at iteration {it}: |J| = {abs(J):.3g} premiums per step")
        nu2 = reward_volatility(r, J, hp.gamma)
        adv = compute_advantages(transform_rewards(r, J, lam), hp.gamma)
        params, info = trust_region_update(
            params, batch, adv, hp.max_kl, hp.cg_iters, hp.cg_damping, hp.backtrack_steps
        )
        seen += len(batch)
        row = TrainLogRow(it, J, nu2, J - lam * nu2, info.kl, seen, info.accepted)
        result.log.append(row)
        result.params = params
        log.info("iter %d J=%.3e nu2=%.3e eta=%.3e kl=%.2e std=%.3f", it, J, nu2, row.eta, info.kl, params.std)
        if on_iteration is not None:
            on_iteration(it, params, row)
    return result


class GbmEpisodeFactory:
    """Fresh GBM (or Heston) paths per iteration, seeded by ``(seed, iteration)``."""

    def __init__(self, config, simulate, model_params, batch_size: int, seed: int):
        self.config, self.simulate, self.model_params = config, simulate, model_params
        self.batch_size, self.seed = batch_size, seed

    def __call__(self, iteration: int) -> HedgingEnv:
        path_seed = int(np.random.SeedSequence([self.seed, iteration]).generate_state(1)[0])
        paths = self.simulate(self.model_params, self.config.grid, path_seed, self.batch_size)
        return HedgingEnv(self.config, paths.spreads)
