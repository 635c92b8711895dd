"""Noise schedules, the shared-noise forward process, schedule search and the reverse sampler."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_1..beta_T with alpha_t = 1 - beta_t and alpha_bar_t = prod_{s<=t} alpha_s.

    Arrays are 0-indexed; step ``t`` (1..T) lives at index ``t - 1``.
    """

    beta: np.ndarray
    family: str = "custom"
    params: dict = field(default_factory=dict)
    strict: bool = True

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if beta.size == 0:
            raise ScheduleError("schedule needs at least one step")
        if not np.all(np.isfinite(beta)):
            raise ScheduleError("non-finite beta")
        if self.strict:
            if np.any(beta <= 0) or np.any(beta >= 1):
                raise ScheduleError("beta must lie strictly inside (0, 1)")
            if np.any(np.diff(np.cumprod(1 - beta)) >= 0):
                raise ScheduleError("alpha_bar must be strictly decreasing")
        elif np.any(beta < 0) or np.any(beta >= 1):
            raise ScheduleError("beta must lie in [0, 1)")
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @property
    def accepted(self) -> bool:
        return bool(self.alpha_bar[-1] < 1e-2)

    def check_step(self, t) -> np.ndarray:
        arr = np.asarray(t)
        if arr.size == 0 or np.any(arr != np.floor(arr)) or np.min(arr) < 1 or np.max(arr) > self.T:
            raise ScheduleError(f"time step must be an integer in [1, {self.T}]")
        return arr.astype(np.int64)

    @classmethod
    def linear(cls, T: int, start: float = 1e-4, end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(start, end, T), "linear", {"T": T, "start": start, "end": end})

    @classmethod
    def cosine(cls, T: int, s: float = 0.008, max_beta: float = 0.999) -> "NoiseSchedule":
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        beta = np.clip(1 - f[1:] / f[:-1], 1e-8, max_beta)
        return cls(beta, "cosine", {"T": T, "s": s, "max_beta": max_beta})

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["beta"], dtype=np.float64), d.get("family", "custom"), d.get("params", {}))

    def describe(self) -> str:
        p = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}({p})"


def _coef(values: np.ndarray, like, ndim: int):
    """Broadcast per-sample coefficients against an N x ... array (numpy or torch)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape((-1,) + (1,) * (ndim - 1))
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(values, dtype=like.dtype, device=like.device)
    return values


def q_sample(x0, t, eps, schedule: NoiseSchedule):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps; ``t`` scalar or one per sample."""
    if tuple(eps.shape) != tuple(x0.shape):
        raise ScheduleError("noise must have the shape of x0")
    t = schedule.check_step(t)
    ab = schedule.alpha_bar[t - 1]
    return _coef(np.sqrt(ab), x0, x0.ndim) * x0 + _coef(np.sqrt(1 - ab), x0, x0.ndim) * eps


def shared_noise(rng: np.random.Generator, *shapes: tuple[int, ...]) -> list[np.ndarray]:
    """One standard-normal draw per step, shared by arrays of different shapes.

    Each sample (leading axis) gets one stream long enough for the largest shape; every
    array takes the prefix it needs, so equal shapes receive identical noise.
    """
    if rng is None:
        raise ScheduleError("an explicitly seeded random generator is required")
    n = shapes[0][0]
    if any(s[0] != n for s in shapes):
        raise ScheduleError("shared noise needs a common leading (trial) axis")
    per = [int(np.prod(s[1:])) for s in shapes]
    stream = rng.standard_normal((n, max(per)))
    return [stream[:, :k].reshape(s) for k, s in zip(per, shapes)]


def combine_noise(eps_steps: Sequence[np.ndarray], schedule: NoiseSchedule) -> np.ndarray:
    """The single noise that makes the closed form equal ``len(eps_steps)`` recursion steps."""
    t = len(eps_steps)
    alpha, beta = schedule.alpha, schedule.beta
    total = np.zeros_like(eps_steps[0], dtype=np.float64)
    for s in range(1, t + 1):
        c = math.sqrt(beta[s - 1] * float(np.prod(alpha[s:t])))
        total = total + c * eps_steps[s - 1]
    return total / math.sqrt(1.0 - schedule.alpha_bar[t - 1])


def _as_rng(rng) -> np.random.Generator:
    if rng is None:
        raise ScheduleError("an explicitly seeded random generator is required")
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    raise ScheduleError(f"unsupported rng {type(rng).__name__}")


def forward_pair(e0: np.ndarray, f0: np.ndarray, t: int, schedule: NoiseSchedule, rng,
                 method: str = "iterative", return_noise: bool = False):
    """Diffuse paired EEG/fNIRS trials to step ``t`` with the same noise draw at every step.

    ``method="iterative"`` runs the per-step recursion; ``"closed"`` uses one combined draw.
    With ``return_noise`` the per-array noises of the step (or the combined noise) are returned too.
    """
    rng = _as_rng(rng)
    t = int(schedule.check_step(t))
    if e0.shape[0] != f0.shape[0]:
        raise ScheduleError("e0 and f0 must be trial-aligned")
    if method == "closed":
        eps_e, eps_f = shared_noise(rng, e0.shape, f0.shape)
        out = (q_sample(e0, t, eps_e, schedule), q_sample(f0, t, eps_f, schedule))
        return out + (eps_e, eps_f) if return_noise else out
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    e, f = np.asarray(e0, dtype=np.float64), np.asarray(f0, dtype=np.float64)
    steps_e, steps_f = [], []
    for s in range(1, t + 1):
        eps_e, eps_f = shared_noise(rng, e.shape, f.shape)
        a, b = math.sqrt(schedule.alpha[s - 1]), math.sqrt(schedule.beta[s - 1])
        e = a * e + b * eps_e
        f = a * f + b * eps_f
        if return_noise:
            steps_e.append(eps_e)
            steps_f.append(eps_f)
    if return_noise:
        return e, f, steps_e, steps_f
    return e, f


# --- Wasserstein schedule search ----------------------------------------------------


def wasserstein_1d(samples_p, samples_q) -> float:
    """Exact W1 between two empirical 1-D distributions (integral of |F_p - F_q|)."""
    p = np.sort(np.asarray(samples_p, dtype=np.float64).ravel())
    q = np.sort(np.asarray(samples_q, dtype=np.float64).ravel())
    if p.size == 0 or q.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    if p.size == q.size:
        return float(np.mean(np.abs(p - q)))
    allv = np.sort(np.concatenate([p, q]))
    widths = np.diff(allv)
    cdf_p = np.searchsorted(p, allv[:-1], side="right") / p.size
    cdf_q = np.searchsorted(q, allv[:-1], side="right") / q.size
    return float(np.sum(np.abs(cdf_p - cdf_q) * widths))


@dataclass
class CandidateResult:
    schedule: NoiseSchedule
    w_f_ref: float
    w_e_ref: float
    w_f_e: float
    total: float
    accepted: bool
    error: str | None = None

    def row(self) -> dict[str, Any]:
        return {
            "family": self.schedule.family, **self.schedule.params,
            "alpha_bar_T": float(self.schedule.alpha_bar[-1]),
            "W_fT_ref": self.w_f_ref, "W_eT_ref": self.w_e_ref, "W_fT_eT": self.w_f_e,
            "W_total": self.total, "accepted": self.accepted, "error": self.error,
        }


@dataclass
class ScheduleSearchReport:
    candidates: list[CandidateResult]
    chosen: int
    seed: int

    @property
    def best(self) -> NoiseSchedule:
        return self.candidates[self.chosen].schedule

    def to_dict(self) -> dict:
        rows = [c.row() for c in self.candidates]
        for i, r in enumerate(rows):
            r["chosen"] = i == self.chosen
        return {"seed": self.seed, "chosen": self.chosen, "candidates": rows,
                "schedule": self.best.to_dict()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def default_candidates() -> list[NoiseSchedule]:
    out = []
    for T in (50, 100, 200, 500, 1000):
        for start in (1e-5, 1e-4, 1e-3):
            for end in (0.01, 0.02, 0.05):
                out.append(NoiseSchedule.linear(T, start, end))
        out.append(NoiseSchedule.cosine(T))
    return out


def _pool(x: np.ndarray, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    flat = np.asarray(x, dtype=np.float64).ravel()
    if limit is not None and flat.size > limit:
        flat = flat[rng.choice(flat.size, size=limit, replace=False)]
    return flat


def schedule_search(e0: np.ndarray, f0: np.ndarray, candidates: Sequence[NoiseSchedule] | None = None,
                    seed: int = 0, max_values: int | None = 200_000) -> ScheduleSearchReport:
    """Pick the schedule minimizing W(f_T, ref) + W(e_T, ref) + W(f_T, e_T).

    ``ref`` is a standard-Gaussian draw the size of f0. Every candidate sees the same
    noise and reference draws so the comparison isolates the schedule. Inputs should
    already be standardized per channel.
    """
    candidates = list(default_candidates() if candidates is None else candidates)
    if not candidates:
        raise ScheduleError("candidate grid is empty")
    e0 = np.asarray(e0, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    results = []
    for sched in candidates:
        noise_rng = np.random.default_rng(seed)
        eps_e, eps_f = shared_noise(noise_rng, e0.shape, f0.shape)
        ref = noise_rng.standard_normal(f0.shape)
        try:
            e_T = q_sample(e0, sched.T, eps_e, sched)
            f_T = q_sample(f0, sched.T, eps_f, sched)
            pick = np.random.default_rng(seed + 1)
            pe, pf, pr = _pool(e_T, max_values, pick), _pool(f_T, max_values, pick), _pool(ref, max_values, pick)
            w1, w2, w3 = wasserstein_1d(pf, pr), wasserstein_1d(pe, pr), wasserstein_1d(pf, pe)
            total = w1 + w2 + w3
            err = None if math.isfinite(total) else "non-finite W"
        except (FloatingPointError, ValueError) as exc:
            w1 = w2 = w3 = total = float("nan")
            err = str(exc)
        results.append(CandidateResult(sched, w1, w2, w3, total, sched.accepted, err))
    valid = [i for i, r in enumerate(results) if r.error is None]
    if not valid:
        raise ScheduleError("no candidate produced a finite discrepancy")
    chosen = min(valid, key=lambda i: (results[i].total, i))
    return ScheduleSearchReport(results, chosen, seed)


# --- reverse process --------------------------------------------------------------


def denoise_step(f_t, eps_hat, t: int, schedule: NoiseSchedule, noise=None):
    """f_{t-1} = (f_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t).

    Deterministic by default. Passing ``noise`` adds the standard posterior term
    sigma_t * noise for t > 1 (off unless requested).
    """
    t = int(schedule.check_step(t))
    beta, alpha, ab = schedule.beta[t - 1], schedule.alpha[t - 1], schedule.alpha_bar[t - 1]
    if ab >= 1.0:
        scale = 0.0 if beta == 0 else math.inf
    else:
        scale = beta / math.sqrt(1.0 - ab)
    out = (f_t - scale * eps_hat) / math.sqrt(alpha)
    if noise is not None and t > 1:
        ab_prev = schedule.alpha_bar[t - 2]
        sigma = math.sqrt(beta * (1 - ab_prev) / (1 - ab))
        out = out + sigma * noise
    return out


EpsModel = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def sample(net, e0: np.ndarray, maps, schedule: NoiseSchedule, rng, fnirs_shape: tuple[int, int] | None = None,
           e_mode: str = "closed", posterior_noise: bool = False, batch_size: int = 64) -> np.ndarray:
    """Synthesize fNIRS trials for EEG trials ``e0`` by running the reverse chain from t=T to 1.

    ``net`` is a UNet (called as ``net(e_t, f_t, maps, t)``). ``e_mode="closed"`` redraws
    e_t from e0 at each step; ``"trajectory"`` replays one stored forward recursion.
    """
    rng = _as_rng(rng)
    e0 = np.asarray(e0, dtype=np.float64)
    cfg = getattr(net, "cfg", None)
    if fnirs_shape is None:
        if cfg is None:
            raise ValueError("fnirs_shape is required for a network without cfg")
        fnirs_shape = (cfg.fnirs_channels, cfg.length)
    if cfg is not None and tuple(e0.shape[1:]) != (cfg.eeg_channels, cfg.eeg_length):
        raise ValueError(f"e0 must be N x {cfg.eeg_channels} x {cfg.eeg_length}, got {e0.shape}")
    n = e0.shape[0]
    f = rng.standard_normal((n,) + tuple(fnirs_shape))

    seeds = rng.integers(0, 2**63 - 1, size=schedule.T)
    e_traj = None
    if e_mode == "trajectory":
        e_traj = e0.copy()
        for s in range(1, schedule.T + 1):
            eps = np.random.default_rng(seeds[s - 1]).standard_normal(e0.shape)
            e_traj = math.sqrt(schedule.alpha[s - 1]) * e_traj + math.sqrt(schedule.beta[s - 1]) * eps
    elif e_mode != "closed":
        raise ValueError(f"unknown e_mode {e_mode!r}")

    param = next(net.parameters(), None)
    dtype = param.dtype if param is not None else torch.float32
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            for t in range(schedule.T, 0, -1):
                if e_traj is None:
                    eps_e = np.random.default_rng(seeds[t - 1]).standard_normal(e0.shape)
                    e_t = q_sample(e0, t, eps_e, schedule)
                else:
                    e_t = e_traj
                eps_hat = np.empty_like(f)
                for lo in range(0, n, batch_size):
                    sl = slice(lo, lo + batch_size)
                    out = net(torch.as_tensor(e_t[sl], dtype=dtype), torch.as_tensor(f[sl], dtype=dtype),
                              maps, torch.full((min(batch_size, n - lo),), t, dtype=torch.long))
                    eps_hat[sl] = out.double().numpy()
                z = rng.standard_normal(f.shape) if posterior_noise else None
                f = denoise_step(f, eps_hat, t, schedule, noise=z)
                if e_traj is not None and t > 1:
                    eps = np.random.default_rng(seeds[t - 1]).standard_normal(e0.shape)
                    e_traj = (e_traj - math.sqrt(schedule.beta[t - 1]) * eps) / math.sqrt(schedule.alpha[t - 1])
    finally:
        net.train(was_training)
    return f
