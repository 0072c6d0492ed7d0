"""
No-U-Turn sampler with multinomial trajectory sampling.

The implementation follows the current Stan formulation: trajectories are
doubled in a random direction, states are sampled from the trajectory with
weights proportional to ``exp(-H)`` (biased progressive sampling between
subtrees at the top level), and the generalised U-turn criterion is
checked across every merged pair of subtrees including the two extra
boundary checks. Step size is tuned by dual averaging and a diagonal mass
matrix is estimated in doubling windows during warmup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["NUTSSampler", "DualAveraging", "WarmupSchedule", "run_nuts_chain"]

LogDensity = Callable[[np.ndarray], tuple[float, np.ndarray]]

_MAX_ENERGY_ERROR = 1000.0


class DualAveraging:
    def __init__(self, step_size: float, target: float = 0.8, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.count = 0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.count) / self.gamma
        w = self.count ** -self.kappa
        self.x_bar = w * x + (1 - w) * self.x_bar
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WarmupSchedule:
    """Stan-style windows: fast initial buffer, doubling slow windows, fast final buffer."""

    def __init__(self, num_warmup: int, init_buffer: int = 75, term_buffer: int = 50, base_window: int = 25):
        self.num_warmup = num_warmup
        if num_warmup < 20:
            self.windows = []
            return
        if init_buffer + term_buffer + base_window > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - init_buffer - term_buffer
        ends, start, size = [], init_buffer, base_window
        last = num_warmup - term_buffer
        while start < last:
            end = start + size
            if end + 2 * size > last:
                end = last
            ends.append((start, end))
            start, size = end, 2 * size
        self.windows = ends

    def window_end(self, it: int) -> bool:
        return any(it == end - 1 for _, end in self.windows)

    def in_window(self, it: int) -> bool:
        return any(s <= it < e for s, e in self.windows)


@dataclass
class _Tree:
    q_left: np.ndarray
    p_left: np.ndarray
    g_left: np.ndarray
    q_right: np.ndarray
    p_right: np.ndarray
    g_right: np.ndarray
    q_sample: np.ndarray
    logp_sample: float
    g_sample: np.ndarray
    log_w: float
    rho: np.ndarray
    ps_left: np.ndarray
    ps_right: np.ndarray
    turning: bool = False
    diverged: bool = False
    sum_accept: float = 0.0
    n_leapfrog: int = 0


@dataclass
class TransitionStats:
    accept_stat: float
    step_size: float
    tree_depth: int
    n_leapfrog: int
    diverged: bool
    potential: float


def _no_uturn(ps_minus, ps_plus, rho) -> bool:
    return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0


@dataclass
class NUTSSampler:
    """One NUTS chain with warmup adaptation.

    ``log_density(x)`` must return the log target and its gradient. After
    :meth:`initialize`, every :meth:`step` performs one transition; the
    first ``num_warmup`` transitions adapt the step size and mass matrix.
    """

    log_density: LogDensity
    dim: int
    rng: np.random.Generator
    num_warmup: int = 500
    target_accept: float = 0.8
    max_depth: int = 10
    adapt_mass: bool = True
    step_size: float = 0.1
    inv_mass: np.ndarray | None = None
    iteration: int = 0
    stats: list = field(default_factory=list)

    def initialize(self, x0):
        self.q = np.array(x0, dtype=float)
        if self.inv_mass is None:
            self.inv_mass = np.ones(self.dim)
        self.refresh()
        if not np.isfinite(self.logp):
            raise ValueError("initial point has non-finite log density")
        self.step_size = self._reasonable_step_size(self.step_size)
        self.da = DualAveraging(self.step_size, self.target_accept)
        self.schedule = WarmupSchedule(self.num_warmup)
        self._reset_window()
        return self

    def refresh(self):
        """Recompute the log density at the current point (after the target changed)."""
        self.logp, self.grad = self.log_density(self.q)

    # -- internals ---------------------------------------------------------

    def _reset_window(self):
        self._wn = 0
        self._wmean = np.zeros(self.dim)
        self._wm2 = np.zeros(self.dim)

    def _kinetic(self, p):
        return 0.5 * float(np.sum(p * p * self.inv_mass))

    def _leapfrog(self, q, p, g, eps):
        p = p + 0.5 * eps * g
        q = q + eps * self.inv_mass * p
        logp, g = self.log_density(q)
        p = p + 0.5 * eps * g
        return q, p, g, logp

    def _reasonable_step_size(self, eps):
        p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)
        h0 = -self.logp + self._kinetic(p)

        def log_accept(e):
            with np.errstate(all="ignore"):
                _, p1, _, logp1 = self._leapfrog(self.q, p, self.grad, e)
                h1 = -logp1 + self._kinetic(p1)
            return h0 - h1 if np.isfinite(h1) else -np.inf

        direction = 1 if log_accept(eps) > math.log(0.8) else -1
        for _ in range(100):
            la = log_accept(eps)
            if direction == 1 and not la > math.log(0.8):
                break
            if direction == -1 and la > math.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps / 2.0
            if eps > 1e7 or eps < 1e-10:
                break
        return eps

    def _leaf(self, q, p, g, eps, h0):
        with np.errstate(all="ignore"):
            q1, p1, g1, logp1 = self._leapfrog(q, p, g, eps)
            h = -logp1 + self._kinetic(p1)
        if not np.isfinite(h):
            h = np.inf
        delta = h - h0
        ps = self.inv_mass * p1
        return _Tree(q1, p1, g1, q1, p1, g1, q1, logp1, g1, -delta, p1.copy(), ps, ps,
                     diverged=delta > _MAX_ENERGY_ERROR,
                     sum_accept=min(1.0, math.exp(-delta)) if delta > -700 else 1.0,
                     n_leapfrog=1)

    def _build(self, q, p, g, depth, eps, h0):
        if depth == 0:
            return self._leaf(q, p, g, eps, h0)
        first = self._build(q, p, g, depth - 1, eps, h0)
        if first.turning or first.diverged:
            return first
        if eps > 0:
            second = self._build(first.q_right, first.p_right, first.g_right, depth - 1, eps, h0)
        else:
            second = self._build(first.q_left, first.p_left, first.g_left, depth - 1, eps, h0)
        tree = self._merge(first, second, eps > 0, biased=False)
        return tree

    def _merge(self, old, new, forward, biased):
        """Combine two adjacent trees; ``new`` lies after ``old`` when ``forward``."""
        left, right = (old, new) if forward else (new, old)
        log_w = np.logaddexp(old.log_w, new.log_w)
        if new.turning or new.diverged:
            take_new = False
        elif biased:
            take_new = math.log(self.rng.uniform()) < new.log_w - old.log_w
        else:
            take_new = math.log(self.rng.uniform()) < new.log_w - log_w
        src = new if take_new else old
        rho = left.rho + right.rho
        tree = _Tree(left.q_left, left.p_left, left.g_left, right.q_right, right.p_right, right.g_right,
                     src.q_sample, src.logp_sample, src.g_sample, log_w, rho,
                     left.ps_left, right.ps_right,
                     turning=new.turning, diverged=new.diverged,
                     sum_accept=old.sum_accept + new.sum_accept,
                     n_leapfrog=old.n_leapfrog + new.n_leapfrog)
        if tree.turning or tree.diverged:
            return tree
        ok = _no_uturn(left.ps_left, right.ps_right, rho)
        # extra checks spanning the junction between the subtrees
        ok = ok and _no_uturn(left.ps_left, right.ps_left, left.rho + right.p_left)
        ok = ok and _no_uturn(left.ps_right, right.ps_right, right.rho + left.p_right)
        tree.turning = not ok
        return tree

    def _transition(self):
        eps = self.step_size
        p0 = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)
        h0 = -self.logp + self._kinetic(p0)
        ps0 = self.inv_mass * p0
        traj = _Tree(self.q, p0, self.grad, self.q, p0, self.grad, self.q, self.logp, self.grad,
                     0.0, p0.copy(), ps0, ps0)
        depth = 0
        while depth < self.max_depth:
            forward = self.rng.uniform() < 0.5
            if forward:
                sub = self._build(traj.q_right, traj.p_right, traj.g_right, depth, eps, h0)
            else:
                sub = self._build(traj.q_left, traj.p_left, traj.g_left, depth, -eps, h0)
            traj = self._merge(traj, sub, forward, biased=True)
            depth += 1
            if traj.turning or traj.diverged:
                break
        self.q, self.logp, self.grad = traj.q_sample, traj.logp_sample, traj.g_sample
        n = max(traj.n_leapfrog, 1)
        return TransitionStats(traj.sum_accept / n, eps, depth, traj.n_leapfrog, traj.diverged, -self.logp)

    def step(self) -> np.ndarray:
        st = self._transition()
        it = self.iteration
        if it < self.num_warmup:
            self.step_size = self.da.update(st.accept_stat)
            if self.adapt_mass and self.schedule.in_window(it):
                self._wn += 1
                d = self.q - self._wmean
                self._wmean += d / self._wn
                self._wm2 += d * (self.q - self._wmean)
            if self.adapt_mass and self.schedule.window_end(it) and self._wn > 1:
                n = self._wn
                var = self._wm2 / (n - 1)
                self.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                self._reset_window()
                self.step_size = self._reasonable_step_size(self.step_size)
                self.da.restart(self.step_size)
            if it == self.num_warmup - 1:
                self.step_size = self.da.final_step_size
        self.iteration += 1
        self.stats.append(st)
        return self.q

    @property
    def divergences(self) -> int:
        return sum(s.diverged for s in self.stats[self.num_warmup:])


def run_nuts_chain(log_density: LogDensity, x0, num_warmup: int, num_samples: int,
                   rng: np.random.Generator, **kwargs):
    """Run warmup and sampling; return the post-warmup draws and the sampler."""
    sampler = NUTSSampler(log_density, len(x0), rng, num_warmup=num_warmup, **kwargs).initialize(x0)
    draws = np.empty((num_samples, len(x0)))
    for _ in range(num_warmup):
        sampler.step()
    for s in range(num_samples):
        draws[s] = sampler.step()
    return draws, sampler
