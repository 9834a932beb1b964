"""Exact-event N-player simulation and Monte Carlo equilibrium diagnostics.

Continuous time is simulated event by event, never time-stepped: between
events the empirical distribution M is constant and every strategy is
constant on its grid interval, so each player's total jump rate is piecewise
constant.  The next event is the minimum of two exponential clocks (the
designated player 0 and the aggregated rest of the population); clocks are
discarded and re-drawn at strategy-grid boundaries, which is exact by
memorylessness.  At a jump, the pair (action, destination) is drawn from the
jump chain of the strategy-averaged generator, i.e. with probability
proportional to pi_ia * Q_ija(M); for pure strategies this is exactly "draw
the action, then a destination from the action's off-diagonal rates".

Synchronous (discrete) games draw every player's action from her strategy and
every transition from P(M(t)) independently, one epoch at a time.

Randomness: numpy PCG64 generators, seeded per replication via
SeedSequence(seed + replication).spawn(2) -> [population stream, player-0
stream].  Keeping player 0 on a private stream gives common random numbers
across deviation arms: the rest of the population sees an identical stream
until the arms' trajectories actually diverge.

Player 0 accrues the strategy-averaged instantaneous cost
sum_a pi_ia(t) c_ia(M(t)) along her trajectory (between jumps her state and M
are fixed and the average over the action randomization is exact; for pure
strategies it is simply the played action's cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .bellman import discounted_tail_bound, solver_grid
from .core import (GameSpec, LocalStrategy, MarkovStrategy, PopulationPath,
                   TimeGrid)

RNG_SCHEME = "SeedSequence(seed + replication).spawn(2) -> [population, player0]"


@dataclass(frozen=True)
class SimConfig:
    """N-player simulation setup.

    ``population`` is the strategy everyone follows; ``deviation``, when set,
    replaces player 0's strategy.  ``t_end`` overrides the continuous-time
    truncation (defaults: finite horizon T, or the population grid's end);
    ``epochs`` overrides the discrete-time epoch count.
    """

    n_players: int
    population: Union[LocalStrategy, MarkovStrategy]
    seed: int = 0
    n_replications: int = 1
    deviation: Optional[Union[LocalStrategy, MarkovStrategy]] = None
    t_end: Optional[float] = None
    epochs: Optional[int] = None

    def __post_init__(self):
        if self.n_players < 1:
            raise ValueError("n_players must be >= 1")
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")


@dataclass
class SimTrace:
    """One sample path.

    Continuous mode: one row per event plus the initial row (event_player -1);
    ``m`` holds the empirical distribution after each row's event.  Discrete
    mode: one row per epoch t = 0..T with event_player fixed at -1 and
    ``player0_states`` carrying player 0's state path.
    """

    mode: str
    times: np.ndarray
    event_players: np.ndarray
    new_states: np.ndarray
    m: np.ndarray
    player0_states: np.ndarray
    realized_cost: float
    tail_bound: float
    t_end: float
    rng_info: dict = field(default_factory=dict)

    def sup_distance_to(self, path: PopulationPath) -> float:
        """sup_t ||M(t) - m(t)||_inf against a deterministic flow.

        M is piecewise constant between rows, so the supremum over a window
        [row_k, row_{k+1}) is attained against m at both window ends; both are
        checked, plus the final window up to t_end.
        """
        worst = 0.0
        for k in range(len(self.times)):
            t0 = self.times[k]
            t1 = self.times[k + 1] if k + 1 < len(self.times) else self.t_end
            mk = self.m[k]
            worst = max(worst,
                        float(np.abs(mk - path.at(t0)).max()),
                        float(np.abs(mk - path.at(min(t1, path.grid.t_end))).max()))
        return worst


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    ci95: float
    n_replications: int

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "CostEstimate":
        r = len(samples)
        stderr = float(np.std(samples, ddof=1) / math.sqrt(r)) if r > 1 else 0.0
        return cls(float(np.mean(samples)), stderr, 1.96 * stderr, r)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "ci95": self.ci95,
                "replications": self.n_replications}


def _rng_pair(seed: int, replication: int):
    ss = np.random.SeedSequence(seed + replication)
    pop_ss, p0_ss = ss.spawn(2)
    return (np.random.Generator(np.random.PCG64(pop_ss)),
            np.random.Generator(np.random.PCG64(p0_ss)))


def _rng_info(seed: int) -> dict:
    return {"generator": "numpy PCG64", "numpy_version": np.__version__,
            "scheme": RNG_SCHEME, "seed": seed}


def _strategy_matrix(strategy, t: float, m: np.ndarray) -> np.ndarray:
    if isinstance(strategy, MarkovStrategy):
        return strategy.matrix(t, m)
    return strategy.at_time(t)


def _strategy_boundaries(strategy, t_end: float) -> np.ndarray:
    if isinstance(strategy, MarkovStrategy):
        pts = strategy.time_breakpoints
        pts = np.asarray(pts, dtype=float) if pts is not None else np.empty(0)
    else:
        pts = strategy.grid.points()
    return pts[(pts > 1e-15) & (pts < t_end - 1e-15)]


def _draw_from(weights: np.ndarray, u: float):
    """Index into the flattened weight table at quantile u."""
    flat = weights.ravel()
    cdf = np.cumsum(flat)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, flat.size - 1)


def _sample_initial_states(spec, n, rng_pop, rng_p0):
    cdf = np.cumsum(spec.m0)
    s0 = int(np.searchsorted(cdf, rng_p0.random() * cdf[-1], side="right"))
    others = np.searchsorted(cdf, rng_pop.random(n - 1) * cdf[-1], side="right")
    states = np.concatenate(([min(s0, spec.n_states - 1)],
                             np.minimum(others, spec.n_states - 1)))
    return states.astype(int)


# ---------------------------------------------------------------------------
# continuous time: exact event-driven CTMC
# ---------------------------------------------------------------------------

def _resolve_t_end(spec, cfg) -> float:
    if spec.horizon.kind == "finite":
        return float(spec.horizon.length)
    if cfg.t_end is not None:
        return float(cfg.t_end)
    if isinstance(cfg.population, LocalStrategy):
        return cfg.population.grid.t_end
    raise ValueError("Markov population strategies need an explicit t_end "
                     "for discounted horizons")


def simulate_ctmc(spec: GameSpec, cfg: SimConfig, replication: int = 0) -> SimTrace:
    """One exact event-driven sample path of the asynchronous N-player game."""
    if spec.time_mode != "continuous":
        raise ValueError("simulate_ctmc needs a continuous-time game")
    rng_pop, rng_p0 = _rng_pair(cfg.seed, replication)
    n, E = cfg.n_players, spec.n_states
    t_end = _resolve_t_end(spec, cfg)
    beta = spec.horizon.discount if spec.horizon.kind == "discounted" else None

    pop, dev = cfg.population, cfg.deviation
    p0_strategy = dev if dev is not None else pop
    bounds = np.unique(np.concatenate([
        _strategy_boundaries(pop, t_end),
        _strategy_boundaries(p0_strategy, t_end),
        [t_end],
    ]))

    states = _sample_initial_states(spec, n, rng_pop, rng_p0)
    counts = np.bincount(states, minlength=E).astype(float)

    times: List[float] = [0.0]
    event_players: List[int] = [-1]
    new_states: List[int] = [states[0]]
    m_rows: List[np.ndarray] = [counts / n]
    p0_states: List[int] = [states[0]]

    cost = 0.0
    t = 0.0
    b_idx = 0

    def accrue(t0: float, t1: float, state0: int, pim0: np.ndarray, M: np.ndarray):
        nonlocal cost
        cbar = float(spec.cost_model.costs(M)[state0] @ pim0[state0])
        if beta is not None:
            cost += cbar * (math.exp(-beta * t0) - math.exp(-beta * t1)) / beta
        else:
            cost += cbar * (t1 - t0)

    while t < t_end - 1e-15:
        next_bound = bounds[b_idx] if b_idx < len(bounds) else t_end
        M = counts / n
        Q = spec.rate_model.rates(M)
        exit_rates = np.maximum(-np.einsum("iia->ia", Q.copy()), 0.0)
        pim_pop = _strategy_matrix(pop, t, M)
        pim0 = _strategy_matrix(p0_strategy, t, M)
        class_rate = np.einsum("ia,ia->i", pim_pop, exit_rates)
        counts_others = counts.copy()
        counts_others[states[0]] -= 1.0
        rate_pop = float(counts_others @ class_rate)
        rate_p0 = float(pim0[states[0]] @ exit_rates[states[0]])

        d_pop = rng_pop.exponential(1.0 / rate_pop) if rate_pop > 0 else math.inf
        d_p0 = rng_p0.exponential(1.0 / rate_p0) if rate_p0 > 0 else math.inf
        dt = min(d_pop, d_p0)

        if t + dt >= next_bound - 1e-15:
            accrue(t, next_bound, states[0], pim0, M)
            t = next_bound
            b_idx += 1
            continue

        accrue(t, t + dt, states[0], pim0, M)
        t += dt
        if d_p0 <= d_pop:
            jumper = 0
            i = states[0]
            w = pim0[i][:, None] * Q[i].T  # (A, E) action x destination
            w[:, i] = 0.0
            a_dest = _draw_from(np.maximum(w, 0.0), rng_p0.random())
            j = a_dest % E
        else:
            u = rng_pop.random()
            i = _draw_from(counts_others * class_rate, u)
            while True:
                jumper = 1 + int(rng_pop.integers(n - 1))
                if states[jumper] == i:
                    break
            w = pim_pop[i][:, None] * Q[i].T
            w[:, i] = 0.0
            a_dest = _draw_from(np.maximum(w, 0.0), rng_pop.random())
            j = a_dest % E

        counts[i] -= 1.0
        counts[j] += 1.0
        states[jumper] = j
        times.append(t)
        event_players.append(jumper)
        new_states.append(j)
        m_rows.append(counts / n)
        p0_states.append(states[0])

    tail = (math.exp(-beta * t_end) * spec.cost_bound() / beta
            if beta is not None else 0.0)
    return SimTrace(
        mode="continuous",
        times=np.array(times), event_players=np.array(event_players, dtype=int),
        new_states=np.array(new_states, dtype=int), m=np.array(m_rows),
        player0_states=np.array(p0_states, dtype=int),
        realized_cost=cost, tail_bound=tail, t_end=t_end,
        rng_info=_rng_info(cfg.seed),
    )


# ---------------------------------------------------------------------------
# discrete time: synchronous rounds
# ---------------------------------------------------------------------------

def _inverse_cdf_rows(prob_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized categorical draws, one row of probabilities per sample."""
    cdf = np.cumsum(prob_rows, axis=1)
    return (u[:, None] > cdf).sum(axis=1).astype(int)


def _resolve_epochs(spec, cfg) -> int:
    if cfg.epochs is not None:
        return int(cfg.epochs)
    if isinstance(cfg.population, LocalStrategy):
        return cfg.population.grid.n_steps
    return solver_grid(spec).n_steps


def simulate_sync(spec: GameSpec, cfg: SimConfig, replication: int = 0) -> SimTrace:
    """One sample path of the synchronous N-player game."""
    if spec.time_mode != "discrete":
        raise ValueError("simulate_sync needs a discrete-time game")
    rng_pop, rng_p0 = _rng_pair(cfg.seed, replication)
    n, E, A = cfg.n_players, spec.n_states, spec.n_actions
    K = _resolve_epochs(spec, cfg)
    if spec.horizon.kind == "finite":
        K = max(K, int(spec.horizon.length) + 1)
    delta = spec.horizon.discount if spec.horizon.kind == "discounted" else 1.0
    w = 1.0
    if spec.horizon.kind == "discounted" and spec.normalize_discrete_cost:
        w = 1.0 - delta

    pop, dev = cfg.population, cfg.deviation
    p0_strategy = dev if dev is not None else pop

    states = _sample_initial_states(spec, n, rng_pop, rng_p0)
    m_rows = np.empty((K + 1, E))
    p0_states = np.empty(K + 1, dtype=int)
    cost = 0.0
    horizon_T = int(spec.horizon.length) if spec.horizon.kind == "finite" else None

    for t in range(K):
        M = np.bincount(states, minlength=E) / n
        m_rows[t] = M
        p0_states[t] = states[0]

        pim_pop = _strategy_matrix(pop, float(t), M)
        pim0 = _strategy_matrix(p0_strategy, float(t), M)
        other_actions = _inverse_cdf_rows(pim_pop[states[1:]], rng_pop.random(n - 1))
        a0 = int(_inverse_cdf_rows(pim0[states[0]][None], rng_p0.random(1))[0])

        if horizon_T is None:
            cost += w * (delta ** t) * float(spec.cost_model.costs(M)[states[0], a0])
        elif t <= horizon_T:
            cost += float(spec.cost_model.costs(M)[states[0], a0])

        P = spec.kernel_model.kernels(M)
        next_others = _inverse_cdf_rows(P[states[1:], :, other_actions],
                                        rng_pop.random(n - 1))
        next_p0 = int(_inverse_cdf_rows(P[states[0], :, a0][None],
                                        rng_p0.random(1))[0])
        states = np.concatenate(([next_p0], next_others))

    M = np.bincount(states, minlength=E) / n
    m_rows[K] = M
    p0_states[K] = states[0]

    tail = discounted_tail_bound(spec, TimeGrid.for_epochs(K))
    return SimTrace(
        mode="discrete",
        times=np.arange(K + 1, dtype=float),
        event_players=np.full(K + 1, -1, dtype=int),
        new_states=p0_states.copy(), m=m_rows,
        player0_states=p0_states, realized_cost=cost, tail_bound=tail,
        t_end=float(K), rng_info=_rng_info(cfg.seed),
    )


def simulate(spec: GameSpec, cfg: SimConfig, replication: int = 0) -> SimTrace:
    if spec.time_mode == "continuous":
        return simulate_ctmc(spec, cfg, replication)
    return simulate_sync(spec, cfg, replication)


# ---------------------------------------------------------------------------
# Monte Carlo estimation and deviation tests
# ---------------------------------------------------------------------------

def _replication_costs(spec, cfg, n_jobs: int = 1) -> np.ndarray:
    reps = cfg.n_replications
    costs = np.empty(reps)
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for r, trace in enumerate(pool.map(
                    lambda i: simulate(spec, cfg, i), range(reps))):
                costs[r] = trace.realized_cost
    else:
        for r in range(reps):
            costs[r] = simulate(spec, cfg, r).realized_cost
    return costs


def estimate_VN(spec: GameSpec, cfg: SimConfig, n_jobs: int = 1) -> CostEstimate:
    """Monte Carlo estimate of player 0's expected cost over R replications.

    Replication i is seeded with seed + i; the reduction is an indexed array
    mean, so results do not depend on worker scheduling.
    """
    if cfg.n_replications < 2:
        raise ValueError("estimate_VN needs n_replications >= 2")
    return CostEstimate.from_samples(_replication_costs(spec, cfg, n_jobs))


@dataclass
class GainEstimate:
    """Paired-sample estimate of V(pi, pi) - V(deviation, pi)."""

    mean: float
    stderr: float
    ci95: float

    @classmethod
    def from_paired(cls, diffs: np.ndarray) -> "GainEstimate":
        r = len(diffs)
        stderr = float(np.std(diffs, ddof=1) / math.sqrt(r)) if r > 1 else 0.0
        return cls(float(np.mean(diffs)), stderr, 1.96 * stderr)


@dataclass
class DeviationReport:
    """Empirical epsilon-equilibrium evidence for a strategy profile.

    ``max_gain`` is the largest estimated cost saving over the tested
    deviation set: a lower bound (up to noise) on the epsilon for which the
    profile is an epsilon-equilibrium against these deviations.
    """

    baseline: CostEstimate
    deviation_estimates: Dict[str, CostEstimate]
    gains: Dict[str, GainEstimate]
    max_gain: float
    max_gain_ci95: float
    best_deviation: str
    n_players: int
    seed: int

    def as_dict(self) -> dict:
        return {
            "baseline": self.baseline.as_dict(),
            "deviations": {k: v.as_dict() for k, v in self.deviation_estimates.items()},
            "gains": {k: {"mean": g.mean, "stderr": g.stderr, "ci95": g.ci95}
                      for k, g in self.gains.items()},
            "max_gain": self.max_gain,
            "max_gain_ci95": self.max_gain_ci95,
            "best_deviation": self.best_deviation,
            "players": self.n_players,
            "seed": self.seed,
        }


def deviation_test(spec: GameSpec, cfg: SimConfig, pi,
                   deviations, n_jobs: int = 1) -> DeviationReport:
    """Estimate the best cost saving player 0 can get by deviating from pi.

    Uses common random numbers: all arms share the population's RNG streams
    replication by replication, so the gain estimates are paired differences.
    ``deviations`` maps names to strategies (a sequence gets numbered names).
    """
    if not deviations:
        raise ValueError("deviations must be nonempty")
    if not isinstance(deviations, dict):
        deviations = {f"deviation-{i}": d for i, d in enumerate(deviations)}
    if cfg.n_replications < 2:
        raise ValueError("deviation_test needs n_replications >= 2")

    base_cfg = SimConfig(cfg.n_players, pi, seed=cfg.seed,
                         n_replications=cfg.n_replications, deviation=None,
                         t_end=cfg.t_end, epochs=cfg.epochs)
    base_costs = _replication_costs(spec, base_cfg, n_jobs)
    baseline = CostEstimate.from_samples(base_costs)

    estimates: Dict[str, CostEstimate] = {}
    gains: Dict[str, GainEstimate] = {}
    for name, strat in deviations.items():
        dev_cfg = SimConfig(cfg.n_players, pi, seed=cfg.seed,
                            n_replications=cfg.n_replications, deviation=strat,
                            t_end=cfg.t_end, epochs=cfg.epochs)
        dev_costs = _replication_costs(spec, dev_cfg, n_jobs)
        estimates[name] = CostEstimate.from_samples(dev_costs)
        gains[name] = GainEstimate.from_paired(base_costs - dev_costs)

    best = max(gains, key=lambda k: gains[k].mean)
    return DeviationReport(
        baseline=baseline, deviation_estimates=estimates, gains=gains,
        max_gain=gains[best].mean, max_gain_ci95=gains[best].ci95,
        best_deviation=best, n_players=cfg.n_players, seed=cfg.seed,
    )
