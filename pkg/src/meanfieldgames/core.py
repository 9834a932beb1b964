"""Domain types for finite-state, finite-action mean field games.

A game couples a population of identical players through population-dependent
transition dynamics and costs.  States are 1..E (0-based internally), actions
1..A.  In continuous time the dynamics are given by rate matrices Q_a(m); in
discrete time by stochastic kernels P_a(m).  Both the rates/kernels and the
per-(state, action) costs may depend affinely on the population distribution
m, or be supplied as opaque callables for library use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
PATH_SIMPLEX_TOL = 1e-9


class GridMismatchError(ValueError):
    """Two time grids that must be compatible are not."""


class GridTooCoarseError(ValueError):
    """The explicit backward scheme is unstable on the requested grid."""


class TailToleranceError(ValueError):
    """The grid's horizon is too short for the requested truncation tail."""


class EnumerationLimitError(ValueError):
    """A brute-force enumeration would exceed the instance-size guard."""


def _as_readonly(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def project_to_simplex(v: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Clamp negative entries to zero and renormalize to unit mass.

    Returns (projected vector, largest clamped magnitude, mass drift before
    renormalization).  The mass is assumed to be near 1, so the renormalizing
    sum is always positive.
    """
    clamped = float(-min(v.min(), 0.0))
    w = np.maximum(v, 0.0)
    s = w.sum()
    return w / s, clamped, abs(s - 1.0)


def is_distribution(v: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    return bool(v.min() >= -tol and abs(v.sum() - 1.0) <= tol)


# ---------------------------------------------------------------------------
# time grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps intervals.

    A grid carries K = n_steps decision intervals [t_k, t_{k+1}) and K + 1
    node points.  Discrete-time games use the unit grid (h = 1), where
    interval k is decision epoch k.
    """

    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")

    @property
    def h(self) -> float:
        return self.t_end / self.n_steps

    def points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def interval_index(self, t: float) -> int:
        """Index of the interval containing t; t == t_end maps to the last one."""
        k = int(np.floor(t / self.h + 1e-12))
        return min(max(k, 0), self.n_steps - 1)

    @classmethod
    def for_epochs(cls, n_epochs: int) -> "TimeGrid":
        """Unit-step grid for a discrete-time game with n_epochs decisions."""
        return cls(float(n_epochs), n_epochs)

    def refines(self, other: "TimeGrid") -> bool:
        return (
            abs(self.t_end - other.t_end) <= 1e-12 * max(1.0, other.t_end)
            and self.n_steps % other.n_steps == 0
        )

    def compatible_fine(self, other: "TimeGrid") -> "TimeGrid":
        """The finer of two mutually refining grids; raises on mismatch."""
        if self.refines(other):
            return self
        if other.refines(self):
            return other
        raise GridMismatchError(
            f"grids are not nested: ({self.t_end}, {self.n_steps}) vs "
            f"({other.t_end}, {other.n_steps})"
        )


# ---------------------------------------------------------------------------
# population-dependent model pieces
# ---------------------------------------------------------------------------

class RateModel:
    """Transition-rate matrices Q_ija(m) for continuous time.

    Affine form: Q_ija(m) = base[i, j, a] + sum_k slope[i, j, a, k] * m_k.
    On the simplex an affine map equals the convex combination of its vertex
    values, so generator properties checked at the E vertices hold everywhere.
    Alternatively pass ``evaluator``: a callable m -> (E, E, A) array.
    """

    def __init__(self, base=None, slope=None, evaluator=None, n_states=None,
                 n_actions=None):
        if evaluator is not None:
            if base is not None or slope is not None:
                raise ValueError("pass either affine coefficients or an evaluator")
            if n_states is None or n_actions is None:
                raise ValueError("evaluator form needs n_states and n_actions")
            self.evaluator = evaluator
            self.base = None
            self.slope = None
            self.n_states = n_states
            self.n_actions = n_actions
            return
        base = _as_readonly(base)
        if base.ndim != 3 or base.shape[0] != base.shape[1]:
            raise ValueError("base must have shape (E, E, A)")
        E, _, A = base.shape
        if slope is None:
            slope = np.zeros((E, E, A, E))
        slope = _as_readonly(slope)
        if slope.shape != (E, E, A, E):
            raise ValueError("slope must have shape (E, E, A, E)")
        self.base = base
        self.slope = slope
        self.evaluator = None
        self.n_states = E
        self.n_actions = A

    @property
    def is_affine(self) -> bool:
        return self.evaluator is None

    def rates(self, m: np.ndarray) -> np.ndarray:
        if self.evaluator is not None:
            return np.asarray(self.evaluator(m), dtype=float)
        return self.base + self.slope @ m

    def max_exit_rate(self, sample_points: Optional[np.ndarray] = None) -> float:
        """Largest total exit rate over the simplex (vertices bound affine models)."""
        if self.is_affine:
            pts = np.eye(self.n_states)
        else:
            pts = sample_points if sample_points is not None else np.eye(self.n_states)
        worst = 0.0
        for m in pts:
            Q = self.rates(m)
            off = Q.copy()
            for i in range(self.n_states):
                off[i, i, :] = 0.0
            worst = max(worst, float(np.maximum(off, 0.0).sum(axis=1).max()))
        return worst


class KernelModel:
    """Stochastic transition kernels P_ija(m) for discrete time.

    Same affine layout as RateModel; rows must be probability distributions,
    which for the affine form is checked at the simplex vertices.
    """

    def __init__(self, base=None, slope=None, evaluator=None, n_states=None,
                 n_actions=None):
        self._inner = RateModel(base=base, slope=slope, evaluator=evaluator,
                                n_states=n_states, n_actions=n_actions)
        self.n_states = self._inner.n_states
        self.n_actions = self._inner.n_actions

    @property
    def is_affine(self) -> bool:
        return self._inner.is_affine

    @property
    def base(self):
        return self._inner.base

    @property
    def slope(self):
        return self._inner.slope

    def kernels(self, m: np.ndarray) -> np.ndarray:
        return self._inner.rates(m)


class CostModel:
    """Instantaneous costs c_ia(m).

    Affine form: c_ia(m) = base[i, a] + sum_k slope[i, a, k] * m_k.  An opaque
    evaluator (m -> (E, A) array) may be flagged ``continuous=False``; that
    deliberately violates the continuity assumption the equilibrium existence
    result needs, and validation reports it.
    """

    def __init__(self, base=None, slope=None, evaluator=None, n_states=None,
                 n_actions=None, continuous=True):
        self.continuous = bool(continuous)
        if evaluator is not None:
            if base is not None or slope is not None:
                raise ValueError("pass either affine coefficients or an evaluator")
            if n_states is None or n_actions is None:
                raise ValueError("evaluator form needs n_states and n_actions")
            self.evaluator = evaluator
            self.base = None
            self.slope = None
            self.n_states = n_states
            self.n_actions = n_actions
            return
        base = _as_readonly(base)
        if base.ndim != 2:
            raise ValueError("base must have shape (E, A)")
        E, A = base.shape
        if slope is None:
            slope = np.zeros((E, A, E))
        slope = _as_readonly(slope)
        if slope.shape != (E, A, E):
            raise ValueError("slope must have shape (E, A, E)")
        self.base = base
        self.slope = slope
        self.evaluator = None
        self.n_states = E
        self.n_actions = A

    @property
    def is_affine(self) -> bool:
        return self.evaluator is None

    def costs(self, m: np.ndarray) -> np.ndarray:
        if self.evaluator is not None:
            return np.asarray(self.evaluator(m), dtype=float)
        return self.base + self.slope @ m

    def costs_along(self, ms: np.ndarray) -> np.ndarray:
        """Vectorized costs for a stack of distributions, shape (n, E, A)."""
        if self.is_affine:
            return self.base[None] + np.einsum("iak,nk->nia", self.slope, ms)
        return np.stack([self.costs(m) for m in ms])

    def bound(self, extra_points: Optional[np.ndarray] = None) -> float:
        """max |c| over the simplex (exact at vertices for affine models)."""
        pts = [np.eye(self.n_states)]
        if not self.is_affine:
            rng = np.random.default_rng(0)
            pts.append(rng.dirichlet(np.ones(self.n_states), size=64))
        if extra_points is not None:
            pts.append(extra_points)
        worst = 0.0
        for m in np.vstack(pts):
            worst = max(worst, float(np.abs(self.costs(m)).max()))
        return worst


# ---------------------------------------------------------------------------
# horizon and game spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Horizon:
    """Either discounted (beta > 0 / delta in (0,1)) or finite (length T).

    ``discount`` holds beta in continuous time and delta in discrete time;
    ``length`` holds the horizon T (a time for continuous games, a number of
    decision epochs for discrete ones, costs summed over t = 0..T inclusive).
    """

    kind: str
    discount: Optional[float] = None
    length: Optional[float] = None

    @classmethod
    def discounted(cls, rate: float) -> "Horizon":
        return cls("discounted", discount=float(rate))

    @classmethod
    def finite(cls, length) -> "Horizon":
        return cls("finite", length=length)


@dataclass(frozen=True)
class GameSpec:
    """Full description of one discrete mean field game.

    Exactly one of rate_model / kernel_model must be present, matching
    time_mode.  ``normalize_discrete_cost`` controls the (1 - delta) prefactor
    of discrete discounted costs; it is on by default and ignored in every
    other mode.
    """

    n_states: int
    n_actions: int
    time_mode: str  # "continuous" | "discrete"
    horizon: Horizon
    m0: np.ndarray
    cost_model: CostModel
    rate_model: Optional[RateModel] = None
    kernel_model: Optional[KernelModel] = None
    normalize_discrete_cost: bool = True
    state_labels: Optional[tuple] = None
    action_labels: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "m0", _as_readonly(self.m0))
        if self.time_mode not in ("continuous", "discrete"):
            raise ValueError(f"unknown time_mode {self.time_mode!r}")
        if (self.rate_model is None) == (self.kernel_model is None):
            raise ValueError("exactly one of rate_model / kernel_model required")
        if self.time_mode == "continuous" and self.rate_model is None:
            raise ValueError("continuous mode needs a rate_model")
        if self.time_mode == "discrete" and self.kernel_model is None:
            raise ValueError("discrete mode needs a kernel_model")
        if self.m0.shape != (self.n_states,):
            raise ValueError("m0 must have length n_states")

    @property
    def dynamics_model(self):
        return self.rate_model if self.time_mode == "continuous" else self.kernel_model

    def transition_tensor(self, m: np.ndarray) -> np.ndarray:
        """Q(m) in continuous mode, P(m) in discrete mode, shape (E, E, A)."""
        if self.time_mode == "continuous":
            return self.rate_model.rates(m)
        return self.kernel_model.kernels(m)

    def cost_bound(self) -> float:
        return self.cost_model.bound()

    def state_label(self, i: int) -> str:
        if self.state_labels is not None:
            return self.state_labels[i]
        return str(i + 1)

    def action_label(self, a: int) -> str:
        if self.action_labels is not None:
            return self.action_labels[a]
        return str(a + 1)

    def action_index(self, label: str) -> int:
        if self.action_labels is not None and label in self.action_labels:
            return self.action_labels.index(label)
        return int(label) - 1


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalStrategy:
    """Piecewise-constant strategy depending on own state and time only.

    probs[k, i] is the action distribution used by state i on grid interval
    [t_k, t_{k+1}); the lookup at t = t_end clamps to the last interval.
    """

    grid: TimeGrid
    probs: np.ndarray  # (K, E, A)

    def __post_init__(self):
        p = _as_readonly(self.probs)
        if p.ndim != 3 or p.shape[0] != self.grid.n_steps:
            raise ValueError("probs must have shape (n_steps, E, A)")
        if p.min() < -SIMPLEX_TOL or np.abs(p.sum(axis=2) - 1.0).max() > SIMPLEX_TOL:
            raise ValueError("every probs[k, i] must be a probability vector")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[2]

    def at_interval(self, k: int) -> np.ndarray:
        return self.probs[min(k, self.grid.n_steps - 1)]

    def at_time(self, t: float) -> np.ndarray:
        return self.probs[self.grid.interval_index(t)]

    def is_pure(self) -> bool:
        return bool(np.all(self.probs.max(axis=2) == 1.0))

    @classmethod
    def uniform(cls, grid: TimeGrid, n_states: int, n_actions: int) -> "LocalStrategy":
        p = np.full((grid.n_steps, n_states, n_actions), 1.0 / n_actions)
        return cls(grid, p)

    @classmethod
    def constant(cls, grid: TimeGrid, n_states: int, n_actions: int,
                 action: int) -> "LocalStrategy":
        """Always play one action, in every state and on every interval."""
        p = np.zeros((grid.n_steps, n_states, n_actions))
        p[:, :, action] = 1.0
        return cls(grid, p)

    @classmethod
    def from_actions(cls, grid: TimeGrid, actions: np.ndarray,
                     n_actions: int) -> "LocalStrategy":
        """Pure strategy from an integer action table of shape (K, E)."""
        actions = np.asarray(actions, dtype=int)
        K, E = actions.shape
        if K != grid.n_steps:
            raise ValueError("action table does not match the grid")
        p = np.zeros((K, E, n_actions))
        for k in range(K):
            for i in range(E):
                p[k, i, actions[k, i]] = 1.0
        return cls(grid, p)

    @classmethod
    def switch_at(cls, grid: TimeGrid, n_states: int, n_actions: int,
                  before: int, after: int, t_switch: float) -> "LocalStrategy":
        """Play ``before`` on intervals starting earlier than t_switch, then ``after``."""
        p = np.zeros((grid.n_steps, n_states, n_actions))
        starts = grid.points()[:-1]
        early = starts < t_switch - 1e-12
        p[early, :, before] = 1.0
        p[~early, :, after] = 1.0
        return cls(grid, p)


@dataclass(frozen=True)
class MarkovStrategy:
    """Strategy that may read the current population distribution.

    ``matrix_fn(t, m)`` returns the full (E, A) action-distribution table.
    ``time_breakpoints`` lists the times where the t-dependence may jump;
    the exact-event simulator needs them (None means time-invariant between
    population changes).
    """

    matrix_fn: Callable[[float, np.ndarray], np.ndarray]
    time_breakpoints: Optional[np.ndarray] = None
    label: str = ""

    def matrix(self, t: float, m: np.ndarray) -> np.ndarray:
        p = np.asarray(self.matrix_fn(t, m), dtype=float)
        if p.min() < -SIMPLEX_TOL or np.abs(p.sum(axis=1) - 1.0).max() > SIMPLEX_TOL:
            raise ValueError("Markov strategy returned a non-probability row")
        return p

    def probs(self, t: float, i: int, m: np.ndarray) -> np.ndarray:
        return self.matrix(t, m)[i]


Strategy = object  # LocalStrategy | MarkovStrategy (kept loose on purpose)


# ---------------------------------------------------------------------------
# population / tagged-player paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationPath:
    """Distribution-valued path on a grid; linear interpolation between nodes.

    Also used for the tagged player's law x(t).  ``meta`` records integrator
    diagnostics (projection magnitudes etc.); it does not affect equality of
    the numeric payload.
    """

    grid: TimeGrid
    m: np.ndarray  # (K + 1, E)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mm = _as_readonly(self.m)
        if mm.ndim != 2 or mm.shape[0] != self.grid.n_steps + 1:
            raise ValueError("m must have shape (n_steps + 1, E)")
        if mm.min() < -PATH_SIMPLEX_TOL or np.abs(mm.sum(axis=1) - 1.0).max() > PATH_SIMPLEX_TOL:
            raise ValueError("every m[k] must lie on the simplex (tol 1e-9)")
        object.__setattr__(self, "m", mm)

    @property
    def n_states(self) -> int:
        return self.m.shape[1]

    def at(self, t: float) -> np.ndarray:
        h = self.grid.h
        s = min(max(t / h, 0.0), float(self.grid.n_steps))
        k = int(np.floor(s))
        if k >= self.grid.n_steps:
            return self.m[-1]
        w = s - k
        return (1.0 - w) * self.m[k] + w * self.m[k + 1]

    def restrict(self, coarse: TimeGrid) -> "PopulationPath":
        """Subsample onto a coarser grid this one refines."""
        if not self.grid.refines(coarse):
            raise GridMismatchError("path grid does not refine the target grid")
        step = self.grid.n_steps // coarse.n_steps
        return PopulationPath(coarse, self.m[::step], dict(self.meta))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


@dataclass
class ValidationReport:
    violations: list

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.is_valid

    def __str__(self):
        if self.is_valid:
            return "valid: no violations"
        return "\n".join(str(v) for v in self.violations)


def _check_generator_at(Q: np.ndarray, where: str, out: list):
    E = Q.shape[0]
    rowsum = Q.sum(axis=1)  # (E, A)
    bad = np.argwhere(np.abs(rowsum) > 1e-9)
    for i, a in bad:
        out.append(Violation(
            "generator-rowsum",
            f"row {i + 1}, action {a + 1} sums to {rowsum[i, a]:.3e} at {where}"))
    off = Q.copy()
    for i in range(E):
        off[i, i, :] = 0.0
    bad = np.argwhere(off < -SIMPLEX_TOL)
    for i, j, a in bad:
        out.append(Violation(
            "generator-sign",
            f"rate {i + 1}->{j + 1}, action {a + 1} is negative "
            f"({off[i, j, a]:.3e}) at {where}"))


def _check_kernel_at(P: np.ndarray, where: str, out: list):
    rowsum = P.sum(axis=1)
    bad = np.argwhere(np.abs(rowsum - 1.0) > SIMPLEX_TOL)
    for i, a in bad:
        out.append(Violation(
            "kernel-rowsum",
            f"row {i + 1}, action {a + 1} sums to {rowsum[i, a]:.15g} at {where}"))
    bad = np.argwhere(P < -SIMPLEX_TOL)
    for i, j, a in bad:
        out.append(Violation(
            "kernel-sign",
            f"P[{i + 1}->{j + 1}, action {a + 1}] = {P[i, j, a]:.3e} < 0 at {where}"))


def _simplex_samples(E: int, n_random: int = 32) -> list[tuple[str, np.ndarray]]:
    pts = [(f"vertex e_{k + 1}", np.eye(E)[k]) for k in range(E)]
    rng = np.random.default_rng(1234)
    for idx, m in enumerate(rng.dirichlet(np.ones(E), size=n_random)):
        pts.append((f"sample #{idx}", m))
    return pts


def validate_spec(spec: GameSpec) -> ValidationReport:
    """Check every model invariant and return a report (never raises).

    Affine models are checked at the simplex vertices, which is sufficient:
    an affine function of m attains its extrema over the simplex at vertices.
    Opaque evaluators are checked at the vertices plus fixed pseudo-random
    interior points.
    """
    out: list[Violation] = []

    if spec.n_states < 1:
        out.append(Violation("states", "n_states must be >= 1"))
    if spec.n_actions < 1:
        out.append(Violation("actions", "n_actions must be >= 1"))

    m0 = spec.m0
    if m0.min() < -SIMPLEX_TOL:
        out.append(Violation("m0-sign", f"m0 has negative mass {m0.min():.3e}"))
    if abs(m0.sum() - 1.0) > SIMPLEX_TOL:
        out.append(Violation("m0-mass", f"m0 has total mass {m0.sum():.12g}"))

    hz = spec.horizon
    if hz.kind == "discounted":
        if hz.discount is None:
            out.append(Violation("horizon", "discounted horizon needs a discount"))
        elif spec.time_mode == "continuous" and not hz.discount > 0:
            out.append(Violation("horizon", f"beta must be > 0, got {hz.discount}"))
        elif spec.time_mode == "discrete" and not 0 < hz.discount < 1:
            out.append(Violation("horizon", f"delta must be in (0,1), got {hz.discount}"))
    elif hz.kind == "finite":
        if hz.length is None or not hz.length > 0:
            out.append(Violation("horizon", "finite horizon needs length > 0"))
        elif spec.time_mode == "discrete" and int(hz.length) != hz.length:
            out.append(Violation("horizon", "discrete finite horizon must be an integer"))
    else:
        out.append(Violation("horizon", f"unknown horizon kind {hz.kind!r}"))

    if spec.time_mode == "continuous":
        model = spec.rate_model
        if model.is_affine:
            for k in range(spec.n_states):
                _check_generator_at(model.rates(np.eye(spec.n_states)[k]),
                                    f"vertex e_{k + 1}", out)
        else:
            for where, m in _simplex_samples(spec.n_states):
                _check_generator_at(model.rates(m), where, out)
    else:
        model = spec.kernel_model
        if model.is_affine:
            for k in range(spec.n_states):
                _check_kernel_at(model.kernels(np.eye(spec.n_states)[k]),
                                 f"vertex e_{k + 1}", out)
        else:
            for where, m in _simplex_samples(spec.n_states):
                _check_kernel_at(model.kernels(m), where, out)

    if not spec.cost_model.continuous:
        out.append(Violation(
            "cost-continuity",
            "cost model is flagged discontinuous in m; equilibrium existence "
            "is not guaranteed"))
    for where, m in _simplex_samples(spec.n_states, n_random=8):
        c = spec.cost_model.costs(m)
        if c.shape != (spec.n_states, spec.n_actions):
            out.append(Violation("cost-shape", f"cost evaluator returned shape "
                                               f"{c.shape} at {where}"))
            break
        if not np.all(np.isfinite(c)):
            out.append(Violation("cost-finite", f"cost not finite at {where}"))
            break

    return ValidationReport(out)
