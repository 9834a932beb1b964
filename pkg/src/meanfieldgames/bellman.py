"""Cost evaluation, best responses, a brute-force oracle, and the
occupation-measure consistency check.

Cost of the tagged player against a fixed population flow:

* continuous time: trapezoidal quadrature of
  sum_{i,a} x_i(t) c_ia(m(t)) pi0_ia(t) e^{-beta t} on the grid (the e^{-beta t}
  factor drops in the finite-horizon mode, which integrates to T);
* discrete time: the exact sum over decision epochs, discounted by delta^t and
  multiplied by (1 - delta) when the game normalizes discounted costs.

Best responses come from backward dynamic programming.  Discrete time is
exact backward induction.  Continuous time discretizes the value recursion
explicitly,

    v_i(t_k) = min_a [ h c_ia(m_+) + (1 - beta h) (v_i(t_{k+1})
                       + h sum_j Q_ija(m_+) v_j(t_{k+1})) ],

with terminal value 0 and the stage data m_+ taken at the point the recursion
steps from (the interval's right endpoint).  Evaluating the stage there keeps
the discretized best-response map honest on games with discontinuous costs:
the strategy stops using an action on the first interval whose landing point
has crossed the discontinuity, so a flow that just barely overshoots a cost
threshold is not mistaken for a fixed point.  A pure minimizer always exists
because the instantaneous cost is linear in the strategy; ties are broken by
the lowest action index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (EnumerationLimitError, GameSpec, GridMismatchError,
                   GridTooCoarseError, LocalStrategy, MarkovStrategy,
                   PopulationPath, TailToleranceError, TimeGrid, _as_readonly)
from .dynamics import integrate_population, integrate_tagged

DEFAULT_TAIL_TOL = 1e-8
EXPLOITABILITY_CLAMP = 1e-9


@dataclass(frozen=True)
class ValuePath:
    """Optimal cost-to-go v[k, i] at grid node k for a player in state i."""

    grid: TimeGrid
    v: np.ndarray  # (K + 1, E)

    def __post_init__(self):
        vv = _as_readonly(self.v)
        if vv.ndim != 2 or vv.shape[0] != self.grid.n_steps + 1:
            raise ValueError("v must have shape (n_steps + 1, E)")
        object.__setattr__(self, "v", vv)


@dataclass(frozen=True)
class OccupationPath:
    """z[k, i, a] = x_i(t_k) pi_ia(t_k): state-action mass of the tagged player."""

    grid: TimeGrid
    z: np.ndarray  # (K + 1, E, A)

    def __post_init__(self):
        zz = _as_readonly(self.z)
        if zz.ndim != 3 or zz.shape[0] != self.grid.n_steps + 1:
            raise ValueError("z must have shape (n_steps + 1, E, A)")
        object.__setattr__(self, "z", zz)


# ---------------------------------------------------------------------------
# grids sized to the horizon
# ---------------------------------------------------------------------------

def truncation_t_end(spec: GameSpec, tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Horizon length with a discounted tail below tail_tol (continuous)."""
    beta = spec.horizon.discount
    cmax = max(spec.cost_bound(), 1e-300)
    return max(math.log(cmax / (beta * tail_tol)) / beta, 1.0)


def truncation_epochs(spec: GameSpec, tail_tol: float = 1e-12) -> int:
    """Number of epochs with delta^T c_max / (1 - delta) below tail_tol."""
    delta = spec.horizon.discount
    cmax = max(spec.cost_bound(), 1e-300)
    t = math.log(tail_tol * (1.0 - delta) / cmax) / math.log(delta)
    return max(int(math.ceil(t)), 1)


def solver_grid(spec: GameSpec, h: float = 0.01,
                t_end: Optional[float] = None,
                n_steps: Optional[int] = None,
                tail_tol: float = DEFAULT_TAIL_TOL) -> TimeGrid:
    """A grid matching the spec's horizon.

    Continuous: t_end defaults to the finite horizon T, or to the discounted
    truncation point for tail_tol.  Discrete: the unit grid with T + 1 epochs
    (costs are summed over t = 0..T inclusive), or the discounted truncation.
    """
    if spec.time_mode == "discrete":
        if spec.horizon.kind == "finite":
            return TimeGrid.for_epochs(int(spec.horizon.length) + 1)
        return TimeGrid.for_epochs(truncation_epochs(spec))
    if t_end is None:
        t_end = (spec.horizon.length if spec.horizon.kind == "finite"
                 else truncation_t_end(spec, tail_tol))
    if n_steps is None:
        n_steps = max(int(math.ceil(t_end / h)), 1)
    return TimeGrid(float(t_end), int(n_steps))


# ---------------------------------------------------------------------------
# cost evaluation
# ---------------------------------------------------------------------------

def _control_table(pi0, grid: TimeGrid, mpath: PopulationPath) -> np.ndarray:
    """Strategy matrices at every grid node, using each node's interval."""
    K = grid.n_steps
    pts = grid.points()
    out = np.empty((K + 1, mpath.n_states, _n_actions_of(pi0, mpath)))
    for k in range(K + 1):
        t = pts[min(k, K - 1)]
        out[k] = (pi0.matrix(t, mpath.m[min(k, K - 1)])
                  if isinstance(pi0, MarkovStrategy) else pi0.at_time(t))
    return out


def _n_actions_of(pi0, mpath) -> int:
    if isinstance(pi0, MarkovStrategy):
        return pi0.matrix(0.0, mpath.m[0]).shape[1]
    return pi0.n_actions


def discounted_tail_bound(spec: GameSpec, grid: TimeGrid) -> float:
    """Truncation error bound of the discounted cost on a finite grid."""
    if spec.horizon.kind != "discounted":
        return 0.0
    cmax = spec.cost_bound()
    if spec.time_mode == "continuous":
        beta = spec.horizon.discount
        return math.exp(-beta * grid.t_end) * cmax / beta
    delta = spec.horizon.discount
    tail = delta ** grid.n_steps * cmax / (1.0 - delta)
    if spec.normalize_discrete_cost:
        tail *= (1.0 - delta)
    return tail


def evaluate_cost(spec: GameSpec, pi0, mpath: PopulationPath, x0,
                  tail_tol: Optional[float] = None) -> float:
    """Expected cost of a tagged player using pi0 against the flow mpath.

    ``tail_tol`` optionally enforces that the grid's truncation error bound is
    below the requested tolerance (discounted horizons only).
    """
    if tail_tol is not None:
        bound = discounted_tail_bound(spec, mpath.grid)
        if bound > tail_tol:
            raise TailToleranceError(
                f"truncation tail {bound:.3e} exceeds tail_tol {tail_tol:.3e}; "
                f"extend the grid")
    if spec.time_mode == "continuous" and spec.horizon.kind == "finite":
        if abs(mpath.grid.t_end - spec.horizon.length) > 1e-9:
            raise GridMismatchError(
                f"finite horizon T={spec.horizon.length} but grid ends at "
                f"{mpath.grid.t_end}")

    xpath = integrate_tagged(spec, pi0, mpath, x0)
    return _quadrature_cost(spec, _control_table(pi0, mpath.grid, mpath),
                            xpath.m, mpath)


def _pointwise_running_cost(spec, control, x, mpath):
    """f_k = sum_{i,a} x[k, i] c_ia(m_k) control[k, i, a] at every node."""
    c = spec.cost_model.costs_along(mpath.m)
    return np.einsum("ni,nia,nia->n", x, c, control)


def _quadrature_cost(spec, control, x, mpath) -> float:
    f = _pointwise_running_cost(spec, control, x, mpath)
    grid = mpath.grid
    if spec.time_mode == "continuous":
        pts = grid.points()
        if spec.horizon.kind == "discounted":
            f = f * np.exp(-spec.horizon.discount * pts)
        return float(np.trapezoid(f, dx=grid.h))
    # discrete: exact sum over epochs 0..K-1
    K = grid.n_steps
    f = f[:K]
    if spec.horizon.kind == "discounted":
        delta = spec.horizon.discount
        f = f * delta ** np.arange(K)
        total = float(f.sum())
        if spec.normalize_discrete_cost:
            total *= (1.0 - delta)
        return total
    T = int(spec.horizon.length)
    if K < T + 1:
        raise GridMismatchError(f"grid has {K} epochs but the horizon needs {T + 1}")
    return float(f[:T + 1].sum())


# ---------------------------------------------------------------------------
# best response
# ---------------------------------------------------------------------------

def _check_explicit_scheme(spec: GameSpec, grid: TimeGrid):
    h = grid.h
    if spec.horizon.kind == "discounted" and spec.horizon.discount * h >= 1.0:
        raise GridTooCoarseError(
            f"beta*h = {spec.horizon.discount * h:.3g} >= 1; refine the grid")
    max_exit = spec.rate_model.max_exit_rate()
    if h * max_exit > 1.0 + 1e-12:
        raise GridTooCoarseError(
            f"h * max total exit rate = {h * max_exit:.3g} > 1; refine the grid")


def best_response(spec: GameSpec, mpath: PopulationPath
                  ) -> tuple[LocalStrategy, ValuePath]:
    """Pure best response to a population flow, with its value function.

    The returned strategy lives on mpath's grid.  Ties pick the lowest action
    index, so the zero-cost game maps to "always play the first action".
    """
    grid = mpath.grid
    K = grid.n_steps
    E, A = spec.n_states, spec.n_actions
    v = np.zeros(E)
    vpath = np.empty((K + 1, E))
    vpath[K] = v
    actions = np.empty((K, E), dtype=int)

    if spec.time_mode == "discrete":
        delta = spec.horizon.discount if spec.horizon.kind == "discounted" else 1.0
        w = 1.0
        if spec.horizon.kind == "discounted" and spec.normalize_discrete_cost:
            w = 1.0 - delta
        if spec.horizon.kind == "finite" and K < int(spec.horizon.length) + 1:
            raise GridMismatchError(
                f"grid has {K} epochs but the horizon needs "
                f"{int(spec.horizon.length) + 1}")
        for t in range(K - 1, -1, -1):
            m_t = mpath.m[t]
            c = w * spec.cost_model.costs(m_t)
            P = spec.kernel_model.kernels(m_t)
            cand = c + delta * np.einsum("ija,j->ia", P, v)
            actions[t] = np.argmin(cand, axis=1)
            v = cand.min(axis=1)
            vpath[t] = v
    else:
        _check_explicit_scheme(spec, grid)
        h = grid.h
        beta = spec.horizon.discount if spec.horizon.kind == "discounted" else 0.0
        keep = 1.0 - beta * h
        for k in range(K - 1, -1, -1):
            m_plus = mpath.m[k + 1]
            c = spec.cost_model.costs(m_plus)
            Q = spec.rate_model.rates(m_plus)
            cand = h * c + keep * (v[:, None] + h * np.einsum("ija,j->ia", Q, v))
            actions[k] = np.argmin(cand, axis=1)
            v = cand.min(axis=1)
            vpath[k] = v

    return (LocalStrategy.from_actions(grid, actions, A),
            ValuePath(grid, vpath))


def best_response_oracle(spec: GameSpec, mpath: PopulationPath,
                         grid: Optional[TimeGrid] = None,
                         limit: int = 10 ** 6) -> tuple[LocalStrategy, float]:
    """Exhaustive minimum over pure piecewise-constant strategies on ``grid``.

    Every candidate is scored with evaluate_cost from the spec's initial
    distribution; the first minimum in enumeration order wins, which makes
    the tie-break "lexicographically smallest action table" (interval-major).
    Guarded by A**(E*K) <= limit.
    """
    if grid is None:
        grid = mpath.grid
    E, A, K = spec.n_states, spec.n_actions, grid.n_steps
    n_candidates = A ** (E * K)
    if n_candidates > limit:
        raise EnumerationLimitError(
            f"A^(E*K) = {n_candidates} exceeds the enumeration guard {limit}")
    best = None
    best_cost = math.inf
    for flat in itertools.product(range(A), repeat=E * K):
        actions = np.array(flat, dtype=int).reshape(K, E)
        cand = LocalStrategy.from_actions(grid, actions, A)
        cost = evaluate_cost(spec, cand, mpath, spec.m0)
        if cost < best_cost:
            best, best_cost = cand, cost
    return best, best_cost


# ---------------------------------------------------------------------------
# occupation-measure consistency
# ---------------------------------------------------------------------------

@dataclass
class OccupationReport:
    """Feasibility / objective-consistency residuals of the occupation path."""

    marginal_residual: float      # max |sum_a z - x|
    min_entry: float              # most negative z entry (>= 0 means clean)
    dynamics_residual: float      # max |forward-diff of x - z-driven drift|
    objective: float              # cost recomputed from z alone
    reference_cost: float         # evaluate_cost on the same inputs
    marginal_tol: float
    positivity_tol: float
    dynamics_tol: float
    objective_tol: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.passed:
            return "occupation check: all constraints satisfied"
        return "occupation check:\n" + "\n".join(f"  - {v}" for v in self.violations)


def check_occupation_path(spec: GameSpec, occ: OccupationPath,
                          xpath: PopulationPath, mpath: PopulationPath,
                          reference_cost: float,
                          marginal_tol: float = 1e-9,
                          positivity_tol: float = 1e-9,
                          dynamics_tol: Optional[float] = None,
                          objective_tol: float = 1e-9) -> OccupationReport:
    """Verify the linear-program feasibility constraints and the objective.

    Constraints checked on the grid: sum_a z_ja = x_j; z >= 0; the forward
    difference of x matches sum_{i,a} z_ia Q_ija(m) to O(h); and the cost
    recomputed from z equals the reference (same quadrature, z-based path).
    """
    grid = occ.grid
    h = grid.h
    if dynamics_tol is None:
        dynamics_tol = 10.0 * h
    z, x, m = occ.z, xpath.m, mpath.m
    violations = []

    marg = float(np.abs(z.sum(axis=2) - x).max())
    if marg > marginal_tol:
        violations.append(f"sum_a z deviates from x by {marg:.3e} > {marginal_tol:.1e}")
    min_entry = float(z.min())
    if min_entry < -positivity_tol:
        violations.append(f"negative occupation mass {min_entry:.3e}")

    K = grid.n_steps
    dyn = 0.0
    for k in range(K):
        Q = spec.rate_model.rates(m[k])
        drift = np.einsum("ia,ija->j", z[k], Q)
        fd = (x[k + 1] - x[k]) / h
        dyn = max(dyn, float(np.abs(fd - drift).max()))
    if dyn > dynamics_tol:
        violations.append(f"dynamics residual {dyn:.3e} > {dynamics_tol:.1e}")

    c = spec.cost_model.costs_along(m)
    f = np.einsum("nia,nia->n", z, c)
    if spec.horizon.kind == "discounted":
        f = f * np.exp(-spec.horizon.discount * grid.points())
    objective = float(np.trapezoid(f, dx=h))
    if abs(objective - reference_cost) > objective_tol:
        violations.append(
            f"objective from z is {objective:.12g} vs cost {reference_cost:.12g}")

    return OccupationReport(marg, min_entry, dyn, objective, reference_cost,
                            marginal_tol, positivity_tol, dynamics_tol,
                            objective_tol, violations)


def occupation_check(spec: GameSpec, pi0: LocalStrategy, mpath: PopulationPath,
                     x0, **tols) -> OccupationReport:
    """Build z = x * pi0 from the tagged flow and run every consistency check."""
    if spec.time_mode != "continuous":
        raise ValueError("occupation check applies to continuous time only")
    xpath = integrate_tagged(spec, pi0, mpath, x0)
    control = _control_table(pi0, mpath.grid, mpath)
    z = xpath.m[:, :, None] * control
    occ = OccupationPath(mpath.grid, z)
    reference = evaluate_cost(spec, pi0, mpath, x0)
    return check_occupation_path(spec, occ, xpath, mpath, reference, **tols)


# ---------------------------------------------------------------------------
# exploitability
# ---------------------------------------------------------------------------

def exploitability_against(spec: GameSpec, pi: LocalStrategy,
                           mflow: PopulationPath) -> float:
    """V(pi, pi) - V(BR, pi) when pi's own flow is already available."""
    v_self = evaluate_cost(spec, pi, mflow, spec.m0)
    br, _ = best_response(spec, mflow)
    v_br = evaluate_cost(spec, br, mflow, spec.m0)
    gain = v_self - v_br
    if -EXPLOITABILITY_CLAMP < gain < 0.0:
        gain = 0.0
    return gain


def exploitability(spec: GameSpec, pi: LocalStrategy) -> float:
    """How much a unilateral deviation from pi can save; zero at equilibrium.

    Nonnegative up to scheme error; values within 1e-9 below zero clamp to 0.
    """
    mflow = integrate_population(spec, pi, pi.grid)
    return exploitability_against(spec, pi, mflow)
