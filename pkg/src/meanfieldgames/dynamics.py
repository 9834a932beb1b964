"""Forward integration of the population flow and the tagged player's law.

Continuous time uses classical RK4 with the control frozen per grid interval
(left endpoint); the population argument of the rates is re-evaluated at every
sub-stage.  Piecewise-constant controls make the right-hand side smooth on
each interval, so the scheme keeps its order away from control breakpoints.
After every step the state is clamped to nonnegative values and renormalized
to unit mass; the largest correction is recorded in the path metadata.

Discrete time is the exact recursion m(t+1) = m(t) applied to the strategy-
averaged kernel, a stochastic-matrix product chain.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .core import (GameSpec, GridMismatchError, LocalStrategy, MarkovStrategy,
                   PopulationPath, TimeGrid, project_to_simplex)


def _drift(dist: np.ndarray, Q: np.ndarray, pim: np.ndarray) -> np.ndarray:
    # d/dt of the law: sum_i sum_a dist_i Q[i, j, a] pim[i, a]
    return np.einsum("i,ija,ia->j", dist, Q, pim)


def _step_rk4_population(spec, m, pim, h):
    rates = spec.rate_model.rates
    k1 = _drift(m, rates(m), pim)
    m2 = m + 0.5 * h * k1
    k2 = _drift(m2, rates(m2), pim)
    m3 = m + 0.5 * h * k2
    k3 = _drift(m3, rates(m3), pim)
    m4 = m + h * k3
    k4 = _drift(m4, rates(m4), pim)
    return m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_rk4_tagged(spec, x, pim, h, m_left, m_mid, m_right):
    rates = spec.rate_model.rates
    Q_left, Q_mid, Q_right = rates(m_left), rates(m_mid), rates(m_right)
    k1 = _drift(x, Q_left, pim)
    k2 = _drift(x + 0.5 * h * k1, Q_mid, pim)
    k3 = _drift(x + 0.5 * h * k2, Q_mid, pim)
    k4 = _drift(x + h * k3, Q_right, pim)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_population(spec: GameSpec, pi: LocalStrategy,
                         grid: Optional[TimeGrid] = None) -> PopulationPath:
    """Population flow induced by a local strategy.

    ``grid`` is the output grid; it must equal the strategy grid or be nested
    with it (one refining the other).  Integration always runs on the finer of
    the two and the result is subsampled onto ``grid``.
    """
    if grid is None:
        grid = pi.grid
    if spec.time_mode == "discrete":
        if grid != pi.grid:
            raise GridMismatchError("discrete mode requires the strategy grid")
        return _integrate_discrete(spec, pi.at_interval, grid, spec.m0)

    fine = grid.compatible_fine(pi.grid)
    K, h = fine.n_steps, fine.h
    starts = fine.points()[:-1]
    m = np.asarray(spec.m0, dtype=float).copy()
    out = np.empty((K + 1, spec.n_states))
    out[0] = m
    max_neg = 0.0
    max_drift = 0.0
    for k in range(K):
        pim = pi.at_time(starts[k])
        m = _step_rk4_population(spec, m, pim, h)
        m, neg, drift = project_to_simplex(m)
        max_neg = max(max_neg, neg)
        max_drift = max(max_drift, drift)
        out[k + 1] = m
    path = PopulationPath(fine, out, {
        "projection": "clamp+renormalize",
        "max_negative_clamped": max_neg,
        "max_mass_drift": max_drift,
    })
    if fine != grid:
        path = path.restrict(grid)
    return path


def _control_lookup(pi0, t, m):
    if isinstance(pi0, MarkovStrategy):
        return pi0.matrix(t, m)
    return pi0.at_time(t)


def integrate_tagged(spec: GameSpec, pi0, mpath: PopulationPath,
                     x0: np.ndarray) -> PopulationPath:
    """Law of a single tagged player against a fixed population flow.

    ``pi0`` may be a LocalStrategy or a MarkovStrategy; Markov controls are
    evaluated at (t_k, m(t_k)) and frozen over the interval.  The population
    argument of the rates is read from ``mpath`` by linear interpolation at
    the RK4 sub-stage times.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = mpath.grid
    if isinstance(pi0, LocalStrategy):
        # the tagged grid must resolve every control breakpoint
        if not grid.refines(pi0.grid):
            raise GridMismatchError("mpath grid must refine the strategy grid")
    if spec.time_mode == "discrete":
        pts = grid.points()
        control = lambda k: _control_lookup(pi0, pts[k], mpath.m[k])
        return _integrate_discrete(spec, control, grid, x0, mpath=mpath)

    K, h = grid.n_steps, grid.h
    pts = grid.points()
    x = x0.copy()
    out = np.empty((K + 1, spec.n_states))
    out[0] = x
    max_neg = 0.0
    max_drift = 0.0
    for k in range(K):
        pim = _control_lookup(pi0, pts[k], mpath.m[k])
        m_mid = 0.5 * (mpath.m[k] + mpath.m[k + 1])
        x = _step_rk4_tagged(spec, x, pim, h, mpath.m[k], m_mid, mpath.m[k + 1])
        x, neg, drift = project_to_simplex(x)
        max_neg = max(max_neg, neg)
        max_drift = max(max_drift, drift)
        out[k + 1] = x
    return PopulationPath(grid, out, {
        "projection": "clamp+renormalize",
        "max_negative_clamped": max_neg,
        "max_mass_drift": max_drift,
    })


def _integrate_discrete(spec, control, grid, d0, mpath=None):
    """Exact recursion d(t+1)[j] = sum_{i,a} d(t)[i] P_ija(m(t)) pi_ia(t)."""
    K = grid.n_steps
    d = np.asarray(d0, dtype=float).copy()
    out = np.empty((K + 1, spec.n_states))
    out[0] = d
    for t in range(K):
        m_t = mpath.m[t] if mpath is not None else d
        P = spec.kernel_model.kernels(m_t)
        d = np.einsum("i,ija,ia->j", d, P, control(t))
        out[t + 1] = d
    return PopulationPath(grid, out, {"projection": "none (exact recursion)"})
