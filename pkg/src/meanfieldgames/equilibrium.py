"""Equilibrium computation by damped fixed-point iteration on the flow.

The fixed point is sought on the population path rather than on strategies:
iterate best-respond -> re-integrate -> average.  Averaging uses either a
fixed weight in (0, 1] or fictitious-play weights 1/(k+1), which average the
whole history of response flows uniformly.  Non-convergence is a reported
outcome, never an error: games with discontinuous costs can have no
equilibrium at all and the iteration then cycles by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bellman import best_response, evaluate_cost, exploitability_against
from .core import GameSpec, LocalStrategy, PopulationPath, TimeGrid
from .dynamics import integrate_population

FIXED = "fixed"
FICTITIOUS_PLAY = "fictitious-play"


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget, damping mode, tolerances, and the working grid.

    damping: "fixed" uses weight ``damping_weight`` every iteration;
    "fictitious-play" uses 1/(k+1) at iteration k.  Convergence requires both
    the exploitability of the current response and the sup-norm path change to
    fall below their tolerances.
    """

    grid: TimeGrid
    max_iters: int = 200
    damping: str = FICTITIOUS_PLAY
    damping_weight: float = 1.0
    eps_tol: float = 1e-6
    path_tol: float = 1e-4

    def __post_init__(self):
        if self.damping not in (FIXED, FICTITIOUS_PLAY):
            raise ValueError(f"unknown damping mode {self.damping!r}")
        if not 0.0 < self.damping_weight <= 1.0:
            raise ValueError("damping_weight must be in (0, 1]")
        if self.eps_tol <= 0 or self.path_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    path_change: float
    exploitability: float


@dataclass
class MfeResult:
    strategy: LocalStrategy
    mpath: PopulationPath
    exploitability: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "exploitability": self.exploitability,
            "history": [
                {"iteration": r.iteration, "path_change": r.path_change,
                 "exploitability": r.exploitability}
                for r in self.history
            ],
        }


def solve_mfe(spec: GameSpec, cfg: SolverConfig) -> MfeResult:
    """Damped best-response iteration on the population flow.

    Starts from the flow of the uniform strategy.  Each iteration best-responds
    to the current flow, integrates the response, and averages the two paths
    pointwise (convex combinations of simplex points stay on the simplex; the
    renormalization after averaging is a guard, not a correction).  The
    reported strategy is the best response to the final flow, with its
    exploitability evaluated on its own induced flow.
    """
    grid = cfg.grid
    pi0 = LocalStrategy.uniform(grid, spec.n_states, spec.n_actions)
    current = integrate_population(spec, pi0, grid)

    history: list[IterationRecord] = []
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iters + 1):
        iterations = it
        response, _ = best_response(spec, current)
        response_flow = integrate_population(spec, response, grid)

        lam = (cfg.damping_weight if cfg.damping == FIXED
               else 1.0 / (it + 1.0))
        mixed = (1.0 - lam) * current.m + lam * response_flow.m
        mixed = np.maximum(mixed, 0.0)
        mixed /= mixed.sum(axis=1, keepdims=True)

        path_change = float(np.abs(mixed - current.m).max())
        expl = exploitability_against(spec, response, response_flow)
        history.append(IterationRecord(it, path_change, expl))

        current = PopulationPath(grid, mixed)
        if expl <= cfg.eps_tol and path_change <= cfg.path_tol:
            converged = True
            break

    reported, _ = best_response(spec, current)
    reported_flow = integrate_population(spec, reported, grid)
    final_expl = exploitability_against(spec, reported, reported_flow)
    return MfeResult(strategy=reported, mpath=reported_flow,
                     exploitability=final_expl, iterations=iterations,
                     converged=converged, history=history)


def verify_mfe(spec: GameSpec, pi: LocalStrategy, eps: float
               ) -> tuple[bool, dict]:
    """Check the fixed-point property of a candidate equilibrium.

    Passes iff the exploitability of pi is at most eps.  The report also
    carries the sup-distance between pi's flow and the flow of the computed
    best response; that residual is diagnostic only, since distinct optimal
    responses may induce different flows without breaking the equilibrium.
    """
    mflow = integrate_population(spec, pi, pi.grid)
    v_self = evaluate_cost(spec, pi, mflow, spec.m0)
    br, _ = best_response(spec, mflow)
    v_br = evaluate_cost(spec, br, mflow, spec.m0)
    expl = v_self - v_br
    if -1e-9 < expl < 0.0:
        expl = 0.0
    br_flow = integrate_population(spec, br, pi.grid)
    residuals = {
        "exploitability": expl,
        "path_residual": float(np.abs(mflow.m - br_flow.m).max()),
        "cost_self": v_self,
        "cost_best_response": v_br,
    }
    return expl <= eps, residuals
