"""Built-in game catalog.

Five fully parameterized games used throughout the tests and demos:

* ``prisoner-mfg``     -- matching-game prisoner's dilemma in continuous time;
                          choosing an action moves the player to that state at
                          rate 1.  Defecting is dominant, so all-D is the only
                          equilibrium of the limit game, yet a trigger strategy
                          is an equilibrium of the N-player game.
* ``punish-finite``    -- 3-state / 3-action generalization with a "punish"
                          state, discrete time over a finite horizon, plus the
                          time-dependent trigger schedule.
* ``folk-repeated``    -- repeated matching game in discrete discounted time
                          (state = the stage action); grim-trigger strategies
                          are N-player equilibria but not equilibria of the
                          limit game.
* ``nonexistence``     -- two-state game whose cost jumps at m_2 = 1/2; no
                          equilibrium exists, best responses cycle.
* ``sir-demo``         -- S/I/R contact model where the infection rate scales
                          with the infected mass; players choose how much to
                          isolate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .core import (CostModel, GameSpec, Horizon, KernelModel, LocalStrategy,
                   MarkovStrategy, RateModel, TimeGrid)

SCENARIO_NAMES = ("prisoner-mfg", "punish-finite", "folk-repeated",
                  "nonexistence", "sir-demo")


@dataclass
class ScenarioBundle:
    spec: GameSpec
    # name -> factory(grid) returning a LocalStrategy or a MarkovStrategy
    strategies: Dict[str, Callable] = field(default_factory=dict)
    notes: str = ""


def _move_to_action_rates(E: int, rate: float = 1.0) -> np.ndarray:
    """Q with 'action a jumps the player to state a at ``rate``' dynamics."""
    base = np.zeros((E, E, E))
    for i in range(E):
        for a in range(E):
            if a != i:
                base[i, a, a] = rate
                base[i, i, a] = -rate
    return base


def _move_to_action_kernels(E: int) -> np.ndarray:
    """Deterministic discrete kernel: next state equals the chosen action."""
    base = np.zeros((E, E, E))
    for i in range(E):
        for a in range(E):
            base[i, a, a] = 1.0
    return base


def _state_matching_costs(table: np.ndarray) -> CostModel:
    """Costs of a matching game: a state-i player pays sum_j table[i, j] m_j.

    The cost is the same for every action (actions only steer the dynamics).
    """
    E = table.shape[0]
    slope = np.zeros((E, E, E))
    for i in range(E):
        for a in range(E):
            slope[i, a, :] = table[i]
    return CostModel(base=np.zeros((E, E)), slope=slope)


# ---------------------------------------------------------------------------
# individual scenarios
# ---------------------------------------------------------------------------

def _prisoner(beta: float = 0.5) -> ScenarioBundle:
    # cost table: C pays m_C + 3 m_D, D pays 2 m_D
    table = np.array([[1.0, 3.0],
                      [0.0, 2.0]])
    spec = GameSpec(
        n_states=2, n_actions=2, time_mode="continuous",
        horizon=Horizon.discounted(beta),
        m0=np.array([1.0, 0.0]),
        rate_model=RateModel(base=_move_to_action_rates(2)),
        cost_model=_state_matching_costs(table),
        state_labels=("C", "D"), action_labels=("C", "D"),
        name="prisoner-mfg",
    )

    def grim_markov(grid=None):
        # cooperate only while literally everyone cooperates
        def fn(t, m):
            p = np.zeros((2, 2))
            a = 0 if m[0] >= 1.0 - 1e-9 else 1
            p[:, a] = 1.0
            return p
        return MarkovStrategy(fn, label="grim-markov")

    strategies = {
        "all-C": lambda grid: LocalStrategy.constant(grid, 2, 2, 0),
        "all-D": lambda grid: LocalStrategy.constant(grid, 2, 2, 1),
        "uniform": lambda grid: LocalStrategy.uniform(grid, 2, 2),
        "grim-markov": grim_markov,
    }
    return ScenarioBundle(spec, strategies,
                          notes="defection dominates; the unique equilibrium "
                                "of the limit game is all-D")


def _punish_finite(T: int = 10) -> ScenarioBundle:
    # row player's costs of the 3x3 matching game with the punish state
    table = np.array([[1.0, 3.0, 4.0],
                      [0.0, 2.0, 4.0],
                      [0.0, 3.0, 3.0]])
    spec = GameSpec(
        n_states=3, n_actions=3, time_mode="discrete",
        horizon=Horizon.finite(T),
        m0=np.array([1.0, 0.0, 0.0]),
        kernel_model=KernelModel(base=_move_to_action_kernels(3)),
        cost_model=_state_matching_costs(table),
        state_labels=("C", "D", "P"), action_labels=("C", "D", "P"),
        name="punish-finite",
    )

    def punish_markov(grid=None):
        # cooperate at t < 1 while everyone cooperates, then defect while
        # nobody has punished, else punish forever
        def fn(t, m):
            p = np.zeros((3, 3))
            if t < 1.0 and m[0] >= 1.0 - 1e-9:
                a = 0
            elif t >= 1.0 and m[2] <= 1e-9:
                a = 1
            else:
                a = 2
            p[:, a] = 1.0
            return p
        return MarkovStrategy(fn, time_breakpoints=np.array([1.0]),
                              label="punish-markov")

    strategies = {
        "all-C": lambda grid: LocalStrategy.constant(grid, 3, 3, 0),
        "all-D": lambda grid: LocalStrategy.constant(grid, 3, 3, 1),
        "all-P": lambda grid: LocalStrategy.constant(grid, 3, 3, 2),
        "uniform": lambda grid: LocalStrategy.uniform(grid, 3, 3),
        "punish-markov": punish_markov,
    }
    return ScenarioBundle(spec, strategies,
                          notes="two equilibria of the limit game (all-D, "
                                "all-P); the punish schedule beats both at "
                                "finite N")


def _folk_repeated(delta: float = 0.9) -> ScenarioBundle:
    # C players pay -2 m_C, D players pay -3 m_C - m_D; state = stage action
    table = np.array([[-2.0, 0.0],
                      [-3.0, -1.0]])
    spec = GameSpec(
        n_states=2, n_actions=2, time_mode="discrete",
        horizon=Horizon.discounted(delta),
        m0=np.array([0.0, 1.0]),  # round 0 is played in D
        kernel_model=KernelModel(base=_move_to_action_kernels(2)),
        cost_model=_state_matching_costs(table),
        normalize_discrete_cost=True,
        state_labels=("C", "D"), action_labels=("C", "D"),
        name="folk-repeated",
    )

    def grim_local(k: int):
        # realized stage profile: D in rounds 0..k-1, C afterwards.  The round-t
        # state is the action committed at epoch t-1 (round 0 comes from m0),
        # so the action switch happens at epoch k-1.
        def make(grid):
            acts = np.ones((grid.n_steps, 2), dtype=int)
            acts[max(k - 1, 0):, :] = 0
            return LocalStrategy.from_actions(grid, acts, 2)
        return make

    def grim_markov(k: int):
        # same schedule, but defect forever once the observed stage profile
        # deviates from it
        def make(grid=None):
            def fn(t, m):
                p = np.zeros((2, 2))
                epoch = int(round(t))
                if epoch <= k - 2:
                    a = 1
                elif epoch == k - 1:
                    a = 0 if m[1] >= 1.0 - 1e-9 else 1
                else:
                    a = 0 if m[0] >= 1.0 - 1e-9 else 1
                p[:, a] = 1.0
                return p
            return MarkovStrategy(fn, label=f"grim-markov:{k}")
        return make

    strategies = {
        "all-C": lambda grid: LocalStrategy.constant(grid, 2, 2, 0),
        "all-D": lambda grid: LocalStrategy.constant(grid, 2, 2, 1),
        "uniform": lambda grid: LocalStrategy.uniform(grid, 2, 2),
    }
    for k in (1, 2, 3, 4, 5):
        strategies[f"grim:{k}"] = grim_local(k)
        strategies[f"grim-markov:{k}"] = grim_markov(k)
    return ScenarioBundle(spec, strategies,
                          notes="V(grim k, grim k) = -1 - delta^k but the "
                                "free-riding all-D response earns "
                                "-1 - 2 delta^k")


def _nonexistence(beta: float = 1.0) -> ScenarioBundle:
    # action a: stay put, cost 0; action b: drift 1 -> 2 at rate 1, cost -1
    # while m_2 <= 1/2 and +1 after -- discontinuous on purpose.
    base = np.zeros((2, 2, 2))
    base[0, 0, 1] = -1.0
    base[0, 1, 1] = 1.0

    def cost_fn(m):
        cb = -1.0 if m[1] <= 0.5 else 1.0
        return np.array([[0.0, cb],
                         [0.0, cb]])

    spec = GameSpec(
        n_states=2, n_actions=2, time_mode="continuous",
        horizon=Horizon.discounted(beta),
        m0=np.array([1.0, 0.0]),
        rate_model=RateModel(base=base),
        cost_model=CostModel(evaluator=cost_fn, n_states=2, n_actions=2,
                             continuous=False),
        state_labels=("1", "2"), action_labels=("a", "b"),
        name="nonexistence",
    )
    strategies = {
        "all-a": lambda grid: LocalStrategy.constant(grid, 2, 2, 0),
        "all-b": lambda grid: LocalStrategy.constant(grid, 2, 2, 1),
        "uniform": lambda grid: LocalStrategy.uniform(grid, 2, 2),
    }
    return ScenarioBundle(spec, strategies,
                          notes="best responses cycle between switching near "
                                "ln 2 and never switching; no equilibrium")


def _sir_demo(beta: float = 0.5) -> ScenarioBundle:
    # states S, I, R; actions: interact (fast infection) / isolate (slow but
    # costly).  Infection rate scales with the infected mass, recovery is 1.
    E, A = 3, 2
    base = np.zeros((E, E, A))
    slope = np.zeros((E, E, A, E))
    contact = {0: 2.0, 1: 0.5}  # infection rate per unit infected mass
    for a, rate in contact.items():
        slope[0, 1, a, 1] = rate
        slope[0, 0, a, 1] = -rate
    for a in range(A):
        base[1, 2, a] = 1.0
        base[1, 1, a] = -1.0
    cbase = np.zeros((E, A))
    cbase[1, :] = 1.0    # being infected hurts
    cbase[0, 1] = 0.3    # isolating is tedious
    spec = GameSpec(
        n_states=3, n_actions=2, time_mode="continuous",
        horizon=Horizon.discounted(beta),
        m0=np.array([0.95, 0.05, 0.0]),
        rate_model=RateModel(base=base, slope=slope),
        cost_model=CostModel(base=cbase),
        state_labels=("S", "I", "R"), action_labels=("interact", "isolate"),
        name="sir-demo",
    )
    strategies = {
        "all-interact": lambda grid: LocalStrategy.constant(grid, 3, 2, 0),
        "all-isolate": lambda grid: LocalStrategy.constant(grid, 3, 2, 1),
        "uniform": lambda grid: LocalStrategy.uniform(grid, 3, 2),
    }
    return ScenarioBundle(spec, strategies,
                          notes="population-dependent dynamics demo; not a "
                                "counterexample")


_BUILDERS = {
    "prisoner-mfg": _prisoner,
    "punish-finite": _punish_finite,
    "folk-repeated": _folk_repeated,
    "nonexistence": _nonexistence,
    "sir-demo": _sir_demo,
}


def scenario_bundle(name: str, **params) -> ScenarioBundle:
    """Scenario plus its reference strategies; unknown names raise ValueError."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; available: {', '.join(SCENARIO_NAMES)}"
        ) from None
    return builder(**params)


def scenario(name: str, **params) -> GameSpec:
    """The fully parameterized GameSpec for a catalog scenario."""
    return scenario_bundle(name, **params).spec


def named_strategy(bundle: ScenarioBundle, name: str, grid: Optional[TimeGrid]):
    """Resolve a strategy name from a bundle.

    Beyond the bundle's own entries this understands two generic forms:
    ``all-<action label>`` and ``switch:<from>:<to>@<t>``.
    """
    if name in bundle.strategies:
        return bundle.strategies[name](grid)
    spec = bundle.spec
    if name.startswith("all-"):
        a = spec.action_index(name[4:])
        return LocalStrategy.constant(grid, spec.n_states, spec.n_actions, a)
    if name.startswith("switch:"):
        body = name[len("switch:"):]
        arms, t_part = body.rsplit("@", 1)
        frm, to = arms.split(":")
        return LocalStrategy.switch_at(grid, spec.n_states, spec.n_actions,
                                       spec.action_index(frm),
                                       spec.action_index(to), float(t_part))
    known = ", ".join(sorted(bundle.strategies))
    raise ValueError(f"unknown strategy {name!r}; known: {known}, all-<action>, "
                     f"switch:<from>:<to>@<t>")
