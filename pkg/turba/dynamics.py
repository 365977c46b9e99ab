from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from turba.parameters import ModelParams

if TYPE_CHECKING:
    from turba.network import SocialNetwork


STATE_FIELDS = ("perception", "emotion", "behaviour")


def _clamp(x):
    return np.clip(x, 0.0, 1.0)


def _check_signal(s_t: float) -> float:
    s_t = float(s_t)
    if not np.isfinite(s_t):
        raise ValueError(f"External signal should be finite, not {s_t}.")
    if not 0.0 <= s_t <= 1.0:
        raise ValueError(f"External signal should be within [0, 1], not {s_t}.")
    return s_t


def _check_unit_interval(name: str, value) -> None:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} should be finite, got {value}.")
    if np.any(value < 0.0) or np.any(value > 1.0):
        raise ValueError(f"{name} should be within [0, 1], got {value}.")


@dataclass(frozen=True)
class AgentState:
    """State of one individual, every field in [0, 1].

    Attributes:
        perception (float): perceived risk of infection.
        emotion (float): emotional intensity, e.g. anxiety.
        behaviour (float): protective or information-seeking behaviour level.

    """

    perception: float
    emotion: float
    behaviour: float

    def __post_init__(self):
        for name in STATE_FIELDS:
            value = float(getattr(self, name))
            _check_unit_interval(name, value)
            object.__setattr__(self, name, value)

    @classmethod
    def initial(cls, params: ModelParams) -> "AgentState":
        return cls(params.init_p, params.init_e, params.init_b)

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.perception, self.emotion, self.behaviour


# array kernels, shared by the scalar operations and the population step


def _strengthen(p, e, b, s_t: float, params: ModelParams):
    p = _clamp(p + params.alpha_p * s_t * (1.0 - p))
    e = _clamp(e + params.alpha_e * p * (1.0 - e))
    b = _clamp(b + params.alpha_b * e * (1.0 - b))
    return p, e, b


def _weaken(p, e, b, params: ModelParams):
    # all three terms read the incoming behaviour level
    p_new = _clamp(p - params.beta_p * b * p)
    e_new = _clamp(e - params.beta_e * b * e)
    b_new = _clamp(b - params.delta_b * b)
    return p_new, e_new, b_new


def _couple(x, neighbour_mean, kappa: float):
    return _clamp(x + kappa * (neighbour_mean - x))


def strengthening_step(state: AgentState, s_t: float, params: ModelParams) -> AgentState:
    """Cascade of the external signal through perceived risk, emotion and behaviour.

    Args:
        state (AgentState): state at the start of the step.
        s_t (float): normalized external signal of the day, in [0, 1].
        params (ModelParams): model parameters.

    Returns:
        AgentState: p' = p + alpha_p s (1 - p), e' = e + alpha_e p' (1 - e),
        b' = b + alpha_b e' (1 - b), each clamped to [0, 1].

    Raises:
        ValueError: if s_t is non-finite or outside [0, 1].

    """
    s_t = _check_signal(s_t)
    return AgentState(*(float(x) for x in _strengthen(*state.as_tuple(), s_t, params)))


def weakening_step(state: AgentState, params: ModelParams) -> AgentState:
    """Behaviour damps perceived risk and emotion, and relaxes itself.

    The output is never larger than the input, field by field.

    """
    return AgentState(*(float(x) for x in _weaken(*state.as_tuple(), params)))


def social_coupling(
    state_i: AgentState, neighbor_states: Sequence[AgentState], params: ModelParams
) -> AgentState:
    """Emotion contagion and behaviour mirroring toward the neighbours' mean.

    Perception is not coupled. An empty neighbourhood leaves the state unchanged.

    """
    if len(neighbor_states) == 0:
        return state_i
    mean_e = float(np.mean([s.emotion for s in neighbor_states]))
    mean_b = float(np.mean([s.behaviour for s in neighbor_states]))
    return AgentState(
        state_i.perception,
        float(_couple(state_i.emotion, mean_e, params.kappa_e)),
        float(_couple(state_i.behaviour, mean_b, params.kappa_b)),
    )


@dataclass
class Population:
    """States of all agents, one array entry per agent.

    Attributes:
        perception (np.ndarray): perceived risk of every agent.
        emotion (np.ndarray): emotional intensity of every agent.
        behaviour (np.ndarray): behaviour level of every agent.

    """

    perception: np.ndarray
    emotion: np.ndarray
    behaviour: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, name), dtype=float) for name in STATE_FIELDS]
        if any(a.ndim != 1 for a in arrays) or len({len(a) for a in arrays}) != 1:
            raise ValueError("Population fields should be 1D arrays of equal length.")
        for name, a in zip(STATE_FIELDS, arrays):
            _check_unit_interval(name, a)
            setattr(self, name, a)

    def __len__(self) -> int:
        return len(self.perception)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Population):
            return False
        return all(
            np.array_equal(getattr(self, name), getattr(other, name)) for name in STATE_FIELDS
        )

    @classmethod
    def initial(cls, n: int, params: ModelParams) -> "Population":
        """All n agents at the initial values of params."""
        return cls(
            np.full(n, params.init_p), np.full(n, params.init_e), np.full(n, params.init_b)
        )

    @classmethod
    def from_agents(cls, agents: Sequence[AgentState]) -> "Population":
        states = np.array([a.as_tuple() for a in agents], dtype=float).reshape(-1, 3)
        return cls(states[:, 0], states[:, 1], states[:, 2])

    def agent(self, i: int) -> AgentState:
        return AgentState(
            float(self.perception[i]), float(self.emotion[i]), float(self.behaviour[i])
        )

    def to_agents(self) -> List[AgentState]:
        return [self.agent(i) for i in range(len(self))]

    def means(self) -> Tuple[float, float, float]:
        """Population means of perception, emotion and behaviour."""
        return (
            float(np.mean(self.perception)),
            float(np.mean(self.emotion)),
            float(np.mean(self.behaviour)),
        )

    def copy(self) -> "Population":
        return Population(self.perception.copy(), self.emotion.copy(), self.behaviour.copy())


def _step_arrays(
    p: np.ndarray,
    e: np.ndarray,
    b: np.ndarray,
    net: "SocialNetwork",
    s_t: float,
    params: ModelParams,
    noise: Optional[np.ndarray],
):
    """One synchronous day on raw arrays, inputs are not validated."""
    # neighbours are read at the start of the day
    mean_e = net.neighbour_mean(e)
    mean_b = net.neighbour_mean(b)

    p, e, b = _strengthen(p, e, b, s_t, params)
    p, e, b = _weaken(p, e, b, params)

    # isolated agents are not coupled
    e = np.where(net.degrees == 0, e, _couple(e, mean_e, params.kappa_e))
    b = np.where(net.degrees == 0, b, _couple(b, mean_b, params.kappa_b))

    if noise is not None:
        e = _clamp(e + noise)
    return p, e, b


def step_population(
    pop: Population,
    net: "SocialNetwork",
    s_t: float,
    params: ModelParams,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> Population:
    """Advance every agent by one day.

    Per agent: strengthening with s_t, weakening, coupling to the neighbours' start-of-day
    emotion and behaviour, then Gaussian noise of scale sigma on emotion, clamped to [0, 1].

    Args:
        pop (Population): states at the start of the day.
        net (SocialNetwork): network with as many nodes as agents.
        s_t (float): external signal of the day, in [0, 1].
        params (ModelParams): model parameters.
        rng (np.random.Generator, optional (default=None)): stream the noise is drawn from,
            required when params.sigma > 0 and noise is not given.
        noise (np.ndarray, optional (default=None)): pre-drawn noise, one value per agent,
            already scaled by sigma.

    Returns:
        Population: states at the end of the day, pop is not modified.

    Raises:
        ValueError: if sizes mismatch, s_t is invalid or a noise source is missing.

    """
    if len(pop) != net.n:
        raise ValueError(f"Population has {len(pop)} agents but the network has {net.n} nodes.")
    s_t = _check_signal(s_t)
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (len(pop),):
            raise ValueError(f"noise should have shape ({len(pop)},), not {noise.shape}.")
    elif params.sigma > 0:
        if rng is None:
            raise ValueError("A random generator is required when sigma > 0.")
        noise = params.sigma * rng.standard_normal(len(pop))
    p, e, b = _step_arrays(
        pop.perception, pop.emotion, pop.behaviour, net, s_t, params, noise
    )
    return Population(p, e, b)
