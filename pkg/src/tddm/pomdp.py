"""Exact tabular POMDP: Bayes belief filtering, belief-space value iteration,
greedy policy extraction and belief Q-values.

Tables are indexed ``transition[s, a, s']``, ``observation_fn[s', a, o]`` and
``reward[s, a]``. Value functions live on a finite set of beliefs (a
:class:`BeliefGrid`), either the reachable closure of a start belief or a
regular simplex grid with barycentric interpolation.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ImpossibleObservationError, UnreachableBeliefError

PROB_TOL = 1e-12
KEY_DECIMALS = 10


@dataclass(frozen=True)
class TabularPOMDP:
    transition: np.ndarray
    observation_fn: np.ndarray
    reward: np.ndarray
    discount: float
    states: tuple = ()
    actions: tuple = ()
    observations: tuple = ()

    def __post_init__(self):
        T = np.array(self.transition, dtype=np.float64)
        O = np.array(self.observation_fn, dtype=np.float64)
        R = np.array(self.reward, dtype=np.float64)
        errors = []
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ConfigError(f"transition must have shape (S, A, S), got {T.shape}")
        n_s, n_a, _ = T.shape
        if O.ndim != 3 or O.shape[:2] != (n_s, n_a):
            raise ConfigError(f"observation_fn must have shape ({n_s}, {n_a}, O), got {O.shape}")
        if R.shape != (n_s, n_a):
            raise ConfigError(f"reward must have shape ({n_s}, {n_a}), got {R.shape}")
        if (T < 0).any() or np.abs(T.sum(axis=2) - 1.0).max() > PROB_TOL:
            errors.append("transition rows must be non-negative and sum to 1")
        if (O < 0).any() or np.abs(O.sum(axis=2) - 1.0).max() > PROB_TOL:
            errors.append("observation rows must be non-negative and sum to 1")
        if not np.all(np.isfinite(R)):
            errors.append("rewards must be finite")
        if not 0.0 <= self.discount < 1.0:
            errors.append(f"discount must lie in [0, 1), got {self.discount}")
        names = {"states": n_s, "actions": n_a, "observations": O.shape[2]}
        for attr, n in names.items():
            labels = tuple(getattr(self, attr)) or tuple(str(i) for i in range(n))
            if len(labels) != n:
                errors.append(f"{attr} lists {len(labels)} labels for {n} entries")
            object.__setattr__(self, attr, labels)
        if errors:
            raise ConfigError(errors)
        for arr in (T, O, R):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "observation_fn", O)
        object.__setattr__(self, "reward", R)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_observations(self):
        return self.observation_fn.shape[2]

    # text model description -------------------------------------------------

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in ("transition", "observation", "reward", "discount") if k not in d]
        if missing:
            raise ConfigError([f"model is missing {k!r}" for k in missing])
        return cls(
            transition=d["transition"],
            observation_fn=d["observation"],
            reward=d["reward"],
            discount=float(d["discount"]),
            states=tuple(d.get("states", ())),
            actions=tuple(d.get("actions", ())),
            observations=tuple(d.get("observations", ())),
        )

    @classmethod
    def loads(cls, text: str):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file line {exc.lineno}: {exc.msg}") from exc

    def dumps(self) -> str:
        return json.dumps({
            "states": list(self.states),
            "actions": list(self.actions),
            "observations": list(self.observations),
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "observation": self.observation_fn.tolist(),
            "reward": self.reward.tolist(),
        }, indent=2)


def check_belief(m: TabularPOMDP, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (m.n_states,):
        raise ContractError(f"belief must have {m.n_states} entries, got shape {b.shape}")
    if (b < 0).any() or abs(b.sum() - 1.0) > 1e-9:
        raise ContractError("belief must be non-negative and sum to 1")
    return b


def _predict(m, b, a):
    return b @ m.transition[:, a, :]


def observation_prob(m: TabularPOMDP, b, a: int, o: int) -> float:
    """P(o | a, b)."""
    return float(m.observation_fn[:, a, o] @ _predict(m, b, a))


def belief_update(m: TabularPOMDP, b, a: int, o: int) -> np.ndarray:
    """Posterior over next states after taking ``a`` and seeing ``o``."""
    joint = m.observation_fn[:, a, o] * _predict(m, b, a)
    norm = joint.sum()
    if norm <= 0.0:
        raise ImpossibleObservationError(a, o)
    return joint / norm


def belief_reward(m: TabularPOMDP, b, a: int) -> float:
    return float(np.asarray(b, dtype=np.float64) @ m.reward[:, a])


def successors(m: TabularPOMDP, b, a: int):
    """Yield ``(o, P(o|a,b), next_belief)`` for every observation of positive probability."""
    pred = _predict(m, b, a)
    for o in range(m.n_observations):
        joint = m.observation_fn[:, a, o] * pred
        p = joint.sum()
        if p > 0.0:
            yield o, float(p), joint / p


def belief_key(b) -> tuple:
    return tuple(np.round(np.asarray(b, dtype=np.float64), KEY_DECIMALS) + 0.0)


# belief carriers -------------------------------------------------------------

@dataclass
class BeliefGrid:
    """Finite set of beliefs carrying a value function.

    ``depths`` is set for a depth-bounded reachable closure (distance from the
    start belief); ``resolution`` is set for a regular simplex grid, which
    enables barycentric interpolation of off-grid beliefs.
    """

    points: np.ndarray
    depths: np.ndarray | None = None
    max_depth: int | None = None
    closed: bool = True
    resolution: int | None = None
    index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if len(self.points) == 0:
            raise ContractError("belief grid must not be empty")
        self.index = {belief_key(p): i for i, p in enumerate(self.points)}

    def __len__(self):
        return len(self.points)

    def find(self, b):
        return self.index.get(belief_key(b))

    def interpolation(self, b):
        """Barycentric ``(indices, weights)`` of ``b`` on the simplex grid."""
        if self.resolution is None:
            raise UnreachableBeliefError(f"belief {np.round(b, 6).tolist()} is not on the grid")
        verts, weights = freudenthal(b, self.resolution)
        idx = []
        for v in verts:
            i = self.find(v)
            if i is None:
                raise UnreachableBeliefError(f"grid vertex {v.tolist()} missing")
            idx.append(i)
        return np.array(idx), np.array(weights)


def reachable_closure(m: TabularPOMDP, b0, max_depth: int) -> BeliefGrid:
    """All beliefs reachable from ``b0`` in at most ``max_depth`` updates.

    ``closed`` is True when the last layer produced no new beliefs, i.e. the
    reachable set is finite and fully enumerated.
    """
    b0 = check_belief(m, b0)
    points, depths = [b0], [0]
    seen = {belief_key(b0)}
    frontier = [b0]
    closed = False
    for depth in range(1, max_depth + 2):
        nxt = []
        for b in frontier:
            for a in range(m.n_actions):
                for _, _, nb in successors(m, b, a):
                    k = belief_key(nb)
                    if k not in seen:
                        seen.add(k)
                        nxt.append(nb)
        if not nxt:
            closed = True
            break
        if depth > max_depth:
            break
        points.extend(nxt)
        depths.extend([depth] * len(nxt))
        frontier = nxt
    return BeliefGrid(np.array(points), depths=np.array(depths), max_depth=max_depth, closed=closed)


def simplex_grid(n_states: int, resolution: int) -> BeliefGrid:
    """Regular grid of beliefs with coordinates in multiples of ``1/resolution``."""
    pts = []
    for cuts in itertools.combinations(range(resolution + n_states - 1), n_states - 1):
        parts = np.diff((-1,) + cuts + (resolution + n_states - 1,)) - 1
        pts.append(parts / resolution)
    return BeliefGrid(np.array(pts), resolution=resolution)


def freudenthal(b, resolution: int):
    """Vertices and barycentric weights of ``b`` in the Freudenthal triangulation.

    Works in cumulative coordinates ``x_i = M * sum_{j>=i} b_j``.
    """
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    x = resolution * np.cumsum(b[::-1])[::-1]
    x[0] = resolution
    base = np.floor(x)
    d = x - base
    d[0] = 0.0
    order = sorted(range(n), key=lambda i: (-d[i], i == 0, i))
    lam = np.empty(n)
    for k in range(1, n):
        lam[k] = d[order[k - 1]] - d[order[k]]
    lam[0] = 1.0 - lam[1:].sum()
    verts, weights = [], []
    v = base.copy()
    for k in range(n):
        if k > 0:
            v = v.copy()
            v[order[k - 1]] += 1.0
        if lam[k] > 1e-15:
            bv = np.append(v[:-1] - v[1:], v[-1]) / resolution
            verts.append(bv)
            weights.append(lam[k])
    w = np.array(weights)
    return verts, w / w.sum()


@dataclass
class BeliefValueTable:
    grid: BeliefGrid
    values: np.ndarray
    interpolate: bool = False

    def value(self, b) -> float:
        i = self.grid.find(b)
        if i is not None:
            return float(self.values[i])
        if not self.interpolate:
            raise UnreachableBeliefError(f"belief {np.round(b, 6).tolist()} is not on the grid")
        idx, w = self.grid.interpolation(b)
        return float(w @ self.values[idx])


def _backup(m, b, values_of, gamma):
    q = np.empty(m.n_actions)
    for a in range(m.n_actions):
        total = belief_reward(m, b, a)
        if gamma > 0.0:
            total += gamma * sum(p * values_of(nb) for _, p, nb in successors(m, b, a))
        q[a] = total
    return q


def value_iteration(m: TabularPOMDP, grid, n_iters: int, interpolate: bool | None = None) -> BeliefValueTable:
    """Synchronous value-iteration sweeps over the beliefs of ``grid``, from V0 = 0.

    On a depth-bounded closure that is not closed, sweep ``k`` only updates
    beliefs at depth ``<= max_depth - k + 1``, so every value stored is an
    exact finite-horizon value. Off-grid successors are interpolated on
    simplex grids and raise :class:`UnreachableBeliefError` otherwise.
    """
    if not isinstance(grid, BeliefGrid):
        grid = BeliefGrid(np.array([check_belief(m, b) for b in grid]))
    if interpolate is None:
        interpolate = grid.resolution is not None
    gamma = m.discount
    values = np.zeros(len(grid))
    bounded = grid.depths is not None and not grid.closed
    for k in range(1, n_iters + 1):
        old = BeliefValueTable(grid, values, interpolate)
        first = k == 1

        def lookup(nb, old=old, first=first):
            if first:
                return 0.0
            return old.value(nb)

        new = values.copy()
        for i, b in enumerate(grid.points):
            if bounded and grid.depths[i] > grid.max_depth - k + 1:
                continue
            new[i] = _backup(m, b, lookup, gamma).max()
        values = new
    return BeliefValueTable(grid, values, interpolate)


def belief_q(m: TabularPOMDP, b, a: int, V: BeliefValueTable) -> float:
    """r(b, a) + gamma * sum_o P(o|b,a) V(next belief)."""
    b = check_belief(m, b)
    total = belief_reward(m, b, a)
    if m.discount > 0.0:
        total += m.discount * sum(p * V.value(nb) for _, p, nb in successors(m, b, a))
    return total


def belief_q_all(m: TabularPOMDP, b, V: BeliefValueTable) -> np.ndarray:
    return np.array([belief_q(m, b, a, V) for a in range(m.n_actions)])


def greedy_policy(m: TabularPOMDP, b, V: BeliefValueTable) -> int:
    """Action maximizing the belief Q-value; ties go to the lowest index."""
    return int(np.argmax(belief_q_all(m, b, V)))


def tiger(accuracy: float = 0.85, discount: float = 0.95) -> TabularPOMDP:
    """Classic tiger problem: actions listen / open-left / open-right."""
    reset = np.full((2, 2), 0.5)
    T = np.stack([np.eye(2), reset, reset], axis=1)
    listen = np.array([[accuracy, 1 - accuracy], [1 - accuracy, accuracy]])
    flat = np.full((2, 2), 0.5)
    O = np.stack([listen, flat, flat], axis=1)
    R = np.array([[-1.0, -100.0, 10.0], [-1.0, 10.0, -100.0]])
    return TabularPOMDP(T, O, R, discount,
                        states=("tiger-left", "tiger-right"),
                        actions=("listen", "open-left", "open-right"),
                        observations=("hear-left", "hear-right"))
