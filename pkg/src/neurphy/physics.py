"""Exact reference simulators and task-grid generators.

Damped pendulum integrated by explicit Euler; bound Kepler orbits advanced by
an Euler angle update with the radius read off the exact conic. These are the
ground-truth oracles for all learning and evaluation, so the update rules are
kept exactly as stated -- no higher-order integrator.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np


class PhysicsError(Exception):
    pass


class UnboundOrbitError(PhysicsError):
    """Initial condition yields eccentricity >= 1 (not a bound ellipse)."""


class DegenerateSplitError(PhysicsError):
    pass


class InfeasibleContextError(PhysicsError):
    pass


@dataclass
class PendulumParams:
    l: float = 2.0
    m: float = 1.0
    g: float = 10.0
    mu: float = 0.5
    theta0: float = -math.pi
    omega0: float = 4.0
    dt: float = 0.1

    def __post_init__(self):
        if self.l <= 0 or self.m <= 0 or self.g <= 0 or self.mu < 0 or self.dt <= 0:
            raise ValueError(f"invalid pendulum parameters: {self}")


@dataclass
class PendulumState:
    theta: float
    omega: float


@dataclass
class OrbitInit:
    r0: float
    v0r: float
    v0theta: float
    GM: float = 1.0
    theta0: float = 0.0

    def __post_init__(self):
        if self.r0 <= 0 or self.v0theta <= 0 or self.GM <= 0 or self.theta0 != 0.0:
            raise ValueError(f"invalid orbit initial condition: {self}")


@dataclass
class OrbitParams:
    r_n: float
    e: float
    theta_n: float
    h: float
    GM: float


@dataclass
class OrbitState:
    r: float
    theta: float


@dataclass
class Task:
    task_id: int
    system: str  # "pendulum" | "orbit"
    globals: dict
    states: np.ndarray  # (T, state_dim)
    observations: np.ndarray  # (T, 2)
    dt: float
    seed: int

    @property
    def length(self):
        return self.states.shape[0]


@dataclass
class ContextSet:
    pairs: np.ndarray  # (n_c, 2*obs_dim), row i = [x_{t_i}, x_{t_i+1}]
    indices: np.ndarray  # start indices t_i

    @property
    def n_c(self):
        return self.pairs.shape[0]


def pendulum_step(s, p):
    theta = s.theta + p.dt * s.omega
    omega = s.omega - p.dt * (p.mu / p.m * s.omega + p.g / p.l * math.sin(s.theta))
    return PendulumState(theta, omega)


def pendulum_endpoint(s, p):
    """Endpoint coordinates with the pivot at the origin, y pointing up."""
    return (p.l * math.sin(s.theta), -p.l * math.cos(s.theta))


def pendulum_trajectory(p, T, task_id=0, seed=0):
    if T < 2:
        raise ValueError("trajectory needs T >= 2")
    states = np.empty((T, 2))
    obs = np.empty((T, 2))
    s = PendulumState(p.theta0, p.omega0)
    for t in range(T):
        states[t] = (s.theta, s.omega)
        obs[t] = pendulum_endpoint(s, p)
        s = pendulum_step(s, p)
    return Task(task_id, "pendulum", {"l": p.l, "m": p.m}, states, obs, p.dt, seed)


def orbit_params_from_init(init):
    h = init.r0 * init.v0theta
    energy = 0.5 * (init.v0r ** 2 + init.v0theta ** 2) - init.GM / init.r0
    e_sq = 1.0 + 2.0 * h * h / (init.GM * init.GM) * energy
    if e_sq < -1e-12:
        raise ValueError(f"inconsistent orbit energy: e^2 = {e_sq}")
    e = math.sqrt(max(e_sq, 0.0))
    if e >= 1.0:
        raise UnboundOrbitError(f"eccentricity {e} >= 1 for init {init}")
    r_n = h * h / (init.GM * (1.0 + e))
    if e < 1e-9:
        theta_n = 0.0
    else:
        # e*cos(theta_n) from the conic at theta0=0; e*sin(theta_n) from the
        # radial velocity v_r = (GM/h) e sin(theta - theta_n). atan2 of the two
        # stays accurate at the apsides where a bare arccos loses ~sqrt(eps).
        e_cos_tn = r_n * (1.0 + e) / init.r0 - 1.0
        e_sin_tn = -init.v0r * h / init.GM
        theta_n = math.atan2(e_sin_tn, e_cos_tn)
        if theta_n <= -math.pi:
            theta_n = math.pi
    return OrbitParams(r_n=r_n, e=e, theta_n=theta_n, h=h, GM=init.GM)


def conic_radius(p, theta):
    return p.r_n * (1.0 + p.e) / (1.0 + p.e * math.cos(theta - p.theta_n))


def orbit_step(s, p, dt):
    theta = s.theta + dt * p.h / (s.r * s.r)
    return OrbitState(conic_radius(p, theta), theta)


def orbit_trajectory(init, T, dt, task_id=0, seed=0):
    if T < 2:
        raise ValueError("trajectory needs T >= 2")
    p = orbit_params_from_init(init)
    states = np.empty((T, 2))
    obs = np.empty((T, 2))
    s = OrbitState(init.r0, 0.0)
    for t in range(T):
        states[t] = (s.r, s.theta)
        obs[t] = (s.r * math.cos(s.theta), s.r * math.sin(s.theta))
        s = orbit_step(s, p, dt)
    return Task(task_id, "orbit",
                {"r_n": p.r_n, "e": p.e, "theta_n": p.theta_n},
                states, obs, dt, seed)


@dataclass
class PendulumGridConfig:
    l_range: tuple = (1.0, 3.0)
    l_count: int = 5
    m_range: tuple = (1.0, 4.0)
    m_count: int = 5
    g: float = 10.0
    mu: float = 0.5
    theta0: float = -math.pi
    omega0: float = 4.0
    dt: float = 0.1
    T: int = 101
    seed: int = 0


@dataclass
class OrbitGridConfig:
    r0_range: tuple = (1.5, 2.0)
    r0_count: int = 3
    v0r_range: tuple = (0.0, 0.2)
    v0r_count: int = 3
    v0t_range: tuple = (0.7, 0.8)
    v0t_count: int = 3
    GM: float = 1.0
    dt: float = 0.1
    T: int = 101
    seed: int = 0


def _axis(rng_pair, count):
    if count < 1:
        raise ValueError("grid axis needs at least one point")
    return np.linspace(rng_pair[0], rng_pair[1], count)


def generate_task_grid(cfg):
    """Cartesian-product grid of global parameters, one task per point.

    Returns (tasks, skipped) where skipped counts orbit points dropped for
    being unbound (e >= 1). Task ids are assigned in row-major grid order.
    """
    tasks, skipped = [], 0
    if isinstance(cfg, PendulumGridConfig):
        task_id = 0
        for l in _axis(cfg.l_range, cfg.l_count):
            for m in _axis(cfg.m_range, cfg.m_count):
                p = PendulumParams(l=float(l), m=float(m), g=cfg.g, mu=cfg.mu,
                                   theta0=cfg.theta0, omega0=cfg.omega0, dt=cfg.dt)
                tasks.append(pendulum_trajectory(p, cfg.T, task_id=task_id, seed=cfg.seed))
                task_id += 1
    elif isinstance(cfg, OrbitGridConfig):
        task_id = 0
        for r0 in _axis(cfg.r0_range, cfg.r0_count):
            for v0r in _axis(cfg.v0r_range, cfg.v0r_count):
                for v0t in _axis(cfg.v0t_range, cfg.v0t_count):
                    init = OrbitInit(r0=float(r0), v0r=float(v0r),
                                     v0theta=float(v0t), GM=cfg.GM)
                    try:
                        tasks.append(orbit_trajectory(init, cfg.T, cfg.dt,
                                                      task_id=task_id, seed=cfg.seed))
                        task_id += 1
                    except UnboundOrbitError:
                        skipped += 1
    else:
        raise TypeError(f"unknown grid config {type(cfg)}")
    return tasks, skipped


def split_meta(tasks, ratio, seed):
    """Seeded shuffle then split into (meta_train, meta_test); disjoint, covering."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(tasks))
    n_train = int(ratio * len(tasks))
    if n_train == 0 or n_train == len(tasks):
        raise DegenerateSplitError(f"split {ratio} leaves an empty side for {len(tasks)} tasks")
    train = [tasks[i] for i in order[:n_train]]
    test = [tasks[i] for i in order[n_train:]]
    return train, test


def select_contexts(task, n_c, mode, seed):
    """Draw n_c consecutive-frame pairs.

    train_random draws start indices from the whole sequence; metatest_prefix
    only from the first 21 frames (start index <= 19) so no future leaks in.
    """
    if mode == "train_random":
        limit = task.length - 1
    elif mode == "metatest_prefix":
        limit = min(20, task.length - 1)
    else:
        raise ValueError(f"unknown context mode {mode!r}")
    if n_c < 1 or n_c > limit:
        raise InfeasibleContextError(f"cannot draw {n_c} pairs from {limit} start indices")
    starts = np.sort(np.random.default_rng(seed).choice(limit, size=n_c, replace=False))
    pairs = np.concatenate([task.observations[starts], task.observations[starts + 1]], axis=1)
    return ContextSet(pairs=pairs, indices=starts)


def _fmt(x):
    """17 significant digits: round-trips float64 exactly."""
    return format(float(x), ".17g")


def _fmt_rows(arr):
    return "[" + ", ".join(
        "[" + ", ".join(_fmt(v) for v in row) + "]" for row in arr
    ) + "]"


def task_to_json(task):
    globals_json = "{" + ", ".join(
        f"{json.dumps(k)}: {_fmt(v)}" for k, v in task.globals.items()
    ) + "}"
    return ("{" +
            f'"task_id": {task.task_id}, '
            f'"system": {json.dumps(task.system)}, '
            f'"globals": {globals_json}, '
            f'"states": {_fmt_rows(task.states)}, '
            f'"observations": {_fmt_rows(task.observations)}, '
            f'"dt": {_fmt(task.dt)}, '
            f'"seed": {task.seed}' +
            "}")


def task_from_json(line):
    d = json.loads(line)
    return Task(task_id=d["task_id"], system=d["system"], globals=d["globals"],
                states=np.asarray(d["states"], dtype=np.float64),
                observations=np.asarray(d["observations"], dtype=np.float64),
                dt=d["dt"], seed=d["seed"])


def save_tasks_jsonl(tasks, path):
    with open(path, "w") as f:
        for task in tasks:
            f.write(task_to_json(task) + "\n")


def load_tasks_jsonl(path):
    with open(path) as f:
        return [task_from_json(line) for line in f if line.strip()]
