"""2-D wall-avoidance benchmark.

A rectangular agent with first-order velocity inertia must travel from a
start region above one or two slotted walls to a goal region below them.
Demonstrations come from a waypoint-following P-controller that slows down
near the slots; during disturbance-injected collection, zero-mean Gaussian
noise with a state-dependent variance is added to its commands. Policies are
evaluated with batched rollouts that share the same dynamics.

States exposed to learners are always ``position - goal``.
"""

from dataclasses import dataclass

import numpy as np

from .disturbance import NoDisturbance


class WorldSpec:
    """Arena geometry, dynamics constants and demonstration routes."""

    def __init__(self, name, size, walls, start, start_noise, goal,
                 goal_radius, max_steps, agent_half, max_speed, inertia, dt,
                 routes, apertures, far_gain=2.0, near_gain=0.4,
                 caution_radius=4.0, switch_radius=1.0):
        self.name = name
        self.size = float(size)
        self.walls = np.asarray(walls, dtype=float).reshape(-1, 4)
        self.start = np.asarray(start, dtype=float)
        self.start_noise = float(start_noise)
        self.goal = np.asarray(goal, dtype=float)
        self.goal_radius = float(goal_radius)
        self.max_steps = int(max_steps)
        self.agent_half = np.asarray(agent_half, dtype=float)
        self.max_speed = float(max_speed)
        self.inertia = float(inertia)
        self.dt = float(dt)
        self.routes = [np.asarray(r, dtype=float).reshape(-1, 2) for r in routes]
        self.apertures = np.asarray(apertures, dtype=float).reshape(-1, 2)
        self.far_gain = float(far_gain)
        self.near_gain = float(near_gain)
        self.caution_radius = float(caution_radius)
        self.switch_radius = float(switch_radius)

    @property
    def n_routes(self):
        return len(self.routes)

    def default_injection_ceiling(self):
        return (0.5 * self.max_speed) ** 2


def _band(y0, y1, gap_centers, gap_width, size):
    """Horizontal wall band with slots cut out at the given centers."""
    walls = []
    x = 0.0
    for c in sorted(gap_centers):
        lo, hi = c - gap_width / 2.0, c + gap_width / 2.0
        if lo > x:
            walls.append((x, y0, lo, y1))
        x = hi
    if x < size:
        walls.append((x, y0, size, y1))
    return walls


def _thread(cx, heights):
    """Waypoints at the given heights that steer a route through x = cx.

    Each slot crossing is a vertical chain: one or two lead-in points above
    the band straighten out the incoming leg (switching a waypoint at the
    switch radius leaves a lateral offset proportional to the slant of that
    leg, and the narrow slots only forgive a fraction of a unit), then the
    aperture center itself, then an exit point where the band needs to be
    fully cleared before the route turns sideways.
    """
    return [(cx, h) for h in heights]


def make_world(name):
    """The two benchmark arenas.

    "wide" has one wall with two 5.0-wide slots; "complex" stacks a wall
    with two 2.0-wide slots above a wall with four 1.9-wide slots, and each
    route threads one slot of each.
    """
    size = 30.0
    if name == "wide":
        y0, y1 = 14.5, 15.5
        gaps = [9.0, 21.0]
        walls = _band(y0, y1, gaps, 5.0, size)
        apertures = [(c, (y0 + y1) / 2.0) for c in gaps]
        routes = [[(15.0, 19.5)] + _thread(cx, [18.5, 15.0, 12.5])
                  for cx in gaps]
        return WorldSpec(name, size, walls, start=(15.0, 25.0),
                         start_noise=0.05, goal=(15.0, 5.0), goal_radius=1.0,
                         max_steps=400, agent_half=(0.7, 0.75), max_speed=4.0,
                         inertia=0.2, dt=0.1, routes=routes,
                         apertures=apertures, switch_radius=2.0)
    if name == "complex":
        uy0, uy1 = 17.5, 18.5
        ly0, ly1 = 11.5, 12.5
        ugaps, lgaps = [9.0, 21.0], [6.0, 12.0, 18.0, 24.0]
        walls = (_band(uy0, uy1, ugaps, 2.0, size)
                 + _band(ly0, ly1, lgaps, 1.9, size))
        apertures = ([(c, (uy0 + uy1) / 2.0) for c in ugaps]
                     + [(c, (ly0 + ly1) / 2.0) for c in lgaps])
        pairs = [(9.0, 6.0), (9.0, 12.0), (21.0, 18.0), (21.0, 24.0)]
        routes = [_thread(ux, [21.5, 18.0, 16.0])
                  + _thread(lx, [15.8, 13.5, 12.0, 10.0])
                  for ux, lx in pairs]
        return WorldSpec(name, size, walls, start=(15.0, 25.0),
                         start_noise=0.1, goal=(15.0, 5.0), goal_radius=1.0,
                         max_steps=1500, agent_half=(0.7, 0.75), max_speed=4.0,
                         inertia=0.2, dt=0.1, routes=routes,
                         apertures=apertures, switch_radius=0.7)
    raise ValueError(f"unknown world {name!r}; choose 'wide' or 'complex'")


# -- dynamics ---------------------------------------------------------------


def clamp_speed(v, max_speed):
    """Scale velocity rows down to the actuator limit, preserving direction."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v * (max_speed / np.maximum(n, max_speed))

def swept_collision(world, pos0, pos1):
    """Agent-box sweep between consecutive centers vs walls and arena bounds.

    Uses the union of the two agent boxes, which is conservative for the
    short per-step motions here (max step length < wall thickness).
    Accepts (2,) or (Q, 2) positions; returns a bool or a (Q,) bool array.
    """
    p0 = np.atleast_2d(np.asarray(pos0, dtype=float))
    p1 = np.atleast_2d(np.asarray(pos1, dtype=float))
    lo = np.minimum(p0, p1) - world.agent_half
    hi = np.maximum(p0, p1) + world.agent_half
    hit = (lo[:, 0] < 0.0) | (lo[:, 1] < 0.0)
    hit |= (hi[:, 0] > world.size) | (hi[:, 1] > world.size)
    w = world.walls
    if w.size:
        ox = (lo[:, 0, None] < w[None, :, 2]) & (hi[:, 0, None] > w[None, :, 0])
        oy = (lo[:, 1, None] < w[None, :, 3]) & (hi[:, 1, None] > w[None, :, 1])
        hit |= (ox & oy).any(axis=1)
    return hit if np.ndim(pos0) > 1 else bool(hit[0])


def advance(world, pos, vel, command):
    """One inertial Euler step; returns (new_pos, new_vel)."""
    new_vel = (1.0 - world.inertia) * command + world.inertia * vel
    return pos + world.dt * new_vel, new_vel


# -- controllers ------------------------------------------------------------


class Supervisor:
    """Waypoint-following P-controller for one demonstration route.

    The command is gain * (waypoint - position), clamped to the actuator
    limit; a waypoint is retired once the agent is within the switch radius.
    The careful gain applies whenever the agent is within the caution radius
    of any aperture center, the aggressive gain elsewhere.
    """

    def __init__(self, world, route):
        self.world = world
        self.waypoints = np.vstack([world.routes[route], world.goal])
        self.idx = 0

    def command(self, pos):
        w = self.world
        wps = self.waypoints
        while (self.idx < len(wps) - 1
               and np.linalg.norm(wps[self.idx] - pos) <= w.switch_radius):
            self.idx += 1
        err = wps[self.idx] - pos
        near = np.linalg.norm(w.apertures - pos, axis=1).min() < w.caution_radius
        gain = w.near_gain if near else w.far_gain
        return clamp_speed(gain * err, w.max_speed)


class PolicyController:
    """Drives a fitted policy; commands are clamped to the actuator limit."""

    def __init__(self, world, policy):
        self.world = world
        self.policy = policy

    def command(self, pos):
        a = self.policy.act(pos - self.world.goal)
        return clamp_speed(a, self.world.max_speed)


# -- rollouts ---------------------------------------------------------------


@dataclass
class EpisodeResult:
    success: bool
    collided: bool
    steps: int
    states: np.ndarray      # (T, 2) position - goal at decision time
    commands: np.ndarray    # (T, 2) controller output (pre-injection)
    executed: np.ndarray    # (T, 2) command after injection and clamping
    levels: np.ndarray      # (T, 2) injected variance per action dim


def run_episode(world, controller, rng, inject=None, start_noise=None):
    """Roll one episode to the goal, a collision or the step limit.

    ``start_noise`` defaults to the world's test-stage level; demonstrations
    pass 0 since only test executions perturb the initial state.
    """
    if inject is None:
        inject = NoDisturbance(dim=2)
    if start_noise is None:
        start_noise = world.start_noise
    pos = world.start + rng.uniform(-start_noise, start_noise, 2)
    vel = np.zeros(2)
    states, commands, executed, levels = [], [], [], []
    success = collided = False
    steps = 0
    for _ in range(world.max_steps):
        state = pos - world.goal
        cmd = controller.command(pos)
        level = inject.injection_level(state)[0]
        if np.any(level > 0):
            act = clamp_speed(cmd + rng.normal(size=2) * np.sqrt(level),
                              world.max_speed)
        else:
            act = cmd
        states.append(state)
        commands.append(cmd)
        executed.append(act)
        levels.append(level)
        new_pos, vel = advance(world, pos, vel, act)
        steps += 1
        if swept_collision(world, pos, new_pos):
            collided = True
            break
        pos = new_pos
        if np.linalg.norm(pos - world.goal) <= world.goal_radius:
            success = True
            break
    return EpisodeResult(success, collided, steps,
                         np.asarray(states), np.asarray(commands),
                         np.asarray(executed), np.asarray(levels))


def run_demonstration(world, route, rng, inject=None):
    """One supervisor episode on the given route, with optional injection.

    Starts exactly at the nominal position: only injected disturbances (and
    nothing else) separate one collection round from another.
    """
    return run_episode(world, Supervisor(world, route), rng, inject,
                       start_noise=0.0)


def run_test_batch(world, policy, rng, n):
    """Roll ``n`` policy episodes in lockstep; returns a (n,) success mask.

    The policy acts deterministically, so batching changes nothing but
    speed; start positions consume ``rng`` in one draw.
    """
    pos = world.start + rng.uniform(-world.start_noise, world.start_noise,
                                    (n, 2))
    vel = np.zeros((n, 2))
    active = np.ones(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    for _ in range(world.max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cmd = clamp_speed(policy.act_batch(pos[idx] - world.goal),
                          world.max_speed)
        new_pos, new_vel = advance(world, pos[idx], vel[idx], cmd)
        hit = swept_collision(world, pos[idx], new_pos)
        reached = (np.linalg.norm(new_pos - world.goal, axis=1)
                   <= world.goal_radius) & ~hit
        pos[idx] = new_pos
        vel[idx] = new_vel
        success[idx[reached]] = True
        active[idx[hit | reached]] = False
    return success


def run_test_execution(world, policy, rng):
    """Single policy rollout; returns True on reaching the goal."""
    return bool(run_test_batch(world, policy, rng, 1)[0])
