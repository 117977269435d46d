"""Marginal-flow integration, invariance auditing, and jump-path sampling.

The marginal flow solves dm/dt = f(m) with f_j(m) = sum_i m_i Q_ij(m).
Integration uses an embedded Dormand-Prince 5(4) pair with adaptive steps;
every accepted state is projected back onto the simplex, and drift beyond
the projection repair budget raises instead of being silently absorbed.
Jump paths are sampled by thinning a dominating Poisson clock against the
precomputed marginal flow.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationDivergedError
from .generator import GeneratorSpec
from .simplex import (
    TOL_MEMBERSHIP,
    TOL_RENORMALIZE,
    Distribution,
    SimplexGrid,
    _project_array,
    _tangent_ok,
)

MAX_HORIZON = 1e6
THINNING_GRID_RESOLUTION = 50
THINNING_HEADROOM = 1.1

# Dormand-Prince 5(4) tableau; the last error weight belongs to the stage
# evaluated at the fifth-order solution itself.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_A_ROWS = tuple(np.array(row) for row in _DP_A)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass(frozen=True)
class IntegratorControls:
    """Step-size and sampling knobs for the marginal-flow integrator."""

    rtol: float = 1e-8
    atol: float = 1e-10
    sample_every: float | None = None
    max_steps: int = 1_000_000

    def __post_init__(self) -> None:
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.sample_every is not None and self.sample_every <= 0:
            raise ValueError("sample_every must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class Flow:
    """Dense-output marginal flow on [0, horizon].

    ``ts``/``ys``/``fs`` hold the accepted step times, the repaired states,
    and the drift at those states; ``at``/``at_many`` interpolate with the
    cubic Hermite matched to the stored derivatives.
    """

    generator_id: str
    horizon: float
    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    max_drift: float
    steps: int

    def at(self, t: float) -> np.ndarray:
        return self.at_many(np.array([t]))[0]

    def at_many(self, times) -> np.ndarray:
        times = np.clip(np.asarray(times, dtype=float), 0.0, self.horizon)
        right = np.clip(np.searchsorted(self.ts, times, side="right"), 1, len(self.ts) - 1)
        left = right - 1
        t0 = self.ts[left]
        h = self.ts[right] - t0
        theta = ((times - t0) / h)[:, None]
        y0, y1 = self.ys[left], self.ys[right]
        f0, f1 = self.fs[left], self.fs[right]
        h00 = (1.0 + 2.0 * theta) * (1.0 - theta) ** 2
        h10 = theta * (1.0 - theta) ** 2
        h01 = theta**2 * (3.0 - 2.0 * theta)
        h11 = theta**2 * (theta - 1.0)
        return h00 * y0 + h10 * h[:, None] * f0 + h01 * y1 + h11 * h[:, None] * f1


@dataclass(frozen=True)
class Trajectory:
    """States of the marginal flow sampled on a fixed time grid.

    Rows of ``states`` are kept exactly as produced so that audits can see
    them; use ``state`` or ``final`` for validated :class:`Distribution`
    views.
    """

    generator_id: str
    times: np.ndarray
    states: np.ndarray
    max_drift: float = 0.0

    def __len__(self) -> int:
        return self.times.size

    def state(self, index: int) -> Distribution:
        return Distribution(self.states[index])

    @property
    def final(self) -> Distribution:
        return Distribution(self.states[-1])

    def to_csv_text(self) -> str:
        """CSV with header ``t,m_1,...,m_S``; floats use repeatable %.17g."""
        out = io.StringIO()
        s = self.states.shape[1]
        out.write("t," + ",".join(f"m_{j + 1}" for j in range(s)) + "\n")
        for t, row in zip(self.times, self.states):
            out.write(f"{t:.17g}," + ",".join(f"{x:.17g}" for x in row) + "\n")
        return out.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(self.to_csv_text())


@dataclass(frozen=True)
class JumpPath:
    """One sampled trajectory of the underlying jump process.

    States are 0-based in memory; CSV output labels them 1-based to match
    the ``m_j`` trajectory columns.
    """

    generator_id: str
    seed: int
    horizon: float
    initial_state: int
    jump_times: np.ndarray
    states_visited: np.ndarray

    @property
    def jump_count(self) -> int:
        return self.jump_times.size

    def state_at(self, t: float) -> int:
        if t < 0 or t > self.horizon:
            raise ValueError(f"time {t!r} outside [0, {self.horizon!r}]")
        idx = int(np.searchsorted(self.jump_times, t, side="right"))
        if idx == 0:
            return int(self.initial_state)
        return int(self.states_visited[idx - 1])

    def occupation_time(self, state: int) -> float:
        """Total time spent in ``state`` over [0, horizon]."""
        edges = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        holders = np.concatenate(([self.initial_state], self.states_visited))
        return float(np.diff(edges)[holders == state].sum())

    def to_csv_text(self) -> str:
        out = io.StringIO()
        out.write("t,state\n")
        out.write(f"{0.0:.17g},{self.initial_state + 1}\n")
        for t, s in zip(self.jump_times, self.states_visited):
            out.write(f"{t:.17g},{int(s) + 1}\n")
        return out.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(self.to_csv_text())


def _as_state(m) -> np.ndarray:
    if isinstance(m, Distribution):
        return m.probs.copy()
    return Distribution(m).probs.copy()


def integrate_flow(
    spec: GeneratorSpec,
    m0,
    horizon: float,
    controls: IntegratorControls | None = None,
) -> Flow:
    """Integrate the marginal flow from ``m0`` over [0, horizon].

    Adaptive Dormand-Prince 5(4): the error estimate uses the embedded
    fourth-order weights, acceptance is against rtol/atol mixed per
    component, and each accepted state is projected back onto the simplex
    (the largest repaired drift is reported on the returned flow).
    """
    controls = controls or IntegratorControls()
    if not (0.0 < horizon <= MAX_HORIZON):
        raise ValueError(f"horizon must lie in (0, {MAX_HORIZON:g}], got {horizon!r}")
    spec.require_valid()
    y = _as_state(m0)
    f = spec.drift(y)
    ts = [0.0]
    ys = [y]
    fs = [f]
    max_drift = 0.0
    t = 0.0
    h = min(horizon, 0.01 / (1.0 + float(np.max(np.abs(f)))))
    steps = 0
    stages = np.empty((7, y.size))
    while t < horizon:
        if steps >= controls.max_steps:
            raise IntegrationDivergedError(
                f"no convergence within {controls.max_steps} steps at t = {t!r}"
            )
        final_step = t + h >= horizon
        if final_step:
            h = horizon - t
        stages[0] = f
        for i in range(1, 6):
            yi = y + h * (_DP_A_ROWS[i] @ stages[:i])
            stages[i] = spec.drift(yi)
        y5 = y + h * (_DP_B5 @ stages[:6])
        stages[6] = spec.drift(y5)
        y4 = y + h * (_DP_B4 @ stages[:7])
        scale = controls.atol + controls.rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean(((y5 - y4) / scale) ** 2)))
        if err <= 1.0:
            t = horizon if final_step else t + h
            y, drift = _project_array(y5)
            max_drift = max(max_drift, drift)
            f = spec.drift(y)
            ts.append(t)
            ys.append(y)
            fs.append(f)
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
        else:
            factor = max(0.2, min(1.0, 0.9 * err**-0.2))
        h *= factor
        if h < 1e-14 * max(1.0, horizon):
            raise IntegrationDivergedError(f"step size underflow at t = {t!r}")
        steps += 1
    return Flow(
        generator_id=spec.generator_id,
        horizon=float(horizon),
        ts=np.array(ts),
        ys=np.array(ys),
        fs=np.array(fs),
        max_drift=max_drift,
        steps=steps,
    )


def _sample_times(horizon: float, sample_every: float | None) -> np.ndarray:
    if sample_every is None:
        sample_every = horizon / 1000.0
    count = int(np.floor(horizon / sample_every + 1e-9))
    times = np.arange(count + 1) * sample_every
    if times[-1] < horizon * (1.0 - 1e-12):
        times = np.append(times, horizon)
    else:
        times[-1] = horizon
    return times


def evolve(
    spec: GeneratorSpec,
    m0,
    horizon: float,
    controls: IntegratorControls | None = None,
) -> Trajectory:
    """Marginal flow sampled every ``controls.sample_every`` (default horizon/1000)."""
    controls = controls or IntegratorControls()
    flow = integrate_flow(spec, m0, horizon, controls)
    times = _sample_times(horizon, controls.sample_every)
    states = flow.at_many(times)
    for n in range(states.shape[0]):
        states[n], _ = _project_array(states[n])
    states.flags.writeable = False
    times.flags.writeable = False
    return Trajectory(
        generator_id=spec.generator_id,
        times=times,
        states=states,
        max_drift=flow.max_drift,
    )


@dataclass(frozen=True)
class AuditFinding:
    """One invariance failure at a sampled trajectory state."""

    index: int
    time: float
    message: str


@dataclass(frozen=True)
class AuditReport:
    """Outcome of checking a trajectory against simplex invariance.

    ``clean`` means every sampled state is on the simplex (within
    integrator-noise tolerances) and the drift at that state lies in the
    tangent cone, so the flow never tried to leave.
    """

    clean: bool
    states_checked: int
    max_drift_before_repair: float
    worst_negative_entry: float
    worst_mass_defect: float
    min_component: float
    findings: tuple[AuditFinding, ...]


def flow_invariance_audit(trajectory: Trajectory, spec: GeneratorSpec) -> AuditReport:
    """Audit every sampled state of ``trajectory`` for simplex invariance.

    Checks per state: entries at least -``TOL_RENORMALIZE``, mass within
    ``TOL_RENORMALIZE`` of one, and drift membership in the tangent cone at
    that state.
    """
    states = np.asarray(trajectory.states, dtype=float)
    findings = []
    worst_negative = float(states.min())
    mass_defects = np.abs(states.sum(axis=1) - 1.0)
    drifts = spec.drift_batch(states)
    for n in range(states.shape[0]):
        t = float(trajectory.times[n])
        row = states[n]
        ok_entries = float(row.min()) >= -TOL_RENORMALIZE
        ok_mass = float(mass_defects[n]) <= TOL_RENORMALIZE
        if not ok_entries:
            findings.append(AuditFinding(n, t, f"entry {float(row.min()):.6e} below -{TOL_RENORMALIZE:g}"))
        if not ok_mass:
            findings.append(AuditFinding(n, t, f"mass off by {float(mass_defects[n]):.6e}"))
        if ok_entries and ok_mass and not _tangent_ok(np.maximum(row, 0.0), drifts[n]):
            findings.append(AuditFinding(n, t, "drift leaves the tangent cone"))
    return AuditReport(
        clean=not findings,
        states_checked=states.shape[0],
        max_drift_before_repair=float(trajectory.max_drift),
        worst_negative_entry=min(worst_negative, 0.0),
        worst_mass_defect=float(mass_defects.max()),
        min_component=worst_negative,
        findings=tuple(findings),
    )


_THINNING_CACHE: dict[int, tuple[GeneratorSpec, float]] = {}


def thinning_bound(spec: GeneratorSpec) -> float:
    """Dominating jump rate: 1.1 * max exit rate over a resolution-50 grid."""
    cached = _THINNING_CACHE.get(id(spec))
    if cached is not None and cached[0] is spec:
        return cached[1]
    grid = SimplexGrid(spec.dimension, THINNING_GRID_RESOLUTION)
    q = spec.rates_batch(grid.array)
    idx = np.arange(spec.dimension)
    bound = float(THINNING_HEADROOM * np.max(-q[:, idx, idx])) if spec.dimension > 1 else 0.0
    bound = max(bound, 0.0)
    _THINNING_CACHE[id(spec)] = (spec, bound)
    return bound


def sample_path(
    spec: GeneratorSpec,
    m0,
    initial_state: int | None = None,
    horizon: float = 1.0,
    seed: int = 0,
    controls: IntegratorControls | None = None,
    flow: Flow | None = None,
) -> JumpPath:
    """Sample one jump path of the chain driven by the marginal flow.

    Candidate jump times come from a Poisson clock at the dominating rate
    ``thinning_bound(spec)`` and are accepted with probability
    (exit rate at the current state under Q(m(t))) / bound; accepted jumps
    pick the target in proportion to the off-diagonal rates.  If the exit
    rate is ever observed above the bound, the whole path restarts from the
    same seed with the bound doubled.  ``initial_state`` is 0-based; None
    draws it from ``m0``.  Passing a precomputed ``flow`` (covering
    ``horizon`` for the same generator) skips re-integration.
    """
    if not (0.0 < horizon <= MAX_HORIZON):
        raise ValueError(f"horizon must lie in (0, {MAX_HORIZON:g}], got {horizon!r}")
    m0_arr = _as_state(m0)
    s = spec.dimension
    if initial_state is not None and not (0 <= int(initial_state) < s):
        raise ValueError(f"initial_state must lie in 0..{s - 1}, got {initial_state!r}")
    spec.require_valid()
    if flow is None:
        flow = integrate_flow(spec, m0_arr, horizon, controls)
    else:
        if flow.generator_id != spec.generator_id:
            raise ValueError("flow was integrated for a different generator")
        if flow.horizon < horizon:
            raise ValueError(f"flow horizon {flow.horizon!r} is shorter than {horizon!r}")
    base = thinning_bound(spec)
    for doubling in range(64):
        bound = base * (2.0**doubling)
        rng = np.random.default_rng(seed)
        if initial_state is None:
            start = int(np.searchsorted(np.cumsum(m0_arr), rng.random(), side="right"))
            start = min(start, s - 1)
        else:
            start = int(initial_state)
        if bound == 0.0:
            return JumpPath(
                generator_id=spec.generator_id,
                seed=seed,
                horizon=float(horizon),
                initial_state=start,
                jump_times=np.empty(0),
                states_visited=np.empty(0, dtype=int),
            )
        path = _thin_path(spec, flow, start, horizon, bound, rng)
        if path is not None:
            times, visited = path
            return JumpPath(
                generator_id=spec.generator_id,
                seed=seed,
                horizon=float(horizon),
                initial_state=start,
                jump_times=times,
                states_visited=visited,
            )
    raise IntegrationDivergedError("thinning bound kept being exceeded after 64 doublings")


def _thin_path(spec, flow, start, horizon, bound, rng):
    """One thinning attempt; None means the bound was exceeded."""
    chunks = []
    total = 0.0
    while total < horizon:
        block = rng.exponential(1.0 / bound, size=256)
        chunks.append(block)
        total += float(block.sum())
    proposals = np.cumsum(np.concatenate(chunks))
    proposals = proposals[proposals <= horizon]
    n = proposals.size
    accept_u = rng.random(n)
    target_u = rng.random(n)
    if n == 0:
        return np.empty(0), np.empty(0, dtype=int)
    # Interpolated flow states can undershoot zero by rounding noise only;
    # clamping is enough here, rates never see more than that.
    marginals = np.maximum(flow.at_many(proposals), 0.0)
    q = spec.rates_batch(marginals)
    s = spec.dimension
    idx = np.arange(s)
    exits = -q[:, idx, idx]
    weights = np.maximum(q, 0.0)
    weights[:, idx, idx] = 0.0
    cum = np.cumsum(weights, axis=2)
    times = []
    visited = []
    current = start
    for k in range(n):
        lam = exits[k, current]
        if lam > bound:
            return None
        if lam <= 0.0 or accept_u[k] * bound >= lam:
            continue
        row = cum[k, current]
        if row[-1] <= 0.0:
            continue
        target = int(np.searchsorted(row, target_u[k] * row[-1], side="right"))
        target = min(target, s - 1)
        if target == current:
            continue
        times.append(float(proposals[k]))
        visited.append(target)
        current = target
    return np.array(times), np.array(visited, dtype=int)
