"""Frozen-chain stationary distributions and invariant-distribution search.

A distribution m is invariant when its own drift vanishes: m^T Q(m) = 0.
The search runs a damped fixed-point iteration on m -> x(m), where x(m) is
the stationary distribution of the frozen chain Q(m), falls back to riding
the marginal flow when that iteration cycles, switches to a damped Newton
method on the chart drift when the frozen chain is reducible, and always
finishes with a Newton polish.  Results from all seeds are clustered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .errors import NumericalError, ReducibleGeneratorError
from .generator import RATE_FLOOR, GeneratorSpec, _strongly_connected, irreducible_at
from .semigroup import IntegratorControls, integrate_flow
from .simplex import Distribution, SimplexGrid, _project_array

TOL_INVARIANT = 1e-10
FROZEN_RESIDUAL_TOL = 1e-12
CLUSTER_RADIUS = 1e-6
INTERIOR_TOL = 1e-8
POLISH_TARGET = 1e-13


@dataclass(frozen=True)
class SearchControls:
    """Knobs for the invariant-distribution search."""

    max_iterations: int = 200
    damping: float = 0.5
    accept_tol: float = TOL_INVARIANT
    evolve_horizon: float = 50.0
    newton_steps: int = 40

    def __post_init__(self) -> None:
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.accept_tol <= 0:
            raise ValueError("accept_tol must be positive")


@dataclass(frozen=True)
class StationaryResult:
    """One invariant distribution found by the search."""

    point: Distribution
    residual: float
    classification: str
    basin_hint: tuple[Distribution, ...] = ()


@dataclass(frozen=True)
class StationarySet:
    """All invariant distributions found, clustered and sorted."""

    results: tuple[StationaryResult, ...]
    seed_count: int
    failed_seeds: int
    tolerance: float

    def __len__(self) -> int:
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    @property
    def points(self) -> tuple[Distribution, ...]:
        return tuple(r.point for r in self.results)

    def to_json_text(self) -> str:
        doc = {
            "invariant_distributions": [
                {
                    "point": [float(x) for x in r.point.probs],
                    "residual": r.residual,
                    "classification": r.classification,
                    "converged_seeds": len(r.basin_hint),
                }
                for r in self.results
            ],
            "seed_count": self.seed_count,
            "failed_seeds": self.failed_seeds,
            "tolerance": self.tolerance,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json_text())


def residual(spec: GeneratorSpec, m) -> float:
    """Invariance defect ||m^T Q(m)||_inf."""
    arr = m.probs if isinstance(m, Distribution) else np.asarray(m, dtype=float)
    return float(np.max(np.abs(spec.drift(arr))))


def frozen_stationary(spec: GeneratorSpec, m) -> Distribution:
    """Stationary distribution of the frozen chain Q(m).

    Requires irreducibility at ``m`` (otherwise the stationary set is not a
    single point and :class:`ReducibleGeneratorError` is raised).  The
    linear solve must reproduce x Q(m) = 0 to within 1e-12.
    """
    arr = m.probs if isinstance(m, Distribution) else np.asarray(m, dtype=float)
    if not irreducible_at(spec, arr):
        raise ReducibleGeneratorError(
            f"{spec.describe()} is reducible at {tuple(float(x) for x in arr)}"
        )
    q = spec.rates(arr)
    x = _frozen_solve(q)
    defect = float(np.max(np.abs(x @ q)))
    if defect > FROZEN_RESIDUAL_TOL:
        raise NumericalError(
            f"frozen stationary solve left residual {defect:.3e} > {FROZEN_RESIDUAL_TOL:g}"
        )
    return Distribution(x)


def _frozen_solve(q: np.ndarray) -> np.ndarray:
    """Least-squares solve of x Q = 0, sum(x) = 1 via the augmented system."""
    s = q.shape[0]
    a = np.vstack([q.T, np.ones((1, s))])
    b = np.zeros(s + 1)
    b[s] = 1.0
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x


def find_invariant(
    spec: GeneratorSpec,
    seeds,
    controls: SearchControls | None = None,
) -> StationarySet:
    """Search for every invariant distribution reachable from ``seeds``.

    ``seeds`` is a :class:`SimplexGrid` or an iterable of distributions.
    Seed runs are independent; the environment variable ``NLMC_THREADS``
    lets them execute concurrently without changing the result.  Converged
    points closer than ``CLUSTER_RADIUS`` in max norm are merged; each
    cluster records the seeds that reached it.
    """
    controls = controls or SearchControls()
    spec.require_valid()
    if isinstance(seeds, SimplexGrid):
        seed_arrays = [row for row in seeds.array]
    else:
        seed_arrays = [
            s.probs if isinstance(s, Distribution) else Distribution(s).probs for s in seeds
        ]
    if not seed_arrays:
        raise ValueError("at least one seed is required")
    for arr in seed_arrays:
        if arr.shape != (spec.dimension,):
            raise ValueError(
                f"seed of shape {arr.shape} does not match generator dimension {spec.dimension}"
            )

    outcomes = parallel_map(lambda arr: _search_from(spec, arr, controls), seed_arrays)

    clusters: list[list] = []
    failed = 0
    for seed_arr, found in zip(seed_arrays, outcomes):
        if found is None:
            failed += 1
            continue
        for cluster in clusters:
            if float(np.max(np.abs(cluster[0] - found))) <= CLUSTER_RADIUS:
                cluster[1].append(seed_arr)
                break
        else:
            clusters.append([found, [seed_arr]])

    results = []
    for rep, hint_seeds in clusters:
        point = Distribution(rep)
        res = residual(spec, point)
        classification = "interior" if float(point.probs.min()) > INTERIOR_TOL else "boundary"
        results.append(
            StationaryResult(
                point=point,
                residual=res,
                classification=classification,
                basin_hint=tuple(Distribution(s) for s in hint_seeds),
            )
        )
    results.sort(key=lambda r: tuple(r.point.probs))
    return StationarySet(
        results=tuple(results),
        seed_count=len(seed_arrays),
        failed_seeds=failed,
        tolerance=controls.accept_tol,
    )


def _search_from(spec: GeneratorSpec, seed: np.ndarray, c: SearchControls) -> np.ndarray | None:
    m = np.array(seed, dtype=float)
    q = spec.rates(m)
    r = float(np.max(np.abs(m @ q)))
    alpha = c.damping
    fell_back = False
    for _ in range(c.max_iterations):
        if r <= c.accept_tol:
            break
        if not _strongly_connected(q > RATE_FLOOR):
            return _newton_polish(spec, m, c)
        x = _frozen_solve(q)
        if not np.all(np.isfinite(x)):
            return None
        candidate = (1.0 - alpha) * m + alpha * x
        q_cand = spec.rates(candidate)
        r_cand = float(np.max(np.abs(candidate @ q_cand)))
        if r_cand < r:
            m, q, r = candidate, q_cand, r_cand
            alpha = min(1.0, 1.25 * alpha)
            continue
        alpha *= 0.5
        if alpha >= 1e-3:
            continue
        if fell_back:
            break
        # The iteration is cycling around a repeller; ride the flow instead.
        m = _flow_tail(spec, m, c.evolve_horizon)
        q = spec.rates(m)
        r = float(np.max(np.abs(m @ q)))
        alpha = c.damping
        fell_back = True
    return _newton_polish(spec, m, c)


def _residual_raw(spec: GeneratorSpec, arr: np.ndarray) -> float:
    return float(np.max(np.abs(spec.drift(arr))))


def _flow_tail(spec: GeneratorSpec, arr: np.ndarray, horizon: float) -> np.ndarray:
    projected, _ = _project_array(arr)
    flow = integrate_flow(spec, projected, horizon, IntegratorControls(rtol=1e-10, atol=1e-12))
    return flow.ys[-1]


def _newton_polish(spec: GeneratorSpec, arr: np.ndarray, c: SearchControls) -> np.ndarray | None:
    """Damped Newton on the chart drift; None when it fails to meet tolerance.

    Works on u = (m_1, ..., m_{S-1}) with m_S = 1 - sum(u); the chart drift
    is the first S-1 components of f, which vanish together with f itself
    because f always sums to zero.
    """
    s = spec.dimension
    if s == 1:
        return np.array([1.0])
    u = np.array(arr[: s - 1], dtype=float)

    def chart_drift(uv: np.ndarray) -> np.ndarray:
        full = np.append(uv, 1.0 - uv.sum())
        return spec.drift(full)[: s - 1]

    g = chart_drift(u)
    for _ in range(c.newton_steps):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= POLISH_TARGET:
            break
        step = 1e-6 * (1.0 + float(np.linalg.norm(u)))
        jac = np.empty((s - 1, s - 1))
        for b in range(s - 1):
            up = u.copy()
            up[b] += step
            um = u.copy()
            um[b] -= step
            jac[:, b] = (chart_drift(up) - chart_drift(um)) / (2.0 * step)
        try:
            delta = np.linalg.solve(jac, g)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam > 1e-8:
            trial = u - lam * delta
            if float(np.max(np.abs(trial))) > 10.0:
                lam *= 0.5
                continue
            gt = chart_drift(trial)
            if float(np.max(np.abs(gt))) < gnorm:
                u = trial
                g = gt
                break
            lam *= 0.5
        else:
            break
    candidate = np.append(u, 1.0 - u.sum())
    if float(candidate.min()) < -1e-9 or not np.all(np.isfinite(candidate)):
        return None
    candidate, _ = _project_array(candidate)
    if _residual_raw(spec, candidate) > c.accept_tol:
        return None
    return candidate
