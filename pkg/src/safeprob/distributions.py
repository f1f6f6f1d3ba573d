"""Distribution queries: assembles masked convection-diffusion problems
from a (system, barrier, policy) triple and tabulates the four safety
distributions.

The solves run directly on the state space: for a level ``l`` the
invariance/exit problems live on ``{x : phi(x) >= l}`` and the
convergence/entry problems on ``{x : phi(x) < l}``, with the complement
pinned to the distribution's boundary value.  Queries are reported at the
consistent augmented coordinate ``z = [phi(x), x]``; values of the
augmented-space problem off that manifold are not exposed.

The four kinds share one pipeline and differ only in mask side, Dirichlet
value, and initial indicator:

    invariance_ccdf   P(min phi over [0,T] >= l)   super side, pinned 0
    exit_cdf          P(first time phi <= l  <= t) super side, pinned 1
    convergence_cdf   P(max phi over [0,T] < l)    sub side,   pinned 0
    entry_cdf         P(first time phi >= l <= t)  sub side,   pinned 1
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .errors import DataError, InfeasibilityError, SafeProbError
from .pde_engine import (
    DEFAULT_NODE_CAP,
    MIN_CELLS,
    FieldSeries,
    GridSpec,
    IbvpSpec,
    SensitivityProbe,
    build_mask,
    has_truncation_faces,
    solve_ibvp,
)
from .system_model import BarrierProblem, ControlSystem, Policy, closed_loop_control_batch


class SafeProbWarning(UserWarning):
    """Non-fatal solver notices (wrong-side queries, trivial masks)."""


KINDS = ("invariance_ccdf", "exit_cdf", "convergence_cdf", "entry_cdf")

# kind -> (mask side, Dirichlet value).  The initial field is the mask
# indicator for pinned-0 problems and its complement for pinned-1; the
# Dirichlet value doubles as the exact result on the wrong side of the
# level set.
_KIND_TABLE = {
    "invariance_ccdf": ("super", 0.0),
    "exit_cdf": ("super", 1.0),
    "convergence_cdf": ("sub", 0.0),
    "entry_cdf": ("sub", 1.0),
}

# Kinds whose tabulated curve must not decrease in time / must not
# increase in time.
_NONDECREASING = ("exit_cdf", "entry_cdf")
_NONINCREASING = ("invariance_ccdf", "convergence_cdf")

RANGE_TOL = 1e-8


@dataclass(frozen=True)
class NumericsConfig:
    """Discretization controls for a distribution query.

    ``box_lo``/``box_hi``/``cells`` describe the truncation box; a halo of
    ``halo_cells`` extra cells is added on every side so the Dirichlet
    region bordering the level set is represented by at least one node
    layer.  The boundary probe re-solves coarsely on the original and a
    doubled box to expose truncation bias.
    """

    box_lo: tuple
    box_hi: tuple
    cells: tuple
    dt: float
    theta: float = 1.0
    halo_cells: int = 1
    linear_rtol: float = 1e-10
    linear_maxiter: int = 10_000
    boundary_probe: bool = True
    probe_tolerance: float = 1e-3
    probe_coarsen: int = 2
    mollify_initial: bool = False
    node_cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        object.__setattr__(self, "box_lo", tuple(float(v) for v in self.box_lo))
        object.__setattr__(self, "box_hi", tuple(float(v) for v in self.box_hi))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        if self.dt <= 0:
            raise DataError("dt must be positive")
        if self.halo_cells < 1:
            raise DataError("halo_cells must be >= 1")


@dataclass(frozen=True)
class QuerySpec:
    """One batch query: initial states, level, horizon, tabulation times."""

    states: np.ndarray
    horizon: float
    numerics: NumericsConfig
    level: float | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.horizon < 0:
            raise DataError("horizon must be >= 0")
        lo = np.asarray(self.numerics.box_lo)
        hi = np.asarray(self.numerics.box_hi)
        if states.shape[1] != lo.shape[0]:
            raise DataError(f"states have dimension {states.shape[1]}, box has {lo.shape[0]}")
        if np.any(states < lo) or np.any(states > hi):
            raise DataError("query states must lie inside the truncation box")
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if t.ndim != 1 or np.any(t < 0) or np.any(t > self.horizon + 1e-12):
                raise DataError("tabulation times must lie in [0, horizon]")
            object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", states)

    def resolved_level(self, bar: BarrierProblem) -> float:
        return bar.level if self.level is None else float(self.level)

    def resolved_times(self) -> np.ndarray:
        if self.times is not None:
            return np.unique(np.append(self.times, [0.0, self.horizon]))
        if self.horizon == 0.0:
            return np.array([0.0])
        return np.linspace(0.0, self.horizon, 101)


@dataclass
class DistributionResult:
    """Tabulated distribution values over (state, time) with diagnostics."""

    kind: str
    states: np.ndarray
    z: np.ndarray
    times: np.ndarray
    level: float
    values: np.ndarray
    diagnostics: dict
    provenance: dict
    series: FieldSeries | None = None

    def __post_init__(self):
        if self.values.min() < -RANGE_TOL or self.values.max() > 1.0 + RANGE_TOL:
            raise SafeProbError(
                f"probabilities out of range: [{self.values.min()}, {self.values.max()}]")

    def curve(self, state_index: int = 0) -> np.ndarray:
        return self.values[state_index]


def complementary_kind(kind: str) -> str:
    """The kind whose values sum with this one to 1 pointwise."""
    pairs = {"invariance_ccdf": "exit_cdf", "exit_cdf": "invariance_ccdf",
             "convergence_cdf": "entry_cdf", "entry_cdf": "convergence_cdf"}
    return pairs[kind]


def monotonicity_violation(result: DistributionResult) -> float:
    """Largest wrong-direction increment along the time axis (0 if clean)."""
    diffs = np.diff(result.values, axis=1)
    if result.kind in _NONDECREASING:
        worst = -diffs.min() if diffs.size else 0.0
    else:
        worst = diffs.max() if diffs.size else 0.0
    return float(max(worst, 0.0))


def _padded_grid(numerics: NumericsConfig) -> GridSpec:
    lo, hi, cells = [], [], []
    for a in range(len(numerics.cells)):
        h = (numerics.box_hi[a] - numerics.box_lo[a]) / numerics.cells[a]
        lo.append(numerics.box_lo[a] - numerics.halo_cells * h)
        hi.append(numerics.box_hi[a] + numerics.halo_cells * h)
        cells.append(numerics.cells[a] + 2 * numerics.halo_cells)
    return GridSpec(tuple(lo), tuple(hi), tuple(cells), node_cap=numerics.node_cap)


def _assemble(sys: ControlSystem, bar: BarrierProblem, policy: Policy,
              grid: GridSpec, level: float, side: str, dirichlet: float,
              horizon: float, dt: float, numerics: NumericsConfig) -> IbvpSpec:
    mask = build_mask(grid, bar, side, level=level)
    nodes = grid.nodes()
    n = grid.ndim
    sig = sys.sigma_at(nodes)
    diffusion = np.einsum("bik,bjk->bij", sig, sig).reshape(grid.shape + (n, n))
    convection = np.zeros((grid.n_nodes, n))
    interior_idx = np.flatnonzero(mask.ravel())
    if interior_idx.size:
        pts = nodes[interior_idx]
        U, infeasible = closed_loop_control_batch(policy, sys, bar, pts)
        if np.any(infeasible):
            raise InfeasibilityError(
                pts[np.argmax(infeasible)],
                "policy infeasible at an interior grid node; refine the grid or adjust "
                f"the policy (state {pts[np.argmax(infeasible)].tolist()})")
        convection[interior_idx] = sys.f_at(pts) + np.einsum("bim,bm->bi", sys.g_at(pts), U)
    initial = np.where(mask, 1.0, 0.0) if dirichlet == 0.0 else np.where(mask, 0.0, 1.0)
    return IbvpSpec(grid=grid, interior_mask=mask,
                    convection=convection.reshape(grid.shape + (n,)),
                    diffusion=diffusion, dirichlet_value=dirichlet,
                    initial_field=initial, horizon=horizon, dt=dt,
                    theta=numerics.theta, mollify_initial=numerics.mollify_initial)


def _probe_specs(sys, bar, policy, level, side, dirichlet, horizon,
                 numerics: NumericsConfig, spec: IbvpSpec) -> SensitivityProbe | None:
    faces = has_truncation_faces(spec.grid, spec.interior_mask)
    if not faces:
        return None
    c = numerics.probe_coarsen
    coarse_cells = tuple(max(MIN_CELLS, cells // c) for cells in spec.grid.cells)
    coarse_grid = GridSpec(spec.grid.lo, spec.grid.hi, coarse_cells,
                           node_cap=numerics.node_cap)
    lo = list(spec.grid.lo)
    hi = list(spec.grid.hi)
    dcells = list(coarse_cells)
    for a in range(spec.grid.ndim):
        # Extend each truncated face outward by one full box width at the
        # probe's own spacing.
        width = spec.grid.hi[a] - spec.grid.lo[a]
        if (a, -1) in faces:
            lo[a] -= width
            dcells[a] += coarse_cells[a]
        if (a, +1) in faces:
            hi[a] += width
            dcells[a] += coarse_cells[a]
    doubled_grid = GridSpec(tuple(lo), tuple(hi), tuple(dcells), node_cap=numerics.node_cap)
    dt = numerics.dt * c
    coarse = _assemble(sys, bar, policy, coarse_grid, level, side, dirichlet,
                       horizon, dt, numerics)
    doubled = _assemble(sys, bar, policy, doubled_grid, level, side, dirichlet,
                        horizon, dt, numerics)
    return SensitivityProbe(coarse=coarse, doubled=doubled, points=np.empty((0,)),
                            tolerance=numerics.probe_tolerance)


def _query_hash(kind: str, q: QuerySpec, level: float) -> str:
    payload = {
        "kind": kind,
        "level": level,
        "horizon": q.horizon,
        "states": np.atleast_2d(q.states).tolist(),
        "times": None if q.times is None else np.asarray(q.times).tolist(),
        "numerics": {
            "box_lo": q.numerics.box_lo, "box_hi": q.numerics.box_hi,
            "cells": q.numerics.cells, "dt": q.numerics.dt, "theta": q.numerics.theta,
            "halo_cells": q.numerics.halo_cells,
        },
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _solve_kind(kind: str, sys: ControlSystem, bar: BarrierProblem, policy: Policy,
                q: QuerySpec, config_hash: str | None = None) -> DistributionResult:
    side, dirichlet = _KIND_TABLE[kind]
    level = q.resolved_level(bar)
    states = q.states
    phi0 = np.atleast_1d(np.asarray(bar.phi_at(states), dtype=float))
    on_side = phi0 >= level if side == "super" else phi0 < level
    if not np.all(on_side):
        bad = states[~on_side][0]
        warnings.warn(
            f"{kind}: state {bad.tolist()} lies on the wrong side of level {level}; "
            f"the boundary condition fixes its value to {dirichlet}", SafeProbWarning,
            stacklevel=3)

    grid = _padded_grid(q.numerics)
    spec = _assemble(sys, bar, policy, grid, level, side, dirichlet,
                     q.horizon, q.numerics.dt, q.numerics)
    if spec.interior_mask.all() or not spec.interior_mask.any():
        warnings.warn(
            f"{kind}: the level set does not intersect the solve box; the mask is "
            "trivial and the result degenerates to its initial/boundary data",
            SafeProbWarning, stacklevel=3)

    probe = None
    if q.numerics.boundary_probe and q.horizon > 0:
        probe = _probe_specs(sys, bar, policy, level, side, dirichlet,
                             q.horizon, q.numerics, spec)
        if probe is not None:
            pts = states[on_side] if np.any(on_side) else states
            probe = replace(probe, points=pts)

    series = solve_ibvp(spec, snapshot_times=q.resolved_times(),
                        sensitivity_probe=probe,
                        linear_rtol=q.numerics.linear_rtol,
                        maxiter=q.numerics.linear_maxiter)

    values = np.empty((states.shape[0], len(series.times)))
    inside = on_side
    for j, t in enumerate(series.times):
        if t == 0.0:
            # The initial data is exact at t=0: the indicator of the
            # query's own side for pinned-0 kinds, of the complement for
            # pinned-1 kinds.
            values[:, j] = np.where(inside, 1.0 - dirichlet, dirichlet)
        else:
            col = series.sample(states, j)
            values[:, j] = np.where(inside, col, dirichlet)

    diagnostics = series.diagnostics.as_dict()
    diagnostics.update({
        "solve_box_lo": list(grid.lo), "solve_box_hi": list(grid.hi),
        "solve_cells": list(grid.cells),
        "interior_nodes": int(spec.interior_mask.sum()),
        "wrong_side_states": int(np.count_nonzero(~on_side)),
    })
    provenance = {
        "solver_version": __version__,
        "query_hash": _query_hash(kind, q, level),
    }
    if config_hash is not None:
        provenance["config_hash"] = config_hash
    z = np.concatenate([phi0[:, None], states], axis=1)
    return DistributionResult(kind=kind, states=states, z=z,
                              times=np.asarray(series.times), level=level,
                              values=values, diagnostics=diagnostics,
                              provenance=provenance, series=series)


def invariance_ccdf(sys: ControlSystem, bar: BarrierProblem, policy: Policy,
                    q: QuerySpec, config_hash: str | None = None) -> DistributionResult:
    """P(min of phi over [0,T] >= level) tabulated over (state, T)."""
    return _solve_kind("invariance_ccdf", sys, bar, policy, q, config_hash)


def exit_time_cdf(sys: ControlSystem, bar: BarrierProblem, policy: Policy,
                  q: QuerySpec, config_hash: str | None = None) -> DistributionResult:
    """P(first time phi drops to the level <= t) tabulated over (state, t)."""
    return _solve_kind("exit_cdf", sys, bar, policy, q, config_hash)


def convergence_cdf(sys: ControlSystem, bar: BarrierProblem, policy: Policy,
                    q: QuerySpec, config_hash: str | None = None) -> DistributionResult:
    """P(max of phi over [0,T] < level) tabulated over (state, T)."""
    return _solve_kind("convergence_cdf", sys, bar, policy, q, config_hash)


def entry_time_cdf(sys: ControlSystem, bar: BarrierProblem, policy: Policy,
                   q: QuerySpec, config_hash: str | None = None) -> DistributionResult:
    """P(first time phi rises to the level <= t) tabulated over (state, t)."""
    return _solve_kind("entry_cdf", sys, bar, policy, q, config_hash)


def solve_distribution(kind: str, sys: ControlSystem, bar: BarrierProblem,
                       policy: Policy, q: QuerySpec,
                       config_hash: str | None = None) -> DistributionResult:
    """Dispatch by distribution kind."""
    if kind not in KINDS:
        raise DataError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")
    return _solve_kind(kind, sys, bar, policy, q, config_hash)


def event_time_cdf(result: DistributionResult) -> np.ndarray:
    """The first-passage CDF in time implied by the tabulated values.

    Exit/entry kinds are already CDFs; the running-extremum kinds are the
    survival functions of the matching passage time, so their complement
    is returned.
    """
    if result.kind in _NONDECREASING:
        return result.values
    return 1.0 - result.values


def summary_stats(result: DistributionResult, quantiles=(0.25, 0.5, 0.75),
                  monotone_tol: float = 1e-6) -> dict:
    """Quantiles, horizon-truncated mean, and tail mass per query state.

    The mean passage time integrates the survival function over the
    tabulated horizon by trapezoid and is a lower bound whenever mass
    remains beyond the horizon; that censored mass is reported alongside.
    """
    times = result.times
    cdf = event_time_cdf(result)
    slip = np.diff(cdf, axis=1)
    if slip.size and slip.min() < -monotone_tol:
        raise DataError(
            f"tabulation is not monotone (worst backward step {-slip.min():.3e})")
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0), axis=1)

    n_states = cdf.shape[0]
    q_out: dict = {}
    for q in quantiles:
        vals = np.full(n_states, np.nan)
        for i in range(n_states):
            row = cdf[i]
            if row[-1] >= q:
                j = int(np.searchsorted(row, q))
                if j == 0 or row[j] == q:
                    vals[i] = times[j]
                else:
                    t0, t1 = times[j - 1], times[j]
                    c0, c1 = row[j - 1], row[j]
                    vals[i] = t0 if c1 == c0 else t0 + (q - c0) * (t1 - t0) / (c1 - c0)
        q_out[q] = vals

    survival = 1.0 - cdf
    mean_lb = np.trapezoid(survival, times, axis=1) if len(times) > 1 \
        else np.zeros(n_states)
    censored = survival[:, -1]
    half_idx = int(np.searchsorted(times, times[-1] / 2.0))
    return {
        "kind": result.kind,
        "quantiles": q_out,
        "mean_time_lower_bound": mean_lb,
        "censored_mass": censored,
        "tail_probabilities": {
            "half_horizon": survival[:, min(half_idx, len(times) - 1)],
            "horizon": censored,
        },
    }
