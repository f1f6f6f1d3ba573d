"""Stochastic control system, barrier function, and safe-control policies.

The model is a controlled diffusion

    dX = (f(X) + g(X) U) dt + sigma(X) dW,    U = K(X),

together with a scalar barrier ``phi`` whose super-level set defines the
safe region.  This module builds the closed-loop control law K for the
supported policy kinds, the generator drift of ``phi``, and the augmented
dynamics of ``[phi(X), X]`` used by the distribution solvers.

Evaluators are plain callables on a single state ``x`` of shape ``(n,)``.
Setting ``vectorized=True`` on a model object declares that its callables
also accept stacked states of shape ``(B, n)`` and return outputs with a
leading batch axis; the batch helpers exploit that, and otherwise fall
back to a per-row loop.  Evaluators must be pure: repeated evaluation at
the same state must return identical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InfeasibilityError, ShapeError

# Below this squared norm the actuated direction L_g(phi) is treated as
# vanished, making a violated rate constraint infeasible.
_LG_FLOOR = 1e-24

# Step for finite-difference gradients/Hessians generated from phi alone.
FD_STEP = 1e-5

POLICY_KINDS = ("none", "zero_cbf", "gradient")


def _as_batch(x, n: int, name: str = "state") -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to shape (B, n); report whether the input was a single state."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ShapeError(f"{name} has shape {arr.shape}, expected ({n},)")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == n:
        return arr, False
    raise ShapeError(f"{name} has shape {arr.shape}, expected (B, {n})")


def _eval_batch(fn: Callable, X: np.ndarray, shape: tuple[int, ...],
                vectorized: bool, name: str) -> np.ndarray:
    """Evaluate ``fn`` on stacked states, returning shape (B,) + shape."""
    B = X.shape[0]
    if vectorized:
        out = np.asarray(fn(X), dtype=float)
        want = (B,) + shape
        if out.shape != want:
            raise ShapeError(f"{name} returned shape {out.shape} on a batch, expected {want}")
        return out
    out = np.empty((B,) + shape, dtype=float)
    for i in range(B):
        row = np.asarray(fn(X[i]), dtype=float)
        if shape == () and row.shape in ((), (1,)):
            row = row.reshape(())
        elif row.shape != shape:
            raise ShapeError(f"{name} returned shape {row.shape} at state {X[i].tolist()}, "
                             f"expected {shape}")
        out[i] = row
    return out


def fd_gradient(fn: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (float(fn(x + e)) - float(fn(x - e))) / (2.0 * step)
    return out


def fd_gradient_batch(fn: Callable, X: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradients of a batch-capable scalar function."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = []
    for i in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[i] = step
        cols.append((np.asarray(fn(X + e), dtype=float)
                     - np.asarray(fn(X - e), dtype=float)) / (2.0 * step))
    return np.stack(cols, axis=1)


def fd_hessian_batch(fn: Callable, X: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Symmetric finite-difference Hessians of a batch-capable scalar function."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    out = np.empty((X.shape[0], n, n))
    f0 = np.asarray(fn(X), dtype=float)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        out[:, i, i] = (np.asarray(fn(X + ei), dtype=float) - 2.0 * f0
                        + np.asarray(fn(X - ei), dtype=float)) / step**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            v = (np.asarray(fn(X + ei + ej), dtype=float)
                 - np.asarray(fn(X + ei - ej), dtype=float)
                 - np.asarray(fn(X - ei + ej), dtype=float)
                 + np.asarray(fn(X - ei - ej), dtype=float)) / (4.0 * step**2)
            out[:, i, j] = v
            out[:, j, i] = v
    return out


def fd_hessian(fn: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Symmetric central finite-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    out = np.empty((n, n))
    f0 = float(fn(x))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        out[i, i] = (float(fn(x + ei)) - 2.0 * f0 + float(fn(x - ei))) / step**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            v = (float(fn(x + ei + ej)) - float(fn(x + ei - ej))
                 - float(fn(x - ei + ej)) + float(fn(x - ei - ej))) / (4.0 * step**2)
            out[i, j] = v
            out[j, i] = v
    return out


@dataclass(frozen=True)
class ControlSystem:
    """Coefficients of the controlled SDE.

    ``f`` maps a state to the drift (n,), ``g`` to the actuation gain
    (n, m), and ``sigma`` to the diffusion (n, k).
    """

    n: int
    m: int
    k: int
    f: Callable
    g: Callable
    sigma: Callable
    vectorized: bool = False

    def __post_init__(self):
        for name in ("n", "m", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def f_at(self, X) -> np.ndarray:
        Xb, single = _as_batch(X, self.n)
        out = _eval_batch(self.f, Xb, (self.n,), self.vectorized, "f")
        return out[0] if single else out

    def g_at(self, X) -> np.ndarray:
        Xb, single = _as_batch(X, self.n)
        out = _eval_batch(self.g, Xb, (self.n, self.m), self.vectorized, "g")
        return out[0] if single else out

    def sigma_at(self, X) -> np.ndarray:
        Xb, single = _as_batch(X, self.n)
        out = _eval_batch(self.sigma, Xb, (self.n, self.k), self.vectorized, "sigma")
        return out[0] if single else out


@dataclass(frozen=True)
class BarrierProblem:
    """Barrier function with derivative evaluators and the level threshold.

    ``grad_phi``/``hess_phi`` may be omitted; central finite differences
    with step ``FD_STEP`` are substituted.  The super-level set
    ``{x : phi(x) >= level}`` is the safe region.
    """

    phi: Callable
    grad_phi: Callable | None = None
    hess_phi: Callable | None = None
    level: float = 0.0
    vectorized: bool = False

    def phi_at(self, X) -> np.ndarray | float:
        n = np.atleast_1d(np.asarray(X, dtype=float)).shape[-1]
        Xb, single = _as_batch(X, n)
        out = _eval_batch(self.phi, Xb, (), self.vectorized, "phi")
        return float(out[0]) if single else out

    def grad_at(self, X) -> np.ndarray:
        n = np.atleast_1d(np.asarray(X, dtype=float)).shape[-1]
        Xb, single = _as_batch(X, n)
        if self.grad_phi is None:
            if self.vectorized:
                out = fd_gradient_batch(self.phi, Xb)
            else:
                out = np.stack([fd_gradient(self.phi, x) for x in Xb])
        else:
            out = _eval_batch(self.grad_phi, Xb, (n,), self.vectorized, "grad_phi")
        return out[0] if single else out

    def hess_at(self, X) -> np.ndarray:
        n = np.atleast_1d(np.asarray(X, dtype=float)).shape[-1]
        Xb, single = _as_batch(X, n)
        if self.hess_phi is None:
            if self.vectorized:
                out = fd_hessian_batch(self.phi, Xb)
            else:
                out = np.stack([fd_hessian(self.phi, x) for x in Xb])
        else:
            out = _eval_batch(self.hess_phi, Xb, (n, n), self.vectorized, "hess_phi")
        return out[0] if single else out


def linear_rate(gain: float) -> Callable:
    """Linear rate function alpha(s) = gain * s, gain > 0."""
    if gain <= 0:
        raise ValueError("rate gain must be positive")

    def alpha(s):
        return gain * np.asarray(s, dtype=float)

    return alpha


@dataclass(frozen=True)
class Policy:
    """Closed-loop control policy.

    ``kind`` selects the law: ``none`` passes the nominal through,
    ``zero_cbf`` applies the minimum-norm rate-constraint filter, and
    ``gradient`` adds ``c(x) * L_g(phi)^T`` to the nominal.  ``alpha``
    defaults to the linear rate s -> s.
    """

    nominal: Callable
    kind: str = "none"
    alpha: Callable | None = None
    c: Callable | None = None
    vectorized: bool = False

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "gradient" and self.c is None:
            raise ValueError("gradient policy requires the gain evaluator c")

    def rate_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        alpha = self.alpha if self.alpha is not None else linear_rate(1.0)
        if self.vectorized or self.alpha is None:
            return np.asarray(alpha(s), dtype=float)
        return np.asarray([float(alpha(v)) for v in np.atleast_1d(s)], dtype=float).reshape(s.shape)

    def nominal_at(self, X, m: int) -> np.ndarray:
        n = np.atleast_1d(np.asarray(X, dtype=float)).shape[-1]
        Xb, single = _as_batch(X, n)
        out = _eval_batch(self.nominal, Xb, (m,), self.vectorized, "nominal")
        return out[0] if single else out

    def c_at(self, X) -> np.ndarray:
        n = np.atleast_1d(np.asarray(X, dtype=float)).shape[-1]
        Xb, single = _as_batch(X, n)
        out = _eval_batch(self.c, Xb, (), self.vectorized, "c")
        if np.any(out < 0):
            bad = Xb[np.argmax(out < 0)]
            raise ValueError(f"gradient gain c is negative at state {bad.tolist()}")
        return float(out[0]) if single else out


def lie_g(sys: ControlSystem, bar: BarrierProblem, X) -> np.ndarray:
    """Actuated direction L_g(phi) = grad(phi)^T g, shape (m,) per state."""
    Xb, single = _as_batch(X, sys.n)
    grad = bar.grad_at(Xb)
    gmat = sys.g_at(Xb)
    out = np.einsum("bi,bim->bm", grad, gmat)
    return out[0] if single else out


def d_phi_batch(sys: ControlSystem, bar: BarrierProblem, X, U) -> np.ndarray:
    """Generator drift of phi at stacked states/inputs, shape (B,)."""
    Xb, _ = _as_batch(X, sys.n)
    Ub, _ = _as_batch(U, sys.m, "input")
    if Ub.shape[0] != Xb.shape[0]:
        raise ShapeError(f"input batch {Ub.shape[0]} does not match state batch {Xb.shape[0]}")
    grad = bar.grad_at(Xb)
    hess = bar.hess_at(Xb)
    fvec = sys.f_at(Xb)
    sig = sys.sigma_at(Xb)
    lg = np.einsum("bi,bim->bm", grad, sys.g_at(Xb))
    drift = np.einsum("bi,bi->b", grad, fvec)
    actuated = np.einsum("bm,bm->b", lg, Ub)
    trace = 0.5 * np.einsum("bik,bjk,bij->b", sig, sig, hess)
    return drift + actuated + trace


def d_phi(sys: ControlSystem, bar: BarrierProblem, x, u) -> float:
    """Expected instantaneous rate of change of phi at state x under input u.

    Returns L_f(phi) + L_g(phi) u + 0.5 tr(sigma sigma^T Hess(phi)).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(d_phi_batch(sys, bar, x[None, :], u[None, :])[0])


def closed_loop_control_batch(policy: Policy, sys: ControlSystem, bar: BarrierProblem,
                              X) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop inputs for stacked states.

    Returns ``(U, infeasible)`` where ``infeasible`` marks states at which
    the zero-CBF filter has no admissible input (the returned row there is
    the unmodified nominal and must not be trusted).
    """
    Xb, _ = _as_batch(X, sys.n)
    U = policy.nominal_at(Xb, sys.m)
    infeasible = np.zeros(Xb.shape[0], dtype=bool)
    if policy.kind == "none":
        return U, infeasible
    lg = lie_g(sys, bar, Xb)
    if policy.kind == "gradient":
        c = np.atleast_1d(policy.c_at(Xb))
        return U + c[:, None] * lg, infeasible
    # zero_cbf: keep the nominal when it satisfies the rate constraint,
    # otherwise apply the minimum-norm correction along L_g(phi)^T.
    d_nom = d_phi_batch(sys, bar, Xb, U)
    slack = policy.rate_at(bar.phi_at(Xb))
    violated = d_nom < -slack
    if np.any(violated):
        lg2 = np.einsum("bm,bm->b", lg, lg)
        dead = violated & (lg2 <= _LG_FLOOR)
        active = violated & ~dead
        lam = np.zeros_like(d_nom)
        lam[active] = (-slack[active] - d_nom[active]) / lg2[active]
        U = U + lam[:, None] * lg
        infeasible = dead
    return U, infeasible


def closed_loop_control(policy: Policy, sys: ControlSystem, bar: BarrierProblem, x) -> np.ndarray:
    """Closed-loop input K(x) for a single state; raises on infeasibility."""
    x = np.asarray(x, dtype=float)
    U, infeasible = closed_loop_control_batch(policy, sys, bar, x[None, :])
    if infeasible[0]:
        raise InfeasibilityError(x)
    return U[0]


def check_cbf_constraint(policy: Policy, sys: ControlSystem, bar: BarrierProblem,
                         x, tol: float = 1e-9) -> bool:
    """True iff the post-filter input satisfies the rate constraint at x."""
    if policy.kind != "zero_cbf":
        raise ValueError("check_cbf_constraint requires a zero_cbf policy")
    u = closed_loop_control(policy, sys, bar, x)
    slack = float(policy.rate_at(bar.phi_at(x)))
    return d_phi(sys, bar, x, u) >= -slack - tol


@dataclass(frozen=True)
class AugmentedSystem:
    """Ito dynamics of the stacked process [phi(X), X].

    ``rho`` is the augmented drift (first entry the generator drift of
    phi under the closed loop), ``zeta`` the augmented diffusion (first
    row grad(phi)^T sigma), and ``diffusion`` the tensor zeta zeta^T.
    """

    dim: int
    rho: Callable
    zeta: Callable
    diffusion: Callable


def build_augmented(sys: ControlSystem, bar: BarrierProblem, policy: Policy) -> AugmentedSystem:
    """Assemble the augmented drift/diffusion evaluators for (sys, bar, policy)."""

    def rho_batch(X):
        Xb, _ = _as_batch(X, sys.n)
        U, infeasible = closed_loop_control_batch(policy, sys, bar, Xb)
        if np.any(infeasible):
            raise InfeasibilityError(Xb[np.argmax(infeasible)])
        xdrift = sys.f_at(Xb) + np.einsum("bim,bm->bi", sys.g_at(Xb), U)
        top = d_phi_batch(sys, bar, Xb, U)
        return np.concatenate([top[:, None], xdrift], axis=1)

    def zeta_batch(X):
        Xb, _ = _as_batch(X, sys.n)
        sig = sys.sigma_at(Xb)
        top = np.einsum("bi,bik->bk", bar.grad_at(Xb), sig)
        return np.concatenate([top[:, None, :], sig], axis=1)

    def rho(x):
        Xb, single = _as_batch(x, sys.n)
        out = rho_batch(Xb)
        return out[0] if single else out

    def zeta(x):
        Xb, single = _as_batch(x, sys.n)
        out = zeta_batch(Xb)
        return out[0] if single else out

    def diffusion(x):
        Xb, single = _as_batch(x, sys.n)
        z = zeta_batch(Xb)
        out = np.einsum("bik,bjk->bij", z, z)
        return out[0] if single else out

    return AugmentedSystem(dim=sys.n + 1, rho=rho, zeta=zeta, diffusion=diffusion)


def validate_barrier(bar: BarrierProblem, probes, rel_tol: float = 1e-5,
                     sym_tol: float = 1e-12, level_band: float | None = None) -> None:
    """Check derivative consistency of a barrier at probe states.

    Verifies Hessian symmetry, agreement of the supplied gradient with
    central finite differences of phi, and a non-vanishing gradient at
    probes lying within ``level_band`` of the level set.  Raises
    ValueError on the first violation.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if level_band is None:
        level_band = 1e-2 * (1.0 + float(np.max(np.abs(bar.phi_at(probes)))))
    for x in probes:
        h = bar.hess_at(x)
        scale = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - h.T)) > sym_tol * scale:
            raise ValueError(f"Hessian not symmetric at {x.tolist()}")
        g = bar.grad_at(x)
        g_fd = fd_gradient(bar.phi, x)
        denom = max(float(np.linalg.norm(g_fd)), 1e-12)
        if np.linalg.norm(g - g_fd) / denom > rel_tol:
            raise ValueError(f"gradient inconsistent with phi at {x.tolist()}")
        if abs(float(bar.phi_at(x)) - bar.level) <= level_band and np.linalg.norm(g) < 1e-8:
            raise ValueError(f"gradient vanishes on the level set near {x.tolist()}")
