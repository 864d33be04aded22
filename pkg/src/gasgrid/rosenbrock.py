"""Rodas4: a six-stage stiffly accurate Rosenbrock method for index-1 DAEs.

The integrator solves ``M x' = F(t, x)`` with ``M = diag(I_n, 0)``, i.e. the
semi-explicit system ``y' = f(t, y, z), 0 = g(t, y, z)`` with ``x = [y; z]``.
Stages are computed in the transformed variables ``U_i = sum_j gamma_ij k_j``
so that every stage needs only a solve with ``E = M/(h gamma) - J``, and that
matrix is factorized once per attempted step size.

A *system* is any object exposing

``n``            number of differential unknowns (the leading block of ``x``)
``residual(t, X)``  ``F`` evaluated column-wise for ``X`` of shape ``(N,)`` or ``(N, K)``
``jacobian(t, x)``  sparse ``dF/dx`` (any scipy sparse format)

and optionally ``variable_name(i)`` for diagnostics.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (GasGridError, NonPositivePressure, SingularIteration, StepSizeUnderflow,
                     ThetaOutOfRange)

log = logging.getLogger(__name__)


# -- tableau --------------------------------------------------------------


@dataclass(frozen=True)
class RosenbrockTableau:
    """Coefficients of a stiffly accurate Rosenbrock method.

    ``a``, ``C``, ``m`` are the transformed coefficients used by the stage
    recursion; ``alpha``, ``gamma_tab`` and ``b`` are the classical form
    ``k_i = h F(t + alpha_i h, x0 + sum alpha_ij k_j) + h J sum gamma_ij k_j``.
    """

    name: str
    s: int
    gamma: float
    order: int
    a: np.ndarray
    C: np.ndarray
    c: np.ndarray
    d: np.ndarray
    m: np.ndarray
    dense: np.ndarray

    @property
    def Gamma(self) -> np.ndarray:
        """Full lower-triangular ``gamma_ij`` including the diagonal ``gamma``."""
        return np.linalg.inv(np.eye(self.s) / self.gamma - self.C)

    @property
    def alpha(self) -> np.ndarray:
        return self.a @ self.Gamma

    @property
    def gamma_tab(self) -> np.ndarray:
        return self.Gamma - self.gamma * np.eye(self.s)

    @property
    def b(self) -> np.ndarray:
        return self.m @ self.Gamma

    @property
    def b_embedded(self) -> np.ndarray:
        return self.alpha[-1]

    @property
    def alpha_i(self) -> np.ndarray:
        return self.alpha.sum(axis=1)

    @property
    def gamma_i(self) -> np.ndarray:
        return self.gamma_tab.sum(axis=1) + self.gamma


def _rodas4() -> RosenbrockTableau:
    s = 6
    a = np.zeros((s, s))
    a[1, 0] = 1.544
    a[2, :2] = [0.9466785280815826, 0.2557011698983284]
    a[3, :3] = [3.314825187068521, 2.896124015972201, 0.9986419139977817]
    a[4, :4] = [1.221224509226641, 6.019134481288629, 12.53708332932087, -0.6878860361058950]
    a[5, :4] = a[4, :4]
    a[5, 4] = 1.0
    C = np.zeros((s, s))
    C[1, 0] = -5.6688
    C[2, :2] = [-2.430093356833875, -0.2063599157091915]
    C[3, :3] = [-0.1073529058151375, -9.594562251023355, -20.47028614809616]
    C[4, :4] = [7.496443313967647, -10.24680431464352, -33.99990352819905, 11.70890893206160]
    C[5, :5] = [8.083246795921522, -7.981132988064893, -31.52159432874371, 16.31930543123136,
                -6.058818238834054]
    c = np.array([0.0, 0.386, 0.21, 0.63, 1.0, 1.0])
    d = np.array([0.25, -0.1043, 0.1035, -0.0362, 0.0, 0.0])
    m = np.append(a[5, :5], 1.0)
    dense = np.zeros((2, s))
    dense[0, :5] = [10.12623508344586, -7.487995877610167, -34.80091861555747,
                    -7.992771707568823, 1.025137723295662]
    dense[1, :5] = [-0.6762803392801253, 6.087714651680015, 16.43084320892478,
                    24.76722511418386, -6.594389125716872]
    return RosenbrockTableau("rodas4", s, 0.25, 4, a, C, c, d, m, dense)


RODAS4 = _rodas4()


# -- step -----------------------------------------------------------------


@dataclass
class StepResult:
    """One attempted step together with the data for its dense output."""

    t0: float
    h: float
    x0: np.ndarray
    x1: np.ndarray
    err: float
    n: int
    U: np.ndarray = field(repr=False)
    H2: np.ndarray = field(repr=False)
    H3: np.ndarray = field(repr=False)
    worst: int = -1

    @property
    def accepted(self) -> bool:
        return self.err <= 1.0

    @property
    def t1(self) -> float:
        return self.t0 + self.h

    @property
    def y1(self):
        return self.x1[: self.n]

    @property
    def z1(self):
        return self.x1[self.n:]


@dataclass
class Counters:
    accepted: int = 0
    rejected: int = 0
    lu: int = 0
    jacobians: int = 0
    residuals: int = 0
    failed_stages: int = 0

    @property
    def attempts(self) -> int:
        return self.accepted + self.rejected


def error_norm(dy, dz, y1, z1, atol, rtol) -> float:
    """Max-norm of the local error scaled by ``atol + rtol |x1|``."""
    d = np.concatenate([np.ravel(dy), np.ravel(dz)])
    x = np.concatenate([np.ravel(y1), np.ravel(z1)])
    if d.size == 0:
        return 0.0
    return float(np.max(np.abs(d) / (atol + rtol * np.abs(x))))


def adapt_step(err, h, q=4, safety=0.9, fac_min=0.2, fac_max=6.0):
    """Step-size update ``h * clamp(safety * err**(-1/q), fac_min, fac_max)``."""
    if err <= 0:
        return h * fac_max
    if not math.isfinite(err):
        return h * fac_min
    return h * min(fac_max, max(fac_min, safety * err ** (-1.0 / q)))


def _factorize(E, counters):
    if counters is not None:
        counters.lu += 1
    try:
        lu = spla.splu(sp.csc_matrix(E))
    except RuntimeError as exc:
        raise SingularIteration(f"iteration matrix is singular: {exc}") from None
    return lu


def rosenbrock_step(system, t0, x0, h, tableau: RosenbrockTableau = RODAS4, *, jac=None,
                    dfdt=None, f0=None, atol=1e-6, rtol=1e-3, counters=None) -> StepResult:
    """Take one Rodas step of size ``h`` from ``(t0, x0)``.

    ``jac``, ``dfdt`` and ``f0`` may be passed to reuse work across
    rejected attempts from the same point. A stage evaluation that fails
    (non-physical state, non-finite values) yields ``err = inf``.
    """
    x0 = np.asarray(x0, dtype=float)
    N = x0.size
    n = system.n
    mass = np.zeros(N)
    mass[:n] = 1.0
    if f0 is None:
        f0 = system.residual(t0, x0)
    if jac is None:
        jac = system.jacobian(t0, x0)
    if dfdt is None:
        dfdt = _time_derivative(system, t0, x0, f0)
    gam = tableau.gamma
    E = sp.diags(mass / (h * gam)) - sp.csc_matrix(jac)
    lu = _factorize(E, counters)

    s = tableau.s
    U = np.zeros((s, N))
    try:
        with np.errstate(all="raise"):
            for i in range(s):
                if i == 0:
                    Fi = f0
                else:
                    v = x0 + tableau.a[i, :i] @ U[:i]
                    Fi = system.residual(t0 + tableau.c[i] * h, v)
                    if counters is not None:
                        counters.residuals += 1
                rhs = Fi + h * tableau.d[i] * dfdt
                if i > 0:
                    rhs = rhs + mass * ((tableau.C[i, :i] / h) @ U[:i])
                U[i] = lu.solve(rhs)
                if not np.all(np.isfinite(U[i])):
                    raise FloatingPointError("non-finite stage")
    except (GasGridError, FloatingPointError, ValueError) as exc:
        if isinstance(exc, SingularIteration):
            raise
        if counters is not None:
            counters.failed_stages += 1
        log.debug("stage failure at t=%.6g h=%.3g: %s", t0, h, exc)
        return StepResult(t0, h, x0, x0.copy(), math.inf, n, U, U[0], U[0], _failure_index(system, exc))

    x1 = x0 + tableau.m @ U
    delta = U[-1]
    scale = atol + rtol * np.abs(x1)
    ratio = np.abs(delta) / scale
    worst = int(np.argmax(ratio))
    err = float(ratio[worst])
    H2 = tableau.dense[0] @ U
    H3 = tableau.dense[1] @ U
    return StepResult(t0, h, x0, x1, err, n, U, H2, H3, worst)


def _time_derivative(system, t, x, f0):
    # second-order one-sided difference: never straddles a forcing kink at t
    dt = 1e-6 * (1.0 + abs(t))
    return (4.0 * system.residual(t + dt, x) - system.residual(t + 2 * dt, x) - 3.0 * f0) / (2 * dt)


def dense_eval(step: StepResult, theta):
    """Continuous extension ``x(t0 + theta h)`` of an accepted step.

    Returns ``(y, z)``. The interpolant is a cubic in ``theta`` with
    ``x(0) = x0`` and ``x(1) = x1``.
    """
    theta = float(theta)
    if not -1e-8 <= theta <= 1 + 1e-8:
        raise ThetaOutOfRange(f"theta={theta} outside [0, 1]")
    theta = min(max(theta, 0.0), 1.0)
    x = _dense(step.x0, step.x1 - step.x0, step.H2, step.H3, theta)
    return x[: step.n], x[step.n:]


def _dense(x0, d, H2, H3, theta):
    return x0 + theta * (d + (1.0 - theta) * (H2 + theta * H3))


# -- trajectory -----------------------------------------------------------


@dataclass
class DenseSegment:
    t0: float
    h: float
    t_end: float
    x0: np.ndarray
    d: np.ndarray
    H2: np.ndarray
    H3: np.ndarray

    def __call__(self, t):
        theta = (np.asarray(t, dtype=float) - self.t0) / self.h
        theta = theta[..., None] if np.ndim(theta) else theta
        return _dense(self.x0, self.d, self.H2, self.H3, theta)


class Trajectory:
    """Accepted points (and their dense segments) of one integration run.

    ``index`` selects which entries of the full state vector are retained.
    """

    def __init__(self, index=None, names=None):
        self.index = None if index is None else np.asarray(index, dtype=int)
        self.names = names
        self.t: list[float] = []
        self.x: list[np.ndarray] = []
        self.segments: list[DenseSegment] = []

    def _pick(self, v):
        return np.array(v if self.index is None else v[self.index], dtype=float)

    def append(self, t, x):
        if self.t and t < self.t[-1]:
            raise ValueError("trajectory time must be non-decreasing")
        if self.t and t == self.t[-1]:
            self.x[-1] = self._pick(x)
            return
        self.t.append(float(t))
        self.x.append(self._pick(x))

    def add_segment(self, step: StepResult, t_end):
        self.segments.append(DenseSegment(
            step.t0, step.h, float(t_end), self._pick(step.x0), self._pick(step.x1 - step.x0),
            self._pick(step.H2), self._pick(step.H3)))

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.asarray(self.x)

    def sample(self, times) -> np.ndarray:
        """Evaluate the recorded channels at ``times`` through the dense output."""
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, len(self.x[0])))
        if not self.segments:
            out[:] = self.x[0]
            return out
        ends = np.array([s.t_end for s in self.segments])
        k = np.searchsorted(ends, times, side="left")
        k = np.clip(k, 0, len(self.segments) - 1)
        for i, t in enumerate(times):
            seg = self.segments[k[i]]
            if t <= self.t[0]:
                out[i] = self.x[0]
            else:
                out[i] = seg(min(t, seg.t_end))
        return out


# -- driver ---------------------------------------------------------------


@dataclass
class SolverConfig:
    atol: float = 1e-6
    rtol: float = 1e-3
    h_init: float = 1e-5
    h_min: float = 1e-12
    h_max: float = math.inf
    max_steps: int = 200_000
    fixed_step: float | None = None
    safety: float = 0.9
    fac_min: float = 0.2
    fac_max: float = 6.0


@dataclass
class IntegrationResult:
    trajectory: Trajectory
    hits: list
    counters: Counters
    x_final: np.ndarray
    t_final: float
    wall_time: float = 0.0


def integrate(system, t_span, config: SolverConfig | None = None, event_set=(), *, x0=None,
              tstops=(), record=None, names=None, on_step=None, on_event=None, terminal=(),
              tableau: RosenbrockTableau = RODAS4) -> IntegrationResult:
    """Integrate ``system`` over ``t_span`` from the consistent point ``x0``.

    ``event_set`` holds :class:`gasgrid.events.EventSpec` objects that are
    checked on every accepted step; the first located hit is acted upon via
    ``on_event(system, hit, x)`` which returns the restart state. Without
    ``on_event`` hits are only recorded. ``tstops`` are times the solver lands
    on exactly. ``on_step(step, t1, x1)`` is called after every accepted
    step. Integration stops right after acting on a hit whose spec is in
    ``terminal``.
    """
    from .events import detect_sign_change, event_value, locate_critical_time

    cfg = config or SolverConfig()
    t, t_end = float(t_span[0]), float(t_span[1])
    x = np.array(system.x0 if x0 is None else x0, dtype=float)
    counters = Counters()
    traj = Trajectory(record, names)
    traj.append(t, x)
    hits = []
    pending = list(event_set)
    stops = sorted({float(s) for s in tstops if t < s < t_end}
                   | {float(e.threshold) for e in pending if e.is_time_event and t < e.threshold < t_end}
                   | {t_end})
    h = cfg.fixed_step or cfg.h_init
    wall = _time.perf_counter()
    n_steps = 0

    while t < t_end:
        n_steps += 1
        if n_steps > cfg.max_steps:
            raise StepSizeUnderflow(f"max_steps={cfg.max_steps} exceeded at t={t}", t=t, h=h)
        stop = next(s for s in stops if s > t)
        try:
            f0 = system.residual(t, x)
            jac = system.jacobian(t, x)
            dfdt = _time_derivative(system, t, x, f0)
        except NonPositivePressure as exc:
            # the accepted state sits on the model's singular set: no step size helps
            name = _variable_name(system, _failure_index(system, exc))
            raise StepSizeUnderflow(f"pressure collapse at t={t:.6f} s (variable: {name})",
                                    t=t, h=h, variable=name) from exc
        counters.jacobians += 1
        counters.residuals += 3
        while True:
            h = min(h, cfg.h_max)
            landing = t + h >= stop - 1e-12 * max(1.0, abs(stop))
            h_try = stop - t if landing else h
            step = rosenbrock_step(system, t, x, h_try, tableau, jac=jac, dfdt=dfdt, f0=f0,
                                   atol=cfg.atol, rtol=cfg.rtol, counters=counters)
            if cfg.fixed_step is not None:
                if not math.isfinite(step.err):
                    raise StepSizeUnderflow(f"fixed step failed at t={t}", t=t, h=h_try)
                break
            if step.accepted:
                bad = _state_violation(system, step.x1)
                if bad is None:
                    break
                step.err, step.worst = math.inf, bad
            counters.rejected += 1
            h = adapt_step(step.err, h_try, tableau.order, cfg.safety, cfg.fac_min, cfg.fac_max)
            if h < cfg.h_min:
                name = _variable_name(system, step.worst)
                raise StepSizeUnderflow(
                    f"step size {h:.3g} s below h_min at t={t:.6f} s (worst variable: {name})",
                    t=t, h=h, variable=name)
        counters.accepted += 1
        t1 = stop if landing else t + h_try
        x1 = step.x1

        # events on the accepted step
        found = []
        for spec in pending:
            phi0 = event_value(spec, t, x)
            phi1 = event_value(spec, t1, x1)
            if detect_sign_change(spec, phi0, phi1):
                found.append(locate_critical_time(step, spec, t_end=t1))
        if found:
            hit = min(found, key=lambda e: e.t_cr)
            theta_frac = (hit.t_cr - t) / (t1 - t)
            if theta_frac < 1.0:
                t1 = hit.t_cr
                y_cr, z_cr = dense_eval(step, (hit.t_cr - t) / step.h)
                x1 = np.concatenate([y_cr, z_cr])
            traj.add_segment(step, t1)
            traj.append(t1, x1)
            pending.remove(hit.spec)
            hits.append(hit)
            log.info("event %s at t=%.6f s", hit.spec.kind.value, hit.t_cr)
            if on_event is not None:
                x1 = on_event(system, hit, x1)
                traj.append(t1, x1)
            h = cfg.fixed_step or cfg.h_init
            if any(hit.spec is s for s in terminal):
                if on_step is not None:
                    on_step(step, t1, x1)
                t, x = t1, x1
                break
        else:
            traj.add_segment(step, t1)
            traj.append(t1, x1)
            if cfg.fixed_step is None and not landing:
                h = adapt_step(step.err, h_try, tableau.order, cfg.safety, cfg.fac_min, cfg.fac_max)
            elif cfg.fixed_step is None:
                h = max(h, adapt_step(step.err, h_try, tableau.order, cfg.safety, cfg.fac_min,
                                      cfg.fac_max))
        if on_step is not None:
            on_step(step, t1, x1)
        t, x = t1, x1

    return IntegrationResult(traj, hits, counters, x, t, _time.perf_counter() - wall)


def _variable_name(system, i):
    fn = getattr(system, "describe_variable", None) or getattr(system, "variable_name", None)
    return fn(i) if fn is not None and i >= 0 else str(i)


def _state_violation(system, x):
    fn = getattr(system, "state_violation", None)
    return None if fn is None else fn(x)


def _failure_index(system, exc):
    """Global index named by a stage failure, or -1."""
    loc = getattr(exc, "index", None)
    if isinstance(loc, tuple) and hasattr(system, "index"):
        try:
            return system.index("pipe", loc[0], "p", loc[1])
        except (StopIteration, IndexError, KeyError):
            return -1
    return -1


class FunctionSystem:
    """Adapter turning a callable ``F(t, x)`` into a system with a dense FD Jacobian.

    ``F`` must accept ``x`` of shape ``(N,)``; batched calls fall back to a
    column loop.
    """

    def __init__(self, fun, n, x0, jac=None):
        self.fun = fun
        self.n = n
        self.x0 = np.asarray(x0, dtype=float)
        self._jac = jac

    def residual(self, t, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.asarray(self.fun(t, X), dtype=float)
        return np.stack([np.asarray(self.fun(t, X[:, k]), dtype=float) for k in range(X.shape[1])],
                        axis=1)

    def jacobian(self, t, x):
        if self._jac is not None:
            return sp.csc_matrix(np.atleast_2d(self._jac(t, x)))
        x = np.asarray(x, dtype=float)
        N = x.size
        J = np.empty((N, N))
        for j in range(N):
            dx = 1e-7 * (1.0 + abs(x[j]))
            e = np.zeros(N)
            e[j] = dx
            J[:, j] = (self.fun(t, x + e) - self.fun(t, x - e)) / (2 * dx)
        return sp.csc_matrix(J)
