"""Reconstruction engines: l-BFGS with a per-iteration initial diagonal, and Gauss-Newton.

The objective is Phi(m) = 1/2 ||F(m) - d||^2 + lam ||L m||^2 with L the
graph Laplacian of the element adjacency. Every l-BFGS variant differs only
in the diagonal handed to the two-loop recursion at each iterate; the
regularization curvature 2 lam diag(L^T L) is always added to it.
"""

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import adjoint, ptensor
from .errors import ConfigError, CurvatureViolation, DimensionMismatch, LineSearchFailed, NonPositiveDiagonal
from .neumann import NeumannEvaluator
from .numerics import svd

log = logging.getLogger(__name__)

VARIANTS = ("GN", "LBFGS_H", "LBFGS_GN", "LBFGS_GNH", "LBFGS_I")
CONDUCTIVITY_FLOOR = 1e-6


def laplace_operator(mesh):
    """(L m)_i = sum over edge neighbours j of (m_j - m_i)."""
    A = mesh.adjacency
    deg = np.asarray(A.sum(axis=1)).ravel()
    return (A - sp.diags(deg)).tocsr()


@dataclass
class LaplaceReg:
    L: sp.csr_matrix
    lam: float

    @classmethod
    def on(cls, mesh, lam):
        return cls(laplace_operator(mesh), float(lam))

    def value(self, m):
        Lm = self.L @ m
        return self.lam * float(Lm @ Lm)

    def gradient(self, m):
        return 2.0 * self.lam * (self.L.T @ (self.L @ m))

    @property
    def hessian(self):
        return 2.0 * self.lam * (self.L.T @ self.L)

    @property
    def diag(self):
        return 2.0 * self.lam * np.asarray(self.L.multiply(self.L).sum(axis=0)).ravel()


class Objective:
    """Phi(m) with gradient J^T (f - d) + 2 lam L^T L m; keeps the last forward state."""

    def __init__(self, model, d, lam=0.0):
        self.model = model
        self.d = np.asarray(d, dtype=float)
        if self.d.shape != (model.n_data,):
            raise DimensionMismatch(f"data has shape {self.d.shape}, model selects {model.n_data}")
        self.reg = LaplaceReg.on(model.mesh, lam)
        self.n_evals = 0

    def __call__(self, m):
        state = self.model.state(m)
        mis, g = adjoint.misfit_and_gradient(self.model, m, self.d, state=state)
        self.n_evals += 1
        return mis + self.reg.value(m), g + self.reg.gradient(m), state


# -- quasi-Newton machinery ------------------------------------------------


def lbfgs_direction(pairs, g, h0):
    """Two-loop recursion: p = -B^-1 g for the l-BFGS matrix seeded with diag(h0).

    ``pairs`` is an iterable of (s, y) ordered oldest first; ``h0`` a
    positive Hessian (not inverse-Hessian) diagonal.
    """
    h0 = np.asarray(h0, dtype=float)
    if np.any(~(h0 > 0)):
        raise NonPositiveDiagonal("initial Hessian diagonal must be strictly positive")
    pairs = list(pairs)
    q = np.array(g, dtype=float)
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    r = q / h0
    for (s, y), (rho, a) in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def bfgs_dense_update(B, s, y):
    """B' = B - (B s s^T B)/(s^T B s) + (y y^T)/(y^T s)."""
    sy = float(s @ y)
    if not sy > 0:
        raise CurvatureViolation(f"s^T y = {sy:.3e} is not positive")
    Bs = B @ s
    return B - np.outer(Bs, Bs) / float(s @ Bs) + np.outer(y, y) / sy


def dense_bfgs_matrix(h0, pairs):
    """Explicit BFGS matrix obtained by applying every pair to diag(h0)."""
    B = np.diag(np.asarray(h0, dtype=float))
    for s, y in pairs:
        B = bfgs_dense_update(B, s, y)
    return B


class BFGSState:
    """Memory of curvature pairs; ``memory=None`` keeps every pair (full BFGS)."""

    def __init__(self, memory=20):
        self.memory = memory
        self.pairs = deque(maxlen=memory)
        self.skipped = 0

    def push(self, s, y):
        sy = float(s @ y)
        if not sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            self.skipped += 1
            log.info("skipping curvature pair with s.y = %.3e", sy)
            return False
        self.pairs.append((np.array(s, dtype=float), np.array(y, dtype=float)))
        return True

    def direction(self, g, h0):
        return lbfgs_direction(self.pairs, g, h0)

    def dense(self, h0):
        return dense_bfgs_matrix(h0, self.pairs)


# -- line search ------------------------------------------------------------


@dataclass
class StepResult:
    alpha: float
    phi: float
    grad: np.ndarray
    extra: object
    n_evals: int


def max_feasible_step(m, p, floor):
    """Halve from 1 until every component of m + alpha p stays >= floor."""
    alpha = 1.0
    for _ in range(200):
        if np.all(m + alpha * p >= floor):
            return alpha
        alpha *= 0.5
    return 0.0


def line_search(fun, m, p, g, phi0, c1=1e-4, c2=0.9, floor=CONDUCTIVITY_FLOOR, max_trials=40):
    """Bisection/expansion search for a step satisfying the weak Wolfe conditions.

    ``fun(x)`` returns ``(phi, grad, extra)``. Steps are kept inside
    ``x >= floor`` when ``floor`` is not None.
    """
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    slope = float(g @ p)
    if not slope < 0:
        raise LineSearchFailed(f"not a descent direction (p.g = {slope:.3e})")
    amax = np.inf
    alpha = 1.0
    if floor is not None:
        alpha = max_feasible_step(m, p, floor)
        neg = p < 0
        if np.any(neg):
            amax = float(np.min((m[neg] - floor) / -p[neg]))
        if alpha == 0.0:
            raise LineSearchFailed("no feasible step keeps conductivity above the floor")
    lo, hi = 0.0, np.inf
    for trial in range(1, max_trials + 1):
        phi, grad, extra = fun(m + alpha * p)
        if not np.isfinite(phi) or phi > phi0 + c1 * alpha * slope:
            hi = alpha
        elif grad @ p < c2 * slope:
            lo = alpha
            if hi == np.inf and 2.0 * alpha > amax:
                # curvature cannot be reached inside the feasible set; sufficient decrease holds
                return StepResult(alpha, phi, grad, extra, trial)
        else:
            return StepResult(alpha, phi, grad, extra, trial)
        alpha = 0.5 * (lo + hi) if hi < np.inf else 2.0 * alpha
    raise LineSearchFailed(f"no Wolfe step after {max_trials} trials")


# -- reconstruction -----------------------------------------------------------


@dataclass
class SolverConfig:
    variant: str = "LBFGS_H"
    lam: float = 5e-5
    lbfgs_memory: int = 20
    stagnation_tol: float = 1e-4
    max_iter: int = 300
    freeze_h0: bool = False
    sigma0: float = 1.0
    neumann: str = "disc"
    neumann_const_alt: bool = False
    floor_boundary: bool = False
    track_dense: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.lbfgs_memory is not None and self.lbfgs_memory < 1:
            raise ConfigError("lbfgs_memory must be >= 1")


@dataclass
class SolverRun:
    variant: str
    iterates: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    ls_evals: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    h0: list = field(default_factory=list)
    B_history: list = field(default_factory=list)
    termination: str = ""

    @property
    def iterations(self):
        return max(len(self.phi) - 1, 0)

    @property
    def rel_resid(self):
        phi = np.asarray(self.phi)
        return phi / phi[0] if len(phi) and phi[0] > 0 else np.zeros_like(phi)

    @property
    def image(self):
        return self.iterates[-1]


class InitialDiagonal:
    """Per-iterate initial Hessian diagonal for the l-BFGS variants."""

    def __init__(self, model, d, config, reg):
        self.config = config
        self.model = model
        self.d = d
        self.reg_diag = reg.diag
        self.table = None
        self.frozen = None
        if config.variant in ("LBFGS_H", "LBFGS_GNH"):
            mesh = model.mesh
            m0 = np.full(mesh.n_elems, config.sigma0)
            u0 = model.state(m0)
            ev = NeumannEvaluator(config.neumann, radius=mesh.radius,
                                  const_alt=config.neumann_const_alt, mesh=mesh)
            self.table = ptensor.build_sensitivity_table(mesh, u0, ev)

    def __call__(self, m, state):
        v = self.config.variant
        if self.config.freeze_h0 and self.frozen is not None:
            return self.frozen
        if v == "LBFGS_I":
            base = np.ones_like(m)
        elif v == "LBFGS_GN":
            base = adjoint.gn_diag(adjoint.jacobian_from_state(state))
        else:
            C, D = self.table.coefficients(m)
            corr = ptensor.second_derivative_part(D, state.f, self.d)
            if v == "LBFGS_H":
                base = np.einsum("ri,ri->i", C, C) + corr
            else:
                base = adjoint.gn_diag(adjoint.jacobian_from_state(state)) + corr
            base = ptensor.clamp_positive(base)
        if self.config.floor_boundary:
            flags = self.model.mesh.boundary_flags
            base = np.where(flags, np.maximum(base, self.reg_diag), base)
        h0 = base + self.reg_diag
        if self.frozen is None:
            self.frozen = h0
        return h0


def reconstruct(model, d, config=None, m0=None, callback=None):
    """Minimise Phi from a homogeneous start; returns the full :class:`SolverRun`.

    Stops when (Phi_{k-1} - Phi_k) / Phi_0 < stagnation_tol or after
    ``max_iter`` iterations. A failed line search raises
    :class:`LineSearchFailed` carrying the partial run.
    """
    config = SolverConfig() if config is None else config
    mesh = model.mesh
    obj = Objective(model, d, config.lam)
    m = np.full(mesh.n_elems, config.sigma0) if m0 is None else np.array(m0, dtype=float)
    run = SolverRun(config.variant)
    t0 = time.perf_counter()
    phi, g, state = obj(m)
    run.iterates.append(m.copy())
    run.phi.append(phi)
    run.steps.append(0.0)
    run.ls_evals.append(1)
    run.wall_ms.append(1e3 * (time.perf_counter() - t0))
    if phi == 0.0 or not np.any(g):
        run.termination = "zero-gradient"
        return run

    gn = config.variant == "GN"
    diag0 = None if gn else InitialDiagonal(model, obj.d, config, obj.reg)
    memory = None if config.track_dense else config.lbfgs_memory
    bfgs = BFGSState(memory)
    if gn:
        reg_h = obj.reg.hessian.toarray()
    for k in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        if gn:
            J = adjoint.jacobian_from_state(state)
            p = np.linalg.solve(J.T @ J + reg_h, -g)
        else:
            h0 = diag0(m, state)
            run.h0.append(h0)
            if config.track_dense:
                run.B_history.append(bfgs.dense(h0))
            p = bfgs.direction(g, h0)
        try:
            step = line_search(obj, m, p, g, phi)
        except LineSearchFailed as exc:
            run.termination = f"line-search: {exc}"
            raise LineSearchFailed(str(exc), run) from exc
        m_new = m + step.alpha * p
        if not gn:
            bfgs.push(m_new - m, step.grad - g)
        prev = phi
        m, phi, g, state = m_new, step.phi, step.grad, step.extra
        run.iterates.append(m.copy())
        run.phi.append(phi)
        run.steps.append(step.alpha)
        run.ls_evals.append(step.n_evals)
        run.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if callback is not None:
            callback(k, m, state)
        if (prev - phi) / run.phi[0] < config.stagnation_tol:
            run.termination = "stagnation"
            break
    else:
        run.termination = "max-iter"
    if config.track_dense and not gn:
        h0 = diag0(m, state)
        run.h0.append(h0)
        run.B_history.append(bfgs.dense(h0))
    return run


# -- Hessian quality --------------------------------------------------------


def principal_angles(V, W):
    """Angles between span(V) and span(W) (orthonormal columns), ascending."""
    _, s, _ = svd(V.T @ W)
    return np.sort(np.arccos(np.clip(s, 0.0, 1.0)))


def top_right_singular_vectors(A, k):
    _, _, V = svd(A)
    return V[:, :k]


def hessian_metrics(B_history, H_true, n_vectors=20):
    """Relative Frobenius error and principal angles of each B against the true Hessian.

    ``H_true`` is one matrix or a sequence aligned with ``B_history``.
    Returns ``(errors (K,), angles (K, n_vectors))``.
    """
    Hs = [H_true] * len(B_history) if np.ndim(H_true) == 2 else list(H_true)
    if len(Hs) != len(B_history):
        raise DimensionMismatch("need one true Hessian per BFGS matrix")
    errs, angles = [], []
    for B, H in zip(B_history, Hs):
        B = np.asarray(B)
        H = np.asarray(H)
        if B.shape != H.shape:
            raise DimensionMismatch(f"B {B.shape} vs H {H.shape}")
        k = min(n_vectors, H.shape[0])
        errs.append(np.linalg.norm(B - H) / np.linalg.norm(H))
        angles.append(principal_angles(top_right_singular_vectors(H, k), top_right_singular_vectors(B, k)))
    return np.array(errs), np.array(angles)
