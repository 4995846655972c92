"""Exact discrete derivatives of the CEM forward map via adjoint fields.

For datum r = (n, l) and element j,

    J_rj = -w_l^T (dS/dm_j) u_n,

where u_n solves the grounded system for pattern n and w_l = S^-1 t_l. The
element derivative dS/dm_j is the cached 3x3 unit-conductivity stiffness
block of element j; no global per-element matrix is ever formed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, DimensionMismatch

HESSIAN_CAP = 512


@dataclass
class Misfit:
    value: float
    residual: np.ndarray


def misfit(f, d):
    f = np.asarray(f, dtype=float)
    d = np.asarray(d, dtype=float)
    if f.shape != d.shape:
        raise DimensionMismatch(f"simulated data {f.shape} vs observed {d.shape}")
    r = f - d
    return Misfit(0.5 * float(r @ r), r)


def _local(field, elems):
    # field: (N_full, K) -> (E, 3, K); ground rows are already zero
    return field[elems]


def jacobian_from_state(state):
    """Full-data Jacobian (N_d x N_E) at the state's conductivity."""
    mesh = state.mesh
    K = mesh.local_stiffness
    U = _local(state.u, mesh.elems)            # (E, 3, P)
    W = _local(state.w, mesh.elems)            # (E, 3, L)
    KU = np.einsum("eij,ejn->ein", K, U)
    J = -np.einsum("eil,ein->nle", W, KU)      # (P, L, E)
    J = J.reshape(-1, mesh.n_elems)
    return J[state.model.keep]


def jacobian(model, m, elements=None):
    """Jacobian of the selected data, optionally restricted to ``elements`` columns."""
    J = jacobian_from_state(model.state(m))
    if elements is not None:
        elements = np.asarray(elements)
        if np.any(elements < 0) or np.any(elements >= model.mesh.n_elems):
            raise IndexError("element index outside mesh range")
        J = J[:, elements]
    return J


def misfit_and_gradient(model, m, d, state=None):
    """Return ``(J(m), g)`` with J = 1/2 ||F(m) - d||^2 and g = J^T (f - d)."""
    state = model.state(m) if state is None else state
    mf = misfit(state.f, d)
    g = _gradient_from_state(state, mf.residual)
    return mf.value, g


def _gradient_from_state(state, residual):
    # g_j = -sum_n w_hat_n^T K_j u_n with w_hat_n = sum_l res_{nl} w_l
    model, mesh = state.model, state.mesh
    R = np.zeros(model.keep.size)
    R[model.keep] = residual
    R = R.reshape(model.n_patterns, mesh.n_electrodes)       # (P, L)
    w_hat = state.w @ R.T                                     # (N_full, P)
    Wl = _local(w_hat, mesh.elems)
    U = _local(state.u, mesh.elems)
    return -np.einsum("ein,eij,ejn->e", Wl, mesh.local_stiffness, U)


def _field_derivatives(state):
    """du_n/dm_i = -S^-1 K_i u_n for every pattern n and element i: (P, N_full, E)."""
    mesh, system = state.mesh, state.system
    K = mesh.local_stiffness
    U = _local(state.u, mesh.elems)
    KU = np.einsum("eij,ejn->ein", K, U)                     # (E, 3, P)
    n_full = system.size
    cols = np.repeat(np.arange(mesh.n_elems), 3)
    rows = mesh.elems.ravel()
    out = np.empty((state.model.n_patterns, n_full, mesh.n_elems))
    for n in range(state.model.n_patterns):
        rhs = np.zeros((n_full, mesh.n_elems))
        np.add.at(rhs, (rows, cols), KU[:, :, n].ravel())
        out[n] = -system.solve(rhs)
    state.model.n_solves += state.model.n_patterns * mesh.n_elems
    return out


def true_hessian(model, m, d, mode="full", cap=HESSIAN_CAP, state=None):
    """Exact Hessian of 1/2 ||F(m) - d||^2 (``mode='full'``) or its diagonal (``'diagonal'``).

    Returns ``(H, JtJ)`` where ``JtJ`` is the Gauss-Newton part in the same
    shape (matrix or diagonal vector).
    """
    if mode not in ("full", "diagonal"):
        raise ValueError(f"mode must be 'full' or 'diagonal', got {mode!r}")
    mesh = model.mesh
    if mode == "full" and mesh.n_elems > cap:
        raise CapExceeded(f"full Hessian requested for {mesh.n_elems} elements (cap {cap})")
    state = model.state(m) if state is None else state
    J = jacobian_from_state(state)
    res = misfit(state.f, d).residual
    R = np.zeros(model.keep.size)
    R[model.keep] = res
    R = R.reshape(model.n_patterns, mesh.n_electrodes)
    w_hat = state.w @ R.T                                     # (N_full, P)
    dU = _field_derivatives(state)                            # (P, N_full, E)
    K = mesh.local_stiffness
    Wl = _local(w_hat, mesh.elems)                            # (E, 3, P)
    WK = np.einsum("ean,eab->ebn", Wl, K)                     # (E, 3, P)
    if mode == "full":
        X = np.zeros((mesh.n_elems, mesh.n_elems))
        for n in range(model.n_patterns):
            dUl = dU[n][mesh.elems]                           # (E_j, 3, E_i)
            X += np.einsum("jb,jbi->ji", WK[:, :, n], dUl)
        second = -(X + X.T)
        JtJ = J.T @ J
        H = JtJ + second
        return 0.5 * (H + H.T), JtJ
    idx = np.arange(mesh.n_elems)
    x = np.zeros(mesh.n_elems)
    for n in range(model.n_patterns):
        dUl = dU[n][mesh.elems, idx[:, None]]                 # (E, 3): du_{n,i} at element i's nodes
        x += np.einsum("eb,eb->e", WK[:, :, n], dUl)
    JtJ = gn_diag(J)
    return JtJ - 2.0 * x, JtJ


def second_derivative_table(state):
    """Per-datum pure second derivatives d^2 f_r / dm_i^2 = -2 w_l^T K_i du_{n,i}: (N_d, E).

    The true Hessian diagonal at the state's conductivity is then
    ``gn_diag(J) + (f - d) @ table`` for any data vector d.
    """
    model, mesh = state.model, state.mesh
    dU = _field_derivatives(state)
    idx = np.arange(mesh.n_elems)
    W = _local(state.w, mesh.elems)                            # (E, 3, L)
    WK = np.einsum("eal,eab->ebl", W, mesh.local_stiffness)    # (E, 3, L)
    out = np.empty((model.n_patterns, mesh.n_electrodes, mesh.n_elems))
    for n in range(model.n_patterns):
        dUl = dU[n][mesh.elems, idx[:, None]]                  # (E, 3)
        out[n] = -2.0 * np.einsum("ebl,eb->le", WK, dUl)
    return out.reshape(-1, mesh.n_elems)[model.keep]


def gn_diag(J):
    """diag(J^T J): column sums of squares."""
    J = np.asarray(J, dtype=float)
    return np.einsum("ri,ri->i", J, J)
