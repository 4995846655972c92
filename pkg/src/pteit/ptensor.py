"""Polya-Szego tensors of ellipses and the diagonal Hessian they induce.

Each mesh element is treated as a small inclusion whose first-order
polarization tensor is that of an oriented ellipse with the element's
Steiner-inellipse aspect ratio and orientation, scaled to the element area.
Differentiating the first-order boundary perturbation formula with respect
to the element contrast gives per-datum first (C) and second (D)
derivative estimates, from which

    H~_ii = sum_r C_ri^2 + D_ri (f_r - d_r).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidContrast, MissingField


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _rotate(diag_entries, theta):
    """R(theta) diag(d1, d2) R(theta)^T, vectorised over leading axes. Returns (..., 2, 2)."""
    d1, d2 = diag_entries
    c, s = np.cos(theta), np.sin(theta)
    xx = c * c * d1 + s * s * d2
    yy = s * s * d1 + c * c * d2
    xy = c * s * (d1 - d2)
    return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)


def _check(a, b, size, gamma):
    if np.any(np.asarray(gamma) <= 0):
        raise InvalidContrast("contrast gamma must be positive")
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0) or np.any(np.asarray(size) <= 0):
        raise ValueError("semi-axes and |B| must be positive")


def _axis_terms(a, b, gamma):
    a, b, gamma = np.asarray(a, float), np.asarray(b, float), np.asarray(gamma, float)
    da, db = a + gamma * b, b + gamma * a
    return a, b, gamma, da, db


def polya_szego(a, b, theta, size, gamma):
    """Tensor (gamma - 1)|B| diag((a+b)/(a+gamma b), (a+b)/(b+gamma a)), rotated by theta.

    All arguments broadcast; the result has shape (..., 2, 2).
    """
    _check(a, b, size, gamma)
    a, b, gamma, da, db = _axis_terms(a, b, gamma)
    k = (gamma - 1.0) * size * (a + b)
    return _rotate((k / da, k / db), theta)


def polya_szego_derivs(a, b, theta, size, gamma):
    """First and second contrast derivatives of :func:`polya_szego`, each (..., 2, 2)."""
    _check(a, b, size, gamma)
    a, b, gamma, da, db = _axis_terms(a, b, gamma)
    s = a + b
    t1 = -b * s / da**2
    t2 = -a * s / db**2
    first = (size * s / da + (gamma - 1.0) * size * t1,
             size * s / db + (gamma - 1.0) * size * t2)
    second = (2.0 * size * t1 + (gamma - 1.0) * size * 2.0 * b**2 * s / da**3,
              2.0 * size * t2 + (gamma - 1.0) * size * 2.0 * a**2 * s / db**3)
    return _rotate(first, theta), _rotate(second, theta)


@dataclass
class PolyaSzegoTensor:
    M: np.ndarray
    dM: np.ndarray
    d2M: np.ndarray
    a: float
    b: float
    theta: float
    size: float
    gamma: float

    @classmethod
    def of(cls, a, b, theta, size, gamma):
        d1, d2 = polya_szego_derivs(a, b, theta, size, gamma)
        return cls(polya_szego(a, b, theta, size, gamma), d1, d2, a, b, theta, size, gamma)


class SensitivityTable:
    """Geometric part of the asymptotic derivative estimates.

    Stores, for every datum r = (n, l) and element i, the symmetric 2x2
    outer product area_i * sym(grad u0_n(z_i) (x) [grad_z N(x_l', z_i) - grad_z N(x_l, z_i)]),
    so that C and D at any conductivity are contractions with the tensor
    derivatives. Built once per reconstruction.
    """

    def __init__(self, mesh, grad_u0, grad_n, keep=None):
        # grad_u0: (P, E, 2) background field gradients; grad_n: (L, E, 2)
        grad_u0 = np.asarray(grad_u0, dtype=float)
        grad_n = np.asarray(grad_n, dtype=float)
        if grad_u0.ndim != 3 or grad_n.ndim != 3:
            raise MissingField("need per-element gradients of background fields and Neumann functions")
        if grad_u0.shape[1] != mesh.n_elems or grad_n.shape[1] != mesh.n_elems:
            raise DimensionMismatch("field gradients do not match the mesh element count")
        self.mesh = mesh
        a, b, theta = mesh.ellipses
        self.a, self.b, self.theta = a, b, theta
        dn = np.roll(grad_n, -1, axis=0) - grad_n                       # (L, E, 2): x_{l+1} minus x_l
        outer = np.einsum("nek,lem->nlekm", grad_u0, dn)                # (P, L, E, 2, 2)
        outer = 0.5 * (outer + np.swapaxes(outer, -1, -2))
        outer = outer.reshape(-1, mesh.n_elems, 2, 2)
        if keep is not None:
            outer = outer[keep]
        self.G = -mesh.areas[None, :, None, None] * outer              # (N_d, E, 2, 2)

    @property
    def n_data(self):
        return self.G.shape[0]

    def tensor_derivatives(self, m):
        """Unit-size tensor derivatives at gamma = m_i; each (E, 2, 2)."""
        return polya_szego_derivs(self.a, self.b, self.theta, 1.0, np.asarray(m, dtype=float))

    def coefficients(self, m):
        """Return (C, D), each (N_d, E)."""
        dM, d2M = self.tensor_derivatives(m)
        C = np.einsum("reij,eij->re", self.G, dM)
        D = np.einsum("reij,eij->re", self.G, d2M)
        return C, D


def element_field_gradients(state):
    """(P, E, 2) gradients of the background potentials from a forward state."""
    return state.element_gradients


def sensitivity_coefficients(mesh, u0_state, neumann, m, keep=None):
    """C and D tables (N_d x N_E) at conductivity ``m``.

    ``u0_state`` is a forward state at the homogeneous background and
    ``neumann`` a :class:`~pteit.neumann.NeumannEvaluator`.
    """
    table = build_sensitivity_table(mesh, u0_state, neumann, keep)
    return table.coefficients(m)


def build_sensitivity_table(mesh, u0_state, neumann, keep=None):
    if u0_state is None:
        raise MissingField("background forward solution is required")
    if keep is None:
        keep = u0_state.model.keep
    gn = np.asarray(neumann.grad_z(mesh.electrode_points(), mesh.centroids))   # (L, E, 2)
    return SensitivityTable(mesh, u0_state.element_gradients, gn, keep)


@dataclass
class DiagonalHessian:
    values: np.ndarray
    boundary: np.ndarray

    def __len__(self):
        return len(self.values)


def approx_hessian_diag(C, D, f, d, boundary=None):
    """H~_ii = sum_r C_ri^2 + D_ri (f_r - d_r)."""
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    res = np.asarray(f, dtype=float) - np.asarray(d, dtype=float)
    if C.shape != D.shape or C.shape[0] != res.shape[0]:
        raise DimensionMismatch(f"C {C.shape}, D {D.shape}, residual {res.shape}")
    vals = np.einsum("ri,ri->i", C, C) + res @ D
    flags = np.zeros(C.shape[1], dtype=bool) if boundary is None else np.asarray(boundary, dtype=bool)
    return DiagonalHessian(vals, flags)


def second_derivative_part(D, f, d):
    """sum_r D_ri (f_r - d_r), the correction added to diag(J^T J) in the GN-H variant."""
    return (np.asarray(f, float) - np.asarray(d, float)) @ np.asarray(D, float)


def clamp_positive(h, rel_floor=1e-12):
    """Clamp entries below rel_floor * max(h) up to that floor."""
    h = np.asarray(h, dtype=float)
    top = h.max() if h.size else 0.0
    floor = rel_floor * top if top > 0 else rel_floor
    return np.maximum(h, floor)
