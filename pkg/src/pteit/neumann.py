"""Neumann functions N(x, z) and their source gradients.

Three evaluators share one interface: the closed form for a disc, the
free-space Green's function (no boundary interaction), and a P1 finite
element table with one column per nodal point source.
"""

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import SourceOnBoundary
from .fem import assemble_stiffness
from .numerics import read_matrix_bin, solve_normal_equations, write_matrix_bin

_TWO_PI = 2.0 * np.pi


def _pairs(x, z):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return x[:, None, :], z[None, :, :]


def _check_sep(dx):
    if np.any(np.linalg.norm(dx, axis=-1) < 1e-12):
        raise SourceOnBoundary("source point coincides with evaluation point")


def neumann_disc(x, z, rho=1.0, const_alt=False):
    """Closed-form Neumann function of a disc of radius ``rho``.

    N = -(1/2pi) (ln|x - z| + ln|(rho/|x|) x - (|x|/rho) z| + c), with
    c = ln(rho)/pi, or ln(rho)/(2 pi) when ``const_alt`` is set. Accepts
    single points or arrays (result has shape (n_x, n_z) for arrays).
    """
    scalar = np.ndim(x) == 1 and np.ndim(z) == 1
    X, Z = _pairs(x, z)
    dx = X - Z
    _check_sep(dx)
    rx = np.linalg.norm(X, axis=-1, keepdims=True)
    img = (rho / rx) * X - (rx / rho) * Z
    c = np.log(rho) / (_TWO_PI if const_alt else np.pi)
    val = -(np.log(np.linalg.norm(dx, axis=-1)) + np.log(np.linalg.norm(img, axis=-1)) + c) / _TWO_PI
    return float(val[0, 0]) if scalar else val


def grad_z_neumann_disc(x, z, rho=1.0):
    """Analytic gradient in the source point z; shape (n_x, n_z, 2) for arrays."""
    scalar = np.ndim(x) == 1 and np.ndim(z) == 1
    X, Z = _pairs(x, z)
    dx = X - Z
    _check_sep(dx)
    rx = np.linalg.norm(X, axis=-1, keepdims=True)
    img = (rho / rx) * X - (rx / rho) * Z
    g = (dx / np.sum(dx**2, axis=-1, keepdims=True)
         + (rx / rho) * img / np.sum(img**2, axis=-1, keepdims=True)) / _TWO_PI
    return g[0, 0] if scalar else g


def neumann_freespace(x, z):
    scalar = np.ndim(x) == 1 and np.ndim(z) == 1
    X, Z = _pairs(x, z)
    dx = X - Z
    _check_sep(dx)
    val = -np.log(np.linalg.norm(dx, axis=-1)) / _TWO_PI
    return float(val[0, 0]) if scalar else val


def grad_z_neumann_freespace(x, z):
    scalar = np.ndim(x) == 1 and np.ndim(z) == 1
    X, Z = _pairs(x, z)
    dx = X - Z
    _check_sep(dx)
    g = dx / (_TWO_PI * np.sum(dx**2, axis=-1, keepdims=True))
    return g[0, 0] if scalar else g


def neumann_system(mesh):
    """Stacked operator (A; F) and right-hand side (G; 0) of the discrete Neumann problem."""
    A = assemble_stiffness(mesh, np.ones(mesh.n_elems))
    be = mesh.boundary_edges
    h = np.linalg.norm(mesh.nodes[be[:, 1]] - mesh.nodes[be[:, 0]], axis=1)
    F = np.zeros(mesh.n_nodes)
    np.add.at(F, be[:, 0], 0.5 * h)
    np.add.at(F, be[:, 1], 0.5 * h)
    perimeter = h.sum()
    G = np.eye(mesh.n_nodes) - (F / perimeter)[:, None]
    op = sp.vstack([A, sp.csr_matrix(F[None, :])]).tocsc()
    rhs = np.vstack([G, np.zeros((1, mesh.n_nodes))])
    return op, rhs, F


def neumann_fem(mesh, cache_dir=None):
    """Nodal table Gamma (N_N x N_N); column k approximates N(., x_k).

    Solved once through the normal equations of the stacked system. With
    ``cache_dir`` the table is stored as ``neumann_<meshhash>.bin``.
    """
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"neumann_{mesh.hash}.bin"
        if path.exists():
            return read_matrix_bin(path)
    op, rhs, _ = neumann_system(mesh)
    table = solve_normal_equations(op, rhs)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_matrix_bin(path, table)
    return table


class NeumannEvaluator:
    """Evaluate N(x, z) and grad_z N(x, z) for boundary points x and interior sources z.

    ``mode`` is ``'disc'``, ``'freespace'`` or ``'fem'`` (the latter needs
    ``mesh``; ``table`` may be supplied to skip the solve).
    """

    def __init__(self, mode="disc", radius=1.0, const_alt=False, mesh=None, table=None, cache_dir=None):
        if mode not in ("disc", "freespace", "fem"):
            raise ValueError(f"unknown Neumann mode {mode!r}")
        self.mode = mode
        self.radius = float(radius)
        self.const_alt = const_alt
        self.mesh = mesh
        self.table = None
        if mode == "fem":
            if mesh is None:
                raise ValueError("fem mode needs a mesh")
            self.table = neumann_fem(mesh, cache_dir) if table is None else np.asarray(table)

    def _check_disc(self, x, z):
        x = np.atleast_2d(x)
        z = np.atleast_2d(z)
        if np.any(np.abs(np.linalg.norm(x, axis=1) - self.radius) > 1e-9 * self.radius):
            raise ValueError("disc mode evaluation points must lie on the circle")
        if np.any(np.linalg.norm(z, axis=1) >= self.radius):
            raise SourceOnBoundary("source must lie strictly inside the disc")

    def value(self, x, z):
        if self.mode == "disc":
            self._check_disc(x, z)
            return neumann_disc(x, z, self.radius, self.const_alt)
        if self.mode == "freespace":
            return neumann_freespace(x, z)
        scalar = np.ndim(x) == 1 and np.ndim(z) == 1
        R = self._rows(np.atleast_2d(x))                      # (n_x, N_N)
        zz = np.atleast_2d(np.asarray(z, dtype=float))
        el = self.mesh.locate(zz)
        if np.any(el < 0):
            raise SourceOnBoundary("source outside the mesh")
        tri = self.mesh.nodes[self.mesh.elems[el]]
        lam = _barycentric(tri, zz)                           # (n_z, 3)
        vals = np.einsum("xzk,zk->xz", R[:, self.mesh.elems[el]], lam)
        return float(vals[0, 0]) if scalar else vals

    def grad_z(self, x, z):
        if self.mode == "disc":
            self._check_disc(x, z)
            return grad_z_neumann_disc(x, z, self.radius)
        if self.mode == "freespace":
            return grad_z_neumann_freespace(x, z)
        scalar = np.ndim(x) == 1 and np.ndim(z) == 1
        R = self._rows(np.atleast_2d(x))
        zz = np.atleast_2d(np.asarray(z, dtype=float))
        el = self.mesh.locate(zz)
        if np.any(el < 0):
            raise SourceOnBoundary("source outside the mesh")
        out = np.empty((R.shape[0], len(zz), 2))
        for k, (e, p) in enumerate(zip(el, zz)):
            out[:, k, :] = self._patch_gradient(R, e, p)
        return out[0, 0] if scalar else out

    def _rows(self, x):
        """Table values at boundary points x for every source node: (n_x, N_N)."""
        be = self.mesh.boundary_edges
        rows = []
        for p in x:
            _, k, s = self.mesh.boundary_point(np.arctan2(p[1], p[0]))
            i, j = be[k]
            rows.append((1.0 - s) * self.table[i] + s * self.table[j])
        return np.array(rows)

    def _patch_gradient(self, R, element, point):
        # quadratic least-squares fit over the nodes of the element and its edge neighbours
        mesh = self.mesh
        nbrs = mesh.adjacency[element].indices
        patch = np.unique(mesh.elems[np.r_[element, nbrs]].ravel())
        xy = mesh.nodes[patch] - point
        if len(patch) >= 6:
            V = np.column_stack([np.ones(len(patch)), xy[:, 0], xy[:, 1],
                                 xy[:, 0] ** 2, xy[:, 0] * xy[:, 1], xy[:, 1] ** 2])
        else:
            V = np.column_stack([np.ones(len(patch)), xy[:, 0], xy[:, 1]])
        coef, *_ = np.linalg.lstsq(V, R[:, patch].T, rcond=None)
        return coef[1:3].T


def _barycentric(tri, p):
    v0 = tri[:, 0]
    T = np.stack([tri[:, 1] - v0, tri[:, 2] - v0], axis=2)
    lam12 = np.linalg.solve(T, (p - v0)[..., None])[..., 0]
    return np.column_stack([1.0 - lam12.sum(axis=1), lam12])


def grad_z_neumann(evaluator, x, z):
    return evaluator.grad_z(x, z)
