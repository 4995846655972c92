"""Complete electrode model (CEM) forward problem on P1 triangles.

The block system

    [A(m) + B   P] [alpha]   [0]
    [P^T        Q] [beta ] = [I]

is reduced by grounding one interior node and factorized once per
conductivity; all current patterns reuse the factorization.
"""

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NoElectrodes, SingularMatrix, SingularSystem
from .numerics import Factorization

DEFAULT_CONTACT_IMPEDANCE = 0.01


def adjacent_patterns(n_electrodes):
    """Adjacent drive: column n injects +1 at electrode n and -1 at n + 1."""
    if n_electrodes < 2:
        raise ValueError("need at least two electrodes")
    I = np.zeros((n_electrodes, n_electrodes - 1))
    n = np.arange(n_electrodes - 1)
    I[n, n] = 1.0
    I[n + 1, n] = -1.0
    return I


def check_patterns(patterns, n_electrodes):
    patterns = np.asarray(patterns, dtype=float)
    if patterns.ndim != 2 or patterns.shape[0] != n_electrodes:
        raise DimensionMismatch(f"patterns must have {n_electrodes} rows, got {patterns.shape}")
    if np.any(np.abs(patterns.sum(axis=0)) > 1e-12 * max(1.0, np.abs(patterns).max())):
        raise ValueError("every current pattern must sum to zero")
    return patterns


def check_conductivity(m, n_elems):
    m = np.asarray(m, dtype=float)
    if m.shape != (n_elems,):
        raise DimensionMismatch(f"conductivity has shape {m.shape}, mesh has {n_elems} elements")
    if not np.all(np.isfinite(m)):
        raise ValueError("conductivity has non-finite entries")
    if np.any(m <= 0):
        raise SingularSystem("conductivity must be strictly positive")
    return m


def measurement_mask(patterns, dedupe_reciprocal=False, skip_driven=False):
    """Boolean selection over the raw N_L * N_P adjacent-difference data.

    Raw index ``r = N_L * n + l`` (0-based) is the difference
    ``beta[(l + 1) % N_L] - beta[l]`` under pattern ``n``.
    """
    n_l, n_p = patterns.shape
    n, l = np.divmod(np.arange(n_l * n_p), n_l)
    keep = np.ones(n_l * n_p, dtype=bool)
    if dedupe_reciprocal:
        # the wrap-around difference is the negated sum of the others; of the
        # remaining square block only the upper triangle is independent
        keep &= (l < n_l - 1) & (l >= n)
    if skip_driven:
        driven = np.abs(patterns) > 0
        keep &= ~(driven[l, n] | driven[(l + 1) % n_l, n])
    return keep


def measurement_operator(n_nodes, n_electrodes):
    """(N_L, N_N + N_L) rows t^[l] picking beta[(l+1) % N_L] - beta[l]."""
    T = np.zeros((n_electrodes, n_nodes + n_electrodes))
    l = np.arange(n_electrodes)
    T[l, n_nodes + (l + 1) % n_electrodes] += 1.0
    T[l, n_nodes + l] -= 1.0
    return T


def assemble_stiffness(mesh, m):
    """Global P1 stiffness for piecewise-constant conductivity ``m``."""
    m = np.asarray(m, dtype=float)
    if m.shape != (mesh.n_elems,):
        raise DimensionMismatch(f"conductivity has shape {m.shape}, mesh has {mesh.n_elems} elements")
    rows = np.repeat(mesh.elems, 3, axis=1).ravel()
    cols = np.tile(mesh.elems, (1, 3)).ravel()
    vals = (m[:, None, None] * mesh.local_stiffness).ravel()
    return sp.csc_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_electrode_blocks(mesh, eta):
    """Contact-impedance blocks ``B`` (N_N x N_N), ``P`` (N_N x N_L) and ``Q`` (diagonal, N_L).

    Edge integrals of products of linear hat functions are exact: an edge of
    length h contributes (h/6)[[2, 1], [1, 2]] to B and h/2 per node to P.
    """
    n_l = mesh.n_electrodes
    if n_l == 0:
        raise NoElectrodes("mesh has no electrodes")
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n_l,))
    if np.any(eta <= 0):
        raise ValueError("contact impedances must be positive")
    be = mesh.boundary_edges
    Bi, Bj, Bv, Pi, Pj, Pv = [], [], [], [], [], []
    q = np.zeros(n_l)
    for l, edges in enumerate(mesh.electrodes):
        p, r = be[edges, 0], be[edges, 1]
        h = np.linalg.norm(mesh.nodes[r] - mesh.nodes[p], axis=1) / eta[l]
        Bi += [p, r, p, r]
        Bj += [p, r, r, p]
        Bv += [h / 3, h / 3, h / 6, h / 6]
        Pi += [p, r]
        Pj += [np.full(len(p), l)] * 2
        Pv += [-h / 2, -h / 2]
        q[l] = h.sum()
    nn = mesh.n_nodes
    B = sp.csc_matrix((np.concatenate(Bv), (np.concatenate(Bi), np.concatenate(Bj))), shape=(nn, nn))
    P = sp.csc_matrix((np.concatenate(Pv), (np.concatenate(Pi), np.concatenate(Pj))), shape=(nn, n_l))
    return B, P, q


@dataclass
class MeasurementFrame:
    """Raw adjacent-difference data with (pattern, electrode) provenance (0-based)."""

    values: np.ndarray
    n_electrodes: int
    keep: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size % self.n_electrodes:
            raise DimensionMismatch("data length is not a multiple of the electrode count")
        if self.keep is None:
            self.keep = np.ones(self.values.size, dtype=bool)

    @property
    def pattern(self):
        return np.arange(self.values.size) // self.n_electrodes

    @property
    def electrode(self):
        return np.arange(self.values.size) % self.n_electrodes

    @staticmethod
    def index(n, l, n_electrodes):
        """Raw row for 1-based pattern ``n`` and electrode ``l``: r = N_L (n - 1) + l (1-based)."""
        return n_electrodes * (n - 1) + l

    @property
    def selected(self):
        return self.values[self.keep]


def write_data_csv(path, values, n_electrodes):
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern", "electrode", "value"])
        for r, v in enumerate(values.tolist()):
            n, l = divmod(r, n_electrodes)
            w.writerow([n + 1, l + 1, repr(v)])


def read_data_csv(path, n_electrodes):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.empty(len(rows))
    for row in rows:
        r = MeasurementFrame.index(int(row["pattern"]), int(row["electrode"]), n_electrodes) - 1
        out[r] = float(row["value"])
    return out


class CEMSystem:
    """Assembled and factorized CEM system for one conductivity."""

    def __init__(self, mesh, m, eta=DEFAULT_CONTACT_IMPEDANCE, blocks=None):
        self.mesh = mesh
        self.m = check_conductivity(m, mesh.n_elems)
        B, P, q = blocks if blocks is not None else assemble_electrode_blocks(mesh, eta)
        A = assemble_stiffness(mesh, self.m)
        self.S = sp.bmat([[A + B, P], [P.T, sp.diags(q)]], format="csc")
        n = self.S.shape[0]
        self.ground = mesh.ground_node
        self.free = np.delete(np.arange(n), self.ground)
        self.S_reduced = self.S[self.free][:, self.free].tocsc()
        try:
            self.factor = Factorization(self.S_reduced)
        except SingularMatrix as exc:
            raise SingularSystem(str(exc)) from exc

    @property
    def size(self):
        return self.S.shape[0]

    def solve(self, rhs):
        """Solve with full-length right-hand side(s); returns full-length solution(s), zero at ground."""
        rhs = np.asarray(rhs, dtype=float)
        x = np.zeros_like(rhs)
        x[self.free] = self.factor.solve(rhs[self.free])
        return x

    def solve_forward(self, patterns):
        """Nodal potentials (N_N, P), electrode potentials (N_L, P) and raw data frame."""
        n_n, n_l = self.mesh.n_nodes, self.mesh.n_electrodes
        patterns = check_patterns(patterns, n_l)
        h = np.zeros((self.size, patterns.shape[1]))
        h[n_n:] = patterns
        u = self.solve(h)
        beta = u[n_n:]
        diffs = np.roll(beta, -1, axis=0) - beta
        frame = MeasurementFrame(diffs.T.ravel(), n_l)
        return u[:n_n], beta, frame


class ForwardModel:
    """Forward map F(m) for a fixed mesh, electrodes and current patterns.

    ``f`` vectors returned by this class are already restricted to the
    selected measurements (see :func:`measurement_mask`).
    """

    def __init__(self, mesh, eta=DEFAULT_CONTACT_IMPEDANCE, patterns=None,
                 dedupe_reciprocal=False, skip_driven=False):
        self.mesh = mesh
        self.eta = np.broadcast_to(np.asarray(eta, dtype=float), (mesh.n_electrodes,)).copy()
        self.patterns = check_patterns(
            adjacent_patterns(mesh.n_electrodes) if patterns is None else patterns, mesh.n_electrodes)
        self.keep = measurement_mask(self.patterns, dedupe_reciprocal, skip_driven)
        self.blocks = assemble_electrode_blocks(mesh, self.eta)
        self.T = measurement_operator(mesh.n_nodes, mesh.n_electrodes)
        self.n_solves = 0

    @property
    def n_data(self):
        return int(self.keep.sum())

    @property
    def n_patterns(self):
        return self.patterns.shape[1]

    def select(self, raw):
        raw = np.asarray(raw, dtype=float)
        if raw.shape != self.keep.shape:
            raise DimensionMismatch(f"raw data has shape {raw.shape}, expected {self.keep.shape}")
        return raw[self.keep]

    def system(self, m):
        return CEMSystem(self.mesh, m, self.eta, blocks=self.blocks)

    def state(self, m):
        return ForwardState(self, m)

    def raw(self, m):
        _, _, frame = self.system(m).solve_forward(self.patterns)
        self.n_solves += self.n_patterns
        return frame.values

    def __call__(self, m):
        return self.select(self.raw(m))


class ForwardState:
    """Forward (and lazily, adjoint) fields of a model at one conductivity."""

    def __init__(self, model, m):
        self.model = model
        self.mesh = model.mesh
        self.system = model.system(m)
        self.m = self.system.m
        n_n = self.mesh.n_nodes
        h = np.zeros((self.system.size, model.n_patterns))
        h[n_n:] = model.patterns
        self.u = self.system.solve(h)
        model.n_solves += model.n_patterns
        self.f_raw = (model.T @ self.u).T.ravel()
        self.f = self.f_raw[model.keep]

    @cached_property
    def w(self):
        """Adjoint fields, one column per measurement operator t^[l] (S is symmetric)."""
        self.model.n_solves += self.mesh.n_electrodes
        return self.system.solve(self.model.T.T)

    @cached_property
    def element_gradients(self):
        """(P, E, 2) constant gradient of each pattern's nodal potential on each element."""
        alpha = self.u[: self.mesh.n_nodes]
        return np.einsum("eik,ein->nek", self.mesh.grads, alpha[self.mesh.elems])
