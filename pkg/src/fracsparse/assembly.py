"""Assembly of the weighted bilinear form on the truncated cylinder.

The vertical direction carries the Muckenhoupt weight y^alpha, which is
singular or degenerate at the trace plane.  All vertical integrals reduce
to the monomial moments of the weight over each interval, available in
closed form, so the assembled matrix is exact: no quadrature touches the
weight.  The base direction uses standard P1/Q1 element matrices on the
uniform grid, and the tensor structure of the elements turns every local
matrix into a Kronecker product of one-dimensional factors.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, MeshMismatchError
from .fields import ControlField, CylinderField, TraceField
from .problem import derived_constants

__all__ = [
    "SparseMatrix",
    "weight_moments",
    "assemble_stiffness",
    "assemble_operator",
    "assemble_trace_load",
    "trace_of",
    "cell_averages",
    "l2_inner_omega",
    "p1_mass_apply",
    "gradient_tail_energy",
]


@dataclass
class SparseMatrix:
    """Square sparse operator in compressed-row storage."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        self._csr = None

    @classmethod
    def from_scipy(cls, mat, symmetric=True):
        csr = sp.csr_array(mat)
        out = cls(csr.shape[0], csr.indptr, csr.indices, csr.data, symmetric)
        out._csr = csr
        return out

    def to_scipy(self):
        if self._csr is None:
            self._csr = sp.csr_array(
                (self.data, self.indices, self.indptr), shape=(self.n, self.n)
            )
        return self._csr

    def matvec(self, x):
        return self.to_scipy() @ x

    def diagonal(self):
        return self.to_scipy().diagonal()

    def to_dense(self):
        return self.to_scipy().toarray()

    @property
    def nnz(self):
        return self.data.size

    def export_triplets(self, path):
        """Write one ``row col value`` line per stored entry."""
        coo = self.to_scipy().tocoo()
        with open(path, "w") as fh:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")


def weight_moments(y0, y1, alpha):
    """Moments (m0, m1, m2) of the weight: m_j = integral of y^(alpha+j) on (y0, y1).

    Closed-form antiderivatives; finite for alpha > -1 even when y0 = 0.
    Accepts scalars or arrays for the interval endpoints.
    """
    if alpha <= -1.0 or alpha >= 1.0:
        raise InvalidParameterError(f"weight exponent must be in (-1,1), got {alpha}")
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    if np.any(y0 < 0) or np.any(y1 <= y0):
        raise InvalidParameterError("weight moments require 0 <= y0 < y1")
    out = []
    for j in range(3):
        p = alpha + j + 1.0
        out.append((y1**p - y0**p) / p)
    return tuple(out)


def _interval_matrices_weighted(ya, yb, alpha, t0=None, t1=None):
    """Weighted 2x2 mass and stiffness factors of the vertical hats.

    The hat functions live on (ya, yb); the integration range may be
    restricted to (t0, t1) for partial-cell tail energies.  Shapes follow
    the inputs: arrays of intervals give stacked (m, 2, 2) factors.
    """
    ya = np.asarray(ya, dtype=float)
    yb = np.asarray(yb, dtype=float)
    lo = ya if t0 is None else np.asarray(t0, dtype=float)
    hi = yb if t1 is None else np.asarray(t1, dtype=float)
    m0, m1, m2 = weight_moments(lo, hi, alpha)
    h = yb - ya
    h2 = h * h
    mass = np.empty(np.shape(ya) + (2, 2))
    mass[..., 0, 0] = (yb**2 * m0 - 2.0 * yb * m1 + m2) / h2
    mass[..., 0, 1] = (-m2 + (ya + yb) * m1 - ya * yb * m0) / h2
    mass[..., 1, 0] = mass[..., 0, 1]
    mass[..., 1, 1] = (m2 - 2.0 * ya * m1 + ya**2 * m0) / h2
    stiff = np.empty_like(mass)
    stiff[..., 0, 0] = m0 / h2
    stiff[..., 0, 1] = -m0 / h2
    stiff[..., 1, 0] = -m0 / h2
    stiff[..., 1, 1] = m0 / h2
    return mass, stiff


def _segment_matrices(w):
    """Unweighted P1 stiffness and mass on an interval of width w."""
    stiff = np.array([[1.0, -1.0], [-1.0, 1.0]]) / w
    mass = w / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return stiff, mass


def _base_matrices(base):
    """Stiffness and mass of the base element (2x2 for n=1, 4x4 Q1 for n=2)."""
    if base.dim == 1:
        w = float(base.axes[0][1] - base.axes[0][0])
        return _segment_matrices(w)
    w1 = float(base.axes[0][1] - base.axes[0][0])
    w2 = float(base.axes[1][1] - base.axes[1][0])
    s1, m1 = _segment_matrices(w1)
    s2, m2 = _segment_matrices(w2)
    stiff = np.kron(m2, s1) + np.kron(s2, m1)
    mass = np.kron(m2, m1)
    return stiff, mass


def _cell_coefficients(mesh, cfg, diffusion, reaction):
    """Midpoint samples of the scalar diffusion and reaction per base cell."""
    base = mesh.base
    if diffusion is None and reaction is None and cfg.c_coeff == 0.0:
        return None, None
    if base.dim == 1:
        nodes = base.axes[0]
        mids = (0.5 * (nodes[:-1] + nodes[1:]),)
    else:
        coords = base.node_coords[base.cell_nodes]
        mids = (coords[:, :, 0].mean(axis=1), coords[:, :, 1].mean(axis=1))
    a = None if diffusion is None else np.asarray(diffusion(*mids), dtype=float)
    if reaction is not None:
        c = np.asarray(reaction(*mids), dtype=float)
    elif cfg.c_coeff != 0.0:
        c = np.full(base.n_cells, cfg.c_coeff)
    else:
        c = None
    return a, c


def assemble_operator(
    mesh, cfg, diffusion=None, reaction=None, reduced=True, gradient_only=False
):
    """Assemble the weighted stiffness/reaction operator of the cylinder form.

    Entry (i, j) is the bilinear form evaluated on the tensor hat functions
    of nodes j and i, scaled by 1/d_s.  With ``reduced`` the Dirichlet rows
    and columns are eliminated, leaving the positive definite system on the
    free nodes.  ``gradient_only`` drops the reaction term (used by tests
    that probe the kernel of the pure-gradient part).
    """
    base = mesh.base
    axis = mesh.axis
    consts = derived_constants(cfg)
    nb = base.n_nodes
    db = 2**base.dim

    s_base, m_base = _base_matrices(base)
    mw, sw = _interval_matrices_weighted(axis.nodes[:-1], axis.nodes[1:], consts.alpha)

    # Kronecker factors per vertical interval: (M, 2*db, 2*db)
    k_grad_base = np.einsum("kab,cd->kacbd", mw, s_base).reshape(axis.M, 2 * db, 2 * db)
    k_grad_vert = np.einsum("kab,cd->kacbd", sw, m_base).reshape(axis.M, 2 * db, 2 * db)

    a_coef, c_coef = _cell_coefficients(mesh, cfg, diffusion, reaction)
    ncb = base.n_cells
    if a_coef is None:
        local = k_grad_base[:, None, :, :] + k_grad_vert[:, None, :, :]
        local = np.broadcast_to(local, (axis.M, ncb, 2 * db, 2 * db)).copy()
    else:
        local = (
            a_coef[None, :, None, None] * k_grad_base[:, None, :, :]
            + k_grad_vert[:, None, :, :]
        )
    if c_coef is not None and not gradient_only:
        k_react = np.einsum("kab,cd->kacbd", mw, m_base).reshape(axis.M, 2 * db, 2 * db)
        local = local + c_coef[None, :, None, None] * k_react[:, None, :, :]
    local = local / consts.d_s

    # global node ids of the 2*db local nodes of every (level, base cell)
    levels = np.arange(axis.M)
    gn = np.empty((axis.M, ncb, 2 * db), dtype=np.int64)
    for ly in range(2):
        gn[:, :, ly * db : (ly + 1) * db] = (
            (levels[:, None, None] + ly) * nb + base.cell_nodes[None, :, :]
        )

    rows = np.repeat(gn, 2 * db, axis=2).ravel()
    cols = np.tile(gn, (1, 1, 2 * db)).ravel()
    vals = local.ravel()
    n_nodes = mesh.n_nodes
    full = sp.coo_array((vals, (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    if not reduced:
        return SparseMatrix.from_scipy(full)
    free = mesh.free_nodes
    return SparseMatrix.from_scipy(full[free][:, free])


def assemble_stiffness(mesh, cfg, diffusion=None, reaction=None):
    """Reduced weighted operator on the free nodes (see assemble_operator)."""
    return assemble_operator(mesh, cfg, diffusion=diffusion, reaction=reaction)


def assemble_trace_load(mesh, z):
    """Load vector of a piecewise-constant control against the trace basis.

    Entry i is the integral of z times the trace of hat i, exact for P0
    data, and zero for nodes off the trace plane.  Returned in the reduced
    (free-node) numbering.
    """
    base = mesh.base
    if not isinstance(z, ControlField) or not z.mesh.matches(base):
        raise MeshMismatchError("control field does not live on the cylinder base")
    b_full = np.zeros(mesh.n_nodes)
    corners = base.cell_nodes
    share = z.values * base.cell_measures / corners.shape[1]
    for c in range(corners.shape[1]):
        np.add.at(b_full, corners[:, c], share)
    return b_full[mesh.free_nodes]


def trace_of(v):
    """Restriction of a cylinder field to the trace plane y = 0."""
    if not isinstance(v, CylinderField):
        raise MeshMismatchError("trace_of expects a CylinderField")
    nb = v.mesh.base.n_nodes
    return TraceField(v.mesh.base, v.values[:nb].copy())


def cell_averages(f, base):
    """Per-cell averages of a P1 function: the L2 projection onto P0.

    Exact because the average of a (multi)linear function over a cell is
    the mean of its corner values.
    """
    if not isinstance(f, TraceField) or not f.mesh.matches(base):
        raise MeshMismatchError("trace field does not live on the given base mesh")
    return ControlField(base, f.values[base.cell_nodes].mean(axis=1))


def _mass_apply_axis(axis_nodes, vals):
    """Exact P1 mass application along the last array axis."""
    w = np.diff(axis_nodes)
    out = np.zeros_like(vals)
    out[..., :-1] += w / 6.0 * (2.0 * vals[..., :-1] + vals[..., 1:])
    out[..., 1:] += w / 6.0 * (vals[..., :-1] + 2.0 * vals[..., 1:])
    return out


def p1_mass_apply(base, nodal):
    """Apply the exact P1/Q1 mass matrix of the base mesh to nodal values."""
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (base.n_nodes,):
        raise MeshMismatchError(
            f"expected {base.n_nodes} nodal values, got {nodal.shape}"
        )
    if base.dim == 1:
        return _mass_apply_axis(base.axes[0], nodal)
    n1 = base.axes[0].size
    n2 = base.axes[1].size
    grid = nodal.reshape(n2, n1)
    out = _mass_apply_axis(base.axes[0], grid)
    out = _mass_apply_axis(base.axes[1], out.T).T
    return out.ravel()


def l2_inner_omega(f, g):
    """Exact L2(Omega) inner product of two P1 trace fields."""
    if not isinstance(f, TraceField) or not isinstance(g, TraceField):
        raise MeshMismatchError("l2_inner_omega expects TraceFields")
    if not f.mesh.matches(g.mesh):
        raise MeshMismatchError("trace fields live on different base meshes")
    return float(np.dot(p1_mass_apply(f.mesh, f.values), g.values))


def gradient_tail_energy(v, cfg, y_cut, diffusion=None):
    """Weighted gradient energy of a cylinder field over Omega x (y_cut, Y).

    Integrates y^alpha |A^(1/2) grad v|^2 exactly on every cell, splitting
    the cell that straddles y_cut.  Returns the norm (square root of the
    tail integral), without the 1/d_s prefactor.
    """
    mesh = v.mesh
    base = mesh.base
    axis = mesh.axis
    alpha = derived_constants(cfg).alpha
    if y_cut >= axis.height:
        return 0.0
    s_base, m_base = _base_matrices(base)
    a_coef, _ = _cell_coefficients(mesh, cfg, diffusion, None)
    nb = base.n_nodes
    db = 2**base.dim
    total = 0.0
    for k in range(axis.M):
        ya, yb = axis.nodes[k], axis.nodes[k + 1]
        if yb <= y_cut:
            continue
        t0 = max(ya, y_cut)
        if t0 >= yb:
            continue
        mw, sw = _interval_matrices_weighted(ya, yb, alpha, t0=t0, t1=yb)
        k_grad_base = np.kron(mw, s_base)
        k_grad_vert = np.kron(sw, m_base)
        gn = np.concatenate(
            [k * nb + base.cell_nodes, (k + 1) * nb + base.cell_nodes], axis=1
        )
        vloc = v.values[gn]  # (ncb, 2*db)
        e_base = np.einsum("ci,ij,cj->c", vloc, k_grad_base, vloc)
        e_vert = np.einsum("ci,ij,cj->c", vloc, k_grad_vert, vloc)
        if a_coef is not None:
            e_base = a_coef * e_base
        total += float(np.sum(e_base + e_vert))
    return float(np.sqrt(max(total, 0.0)))
