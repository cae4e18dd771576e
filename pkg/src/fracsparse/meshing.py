"""Meshes for the truncated cylinder: uniform base grids, the graded
vertical axis, and their tensor product with Dirichlet bookkeeping.

The vertical axis concentrates nodes near the trace plane through the
power-law grading y_k = (k/M)^gamma * Y with gamma = 3/(2s), which
compensates the singular behaviour of the extended solution in y.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, UnsupportedDimensionError

__all__ = [
    "BaseMesh",
    "GradedAxis",
    "ExtendedMesh",
    "build_base",
    "graded_axis",
    "truncation_height",
    "tensor_mesh",
    "balanced_M",
    "grading_exponent",
]


def grading_exponent(s):
    """Mesh grading exponent gamma = 3/(2s) > 1 for fractional order s."""
    if not 0.0 < s < 1.0:
        raise InvalidParameterError(f"fractional order s must be in (0,1), got {s}")
    return 3.0 / (2.0 * s)


@dataclass(frozen=True)
class BaseMesh:
    """Uniform tensor-product partition of Omega = (0,L)^dim, dim in {1,2}.

    Nodes are numbered with the first axis fastest: node (j1, j2) has the
    global index j2*n1 + j1.  Cells follow the same convention, and
    ``cell_nodes`` lists the 2**dim corners of each cell in local order
    (00, 10, 01, 11).
    """

    dim: int
    length: float
    axes: tuple
    cell_nodes: np.ndarray
    cell_measures: np.ndarray
    boundary: np.ndarray

    @property
    def n_nodes(self):
        return self.boundary.size

    @property
    def n_cells(self):
        return self.cell_nodes.shape[0]

    @property
    def h(self):
        """Largest cell edge length."""
        return max(float(np.max(np.diff(ax))) for ax in self.axes)

    @property
    def node_coords(self):
        """(n_nodes, dim) array of node coordinates."""
        if self.dim == 1:
            return self.axes[0][:, None]
        x1, x2 = np.meshgrid(self.axes[0], self.axes[1], indexing="xy")
        return np.column_stack([x1.ravel(), x2.ravel()])

    def matches(self, other):
        """Structural compatibility: same dimension and node layout."""
        return (
            self.dim == other.dim
            and len(self.axes) == len(other.axes)
            and all(
                a.shape == b.shape and np.allclose(a, b)
                for a, b in zip(self.axes, other.axes)
            )
        )


def build_base(n, length, cells_per_side):
    """Uniform partition of (0, length)^n into intervals (n=1) or squares (n=2)."""
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"base dimension must be 1 or 2, got {n}")
    if cells_per_side < 1:
        raise InvalidParameterError("cells_per_side must be >= 1")
    if length <= 0:
        raise InvalidParameterError("domain length must be positive")

    axis = np.linspace(0.0, length, cells_per_side + 1)
    if n == 1:
        cells = np.column_stack([np.arange(cells_per_side), np.arange(1, cells_per_side + 1)])
        measures = np.diff(axis)
        boundary = np.zeros(cells_per_side + 1, dtype=bool)
        boundary[0] = boundary[-1] = True
        return BaseMesh(1, float(length), (axis,), cells, measures, boundary)

    m = cells_per_side
    n1 = m + 1
    c1, c2 = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    c1 = c1.ravel()
    c2 = c2.ravel()
    ll = c2 * n1 + c1
    cells = np.column_stack([ll, ll + 1, ll + n1, ll + n1 + 1])
    measures = np.full(m * m, (length / m) ** 2)
    j1, j2 = np.meshgrid(np.arange(n1), np.arange(n1), indexing="xy")
    boundary = ((j1 == 0) | (j1 == m) | (j2 == 0) | (j2 == m)).ravel()
    return BaseMesh(2, float(length), (axis, axis.copy()), cells, measures, boundary)


@dataclass(frozen=True)
class GradedAxis:
    """Graded partition of [0, Y] with nodes y_k = (k/M)^gamma * Y."""

    M: int
    height: float
    gamma: float
    nodes: np.ndarray

    @property
    def widths(self):
        return np.diff(self.nodes)


def graded_axis(M, Y, s):
    """Power-law graded axis with gamma derived from the fractional order."""
    if M < 1:
        raise InvalidParameterError("number of vertical intervals M must be >= 1")
    if Y <= 0:
        raise InvalidParameterError("truncation height must be positive")
    gamma = grading_exponent(s)
    k = np.arange(M + 1, dtype=float)
    nodes = (k / M) ** gamma * Y
    nodes[0] = 0.0
    nodes[-1] = float(Y)
    return GradedAxis(int(M), float(Y), gamma, nodes)


def truncation_height(n_total, lambda_1, target_tol=None):
    """Truncation height balancing the tail decay against the mesh error.

    Returns Y = max(1, (4/sqrt(lambda_1)) * log(n_total)) so that
    exp(-sqrt(lambda_1) Y / 4) <= 1/n_total.  When ``target_tol`` is given,
    Y is additionally raised until the tail bound falls below it.
    """
    if n_total < 2:
        raise InvalidParameterError("total cell count must be >= 2")
    if lambda_1 <= 0:
        raise InvalidParameterError("first eigenvalue must be positive")
    scale = 4.0 / math.sqrt(lambda_1)
    y = scale * math.log(n_total)
    if target_tol is not None:
        if target_tol <= 0:
            raise InvalidParameterError("target_tol must be positive")
        y = max(y, scale * math.log(1.0 / target_tol))
    return max(1.0, y)


def balanced_M(base_cells, n):
    """Vertical interval count balancing the base resolution: round(#cells^(1/n))."""
    if base_cells < 1:
        raise InvalidParameterError("base_cells must be >= 1")
    if n not in (1, 2):
        raise UnsupportedDimensionError(f"base dimension must be 1 or 2, got {n}")
    return int(round(base_cells ** (1.0 / n)))


@dataclass(frozen=True)
class ExtendedMesh:
    """Tensor-product mesh of the truncated cylinder Omega x (0, Y).

    Global node (b, k), base node b at axis level k, has index k*nb + b.
    Dirichlet nodes sit on the lateral boundary (base node on the boundary
    of Omega, any level) and on the top lid y = Y.  Nodes of the trace
    plane y = 0 with interior base node stay free.
    """

    base: BaseMesh
    axis: GradedAxis
    dirichlet_mask: np.ndarray
    free_nodes: np.ndarray = field(repr=False)
    dof_index: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return self.dirichlet_mask.size

    @property
    def n_free(self):
        return self.free_nodes.size

    @property
    def n_cells(self):
        return self.base.n_cells * self.axis.M

    @property
    def trace_nodes(self):
        """Global node ids on the trace plane that carry degrees of freedom."""
        return np.flatnonzero(~self.base.boundary)

    @property
    def trace_dofs(self):
        """Positions of the trace-plane nodes within the free numbering."""
        return self.dof_index[self.trace_nodes]

    def node_index(self, base_node, level):
        return level * self.base.n_nodes + base_node

    def summary(self):
        """Scalar mesh descriptors for harness logs."""
        return {
            "base_cells": self.base.n_cells,
            "n_total_cells": self.n_cells,
            "n_nodes": self.n_nodes,
            "n_free": self.n_free,
            "h": self.base.h,
            "M": self.axis.M,
            "Y": self.axis.height,
        }


def tensor_mesh(base, axis):
    """Tensor product of a base partition and a graded axis."""
    nb = base.n_nodes
    levels = axis.M + 1
    mask = np.tile(base.boundary, levels)
    mask[(levels - 1) * nb :] = True
    free = np.flatnonzero(~mask)
    dof_index = np.full(nb * levels, -1, dtype=np.int64)
    dof_index[free] = np.arange(free.size)
    return ExtendedMesh(base, axis, mask, free, dof_index)
