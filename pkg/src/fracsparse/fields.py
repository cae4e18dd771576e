"""Discrete fields: piecewise-constant controls on the base mesh, nodal
traces on Omega, and nodal fields on the full cylinder mesh."""

from dataclasses import dataclass

import numpy as np

from .errors import MeshMismatchError
from .meshing import BaseMesh, ExtendedMesh

__all__ = ["ControlField", "TraceField", "CylinderField"]


@dataclass
class ControlField:
    """One real value per base cell (a piecewise-constant function on Omega)."""

    mesh: BaseMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_cells,):
            raise MeshMismatchError(
                f"control needs {self.mesh.n_cells} cell values, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_cells))

    def l2_norm(self):
        return float(np.sqrt(np.sum(self.mesh.cell_measures * self.values**2)))

    def l1_norm(self):
        return float(np.sum(self.mesh.cell_measures * np.abs(self.values)))

    def support_measure(self, tol=0.0):
        """Measure of the set where the control is nonzero."""
        return float(np.sum(self.mesh.cell_measures[np.abs(self.values) > tol]))


@dataclass
class TraceField:
    """Nodal P1 function on the base mesh; pipeline products vanish on the boundary."""

    mesh: BaseMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshMismatchError(
                f"trace needs {self.mesh.n_nodes} nodal values, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_nodes))

    def boundary_is_zero(self, tol=0.0):
        b = self.values[self.mesh.boundary]
        return bool(np.all(np.abs(b) <= tol))


@dataclass
class CylinderField:
    """Nodal field on the cylinder mesh; Dirichlet entries are fixed to zero."""

    mesh: ExtendedMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshMismatchError(
                f"cylinder field needs {self.mesh.n_nodes} nodal values, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def from_free(cls, mesh, free_values):
        """Scatter a reduced free-DOF vector into the full nodal layout."""
        full = np.zeros(mesh.n_nodes)
        full[mesh.free_nodes] = free_values
        return cls(mesh, full)

    def free_values(self):
        return self.values[self.mesh.free_nodes]

    def dirichlet_is_zero(self, tol=0.0):
        d = self.values[self.mesh.dirichlet_mask]
        return bool(np.all(np.abs(d) <= tol))
