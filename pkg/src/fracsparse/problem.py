"""Problem data and the scalar maps of the optimality system.

Holds the control-problem configuration, the weight exponent and
normalization constant attached to the fractional order, the projection
and soft-threshold maps whose composition is the optimal-control fixed
point, and the evaluation of the tracking cost functional.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, MeshMismatchError
from .fields import ControlField, TraceField

__all__ = [
    "ProblemConfig",
    "DerivedConstants",
    "derived_constants",
    "alpha_of_s",
    "ds_of_s",
    "gamma_function",
    "proj_interval",
    "soft_threshold",
    "subgradient_pointwise",
    "cost_J",
    "desired_state_values",
]

# Lanczos approximation, g = 7 with 9 coefficients: relative accuracy is
# well below 1e-12 on (0,1) and (1,2), which is all ds_of_s needs.
_LANCZOS_G = 7.0
_LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_function(z):
    """Gamma(z) for real z > 0 by the Lanczos rational approximation."""
    if z <= 0.0:
        raise InvalidParameterError(f"gamma_function requires z > 0, got {z}")
    if z < 0.5:
        # reflection keeps the series argument in its accurate range
        return math.pi / (math.sin(math.pi * z) * gamma_function(1.0 - z))
    z -= 1.0
    x = _LANCZOS_COEFFS[0]
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        x += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * x


def alpha_of_s(s):
    """Weight exponent alpha = 1 - 2s in (-1, 1)."""
    if not 0.0 < s < 1.0:
        raise InvalidParameterError(f"fractional order s must be in (0,1), got {s}")
    return 1.0 - 2.0 * s


def ds_of_s(s):
    """Normalization constant 2^(1-2s) Gamma(1-s) / Gamma(s)."""
    if not 0.0 < s < 1.0:
        raise InvalidParameterError(f"fractional order s must be in (0,1), got {s}")
    return 2.0 ** (1.0 - 2.0 * s) * gamma_function(1.0 - s) / gamma_function(s)


def proj_interval(lo, hi, w):
    """Pointwise projection onto [lo, hi]; accepts scalars or arrays."""
    if lo > hi:
        raise InvalidParameterError(f"projection interval is empty: [{lo}, {hi}]")
    return np.minimum(hi, np.maximum(lo, w))


def soft_threshold(w, kappa):
    """Shrink w toward zero by kappa: sign(w) * max(|w| - kappa, 0)."""
    if np.any(np.asarray(kappa) < 0):
        raise InvalidParameterError("soft threshold requires kappa >= 0")
    return np.sign(w) * np.maximum(np.abs(w) - kappa, 0.0)


def subgradient_pointwise(z, p, nu):
    """Canonical subgradient selection of the L1 term at (z, p).

    Returns the clip of -p/nu onto [-1, 1]; whenever (z, p) satisfy the
    optimality coupling this equals 1 where z > 0 and -1 where z < 0.
    The argument z is accepted for signature symmetry only: the selection
    is the unique one consistent with optimality and depends on p alone.
    """
    if nu <= 0:
        raise InvalidParameterError("L1 weight nu must be positive")
    del z
    return proj_interval(-1.0, 1.0, -np.asarray(p, dtype=float) / nu)


@dataclass(frozen=True)
class ProblemConfig:
    """Scalar data of the control problem on Omega = (0, L)^n."""

    s: float
    sigma: float
    nu: float
    a_lo: float
    b_hi: float
    domain_length: float = 1.0
    c_coeff: float = 0.0
    desired_state: object = None

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise InvalidParameterError(f"s must be in (0,1), got {self.s}")
        if self.sigma <= 0:
            raise InvalidParameterError("sigma must be positive")
        if self.nu <= 0:
            raise InvalidParameterError("nu must be positive")
        if not self.a_lo < 0.0 < self.b_hi:
            raise InvalidParameterError(
                f"control bounds must satisfy a < 0 < b, got [{self.a_lo}, {self.b_hi}]"
            )
        if self.domain_length <= 0:
            raise InvalidParameterError("domain length must be positive")
        if self.c_coeff < 0:
            raise InvalidParameterError("reaction coefficient must be >= 0")


@dataclass(frozen=True)
class DerivedConstants:
    """Constants derived from the configuration."""

    alpha: float
    d_s: float
    gamma_grade: float
    lambda_1: float


def derived_constants(cfg):
    """Weight exponent, normalization, grading exponent and first eigenvalue."""
    lam1 = (math.pi / cfg.domain_length) ** 2 + cfg.c_coeff
    return DerivedConstants(
        alpha=alpha_of_s(cfg.s),
        d_s=ds_of_s(cfg.s),
        gamma_grade=3.0 / (2.0 * cfg.s),
        lambda_1=lam1,
    )


def desired_state_values(desired_state, points):
    """Sample the desired state at the given points.

    Accepts either an object with an ``evaluate(points)`` method (a spectral
    expansion) or a plain callable.
    """
    if desired_state is None:
        raise InvalidParameterError("configuration has no desired state")
    if hasattr(desired_state, "evaluate"):
        return np.asarray(desired_state.evaluate(points), dtype=float)
    if callable(desired_state):
        out = desired_state(points)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(points)).copy()
    raise InvalidParameterError(
        "desired state must be a spectral expansion or a callable"
    )


# 3-point Gauss-Legendre on [-1, 1]: exact through degree 5, comfortably
# above the order-2 sampling the tracking term requires.
_GAUSS_X = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_GAUSS_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _tracking_term_1d(u, cfg):
    mesh = u.mesh
    nodes = mesh.axes[0]
    xl, xr = nodes[:-1], nodes[1:]
    h = xr - xl
    mid = 0.5 * (xl + xr)
    # quadrature points per cell, shape (n_cells, 3)
    xq = mid[:, None] + 0.5 * h[:, None] * _GAUSS_X[None, :]
    t = (xq - xl[:, None]) / h[:, None]
    uq = (1.0 - t) * u.values[:-1, None] + t * u.values[1:, None]
    udq = desired_state_values(cfg.desired_state, xq)
    return 0.5 * float(np.sum(0.5 * h[:, None] * _GAUSS_W[None, :] * (uq - udq) ** 2))


def _tracking_term_2d(u, cfg):
    mesh = u.mesh
    corners = u.values[mesh.cell_nodes]  # (n_cells, 4) in order (00, 10, 01, 11)
    ax1, ax2 = mesh.axes
    n1 = ax1.size
    c1 = mesh.cell_nodes[:, 0] % n1
    c2 = mesh.cell_nodes[:, 0] // n1
    x1l, x1r = ax1[c1], ax1[c1 + 1]
    x2l, x2r = ax2[c2], ax2[c2 + 1]
    h1 = x1r - x1l
    h2 = x2r - x2l
    total = 0.0
    for i, (gx1, gw1) in enumerate(zip(_GAUSS_X, _GAUSS_W)):
        for j, (gx2, gw2) in enumerate(zip(_GAUSS_X, _GAUSS_W)):
            t1 = 0.5 * (1.0 + gx1)
            t2 = 0.5 * (1.0 + gx2)
            p1 = x1l + t1 * h1
            p2 = x2l + t2 * h2
            uq = (
                corners[:, 0] * (1 - t1) * (1 - t2)
                + corners[:, 1] * t1 * (1 - t2)
                + corners[:, 2] * (1 - t1) * t2
                + corners[:, 3] * t1 * t2
            )
            udq = cfg.desired_state(p1, p2) if callable(cfg.desired_state) else None
            if udq is None:
                raise InvalidParameterError(
                    "2D tracking needs a callable desired state of two arguments"
                )
            total += float(
                np.sum(0.25 * h1 * h2 * gw1 * gw2 * (uq - np.asarray(udq)) ** 2)
            )
    return 0.5 * total


def cost_J(u, z, cfg):
    """Cost J(u, z) = 1/2 ||u - u_d||^2 + sigma/2 ||z||^2 + nu ||z||_L1.

    The tracking term integrates the P1 state against the desired state
    sampled at per-cell Gauss points; the control terms are exact for
    piecewise-constant z.
    """
    if not isinstance(u, TraceField) or not isinstance(z, ControlField):
        raise MeshMismatchError("cost_J expects a TraceField and a ControlField")
    if not u.mesh.matches(z.mesh):
        raise MeshMismatchError("state and control live on different base meshes")
    if u.mesh.dim == 1:
        tracking = _tracking_term_1d(u, cfg)
    else:
        tracking = _tracking_term_2d(u, cfg)
    meas = z.mesh.cell_measures
    control_l2 = 0.5 * cfg.sigma * float(np.sum(meas * z.values**2))
    control_l1 = cfg.nu * float(np.sum(meas * np.abs(z.values)))
    return tracking + control_l2 + control_l1
