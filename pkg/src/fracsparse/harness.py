"""Experiment driver: refinement studies, decay studies, rate fits, tables.

Errors are always measured against the spectral route, never against a
finer run of the same discretization, so the fitted rates are free of
correlated bias.  All fits use bands rather than exact slopes because the
theory carries logarithmic factors that bend desk-scale fits.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_stiffness, gradient_tail_energy, trace_of
from .errors import ConfigError, InvalidParameterError
from .fields import ControlField, CylinderField
from .linsolve import cg_solve
from .meshing import balanced_M, build_base, graded_axis, tensor_mesh, truncation_height
from .optimizer import OptimizerSettings, optimize, sparsity_report, vi_values
from .problem import ProblemConfig, derived_constants
from .spectral import (
    SpectralExpansion,
    expand,
    fractional_solve_spectral,
    hs_norm,
    spectral_control_solve,
    trace_load_from_expansion,
)

__all__ = [
    "StudySpec",
    "RateTable",
    "StudyOutput",
    "fit_rate",
    "run_state_rate_study",
    "run_control_rate_study",
    "run_decay_study",
    "run_kkt_check",
    "run_study",
    "parse_config",
    "emit_table",
    "write_history_csv",
]

STUDY_KINDS = ("state_rate", "control_rate", "decay", "kkt_check")

REFERENCE_EXPANSION_ORDER = 512
REFERENCE_KKT_TOL = 1e-10


@dataclass
class RateTable:
    """Rows of a refinement or decay study plus the fitted global slope."""

    headers: list
    rows: list
    slope: float
    slope_label: str = "slope"

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.headers):
                raise InvalidParameterError("table row width does not match headers")

    def column(self, name):
        idx = self.headers.index(name)
        return np.array([row[idx] for row in self.rows], dtype=float)

    def summary_row(self):
        pad = [""] * (len(self.headers) - 2)
        return [self.slope_label, _fmt(self.slope)] + pad


@dataclass
class StudyOutput:
    kind: str
    table: RateTable
    history_headers: list
    history_rows: list
    extras: dict = field(default_factory=dict)


@dataclass
class StudySpec:
    """Parsed description of one study run."""

    kind: str
    levels: list
    cfg: ProblemConfig
    ys: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    kkt_tol: float = 1e-8
    output: str = "."

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ConfigError(
                f"unknown study kind {self.kind!r}; expected one of {STUDY_KINDS}"
            )
        levels = list(self.levels)
        if any(l != int(l) or l < 1 for l in levels):
            raise ConfigError("levels must be positive integers")
        if levels != sorted(set(levels)):
            raise ConfigError("levels must be strictly increasing")
        if self.kind in ("state_rate", "control_rate") and len(levels) < 3:
            raise ConfigError("rate fits need at least 3 levels")
        if self.kind == "kkt_check" and len(levels) < 1:
            raise ConfigError("kkt_check needs at least one level")
        ys = [float(y) for y in self.ys]
        if self.kind == "decay":
            if len(ys) < 3:
                raise ConfigError("decay fits need at least 3 heights")
            if ys != sorted(set(ys)) or ys[0] < 1.0:
                raise ConfigError("heights must be strictly increasing and >= 1")
        if self.kkt_tol <= 0:
            raise ConfigError("kkt_tol must be positive")
        self.levels = [int(l) for l in levels]
        self.ys = ys


def fit_rate(points):
    """Least-squares slope of log(error) against log(N)."""
    pts = list(points)
    if len(pts) < 3:
        raise InvalidParameterError("rate fits need at least 3 points")
    n = np.array([p[0] for p in pts], dtype=float)
    e = np.array([p[1] for p in pts], dtype=float)
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise InvalidParameterError("rate fits need positive finite errors")
    return float(np.polyfit(np.log(n), np.log(e), 1)[0])


def _local_rates(ns, errors):
    out = [float("nan")]
    for i in range(1, len(ns)):
        if errors[i] > 0 and errors[i - 1] > 0:
            out.append(
                math.log(errors[i] / errors[i - 1]) / math.log(ns[i] / ns[i - 1])
            )
        else:
            out.append(float("nan"))
    return out


def build_level_mesh(cfg, cells):
    """Balanced cylinder mesh for one refinement level."""
    consts = derived_constants(cfg)
    base = build_base(1, cfg.domain_length, cells)
    m_vert = balanced_M(base.n_cells, 1)
    n_total = base.n_cells * m_vert
    height = truncation_height(n_total, consts.lambda_1)
    axis = graded_axis(m_vert, height, cfg.s)
    return tensor_mesh(base, axis)


def _state_datum(cfg):
    ud = cfg.desired_state
    if isinstance(ud, SpectralExpansion):
        return ud
    return SpectralExpansion(cfg.domain_length, [1.0], cfg.c_coeff)


def run_state_rate_study(spec, datum=None, cg_tol=1e-10):
    """Refine the state solve against the spectral solution of the same datum.

    The load is assembled exactly from the datum expansion, and the error is
    the fractional-norm of the difference between the trace expansion and
    the diagonal spectral solve.
    """
    cfg = spec.cfg
    if datum is None:
        datum = _state_datum(cfg)
    exact = fractional_solve_spectral(
        datum.pad_to(REFERENCE_EXPANSION_ORDER), cfg.s
    )
    rows = []
    history = []
    errors = []
    ns = []
    for cells in spec.levels:
        mesh = build_level_mesh(cfg, cells)
        matrix = assemble_stiffness(mesh, cfg)
        rhs = trace_load_from_expansion(mesh, datum)
        x, report = cg_solve(matrix, rhs, tol=cg_tol)
        v = CylinderField.from_free(mesh, x)
        tr_exp = expand(
            trace_of(v), cfg.domain_length, REFERENCE_EXPANSION_ORDER, cfg.c_coeff
        )
        diff = SpectralExpansion(
            cfg.domain_length, tr_exp.coefficients - exact.coefficients, cfg.c_coeff
        )
        err = hs_norm(diff, cfg.s)
        info = mesh.summary()
        ns.append(info["n_total_cells"])
        errors.append(err)
        history.append(
            (cells, info["n_total_cells"], report.iterations, report.final_residual)
        )
    slope = fit_rate(zip(ns, errors)) if min(errors) > 1e-14 else float("nan")
    local = _local_rates(ns, errors)
    for i, cells in enumerate(spec.levels):
        rows.append(
            (
                ns[i],
                cfg.domain_length / cells,
                _level_height(cfg, cells),
                errors[i],
                local[i],
            )
        )
    table = RateTable(["n_total_cells", "h", "Y", "error", "local_rate"], rows, slope)
    return StudyOutput(
        "state_rate",
        table,
        ["level_cells", "n_total_cells", "cg_iterations", "cg_residual"],
        history,
    )


def _level_height(cfg, cells):
    consts = derived_constants(cfg)
    m_vert = balanced_M(cells, 1)
    return truncation_height(cells * m_vert, consts.lambda_1)


def p0_restrict(values, fine_mesh, coarse_mesh):
    """Overlap-weighted restriction of a P0 field onto a coarser partition."""
    fe = fine_mesh.axes[0]
    ce = coarse_mesh.axes[0]
    out = np.zeros(coarse_mesh.n_cells)
    for j in range(coarse_mesh.n_cells):
        lo, hi = ce[j], ce[j + 1]
        left = np.maximum(fe[:-1], lo)
        right = np.minimum(fe[1:], hi)
        overlap = np.maximum(right - left, 0.0)
        out[j] = np.dot(overlap, values) / (hi - lo)
    return out


def p0_l2_distance(values_a, mesh_a, values_b, mesh_b):
    """Exact L2(Omega) distance of two piecewise-constant fields (n = 1)."""
    edges = np.union1d(mesh_a.axes[0], mesh_b.axes[0])
    mid = 0.5 * (edges[:-1] + edges[1:])
    ia = np.searchsorted(mesh_a.axes[0], mid, side="right") - 1
    ib = np.searchsorted(mesh_b.axes[0], mid, side="right") - 1
    w = np.diff(edges)
    return float(np.sqrt(np.sum(w * (values_a[ia] - values_b[ib]) ** 2)))


def run_control_rate_study(spec, reference_refinement=4):
    """Refine the cylinder-FEM optimizer against the spectral control solve.

    The reference optimum is computed extension-free on a control mesh
    ``reference_refinement`` times finer than the finest study level, and
    each level's error is the exact L2(Omega) distance between the two
    piecewise-constant controls.  Keeping the reference strictly finer
    matters: on the finest level's own mesh the distance would collapse to
    the matched-mesh solver discrepancy and no longer measure the
    control-space rate.
    """
    cfg = spec.cfg
    finest = spec.levels[-1]
    base_ref = build_base(1, cfg.domain_length, reference_refinement * finest)
    z_ref, u_ref, _ = spectral_control_solve(
        cfg, base_ref, K=REFERENCE_EXPANSION_ORDER, tol=REFERENCE_KKT_TOL
    )
    rows = []
    history = []
    errors = []
    state_errors = []
    ns = []
    for cells in spec.levels:
        mesh = build_level_mesh(cfg, cells)
        settings = OptimizerSettings(kkt_tol=spec.kkt_tol)
        triple = optimize(cfg, mesh, settings)
        err_z = p0_l2_distance(
            triple.control.values, mesh.base, z_ref.values, base_ref
        )
        tr_exp = expand(
            trace_of(triple.state),
            cfg.domain_length,
            REFERENCE_EXPANSION_ORDER,
            cfg.c_coeff,
        )
        diff_u = SpectralExpansion(
            cfg.domain_length, tr_exp.coefficients - u_ref.coefficients, cfg.c_coeff
        )
        err_u = hs_norm(diff_u, cfg.s)
        info = mesh.summary()
        ns.append(info["n_total_cells"])
        errors.append(err_z)
        state_errors.append(err_u)
        for it, (j, kkt, cgs, cga) in enumerate(triple.history):
            history.append((cells, it, j, kkt, cgs, cga))
    slope = fit_rate(zip(ns, errors)) if min(errors) > 1e-14 else float("nan")
    local = _local_rates(ns, errors)
    for i, cells in enumerate(spec.levels):
        rows.append(
            (
                ns[i],
                cfg.domain_length / cells,
                _level_height(cfg, cells),
                errors[i],
                state_errors[i],
                local[i],
            )
        )
    table = RateTable(
        ["n_total_cells", "h", "Y", "error", "state_error_hs", "local_rate"],
        rows,
        slope,
    )
    return StudyOutput(
        "control_rate",
        table,
        ["level_cells", "iter", "J", "kkt_residual", "cg_iters_state", "cg_iters_adjoint"],
        history,
        extras={"reference_control": z_ref},
    )


def run_decay_study(
    cfg, ys, mesh=None, base_cells=64, axis_intervals=256, datum=None, cg_tol=1e-10
):
    """Tail energies of one state solve on a tall cylinder, fitted in Y.

    The reference cylinder reaches 4 units above the largest requested
    height, the solve happens once, and each tail energy integrates the
    weighted gradient exactly from the cut height upward.
    """
    ys = [float(y) for y in ys]
    if len(ys) < 3 or ys != sorted(set(ys)) or ys[0] < 1.0:
        raise InvalidParameterError(
            "decay studies need at least 3 strictly increasing heights >= 1"
        )
    consts = derived_constants(cfg)
    if datum is None:
        datum = _state_datum(cfg)
    if mesh is None:
        base = build_base(1, cfg.domain_length, base_cells)
        axis = graded_axis(axis_intervals, max(ys) + 4.0, cfg.s)
        mesh = tensor_mesh(base, axis)
    if mesh.axis.height <= max(ys):
        raise InvalidParameterError("reference cylinder must be taller than max(Ys)")
    matrix = assemble_stiffness(mesh, cfg)
    rhs = trace_load_from_expansion(mesh, datum)
    x, report = cg_solve(matrix, rhs, tol=cg_tol)
    v = CylinderField.from_free(mesh, x)
    energies = [gradient_tail_energy(v, cfg, y) for y in ys]
    if min(energies) <= 0:
        raise InvalidParameterError("tail energies must be positive for the fit")
    slope = float(np.polyfit(ys, np.log(energies), 1)[0])
    local = [float("nan")] + [
        math.log(energies[i] / energies[i - 1]) / (ys[i] - ys[i - 1])
        for i in range(1, len(ys))
    ]
    rows = [(ys[i], energies[i], local[i]) for i in range(len(ys))]
    table = RateTable(
        ["Y", "tail_energy", "local_slope"], rows, slope, slope_label="decay_slope"
    )
    bound = -math.sqrt(consts.lambda_1) / 2.0
    return StudyOutput(
        "decay",
        table,
        ["n_total_cells", "cg_iterations", "cg_residual"],
        [(mesh.n_cells, report.iterations, report.final_residual)],
        extras={"decay_bound": bound, "passes_bound": slope <= bound * 0.8},
    )


def run_kkt_check(spec, n_directions=100, seed=0):
    """Optimize per level and audit the discrete optimality system."""
    cfg = spec.cfg
    rows = []
    history = []
    for cells in spec.levels:
        mesh = build_level_mesh(cfg, cells)
        settings = OptimizerSettings(kkt_tol=spec.kkt_tol)
        triple = optimize(cfg, mesh, settings)
        vi = vi_values(triple, cfg, n_directions=n_directions, seed=seed)
        try:
            report = sparsity_report(triple, cfg)
            consistent = report.all_consistent
        except Exception:
            consistent = False
        zero_cells = int(np.sum(triple.control.values == 0.0))
        rows.append(
            (
                mesh.n_cells,
                triple.kkt_achieved,
                float(vi.min()),
                int(consistent),
                zero_cells,
            )
        )
        for it, (j, kkt, cgs, cga) in enumerate(triple.history):
            history.append((cells, it, j, kkt, cgs, cga))
    table = RateTable(
        ["n_total_cells", "kkt_residual", "vi_min", "sparsity_consistent", "zero_cells"],
        rows,
        float("nan"),
        slope_label="n/a",
    )
    return StudyOutput(
        "kkt_check",
        table,
        ["level_cells", "iter", "J", "kkt_residual", "cg_iters_state", "cg_iters_adjoint"],
        history,
    )


def run_study(spec):
    """Dispatch a parsed study specification to its runner."""
    if spec.kind == "state_rate":
        return run_state_rate_study(spec)
    if spec.kind == "control_rate":
        return run_control_rate_study(spec)
    if spec.kind == "decay":
        return run_decay_study(spec.cfg, spec.ys)
    return run_kkt_check(spec)


_CONFIG_DEFAULTS = {
    "s": "0.5",
    "sigma": "1.0",
    "nu": "0.1",
    "a": "-1.0",
    "b": "1.0",
    "L": "1.0",
    "c": "0.0",
    "ud": "1.0",
    "study": "state_rate",
    "levels": "8,16,32,64",
    "Ys": "1,2,3,4,5,6",
    "kkt_tol": "1e-8",
    "output": ".",
}


def _parse_float(raw, key, lineno):
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: key {key!r} needs a number, got {raw!r}") from exc


def parse_config(path):
    """Parse a key=value study configuration file into a StudySpec.

    Unknown keys are rejected; missing keys take the documented defaults.
    Blank lines and lines starting with '#' are ignored.
    """
    raw = dict(_CONFIG_DEFAULTS)
    linenos = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"line {lineno}: expected key=value, got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in linenos:
                raise ConfigError(
                    f"line {lineno}: duplicate key {key!r} (first set on line {linenos[key]})"
                )
            linenos[key] = lineno
            raw[key] = value

    def num(key):
        return _parse_float(raw[key], key, linenos.get(key, 0))

    s = num("s")
    sigma = num("sigma")
    nu = num("nu")
    a_lo = num("a")
    b_hi = num("b")
    length = num("L")
    c = num("c")
    kkt_tol = num("kkt_tol")
    if not 0.0 < s < 1.0:
        raise ConfigError(f"s must lie in (0,1), got {s}")
    if sigma <= 0 or nu <= 0:
        raise ConfigError("sigma and nu must be positive")
    if not a_lo < 0.0 < b_hi:
        raise ConfigError(
            f"control bounds must satisfy a < 0 < b, got a={a_lo}, b={b_hi}"
        )
    if length <= 0:
        raise ConfigError("L must be positive")
    if c < 0:
        raise ConfigError("c must be nonnegative")
    try:
        ud_coeffs = [float(tok) for tok in raw["ud"].split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"ud must be a comma list of sine coefficients: {raw['ud']!r}") from exc
    if not ud_coeffs:
        raise ConfigError("ud needs at least one coefficient")
    try:
        levels = [int(tok) for tok in raw["levels"].split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"levels must be a comma list of integers: {raw['levels']!r}") from exc
    try:
        ys = [float(tok) for tok in raw["Ys"].split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"Ys must be a comma list of heights: {raw['Ys']!r}") from exc

    desired = SpectralExpansion(length, ud_coeffs, c)
    cfg = ProblemConfig(
        s=s,
        sigma=sigma,
        nu=nu,
        a_lo=a_lo,
        b_hi=b_hi,
        domain_length=length,
        c_coeff=c,
        desired_state=desired,
    )
    return StudySpec(
        kind=raw["study"],
        levels=levels,
        cfg=cfg,
        ys=ys,
        kkt_tol=kkt_tol,
        output=raw["output"],
    )


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def emit_table(table, path, format="csv"):
    """Write a study table as CSV or an aligned Markdown pipe table."""
    if format not in ("csv", "markdown"):
        raise InvalidParameterError(f"format must be csv or markdown, got {format!r}")
    rows = [[_fmt(v) for v in row] for row in table.rows]
    summaries = [[_fmt(v) for v in table.summary_row()]] if rows else []
    if format == "csv":
        with open(path, "w") as fh:
            fh.write(",".join(table.headers) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
            for summary in summaries:
                fh.write(",".join(summary) + "\n")
        return
    cells = [list(table.headers)] + rows + summaries
    widths = [max(len(r[i]) for r in cells) for i in range(len(table.headers))]
    with open(path, "w") as fh:
        def line(parts):
            padded = [p.ljust(w) for p, w in zip(parts, widths)]
            fh.write("| " + " | ".join(padded) + " |\n")

        line(table.headers)
        line(["-" * w for w in widths])
        for row in rows:
            line(row)
        for summary in summaries:
            line(summary)


def write_history_csv(output, path):
    """Write the per-level iteration history of a study run."""
    with open(path, "w") as fh:
        fh.write(",".join(output.history_headers) + "\n")
        for row in output.history_rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
