"""Weighted assembly, field transfer, and the cellwise L2 projection."""

import math

import numpy as np
import pytest
from scipy import integrate

from fracsparse import (
    ControlField,
    CylinderField,
    MeshMismatchError,
    ProblemConfig,
    SpectralExpansion,
    TraceField,
    assemble_stiffness,
    assemble_trace_load,
    build_base,
    cell_averages,
    derived_constants,
    graded_axis,
    gradient_tail_energy,
    l2_inner_omega,
    tensor_mesh,
    trace_of,
    weight_moments,
)
from fracsparse.assembly import assemble_operator, p1_mass_apply
from fracsparse.errors import InvalidParameterError


def make_cfg(s=0.5, c=0.0, L=1.0):
    return ProblemConfig(
        s=s,
        sigma=1.0,
        nu=0.1,
        a_lo=-1.0,
        b_hi=1.0,
        domain_length=L,
        c_coeff=c,
        desired_state=SpectralExpansion(L, [1.0], c),
    )


def small_mesh(s=0.5, cells=6, m=5, height=2.7, L=1.0):
    return tensor_mesh(build_base(1, L, cells), graded_axis(m, height, s))


class TestWeightMoments:
    def test_examples(self):
        np.testing.assert_allclose(weight_moments(0, 1, 0.0), (1.0, 0.5, 1 / 3))
        np.testing.assert_allclose(weight_moments(0, 1, -0.5), (2.0, 2 / 3, 0.4))
        np.testing.assert_allclose(
            weight_moments(1, 2, 0.5),
            ((2**1.5 - 1) / 1.5, (2**2.5 - 1) / 2.5, (2**3.5 - 1) / 3.5),
        )

    @pytest.mark.parametrize("alpha", [-0.8, -0.4, 0.0, 0.4, 0.8])
    @pytest.mark.parametrize("interval", [(0.0, 1.0), (0.0, 1e-4), (0.3, 2.2)])
    def test_against_adaptive_quadrature(self, alpha, interval):
        y0, y1 = interval
        mom = weight_moments(y0, y1, alpha)
        for j in range(3):
            if y0 == 0.0:
                # quadrature oracle with the algebraic endpoint weight split off
                val, _ = integrate.quad(
                    lambda y, jj=j: y**jj, y0, y1, weight="alg", wvar=(alpha, 0)
                )
            else:
                val, _ = integrate.quad(lambda y, jj=j: y ** (alpha + jj), y0, y1)
            assert mom[j] == pytest.approx(val, rel=1e-9)

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            weight_moments(0, 1, -1.0)
        with pytest.raises(InvalidParameterError):
            weight_moments(1.0, 0.5, 0.0)


def hand_assembled_laplacian(mesh):
    """Independent oracle: Gauss-quadrature 1D factors, Kronecker product."""

    def seg_mats(nodes):
        n = nodes.size
        stiff = np.zeros((n, n))
        mass = np.zeros((n, n))
        gx, gw = np.polynomial.legendre.leggauss(2)
        for j in range(n - 1):
            a, b = nodes[j], nodes[j + 1]
            h = b - a
            pts = 0.5 * (a + b) + 0.5 * h * gx
            wts = 0.5 * h * gw
            hats = {j: (b - pts) / h, j + 1: (pts - a) / h}
            grads = {j: -1.0 / h, j + 1: 1.0 / h}
            for li in (j, j + 1):
                for lj in (j, j + 1):
                    mass[li, lj] += np.sum(wts * hats[li] * hats[lj])
                    stiff[li, lj] += np.sum(wts * grads[li] * grads[lj])
        return stiff, mass

    sx, mx = seg_mats(mesh.base.axes[0])
    sy, my = seg_mats(mesh.axis.nodes)
    full = np.kron(my, sx) + np.kron(sy, mx)
    free = mesh.free_nodes
    return full[np.ix_(free, free)]


class TestAssembleStiffness:
    def test_matches_unweighted_q1_laplacian(self):
        # s = 1/2 turns the weight off and d_s = 1
        mesh = small_mesh()
        ours = assemble_stiffness(mesh, make_cfg()).to_dense()
        oracle = hand_assembled_laplacian(mesh)
        assert np.abs(ours - oracle).max() <= 1e-13 * np.abs(oracle).max()

    def test_single_element_mass_block(self):
        # (0,0) entry of the weighted vertical mass factor on I = (0, h)
        from fracsparse.assembly import _interval_matrices_weighted

        h, alpha = 0.37, -0.42
        mass, _ = _interval_matrices_weighted(0.0, h, alpha)
        m0, m1, m2 = weight_moments(0.0, h, alpha)
        assert mass[0, 0] == pytest.approx(m0 - 2 * m1 / h + m2 / h**2, rel=1e-13)

    @pytest.mark.parametrize("s", [0.3, 0.5, 0.75])
    def test_gradient_part_kills_constants(self, s):
        # interior rows of the pure-gradient operator annihilate the constant
        mesh = small_mesh(s=s)
        full = assemble_operator(mesh, make_cfg(s=s), reduced=False, gradient_only=True)
        ones = np.ones(mesh.n_nodes)
        rowsums = full.matvec(ones)
        interior = ~mesh.dirichlet_mask
        assert np.abs(rowsums[interior]).max() <= 1e-12 * np.abs(full.data).max()

    @pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
    def test_symmetry(self, s):
        mesh = small_mesh(s=s)
        mat = assemble_stiffness(mesh, make_cfg(s=s, c=0.3))
        dense = mat.to_dense()
        scale = np.abs(mat.data).max()
        assert np.abs(dense - dense.T).max() <= 1e-13 * scale
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.standard_normal(mat.n)
            w = rng.standard_normal(mat.n)
            avw = float(w @ mat.matvec(v))
            awv = float(v @ mat.matvec(w))
            assert avw == pytest.approx(awv, rel=1e-12, abs=1e-12)

    def test_coercive_on_random_vectors(self):
        mesh = small_mesh(s=0.7)
        mat = assemble_stiffness(mesh, make_cfg(s=0.7))
        rng = np.random.default_rng(2)
        for _ in range(25):
            v = rng.standard_normal(mat.n)
            assert v @ mat.matvec(v) > 0.0
        assert np.zeros(mat.n) @ mat.matvec(np.zeros(mat.n)) == 0.0

    def test_krylov_ritz_values_positive(self):
        mesh = small_mesh(s=0.4)
        mat = assemble_stiffness(mesh, make_cfg(s=0.4))
        rng = np.random.default_rng(9)
        v = rng.standard_normal(mat.n)
        basis = [v / np.linalg.norm(v)]
        for _ in range(4):
            w = mat.matvec(basis[-1])
            for u in basis:
                w -= (w @ u) * u
            basis.append(w / np.linalg.norm(w))
        Q = np.column_stack(basis)
        ritz = np.linalg.eigvalsh(Q.T @ (mat.to_dense() @ Q))
        assert ritz.min() > 0.0

    def test_variable_scalar_coefficients(self):
        # midpoint sampling makes the operator affine in per-cell diffusion
        # values: A(f) = A(0) + sum_j f(mid_j) (A(1_j) - A(0))
        mesh = small_mesh(cells=4, m=3)
        cfg = make_cfg()
        mids = 0.5 * (mesh.base.axes[0][:-1] + mesh.base.axes[0][1:])
        ours = assemble_operator(
            mesh, cfg, diffusion=lambda x: 1.0 + x**2, reduced=False
        ).to_dense()
        vertical_only = assemble_operator(
            mesh, cfg, diffusion=lambda x: np.zeros_like(x), reduced=False
        ).to_dense()
        expected = vertical_only.copy()
        for j, mid in enumerate(mids):
            indicator = assemble_operator(
                mesh,
                cfg,
                diffusion=lambda x, m=mid: np.where(np.isclose(x, m), 1.0, 0.0),
                reduced=False,
            ).to_dense()
            expected += (1.0 + mid**2) * (indicator - vertical_only)
        np.testing.assert_allclose(ours, expected, rtol=0, atol=1e-13)

    def test_reaction_term_adds_weighted_mass(self):
        mesh = small_mesh()
        plain = assemble_stiffness(mesh, make_cfg(c=0.0)).to_dense()
        with_c = assemble_stiffness(mesh, make_cfg(c=2.0)).to_dense()
        diff = with_c - plain
        assert np.all(np.linalg.eigvalsh(diff) >= -1e-12)

    def test_export_triplets_roundtrip(self, tmp_path):
        mesh = small_mesh(cells=3, m=2)
        mat = assemble_stiffness(mesh, make_cfg())
        path = tmp_path / "matrix.txt"
        mat.export_triplets(path)
        dense = np.zeros((mat.n, mat.n))
        for line in path.read_text().splitlines():
            i, j, v = line.split()
            dense[int(i), int(j)] += float(v)
        np.testing.assert_allclose(dense, mat.to_dense(), rtol=0, atol=1e-15)


class TestAssemble2D:
    def test_symmetry_and_kernel(self):
        mesh = tensor_mesh(build_base(2, 1.0, 3), graded_axis(3, 1.5, 0.6))
        cfg = make_cfg(s=0.6)
        mat = assemble_stiffness(mesh, cfg)
        dense = mat.to_dense()
        assert np.abs(dense - dense.T).max() <= 1e-13 * np.abs(mat.data).max()
        full = assemble_operator(mesh, cfg, reduced=False, gradient_only=True)
        rowsums = full.matvec(np.ones(mesh.n_nodes))
        assert np.abs(rowsums[~mesh.dirichlet_mask]).max() <= 1e-12 * np.abs(full.data).max()

    def test_trace_load_corners(self):
        mesh = tensor_mesh(build_base(2, 1.0, 2), graded_axis(2, 1.0, 0.5))
        z = ControlField(mesh.base, np.array([1.0, 0.0, 0.0, 0.0]))
        rhs = assemble_trace_load(mesh, z)
        # only the single interior base node (center) is free on the trace
        # plane; cell 0 touches it with weight |K|/4
        assert rhs[mesh.trace_dofs] == pytest.approx(0.25 * 0.25)
        assert np.abs(np.delete(rhs, mesh.trace_dofs)).max() == 0.0


class TestTraceLoad:
    def test_zero_control(self):
        mesh = small_mesh(cells=4, m=3)
        rhs = assemble_trace_load(mesh, ControlField.zeros(mesh.base))
        assert np.all(rhs == 0.0)

    def test_uniform_control_interior_entries(self):
        mesh = small_mesh(cells=4, m=3, height=2.0)
        rhs = assemble_trace_load(mesh, ControlField(mesh.base, np.ones(4)))
        np.testing.assert_allclose(rhs[mesh.trace_dofs], 0.25)
        off_plane = np.setdiff1d(np.arange(mesh.n_free), mesh.trace_dofs)
        assert np.abs(rhs[off_plane]).max() == 0.0

    def test_adjacent_cancellation(self):
        mesh = small_mesh(cells=4, m=3)
        z = ControlField(mesh.base, np.array([1.0, -1.0, 0.0, 0.0]))
        rhs = assemble_trace_load(mesh, z)
        shared_node_dof = mesh.dof_index[1]  # base node between cells 0 and 1
        assert rhs[shared_node_dof] == 0.0

    def test_mesh_mismatch(self):
        mesh = small_mesh(cells=4, m=3)
        with pytest.raises(MeshMismatchError):
            assemble_trace_load(mesh, ControlField.zeros(build_base(1, 1.0, 5)))


class TestTraceOf:
    def test_zero(self):
        mesh = small_mesh(cells=4, m=3)
        assert np.all(trace_of(CylinderField.zeros(mesh)).values == 0.0)

    def test_single_node_value(self):
        mesh = small_mesh(cells=4, m=3)
        v = CylinderField.zeros(mesh)
        v.values[2] = 3.0  # interior base node on the trace plane
        tr = trace_of(v)
        assert tr.values[2] == 3.0
        assert tr.boundary_is_zero()

    def test_trace_inequality_instance(self):
        # ||tr V||_L2 stays below a fixed multiple of the energy norm
        mesh = small_mesh(cells=8, m=8, height=3.0)
        cfg = make_cfg()
        mat = assemble_stiffness(mesh, cfg)
        rng = np.random.default_rng(4)
        for _ in range(10):
            v = CylinderField.from_free(mesh, rng.standard_normal(mesh.n_free))
            tr = trace_of(v)
            tr_norm = math.sqrt(l2_inner_omega(tr, tr))
            energy = math.sqrt(v.free_values() @ mat.matvec(v.free_values()))
            assert tr_norm <= 10.0 * energy


class TestCellAverages:
    def test_constant(self):
        base = build_base(1, 1.0, 6)
        f = TraceField(base, np.full(7, 2.5))
        np.testing.assert_allclose(cell_averages(f, base).values, 2.5)

    def test_linear_single_cell(self):
        base = build_base(1, 1.0, 1)
        f = TraceField(base, np.array([0.0, 1.0]))
        assert cell_averages(f, base).values[0] == pytest.approx(0.5)

    def test_hat_function(self):
        base = build_base(1, 1.0, 4)
        f = TraceField(base, np.array([0.0, 0.0, 1.0, 0.0, 0.0]))
        np.testing.assert_allclose(cell_averages(f, base).values, [0.0, 0.5, 0.5, 0.0])

    def test_mismatch(self):
        base = build_base(1, 1.0, 4)
        with pytest.raises(MeshMismatchError):
            cell_averages(TraceField.zeros(base), build_base(1, 1.0, 5))


class TestL2Inner:
    def test_constant_one(self):
        base = build_base(1, 1.0, 9)
        f = TraceField(base, np.ones(10))  # boundary-free variant, internal use
        assert l2_inner_omega(f, f) == pytest.approx(1.0, rel=1e-14)

    def test_hat_squared(self):
        base = build_base(1, 1.0, 8)
        f = TraceField.zeros(base)
        f.values[4] = 1.0
        assert l2_inner_omega(f, f) == pytest.approx(2.0 * 0.125 / 3.0, rel=1e-14)

    def test_disjoint_supports(self):
        base = build_base(1, 1.0, 8)
        f = TraceField.zeros(base)
        g = TraceField.zeros(base)
        f.values[1] = 1.0
        g.values[6] = 1.0
        assert l2_inner_omega(f, g) == 0.0

    def test_mass_apply_against_dense(self):
        base = build_base(1, 1.0, 5)
        nodes = base.axes[0]
        n = nodes.size
        dense = np.zeros((n, n))
        h = np.diff(nodes)
        for j in range(n - 1):
            dense[j, j] += h[j] / 3
            dense[j + 1, j + 1] += h[j] / 3
            dense[j, j + 1] += h[j] / 6
            dense[j + 1, j] += h[j] / 6
        rng = np.random.default_rng(0)
        v = rng.standard_normal(n)
        np.testing.assert_allclose(p1_mass_apply(base, v), dense @ v, rtol=1e-14)

    def test_mass_apply_2d_integrates_one(self):
        base = build_base(2, 1.0, 4)
        ones = np.ones(base.n_nodes)
        assert float(ones @ p1_mass_apply(base, ones)) == pytest.approx(1.0, rel=1e-13)


class TestOrthogonalProjection:
    def test_orthogonality_residual(self):
        rng = np.random.default_rng(12)
        base = build_base(1, 1.0, 13)
        f = TraceField(base, rng.standard_normal(base.n_nodes))
        pf = cell_averages(f, base)
        h = np.diff(base.axes[0])
        cell_integrals = h * (f.values[:-1] + f.values[1:]) / 2.0
        residual = np.abs(cell_integrals - pf.values * h)
        assert residual.max() <= 1e-12

    def test_stability(self):
        rng = np.random.default_rng(13)
        base = build_base(1, 1.0, 21)
        for _ in range(20):
            f = TraceField(base, rng.standard_normal(base.n_nodes))
            pf = cell_averages(f, base)
            norm_f = math.sqrt(l2_inner_omega(f, f))
            norm_pf = math.sqrt(float(np.sum(base.cell_measures * pf.values**2)))
            assert norm_pf <= norm_f + 1e-14

    def test_first_order_approximation(self):
        errors = []
        cells_list = [8, 16, 32, 64, 128]
        gx, gw = np.polynomial.legendre.leggauss(8)
        for cells in cells_list:
            base = build_base(1, 1.0, cells)
            a, b = base.axes[0][:-1], base.axes[0][1:]
            avg = (np.cos(np.pi * a) - np.cos(np.pi * b)) / (np.pi * (b - a))
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            pts = mid[:, None] + half[:, None] * gx[None, :]
            vals = np.sin(np.pi * pts) - avg[:, None]
            errors.append(math.sqrt(float(np.sum(half[:, None] * gw[None, :] * vals**2))))
        slope = np.polyfit(np.log(cells_list), np.log(errors), 1)[0]
        assert -1.1 <= slope <= -0.9


class TestTailEnergy:
    def test_zero_cut_recovers_full_gradient_energy(self):
        mesh = small_mesh(cells=6, m=6, height=3.0)
        cfg = make_cfg(c=0.0)
        consts = derived_constants(cfg)
        mat = assemble_stiffness(mesh, cfg)
        rng = np.random.default_rng(1)
        v = CylinderField.from_free(mesh, rng.standard_normal(mesh.n_free))
        tail = gradient_tail_energy(v, cfg, 0.0)
        energy = math.sqrt(consts.d_s * float(v.free_values() @ mat.matvec(v.free_values())))
        assert tail == pytest.approx(energy, rel=1e-12)

    def test_monotone_in_cut(self):
        mesh = small_mesh(cells=6, m=10, height=4.0)
        cfg = make_cfg()
        rng = np.random.default_rng(8)
        v = CylinderField.from_free(mesh, rng.standard_normal(mesh.n_free))
        cuts = [0.0, 0.5, 1.0, 2.0, 3.5, 4.0]
        vals = [gradient_tail_energy(v, cfg, y) for y in cuts]
        assert all(vals[i] >= vals[i + 1] for i in range(len(vals) - 1))
        assert vals[-1] == 0.0

    def test_partial_cell_split_consistent(self):
        mesh = small_mesh(cells=4, m=4, height=2.0)
        cfg = make_cfg(s=0.3)
        rng = np.random.default_rng(3)
        v = CylinderField.from_free(mesh, rng.standard_normal(mesh.n_free))
        # cutting inside a cell must interpolate between the node cuts
        nodes = mesh.axis.nodes
        mid = 0.5 * (nodes[2] + nodes[3])
        e_lo = gradient_tail_energy(v, cfg, nodes[2])
        e_mid = gradient_tail_energy(v, cfg, mid)
        e_hi = gradient_tail_energy(v, cfg, nodes[3])
        assert e_hi <= e_mid <= e_lo
