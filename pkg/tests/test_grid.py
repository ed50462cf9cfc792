import numpy as np
import pytest

from bifluid_lab import grid as g
from bifluid_lab.errors import DomainError
from bifluid_lab.grid import (
    DIRICHLET,
    NEUMANN,
    GalerkinBasis,
    Grid,
    ScalarField,
    VectorField,
    curl,
    divergence,
    gradient,
    inner_product,
    integrate,
    laplacian,
    make_basis,
    make_grid,
    project_onto_basis,
    reconstruct,
)


def line(cells=64, length=1.0):
    return make_grid(1, length, cells)


def box(cells=24, lx=1.0, ly=1.0):
    return make_grid(2, (lx, ly), (cells, cells))


class TestGrid:
    def test_spacing_and_shape(self):
        gr = make_grid(1, 2.0, 16)
        assert gr.spacing == (0.125,)
        assert gr.shape == (17,)
        assert gr.axis(0)[0] == 0.0 and gr.axis(0)[-1] == 2.0

    def test_validation(self):
        with pytest.raises(DomainError):
            make_grid(3, 1.0, 16)
        with pytest.raises(DomainError):
            make_grid(1, 1.0, 4)
        with pytest.raises(DomainError):
            make_grid(1, -1.0, 16)

    def test_weights_sum_to_volume(self):
        gr = box(12, 2.0, 3.0)
        assert np.sum(gr.weight_array()) == pytest.approx(6.0, rel=1e-14)


class TestOperators:
    def test_gradient_of_constant_vanishes(self):
        gr = line()
        f = ScalarField(gr, np.ones(gr.shape), NEUMANN)
        assert np.max(np.abs(gradient(f).values)) == 0.0

    def test_laplacian_eigenfunction(self):
        gr = line(128, 2.0)
        x = gr.axis(0)
        u = np.sin(np.pi * x / 2.0)
        f = ScalarField(gr, u, DIRICHLET)
        lam = (np.pi / 2.0) ** 2
        err = np.max(np.abs(laplacian(f).values + lam * u))
        assert err < 1e-3  # O(dx^2) with dx = 1/64

    def test_divergence_of_curl_is_zero(self):
        gr = box(16)
        X, Y = gr.coords()
        a = ScalarField(gr, np.sin(np.pi * X) * Y**2 * (1 - Y) ** 2, DIRICHLET)
        h = curl(a)
        assert np.max(np.abs(divergence(h).values)) < 1e-12

    def test_curl_bc_mismatch_rejected(self):
        gr = box(16)
        a = ScalarField(gr, np.zeros(gr.shape), NEUMANN)
        with pytest.raises(DomainError):
            curl(a)

    def test_curl_in_1d_rejected(self):
        gr = line()
        with pytest.raises(DomainError):
            curl(ScalarField(gr, np.zeros(gr.shape), DIRICHLET))

    @pytest.mark.parametrize("cells", [32, 64, 128])
    def test_summation_by_parts_dirichlet_pair(self, cells):
        gr = line(cells)
        x = gr.axis(0)
        f = ScalarField(gr, np.sin(np.pi * x) * x * (1 - x), DIRICHLET)
        v = VectorField(gr, np.sin(2 * np.pi * x)[None, :], DIRICHLET)
        lhs = inner_product(gradient(f), v) + inner_product(
            f, divergence(v)
        )
        assert abs(lhs) < 1e-12

    def test_summation_by_parts_neumann_scalar(self):
        gr = line(64)
        x = gr.axis(0)
        f = ScalarField(gr, np.cos(np.pi * x) + 2.0, NEUMANN)
        v = VectorField(gr, np.sin(np.pi * x)[None, :], DIRICHLET)
        lhs = inner_product(gradient(f), v) + inner_product(f, divergence(v))
        assert abs(lhs) < 1e-12

    def test_summation_by_parts_2d(self):
        gr = box(12)
        X, Y = gr.coords()
        f = ScalarField(gr, np.cos(np.pi * X) * np.cos(2 * np.pi * Y), NEUMANN)
        v = VectorField(
            gr,
            np.stack(
                [np.sin(np.pi * X) * np.sin(np.pi * Y), np.sin(2 * np.pi * X) * np.sin(np.pi * Y)]
            ),
            DIRICHLET,
        )
        lhs = inner_product(gradient(f), v) + inner_product(f, divergence(v))
        assert abs(lhs) < 1e-12

    def test_gradient_convergence_order(self):
        errs = []
        for cells in (32, 64, 128):
            gr = line(cells)
            x = gr.axis(0)
            f = ScalarField(gr, np.sin(np.pi * x), DIRICHLET)
            exact = np.pi * np.cos(np.pi * x)
            errs.append(np.max(np.abs(gradient(f).values[0] - exact)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.9)

    def test_laplacian_convergence_order_neumann(self):
        errs = []
        for cells in (32, 64, 128):
            gr = line(cells)
            x = gr.axis(0)
            f = ScalarField(gr, np.cos(np.pi * x), NEUMANN)
            exact = -np.pi**2 * np.cos(np.pi * x)
            errs.append(np.max(np.abs(laplacian(f).values - exact)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.9)


class TestQuadrature:
    def test_constant(self):
        gr = make_grid(1, 2.0, 32)
        f = ScalarField(gr, np.ones(gr.shape), NEUMANN)
        assert integrate(f) == pytest.approx(2.0, rel=1e-14)

    def test_sine(self):
        gr = line(256)
        x = gr.axis(0)
        f = ScalarField(gr, np.sin(np.pi * x), DIRICHLET)
        assert integrate(f) == pytest.approx(2.0 / np.pi, abs=2e-5)

    def test_piecewise_linear_exact(self):
        gr = line(16)
        x = gr.axis(0)
        f = ScalarField(gr, 3.0 * x + 1.0, NEUMANN)
        assert integrate(f) == pytest.approx(2.5, rel=1e-14)

    def test_grid_mismatch(self):
        f = ScalarField(line(16), np.zeros(17), NEUMANN)
        h = ScalarField(line(32), np.zeros(33), NEUMANN)
        with pytest.raises(DomainError):
            inner_product(f, h)


class TestBasis:
    @pytest.mark.parametrize("dim", [1, 2])
    def test_orthonormality(self, dim):
        gr = line(32) if dim == 1 else box(16)
        basis = make_basis(gr, 8)
        gram = np.einsum("kp,p,lp->kl", basis.phi, basis.weights, basis.phi)
        assert np.max(np.abs(gram - np.eye(8))) < 1e-10

    def test_eigenvalues_increasing(self):
        basis = make_basis(line(64), 10)
        assert np.all(np.diff(basis.eigenvalues) > 0.0)

    def test_unit_vector_projection(self):
        gr = line(64)
        basis = make_basis(gr, 6)
        f = reconstruct(np.eye(6)[2], basis)
        coeffs = project_onto_basis(f, basis)
        assert coeffs == pytest.approx(np.eye(6)[2], abs=1e-12)

    def test_linearity(self):
        gr = line(64)
        basis = make_basis(gr, 6)
        f = reconstruct(np.array([2.0, -1.0, 0, 0, 0, 0]), basis)
        coeffs = project_onto_basis(f, basis)
        assert coeffs == pytest.approx([2.0, -1.0, 0, 0, 0, 0], abs=1e-12)

    def test_roundtrip_in_span(self):
        gr = box(16)
        basis = make_basis(gr, 10)
        c = np.linspace(-1, 1, 10)
        f = reconstruct(c, basis)
        assert project_onto_basis(f, basis) == pytest.approx(c, abs=1e-10)

    def test_projection_error_nonincreasing_with_modes(self):
        gr = line(128)
        x = gr.axis(0)
        f = ScalarField(gr, x * (1 - x) * np.exp(x), DIRICHLET)
        errs = []
        for k in (4, 8, 16):
            basis = make_basis(gr, k)
            resid = f.values - basis.reconstruct_values(basis.project_values(f.values))
            errs.append(np.sqrt(np.sum(gr.weight_array() * resid**2)))
        assert errs[1] <= errs[0] and errs[2] <= errs[1]

    def test_nyquist_limit(self):
        with pytest.raises(DomainError):
            make_basis(line(16), 16)
        with pytest.raises(DomainError):
            make_basis(box(8), 50)

    def test_projection_requires_dirichlet(self):
        gr = line(32)
        basis = make_basis(gr, 4)
        f = ScalarField(gr, np.ones(gr.shape), NEUMANN)
        with pytest.raises(DomainError):
            project_onto_basis(f, basis)

    def test_gradient_reconstruction_matches_discrete(self):
        gr = line(128)
        basis = make_basis(gr, 5)
        c = np.array([1.0, 0.5, 0.0, -0.2, 0.1])
        anal = basis.reconstruct_gradient(c)[0]
        fld = reconstruct(c, basis)
        disc = gradient(fld).values[0]
        assert np.max(np.abs(anal - disc)) < 2e-2  # O(dx^2) at mode 5


class TestFieldChecks:
    def test_dirichlet_check(self):
        gr = line(32)
        x = gr.axis(0)
        f = ScalarField(gr, np.sin(np.pi * x), DIRICHLET)
        assert f.check_bc() < 1e-12

    def test_neumann_check(self):
        gr = line(512)
        x = gr.axis(0)
        f = ScalarField(gr, np.cos(np.pi * x), NEUMANN)
        assert f.check_bc() < 2e-2  # one-sided difference is O(dx)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            ScalarField(line(32), np.zeros(10), NEUMANN)
