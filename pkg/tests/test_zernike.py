import numpy as np
import pytest

from coilnav import field_oracle as fo
from coilnav import zernike as zk
from coilnav.angles import rot2


@pytest.fixture(scope="module")
def small_grid(system):
    return system.class_grids["small"].cropped(6).decimated(2)


@pytest.fixture(scope="module")
def large_grid(system):
    return system.class_grids["large"].cropped(6).decimated(2)


def frame_of(size):
    cls = fo.COIL_CLASS_DEFAULTS[size]
    return zk.DiskFrame(center=(0.0, cls["center_offset"]), rho_max=cls["rho_max"])


class TestRadialPoly:
    def test_piston_is_one(self):
        assert zk.radial_poly(0, 0, 0.37) == pytest.approx(1.0)

    def test_defocus_at_origin(self):
        # 2(x^2+y^2) - 1 at the origin
        assert zk.radial_poly(2, 0, 0.0) == pytest.approx(-1.0)

    def test_r22_is_rho_squared(self):
        assert zk.radial_poly(2, 2, 0.5) == pytest.approx(0.25)

    def test_invalid_terms_raise(self):
        with pytest.raises(zk.InvalidTermError):
            zk.radial_poly(3, 2, 0.5)
        with pytest.raises(zk.InvalidTermError):
            zk.radial_poly(2, 3, 0.5)


class TestBasis:
    def test_term_count(self):
        for order in range(7):
            basis = zk.get_basis(order)
            assert basis.n_terms == (order + 1) * (order + 2) // 2

    def test_tabulated_cartesian_forms(self):
        basis = zk.get_basis(2)
        assert zk.basis_eval(basis, 5, 0.5, 0.5) == pytest.approx(0.5)  # 2xy
        assert zk.basis_eval(basis, 4, 0.3, 0.3) == pytest.approx(0.0, abs=1e-15)  # x^2-y^2
        for u in (0.1, -0.7, 0.9):
            assert zk.basis_eval(basis, 1, u, 0.0) == pytest.approx(u)  # x
        assert zk.basis_eval(basis, 0, -0.2, 0.8) == pytest.approx(1.0)
        assert zk.basis_eval(basis, 3, 0.5, 0.0) == pytest.approx(2 * 0.25 - 1)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            zk.basis_eval(zk.get_basis(2), 6, 0.0, 0.0)

    def test_cartesian_matches_polar_form(self):
        # Every monomial table must reproduce R_n^m(rho)*{cos,sin}(m phi).
        rng = np.random.default_rng(0)
        r = np.sqrt(rng.uniform(0, 1, 400))
        phi = rng.uniform(0, 2 * np.pi, 400)
        u, v = r * np.cos(phi), r * np.sin(phi)
        basis = zk.get_basis(6)
        for t, (n, m, s) in enumerate(basis.terms):
            polar = zk.radial_poly(n, m, r) * (np.cos(m * phi) if s > 0 else np.sin(m * phi))
            cart = zk.basis_eval(basis, t, u, v)
            assert np.abs(cart - polar).max() <= 1e-12

    def test_orthogonality_monte_carlo(self):
        rng = np.random.default_rng(1)
        n = 20000
        r = np.sqrt(rng.uniform(0, 1, n))
        phi = rng.uniform(0, 2 * np.pi, n)
        u, v = r * np.cos(phi), r * np.sin(phi)
        basis = zk.get_basis(4)
        Z = basis.design_matrix(u, v)
        for i in range(basis.n_terms):
            for j in range(i + 1, basis.n_terms):
                prod = Z[:, i] * Z[:, j]
                est = prod.mean()
                sigma = prod.std(ddof=1) / np.sqrt(n)
                assert abs(est) <= 3.0 * sigma + 1e-12


class TestFit:
    def test_exact_polynomial_recovery(self, small_grid):
        frame = frame_of("small")
        q = frame.to_local(small_grid.points())
        vals = np.stack([q[:, 0] ** 2 - q[:, 1] ** 2, np.zeros(len(q))], axis=1)
        from dataclasses import replace

        fake = replace(
            small_grid,
            bx=vals[:, 0].reshape(small_grid.nx, small_grid.ny),
            by=vals[:, 1].reshape(small_grid.nx, small_grid.ny),
        )
        coeffs, _ = zk.fit(fake, frame, 2)
        assert coeffs[0, 4] == pytest.approx(1.0, abs=1e-10)
        others = np.delete(coeffs[0], 4)
        assert np.abs(others).max() <= 1e-10

    def test_surrogate_large_coil_quality(self, large_grid):
        _, rep = zk.fit(large_grid, frame_of("large"), 3)
        assert rep.r_squared[0] >= 0.99 and rep.r_squared[1] >= 0.99

    def test_refit_deterministic(self, small_grid):
        frame = frame_of("small")
        c1, _ = zk.fit(small_grid, frame, 4)
        c2, _ = zk.fit(small_grid, frame, 4)
        assert np.array_equal(c1, c2)

    def test_too_few_samples_rejected(self, small_grid):
        tiny = small_grid.decimated(25)  # 3x3 nodes
        with pytest.raises(ValueError, match="3 samples per basis term"):
            zk.fit(tiny, frame_of("small"), 4)

    def test_samples_outside_disk_rejected(self, small_grid):
        with pytest.raises(ValueError, match="unit disk"):
            zk.fit(small_grid, zk.DiskFrame((0.0, 57.69), 60.0), 2)

    def test_condition_guard(self, small_grid):
        # A huge disk radius shrinks high-order columns towards zero.
        with pytest.raises(zk.DegenerateFitError):
            zk.fit(small_grid, zk.DiskFrame((0.0, 57.69), 1e9), 6)

    def test_divergence_penalty_mode_improves_divergence(self, small_grid):
        frame = frame_of("small")
        _, plain = zk.fit(small_grid, frame, 4)
        _, penalized = zk.fit(small_grid, frame, 4, div_penalty=0.05)
        assert penalized.divergence_rms_ratio < plain.divergence_rms_ratio


class TestOrderSelection:
    def test_mae_non_increasing_and_selection(self, small_grid, large_grid):
        rows_s = zk.order_selection_report(small_grid, frame_of("small"), range(1, 7))
        rows_l = zk.order_selection_report(large_grid, frame_of("large"), range(1, 7))
        for rows in (rows_s, rows_l):
            maes = [r["mae"] for r in rows]
            assert all(b <= a for a, b in zip(maes, maes[1:]))
        assert zk.select_order(rows_s) == 4
        assert zk.select_order(rows_l) == 3

    def test_r2_nan_for_constant_zero_samples(self, small_grid):
        from dataclasses import replace

        zeros = replace(
            small_grid,
            bx=np.zeros((small_grid.nx, small_grid.ny)),
            by=np.zeros((small_grid.nx, small_grid.ny)),
        )
        _, rep = zk.fit(zeros, frame_of("small"), 2)
        assert np.isnan(rep.r_squared[0]) and np.isnan(rep.r_squared[1])


class TestModelEvaluation:
    def test_zero_currents_zero_field(self, system):
        assert np.allclose(system.zernike.eval_field((0.0, 0.0), np.zeros(8)), 0.0)

    def test_linearity_in_currents(self, system):
        rng = np.random.default_rng(2)
        p = rng.uniform(-40, 40, 2)
        I = rng.uniform(-4, 4, 8)
        B1 = system.zernike.eval_field(p, I)
        B2 = system.zernike.eval_field(p, 2 * I)
        assert np.allclose(B2, 2 * B1, rtol=1e-12)

    def test_single_coil_matches_oracle_within_fit_error(self, system):
        I = np.zeros(8)
        I[0] = 1.0  # north small
        spec = [c for c in system.coils if c.stack_face == "north" and c.size_class == "small"][0]
        B_model = system.zernike.eval_field((0.0, 0.0), I)
        B_true = fo.biot_savart_unit_field(spec, (0.0, 0.0))
        mae = system.fit_reports["small"].mae
        assert np.abs(B_model - B_true).max() <= 5 * mae

    def test_gradient_matches_finite_differences(self, system):
        assert zk.gradient_fd_check(system.zernike, n_points=200, seed=3) <= 1e-6

    def test_gradient_of_exact_test_model(self):
        # Bx = u^2 - v^2 fitted exactly: gradient row (2u, -2v)/rho_max.
        frame = zk.DiskFrame((0.0, 0.0), 100.0)
        basis = zk.get_basis(2)
        coef_bx = np.zeros(basis.n_terms)
        coef_bx[4] = 1.0
        coil = zk.CoilFieldFit(
            name="t", face="north", face_angle=0.0, frame=frame, order=2,
            coef_bx=coef_bx, coef_by=np.zeros(basis.n_terms),
        )
        model = zk.ZernikeFieldModel(coils=(coil,))
        g = model.eval_gradient((30.0, -20.0), np.ones(1))
        u, v = 0.3, -0.2
        scale = 1.0 / (100.0 * 1e-3)
        assert g[0, 0] == pytest.approx(2 * u * scale, rel=1e-12)
        assert g[0, 1] == pytest.approx(-2 * v * scale, rel=1e-12)

    def test_divergence_zero_currents(self, system):
        assert system.zernike.divergence((3.0, 4.0), np.zeros(8)) == 0.0

    def test_divergence_of_constructed_solenoidal_model(self):
        # Bx = u, By = -v has exactly zero planar divergence.
        frame = zk.DiskFrame((0.0, 0.0), 100.0)
        basis = zk.get_basis(1)
        bx = np.zeros(basis.n_terms)
        by = np.zeros(basis.n_terms)
        bx[1] = 1.0  # u
        by[2] = -1.0  # -v
        coil = zk.CoilFieldFit("t", "north", 0.0, frame, 1, bx, by)
        model = zk.ZernikeFieldModel(coils=(coil,))
        assert model.divergence((12.0, 34.0), np.ones(1)) == pytest.approx(0.0, abs=1e-18)

    def test_fitted_divergence_ratio(self, system):
        assert zk.divergence_stats(system.zernike, n_points=500, seed=4) <= 0.05

    def test_rotation_equivariance(self, system):
        # East-coil eval == rotate into north frame, evaluate, rotate back.
        model = system.zernike
        east = model.coils[2]  # east small
        north = model.coils[0]
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = rng.uniform(-45, 45, 2)
            I = np.zeros(8)
            I[2] = 1.7
            B_east = model.eval_field(p, I)
            In = np.zeros(8)
            In[0] = 1.7
            p_north = rot2(-east.face_angle) @ p
            B_north = model.eval_field(p_north, In)
            assert np.abs(B_east - rot2(east.face_angle) @ B_north).max() <= 1e-12

    def test_coverage_error(self, system):
        with pytest.raises(zk.CoverageError):
            system.zernike.eval_field((500.0, 500.0), np.zeros(8))

    def test_fit_error_bound_vs_peak_field(self, system):
        # Worst-case fit residual stays below 10% of the peak field.
        for size in ("small", "large"):
            grid = system.class_grids[size].cropped(6).decimated(2)
            peak = np.abs(grid.values()).max()
            assert system.fit_reports[size].max_abs_error <= 0.10 * peak


class TestModelFile:
    def test_round_trip(self, system, tmp_path):
        path = tmp_path / "model.json"
        system.zernike.save(path)
        loaded = zk.ZernikeFieldModel.load(path)
        rng = np.random.default_rng(7)
        for _ in range(5):
            p = rng.uniform(-45, 45, 2)
            I = rng.uniform(-5, 5, 8)
            assert np.allclose(
                loaded.eval_field(p, I), system.zernike.eval_field(p, I), rtol=1e-15
            )

    def test_format_tag_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            zk.ZernikeFieldModel.load(path)

    def test_medium_class_is_fit_capable(self):
        cls = fo.COIL_CLASS_DEFAULTS["medium"]
        spec = fo.CoilSpec("north", "medium", cls["center_offset"], cls["loop_radius"])
        grid = fo.sample_grid(spec)
        _, rep = zk.fit(grid, zk.DiskFrame((0.0, cls["center_offset"]), cls["rho_max"]), 4)
        assert min(rep.r_squared) >= 0.99
