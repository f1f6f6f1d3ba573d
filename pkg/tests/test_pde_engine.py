import numpy as np
import pytest

from safeprob import BarrierProblem, GridSpec, IbvpSpec, build_mask, solve_ibvp, step
from safeprob.errors import DataError
from safeprob.pde_engine import (
    SensitivityProbe,
    ThetaStepper,
    _assemble_operator,
    diagnostics_report,
    export_snapshot_csv,
    has_truncation_faces,
    series_to_json,
)

from conftest import HEAT_HALFLINE, identity_barrier


def const_fields(grid, mu, sig2, axis=0):
    shape = grid.shape
    n = grid.ndim
    conv = np.zeros(shape + (n,))
    conv[..., axis] = mu
    diff = np.zeros(shape + (n, n))
    for a in range(n):
        diff[..., a, a] = sig2
    return conv, diff


def line_spec(lo, hi, cells, mu, sig2, mask_fn, dirichlet, init_from_mask=True,
              horizon=1.0, dt=1e-3, theta=1.0):
    grid = GridSpec((lo,), (hi,), (cells,))
    x = grid.axes()[0]
    mask = mask_fn(x)
    conv, diff = const_fields(grid, mu, sig2)
    if init_from_mask:
        init = np.where(mask, 1.0 - dirichlet, dirichlet)
    else:
        init = np.full(grid.shape, dirichlet)
    return IbvpSpec(grid, mask, conv, diff, dirichlet, init, horizon, dt, theta)


class TestGridSpec:
    def test_spacing_and_nodes(self):
        grid = GridSpec((0.0, -1.0), (1.0, 1.0), (10, 20))
        assert grid.spacing == (0.1, 0.1)
        assert grid.shape == (11, 21)
        nodes = grid.nodes()
        assert nodes.shape == (11 * 21, 2)
        np.testing.assert_allclose(nodes[0], [0.0, -1.0])
        np.testing.assert_allclose(nodes[-1], [1.0, 1.0])

    def test_rejects_too_few_cells(self):
        with pytest.raises(ValueError, match="below minimum"):
            GridSpec((0.0,), (1.0,), (4,))

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError, match="below upper"):
            GridSpec((1.0,), (0.0,), (10,))

    def test_rejects_above_three_dimensions(self):
        with pytest.raises(ValueError, match="rejected"):
            GridSpec((0.0,) * 4, (1.0,) * 4, (8,) * 4)

    def test_rejects_node_cap(self):
        with pytest.raises(ValueError, match="cap"):
            GridSpec((0.0,), (1.0,), (100,), node_cap=50)


class TestBuildMask:
    def test_sign_mask_on_line(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        mask = build_mask(grid, identity_barrier(), "super")
        np.testing.assert_array_equal(mask, grid.axes()[0] >= 0.0)

    def test_sub_side_is_complement(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        sup = build_mask(grid, identity_barrier(), "super")
        sub = build_mask(grid, identity_barrier(), "sub")
        np.testing.assert_array_equal(sub, ~sup)

    def test_disk_mask_matches_brute_force(self):
        grid = GridSpec((-1.5, -1.5), (1.5, 1.5), (30, 30))
        bar = BarrierProblem(phi=lambda X: 1.0 - X[..., 0] ** 2 - X[..., 1] ** 2,
                             vectorized=True)
        mask = build_mask(grid, bar, "super")
        xs, ys = grid.axes()
        count = sum(1 for xv in xs for yv in ys if 1.0 - xv**2 - yv**2 >= 0.0)
        assert int(mask.sum()) == count

    def test_level_override(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        mask = build_mask(grid, identity_barrier(), "super", level=1.0)
        np.testing.assert_array_equal(mask, grid.axes()[0] >= 1.0)

    def test_bad_side_rejected(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        with pytest.raises(ValueError):
            build_mask(grid, identity_barrier(), "above")


class TestIbvpSpecValidation:
    def _parts(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        mask = grid.axes()[0] >= 0.0
        conv, diff = const_fields(grid, 0.0, 1.0)
        init = np.where(mask, 1.0, 0.0)
        return grid, mask, conv, diff, init

    def test_asymmetric_diffusion_rejected(self):
        grid = GridSpec((-2.0, -2.0), (2.0, 2.0), (8, 8))
        mask = np.ones(grid.shape, dtype=bool)
        conv = np.zeros(grid.shape + (2,))
        diff = np.zeros(grid.shape + (2, 2))
        diff[..., 0, 1] = 1.0
        with pytest.raises(DataError, match="symmetric"):
            IbvpSpec(grid, mask, conv, diff, 0.0, np.ones(grid.shape), 1.0, 0.1)

    def test_non_indicator_initial_rejected(self):
        grid, mask, conv, diff, init = self._parts()
        with pytest.raises(DataError, match="0 or 1"):
            IbvpSpec(grid, mask, conv, diff, 0.0, init * 0.5, 1.0, 0.1)

    def test_initial_must_match_dirichlet(self):
        grid, mask, conv, diff, _ = self._parts()
        init = np.ones(grid.shape)
        with pytest.raises(DataError, match="disagrees"):
            IbvpSpec(grid, mask, conv, diff, 0.0, init, 1.0, 0.1)

    def test_theta_range(self):
        grid, mask, conv, diff, init = self._parts()
        with pytest.raises(DataError, match="theta"):
            IbvpSpec(grid, mask, conv, diff, 0.0, init, 1.0, 0.1, theta=0.3)

    def test_non_psd_diffusion_rejected(self):
        grid = GridSpec((-2.0, -2.0), (2.0, 2.0), (8, 8))
        mask = np.ones(grid.shape, dtype=bool)
        conv = np.zeros(grid.shape + (2,))
        diff = np.zeros(grid.shape + (2, 2))
        diff[..., 0, 1] = 1.0
        diff[..., 1, 0] = 1.0
        with pytest.raises(DataError, match="PSD"):
            IbvpSpec(grid, mask, conv, diff, 0.0, np.ones(grid.shape), 1.0, 0.1)


class TestStep:
    def test_zero_operator_leaves_field_unchanged(self):
        spec = line_spec(-2.0, 2.0, 16, 0.0, 0.0, lambda x: x >= 0.0, 0.0)
        out = step(spec, spec.initial_field)
        np.testing.assert_array_equal(out, spec.initial_field)

    def test_constants_are_solutions(self):
        spec = line_spec(-2.0, 2.0, 16, 0.7, 1.3, lambda x: x >= 0.0, 1.0,
                         init_from_mask=False)
        field = spec.initial_field
        for _ in range(5):
            field = step(spec, field)
        np.testing.assert_allclose(field, 1.0, atol=1e-12)

    def test_dirichlet_precondition_enforced(self):
        spec = line_spec(-2.0, 2.0, 16, 0.0, 1.0, lambda x: x >= 0.0, 0.0)
        bad = np.ones(spec.grid.shape)
        with pytest.raises(DataError, match="Dirichlet"):
            step(spec, bad)

    def test_half_line_heat_kernel(self):
        # Pure diffusion F_t = F''/2 on x > 0, absorbed at 0, unit start:
        # F(x, T) = erf(x / sqrt(2 T)).
        spec = line_spec(0.0, 6.0, 600, 0.0, 1.0, lambda x: x > 0.0, 0.0)
        series = solve_ibvp(spec, snapshot_times=[1.0])
        value = float(series.sample([[1.0]], -1)[0])
        assert value == pytest.approx(HEAT_HALFLINE, abs=5e-3)


class TestSolveIbvp:
    def test_zero_horizon_returns_initial_snapshot(self):
        spec = line_spec(-2.0, 2.0, 16, 0.5, 1.0, lambda x: x >= 0.0, 0.0, horizon=0.0)
        series = solve_ibvp(spec)
        assert list(series.times) == [0.0]
        np.testing.assert_array_equal(series.fields[0], spec.initial_field)

    def test_times_strictly_increasing_from_zero(self):
        spec = line_spec(-2.0, 2.0, 32, 0.5, 1.0, lambda x: x >= 0.0, 0.0,
                         horizon=0.5, dt=1e-2)
        series = solve_ibvp(spec, snapshot_times=np.linspace(0, 0.5, 11))
        assert series.times[0] == 0.0
        assert np.all(np.diff(series.times) > 0)

    def test_max_principle_keeps_unit_interval(self):
        spec = line_spec(-2.0, 2.0, 64, -1.5, 0.8, lambda x: x >= 0.0, 1.0)
        series = solve_ibvp(spec, snapshot_times=[0.5, 1.0])
        assert series.diagnostics.field_min >= -1e-8
        assert series.diagnostics.field_max <= 1.0 + 1e-8

    def test_exit_shaped_problem_nondecreasing_in_time(self):
        spec = line_spec(-2.0, 2.0, 64, 0.3, 1.0, lambda x: x >= 0.0, 1.0)
        series = solve_ibvp(spec, snapshot_times=np.linspace(0, 1, 21))
        diffs = np.diff(series.fields, axis=0)
        assert diffs.min() >= -1e-12

    def test_complement_linearity(self):
        mask_fn = lambda x: x >= 0.0
        spec0 = line_spec(-2.0, 2.0, 64, 0.4, 1.0, mask_fn, 0.0)
        spec1 = line_spec(-2.0, 2.0, 64, 0.4, 1.0, mask_fn, 1.0)
        times = np.linspace(0, 1, 11)
        s0 = solve_ibvp(spec0, snapshot_times=times)
        s1 = solve_ibvp(spec1, snapshot_times=times)
        total = s0.fields + s1.fields
        assert np.max(np.abs(total - 1.0)) < 1e-6

    def test_dt_refinement_consistency(self):
        # First-order stepping: halving dt should move values by O(dt).
        coarse = line_spec(0.0, 6.0, 300, 1.0, 1.0, lambda x: x > 0.0, 0.0, dt=2e-3)
        fine = line_spec(0.0, 6.0, 300, 1.0, 1.0, lambda x: x > 0.0, 0.0, dt=1e-3)
        vc = float(solve_ibvp(coarse, snapshot_times=[1.0]).sample([[1.0]], -1)[0])
        vf = float(solve_ibvp(fine, snapshot_times=[1.0]).sample([[1.0]], -1)[0])
        assert abs(vc - vf) < 2e-3

    def test_crank_nicolson_with_mollified_front(self):
        spec = line_spec(0.0, 6.0, 300, 0.0, 1.0, lambda x: x > 0.0, 0.0,
                         dt=1e-3, theta=0.5)
        spec = IbvpSpec(spec.grid, spec.interior_mask, spec.convection,
                        spec.diffusion, 0.0, spec.initial_field, 1.0, 1e-3,
                        theta=0.5, mollify_initial=True)
        series = solve_ibvp(spec, snapshot_times=[1.0])
        value = float(series.sample([[1.0]], -1)[0])
        assert value == pytest.approx(HEAT_HALFLINE, abs=5e-3)

    def test_residuals_reported(self):
        spec = line_spec(-2.0, 2.0, 32, 0.5, 1.0, lambda x: x >= 0.0, 0.0,
                         horizon=0.1, dt=1e-2)
        series = solve_ibvp(spec)
        assert series.diagnostics.max_residual <= 1e-10
        assert series.diagnostics.n_steps == 10


class TestCrossDerivativeStencil:
    def test_bilinear_field_reproduces_mixed_trace(self):
        # For F = x*y and constant Sigma = [[1, r], [r, 1]], the operator
        # value is r at interior nodes (diagonal terms vanish on F).
        r = 0.6
        grid = GridSpec((-1.0, -1.0), (1.0, 1.0), (10, 10))
        mask = np.ones(grid.shape, dtype=bool)
        conv = np.zeros(grid.shape + (2,))
        diff = np.zeros(grid.shape + (2, 2))
        diff[..., 0, 0] = 1.0
        diff[..., 1, 1] = 1.0
        diff[..., 0, 1] = r
        diff[..., 1, 0] = r
        init = np.zeros(grid.shape)
        spec = IbvpSpec(grid, mask, conv, diff, 0.0, init, 1.0, 0.1)
        L = _assemble_operator(spec)
        xs, ys = np.meshgrid(*grid.axes(), indexing="ij")
        F = (xs * ys).ravel()
        out = (L @ F).reshape(grid.shape)
        np.testing.assert_allclose(out[1:-1, 1:-1], r, atol=1e-10)


class TestSensitivityProbe:
    def test_reflecting_truncation_is_flagged(self):
        # A box that stops short of the absorbing set reflects instead of
        # absorbing; doubling the box exposes the bias.
        small = line_spec(0.5, 4.0, 64, 0.0, 1.0, lambda x: x > 0.4, 0.0)
        wide = line_spec(-1.0, 4.0, 100, 0.0, 1.0, lambda x: x > 0.4, 0.0)
        probe = SensitivityProbe(coarse=small, doubled=wide,
                                 points=np.array([[1.0]]), tolerance=1e-3)
        series = solve_ibvp(small, snapshot_times=[1.0], sensitivity_probe=probe)
        assert series.diagnostics.boundary_flagged
        assert series.diagnostics.boundary_sensitivity > 1e-2

    def test_well_separated_truncation_passes(self):
        base = line_spec(-0.01, 8.0, 200, 1.0, 1.0, lambda x: x >= 0.0, 0.0)
        wide = line_spec(-0.01, 16.0, 400, 1.0, 1.0, lambda x: x >= 0.0, 0.0)
        probe = SensitivityProbe(coarse=base, doubled=wide,
                                 points=np.array([[1.0]]), tolerance=1e-3)
        series = solve_ibvp(base, snapshot_times=[1.0], sensitivity_probe=probe)
        assert not series.diagnostics.boundary_flagged
        assert series.diagnostics.boundary_sensitivity < 1e-6

    def test_truncation_face_detection(self):
        grid = GridSpec((-2.0,), (2.0,), (8,))
        mask = grid.axes()[0] >= 0.0
        assert has_truncation_faces(grid, mask) == [(0, +1)]
        full = np.ones(grid.shape, dtype=bool)
        assert set(has_truncation_faces(grid, full)) == {(0, -1), (0, +1)}
        enclosed = np.zeros(grid.shape, dtype=bool)
        enclosed[3:6] = True
        assert has_truncation_faces(grid, enclosed) == []


class TestExports:
    def test_snapshot_csv_round_trip(self, tmp_path):
        grid = GridSpec((0.0,), (1.0,), (8,))
        field = np.linspace(0, 1, 9)
        path = tmp_path / "snap.csv"
        export_snapshot_csv(grid, field, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x1,value"
        assert len(lines) == 10
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and float(first[1]) == 0.0

    def test_series_json_layout(self):
        spec = line_spec(-2.0, 2.0, 16, 0.0, 1.0, lambda x: x >= 0.0, 0.0,
                         horizon=0.1, dt=0.05)
        series = solve_ibvp(spec, snapshot_times=[0.1])
        doc = series_to_json(series)
        assert doc["grid"]["cells"] == [16]
        assert len(doc["snapshots"][0]["values"]) == 17
        assert doc["snapshots"][-1]["time"] == pytest.approx(0.1)

    def test_diagnostics_json_report(self):
        import json

        spec = line_spec(-2.0, 2.0, 16, 0.0, 1.0, lambda x: x >= 0.0, 0.0,
                         horizon=0.1, dt=0.05)
        series = solve_ibvp(spec)
        report = json.loads(diagnostics_report(series))
        assert report["n_steps"] == 2
        assert report["max_residual"] <= 1e-10


class TestStepperInternals:
    def test_warm_start_converges_immediately_on_steady_state(self):
        spec = line_spec(-2.0, 2.0, 16, 0.0, 0.0, lambda x: x >= 0.0, 0.0)
        stepper = ThetaStepper(spec)
        out, residual, _ = stepper.step(spec.initial_field.ravel())
        assert residual <= 1e-10
        np.testing.assert_array_equal(out, spec.initial_field.ravel())
