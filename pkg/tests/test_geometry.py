import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfreactor import geometry as geo


def chord_turn_angles(points):
    chords = np.diff(points, axis=0)
    units = chords / np.linalg.norm(chords, axis=1, keepdims=True)
    dots = np.clip(np.einsum("ij,ij->i", units[:-1], units[1:]), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def torsion_dets(points):
    """Discrete handedness: scalar triple products of consecutive chords."""
    v1 = points[1:-2] - points[:-3]
    v2 = points[2:-1] - points[1:-2]
    v3 = points[3:] - points[2:-1]
    return np.einsum("ij,ij->i", np.cross(v1, v2), v3)


class TestCoilParams:
    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            geo.CoilParams(0.0, 5.0, 0.5)
        with pytest.raises(ValueError):
            geo.CoilParams(10.0, 5.0, 1.5)
        with pytest.raises(ValueError):
            geo.CoilParams(10.0, 5.0, 0.5, tube_length_mm=15.0)


class TestCoilPath:
    def test_fixed_total_length(self):
        for pitch, radius, delta in [(7.5, 3.0, 0.0), (15.0, 12.5, 0.5),
                                     (10.0, 8.0, 0.66), (12.0, 4.0, 1.0)]:
            path = geo.coil_path(geo.CoilParams(pitch, radius, delta))
            assert geo.arc_length(path) == pytest.approx(75.0, rel=1e-3)

    def test_arc_length_equals_cumulative(self):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.3))
        assert geo.arc_length(path) == pytest.approx(path.total_length, rel=1e-12)

    def test_axial_advance_per_turn_matches_pitch(self):
        pitch = 9.0
        path = geo.coil_path(geo.CoilParams(pitch, 4.0, 0.0), samples_per_mm=16.0)
        (a0, a1), = [path.sections["helix"]]
        s = path.cumulative_arclength
        sel = (s >= a0) & (s <= a1)
        helix_pts = path.points[sel]
        speed = path.meta["speed_per_angle"]
        turn_arc = 2 * np.pi * speed
        k = int(np.floor(turn_arc * 16.0))
        dz = helix_pts[k:, 2] - helix_pts[:-k, 2]
        # advance over one full turn of arc, within sampling resolution
        assert np.allclose(dz, pitch, atol=0.1)

    def test_helix_section_matches_analytic_length(self):
        for delta in (0.0, 0.5):
            path = geo.coil_path(geo.CoilParams(7.5, 3.0, delta), samples_per_mm=8.0)
            for analytic, sampled in zip(path.meta["helix_lengths_analytic"],
                                         path.meta["helix_lengths_sampled"]):
                assert sampled == pytest.approx(analytic, rel=5e-4)

    def test_refinement_convergence(self):
        coarse = geo.coil_path(geo.CoilParams(10.0, 8.0, 0.4), samples_per_mm=4.0)
        fine = geo.coil_path(geo.CoilParams(10.0, 8.0, 0.4), samples_per_mm=16.0)
        assert geo.arc_length(fine) == pytest.approx(geo.arc_length(coarse), rel=1e-4)

    def test_straight_two_point_arc_length(self):
        path = geo.CenterlinePath(np.array([[0.0, 0, 0], [10.0, 0, 0]]),
                                  np.array([0.0, 10.0]))
        assert geo.arc_length(path) == 10.0

    def test_inlet_outlet_horizontal(self):
        for delta in (0.0, 0.37, 0.8):
            path = geo.coil_path(geo.CoilParams(12.0, 10.0, delta))
            first = path.points[1] - path.points[0]
            last = path.points[-1] - path.points[-2]
            assert abs(first[2]) / np.linalg.norm(first) < 1e-9
            assert abs(last[2]) / np.linalg.norm(last) < 1e-9

    def test_tangent_continuity_within_one_degree(self):
        # C1 contract at the blend joins, checked at fine sampling where the
        # per-chord curvature turn is itself below a degree.
        for pitch, radius, delta in [(7.5, 3.0, 0.5), (15.0, 12.5, 0.25),
                                     (10.0, 7.0, 0.0)]:
            path = geo.coil_path(geo.CoilParams(pitch, radius, delta),
                                 samples_per_mm=32.0)
            assert chord_turn_angles(path.points).max() < 1.0

    def test_torsion_sign_flips_at_inversion(self):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.5), samples_per_mm=16.0)
        s = path.cumulative_arclength
        a0, a1 = path.sections["helix_a"]
        b0, b1 = path.sections["helix_b"]
        det_a = torsion_dets(path.points[(s >= a0 + 1) & (s <= a1 - 1)])
        det_b = torsion_dets(path.points[(s >= b0 + 1) & (s <= b1 - 1)])
        assert np.median(det_a) > 0
        assert np.median(det_b) < 0

    def test_no_inversion_for_delta_zero_and_one(self):
        for delta in (0.0, 1.0):
            path = geo.coil_path(geo.CoilParams(10.0, 6.0, delta))
            assert not path.meta["inversion_active"]
            assert "helix" in path.sections

    def test_clearance_over_parameter_grid(self):
        for pitch in np.linspace(7.5, 15.0, 3):
            for radius in np.linspace(3.0, 12.5, 3):
                for delta in (0.0, 0.5, 0.9):
                    path = geo.coil_path(geo.CoilParams(pitch, radius, delta),
                                         samples_per_mm=5.0)
                    assert path.meta["min_clearance_mm"] >= 5.0

    def test_strictly_increasing_arclength(self):
        path = geo.coil_path(geo.CoilParams(8.0, 5.0, 0.6))
        assert np.all(np.diff(path.cumulative_arclength) > 0)


class TestOscillatoryVelocity:
    def test_zero_at_time_zero(self):
        p = geo.OscillationParams(2.0, 5.0, 50.0)
        assert geo.oscillatory_velocity(p, 0.0) == 0.0

    def test_operating_bounds_enforced(self):
        with pytest.raises(ValueError):
            geo.OscillationParams(0.5, 5.0, 50.0)
        with pytest.raises(ValueError):
            geo.OscillationParams(2.0, 9.0, 50.0)
        with pytest.raises(ValueError):
            geo.OscillationParams(2.0, 5.0, 60.0)

    def test_peak_at_quarter_period(self):
        a, f = 3.0, 4.0
        p = geo.OscillationParams(a, f, 50.0)
        t_peak = 1.0 / (4.0 * f)
        assert geo.oscillatory_velocity(p, t_peak) == pytest.approx(
            2 * np.pi * f * a, rel=1e-12)

    def test_reported_operating_point(self):
        # a = 1 mm, f = 2 Hz: peak velocity 4*pi mm/s.
        p = geo.OscillationParams(1.0, 2.0, 50.0)
        assert geo.oscillatory_velocity(p, 1.0 / 8.0) == pytest.approx(
            4 * np.pi, rel=1e-12)

    @given(st.floats(1.0, 8.0), st.floats(2.0, 8.0), st.integers(1, 5))
    @settings(max_examples=30, deadline=None)
    def test_integrates_to_zero_over_whole_periods(self, a, f, periods):
        p = geo.OscillationParams(a, f, 30.0)
        t = np.linspace(0.0, periods / f, 20001)
        v = geo.oscillatory_velocity(p, t)
        displacement = np.trapezoid(v, t)
        assert abs(displacement) < 1e-6 * (2 * np.pi * f * a)


class TestExport:
    def test_csv_round_trip(self, tmp_path):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.5), samples_per_mm=4.0)
        dest = geo.export_path(path, "csv", tmp_path / "coil.csv")
        data = np.genfromtxt(dest, delimiter=",", skip_header=1)
        assert np.allclose(data[:, :3], path.points, atol=1e-9)
        assert np.allclose(data[:, 3], path.cumulative_arclength, atol=1e-9)

    def test_json_includes_params_echo(self, tmp_path):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.25))
        dest = geo.export_path(path, "json", tmp_path / "coil.json")
        payload = json.loads(dest.read_text())
        assert payload["params"]["pitch_mm"] == 10.0
        assert payload["params"]["inversion"] == 0.25
        assert len(payload["points_mm"]) == path.points.shape[0]

    def test_obj_polyline_structure(self, tmp_path):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.0), samples_per_mm=2.0)
        dest = geo.export_path(path, "obj", tmp_path / "coil.obj")
        lines = dest.read_text().strip().splitlines()
        verts = [ln for ln in lines if ln.startswith("v ")]
        polys = [ln for ln in lines if ln.startswith("l ")]
        assert len(verts) == path.points.shape[0]
        assert len(polys) == 1
        indices = polys[0].split()[1:]
        assert indices == [str(i + 1) for i in range(len(verts))]

    def test_unknown_format(self, tmp_path):
        path = geo.coil_path(geo.CoilParams(10.0, 6.0, 0.0), samples_per_mm=2.0)
        with pytest.raises(ValueError):
            geo.export_path(path, "stl", tmp_path / "coil.stl")
