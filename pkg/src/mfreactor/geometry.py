"""Parametric helical-tube center-line and the pulsed-flow velocity waveform.

The coil is a helix of given radius and pitch whose winding sense reverses
at a prescribed arc-length fraction, book-ended by horizontal straight
inlet/outlet runs. Direction changes (inlet-to-coil, the inversion point,
coil-to-outlet) are smoothed by crossfading the two adjoining curves with a
piecewise-quadratic weight, which keeps the path tangent-continuous. The
helix angular extent is solved by bisection so the total arc length equals
the requested tube length regardless of pitch, radius, or inversion.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Parameters produce an invalid center-line (e.g. tube self-intersection)."""


@dataclass(frozen=True)
class CoilParams:
    pitch_mm: float
    coil_radius_mm: float
    inversion: float
    tube_length_mm: float = 75.0
    tube_radius_mm: float = 2.5
    inlet_mm: float = 10.0
    outlet_mm: float = 10.0

    def __post_init__(self):
        if self.pitch_mm <= 0 or self.coil_radius_mm <= 0:
            raise ValueError("pitch and coil radius must be positive")
        if not 0.0 <= self.inversion <= 1.0:
            raise ValueError("inversion must lie in [0, 1]")
        if self.tube_length_mm <= self.inlet_mm + self.outlet_mm:
            raise ValueError("tube length must exceed inlet plus outlet length")


@dataclass(frozen=True)
class OscillationParams:
    """Pulsed-flow operating conditions, within the campaign's ranges."""

    amplitude_mm: float
    frequency_hz: float
    reynolds: float

    def __post_init__(self):
        if not 1.0 <= self.amplitude_mm <= 8.0:
            raise ValueError("amplitude must lie in [1, 8] mm")
        if not 2.0 <= self.frequency_hz <= 8.0:
            raise ValueError("frequency must lie in [2, 8] Hz")
        if not 10.0 <= self.reynolds <= 50.0:
            raise ValueError("Reynolds number must lie in [10, 50]")


@dataclass
class CenterlinePath:
    """Sampled 3-D center-line with cumulative arc length and section marks."""

    points: np.ndarray                  # (k, 3) mm
    cumulative_arclength: np.ndarray    # (k,) mm
    sections: dict = field(default_factory=dict)   # name -> (s_start, s_end)
    meta: dict = field(default_factory=dict)

    @property
    def total_length(self) -> float:
        return float(self.cumulative_arclength[-1])


def oscillatory_velocity(p: OscillationParams, t):
    """Superimposed oscillatory velocity 2*pi*f*a*sin(2*pi*f*t), in mm/s."""
    t = np.asarray(t, dtype=float)
    out = 2.0 * np.pi * p.frequency_hz * p.amplitude_mm * np.sin(
        2.0 * np.pi * p.frequency_hz * t
    )
    return float(out) if out.ndim == 0 else out


def arc_length(path: CenterlinePath) -> float:
    """Total polyline length; equals the last cumulative arc-length entry."""
    if path.points.shape[0] < 2:
        raise ValueError("need at least 2 points")
    return float(np.sum(np.linalg.norm(np.diff(path.points, axis=0), axis=1)))


def _cumulative(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _quad_weight(t: np.ndarray) -> np.ndarray:
    """Piecewise-quadratic smoothstep: 0/1 value and zero slope at both ends."""
    return np.where(t < 0.5, 2.0 * t * t, 1.0 - 2.0 * (1.0 - t) ** 2)


class _InvertibleHelix:
    """Helix whose winding handedness flips at the inversion parameter.

    The first section winds counterclockwise around a vertical axis; at
    u_inv the curve transfers to the tangent cylinder of equal radius and
    continues clockwise, so the winding sense (and torsion sign) reverses
    while position and tangent stay continuous. The axial coordinate climbs
    at a constant rate throughout, so |dr/du| = sqrt(radius^2 + climb^2)
    everywhere and arc length is proportional to u.
    """

    def __init__(self, radius: float, climb: float, u_inv: float | None):
        self.radius = radius
        self.climb = climb
        self.u_inv = u_inv
        if u_inv is not None:
            # Second axis passes through the tangency point's outward radial.
            self.center_b = 2.0 * radius * np.array([np.cos(u_inv), np.sin(u_inv)])

    def _angle_b(self, u):
        return (self.u_inv + np.pi) - (u - self.u_inv)

    def point(self, u):
        u = np.asarray(u, dtype=float)
        if self.u_inv is None:
            psi = u
            x = self.radius * np.cos(psi)
            y = self.radius * np.sin(psi)
        else:
            before = u <= self.u_inv
            psi_a = np.where(before, u, 0.0)
            psi_b = self._angle_b(np.where(before, self.u_inv, u))
            x = np.where(before, self.radius * np.cos(psi_a),
                         self.center_b[0] + self.radius * np.cos(psi_b))
            y = np.where(before, self.radius * np.sin(psi_a),
                         self.center_b[1] + self.radius * np.sin(psi_b))
        return np.stack([x, y, self.climb * u], axis=-1)

    def extended_point(self, u, side: str):
        """One section's own law, continued past its domain if needed."""
        u = np.asarray(u, dtype=float)
        if self.u_inv is None or side == "before":
            psi = u
            x = self.radius * np.cos(psi)
            y = self.radius * np.sin(psi)
        else:
            psi = self._angle_b(u)
            x = self.center_b[0] + self.radius * np.cos(psi)
            y = self.center_b[1] + self.radius * np.sin(psi)
        return np.stack([x, y, self.climb * u], axis=-1)

    def tangent(self, u, side: str):
        u = np.asarray(u, dtype=float)
        if self.u_inv is None or side == "before":
            t = np.stack([-self.radius * np.sin(u), self.radius * np.cos(u),
                          np.full_like(u, self.climb)], axis=-1)
        else:
            psi = self._angle_b(u)
            t = np.stack([self.radius * np.sin(psi), -self.radius * np.cos(psi),
                          np.full_like(u, self.climb)], axis=-1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)


def _sample_blend(curve_a, curve_b, s_lo, s_hi, n):
    """Crossfade two curve callables over a shared parameter window."""
    s = np.linspace(s_lo, s_hi, n)
    w = _quad_weight((s - s_lo) / (s_hi - s_lo))[:, None]
    return (1.0 - w) * curve_a(s) + w * curve_b(s)


def _assemble(params: CoilParams, psi_total: float, samples_per_mm: float):
    """Build the blended path for a given helix angular extent."""
    rho = params.coil_radius_mm
    climb = params.pitch_mm / (2.0 * np.pi)
    speed = np.hypot(rho, climb)
    delta = params.inversion
    u_end = psi_total
    d_blend = 1.5  # mm half-width of each crossfade window
    d_in = min(d_blend, 0.45 * params.inlet_mm)
    d_out = min(d_blend, 0.45 * params.outlet_mm)

    u_inv = delta * u_end if 0.0 < delta < 1.0 else None
    if u_inv is not None:
        # An inversion closer to either end than the end blends can absorb
        # is geometrically indistinguishable from no inversion.
        if u_inv <= 2.0 * d_in / speed or u_inv >= u_end - 2.0 * d_out / speed:
            u_inv = None
    helix = _InvertibleHelix(rho, climb, u_inv)

    start = helix.point(0.0)
    t_start = helix.tangent(0.0, "before")
    in_dir = np.array([t_start[0], t_start[1], 0.0])
    in_dir /= np.linalg.norm(in_dir)
    end = helix.point(u_end)
    out_side = "after" if u_inv is not None else "before"
    t_end = helix.tangent(u_end, out_side)
    out_dir = np.array([t_end[0], t_end[1], 0.0])
    out_dir /= np.linalg.norm(out_dir)

    def n_for(length_mm):
        return max(int(np.ceil(length_mm * samples_per_mm)), 8)

    pieces = []
    marks = []

    # Inlet straight run, stopping short of the blend window.
    p_in0 = start - in_dir * params.inlet_mm
    s = np.linspace(0.0, params.inlet_mm - d_in, n_for(params.inlet_mm))
    pieces.append(p_in0 + s[:, None] * in_dir)
    marks.append("inlet")

    # Inlet-to-coil crossfade: straight line extended vs helix extended back.
    line = lambda s: p_in0 + s[:, None] * in_dir
    helix_in = lambda s: helix.extended_point((s - params.inlet_mm) / speed, "before")
    pieces.append(_sample_blend(line, helix_in, params.inlet_mm - d_in,
                                params.inlet_mm + d_in, n_for(2 * d_in)))
    marks.append("inlet_blend")

    # The inversion junction is tangent-continuous by construction, so the
    # winding sections join directly with a shared sample.
    if u_inv is None:
        u_a, u_b = d_in / speed, u_end - d_out / speed
        pieces.append(helix.point(np.linspace(u_a, u_b, n_for((u_b - u_a) * speed))))
        marks.append("helix")
        helix_spans = [(u_a, u_b)]
    else:
        u_a, u_b = d_in / speed, u_inv
        pieces.append(helix.point(np.linspace(u_a, u_b, n_for((u_b - u_a) * speed))))
        marks.append("helix_a")
        u_c, u_d = u_inv, u_end - d_out / speed
        pieces.append(helix.point(np.linspace(u_c, u_d, n_for((u_d - u_c) * speed))))
        marks.append("helix_b")
        helix_spans = [(u_a, u_b), (u_c, u_d)]

    # Coil-to-outlet crossfade, then the straight outlet run.
    helix_out = lambda s: helix.extended_point(u_end + s / speed, out_side)
    out_line = lambda s: end + s[:, None] * out_dir
    pieces.append(_sample_blend(helix_out, out_line, -d_out, d_out, n_for(2 * d_out)))
    marks.append("outlet_blend")
    s = np.linspace(d_out, params.outlet_mm, n_for(params.outlet_mm))
    pieces.append(end + s[:, None] * out_dir)
    marks.append("outlet")

    points = [pieces[0]]
    for piece in pieces[1:]:
        points.append(piece[1:] if np.allclose(piece[0], points[-1][-1]) else piece)
    boundaries = np.cumsum([0] + [p.shape[0] for p in points])
    all_points = np.vstack(points)
    cum = _cumulative(all_points)
    # Pieces share their boundary sample, so a section ends at the last row
    # belonging to it.
    marks_s = [0.0] + [float(cum[b - 1]) for b in boundaries[1:]]
    sections = {name: (marks_s[i], marks_s[i + 1]) for i, name in enumerate(marks)}
    helix_names = [m for m in marks if m.startswith("helix")]
    meta = {
        "helix_angle_spans": [(float(a), float(b)) for a, b in helix_spans],
        "helix_lengths_analytic": [float(speed * (b - a)) for a, b in helix_spans],
        "helix_lengths_sampled": [
            sections[name][1] - sections[name][0] for name in helix_names
        ],
        "speed_per_angle": float(speed),
        "psi_total": float(psi_total),
        "inversion_active": u_inv is not None,
    }
    return all_points, cum, sections, meta


def min_clearance(points: np.ndarray, cumulative: np.ndarray, window_mm: float) -> float:
    """Smallest distance between samples separated by more than window_mm of arc."""
    diff = points[:, None, :] - points[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    sep = np.abs(cumulative[:, None] - cumulative[None, :])
    masked = np.where(sep > window_mm, dist, np.inf)
    return float(masked.min())


def coil_path(
    params: CoilParams,
    samples_per_mm: float = 8.0,
    check_clearance: bool = True,
) -> CenterlinePath:
    """Sample the full center-line at fixed total arc length.

    Bisection on the helix angular extent makes the measured length of the
    assembled, blended path equal tube_length_mm; the result is then
    resampled uniformly in arc length.
    """
    target = params.tube_length_mm
    speed = np.hypot(params.coil_radius_mm, params.pitch_mm / (2.0 * np.pi))
    coil_target = target - params.inlet_mm - params.outlet_mm

    def length_at(psi):
        pts, cum, _, _ = _assemble(params, psi, samples_per_mm)
        return cum[-1]

    psi_lo = 0.25 * coil_target / speed
    psi_hi = 2.0 * coil_target / speed
    while length_at(psi_hi) < target:
        psi_hi *= 1.5
    while length_at(psi_lo) > target:
        psi_lo *= 0.5
    for _ in range(60):
        psi_mid = 0.5 * (psi_lo + psi_hi)
        if length_at(psi_mid) < target:
            psi_lo = psi_mid
        else:
            psi_hi = psi_mid
        if speed * (psi_hi - psi_lo) < 1e-6:
            break
    psi = 0.5 * (psi_lo + psi_hi)

    points, cum, sections, meta = _assemble(params, psi, samples_per_mm)
    # Uniform arc-length resampling.
    n_out = max(int(np.round(cum[-1] * samples_per_mm)) + 1, 16)
    s_new = np.linspace(0.0, cum[-1], n_out)
    resampled = np.column_stack([np.interp(s_new, cum, points[:, j]) for j in range(3)])
    cum_new = _cumulative(resampled)
    scale = cum_new[-1] / cum[-1]
    sections = {k: (a * scale, b * scale) for k, (a, b) in sections.items()}
    meta["params"] = {
        "pitch_mm": params.pitch_mm,
        "coil_radius_mm": params.coil_radius_mm,
        "inversion": params.inversion,
        "tube_length_mm": params.tube_length_mm,
        "tube_radius_mm": params.tube_radius_mm,
        "inlet_mm": params.inlet_mm,
        "outlet_mm": params.outlet_mm,
    }
    path = CenterlinePath(resampled, cum_new, sections, meta)

    if check_clearance:
        clearance = min_clearance(resampled[::2], cum_new[::2], 6.0 * params.tube_radius_mm)
        if clearance < 2.0 * params.tube_radius_mm:
            raise GeometryError(
                f"tube self-intersection: clearance {clearance:.3f} mm is below "
                f"{2.0 * params.tube_radius_mm:.3f} mm"
            )
        path.meta["min_clearance_mm"] = clearance
    return path


def export_path(path: CenterlinePath, fmt: str, dest) -> Path:
    """Dump the sampled center-line losslessly as csv, json, or a polyline obj."""
    dest = Path(dest)
    if fmt == "csv":
        with open(dest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_mm", "y_mm", "z_mm", "s_mm"])
            for p, s in zip(path.points, path.cumulative_arclength):
                writer.writerow([repr(float(v)) for v in (*p, s)])
    elif fmt == "json":
        payload = {
            "params": path.meta.get("params", {}),
            "sections": {k: list(v) for k, v in path.sections.items()},
            "points_mm": path.points.tolist(),
            "arclength_mm": path.cumulative_arclength.tolist(),
        }
        dest.write_text(json.dumps(payload, indent=2, sort_keys=True))
    elif fmt == "obj":
        lines = [f"v {p[0]!r} {p[1]!r} {p[2]!r}" for p in map(tuple, path.points)]
        lines.append("l " + " ".join(str(i + 1) for i in range(path.points.shape[0])))
        dest.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return dest
