"""Campaign configuration: JSON schema, validation, and engine wiring.

A campaign config names the design variables with physical bounds and units,
the fidelity ranges, the evaluator, and the optimization hyperparameters.
The shipped default reproduces the pulsed-flow helical-reactor campaign
(six design variables, axial/radial mesh fidelities) against the mock
reactor at virtual cost.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine, simulators


class ConfigError(ValueError):
    """Invalid campaign config; carries one message per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


DEFAULT_CONFIG = {
    "design_variables": [
        {"name": "pitch", "low": 7.5, "high": 15.0, "unit": "mm"},
        {"name": "coil_radius", "low": 3.0, "high": 12.5, "unit": "mm"},
        {"name": "inversion", "low": 0.0, "high": 1.0, "unit": ""},
        {"name": "amplitude", "low": 1.0, "high": 8.0, "unit": "mm"},
        {"name": "frequency", "low": 2.0, "high": 8.0, "unit": "Hz"},
        {"name": "reynolds", "low": 10.0, "high": 50.0, "unit": ""},
    ],
    "fidelities": [
        {"name": "axial", "low": 20.0, "high": 60.0},
        {"name": "radial", "low": 1.0, "high": 5.0},
    ],
    "evaluator": {"kind": "mock-reactor"},
    "doe_count": 25,
    "beta": 2.5,
    "gamma": 1.5,
    "p_lambda": 2.0,
    "discount_floor": 0.01,
    "fidelity_smoothness": 3.0,
    "budget_total": 64.0,
    "budget_units": "virtual-hours",
    "include_doe_cost": False,
    "cost_adjust": True,
    "gp_restarts": 3,
    "acq_restarts": 8,
    "acq_local_steps": 48,
    "doe_concurrency": 1,
    "seed": 0,
    "output_dir": "runs/default",
}

_NUMERIC_FIELDS = {
    "beta": (0.0, None), "gamma": (0.0, None), "p_lambda": (-1e-12, None),
    "discount_floor": (0.0, 1.0), "budget_total": (0.0, None),
    "fidelity_smoothness": (0.0, None),
}
_INT_FIELDS = {
    "doe_count": 2, "gp_restarts": 1, "acq_restarts": 1,
    "acq_local_steps": 1, "doe_concurrency": 1, "seed": 0,
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def validate_config(raw: dict) -> list:
    """Return a list of field-level problems; empty means valid."""
    problems = []
    if not isinstance(raw, dict):
        return ["config must be a JSON object"]
    known = set(DEFAULT_CONFIG)
    for key in raw:
        if key not in known:
            problems.append(f"unknown config key {key!r}")

    for group, minimum in (("design_variables", 1), ("fidelities", 1)):
        entries = raw.get(group)
        if not isinstance(entries, list) or len(entries) < minimum:
            problems.append(f"{group} must be a non-empty list")
            continue
        for i, entry in enumerate(entries):
            label = f"{group}[{i}]"
            if not isinstance(entry, dict) or "name" not in entry:
                problems.append(f"{label} must be an object with a name")
                continue
            name = entry.get("name")
            try:
                low, high = float(entry["low"]), float(entry["high"])
            except (KeyError, TypeError, ValueError):
                problems.append(f"{label} ({name}): low/high must be numbers")
                continue
            if not low < high:
                problems.append(
                    f"{label} ({name}): low {low!r} must be strictly below high {high!r}"
                )

    for key, (lo, hi) in _NUMERIC_FIELDS.items():
        if key not in raw:
            continue
        try:
            value = float(raw[key])
        except (TypeError, ValueError):
            problems.append(f"{key} must be a number")
            continue
        if value <= lo or (hi is not None and value >= hi):
            bound = f"in ({lo}, {hi})" if hi is not None else f"above {lo}"
            problems.append(f"{key} must be {bound}, got {value!r}")

    for key, minimum in _INT_FIELDS.items():
        if key not in raw:
            continue
        value = raw[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            problems.append(f"{key} must be an integer >= {minimum}, got {value!r}")

    for key in ("include_doe_cost", "cost_adjust"):
        if key in raw and not isinstance(raw[key], bool):
            problems.append(f"{key} must be a boolean")

    evaluator = raw.get("evaluator")
    if not isinstance(evaluator, dict):
        problems.append("evaluator must be an object with a 'kind'")
    else:
        try:
            simulators.make_evaluator(evaluator)
        except ValueError as exc:
            problems.append(f"evaluator: {exc}")
    return problems


@dataclass
class CampaignConfig:
    raw: dict = field(repr=False)
    design_names: list
    fidelity_names: list
    x_bounds: np.ndarray
    z_bounds: np.ndarray
    output_dir: Path

    @classmethod
    def from_dict(cls, raw: dict) -> "CampaignConfig":
        merged = default_config()
        merged.update(raw or {})
        problems = validate_config(merged)
        if problems:
            raise ConfigError(problems)
        return cls(
            merged,
            [v["name"] for v in merged["design_variables"]],
            [v["name"] for v in merged["fidelities"]],
            np.array([[v["low"], v["high"]] for v in merged["design_variables"]], dtype=float),
            np.array([[v["low"], v["high"]] for v in merged["fidelities"]], dtype=float),
            Path(merged["output_dir"]),
        )

    @classmethod
    def from_file(cls, path) -> "CampaignConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}"])
        except OSError as exc:
            raise ConfigError([f"{path}: {exc}"])
        return cls.from_dict(raw)

    def engine_config(self) -> engine.EngineConfig:
        raw = self.raw
        return engine.EngineConfig(
            x_bounds=self.x_bounds,
            z_bounds=self.z_bounds,
            budget_total=float(raw["budget_total"]),
            doe_count=int(raw["doe_count"]),
            beta=float(raw["beta"]),
            gamma=float(raw["gamma"]),
            p_lambda=float(raw["p_lambda"]),
            discount_floor=float(raw["discount_floor"]),
            fidelity_smoothness=float(raw["fidelity_smoothness"]),
            include_doe_cost=bool(raw["include_doe_cost"]),
            cost_adjust=bool(raw["cost_adjust"]),
            gp_restarts=int(raw["gp_restarts"]),
            acq_restarts=int(raw["acq_restarts"]),
            acq_local_steps=int(raw["acq_local_steps"]),
            doe_concurrency=int(raw["doe_concurrency"]),
            seed=int(raw["seed"]),
        )

    def build_evaluator(self):
        spec = dict(self.raw["evaluator"])
        if spec.get("kind") == "mock-reactor":
            spec.setdefault("x_bounds", self.x_bounds.tolist())
            spec.setdefault("z_bounds", self.z_bounds.tolist())
        return simulators.make_evaluator(spec)


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
