"""Experiment configuration documents, presets and the semantic digest."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DomainError
from .model import LatticeSpec, validate_spec
from .observables import default_target, prepare_state, sample_times
from .propagate import canonical_engine

DEFAULT_SNAPSHOTS = (10.0, 20.0, 40.0)
DEFAULT_TIMES = {"t_max": 1000.0, "n_samples": 161, "spacing": "log", "t_min": None}
KNOWN_KEYS = {"name", "spec", "initial", "target", "times", "snapshots", "engine", "tolerance",
              "fit", "sweep", "outputs", "description"}


def preset_names() -> list[str]:
    root = resources.files("eta_flow") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_document(source: str | Path) -> dict:
    """Read a JSON config from a path, or a shipped preset by name."""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        try:
            return json.loads(path.read_text())
        except FileNotFoundError:
            raise DomainError(f"config file {source} not found") from None
        except json.JSONDecodeError as exc:
            raise DomainError(f"config {source} is not valid JSON: {exc}") from None
    if str(source) in preset_names():
        text = (resources.files("eta_flow") / "presets" / f"{source}.json").read_text()
        return json.loads(text)
    raise DomainError(f"no config file or preset named {source!r}; presets: {', '.join(preset_names())}")


def set_path(doc: dict, dotted: str, value: Any) -> None:
    """``set_path(doc, "spec.u", 5)`` with intermediate dicts created as needed."""
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise DomainError(f"cannot set {dotted!r}: {key!r} is not an object")
    node[keys[-1]] = value


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    spec: LatticeSpec
    initial: dict
    target: dict
    times: dict
    snapshots: tuple[float, ...]
    engine: str
    tolerance: float
    fit_window: tuple[float, float] | None = None
    sweep: dict | None = None
    outputs: dict = field(default_factory=dict)

    def sample_times(self) -> np.ndarray:
        return sample_times(self.times["t_max"], self.times["n_samples"], self.times["spacing"],
                            self.times.get("t_min"), include=self.snapshots)

    def semantic(self) -> dict:
        """Every field that changes results; names and output paths are excluded."""
        spec = self.spec.to_document()
        spec.pop("geometry_name", None)
        return {
            "spec": spec,
            "initial": self.initial,
            "target": self.target,
            "times": self.times,
            "snapshots": list(self.snapshots),
            "engine": self.engine,
            "tolerance": self.tolerance,
            "fit_window": None if self.fit_window is None else list(self.fit_window),
        }

    def digest(self) -> str:
        return config_digest(self.semantic())

    def to_document(self) -> dict:
        doc = self.semantic()
        doc["spec"] = self.spec.to_document()
        doc["name"] = self.name
        doc["fit"] = {"window": doc.pop("fit_window")}
        if self.sweep:
            doc["sweep"] = self.sweep
        if self.outputs:
            doc["outputs"] = self.outputs
        return doc


def _canonical(obj):
    if isinstance(obj, float) and obj.is_integer():
        return int(obj)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def config_digest(semantic: Mapping) -> str:
    text = json.dumps(_canonical(semantic), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _state_doc(raw, label):
    if raw is None:
        return None
    if not isinstance(raw, dict) or "type" not in raw:
        raise DomainError(f"{label} must be an object with a 'type'")
    doc = dict(raw)
    if doc["type"] == "doublons":
        doc["sites"] = sorted(int(s) for s in doc.get("sites", []))
    if doc["type"] == "pair-state":
        doc["n"], doc["m"] = int(doc.get("n", -1)), int(doc.get("m", -1))
    return doc


def build_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a config document; fills defaults and checks state compatibility."""
    raw = copy.deepcopy(dict(raw))
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    if "spec" not in raw:
        raise DomainError("config needs a 'spec' object")
    spec = validate_spec(raw["spec"])
    initial = _state_doc(raw.get("initial", {"type": "filled-A"}), "initial")
    _, b0, l0 = prepare_state(spec, initial)
    target = _state_doc(raw.get("target"), "target") or default_target(spec, b0.n_up)

    times = dict(DEFAULT_TIMES)
    times.update(raw.get("times", {}))
    unknown = set(times) - set(DEFAULT_TIMES)
    if unknown:
        raise DomainError(f"unknown times keys: {sorted(unknown)}")
    times["t_max"] = float(times["t_max"])
    times["n_samples"] = int(times["n_samples"])
    if times["t_min"] is not None:
        times["t_min"] = float(times["t_min"])
    snapshots = tuple(sorted(float(s) for s in raw.get("snapshots", DEFAULT_SNAPSHOTS)))
    if any(not 0 <= s <= times["t_max"] for s in snapshots):
        raise DomainError(f"snapshots {list(snapshots)} must lie in [0, t_max={times['t_max']}]")

    engine = canonical_engine(raw.get("engine", "krylov"))
    tolerance = float(raw.get("tolerance", 1e-8))
    if not 0 < tolerance <= 1e-2:
        raise DomainError(f"tolerance must lie in (0, 1e-2], got {tolerance}")
    window = (raw.get("fit") or {}).get("window")
    if window is not None:
        window = (float(window[0]), float(window[1]))

    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or "param" not in sweep or not sweep.get("values"):
            raise DomainError("sweep must be {'param': name, 'values': [...]}")
        sweep = {"param": str(sweep["param"]), "values": [float(v) for v in sweep["values"]]}

    cfg = ExperimentConfig(str(raw.get("name", "experiment")), spec, initial, target, times,
                           snapshots, engine, tolerance, window, sweep, dict(raw.get("outputs", {})))
    cfg.sample_times()
    _, b1, l1 = prepare_state(spec, target)
    if b0 != b1:
        raise DomainError(f"initial {l0} and target {l1} lie in different (n_up, n_down) sectors")
    return cfg
