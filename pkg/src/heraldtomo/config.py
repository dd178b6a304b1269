"""Experiment configuration: YAML loading with schema checks and source-line errors."""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .fock import DiagonalState
from .physics import AtomParams, ATOMIC_MASS_UNIT
from .sampler import DetectionChain, SourceModel
from .temporal import TimeGrid, mode_from_intensity_width
from .tomography import ReconstructionSettings


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-6`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"""),
    list("-+0123456789."),
)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _unit(v):
    return _num(v) and 0 < v <= 1


def _pos(v):
    return _num(v) and v > 0


def _nonneg(v):
    return _num(v) and v >= 0


def _nonneg_int(v):
    return _int(v) and v >= 0


def _populations(v):
    return isinstance(v, list) and len(v) >= 2 and all(_nonneg(p) for p in v) and sum(v) > 0


def _num_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_num(p) for p in v)


def _int_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_int(p) for p in v)


def _seed(v):
    return _int(v) and 0 <= v < 2**64


# section -> field -> (check, description, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "source": {
        "populations": (_populations, "list of >= 2 non-negative numbers", None),
        "mode_center": (_pos, "positive time in s", 1.0e-6),
        "intensity_half_width": (_pos, "positive time in s", 40e-9),
        "herald_rate": (_unit, "number in (0, 1]", 1e-3),
    },
    "chain": {
        "eta_hd": (_unit, "number in (0, 1]", 0.82),
        "eta_m": (_unit, "number in (0, 1]", 0.965),
        "eta_q": (_unit, "number in (0, 1]", 0.91),
        "nu": (_nonneg, "non-negative number", 0.01),
        "eta_c": (_unit, "number in (0, 1]", 0.37),
    },
    "grid": {
        "dt": (_pos, "positive time in s", 4e-9),
        "n_samples": (lambda v: _int(v) and v >= 2, "integer >= 2", 550),
    },
    "reconstruction": {
        "cutoff": (lambda v: _int(v) and 1 <= v <= 200, "integer in 1..200", 10),
        "tol": (_pos, "positive number", 1e-10),
        "max_iter": (lambda v: _int(v) and v >= 1, "integer >= 1", 5000),
        "x_min": (_num, "number", -8.0),
        "x_max": (_num, "number", 8.0),
        "x_step": (_pos, "positive number", 0.01),
        "bootstrap": (lambda v: v == 0 or (_int(v) and v >= 20), "0 or integer >= 20", 50),
    },
    "counts": {
        "samples": (_nonneg_int, "non-negative integer", 100_000),
        "traces": (_nonneg_int, "non-negative integer", 20_000),
        "trials": (_nonneg_int, "non-negative integer", 100_000),
        "write_pulses": (lambda v: v is None or _nonneg_int(v), "null or non-negative integer", None),
    },
    "analysis": {
        "filter_widths": (_num_list, "list of widths in s", [40e-9, 48e-9, 56e-9, 64e-9, 72e-9]),
        "vacuum_shift": (_num, "time in s", 600e-9),
        "g2_taus": (_int_list, "list of integers", list(range(-5, 6))),
        "g2_bootstrap": (_nonneg_int, "non-negative integer", 1000),
    },
    "memory": {
        "mass_u": (_pos, "positive atomic mass in u", 86.909180),
        "temperature": (_pos, "positive temperature in K", 50e-6),
        "wavelength": (_pos, "positive wavelength in m", 795e-9),
        "eta0": (_unit, "number in (0, 1]", 0.82),
        "delays": (_num_list, "list of delays in s", [i * 200e-9 for i in range(9)]),
        "noise": (_nonneg, "non-negative number", 0.02),
    },
}
TOP_LEVEL = {"seed": (_seed, "64-bit unsigned integer", 0), "metadata": (lambda v: v is None or isinstance(v, dict), "mapping", None)}
REQUIRED = {("source", "populations")}


def _line_index(node, path=()) -> dict:
    """Map key paths to 1-based line numbers in the YAML source."""
    out = {path: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = path + (k.value,)
            out[sub] = k.start_mark.line + 1
            out.update({p: ln for p, ln in _line_index(v, sub).items() if p != sub})
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    source: "SourceModel"
    chain: DetectionChain
    grid: TimeGrid
    settings: ReconstructionSettings
    atom: AtomParams

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def counts(self) -> dict:
        return self.raw["counts"]

    @property
    def analysis(self) -> dict:
        return self.raw["analysis"]

    @property
    def memory(self) -> dict:
        return self.raw["memory"]

    @property
    def bootstrap(self) -> int:
        return self.raw["reconstruction"]["bootstrap"]

    def corrected_settings(self) -> ReconstructionSettings:
        return ReconstructionSettings(**{**self.settings.__dict__, "eta": self.chain.eta_det, "nu": self.chain.nu})


def validate(data: Any, lines: dict | None = None, name: str = "<config>") -> dict:
    """Check ``data`` against the schema and fill defaults; returns a new dict."""
    lines = lines or {}

    def fail(path, msg):
        ln = None
        for k in range(len(path), -1, -1):
            if path[:k] in lines:
                ln = lines[path[:k]]
                break
        where = f"{name}:{ln}" if ln else name
        raise ConfigError(f"{where}: {'.'.join(map(str, path)) or '<root>'}: {msg}")

    if not isinstance(data, dict):
        fail((), "top level must be a mapping")
    out = {}
    for key in data:
        if key not in SCHEMA and key not in TOP_LEVEL:
            fail((key,), "unknown field")
    for key, (check, desc, default) in TOP_LEVEL.items():
        v = data.get(key, default)
        if not check(v):
            fail((key,), f"expected {desc}, got {v!r}")
        out[key] = copy.deepcopy(v) if v is not None else ({} if key == "metadata" else v)
    for section, fields in SCHEMA.items():
        given = data.get(section, {})
        if given is None:
            given = {}
        if not isinstance(given, dict):
            fail((section,), "expected a mapping")
        for key in given:
            if key not in fields:
                fail((section, key), "unknown field")
        sec = {}
        for key, (check, desc, default) in fields.items():
            if key not in given:
                if (section, key) in REQUIRED:
                    fail((section,), f"missing required field '{key}'")
                sec[key] = copy.deepcopy(default)
                continue
            v = given[key]
            if not check(v):
                fail((section, key), f"expected {desc}, got {v!r}")
            sec[key] = copy.deepcopy(v)
        out[section] = sec
    rec = out["reconstruction"]
    if rec["x_max"] <= rec["x_min"]:
        fail(("reconstruction", "x_max"), "must exceed x_min")
    if len(out["source"]["populations"]) > rec["cutoff"] + 1:
        fail(("source", "populations"), f"more entries than cutoff + 1 = {rec['cutoff'] + 1}")
    return out


def build(raw: dict, name: str = "<config>") -> ExperimentConfig:
    try:
        grid = TimeGrid(raw["grid"]["dt"], raw["grid"]["n_samples"])
        rec = raw["reconstruction"]
        state = DiagonalState.from_populations(raw["source"]["populations"], rec["cutoff"])
        mode = mode_from_intensity_width(grid, raw["source"]["mode_center"], raw["source"]["intensity_half_width"])
        source = SourceModel(state, mode, raw["source"]["herald_rate"])
        chain = DetectionChain(**raw["chain"])
        settings = ReconstructionSettings(
            cutoff=rec["cutoff"], tol=rec["tol"], max_iter=rec["max_iter"],
            x_min=rec["x_min"], x_max=rec["x_max"], x_step=rec["x_step"],
        )
        mem = raw["memory"]
        atom = AtomParams(mem["mass_u"] * ATOMIC_MASS_UNIT, mem["temperature"], mem["wavelength"])
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return ExperimentConfig(raw, source, chain, grid, settings, atom)


def loads(text: str, name: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{name}:{mark.line + 1}" if mark else name
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    lines = _line_index(node) if node is not None else {}
    return build(validate(data if data is not None else {}, lines, name), name)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return loads(text, str(path))


def preset_text(name: str = "cavity_memory") -> str:
    return resources.files("heraldtomo.presets").joinpath(f"{name}.yaml").read_text()


def preset(name: str = "cavity_memory") -> ExperimentConfig:
    return loads(preset_text(name), f"preset:{name}")
