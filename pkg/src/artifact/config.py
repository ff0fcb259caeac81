"""Run configuration: JSON loading, schema validation and line diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from json.decoder import scanstring

import jsonschema

from .errors import ArtifactError, ConfigError
from .geometry import DEFAULT_GRID, EquivariantBundle, EquivariantLineBundle
from .solver import SolverConfig
from .weights import WeightFunction, make_weight

COMMANDS = ("intersect", "stability", "gieseker", "solve", "lubke", "beta", "report-all")
_WS = " \t\r\n"


def schema() -> dict:
    text = resources.files("artifact").joinpath("schemas/run_config.schema.json").read_text()
    return json.loads(text)


def _value_lines(text: str) -> dict:
    """Map JSON paths (tuples of keys and indices) to the line where each value starts."""
    decoder = json.JSONDecoder()
    lines = {}

    def skip(i):
        while i < len(text) and text[i] in _WS:
            i += 1
        return i

    def parse(i, path):
        i = skip(i)
        lines[path] = text.count("\n", 0, i) + 1
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = scanstring(text, skip(i) + 1)
                i = skip(i) + 1  # colon
                i = skip(parse(i, path + (key,)))
                if text[i] == "}":
                    return i + 1
                i += 1
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(parse(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = decoder.raw_decode(text, i)
        return end

    parse(0, ())
    return lines


def validate(data: dict, text: str | None = None) -> None:
    """Raise ConfigError for the most relevant schema violation."""
    validator = jsonschema.Draft202012Validator(schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if error is None:
        return
    path = tuple(error.absolute_path)
    line = None
    if text is not None:
        lines = _value_lines(text)
        probe = path
        while probe not in lines and probe:
            probe = probe[:-1]
        line = lines.get(probe)
    where = ".".join(str(p) for p in path) or "<root>"
    raise ConfigError(error.message, field=where, line=line)


@dataclass
class RunConfig:
    command: str
    bundle: EquivariantBundle | None = None
    weight: WeightFunction | None = None
    second_weight: WeightFunction | None = None
    mode: str = "line"
    solver: SolverConfig = field(default_factory=SolverConfig)
    deform: dict | None = None
    lubke: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    euler: dict = field(default_factory=dict)
    grid: int = DEFAULT_GRID
    seed: int = 0
    out: str = "out"
    plot: bool = False
    raw: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.raw, command=self.command, grid=self.grid, seed=self.seed, mode=self.mode)


def from_dict(data: dict, text: str | None = None, command: str | None = None, **overrides) -> RunConfig:
    """Validate ``data`` and build a RunConfig; keyword overrides win over the file."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", line=1 if text else None)
    data = dict(data)
    if command is not None:
        if "command" in data and data["command"] != command:
            raise ConfigError(f"config is for '{data['command']}', not '{command}'", field="command")
        data["command"] = command
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    if "command" not in data:
        raise ConfigError("no command given", field="command")
    validate(data, text)
    try:
        bundle = EquivariantBundle.from_spec(data["bundle"]) if "bundle" in data else None
        weight = make_weight(data["weight"]) if "weight" in data else None
        second = make_weight(data["second_weight"]) if "second_weight" in data else None
        grid = int(data.get("grid", DEFAULT_GRID))
        solver = SolverConfig(grid=grid, seed=int(data.get("seed", 0)), **data.get("solver", {}))
    except ConfigError:
        raise
    except ArtifactError as exc:
        raise ConfigError(str(exc), field="weight") from None
    return RunConfig(
        command=data["command"], bundle=bundle, weight=weight, second_weight=second,
        mode=data.get("mode", "line" if bundle is None or bundle.rank == 1 else "continuity"),
        solver=solver, deform=data.get("deform"), lubke=data.get("lubke", {}),
        beta=data.get("beta", {}), euler=data.get("euler", {}), grid=grid,
        seed=int(data.get("seed", 0)), out=data.get("out", "out"), plot=bool(data.get("plot", False)),
        raw=data,
    )


def load(path, command: str | None = None, **overrides) -> RunConfig:
    """Read, parse and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", field="--config") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return from_dict(data, text, command=command, **overrides)


def line_from_spec(spec: dict) -> EquivariantLineBundle:
    return EquivariantLineBundle(int(spec["degree"]), int(spec["weights"][0]), int(spec["weights"][1]))
