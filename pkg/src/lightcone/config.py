"""Experiment configuration: YAML with fixed sections, strict keys, canonical hash.

Every section and key is listed in :data:`SCHEMA`; anything else is rejected with
the line number of the offending key.  Missing keys take the listed defaults, so
the canonical form (and hence the hash) is the fully expanded config.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from lightcone.io import canonical_json, sha256_of

RUN_KINDS = ("free_photon", "interacting")

# section -> key -> (default, kind); kind drives the coercion/validation below
SCHEMA: dict = {
    "seed": (0, "int"),
    "run": {
        "kind": ("free_photon", "choice:" + "|".join(RUN_KINDS)),
        "name": ("run", "str"),
    },
    "grid": {
        "dim": (1, "choice:1|3"),
        "M": (512, "int>=2"),
        "dk": (0.01227184630308513, "float>0"),
        "mode": ("scalar1d", "choice:scalar1d|vector3d"),
    },
    "fock": {
        "n_max": (1, "int>=1"),
    },
    "model": {
        "n_x": (15, "int>=3"),
        "dx": (0.5, "float>0"),
        "V0": (0.0, "float>=0"),
        "sigma": (1.0, "float>0"),
        "K": (None, "float>0?"),
        "mu": (0.25, "float>0"),
        "coupling_scale": (0.0, "float>=0"),
        "direction": ([1.0, 2.0, 3.0], "floatlist"),
    },
    "packet": {
        "kind": ("algebraic", "choice:algebraic|gaussian"),
        "width": (1.0, "float>0"),
        "power": (2.0, "float>0"),
    },
    "probe": {
        "c": ([1.5, 0.5], "floatlist>0"),
        "beta": (0.5, "float>=0"),
        "gamma": (0.0, "float>=0"),
        "delta": (0.9, "float"),
        "epsilon": (None, "float>0?"),
        "nu": (0.4, "float>0"),
        "growth_deltas": ([0.0, 0.5, 0.9], "floatlist"),
        "fit_tol": (0.02, "float>0"),
    },
    "evolve": {
        "t0": (1.0, "float>=1"),
        "T": (None, "float>0?"),
        "samples": (65, "int>=2"),
        "tol": (1e-10, "float>0"),
    },
    "threshold": {
        "radii": (None, "floatlist?"),
    },
    "filter": {
        "method": ("chebyshev", "choice:chebyshev|eig"),
        "degree": (400, "int>=1"),
        "below": (1.0, "float>0"),
        "top_fraction": (0.25, "float>0"),
        "ramp_fraction": (0.25, "float>0"),
        "margin": (0.0, "float>=0"),
        "delta": (0.5, "float>0"),
    },
    "io": {
        "out": ("out", "str"),
        "thin": (0, "int>=0"),
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and, when known, its line."""


def _where(lines: dict, path: str) -> str:
    line = lines.get(path)
    return f"line {line}: " if line is not None else ""


def _key_lines(text: str) -> dict:
    """``"section.key" -> 1-based line`` for every mapping key in the document."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for knode, vnode in node.value:
                path = f"{prefix}{knode.value}"
                out[path] = knode.start_mark.line + 1
                walk(vnode, path + ".")

    if root is not None:
        walk(root, "")
    return out


def _coerce(value, kind: str, path: str, where: str):
    optional = kind.endswith("?")
    if optional:
        kind = kind[:-1]
        if value is None:
            return None
    fail = f"{where}{path}"
    if kind.startswith("choice:"):
        options = kind.split(":", 1)[1].split("|")
        if str(value) not in options:
            raise ConfigError(f"{fail} must be one of {options}, got {value!r}")
        return int(value) if options[0].isdigit() else str(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{fail} must be a string, got {value!r}")
        return value
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{fail} must be an integer, got {value!r}")
        if kind.startswith("int>="):
            lo = int(kind[5:])
            if value < lo:
                raise ConfigError(f"{fail} must be >= {lo}, got {value}")
        return value
    if kind.startswith("floatlist"):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{fail} must be a non-empty list of numbers, got {value!r}")
        vals = [_coerce(v, "float" + kind[9:], path, where) for v in value]
        return vals
    if kind.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{fail} must be a number, got {value!r}")
        value = float(value)
        rule = kind[5:]
        if rule == ">0" and not value > 0:
            raise ConfigError(f"{fail} must be > 0, got {value}")
        if rule == ">=0" and not value >= 0:
            raise ConfigError(f"{fail} must be >= 0, got {value}")
        if rule == ">=1" and not value >= 1:
            raise ConfigError(f"{fail} must be >= 1, got {value}")
        return value
    raise AssertionError(f"unknown schema kind {kind}")


def defaults() -> dict:
    out = {}
    for name, spec in SCHEMA.items():
        out[name] = spec[0] if isinstance(spec, tuple) else {k: copy.deepcopy(v[0]) for k, v in spec.items()}
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    source: str | None = None

    def __getitem__(self, section: str):
        return self.data[section]

    def canonical(self) -> str:
        return canonical_json(self.data)

    @property
    def hash(self) -> str:
        return sha256_of(self.data)

    def with_(self, **sections) -> "ExperimentConfig":
        """Copy with some keys replaced, e.g. ``with_(probe={"c": [2.0]})``; revalidated."""
        data = copy.deepcopy(self.data)
        for name, upd in sections.items():
            if isinstance(data.get(name), dict):
                data[name].update(upd)
            else:
                data[name] = upd
        return validate(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=None)


def validate(raw: dict | None, lines: dict | None = None, source: str | None = None) -> ExperimentConfig:
    lines = lines or {}
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    data = defaults()
    for name, body in raw.items():
        if name not in SCHEMA:
            raise ConfigError(f"{_where(lines, name)}unknown section {name!r}; allowed: {sorted(SCHEMA)}")
        spec = SCHEMA[name]
        if isinstance(spec, tuple):
            data[name] = _coerce(body, spec[1], name, _where(lines, name))
            continue
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{_where(lines, name)}section {name!r} must be a mapping")
        for key, value in body.items():
            path = f"{name}.{key}"
            if key not in spec:
                raise ConfigError(f"{_where(lines, path)}unknown key {path!r}; allowed: {sorted(spec)}")
            data[name][key] = _coerce(value, spec[key][1], path, _where(lines, path))
    _cross_checks(data, lines)
    return ExperimentConfig(data, source)


def _cross_checks(data: dict, lines: dict) -> None:
    g, m = data["grid"], data["model"]
    if (g["dim"] == 1) != (g["mode"] == "scalar1d"):
        raise ConfigError(f"{_where(lines, 'grid.mode')}grid.mode {g['mode']!r} does not match grid.dim {g['dim']}")
    if m["n_x"] % 2 == 0:
        raise ConfigError(f"{_where(lines, 'model.n_x')}model.n_x must be odd, got {m['n_x']}")
    if len(m["direction"]) != 3:
        raise ConfigError(f"{_where(lines, 'model.direction')}model.direction needs three components")
    p = data["probe"]
    for d in p["growth_deltas"]:
        if not -1 < d < 1.5:
            raise ConfigError(f"{_where(lines, 'probe.growth_deltas')}probe.growth_deltas entries need "
                              f"-1 < delta < 3/2, got {d}")
    e = data["evolve"]
    if e["T"] is not None and e["T"] <= e["t0"]:
        raise ConfigError(f"{_where(lines, 'evolve.T')}evolve.T must exceed evolve.t0")
    # module-level invariants: building the (cheap) grid and model spec re-runs their checks
    from lightcone.grid import GridError, build_photon_grid
    from lightcone.model import ModelError, ModelSpec

    try:
        grid = build_photon_grid(g["dim"], g["M"], g["dk"], g["mode"])
    except GridError as exc:
        raise ConfigError(f"{_where(lines, 'grid')}grid: {exc}") from None
    try:
        ModelSpec(grid, n_x=m["n_x"], dx=m["dx"], V0=m["V0"], sigma=m["sigma"], K=m["K"], mu=m["mu"],
                  coupling_scale=m["coupling_scale"], n_max=data["fock"]["n_max"], direction=tuple(m["direction"]))
    except ModelError as exc:
        raise ConfigError(f"{_where(lines, 'model')}model: {exc}") from None
    if data["run"]["kind"] == "interacting":
        from lightcone.probe import ProbeError, ProbeSpec

        for c in p["c"]:
            try:
                ProbeSpec(c, p["beta"], p["gamma"], p["delta"], p["epsilon"], p["nu"]).validate("propagation")
            except ProbeError as exc:
                raise ConfigError(f"{_where(lines, 'probe')}probe (c={c:g}): {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads_config(text, str(path))


def loads_config(text: str, source: str | None = None) -> ExperimentConfig:
    lines = _key_lines(text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None
    try:
        return validate(raw, lines, source)
    except ConfigError as exc:
        if source:
            raise ConfigError(f"{source}: {exc}") from None
        raise


def preset(name: str) -> ExperimentConfig:
    """Built-in configs: ``free``, ``diagnostic``, ``interacting``, ``tiny``."""
    if name == "free":
        return validate({"run": {"kind": "free_photon", "name": "free"}, "probe": {"c": [1.5]}})
    if name == "diagnostic":
        return validate({"run": {"kind": "free_photon", "name": "diagnostic"}, "probe": {"c": [0.5]},
                         "evolve": {"T": 85.0}})
    if name == "interacting":
        return validate({
            "run": {"kind": "interacting", "name": "interacting"},
            "grid": {"dim": 1, "M": 128, "dk": 0.09817477042468103, "mode": "scalar1d"},
            "model": {"n_x": 15, "dx": 0.5, "V0": 3.0, "sigma": 1.0, "coupling_scale": 0.5},
            "probe": {"c": [2.0], "beta": 0.5, "gamma": 0.09, "delta": 0.98, "growth_deltas": [0.0, 0.5, 0.9]},
            "evolve": {"samples": 33},
            "threshold": {"radii": [1.5, 2.25, 3.0]},
        })
    if name == "tiny":
        return validate({
            "run": {"kind": "interacting", "name": "tiny"},
            "grid": {"dim": 1, "M": 8, "dk": 0.5, "mode": "scalar1d"},
            "fock": {"n_max": 3},
            "model": {"n_x": 7, "dx": 0.5, "V0": 3.0, "coupling_scale": 0.1},
            "probe": {"c": [2.0], "beta": 0.5, "gamma": 0.05, "delta": 0.9},
        })
    raise ConfigError(f"unknown preset {name!r}; available: free, diagnostic, interacting, tiny")
