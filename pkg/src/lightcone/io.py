"""Deterministic, atomic persistence: JSON reports, trajectory CSV, hashes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from lightcone import __version__

FLOAT_FMT = ".17g"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        if not np.isfinite(val):
            return repr(val)
        return val
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def canonical_json(obj) -> str:
    """Sorted-key, whitespace-free serialisation used for hashing."""
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def dumps_report(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_report(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


def trajectory_columns(observables: dict) -> list[str]:
    return ["t", "norm", "energy"] + sorted(observables)


def write_trajectory_csv(path, times, norms, energies, observables: dict, config_hash: str,
                         extra: dict | None = None) -> None:
    """CSV with columns ``t, norm, energy`` then observables sorted by name, plus a JSON sidecar."""
    cols = trajectory_columns(observables)
    rows = [",".join(cols)]
    series = [np.asarray(times), np.asarray(norms), np.asarray(energies)]
    series += [np.asarray(observables[name]) for name in cols[3:]]
    n = len(series[0])
    for s, name in zip(series, cols):
        if len(s) != n:
            raise ValueError(f"column {name!r} has {len(s)} rows, expected {n}")
    for i in range(n):
        rows.append(",".join(_fmt(s[i]) for s in series))
    path = Path(path)
    atomic_write_text(path, "\n".join(rows) + "\n")
    sidecar = {"config_hash": config_hash, "columns": cols, "rows": n, "version": __version__}
    if extra:
        sidecar.update(extra)
    write_json(path.with_suffix(".json"), sidecar)


class CSVFormatError(ValueError):
    pass


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise CSVFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["t", "norm", "energy"]:
        raise CSVFormatError(f"{path}: header must start with t,norm,energy, got {header[:3]}")
    if header[3:] != sorted(header[3:]):
        raise CSVFormatError(f"{path}: observable columns are not sorted by name")
    data = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise CSVFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            data.append([float(p) for p in parts])
        except ValueError as exc:
            raise CSVFormatError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def write_state(path, vec: np.ndarray, manifest: dict) -> None:
    """Dense complex state, one ``re im`` pair per line, with the basis manifest as sidecar."""
    vec = np.asarray(vec, dtype=complex)
    text = "\n".join(f"{_fmt(v.real)} {_fmt(v.imag)}" for v in vec) + "\n"
    path = Path(path)
    atomic_write_text(path, text)
    write_json(path.with_suffix(path.suffix + ".json"), manifest)
