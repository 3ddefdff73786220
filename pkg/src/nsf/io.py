"""Scenario files, binary field dumps and CSV diagnostics."""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .domain import DomainError, Scenario
from .presets import forcing_preset, theta0_preset, u0_preset, viscosity_preset


class FormatError(ValueError):
    """Malformed scenario file or corrupted dump."""


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

SECTIONS = {
    "domain": {"L": float},
    "physics": {"T": float, "k": float, "mu": str, "eps0": float},
    "discretization": {"N": int, "M": int, "dt": float, "eps": float, "nu": float, "quad_order": int},
    "data": {"f": str, "u0": str, "theta0": str},
    "run": {"seed": int, "convection": str},
}
REQUIRED = {"L", "T", "k", "mu", "N", "M", "dt", "eps", "nu", "f", "u0", "theta0"}


def _split_preset(text: str) -> tuple[str, tuple[float, ...]]:
    parts = text.split()
    if not parts:
        raise FormatError("empty preset")
    try:
        return parts[0], tuple(float(p) for p in parts[1:])
    except ValueError as exc:
        raise FormatError(f"bad preset parameters in {text!r}") from exc


def parse_scenario(text: str) -> Scenario:
    values: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise FormatError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise FormatError(f"line {lineno}: key outside a section")
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        kinds = SECTIONS[section]
        if key not in kinds:
            raise FormatError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in values:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = kinds[key](value)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    missing = REQUIRED - values.keys()
    if missing:
        raise FormatError(f"missing keys: {', '.join(sorted(missing))}")
    L = values["L"]
    conv = values.get("convection", "true").lower()
    if conv not in ("true", "false"):
        raise FormatError("convection must be true or false")
    try:
        mu_name, mu_params = _split_preset(values["mu"])
        scenario = Scenario(
            L=L,
            T=values["T"],
            k=values["k"],
            mu=viscosity_preset(mu_name, mu_params),
            f=forcing_preset(*_split_preset(values["f"]), L),
            u0=u0_preset(*_split_preset(values["u0"]), L),
            theta0=theta0_preset(*_split_preset(values["theta0"]), L),
            eps=values["eps"],
            nu=values["nu"],
            N=values["N"],
            M=values["M"],
            dt=values["dt"],
            seed=values.get("seed", 0),
            eps0=values.get("eps0", 0.25),
            convection=conv == "true",
            quad_order=values.get("quad_order", 8),
        )
        return scenario.validate()
    except (DomainError, ValueError, TypeError) as exc:
        raise FormatError(str(exc)) from exc


def _preset_text(name, params) -> str:
    return " ".join([name] + [repr(float(p)) for p in params])


def serialize_scenario(s: Scenario) -> str:
    if s.heat_source is not None:
        raise FormatError("scenarios with a heat source cannot be written to a file")
    lines = [
        "[domain]",
        f"L = {s.L!r}",
        "",
        "[physics]",
        f"T = {s.T!r}",
        f"k = {s.k!r}",
        f"mu = {_preset_text(s.mu.name, s.mu.params)}",
        f"eps0 = {s.eps0!r}",
        "",
        "[discretization]",
        f"N = {s.N}",
        f"M = {s.M}",
        f"dt = {s.dt!r}",
        f"eps = {s.eps!r}",
        f"nu = {s.nu!r}",
        f"quad_order = {s.quad_order}",
        "",
        "[data]",
        f"f = {_preset_text(s.f.name, s.f.params)}",
        f"u0 = {_preset_text(s.u0.name, s.u0.params)}",
        f"theta0 = {_preset_text(s.theta0.name, s.theta0.params)}",
        "",
        "[run]",
        f"seed = {s.seed}",
        f"convection = {'true' if s.convection else 'false'}",
    ]
    return "\n".join(lines) + "\n"


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text)


def scenario_dict(s: Scenario) -> dict:
    """Resolved parameters for the run manifest."""
    return {
        "L": s.L, "T": s.T, "k": s.k, "mu": _preset_text(s.mu.name, s.mu.params),
        "mu_lower": s.mu.lower, "mu_upper": s.mu.upper, "eps0": s.eps0,
        "N": s.N, "M": s.M, "dt": s.dt, "eps": s.eps, "nu": s.nu, "quad_order": s.quad_order,
        "n_cells": s.cells(), "f": _preset_text(s.f.name, s.f.params),
        "u0": _preset_text(s.u0.name, s.u0.params), "theta0": _preset_text(s.theta0.name, s.theta0.params),
        "seed": s.seed, "convection": s.convection,
    }


# ---------------------------------------------------------------------------
# field dumps
# ---------------------------------------------------------------------------

MAGIC = b"NSF1"
_HEADER = struct.Struct("<4s4I")


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def encode_dump(data: np.ndarray) -> bytes:
    """``data`` has shape ``(nt, components, nx, ny)``."""
    data = np.asarray(data, dtype="<f8")
    if data.ndim != 4:
        raise FormatError("dump data must have shape (nt, components, nx, ny)")
    nt, nc, nx, ny = data.shape
    payload = np.ascontiguousarray(data).tobytes()
    return _HEADER.pack(MAGIC, nx, ny, nc, nt) + payload + struct.pack("<Q", _checksum(payload))


def decode_dump(raw: bytes) -> np.ndarray:
    if len(raw) < _HEADER.size + 8:
        raise FormatError("dump too short")
    magic, nx, ny, nc, nt = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("bad magic")
    size = nx * ny * nc * nt * 8
    if len(raw) != _HEADER.size + size + 8:
        raise FormatError("dump length does not match its header")
    payload = raw[_HEADER.size:_HEADER.size + size]
    (check,) = struct.unpack_from("<Q", raw, _HEADER.size + size)
    if check != _checksum(payload):
        raise FormatError("checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(nt, nc, nx, ny).copy()


def write_dump(path, data: np.ndarray) -> None:
    Path(path).write_bytes(encode_dump(data))


def read_dump(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode_dump(raw)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([fmt(float(v)) for v in row])
