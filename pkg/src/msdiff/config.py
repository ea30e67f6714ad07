"""Strict JSON scenario loader: unknown keys are rejected, model errors are
re-raised with the offending field path."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import (
    AsymmetricTable,
    BadBounds,
    MsDiffError,
    NonPositiveCoefficient,
    ParseError,
    ValidationError,
)
from .model import (
    PRESET_PARAMS,
    Bounds,
    Grid,
    MixtureSpec,
    Preset,
    ScenarioConfig,
    validate_mixture,
)


def _check_keys(obj: dict, path: str, required: set, optional: set = frozenset()):
    if not isinstance(obj, dict):
        raise ValidationError(path, f"expected an object, got {type(obj).__name__}")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise ParseError(f"{path}: unknown key(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(path, f"missing required key(s) {sorted(missing)}")


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValidationError(path, f"expected a number, got {obj!r}")
    return float(obj)


def _integer(obj, path: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ValidationError(path, f"expected an integer, got {obj!r}")
    return int(obj)


def _parse_table(raw, n: int, path: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != n:
        raise ValidationError(path, f"expected {n} rows")
    table = np.full((n, n), np.nan)
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != n:
            raise ValidationError(f"{path}[{i}]", f"expected {n} entries")
        for j, v in enumerate(row):
            if v is None:
                continue
            table[i, j] = _number(v, f"{path}[{i}][{j}]")
    return table


def _parse_preset(obj, path: str) -> Preset:
    _check_keys(obj, path, {"preset"}, {"value", "mean", "amplitude", "mode",
                                        "center", "center_x", "center_y",
                                        "width", "floor", "peak",
                                        "left", "right", "interface"})
    kind = obj["preset"]
    if kind not in PRESET_PARAMS:
        raise ValidationError(f"{path}.preset", f"unknown preset {kind!r}")
    required, optional = PRESET_PARAMS[kind]
    given = set(obj) - {"preset"}
    extra = given - required - optional
    if extra:
        raise ParseError(f"{path}: key(s) {sorted(extra)} not valid for preset {kind!r}")
    missing = required - given
    if missing:
        raise ValidationError(path, f"preset {kind!r} needs {sorted(missing)}")
    params = tuple((k, _number(obj[k], f"{path}.{k}")) for k in sorted(given))
    return Preset(kind=kind, params=params)


def parse_config(doc: dict, source: str = "<memory>") -> ScenarioConfig:
    """Validate a decoded JSON document into a ScenarioConfig."""
    _check_keys(doc, "config", {"mixture", "grid", "initial", "time"},
                {"schemes", "output"})

    mx = doc["mixture"]
    _check_keys(mx, "mixture", {"n", "alpha", "K", "bounds"})
    n = _integer(mx["n"], "mixture.n")
    if n < 2:
        raise ValidationError("mixture.n", "need at least two species")
    bd = mx["bounds"]
    _check_keys(bd, "mixture.bounds", {"c_min", "c_max", "T_min", "T_max"})
    bounds = Bounds(
        c_min=_number(bd["c_min"], "mixture.bounds.c_min"),
        c_max=_number(bd["c_max"], "mixture.bounds.c_max"),
        T_min=_number(bd["T_min"], "mixture.bounds.T_min"),
        T_max=_number(bd["T_max"], "mixture.bounds.T_max"),
    )
    table = _parse_table(mx["K"], n, "mixture.K")
    try:
        mixture = validate_mixture(
            MixtureSpec(n=n, K=table, alpha=_number(mx["alpha"], "mixture.alpha"),
                        bounds=bounds)
        )
    except (AsymmetricTable, NonPositiveCoefficient) as exc:
        raise ValidationError(f"mixture.{exc}", "invalid friction table") from exc
    except BadBounds as exc:
        raise ValidationError("mixture", str(exc)) from exc

    gr = doc["grid"]
    _check_keys(gr, "grid", {"d", "cells", "lengths"})
    d = _integer(gr["d"], "grid.d")
    if not isinstance(gr["cells"], list) or not isinstance(gr["lengths"], list):
        raise ValidationError("grid", "cells and lengths must be arrays")
    grid = Grid(
        d=d,
        cells=tuple(_integer(c, f"grid.cells[{i}]") for i, c in enumerate(gr["cells"])),
        lengths=tuple(
            _number(L, f"grid.lengths[{i}]") for i, L in enumerate(gr["lengths"])
        ),
    )

    init = doc["initial"]
    _check_keys(init, "initial", {"species", "temperature"})
    if not isinstance(init["species"], list) or len(init["species"]) != n:
        raise ValidationError("initial.species", f"need exactly {n} preset entries")
    species = tuple(
        _parse_preset(p, f"initial.species[{i}]") for i, p in enumerate(init["species"])
    )
    temperature = _parse_preset(init["temperature"], "initial.temperature")

    tm = doc["time"]
    _check_keys(tm, "time", {"t_end"}, {"dt", "cfl_safety"})
    t_end = _number(tm["t_end"], "time.t_end")
    dt = _number(tm["dt"], "time.dt") if "dt" in tm else None
    cfl = _number(tm["cfl_safety"], "time.cfl_safety") if "cfl_safety" in tm else None

    conc_scheme, temp_scheme = "explicit", "characteristics"
    if "schemes" in doc:
        sc = doc["schemes"]
        _check_keys(sc, "schemes", set(), {"concentration", "temperature"})
        conc_scheme = sc.get("concentration", conc_scheme)
        temp_scheme = sc.get("temperature", temp_scheme)

    out_dir, snapshot_times, every_n = None, (), None
    if "output" in doc:
        out = doc["output"]
        _check_keys(out, "output", set(), {"dir", "snapshot_times", "every_n_steps"})
        if "snapshot_times" in out and "every_n_steps" in out:
            raise ValidationError(
                "output", "give at most one of snapshot_times or every_n_steps"
            )
        if "dir" in out:
            if not isinstance(out["dir"], str):
                raise ValidationError("output.dir", "expected a string")
            out_dir = out["dir"]
        if "snapshot_times" in out:
            if not isinstance(out["snapshot_times"], list):
                raise ValidationError("output.snapshot_times", "expected an array")
            snapshot_times = tuple(
                _number(t, f"output.snapshot_times[{i}]")
                for i, t in enumerate(out["snapshot_times"])
            )
            bad = [t for t in snapshot_times if t < 0.0 or t > t_end]
            if bad:
                raise ValidationError(
                    "output.snapshot_times", f"times {bad} outside [0, t_end]"
                )
        if "every_n_steps" in out:
            every_n = _integer(out["every_n_steps"], "output.every_n_steps")
            if every_n < 1:
                raise ValidationError("output.every_n_steps", "must be >= 1")

    try:
        return ScenarioConfig(
            mixture=mixture,
            grid=grid,
            species_presets=species,
            temperature_preset=temperature,
            t_end=t_end,
            dt=dt,
            cfl_safety=cfl,
            concentration_scheme=conc_scheme,
            temperature_scheme=temp_scheme,
            out_dir=out_dir,
            snapshot_times=snapshot_times,
            every_n_steps=every_n,
            source=source,
        )
    except MsDiffError:
        raise
    except Exception as exc:  # defensive: surface anything odd as validation
        raise ValidationError("config", str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    """Read, parse and validate a scenario configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_config(doc, source=str(path))
