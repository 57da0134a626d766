"""File formats: sequence and spectrum JSON, versioned CSV tables, atomic writes."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from .control import ControlSegment, ControlSequence
from .spectra import NoiseSpectrum, PowerLaw, Tabulated, WhiteCutoff, scaled_to_rms

SCHEMA_VERSION = 1
POWER_LAW_OMEGA_MIN_FACTOR = 1e-3   # default infrared cutoff, in units of 1/tau

SCHEMAS = {
    "filter1": ("omega", "F1", "F1_x", "F1_y", "F1_z"),
    "filter2": ("omega", "omega_prime", "F2", "F2_a", "F2_b", "F2_c"),
    "sweep": ("gate", "tau_x", "xi", "chi", "error_2nd", "error_4th", "flags"),
    "mc": ("trajectory_index", "fidelity"),
    "compare": ("gate", "tau_x", "xi", "error_2nd", "error_4th", "error_mc",
                "stderr_mc", "deviation"),
    "presets": ("name", "segments", "tau", "first_order_corrected", "closed_form_filters"),
    "fidelity": ("chi", "xi", "error_2nd", "error_4th", "fidelity_2nd", "fidelity_4th",
                 "flags"),
}


class ConfigError(ValueError):
    """Invalid user input (sequence, spectrum or command options)."""


def _load_json_arg(text_or_path) -> dict:
    text = str(text_or_path).strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid inline JSON: {exc}") from None
    path = Path(text)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def sequence_from_dict(data: dict) -> ControlSequence:
    """``{"name": ..., "segments": [{"axis", "rate", "duration" | "angle"}, ...]}``."""
    try:
        segs = []
        for item in data["segments"]:
            rate = float(item.get("rate", 0.0))
            if "duration" in item:
                dur = float(item["duration"])
            elif "angle" in item:
                if rate == 0:
                    raise ConfigError("segment given by angle needs a non-zero rate")
                dur = abs(float(item["angle"]) / rate)
                rate = math.copysign(abs(rate), float(item["angle"]))
            else:
                raise ConfigError("each segment needs 'duration' or 'angle'")
            segs.append(ControlSegment(item["axis"], rate, dur))
        return ControlSequence(tuple(segs), name=str(data.get("name", "")))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed sequence description: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_sequence(text_or_path) -> ControlSequence:
    return sequence_from_dict(_load_json_arg(text_or_path))


def spectrum_from_dict(data: dict, tau: float | None = None) -> NoiseSpectrum:
    """Build a spectrum from its JSON description.

    Types: ``white_cutoff`` (alpha, omega_c), ``power_law`` (alpha, exponent,
    omega_min, omega_max) and ``tabulated`` (omega/values arrays or a two-column
    CSV ``file``). An optional ``rms`` rescales the amplitude so that
    ``sqrt(variance) == rms``. A power law with ``exponent >= 1`` and no
    ``omega_min`` gets ``omega_min = 1e-3 / tau``.
    """
    kind = str(data.get("type", "")).lower().replace("-", "_")
    try:
        if kind in ("white_cutoff", "white"):
            spec = WhiteCutoff(float(data.get("alpha", 1.0)), float(data["omega_c"]))
        elif kind in ("power_law", "powerlaw"):
            p = float(data["exponent"])
            lo = data.get("omega_min")
            if lo is None:
                if p >= 1:
                    if tau is None:
                        raise ConfigError("power-law spectrum needs omega_min (or a gate duration "
                                          "to derive the default)")
                    lo = POWER_LAW_OMEGA_MIN_FACTOR / tau
                else:
                    lo = 0.0
            hi = data.get("omega_max")
            spec = PowerLaw(float(data.get("alpha", 1.0)), p, float(lo),
                            math.inf if hi is None else float(hi))
        elif kind == "tabulated":
            if "file" in data:
                spec = Tabulated.from_csv(data["file"])
            else:
                spec = Tabulated(tuple(data["omega"]), tuple(data["values"]))
        else:
            raise ConfigError(f"unknown spectrum type {data.get('type')!r}; "
                              "use white_cutoff, power_law or tabulated")
        if "rms" in data:
            spec = scaled_to_rms(spec, float(data["rms"]))
        return spec
    except KeyError as exc:
        raise ConfigError(f"spectrum description is missing {exc}") from None
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None


def load_spectrum(text_or_path, tau: float | None = None) -> NoiseSpectrum:
    return spectrum_from_dict(_load_json_arg(text_or_path), tau)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ";".join(str(x) for x in v)
    return str(v)


def csv_text(schema: str, rows) -> str:
    """CSV with a ``# gatenoise <schema> schema v1`` comment line and a header row.

    ``rows`` are dicts keyed by column name; missing keys become empty cells.
    """
    cols = SCHEMAS[schema]
    buf = io.StringIO()
    buf.write(f"# gatenoise {schema} schema v{SCHEMA_VERSION}: {','.join(cols)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in cols])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


class AtomicOutputs:
    """Collects outputs and publishes them together; nothing is left behind on failure."""

    def __init__(self):
        self._pending: list[tuple[Path, str]] = []

    def add(self, path, text: str):
        self._pending.append((Path(path), text))

    def commit(self, stdout=None):
        tmps = []
        try:
            for path, text in self._pending:
                if str(path) == "-":
                    continue
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(text)
                tmps.append((tmp, path))
            for tmp, path in tmps:
                os.replace(tmp, path)
            tmps = []
        finally:
            for tmp, _ in tmps:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
        out = stdout or sys.stdout
        for path, text in self._pending:
            if str(path) == "-":
                out.write(text)
        self._pending = []
