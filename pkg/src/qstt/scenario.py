"""Scenario files: the YAML configuration that fully determines a run.

A scenario pins the pass geometry, both clock models, link physics,
pairing and estimation knobs, the adversary, the security policy, and the
session seed. Everything downstream derives from it deterministically;
there is no wall-clock entropy anywhere.

The schema is table-driven: _SCHEMA is the single source for field names,
types, defaults, and help text. Validation errors cite file, line, and
field. Fields documented as "number or table" accept either a constant or
a [[t, value], ...] list that is interpolated linearly over the pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .adversary import AttackScenario
from .channel import DownlinkConfig, UplinkConfig, fwhm_to_rms
from .geometry import PassEphemeris, load_ephemeris_csv
from .pairing import PairingConfig
from .security import SecurityPolicy
from .timebase import ClockModel

_REQUIRED = object()


class ConfigError(ValueError):
    """Scenario file problem, with file/line/field context in the message."""


@dataclass(frozen=True)
class _Field:
    kind: str          # float | int | bool | str | triple | value_or_table
    default: object
    help: str


# section -> field -> spec; "" is the top level
_SCHEMA: dict[str, dict[str, _Field]] = {
    "": {
        "name": _Field("str", None, "label for reports; defaults to the file stem"),
        "duration": _Field("float", _REQUIRED, "processed pass length, seconds"),
        "t_start": _Field("float", 0.0, "pass start on the true timescale, seconds"),
        "seed": _Field("int", _REQUIRED, "session seed; all randomness derives from it"),
        "ephemeris": _Field("str", _REQUIRED, "range table CSV, relative to this file"),
        "atmosphere_excess_delay": _Field(
            "float", 0.0, "constant per-direction excess path delay, seconds"),
    },
    "clock_a": {
        "offset_tau": _Field("float", 0.0, "clock offset, seconds"),
        "rate_kappa": _Field("float", 1.0, "clock rate factor"),
        "freq_drift": _Field("float", 0.0, "linear frequency drift, 1/s"),
        "timestamp_jitter_rms": _Field("float", 0.0, "time-tagging jitter RMS, seconds"),
    },
    "clock_b": {
        "offset_tau": _Field("float", 0.0, "clock offset, seconds"),
        "rate_kappa": _Field("float", 1.0, "clock rate factor"),
        "freq_drift": _Field("float", 0.0, "linear frequency drift, 1/s"),
        "timestamp_jitter_rms": _Field("float", 0.0, "time-tagging jitter RMS, seconds"),
    },
    "downlink": {
        "rep_rate": _Field("float", 2.0e8, "pulse repetition rate, Hz"),
        "pulse_width_fwhm": _Field("float", 200.0e-12, "optical pulse FWHM, seconds"),
        "detector_jitter_rms": _Field("float", 300.0e-12,
                                      "receiver timing jitter RMS, seconds"),
        "loss_db": _Field("value_or_table", 40.0,
                          "total link loss in dB; number or [[t, dB], ...] table"),
        "background_rate": _Field("float", 0.0, "dark/background click rate, Hz"),
        "mean_photon_numbers": _Field("triple", (0.8, 0.1, 0.0),
                                      "signal/decoy/vacuum mean photon numbers"),
        "intensity_probabilities": _Field("triple", (0.8, 0.1, 0.1),
                                          "signal/decoy/vacuum send probabilities"),
        "intrinsic_error": _Field("float", 0.005,
                                  "polarization error probability on basis match"),
    },
    "uplink": {
        "rep_rate": _Field("float", 1.0e4, "pulse repetition rate, Hz"),
        "pulse_width_fwhm": _Field("float", 0.8e-9, "optical pulse FWHM, seconds"),
        "detection_jitter_rms": _Field("float", 0.0,
                                       "receiver timing jitter RMS, seconds"),
        "detection_probability_model": _Field(
            "value_or_table", 0.93,
            "per-pulse detection probability; number or [[t, p], ...] table"),
    },
    "pairing": {
        "gate": _Field("float", 1.6e-9, "downlink match half-window, seconds"),
        "uplink_gate": _Field("float", 1.8e-9, "uplink match half-window, seconds"),
        "offset_bound": _Field("float", 0.1,
                               "half-width of the clock offset search, seconds"),
        "emission_window": _Field("float", 50.0e-6,
                                  "two-way emission pairing half-window, seconds"),
        "block_duration": _Field("float", 1.0, "QBER block length, seconds"),
        "residual_k": _Field("float", 3.0, "residual trim factor, sigmas"),
        "scan_subsample": _Field("int", 512, "detections probed per alignment cell"),
        "refine_subsample": _Field("int", 2048, "detections used in offset refinement"),
        "min_scan_pairs": _Field("int", 40, "basis-matched pairs required to score"),
        "agreement_floor": _Field("float", 0.6, "minimum winning payload agreement"),
        "agreement_margin": _Field("float", 0.05,
                                   "required winner-vs-runner-up agreement gap"),
        "m_half_width": _Field("int", 6, "pulse slips scanned around each candidate"),
    },
    "predictor": {
        "noise_rms": _Field("float", 0.0, "prior range prediction noise RMS, meters"),
        "bias": _Field("float", 0.0, "prior range prediction bias, meters"),
    },
    "policy": {
        "alert_limit_L": _Field("float", 0.05, "ranging alert limit, meters"),
        "qber_threshold": _Field("float", 0.0125, "per-block QBER discard level"),
        "residual_k": _Field("float", 3.0, "statistical term scale, sigmas"),
    },
    "attack": {
        "intercept_resend_fraction": _Field(
            "float", 0.0, "fraction of downlink photons measured and resent"),
        "delay_down": _Field("value_or_table", 0.0,
                             "added downlink path delay, seconds; number or table"),
        "delay_up": _Field("value_or_table", 0.0,
                           "added uplink path delay, seconds; number or table"),
        "tamper_frames": _Field("bool", False,
                                "corrupt encrypted frames in transit"),
        "resend_timing_policy": _Field(
            "str", "pass-through",
            "resent-photon timing: pass-through or fixed-shift"),
        "resend_shift": _Field("float", 0.0,
                               "time shift for fixed-shift resend, seconds"),
    },
    "keys": {
        "preseed_bits": _Field("int", 4069481,
                               "key bits shared before the pass (earlier rounds)"),
    },
    "frames": {
        "payload_bytes": _Field("int", 32768, "frame payload cap, bytes (max 32768)"),
    },
    "estimator": {
        "window_duration": _Field("float", 1.0, "fit window length, seconds"),
        "normal_point_n": _Field("int", 300, "raw points averaged per normal point"),
    },
}


def _yaml_key_lines(text: str) -> dict[tuple, int]:
    """Map (section, key, ...) paths to 1-based line numbers."""
    lines: dict[tuple, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                sub = path + (str(key_node.value),)
                lines[sub] = key_node.start_mark.line + 1
                walk(value_node, sub)

    if root is not None:
        walk(root, ())
    return lines


class _Reader:
    """Typed field extraction with file/line diagnostics."""

    def __init__(self, data: dict, lines: dict[tuple, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def _where(self, path: tuple) -> str:
        line = self.lines.get(path)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: {'.'.join(path)}"

    def fail(self, path: tuple, msg: str):
        raise ConfigError(f"{self._where(path)}: {msg}")

    def section(self, name: str) -> dict:
        if name == "":
            section_names = set(_SCHEMA) - {""}
            return {k: v for k, v in self.data.items()
                    if k not in section_names}
        raw = self.data.get(name, {})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            self.fail((name,), "expected a mapping of fields")
        return raw

    def coerce(self, path: tuple, spec: _Field, value):
        kind = spec.kind
        if kind == "float":
            return self._as_float(path, value)
        if kind == "int":
            if isinstance(value, bool):
                self.fail(path, "expected an integer, got a boolean")
            if isinstance(value, int):
                return value
            if isinstance(value, str):
                try:
                    return int(value, 0)
                except ValueError:
                    pass
            self.fail(path, f"expected an integer, got {value!r}")
        if kind == "bool":
            if isinstance(value, bool):
                return value
            self.fail(path, f"expected true/false, got {value!r}")
        if kind == "str":
            if isinstance(value, str):
                return value
            self.fail(path, f"expected a string, got {value!r}")
        if kind == "triple":
            if (isinstance(value, (list, tuple)) and len(value) == 3):
                return tuple(self._as_float(path, v) for v in value)
            self.fail(path, "expected a list of three numbers")
        if kind == "value_or_table":
            if isinstance(value, (list, tuple)):
                return self._as_table(path, value)
            return self._as_float(path, value)
        raise AssertionError(f"unknown schema kind {kind}")

    def _as_float(self, path: tuple, value) -> float:
        if isinstance(value, bool):
            self.fail(path, "expected a number, got a boolean")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        self.fail(path, f"expected a number, got {value!r}")

    def _as_table(self, path: tuple, value):
        rows = []
        for i, row in enumerate(value):
            if not (isinstance(row, (list, tuple)) and len(row) == 2):
                self.fail(path, f"table row {i} must be [time, value]")
            rows.append((self._as_float(path, row[0]),
                         self._as_float(path, row[1])))
        xs = np.asarray([r[0] for r in rows])
        ys = np.asarray([r[1] for r in rows])
        if xs.size < 2:
            self.fail(path, "a table needs at least two rows")
        if np.any(np.diff(xs) <= 0):
            self.fail(path, "table times must be strictly increasing")

        def interp(t, _xs=xs, _ys=ys):
            return np.interp(t, _xs, _ys)

        return interp


@dataclass
class Scenario:
    """Everything a run needs, resolved and validated."""

    name: str
    path: Path | None
    duration: float
    t_start: float
    seed: int
    ephemeris_path: Path
    atmosphere_excess_delay: float
    clock_a: ClockModel
    clock_b: ClockModel
    downlink: DownlinkConfig
    uplink: UplinkConfig
    intrinsic_error: float
    pairing: PairingConfig
    predictor_noise_rms: float
    predictor_bias: float
    policy: SecurityPolicy
    attack: AttackScenario
    preseed_bits: int
    frame_payload_bytes: int
    window_duration: float
    normal_point_n: int

    def load_ephemeris(self) -> PassEphemeris:
        return load_ephemeris_csv(self.ephemeris_path,
                                  self.atmosphere_excess_delay)

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


def _extract(reader: _Reader, section: str) -> dict:
    spec_map = _SCHEMA[section]
    raw = reader.section(section)
    known = set(spec_map)
    if section == "":
        known |= set(_SCHEMA) - {""}
    for key in raw:
        if key not in known:
            path = (key,) if section == "" else (section, key)
            reader.fail(path, f"unknown field; known fields: "
                              f"{', '.join(sorted(spec_map))}")
    out = {}
    for key, spec in spec_map.items():
        path = (key,) if section == "" else (section, key)
        if key in raw:
            out[key] = reader.coerce(path, spec, raw[key])
        elif spec.default is _REQUIRED:
            reader.fail(path, "required field is missing")
        else:
            out[key] = spec.default
    return out


def parse_scenario(data: dict, base_dir: Path, source: str = "<scenario>",
                   lines: dict[tuple, int] | None = None,
                   default_name: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: scenario must be a mapping")
    reader = _Reader(data, lines or {}, source)

    top = _extract(reader, "")
    ca = _extract(reader, "clock_a")
    cb = _extract(reader, "clock_b")
    dl = _extract(reader, "downlink")
    ul = _extract(reader, "uplink")
    pr = _extract(reader, "pairing")
    pd = _extract(reader, "predictor")
    po = _extract(reader, "policy")
    at = _extract(reader, "attack")
    ky = _extract(reader, "keys")
    fr = _extract(reader, "frames")
    es = _extract(reader, "estimator")

    if top["duration"] <= 0:
        reader.fail(("duration",), "must be positive")
    eph_path = (base_dir / top["ephemeris"]).resolve()
    if not eph_path.is_file():
        reader.fail(("ephemeris",), f"file not found: {eph_path}")
    if fr["payload_bytes"] < 1 or fr["payload_bytes"] > 32768:
        reader.fail(("frames", "payload_bytes"), "must be in [1, 32768]")
    if ky["preseed_bits"] < 0:
        reader.fail(("keys", "preseed_bits"), "must be non-negative")
    if es["window_duration"] <= 0:
        reader.fail(("estimator", "window_duration"), "must be positive")
    if es["normal_point_n"] < 1:
        reader.fail(("estimator", "normal_point_n"), "must be >= 1")

    def build(cls, kw, path):
        try:
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            reader.fail(path, str(exc))

    downlink = build(DownlinkConfig, dict(
        rep_rate=dl["rep_rate"],
        pulse_width_rms=fwhm_to_rms(dl["pulse_width_fwhm"]),
        mean_photon_numbers=dl["mean_photon_numbers"],
        intensity_probabilities=dl["intensity_probabilities"],
        loss_db=dl["loss_db"],
        detector_jitter_rms=dl["detector_jitter_rms"],
        background_rate=dl["background_rate"],
    ), ("downlink",))
    uplink = build(UplinkConfig, dict(
        rep_rate=ul["rep_rate"],
        pulse_width_rms=fwhm_to_rms(ul["pulse_width_fwhm"]),
        detection_jitter_rms=ul["detection_jitter_rms"],
        detection_probability_model=ul["detection_probability_model"],
    ), ("uplink",))
    if not 0.0 <= dl["intrinsic_error"] <= 0.5:
        reader.fail(("downlink", "intrinsic_error"), "must be in [0, 0.5]")
    pairing = build(PairingConfig, pr, ("pairing",))
    policy = build(SecurityPolicy, po, ("policy",))
    attack = build(AttackScenario, dict(
        intercept_resend_fraction=at["intercept_resend_fraction"],
        delay_down=at["delay_down"],
        delay_up=at["delay_up"],
        tamper_frames=at["tamper_frames"],
        resend_timing_policy=at["resend_timing_policy"],
        resend_shift=at["resend_shift"],
    ), ("attack",))
    clock_a = build(ClockModel, ca, ("clock_a",))
    clock_b = build(ClockModel, cb, ("clock_b",))

    if abs(cb["offset_tau"] - ca["offset_tau"]) > pr["offset_bound"]:
        reader.fail(("pairing", "offset_bound"),
                    "clock offsets exceed the offset search bound")

    return Scenario(
        name=top["name"] or default_name,
        path=None,
        duration=top["duration"],
        t_start=top["t_start"],
        seed=top["seed"],
        ephemeris_path=eph_path,
        atmosphere_excess_delay=top["atmosphere_excess_delay"],
        clock_a=clock_a,
        clock_b=clock_b,
        downlink=downlink,
        uplink=uplink,
        intrinsic_error=dl["intrinsic_error"],
        pairing=pairing,
        predictor_noise_rms=pd["noise_rms"],
        predictor_bias=pd["bias"],
        policy=policy,
        attack=attack,
        preseed_bits=ky["preseed_bits"],
        frame_payload_bytes=fr["payload_bytes"],
        window_duration=es["window_duration"],
        normal_point_n=es["normal_point_n"],
    )


def load_scenario(path, seed_override: int | None = None) -> Scenario:
    """Parse and validate a scenario YAML file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{loc}: YAML syntax error: {exc}") from exc
    if data is None:
        raise ConfigError(f"{path}: scenario file is empty")
    lines = _yaml_key_lines(text)
    scn = parse_scenario(data, path.parent, source=str(path), lines=lines,
                         default_name=path.stem)
    scn.path = path
    if seed_override is not None:
        scn.seed = int(seed_override)
    return scn


def scenario_schema() -> str:
    """Reference text for every scenario field and its default."""
    out = [
        "Scenario file reference (YAML)",
        "",
        "Types: number fields accept integers, decimals, or scientific",
        "notation (quoted or bare). 'number or table' fields also accept",
        "[[time, value], ...] for linear interpolation over the pass.",
        "Unknown fields are rejected.",
        "",
    ]
    for section, fields in _SCHEMA.items():
        out.append(f"[{section or 'top level'}]")
        for key, spec in fields.items():
            if spec.default is _REQUIRED:
                default = "REQUIRED"
            elif spec.default is None:
                default = "file stem"
            else:
                default = repr(spec.default)
            out.append(f"  {key} (default {default})")
            out.append(f"      {spec.help}")
        out.append("")
    return "\n".join(out)
