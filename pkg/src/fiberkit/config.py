"""Strict pipeline configuration.

Files use INI syntax (``configparser``). Keys may appear under their
section header or, when the key name is unique across sections, at the top of
the file before any header::

    seed = 7
    sigma_f = 2.5e-4

    [left_ventricle]
    B = 4500

Every key has a type, a range and a default taken from the baseline murine
parameter set, so an empty file is a complete configuration. Unknown keys or
sections are rejected with the nearest valid name; all problems found in a
file are reported together in one :class:`~fiberkit.exceptions.ConfigError`.
Units: SI (meters, seconds) except where the key name says otherwise
(``_mm``, ``_deg``, ``_ms``) and the circulation, which uses mL, mmHg and s.
"""

from __future__ import annotations

import configparser
import difflib
import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circ0d import CirculationParams, ElastanceChamber, RLCCompartment, ValveModel
from .exceptions import ConfigError
from .ldrbm import PrescribedAngles
from .tissue import UsykParams


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    check: tuple = ()  # (predicate, message) pairs applied to the parsed value
    help: str = ""


def _gt(x):
    return (lambda v: v > x, f"must be > {x:g}")


def _ge(x):
    return (lambda v: v >= x, f"must be >= {x:g}")


def _lt(x):
    return (lambda v: v < x, f"must be < {x:g}")


def _le(x):
    return (lambda v: v <= x, f"must be <= {x:g}")


_ANGLE = (_gt(-180.0), _le(180.0))
_INCL = (_gt(-90.0), _le(90.0))
_FRACTION = (_gt(0.0), _lt(1.0))


def _chamber(A, B, V0, tc, tr, t0):
    return {"A": Key(float, A, (_ge(0.0),), "passive elastance, mmHg/mL"),
            "B": Key(float, B, (_ge(0.0),), "active elastance, mmHg/mL"),
            "V0": Key(float, V0, (_ge(0.0),), "resting volume, mL"),
            "contraction": Key(float, tc, _FRACTION, "fraction of the period"),
            "relaxation": Key(float, tr, _FRACTION, "fraction of the period"),
            "t0": Key(float, t0, (), "activation onset, fraction of the period")}


def _rlc(R, C, L, R_up=None):
    d = {"R": Key(float, R, (_gt(0.0),), "mmHg s/mL"),
         "C": Key(float, C, (_gt(0.0),), "mL/mmHg"),
         "L": Key(float, L, (_ge(0.0),), "mmHg s^2/mL")}
    if R_up is not None:
        d["R_up"] = Key(float, R_up, (_ge(0.0),), "mmHg s/mL")
    return d


SCHEMA = {
    "general": {
        "seed": Key(int, 0, (_ge(0),)),
        "threads": Key(int, 0, (_ge(0),), "0 = all available cores"),
        "output_dir": Key(str, "fiberkit_out"),
    },
    "geometry": {
        "mesh": Key(str, "", (), "existing VTK mesh; empty = generate the idealized biventricle"),
        "edge_length_mm": Key(float, 0.25, (_gt(0.0),)),
        "base_cut_height_mm": Key(float, 0.0),
    },
    "laplace": {
        "rtol": Key(float, 1e-12, (_gt(0.0), _lt(1.0))),
    },
    "ldrbm": {
        "alpha_endo_lv_deg": Key(float, -76.0, _ANGLE),
        "alpha_epi_lv_deg": Key(float, 22.0, _ANGLE),
        "alpha_endo_rv_deg": Key(float, 5.0, _ANGLE),
        "alpha_epi_rv_deg": Key(float, 14.0, _ANGLE),
        "gamma_endo_lv_deg": Key(float, 0.0, _INCL),
        "gamma_epi_lv_deg": Key(float, 0.0, _INCL),
        "gamma_endo_rv_deg": Key(float, 0.0, _INCL),
        "gamma_epi_rv_deg": Key(float, 0.0, _INCL),
    },
    "fibers": {
        "ell_mm": Key(list, [0.0, 0.1, 0.25, 0.5], (_ge(0.0),), "comma-separated sweep"),
        "alpha_std_deg": Key(float, 45.68, (_gt(0.0), _lt(90.0)), "injected helix dispersion"),
        "gamma_std_deg": Key(float, 25.39, (_gt(0.0), _lt(90.0)), "injected intrusion dispersion"),
        "outlier_fraction": Key(float, 0.0, (_ge(0.0), _le(1.0))),
        "bin_width_deg": Key(float, 5.0, (_gt(0.0), _le(90.0))),
    },
    "eikonal": {
        "sigma_f": Key(float, 2.0e-4, (_gt(0.0),), "m^2/s"),
        "sigma_s": Key(float, 1.0e-4, (_gt(0.0),), "m^2/s"),
        "sigma_n": Key(float, 1.0e-4, (_gt(0.0),), "m^2/s"),
        "c0": Key(float, 55.0, (_gt(0.0),), "s^-1/2"),
        "stimuli": Key(str, "", (), "'x,y,z,r,t' entries separated by ';' (m, s); empty = apex"),
        "isochrone_spacing_ms": Key(float, 1.0, (_gt(0.0),)),
        "tol": Key(float, 1e-9, (_gt(0.0),)),
    },
    "tissue": {
        "b_f": Key(float, 5.0, (_gt(0.0),)),
        "b_s": Key(float, 3.7, (_gt(0.0),)),
        "b_n": Key(float, 3.7, (_gt(0.0),)),
        "b_fs": Key(float, 2.6, (_gt(0.0),)),
        "b_fn": Key(float, 3.7, (_gt(0.0),)),
        "b_sn": Key(float, 3.7, (_gt(0.0),)),
        "c": Key(float, 2.0e3, (_gt(0.0),), "Pa"),
        "bulk": Key(float, 5.0e4, (_gt(0.0),), "Pa"),
        "a_xb": Key(float, 23.0e6, (_ge(0.0),), "Pa"),
        "m_f": Key(float, 1.0, (_ge(0.0),)),
        "m_s": Key(float, 0.0, (_ge(0.0),)),
        "m_n": Key(float, 0.0, (_ge(0.0),)),
    },
    "circulation": {
        "T_HB": Key(float, 0.2, (_gt(0.0),), "s"),
        "dt": Key(float, 2.0e-5, (_gt(0.0),), "s"),
        "beats": Key(int, 30, (_ge(1),)),
        "output_stride": Key(int, 10, (_ge(1),)),
    },
    "left_atrium": _chamber(140.0, 360.0, 0.0008, 0.36, 0.36, 0.85),
    "right_atrium": _chamber(1000.0, 40.0, 0.0008, 0.38, 0.38, 0.83),
    "left_ventricle": _chamber(100.0, 4000.0, 0.005, 0.30, 0.15, 0.0),
    "right_ventricle": _chamber(50.0, 1000.0, 0.005, 0.30, 0.15, 0.0),
    "systemic_arterial": _rlc(500.0, 0.0008, 2.064, 0.0),
    "systemic_venous": _rlc(400.0, 0.0145, 0.2064),
    "pulmonary_arterial": _rlc(5.216, 0.0024, 0.2064, 0.0),
    "pulmonary_venous": _rlc(55.45, 0.0387, 0.2064),
    "valves": {
        "R_min": Key(float, 7.5, (_gt(0.0),), "mmHg s/mL"),
        "R_max": Key(float, 75000.0, (_gt(0.0),), "mmHg s/mL"),
    },
}

_TOP = "__top__"


def _flat_owner():
    owner = {}
    for sec, keys in SCHEMA.items():
        for k in keys:
            owner.setdefault(k, []).append(sec)
    return owner


def _convert(key, raw):
    raw = raw.strip()
    if key.type is str:
        return raw
    if key.type is list:
        vals = [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        if not vals or not all(math.isfinite(v) for v in vals):
            raise ValueError("expected a comma-separated list of finite numbers")
        return vals
    if key.type is int:
        v = float(raw)
        if v != int(v):
            raise ValueError("expected an integer")
        return int(v)
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError("expected a finite number")
    return v


class PipelineConfig:
    """Validated configuration: ``cfg["section"]["key"]`` or ``cfg.get("section.key")``."""

    def __init__(self, values, source=None):
        self.values = values
        self.source = source

    def __getitem__(self, section):
        return self.values[section]

    def get(self, dotted):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def to_text(self, exclude=()):
        """Canonical INI text of the resolved configuration.

        ``exclude`` lists dotted keys to leave out.
        """
        out = []
        for sec in SCHEMA:
            out.append(f"[{sec}]")
            for k in SCHEMA[sec]:
                if f"{sec}.{k}" in exclude:
                    continue
                v = self.values[sec][k]
                if isinstance(v, list):
                    v = ", ".join(repr(x) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)

    @property
    def sha256(self):
        """Hash of everything that can change numeric results (the output
        directory is left out so reruns elsewhere compare byte for byte)."""
        return hashlib.sha256(self.to_text(exclude=("general.output_dir",)).encode()).hexdigest()

    # typed views -------------------------------------------------------

    def circulation_params(self):
        def ch(sec):
            s = self.values[sec]
            return ElastanceChamber(s["A"], s["B"], s["V0"], s["contraction"], s["relaxation"], s["t0"])

        def rlc(sec):
            s = self.values[sec]
            return RLCCompartment(s["R"], s["C"], s["L"], s.get("R_up", 0.0))

        v = self.values["valves"]
        return CirculationParams(
            la=ch("left_atrium"), ra=ch("right_atrium"), lv=ch("left_ventricle"),
            rv=ch("right_ventricle"), sys_ar=rlc("systemic_arterial"),
            sys_ven=rlc("systemic_venous"), pul_ar=rlc("pulmonary_arterial"),
            pul_ven=rlc("pulmonary_venous"), valve=ValveModel(v["R_min"], v["R_max"]),
            T_HB=self.values["circulation"]["T_HB"])

    def prescribed_angles(self):
        s = self.values["ldrbm"]
        return PrescribedAngles.from_degrees(**{k[:-4]: v for k, v in s.items()})

    def usyk_params(self):
        s = self.values["tissue"]
        return UsykParams(**{k: s[k] for k in ("b_f", "b_s", "b_n", "b_fs", "b_fn", "b_sn", "c", "bulk")})

    @property
    def stress_factors(self):
        s = self.values["tissue"]
        return np.array([s["m_f"], s["m_s"], s["m_n"]])


def defaults():
    return PipelineConfig({sec: {k: (list(key.default) if isinstance(key.default, list) else key.default)
                                 for k, key in keys.items()} for sec, keys in SCHEMA.items()})


def _suggest(name, candidates):
    close = difflib.get_close_matches(name, list(candidates), n=1, cutoff=0.5)
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_config_text(text, source=None, check_files=True):
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        Listing every problem found.
    """
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False,
                                   default_section="__no_default__")
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text, source=str(source or "<config>"))
    except configparser.Error as exc:
        # line numbers are shifted by the synthetic top header
        msg = str(exc).replace("\n", " ")
        raise ConfigError([_shift_lines(msg)]) from None
    cfg = defaults()
    problems = []
    owner = _flat_owner()
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            if sec == _TOP:
                secs = owner.get(key, [])
                if len(secs) != 1:
                    if secs:
                        problems.append(f"key {key!r} is ambiguous at top level; put it under one of "
                                        f"{', '.join('[' + s + ']' for s in secs)}")
                    else:
                        problems.append(f"unknown key {key!r}{_suggest(key, owner)}")
                    continue
                target = secs[0]
            elif sec not in SCHEMA:
                problems.append(f"unknown section [{sec}]{_suggest(sec, SCHEMA)}")
                break
            else:
                target = sec
            if key not in SCHEMA[target]:
                problems.append(f"unknown key {key!r} in [{target}]{_suggest(key, SCHEMA[target])}")
                continue
            spec = SCHEMA[target][key]
            try:
                value = _convert(spec, raw)
            except ValueError as exc:
                problems.append(f"{target}.{key} = {raw!r}: {exc}")
                continue
            for pred, msg in spec.check:
                vals = value if isinstance(value, list) else [value]
                if not all(pred(v) for v in vals):
                    problems.append(f"{target}.{key} = {raw.strip()} out of range: {msg}")
                    break
            else:
                cfg.values[target][key] = value
    problems.extend(_cross_checks(cfg, check_files))
    if problems:
        raise ConfigError(problems)
    cfg.source = source
    return cfg


def _shift_lines(msg):
    msg = msg.replace(f"section '{_TOP}'", "the top level")
    return re.sub(r"line\s+(\d+)", lambda m: f"line {int(m.group(1)) - 1}", msg)


def _cross_checks(cfg, check_files):
    problems = []
    v = cfg.values
    if not v["valves"]["R_min"] < v["valves"]["R_max"]:
        problems.append("valves.R_min must be smaller than valves.R_max")
    for sec in ("left_atrium", "right_atrium", "left_ventricle", "right_ventricle"):
        s = v[sec]
        if s["contraction"] + s["relaxation"] > 1.0:
            problems.append(f"{sec}: contraction + relaxation exceeds one period")
    c = v["circulation"]
    n = c["T_HB"] / c["dt"]
    if abs(n - round(n)) > 1e-6 * n:
        problems.append(f"circulation.dt = {c['dt']} does not divide T_HB = {c['T_HB']}")
    mesh = v["geometry"]["mesh"]
    if check_files and mesh and not Path(mesh).is_file():
        problems.append(f"geometry.mesh: file not found: {mesh}")
    for entry in filter(None, (e.strip() for e in v["eikonal"]["stimuli"].split(";"))):
        parts = entry.split(",")
        try:
            nums = [float(p) for p in parts]
        except ValueError:
            nums = []
        if len(nums) != 5 or nums[3] < 0 or nums[4] < 0:
            problems.append(f"eikonal.stimuli entry {entry!r} must be 'x,y,z,r,t' with r, t >= 0")
    return problems


def parse_config(path, check_files=True):
    """Read and validate a configuration file (see module docstring)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror or exc}"]) from None
    return parse_config_text(text, source=str(path), check_files=check_files)
