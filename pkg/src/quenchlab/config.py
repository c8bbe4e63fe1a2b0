"""Experiment configuration: INI parsing with line numbers, schema check and presets.

A configuration has the sections ``[environment]``, ``[system]``,
``[discretization]`` and ``[analysis]``, plus optional ``[observable]`` and
``[output]``.  Every key is listed in :data:`SCHEMA`; unknown keys and
malformed values are reported with the line they appear on.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["SCHEMA", "ANALYSES", "PRESETS", "ExperimentConfig", "parse_config", "load_config", "preset_text"]

ANALYSES = ("rpf", "decay", "cones", "blocks", "clt", "mdp", "var", "mixing")

REQUIRED = ("environment", "system", "discretization", "analysis")

# key -> (kind, default); kind is one of int, float, str, ints, floats, states, intervals, raw
SCHEMA = {
    "environment": {
        "kind": ("str", None),
        "probabilities": ("floats", ()),
        "transition": ("raw", ""),
        "seed": ("int", None),
        "length": ("int", 0),
    },
    "system": {
        "family": ("str", None),
        "degree": ("int", 2),
        "fibers": ("raw", ""),
        "potential": ("str", "geometric"),
        "alphabet": ("int", 0),
        "matrices": ("raw", ""),
        "weights": ("raw", ""),
        "holder_exponent": ("float", 1.0),
    },
    "observable": {
        "kind": ("str", "cos"),
        "values": ("raw", ""),
    },
    "discretization": {
        "scheme": ("str", None),
        "resolution": ("int", None),
    },
    "analysis": {
        "run": ("str", ""),
        "seed": ("int", None),
        "burn_in": ("int", 20),
        "rpf_tol": ("float", 1e-10),
        "decay_n_max": ("int", 64),
        "decay_expect": ("str", ""),
        "cones_steps": ("int", 6),
        "cones_pairs": ("int", 32),
        "var_n_max": ("int", 1024),
        "var_k_max": ("int", 32),
        "var_sigma2_expected": ("float", math.nan),
        "var_sigma2_tol": ("float", math.nan),
        "var_slope_max": ("float", math.nan),
        "clt_n_grid": ("ints", (256, 512, 1024, 2048)),
        "clt_samples": ("int", 20000),
        "clt_t_scale": ("float", 1.0),
        "clt_esseen_constant": ("float", 24.0 / math.pi),
        "clt_slope_max": ("float", math.nan),
        "mdp_power": ("float", 0.1),
        "mdp_n_grid": ("ints", (1024, 4096)),
        "mdp_t_grid": ("floats", (-0.5, -0.25, 0.0, 0.25, 0.5)),
        "mdp_sets": ("intervals", ((0.5, math.inf),)),
        "mdp_samples": ("int", 20000),
        "mdp_tol": ("float", 0.1),
        "mdp_z_max": ("float", math.nan),
        "mixing_g": ("floats", ()),
        "mixing_n_max": ("int", 20),
        "mixing_samples": ("int", 20000),
        "blocks_c1": ("float", 16.0),
        "blocks_beta": ("float", 2.0),
        "blocks_eps": ("float", 0.5),
        "blocks_eps0": ("float", 0.1),
        "blocks_level_set": ("ints", (0,)),
        "blocks_J": ("int", 2),
        "blocks_check": ("int", 4),
    },
    "output": {
        "dir": ("str", "quenchlab-out"),
    },
}


def _option_lines(text: str) -> dict[tuple[str, str], int]:
    """Map ``(section, key)`` to the 1-based line where the key is set."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None and not line[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _convert(kind: str, raw: str, where: str, line: int | None):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str" or kind == "raw":
            return raw.strip()
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if kind == "intervals":
            out = []
            for part in raw.split(";"):
                if part.strip():
                    lo, hi = part.replace(",", " ").split()
                    out.append((float(lo), float(hi)))
            return tuple(out)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}", line) from None
    raise ConfigError(f"{where}: unknown value kind {kind}", line)


@dataclass
class ExperimentConfig:
    """Validated configuration.

    ``values[section][key]`` holds typed values with defaults filled in;
    ``text`` is the canonical INI echo and ``digest`` its SHA-256.
    """

    values: dict
    text: str
    digest: str
    analyses: tuple

    def __getitem__(self, section: str) -> dict:
        return self.values[section]


def _canonical(values: dict, raw: dict) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SCHEMA:
        if section not in raw:
            continue
        parser.add_section(section)
        for key in sorted(raw[section]):
            parser.set(section, key, raw[section][key])
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        With the offending line number when one is known.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"parse error: {exc}", line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"parse error: {exc.message if hasattr(exc, 'message') else exc}",
                          getattr(exc, "lineno", None)) from None
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}", getattr(exc, "lineno", None)) from None
    lines = _option_lines(text)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")))
    for section in REQUIRED:
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", None)

    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    if seed_override is not None:
        raw["environment"]["seed"] = str(int(seed_override))
        raw["analysis"]["seed"] = str(int(seed_override))

    values = {}
    for section, keys in SCHEMA.items():
        got = raw.get(section, {})
        for key in got:
            if key not in keys:
                raise ConfigError(f"[{section}] unknown key {key!r}", lines.get((section, key)))
        out = {}
        for key, (kind, default) in keys.items():
            where = f"[{section}] {key}"
            if key in got:
                out[key] = _convert(kind, got[key], where, lines.get((section, key)))
            elif default is None and section in REQUIRED:
                raise ConfigError(f"{where} is required", lines.get((section, "")))
            else:
                out[key] = default
        values[section] = out

    _validate(values, lines)
    run = tuple(a.strip() for a in values["analysis"]["run"].replace(",", " ").split() if a.strip())
    for a in run:
        if a not in ANALYSES:
            raise ConfigError(f"[analysis] run: unknown analysis {a!r}", lines.get(("analysis", "run")))
    canon = _canonical(values, raw)
    return ExperimentConfig(values, canon, hashlib.sha256(canon.encode()).hexdigest(), run)


def _validate(values: dict, lines: dict) -> None:
    env, sysv, disc = values["environment"], values["system"], values["discretization"]

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)))

    if env["kind"] not in ("iid", "markov"):
        fail("environment", "kind", "must be iid or markov")
    if env["kind"] == "iid" and not env["probabilities"]:
        fail("environment", "probabilities", "required for iid environments")
    if env["kind"] == "markov":
        if not env["transition"]:
            fail("environment", "transition", "required for markov environments")
        try:
            env["transition"] = parse_matrix(env["transition"])
        except ValueError as exc:
            fail("environment", "transition", str(exc))
    if not 0 <= env["seed"] < 2**64:
        fail("environment", "seed", "must be a 64-bit unsigned integer")
    if sysv["family"] not in ("circle", "sft"):
        fail("system", "family", "must be circle or sft")
    if sysv["family"] == "circle":
        try:
            sysv["fibers"] = parse_fibers(sysv["fibers"])
        except ValueError as exc:
            fail("system", "fibers", str(exc))
        if sysv["potential"] not in ("geometric", "zero"):
            fail("system", "potential", "circle potentials are geometric or zero")
    else:
        try:
            sysv["matrices"] = [parse_matrix(m) for m in sysv["matrices"].split("|") if m.strip()]
            sysv["weights"] = [np.array([float(x) for x in w.replace(",", " ").split()])
                               for w in sysv["weights"].split("|") if w.strip()]
        except ValueError as exc:
            fail("system", "matrices", str(exc))
        if not sysv["matrices"]:
            fail("system", "matrices", "an sft needs one transition matrix per state")
    if disc["scheme"] not in ("ulam", "cylinder"):
        fail("discretization", "scheme", "must be ulam or cylinder")
    obs = values["observable"]
    if obs["kind"] not in ("cos", "two-mode", "tent", "coboundary", "table", "zero"):
        fail("observable", "kind", "unknown observable")
    if obs["kind"] == "table":
        try:
            obs["values"] = [np.array([float(x) for x in w.replace(",", " ").split()])
                             for w in obs["values"].split("|") if w.strip()]
        except ValueError as exc:
            fail("observable", "values", str(exc))


def parse_matrix(text: str) -> np.ndarray:
    """Rows separated by ``;`` or ``,``-free lines, entries by spaces."""
    rows = [r for r in re.split(r"[;\n]", text) if r.strip()]
    mat = [[float(x) for x in r.replace(",", " ").split()] for r in rows]
    if not mat or any(len(r) != len(mat[0]) for r in mat):
        raise ValueError("matrix rows must have equal length")
    return np.array(mat)


def parse_fibers(text: str) -> dict[int, tuple]:
    """``state: eps shape [degree]`` entries separated by ``;``."""
    out = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        state, _, spec = part.partition(":")
        items = spec.split()
        if len(items) not in (2, 3):
            raise ValueError(f"fiber entry {part.strip()!r} needs eps, shape and an optional degree")
        entry = (float(items[0]), items[1]) + ((int(items[2]),) if len(items) == 3 else ())
        out[int(state)] = entry
    if not out:
        raise ValueError("at least one fiber is required")
    return out


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed_override)


PRESETS = {
    "uniform-doubling": (
        "Doubling map with Lebesgue measure and f = cos(2 pi x): RPF, decay, variance and CLT.",
        """[environment]
kind = iid
probabilities = 1.0
seed = 1

[system]
family = circle
degree = 2
fibers = 0: 0.0 none
potential = geometric

[observable]
kind = cos

[discretization]
scheme = ulam
resolution = 768

[analysis]
run = rpf, decay, var, clt
seed = 7
burn_in = 15
decay_n_max = 12
var_n_max = 2048
var_sigma2_expected = 0.5
var_sigma2_tol = 0.002
clt_n_grid = 256, 512, 1024, 2048
clt_samples = 20000
"""),
    "perturbed-circle": (
        "Two perturbed expanding circle maps driven by a sticky Markov environment.",
        """[environment]
kind = markov
transition = 0.9 0.1; 0.1 0.9
seed = 3

[system]
family = circle
degree = 2
fibers = 0: 0.05 sin; 1: 0.1 sin 3
potential = geometric

[observable]
kind = cos

[discretization]
scheme = ulam
resolution = 256

[analysis]
run = rpf, decay, cones, blocks, var, clt, mixing
seed = 11
cones_steps = 10
burn_in = 40
decay_n_max = 24
var_n_max = 512
clt_n_grid = 64, 128, 256, 512
clt_samples = 20000
mixing_g = 0.5, 1.0
blocks_c1 = 16
blocks_level_set = 0
"""),
    "random-sft-2": (
        "Two random full-shift fibers on three symbols with first-symbol potentials.",
        """[environment]
kind = iid
probabilities = 0.5, 0.5
seed = 5

[system]
family = sft
alphabet = 3
matrices = 1 1 1; 1 1 1; 1 1 1 | 1 1 0; 1 1 1; 0 1 1
weights = 0.0 0.3 -0.2 | 0.1 0.0 0.4

[observable]
kind = table
values = 1.0 -0.5 0.2 | 0.3 0.0 -0.7

[discretization]
scheme = cylinder
resolution = 3

[analysis]
run = rpf, decay, cones, var, clt, mixing
seed = 13
burn_in = 40
decay_n_max = 24
var_n_max = 512
clt_n_grid = 64, 128, 256, 512
clt_samples = 20000
mixing_g = 0.75, 0.75
"""),
    "coboundary-null": (
        "Coboundary observable cos(2 pi x) - cos(4 pi x) under doubling: zero asymptotic variance.",
        """[environment]
kind = iid
probabilities = 1.0
seed = 1

[system]
family = circle
degree = 2
fibers = 0: 0.0 none
potential = geometric

[observable]
kind = coboundary

[discretization]
scheme = ulam
resolution = 4096

[analysis]
run = var
seed = 0
burn_in = 15
var_n_max = 256
var_sigma2_expected = 0.0
var_sigma2_tol = 1e-6
"""),
    "mdp-demo": (
        "Moderate deviations for doubling and cos(2 pi x) with a_n = n^0.1.",
        """[environment]
kind = iid
probabilities = 1.0
seed = 1

[system]
family = circle
degree = 2
fibers = 0: 0.0 none
potential = geometric

[observable]
kind = cos

[discretization]
scheme = ulam
resolution = 768

[analysis]
run = mdp
seed = 17
burn_in = 15
mdp_power = 0.1
mdp_n_grid = 256, 1024, 4096
mdp_samples = 20000
mdp_tol = 0.1
"""),
    "neutral-mixture": (
        "Identity fibers mixed with doubling (P(gamma = 1) = 1/2): quenched decay across neutral stretches.",
        """[environment]
kind = iid
probabilities = 0.5, 0.5
seed = 2

[system]
family = circle
degree = 2
fibers = 0: 0.0 none 1; 1: 0.0 none
potential = geometric

[observable]
kind = cos

[discretization]
scheme = ulam
resolution = 768

[analysis]
run = decay
seed = 0
burn_in = 60
decay_n_max = 256
"""),
}


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}", None)
    return PRESETS[name][1]
