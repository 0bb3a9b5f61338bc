"""INI experiment configuration: parsing, validation, canonical echo.

A config is a key-value document with sections ([field], [dynamics],
[ensemble], [diagnostics], [initial], [run]); the CLI reads all numerical
parameters from it so experiments stay diffable.  Every run requires an
explicit seed; nothing reads OS entropy.
"""

import configparser
from dataclasses import dataclass, field as dfield

from . import fields


class ConfigError(ValueError):
    """Configuration rejected; message names the offending field."""


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def parse_terms(text: str) -> list[tuple]:
    """Parse scalar terms '1.0 cos 1 0 ; 2.0 sin 0 2' -> [(coef, phase, z1, z2)]."""
    terms = []
    for chunk in text.split(";"):
        toks = chunk.split()
        if not toks:
            continue
        if len(toks) != 4 or toks[1] not in ("cos", "sin"):
            raise ConfigError(f"[initial] terms: cannot parse term {chunk.strip()!r}")
        terms.append((float(toks[0]), toks[1], int(toks[2]), int(toks[3])))
    if not terms:
        raise ConfigError("[initial] terms: empty")
    return terms


def parse_observable(text: str):
    """Parse 'cos 1 0 cos 1 0' -> TrigProductObservable(psi(x,y)=trig(za.x)trig(zb.y))."""
    from .mixing import TrigProductObservable

    toks = text.split()
    if len(toks) != 6 or toks[0] not in ("cos", "sin") or toks[3] not in ("cos", "sin"):
        raise ConfigError(f"[diagnostics] observable: cannot parse {text!r}")
    return TrigProductObservable(
        (int(toks[1]), int(toks[2])), toks[0], (int(toks[4]), int(toks[5])), toks[3]
    )


@dataclass
class ExperimentConfig:
    """Typed view of one experiment configuration file."""

    field_cfg: dict
    dynamics: dict
    ensemble: dict
    diagnostics: dict
    initial: dict
    seed: int
    raw: dict = dfield(default_factory=dict)

    def build_model(self) -> fields.VelocityModel:
        return fields.model_from_config(self.field_cfg)

    def echo(self) -> dict:
        """Fully resolved numerical configuration (hashed into the manifest)."""
        return {
            "field": self.field_cfg,
            "dynamics": self.dynamics,
            "ensemble": self.ensemble,
            "diagnostics": self.diagnostics,
            "initial": self.initial,
            "seed": self.seed,
        }


_DYNAMICS_DEFAULTS = {"amplitude": 1.0, "kappa": 0.0, "c": 0.0, "dt": 1e-3, "t_final": 1.0}
_ENSEMBLE_DEFAULTS = {"particles": 1, "realizations": 8, "inner_samples": 1}


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found or unreadable")

    if not parser.has_section("run"):
        raise ConfigError("[run] section: missing")
    if not parser.has_option("run", "seed"):
        raise ConfigError("[run] seed: missing (runs require an explicit seed)")
    try:
        seed = parser.getint("run", "seed")
    except ValueError as e:
        raise ConfigError(f"[run] seed: {e}") from None

    if not parser.has_section("field"):
        raise ConfigError("[field] section: missing")
    kind = parser.get("field", "kind", fallback=None)
    if kind is None:
        raise ConfigError("[field] kind: missing")
    if kind == "kraichnan":
        field_cfg = {"kind": "kraichnan"}
        for key, cast in (("d", int), ("alpha", float), ("zmax", int)):
            if not parser.has_option("field", key):
                raise ConfigError(f"[field] {key}: missing for kind=kraichnan")
            try:
                field_cfg[key] = cast(parser.get("field", key))
            except ValueError as e:
                raise ConfigError(f"[field] {key}: {e}") from None
        field_cfg["scale"] = parser.getfloat("field", "scale", fallback=1.0)
        if field_cfg["alpha"] <= 2:
            raise ConfigError("[field] alpha: must be > 2")
        if field_cfg["d"] < 2:
            raise ConfigError("[field] d: must be >= 2")
    elif kind == "br":
        field_cfg = {"kind": "br"}
    else:
        raise ConfigError(f"[field] kind: unknown kind {kind!r}")

    def section_dict(name, defaults, casts):
        out = dict(defaults)
        if parser.has_section(name):
            for key in parser.options(name):
                if key not in casts:
                    raise ConfigError(f"[{name}] {key}: unknown key")
                try:
                    out[key] = casts[key](parser.get(name, key))
                except ValueError as e:
                    raise ConfigError(f"[{name}] {key}: {e}") from None
        return out

    dynamics = section_dict("dynamics", _DYNAMICS_DEFAULTS, {
        "amplitude": float, "kappa": float, "c": float, "dt": float, "t_final": float,
    })
    if dynamics["dt"] <= 0:
        raise ConfigError("[dynamics] dt: must be positive")
    if dynamics["t_final"] <= 0:
        raise ConfigError("[dynamics] t_final: must be positive")
    if dynamics["kappa"] < 0:
        raise ConfigError("[dynamics] kappa: must be >= 0")

    ensemble = section_dict("ensemble", _ENSEMBLE_DEFAULTS, {
        "particles": int, "realizations": int, "inner_samples": int,
    })
    for key in ("particles", "realizations", "inner_samples"):
        if ensemble[key] < 1:
            raise ConfigError(f"[ensemble] {key}: must be >= 1")

    diagnostics = section_dict("diagnostics", {}, {
        "p_grid": _parse_floats,
        "p": float,
        "z_cut": int,
        "s_values": _parse_floats,
        "snapshot_dt": float,
        "quadrature": int,
        "x0": _parse_floats,
        "y0": _parse_floats,
        "separations": _parse_floats,
        "t_star": float,
        "a_list": _parse_floats,
        "observable": parse_observable,
        "t_grid_step": float,
        "qr_every": int,
        "grid_resolution": int,
        "n_angle": int,
        "t_step": float,
        "transition_samples": int,
        "n_grid": int,
        "record_every": int,
        "nsamples": int,
    })
    for key in ("p_grid", "s_values", "separations", "a_list"):
        if key in diagnostics and not diagnostics[key]:
            raise ConfigError(f"[diagnostics] {key}: empty list")

    initial = {}
    if parser.has_section("initial") and parser.has_option("initial", "terms"):
        initial["terms"] = parse_terms(parser.get("initial", "terms"))

    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    return ExperimentConfig(
        field_cfg=field_cfg,
        dynamics=dynamics,
        ensemble=ensemble,
        diagnostics={k: v for k, v in diagnostics.items()},
        initial=initial,
        seed=seed,
        raw=raw,
    )
