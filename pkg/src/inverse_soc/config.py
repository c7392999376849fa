"""Experiment configuration: JSON schema, validation and object builders."""

import copy
import hashlib
import json

import jsonschema

from .errors import ConfigError

EXPERIMENTS = ("simulate", "invert", "bridge", "duality", "equivalence", "nonneg-battery")


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_BOUND = {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]}
_TERM = {"type": "object", "required": ["kind"],
         "properties": {"kind": {"enum": ["zero", "constant", "quadratic_lq", "rbf_sum",
                                          "tanh_unit", "tabulated", "feature_affine"]}}}
_PAIR = _obj({"schema": {"const": "cost-v1"}, "f": _TERM, "g": _TERM}, ["f"])

SCHEMA = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "description": {"type": "string"},
    "dynamics": _obj({
        "a": _NUM, "b": _NUM, "c": _NUM, "sigma": {"type": "number", "minimum": 0},
        "control_set": _obj({"lower": _BOUND, "upper": _BOUND}, ["lower", "upper"]),
    }),
    "init": {"type": "object", "required": ["kind"],
             "properties": {"kind": {"enum": ["gaussian", "point", "uniform"]}}},
    "simulation": _obj({
        "M": _INT1, "N": _INT1, "T": _POS,
        "policy": {"type": "object", "required": ["kind"],
                   "properties": {"kind": {"enum": ["lq_optimal", "zero", "constant",
                                                    "grid_optimal"]}}},
        "write_paths": {"type": "boolean"},
    }),
    "cost": _PAIR,
    "forward": {"type": "object", "required": ["kind"],
                "properties": {"kind": {"enum": ["riccati", "hjb_grid"]}}},
    "search": {"type": "object", "required": ["kind"],
               "properties": {"kind": {"enum": ["theta_interval", "coeff_grid",
                                                "explicit_list"]}}},
    "class": _obj({
        "base": _PAIR,
        "generators": _obj({"f_features": {"type": "array", "items": _TERM},
                            "g_features": {"type": "array", "items": _TERM},
                            "coeff_set": {"enum": ["sup_ball", "l1_ball", "bl"]},
                            "radius": {"type": "number", "minimum": 0}}),
        "lambdas": {"type": "array", "items": _POS, "minItems": 1},
        "n_per_axis": {"type": "integer", "minimum": 2},
        "data": {"enum": ["chain_law", "monte_carlo"]},
        "radii": {"type": "array", "items": {"type": "number", "minimum": 0}},
    }, ["base", "generators"]),
    "transport": _obj({
        "T": _POS,
        "L": _POS,
        "n_grid": {"type": "integer", "minimum": 3},
        "oracle_n_grid": {"type": "integer", "minimum": 3},
        "mu0": _obj({"mean": _NUM, "var": _POS}, ["var"]),
        "muT": _obj({"mean": _NUM, "var": _POS}, ["var"]),
        "tol": _POS,
        "g_family": _obj({"n_centers": {"type": "integer", "minimum": 1},
                          "lo": _NUM, "hi": _NUM, "cmax": _POS,
                          "alpha": _POS}),
        "h_drift": _obj({"N": _INT1, "M": _INT1}),
        "penalized_bl": _obj({"lambdas": {"type": "array", "items": _POS, "minItems": 1},
                              "n_knots": {"type": "integer", "minimum": 3}}),
        "coupling_threshold": {"type": "number", "minimum": 0},
    }),
    "battery": _obj({"n_samples": _INT1, "budget": _POS, "seed": {"type": "integer",
                                                                    "minimum": 0},
                     "n_terms": _INT1}),
}, ["experiment", "seed"])

# sub-configs each experiment needs
_NEEDS = {
    "simulate": ("dynamics", "init", "simulation"),
    "invert": ("dynamics", "init", "simulation", "forward", "search"),
    "bridge": ("transport",),
    "duality": ("transport",),
    "equivalence": ("dynamics", "init", "forward", "class"),
    "nonneg-battery": ("dynamics", "init", "simulation", "forward", "battery"),
}


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else "?"
        return ".".join(parts + [missing]), "required field is missing"
    if err.validator == "additionalProperties":
        return ".".join(parts) or "<root>", err.message
    return ".".join(parts) or "<root>", err.message


def validate_config(cfg):
    """Raise :class:`ConfigError` with a field path on the first schema violation."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path),
                                                               e.message))
    if errors:
        where, msg = _path(errors[0])
        raise ConfigError(f"{where}: {msg}")
    for key in _NEEDS[cfg["experiment"]]:
        if key not in cfg:
            raise ConfigError(f"{key}: required for experiment '{cfg['experiment']}'")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return validate_config(cfg)


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def with_overrides(cfg, seed=None, output_dir=None):
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    return cfg
