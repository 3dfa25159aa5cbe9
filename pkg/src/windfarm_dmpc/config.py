"""Run configuration read from INI files.

Sections: ``[farm]`` (layout), ``[model]`` (controller model constants),
``[control]`` (MPC and iteration settings), ``[plant]`` (truth-model
parameters, defaulting to the model values so a missing section means no
mismatch), ``[reference]`` and ``[simulation]``.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .plant import PlantParams
from .topology import FarmLayout, build_layout

__all__ = ["ConfigError", "SimulationConfig", "load_config", "parse_config", "PRESETS"]


class ConfigError(ValueError):
    pass


PRESETS = {
    "10T": """
[farm]
G = 10
M = 2
N = 5
dx_r = 630
dy_r = 378
D_r = 90
V_inf = 7.5
rho = 1.2
h = 1

[model]
c_w = 0.68
c_VV = 1.0
c_VCT = 1.0
c_VA = 0.9
c_PV = 1.0
c_PCT = 1.1
tau = 5
ct_operating = 0.6

[control]
q = 1
r = 0.4
CT_max = 0.888888888888889
CT_min = 0.01
p_max = 200
epsilon = 0.01
Gamma = 2
H = 160

[reference]
gamma = 0.25
base = 0.8
source = synthetic
seed = 0

[simulation]
N_s = 1000
""",
    "64T": """
[farm]
G = 64
M = 8
N = 8
dx_r = 630
dy_r = 378
D_r = 90
V_inf = 7.5
rho = 1.2
h = 1

[model]
c_w = 0.31
c_VV = 0.1
c_VCT = 0.6
c_VA = 0.8
c_PV = 0.9
c_PCT = 1.1
tau = 5
ct_operating = 0.6

[control]
q = 1
r = 0.4
CT_max = 0.888888888888889
CT_min = 0.01
p_max = 200
epsilon = 0.01
Gamma = 2
H = 160

[reference]
gamma = 0.5
base = 0.8
source = synthetic
seed = 0

[simulation]
N_s = 1000
""",
}

_MODEL_KEYS = {"c_w": "wake_constant", "c_vv": "c_vv", "c_vct": "c_vct", "c_va": "c_va",
               "c_pv": "c_pv", "c_pct": "c_pct", "tau": "filter_time_constant",
               "ct_operating": "ct_operating"}
_CONTROL_KEYS = {"q": "q", "r": "r", "ct_max": "ct_max", "ct_min": "ct_min",
                 "p_max": "max_iterations", "epsilon": "tol", "gamma": "init_scale",
                 "h": "horizon", "warm_start": "warm_start", "weights": "weights"}


@dataclass
class SimulationConfig:
    layout: FarmLayout
    controller: dict
    plant: PlantParams
    reference: dict = field(default_factory=lambda: {"gamma": 0.25, "base": 0.8,
                                                     "source": "synthetic", "seed": 0})
    n_samples: int = 1000
    initial_ct: object = "match"
    workers: int = 1
    centralized_cap: int = 2000

    def with_overrides(self, horizon=None, gamma=None, seed=None, workers=None, n_samples=None):
        cfg = replace(self, controller=dict(self.controller), reference=dict(self.reference))
        if horizon is not None:
            cfg.controller["horizon"] = int(horizon)
        if gamma is not None:
            cfg.reference["gamma"] = float(gamma)
        if seed is not None:
            cfg.reference["seed"] = int(seed)
        if workers is not None:
            cfg.workers = int(workers)
        if n_samples is not None:
            cfg.n_samples = int(n_samples)
        return cfg

    def to_dict(self):
        plant = asdict(self.plant)
        plant.pop("induction", None)
        return {"layout": asdict(self.layout), "controller": dict(self.controller),
                "plant": plant, "reference": dict(self.reference), "n_samples": self.n_samples,
                "initial_ct": self.initial_ct, "workers": self.workers,
                "centralized_cap": self.centralized_cap}


def _num(section, key, value, kind=float):
    try:
        if kind is bool:
            return {"true": True, "yes": True, "1": True, "false": False, "no": False,
                    "0": False}[value.strip().lower()]
        if kind is int:
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        return float(value)
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key}: cannot read {value!r} as "
                          f"{kind.__name__}") from None


def _eval_fraction(value):
    """Accept ``8/9`` style fractions for thrust bounds."""
    if "/" in value:
        a, b = value.split("/", 1)
        return str(float(a) / float(b))
    return value


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if not cp.has_section("farm"):
        raise ConfigError(f"{source}: missing [farm] section")
    known = {"farm", "model", "control", "plant", "reference", "simulation"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")
    layout = build_layout(dict(cp["farm"]))

    controller = {}
    for section, keys in (("model", _MODEL_KEYS), ("control", _CONTROL_KEYS)):
        if not cp.has_section(section):
            continue
        for key, raw in cp[section].items():
            name = keys.get(key.lower())
            if name is None:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            if name in ("horizon", "max_iterations"):
                controller[name] = _num(section, key, raw, int)
            elif name == "warm_start":
                controller[name] = _num(section, key, raw, bool)
            elif name == "weights":
                controller[name] = [_num(section, key, v) for v in raw.split(",")]
            else:
                controller[name] = _num(section, key, _eval_fraction(raw))

    plant_kw = {"wake_constant": controller.get("wake_constant", 0.68),
                "filter_time_constant": controller.get("filter_time_constant", 5.0),
                "ct_min": controller.get("ct_min", 0.01),
                "ct_max": controller.get("ct_max", 8 / 9)}
    if cp.has_section("plant"):
        for key, raw in cp["plant"].items():
            name = {"c_w": "wake_constant", "tau": "filter_time_constant"}.get(key.lower())
            if name is None:
                raise ConfigError(f"[plant] unknown key {key!r}")
            plant_kw[name] = _num("plant", key, raw)
    try:
        plant = PlantParams(**plant_kw)
    except ValueError as exc:
        raise ConfigError(f"[plant] {exc}") from None

    reference = {"gamma": 0.25, "base": 0.8, "source": "synthetic", "seed": 0}
    if cp.has_section("reference"):
        for key, raw in cp["reference"].items():
            k = key.lower()
            if k in ("gamma", "base"):
                reference[k] = _num("reference", key, raw)
            elif k == "seed":
                reference[k] = _num("reference", key, raw, int)
            elif k == "source":
                reference[k] = raw.strip()
            else:
                raise ConfigError(f"[reference] unknown key {key!r}")

    cfg = SimulationConfig(layout, controller, plant, reference)
    if cp.has_section("simulation"):
        for key, raw in cp["simulation"].items():
            k = key.lower()
            if k == "n_s":
                cfg.n_samples = _num("simulation", key, raw, int)
            elif k == "initial_ct":
                cfg.initial_ct = raw.strip() if raw.strip() == "match" else \
                    _num("simulation", key, raw)
            elif k == "workers":
                cfg.workers = _num("simulation", key, raw, int)
            elif k == "centralized_cap":
                cfg.centralized_cap = _num("simulation", key, raw, int)
            else:
                raise ConfigError(f"[simulation] unknown key {key!r}")
    if cfg.n_samples < 1:
        raise ConfigError("[simulation] N_s must be positive")
    return cfg


def load_config(name_or_path):
    """Read a config file, or one of the built-in presets by name."""
    if name_or_path in PRESETS:
        return parse_config(PRESETS[name_or_path], source=name_or_path)
    path = Path(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))
