"""Run configuration: flat key-value text with sections (INI), presets,
and round-trip parsing."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # problem
    problem: str = "double_pipe"  # double_pipe | bipolar_plate | rastrigin
    alpha_fluid: float = 2.5 / 100.0 ** 2
    alpha_solid: float = 2.5 / 0.0025 ** 2
    volume_mode: str = "equality"  # equality | bounds | free
    volume_target: Optional[float] = 0.5
    volume_lower: Optional[float] = None
    volume_upper: Optional[float] = None
    threshold_speed: Optional[float] = None
    smoothing_dt: Optional[float] = None

    # mesh
    mesh_kind: str = "double_pipe"  # double_pipe | rectangle
    resolution: float = 1.0 / 24.0
    hole_segments: int = 48
    holes_as_solid: bool = False
    rect_width: float = 1.0
    rect_height: float = 1.0
    rect_nx: int = 40
    rect_ny: int = 40
    rect_pattern: str = "crossed"
    rect_tagger: str = "bipolar"

    # solver
    angle_tol_deg: float = 2.0
    kappa_min: float = 1e-3
    max_iters: int = 500
    volume_tol: float = 1e-4

    # penalty
    gamma: float = 0.7
    delta: float = 1e6
    tau_same: Optional[float] = None

    # deflation
    budget: int = 20

    # toy
    toy_lower: float = -5.12
    toy_upper: float = 5.12
    toy_start: float = 0.0
    toy_step: float = 0.01

    # init
    init: str = "all-fluid"  # all-fluid | stripes:<k> | file:<path>

    # output
    output_dir: str = "out"

    def validate(self):
        if self.problem not in ("double_pipe", "bipolar_plate", "rastrigin"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.volume_mode not in ("equality", "bounds", "free"):
            raise ConfigError(f"unknown volume mode {self.volume_mode!r}")
        if self.volume_mode == "equality" and self.volume_target is None:
            raise ConfigError("equality volume mode needs volume_target")
        if self.volume_mode == "bounds" and (self.volume_lower is None
                                             or self.volume_upper is None):
            raise ConfigError("bounds volume mode needs volume_lower and volume_upper")
        if self.problem == "bipolar_plate":
            if self.threshold_speed is None or self.smoothing_dt is None:
                raise ConfigError("bipolar runs need threshold_speed and smoothing_dt")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if self.gamma <= 0 or self.delta <= 0:
            raise ConfigError("penalty parameters must be positive")
        return self


_SECTIONS = {
    "problem": ("problem", "alpha_fluid", "alpha_solid", "volume_mode",
                "volume_target", "volume_lower", "volume_upper",
                "threshold_speed", "smoothing_dt"),
    "mesh": ("mesh_kind", "resolution", "hole_segments", "holes_as_solid",
             "rect_width", "rect_height", "rect_nx", "rect_ny",
             "rect_pattern", "rect_tagger"),
    "solver": ("angle_tol_deg", "kappa_min", "max_iters", "volume_tol"),
    "penalty": ("gamma", "delta", "tau_same"),
    "deflation": ("budget",),
    "toy": ("toy_lower", "toy_upper", "toy_start", "toy_step"),
    "init": ("init",),
    "output": ("output_dir",),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_OPTIONAL_FLOATS = {"volume_target", "volume_lower", "volume_upper",
                    "threshold_speed", "smoothing_dt", "tau_same"}
_INTS = {"hole_segments", "rect_nx", "rect_ny", "max_iters", "budget"}
_BOOLS = {"holes_as_solid"}


def _parse_value(name, raw):
    raw = raw.strip()
    if name in _OPTIONAL_FLOATS:
        return None if raw in ("", "none") else float(raw)
    if name in _INTS:
        return int(raw)
    if name in _BOOLS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean {raw!r} for {name}")
    default = getattr(RunConfig(), name)
    if isinstance(default, float):
        return float(raw)
    return raw


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        parser[section] = {}
        for name in names:
            value = getattr(cfg, name)
            if value is None:
                parser[section][name] = "none"
            elif isinstance(value, float):
                parser[section][name] = repr(value)
            else:
                parser[section][name] = str(value)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def config_from_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparsable config: {exc}") from exc
    cfg = RunConfig()
    known = {name: section for section, names in _SECTIONS.items() for name in names}
    for section in parser.sections():
        for name, raw in parser[section].items():
            if name not in known:
                raise ConfigError(f"unknown option {name!r}")
            setattr(cfg, name, _parse_value(name, raw))
    return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path) as f:
        return config_from_text(f.read())


def write_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        f.write(config_to_text(cfg))


# ---------------------------------------------------------------------------
# presets: desk-scale runs finish on a laptop; the full-scale presets match
# the benchmark mesh classes and budgets and are long-running

def _double_pipe_base():
    return RunConfig(
        problem="double_pipe", mesh_kind="double_pipe",
        volume_mode="equality", volume_target=0.5,
        gamma=0.7, delta=1e6,
    )


def _bipolar_base():
    return RunConfig(
        problem="bipolar_plate", mesh_kind="rectangle",
        rect_tagger="bipolar", rect_pattern="crossed",
        volume_mode="bounds", volume_target=None,
        volume_lower=0.5, volume_upper=0.7,
        threshold_speed=0.1, smoothing_dt=1e-3,
        gamma=0.25, delta=5e-3,
    )


def preset(name: str) -> RunConfig:
    if name == "double-pipe-desk":
        cfg = _double_pipe_base()
        cfg.resolution = 1.0 / 24.0
        cfg.budget = 20
        cfg.max_iters = 100
        cfg.angle_tol_deg = 1.0
        cfg.init = "all-fluid"
        return cfg.validate()
    if name == "double-pipe-full":
        cfg = _double_pipe_base()
        cfg.resolution = 0.01
        cfg.budget = 100
        cfg.max_iters = 300
        cfg.angle_tol_deg = 1.0
        cfg.init = "all-fluid"
        return cfg.validate()
    if name == "bipolar-desk":
        cfg = _bipolar_base()
        cfg.rect_nx = cfg.rect_ny = 20
        # light smoothing so that coarse-mesh walls do not trivially satisfy
        # the speed goal: the first minimizer keeps a visible constraint gap
        cfg.smoothing_dt = 5e-5
        cfg.budget = 10
        cfg.max_iters = 100
        cfg.angle_tol_deg = 1.0
        cfg.init = "stripes:2"
        return cfg.validate()
    if name == "bipolar-full":
        cfg = _bipolar_base()
        cfg.rect_nx = cfg.rect_ny = 75
        cfg.smoothing_dt = 2e-4
        cfg.budget = 200
        cfg.max_iters = 300
        cfg.angle_tol_deg = 1.0
        cfg.init = "stripes:2"
        return cfg.validate()
    if name == "rastrigin-demo":
        cfg = RunConfig(problem="rastrigin", volume_mode="free",
                        volume_target=None, gamma=0.5, delta=500.0,
                        tau_same=0.1, budget=10, init="all-fluid")
        return cfg.validate()
    raise ConfigError(f"unknown preset {name!r}; "
                      f"available: {', '.join(sorted(PRESETS))}")


PRESETS = ("double-pipe-desk", "double-pipe-full", "bipolar-desk",
           "bipolar-full", "rastrigin-demo")
