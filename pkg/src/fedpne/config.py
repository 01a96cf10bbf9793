"""TOML experiment configuration.

An empty file is a valid configuration: Fed-PNE on Garland with M=10, T=2000,
nu1=1, rho=0.5, c=0.1, c1=1, delta=1/M and seeds 0..9.  Every section and key
is optional; unknown keys are rejected.  ``c`` and ``c1`` default to the
chosen preset (``experimental``: 0.1 and 1; ``theory``: 2 and (2M)^(1/8)).
"""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .harness import OBJECTIVES, ObjectiveConfig, RunSetup
from .objectives import NOISE_KINDS
from .partition import SPLIT_POLICIES
from .privacy import DpConfig, PrivacyError
from .protocol import ConfigError, ServerConfig
from .seir import SeirError, SeirParams

ALGORITHMS = ("fedpne", "dp-fedpne", "grid-baseline")
ALGO_ALIASES = {"grid": "grid-baseline", "dp": "dp-fedpne"}
PRESETS = ("experimental", "theory")
# each SEIR evaluation integrates an ODE, so its oracle grid is coarser by default
SEIR_FSTAR_RESOLUTION = 2000

_SCHEMA = {
    "": {"algorithm", "preset", "seeds", "server", "objective", "partition", "dp", "grid",
         "fstar", "output"},
    "server": {"M", "T", "k", "nu1", "rho", "c", "c1", "delta"},
    "objective": {"name", "perturb_scale", "noise", "noise_scale", "normalize_resolution",
                  "rho1", "rho2", "seir"},
    "objective.seir": set(SeirParams.__dataclass_fields__),
    "partition": {"split_policy"},
    "dp": {"enabled", "epsilon", "delta"},
    "grid": {"arms_per_axis"},
    "fstar": {"resolution", "value"},
    "output": {"dir"},
}


class ConfigParseError(ValueError):
    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedpne"
    preset: str = "experimental"
    seeds: tuple[int, ...] = tuple(range(10))
    server: ServerConfig = field(default_factory=ServerConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    split_policy: str = SPLIT_POLICIES[0]
    dp: DpConfig | None = None
    arms_per_axis: int = 10
    fstar_resolution: int = 1_000_000
    fstar_value: float | None = None
    output_dir: str = "results"

    def run_setup(self) -> RunSetup:
        return RunSetup(self.server, self.objective, self.split_policy, self.dp,
                        self.fstar_resolution, self.fstar_value)

    def resolved(self) -> dict:
        """Fully resolved settings, in the same layout as the input file."""
        s = self.server
        return {
            "algorithm": self.algorithm,
            "preset": self.preset,
            "seeds": list(self.seeds),
            "server": {"M": s.M, "T": s.T, "k": s.k, "nu1": s.nu1, "rho": s.rho, "c": s.c,
                       "c1": s.c1, "delta": s.delta},
            "objective": {
                "name": self.objective.name,
                "perturb_scale": self.objective.perturb_scale,
                "noise": self.objective.noise,
                "noise_scale": self.objective.noise_scale,
                "normalize_resolution": self.objective.normalize_resolution,
                "rho1": self.objective.rho1,
                "rho2": self.objective.rho2,
                "seir": dict(self.objective.seir),
            },
            "partition": {"split_policy": self.split_policy},
            "dp": {"enabled": self.dp is not None,
                   "epsilon": None if self.dp is None else self.dp.epsilon,
                   "delta": None if self.dp is None else self.dp.delta_dp,
                   "sigma2": None if self.dp is None else self.dp.sigma2},
            "grid": {"arms_per_axis": self.arms_per_axis},
            "fstar": {"resolution": self.fstar_resolution, "value": self.fstar_value},
            "output": {"dir": self.output_dir},
        }


def _check_keys(raw: dict, section: str = "") -> None:
    allowed = _SCHEMA[section]
    for key, val in raw.items():
        full = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigError("unknown key", full)
        if isinstance(val, dict):
            if full not in _SCHEMA:
                raise ConfigError("expected a value, got a table", full)
            _check_keys(val, full)
        elif full in _SCHEMA and full != "":
            raise ConfigError("expected a table", full)


def _typed(value, kind, key):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key)
    return value


def _choice(value, options, key):
    if value not in options:
        raise ConfigError(f"must be one of {', '.join(options)}; got {value!r}", key)
    return value


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed configuration table and fill in every default."""
    raw = copy.deepcopy(raw)
    _check_keys(raw)

    algorithm = _typed(raw.get("algorithm", "fedpne"), str, "algorithm")
    algorithm = _choice(ALGO_ALIASES.get(algorithm, algorithm), ALGORITHMS, "algorithm")
    preset = _choice(_typed(raw.get("preset", "experimental"), str, "preset"), PRESETS, "preset")

    seeds = raw.get("seeds", list(range(10)))
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("expected a non-empty list of integers", "seeds")
    seeds = tuple(_typed(s, int, "seeds") for s in seeds)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct", "seeds")

    srv = raw.get("server", {})
    M = _typed(srv.get("M", 10), int, "server.M")
    T = _typed(srv.get("T", 2000), int, "server.T")
    if M < 1:
        raise ConfigError("M must be an integer >= 1", "server.M")
    if preset == "theory":
        c_def, c1_def = 2.0, (2.0 * M) ** 0.125
    else:
        c_def, c1_def = 0.1, 1.0
    kwargs = dict(
        M=M, T=T,
        k=_typed(srv.get("k", 2), int, "server.k"),
        nu1=_typed(srv.get("nu1", 1.0), float, "server.nu1"),
        rho=_typed(srv.get("rho", 0.5), float, "server.rho"),
        c=_typed(srv.get("c", c_def), float, "server.c"),
        c1=_typed(srv.get("c1", c1_def), float, "server.c1"),
        delta=_typed(srv["delta"], float, "server.delta") if "delta" in srv else None,
    )
    try:
        server = ServerConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(exc.reason, f"server.{exc.key}" if exc.key else "server") from None

    obj = raw.get("objective", {})
    seir_raw = obj.get("seir", {})
    try:
        seir = tuple(sorted((k, _typed(v, str if k in ("metric", "effectiveness_curve") else float,
                                       f"objective.seir.{k}"))
                            for k, v in seir_raw.items()))
        SeirParams(**dict(seir))
    except SeirError as exc:
        raise ConfigError(str(exc), "objective.seir") from None
    objective = ObjectiveConfig(
        name=_choice(_typed(obj.get("name", "garland"), str, "objective.name"), OBJECTIVES,
                     "objective.name"),
        perturb_scale=_typed(obj.get("perturb_scale", 1.0), float, "objective.perturb_scale"),
        noise=_choice(_typed(obj.get("noise", "bounded-uniform"), str, "objective.noise"),
                      NOISE_KINDS, "objective.noise"),
        noise_scale=_typed(obj.get("noise_scale", 0.1), float, "objective.noise_scale"),
        normalize_resolution=_typed(obj.get("normalize_resolution", 100_000), int,
                                    "objective.normalize_resolution"),
        rho1=_typed(obj.get("rho1", 0.8), float, "objective.rho1"),
        rho2=_typed(obj.get("rho2", 0.3), float, "objective.rho2"),
        seir=seir,
    ) if _objective_ok(obj) else None
    if objective.name == "seir" and any(k in obj for k in ("rho1", "rho2")):
        raise ConfigError("only used by double_sine", "objective.rho1")

    split = _choice(_typed(raw.get("partition", {}).get("split_policy", SPLIT_POLICIES[0]), str,
                           "partition.split_policy"), SPLIT_POLICIES, "partition.split_policy")

    dp_raw = raw.get("dp", {})
    enabled = _typed(dp_raw.get("enabled", algorithm == "dp-fedpne"), bool, "dp.enabled")
    dp = None
    if enabled:
        if algorithm == "grid-baseline":
            raise ConfigError("differential privacy is not available for grid-baseline",
                              "dp.enabled")
        algorithm = "dp-fedpne"
        eps = _typed(dp_raw.get("epsilon", 1.0), float, "dp.epsilon")
        dlt = _typed(dp_raw.get("delta", 0.05), float, "dp.delta")
        if not eps > 0:
            raise ConfigError("ε must be > 0", "dp.epsilon")
        if not 0 < dlt < 1:
            raise ConfigError("δ_dp must lie in (0,1)", "dp.delta")
        try:
            dp = DpConfig(eps, dlt)
        except PrivacyError as exc:
            raise ConfigError(str(exc), "dp") from None
    elif algorithm == "dp-fedpne":
        raise ConfigError("algorithm dp-fedpne requires dp.enabled = true", "dp.enabled")

    arms = _typed(raw.get("grid", {}).get("arms_per_axis", 10), int, "grid.arms_per_axis")
    if arms < 1:
        raise ConfigError("must be >= 1", "grid.arms_per_axis")

    fst = raw.get("fstar", {})
    default_res = SEIR_FSTAR_RESOLUTION if objective.name == "seir" else 1_000_000
    resolution = _typed(fst.get("resolution", default_res), int, "fstar.resolution")
    if resolution < 2:
        raise ConfigError("must be >= 2", "fstar.resolution")
    value = _typed(fst["value"], float, "fstar.value") if "value" in fst else None

    out = _typed(raw.get("output", {}).get("dir", "results"), str, "output.dir")
    return ExperimentConfig(algorithm, preset, seeds, server, objective, split, dp, arms,
                            resolution, value, out)


def _objective_ok(obj: dict) -> bool:
    scale = obj.get("perturb_scale", 1.0)
    if isinstance(scale, (int, float)) and scale < 0:
        raise ConfigError("must be >= 0", "objective.perturb_scale")
    nscale = obj.get("noise_scale", 0.1)
    if isinstance(nscale, (int, float)) and nscale < 0:
        raise ConfigError("must be >= 0", "objective.noise_scale")
    for key in ("rho1", "rho2"):
        v = obj.get(key, 0.5)
        if isinstance(v, (int, float)) and not 0 < v < 1:
            raise ConfigError(f"{key} must lie in (0,1)", f"objective.{key}")
    res = obj.get("normalize_resolution", 100_000)
    if isinstance(res, int) and res < 2:
        raise ConfigError("must be >= 2", "objective.normalize_resolution")
    return True


_LINE_RE = re.compile(r"line (\d+)")


def parse_text(text: str, path="<config>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LINE_RE.search(str(exc))
        raise ConfigParseError(path, str(exc), int(m.group(1)) if m else None) from None


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(path, f"cannot read config: {exc.strerror}") from None
    return parse_text(text, path)


def load_config(path) -> ExperimentConfig:
    return from_dict(load_raw(path))
