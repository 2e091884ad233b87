import configparser
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ValidationError
from .maps import PRESETS, Number, PiecewiseLinearMap, custom_map, exact
from .open_system import DEFAULT_MAX_COMPONENTS

_TRUE = ("true", "1", "yes")

Pairs = tuple[tuple[Number, Number], ...]


@dataclass
class DrivingConfig:
    kind: str = "constant"
    probabilities: tuple[Number, ...] = ()
    seed: int | None = None
    alpha: Number | None = None
    arcs: tuple[Number, ...] = ()
    initial_angle: Number = Fraction(0)
    word: tuple[int, ...] = ()
    symbol: int = 0

    def symbols(self) -> list[int]:
        """Every symbol the driving can emit."""
        if self.kind == "iid":
            return list(range(len(self.probabilities)))
        if self.kind == "rotation":
            return list(range(len(self.arcs) + 1))
        if self.kind == "periodic":
            return sorted(set(self.word))
        return [self.symbol]


@dataclass
class MapConfig:
    symbol: int
    preset: str = "custom"
    parameters: dict[str, Number] = field(default_factory=dict)
    branches: tuple[tuple[Number, Number, Number, Number], ...] = ()

    def build(self) -> PiecewiseLinearMap:
        if self.preset == "custom":
            return custom_map(self.branches)
        return PRESETS[self.preset](**self.parameters)


@dataclass
class TransferConfig:
    weight_exponent: Number = Fraction(1)
    grid_cells: int = 0
    burn_in: int = 50
    sandwich_burn_in: int = 60
    tolerance: float = 1e-8
    orbit_length: int = 2000


@dataclass
class HoleConfig:
    kind: str = "none"
    intervals: dict[int, Pairs] = field(default_factory=dict)
    centers: dict[int, Number] = field(default_factory=dict)
    scales: dict[int, Number] = field(default_factory=dict)
    epsilon: Number | None = None
    max_components: int = DEFAULT_MAX_COMPONENTS


@dataclass
class PerturbConfig:
    epsilon: Number = Fraction(1, 1024)
    schedule_steps: int = 10
    k_max: int = 20
    convergence_tolerance: float = 1e-4
    max_grid_cells: int = 2**20
    orbit_length: int = 200
    fibers: int = 200


@dataclass
class EvtConfig:
    observation: str = "neg_distance"
    centers: dict[int, Number] = field(default_factory=dict)
    knots: dict[int, tuple[tuple[float, float], ...]] = field(default_factory=dict)
    t: Number = Fraction(1)
    t_by_symbol: dict[int, Number] = field(default_factory=dict)
    n_values: tuple[int, ...] = tuple(2**k for k in range(7, 15))
    samples: int = 10**5
    hitting_n: int = 10**4
    buffer_factor: int = 8
    block_size: int = 4096
    rate: float | None = None

    @property
    def scaling(self) -> Mapping[int, Number] | Number:
        return dict(self.t_by_symbol) if self.t_by_symbol else self.t


@dataclass
class PressureConfig:
    t_values: tuple[Number, ...] = tuple(Fraction(i, 10) for i in range(11))
    orbit_length: int = 2000
    burn_in: int = 50
    tolerance: float = 1e-6
    max_iterations: int = 40


@dataclass
class RaccimConfig:
    test_set: Pairs = ((Fraction(0), Fraction(1, 4)),)
    depth: int = 4


@dataclass
class DecayConfig:
    f: Pairs = ((Fraction(0), Fraction(1, 3)),)
    h: Pairs = ((Fraction(0), Fraction(1, 3)),)
    centered: bool = True
    max_lag: int = 20
    skip_lags: int = 2
    noise_floor: float = 1e-12


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str = "results"
    orbit_length: int = 10**4


@dataclass
class LogConfig:
    level: str = "INFO"
    file: str | None = "quenched-lab.log"
    console: bool = True


@dataclass
class ExperimentConfig:
    driving: DrivingConfig
    maps: dict[int, MapConfig]
    transfer: TransferConfig = field(default_factory=TransferConfig)
    holes: HoleConfig = field(default_factory=HoleConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    evt: EvtConfig = field(default_factory=EvtConfig)
    pressure: PressureConfig = field(default_factory=PressureConfig)
    raccim: RaccimConfig = field(default_factory=RaccimConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    run: RunConfig = field(default_factory=RunConfig)
    logging: LogConfig = field(default_factory=LogConfig)

    @property
    def driving_seed(self) -> int:
        return self.driving.seed if self.driving.seed is not None else self.run.seed


# ----------------------------------------------------------------------
# Value parsers
# ----------------------------------------------------------------------


def _invalid(key: str, raw: str, what: str) -> ValueError:
    return ValueError(f"Invalid {key} value in config: '{raw}' - must be {what}")


def _int(key: str, raw: str, minimum: int | None = None) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise _invalid(key, raw, "an integer") from None
    if minimum is not None and value < minimum:
        raise _invalid(key, raw, f"an integer >= {minimum}")
    return value


def _float(key: str, raw: str, positive: bool = True) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise _invalid(key, raw, "a number") from None
    if positive and not value > 0:
        raise _invalid(key, raw, "a positive number")
    return value


def _number(key: str, raw: str) -> Number:
    try:
        return exact(raw)
    except ValidationError:
        raise _invalid(key, raw, "a number such as 3, 2/3 or 0.25") from None


def _bool(raw: str) -> bool:
    return raw.strip().lower() in _TRUE


def _list(raw: str) -> list[str]:
    return [item.strip() for item in raw.replace("\n", ",").split(",") if item.strip()]


def _numbers(key: str, raw: str) -> tuple[Number, ...]:
    return tuple(_number(key, item) for item in _list(raw))


def _pairs(key: str, raw: str) -> Pairs:
    out = []
    for item in _list(raw):
        parts = item.split(":")
        if len(parts) != 2:
            raise _invalid(key, raw, "a list of lo:hi pairs")
        out.append((_number(key, parts[0]), _number(key, parts[1])))
    return tuple(out)


def _branches(key: str, raw: str) -> tuple[tuple[Number, Number, Number, Number], ...]:
    out = []
    for item in _list(raw):
        parts = item.split(":")
        if len(parts) != 4:
            raise _invalid(key, raw, "a list of lo:hi:slope:intercept entries")
        lo, hi, slope, intercept = (_number(key, p) for p in parts)
        out.append((lo, hi, slope, intercept))
    return tuple(out)


def _per_symbol(section: configparser.SectionProxy, prefix: str) -> dict[int, str]:
    """Values of keys `prefix.K`, keyed by the integer K."""
    out = {}
    for key, raw in section.items():
        if key.startswith(prefix + "."):
            out[_int(key, key[len(prefix) + 1 :], 0)] = raw
    return out


def _symbol_numbers(section: configparser.SectionProxy, prefix: str) -> dict[int, Number]:
    return {s: _number(f"{prefix}.{s}", raw) for s, raw in _per_symbol(section, prefix).items()}


# ----------------------------------------------------------------------
# Section loaders
# ----------------------------------------------------------------------


def _load_driving(section: configparser.SectionProxy) -> DrivingConfig:
    cfg = DrivingConfig()
    if section.get("kind"):
        cfg.kind = section.get("kind").strip().lower()
        if cfg.kind not in ("iid", "rotation", "periodic", "constant"):
            raise _invalid("kind", cfg.kind, "one of iid, rotation, periodic, constant")
    if section.get("probabilities"):
        cfg.probabilities = _numbers("probabilities", section.get("probabilities"))
    if section.get("seed"):
        cfg.seed = _int("seed", section.get("seed"), 0)
    if section.get("alpha"):
        cfg.alpha = _number("alpha", section.get("alpha"))
    if section.get("arcs"):
        cfg.arcs = _numbers("arcs", section.get("arcs"))
    if section.get("initial_angle"):
        cfg.initial_angle = _number("initial_angle", section.get("initial_angle"))
    if section.get("word"):
        cfg.word = tuple(_int("word", w, 0) for w in _list(section.get("word")))
    if section.get("symbol"):
        cfg.symbol = _int("symbol", section.get("symbol"), 0)

    if cfg.kind == "iid" and not cfg.probabilities:
        raise ValueError("Missing required configuration fields: driving.probabilities")
    if cfg.kind == "rotation" and cfg.alpha is None:
        raise ValueError("Missing required configuration fields: driving.alpha")
    if cfg.kind == "periodic" and not cfg.word:
        raise ValueError("Missing required configuration fields: driving.word")
    return cfg


def _load_map(symbol: int, section: configparser.SectionProxy) -> MapConfig:
    cfg = MapConfig(symbol)
    preset = section.get("preset", "custom").strip().lower()
    if preset != "custom" and preset not in PRESETS:
        raise _invalid("preset", preset, "one of " + ", ".join([*PRESETS, "custom"]))
    cfg.preset = preset
    if preset == "custom":
        if not section.get("branches"):
            raise ValueError(f"Missing required configuration fields: map.{symbol}.branches")
        cfg.branches = _branches("branches", section.get("branches"))
        return cfg
    names = {
        "doubling": (),
        "beta": ("beta",),
        "linear_full": ("k",),
        "three_branch": ("s",),
        "beta_shift": ("beta", "shift"),
    }[preset]
    for name in names:
        if not section.get(name):
            raise ValueError(f"Missing required configuration fields: map.{symbol}.{name}")
        cfg.parameters[name] = _number(name, section.get(name))
    return cfg


def _load_transfer(section: configparser.SectionProxy) -> TransferConfig:
    cfg = TransferConfig()
    if section.get("weight_exponent"):
        cfg.weight_exponent = _number("weight_exponent", section.get("weight_exponent"))
        if cfg.weight_exponent < 0:
            raise _invalid("weight_exponent", section.get("weight_exponent"), ">= 0")
    if section.get("grid_cells"):
        cells = _int("grid_cells", section.get("grid_cells"), 0)
        if cells == 1:
            raise _invalid("grid_cells", section.get("grid_cells"), "0 or at least 2")
        cfg.grid_cells = cells
    if section.get("burn_in"):
        cfg.burn_in = _int("burn_in", section.get("burn_in"), 2)
    if section.get("sandwich_burn_in"):
        cfg.sandwich_burn_in = _int("sandwich_burn_in", section.get("sandwich_burn_in"), 2)
    if section.get("tolerance"):
        cfg.tolerance = _float("tolerance", section.get("tolerance"))
    if section.get("orbit_length"):
        cfg.orbit_length = _int("orbit_length", section.get("orbit_length"), 1)
    return cfg


def _load_holes(section: configparser.SectionProxy) -> HoleConfig:
    cfg = HoleConfig()
    if section.get("kind"):
        cfg.kind = section.get("kind").strip().lower()
        if cfg.kind not in ("none", "fixed", "last_branch", "left", "ball"):
            raise _invalid("kind", cfg.kind, "one of none, fixed, last_branch, left, ball")
    cfg.intervals = {
        s: _pairs(f"interval.{s}", raw) for s, raw in _per_symbol(section, "interval").items()
    }
    cfg.centers = _symbol_numbers(section, "center")
    cfg.scales = _symbol_numbers(section, "scale")
    if section.get("epsilon"):
        cfg.epsilon = _number("epsilon", section.get("epsilon"))
        if not 0 < cfg.epsilon < 1:
            raise _invalid("epsilon", section.get("epsilon"), "in (0, 1)")
    if section.get("max_components"):
        cfg.max_components = _int("max_components", section.get("max_components"), minimum=1)
    if cfg.kind == "fixed" and not cfg.intervals:
        raise ValueError("Missing required configuration fields: holes.interval")
    if cfg.kind == "ball" and not cfg.centers:
        raise ValueError("Missing required configuration fields: holes.center")
    return cfg


def _load_perturb(section: configparser.SectionProxy) -> PerturbConfig:
    cfg = PerturbConfig()
    if section.get("epsilon"):
        cfg.epsilon = _number("epsilon", section.get("epsilon"))
        if not 0 < cfg.epsilon < 1:
            raise _invalid("epsilon", section.get("epsilon"), "in (0, 1)")
    for key in ("schedule_steps", "k_max", "max_grid_cells", "orbit_length", "fibers"):
        if section.get(key):
            setattr(cfg, key, _int(key, section.get(key), 1))
    if section.get("convergence_tolerance"):
        cfg.convergence_tolerance = _float(
            "convergence_tolerance", section.get("convergence_tolerance")
        )
    return cfg


def _load_evt(section: configparser.SectionProxy) -> EvtConfig:
    cfg = EvtConfig()
    if section.get("observation"):
        cfg.observation = section.get("observation").strip().lower()
        if cfg.observation not in ("neg_distance", "neg_log_distance", "custom"):
            raise _invalid(
                "observation", cfg.observation, "one of neg_distance, neg_log_distance, custom"
            )
    cfg.centers = _symbol_numbers(section, "center")
    cfg.knots = {
        s: tuple((float(a), float(b)) for a, b in _pairs(f"knots.{s}", raw))
        for s, raw in _per_symbol(section, "knots").items()
    }
    if section.get("t"):
        cfg.t = _number("t", section.get("t"))
    cfg.t_by_symbol = _symbol_numbers(section, "t")
    if any(v <= 0 for v in [cfg.t, *cfg.t_by_symbol.values()]):
        raise _invalid("t", section.get("t", ""), "positive")
    if section.get("n_values"):
        cfg.n_values = tuple(_int("n_values", v, 1) for v in _list(section.get("n_values")))
    for key in ("samples", "hitting_n", "buffer_factor", "block_size"):
        if section.get(key):
            setattr(cfg, key, _int(key, section.get(key), 1))
    if section.get("rate"):
        cfg.rate = _float("rate", section.get("rate"))
    if cfg.observation == "custom" and not cfg.knots:
        raise ValueError("Missing required configuration fields: evt.knots")
    return cfg


def _load_pressure(section: configparser.SectionProxy) -> PressureConfig:
    cfg = PressureConfig()
    if section.get("t_values"):
        cfg.t_values = _numbers("t_values", section.get("t_values"))
        if any(t < 0 for t in cfg.t_values):
            raise _invalid("t_values", section.get("t_values"), "non-negative")
    for key in ("orbit_length", "burn_in", "max_iterations"):
        if section.get(key):
            setattr(cfg, key, _int(key, section.get(key), 1))
    if section.get("tolerance"):
        cfg.tolerance = _float("tolerance", section.get("tolerance"))
    return cfg


def _load_raccim(section: configparser.SectionProxy) -> RaccimConfig:
    cfg = RaccimConfig()
    if section.get("test_set"):
        cfg.test_set = _pairs("test_set", section.get("test_set"))
    if section.get("depth"):
        cfg.depth = _int("depth", section.get("depth"), 0)
    return cfg


def _load_decay(section: configparser.SectionProxy) -> DecayConfig:
    cfg = DecayConfig()
    if section.get("f"):
        cfg.f = _pairs("f", section.get("f"))
    if section.get("h"):
        cfg.h = _pairs("h", section.get("h"))
    if section.get("centered"):
        cfg.centered = _bool(section.get("centered"))
    if section.get("max_lag"):
        cfg.max_lag = _int("max_lag", section.get("max_lag"), 2)
    if section.get("skip_lags"):
        cfg.skip_lags = _int("skip_lags", section.get("skip_lags"), 0)
    if section.get("noise_floor"):
        cfg.noise_floor = _float("noise_floor", section.get("noise_floor"))
    return cfg


def _load_run(section: configparser.SectionProxy) -> RunConfig:
    cfg = RunConfig()
    if section.get("seed"):
        cfg.seed = _int("seed", section.get("seed"), 0)
    if section.get("threads"):
        cfg.threads = _int("threads", section.get("threads"), 1)
    if section.get("output_dir"):
        cfg.output_dir = section.get("output_dir")
    if section.get("orbit_length"):
        cfg.orbit_length = _int("orbit_length", section.get("orbit_length"), 1)
    return cfg


def _load_logging(section: configparser.SectionProxy) -> LogConfig:
    cfg = LogConfig()
    if section.get("level"):
        cfg.level = section.get("level")
    if "file" in section:
        cfg.file = section.get("file")
    if section.get("console"):
        cfg.console = _bool(section.get("console"))
    return cfg


_LOADERS = {
    "transfer": _load_transfer,
    "holes": _load_holes,
    "perturb": _load_perturb,
    "evt": _load_evt,
    "pressure": _load_pressure,
    "raccim": _load_raccim,
    "decay": _load_decay,
    "run": _load_run,
    "logging": _load_logging,
}


def load_config(config_path: str | None = None, **cli_args) -> ExperimentConfig:
    """
    Load an experiment from an INI file and/or CLI arguments.
    CLI arguments take precedence over the config file.

    Args:
        config_path: Path to the INI configuration file.
        **cli_args: seed, threads, output_dir and debug from the command line.

    Returns:
        ExperimentConfig: The populated configuration object, defaults filled in.

    Raises:
        FileNotFoundError: If config_path is provided but does not exist.
        ValueError: If a value is malformed or required fields are missing.
    """
    parser = configparser.ConfigParser()
    if config_path is not None:
        config_file = Path(config_path)
        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        parser.read(config_file, encoding="utf-8")

    driving = _load_driving(parser["driving"]) if parser.has_section("driving") else DrivingConfig()
    maps = {}
    for name in parser.sections():
        if name.startswith("map."):
            symbol = _int("map section", name[4:], 0)
            maps[symbol] = _load_map(symbol, parser[name])
    sections = {
        key: loader(parser[key] if parser.has_section(key) else parser[parser.default_section])
        for key, loader in _LOADERS.items()
    }

    if cli_args.get("seed") is not None:
        sections["run"].seed = int(cli_args["seed"])
        driving.seed = None
    if cli_args.get("threads") is not None:
        sections["run"].threads = max(1, int(cli_args["threads"]))
    if cli_args.get("output_dir") is not None:
        sections["run"].output_dir = cli_args["output_dir"]
    if cli_args.get("debug"):
        sections["logging"].level = "DEBUG"
        sections["logging"].console = True

    # Validate required fields
    if not maps:
        raise ValueError("Missing required configuration fields: map")
    missing = [f"map.{s}" for s in driving.symbols() if s not in maps]
    if missing:
        raise ValueError(f"Missing required configuration fields: {', '.join(missing)}")

    return ExperimentConfig(driving=driving, maps=maps, **sections)
