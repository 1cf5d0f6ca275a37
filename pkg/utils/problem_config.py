"""
Strict parsing of JSON problem configurations

Every block is a dataclass with an explicit key set. Unknown keys, missing
required keys and wrong value types raise ConfigError naming the dotted
field path (e.g. optimizer.grape.step).
"""
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from loguru import logger

from utils.errors import ConfigError

StateValue = Union[str, List[Union[float, List[float]]]]

SYSTEM_KINDS = ("rwa_qubit", "lab_qubit", "nv")
PULSE_INITS = ("nominal", "zeros", "constant", "random")
TERMINAL_KINDS = ("state", "gate", "fisher")
OPTIMIZER_METHODS = ("grape", "crab", "dcrab")
SEQUENCE_KINDS = ("ramsey", "echo", "cpmg", "xy4", "xy8", "xy16")
SIGNAL_KINDS = ("dc", "ac")


def _check_choice(value: str, choices, path: str):
    if value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}, got {value!r}", field=path)


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass
class NucleusConfig:
    spin: float
    n_axial: float
    n_tran: float
    gamma_n: float = 0.0
    quadrupole: float = 0.0


@dataclass
class SystemConfig:
    kind: str
    delta: float = 0.0
    omega: float = 0.0
    phi: float = 0.0
    omega_q: Optional[float] = None
    d: Optional[float] = None
    e: float = 0.0
    b_field: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    e_field: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    nuclei: List[NucleusConfig] = field(default_factory=list)
    gamma_nv: Optional[float] = None
    delta_par: Optional[float] = None
    delta_perp: Optional[float] = None

    def validate(self, path: str):
        _check_choice(self.kind, SYSTEM_KINDS, f"{path}.kind")
        if self.kind == "lab_qubit" and self.omega_q is None:
            raise ConfigError("lab_qubit needs omega_q", field=f"{path}.omega_q")
        for name in ("b_field", "e_field"):
            if len(getattr(self, name)) != 3:
                raise ConfigError("needs exactly 3 components", field=f"{path}.{name}")


@dataclass
class PulseConfig:
    t_final: float
    n_slices: int
    init: str = "nominal"
    values: Optional[List[float]] = None
    scale: float = 1.0

    def validate(self, path: str):
        _check_choice(self.init, PULSE_INITS, f"{path}.init")
        if self.t_final <= 0:
            raise ConfigError("must be positive", field=f"{path}.t_final")
        if self.n_slices < 1:
            raise ConfigError("must be at least 1", field=f"{path}.n_slices")
        if self.init == "constant" and self.values is None:
            raise ConfigError("constant init needs values", field=f"{path}.values")


@dataclass
class TerminalConfig:
    kind: str
    target: Optional[StateValue] = None
    psi0: Optional[StateValue] = None
    phase_sensitive: bool = False
    gate: Optional[str] = None
    angle: Optional[float] = None
    axis: str = "x"
    theta0: float = 0.0
    n_measurements: int = 1

    def validate(self, path: str):
        _check_choice(self.kind, TERMINAL_KINDS, f"{path}.kind")
        if self.kind == "state" and (self.psi0 is None or self.target is None):
            raise ConfigError("state terminal needs psi0 and target", field=path)
        if self.kind == "gate" and self.gate is None:
            raise ConfigError("gate terminal needs gate (hadamard or rotation)", field=f"{path}.gate")
        if self.kind == "gate":
            _check_choice(self.gate, ("hadamard", "rotation"), f"{path}.gate")
            if self.gate == "rotation" and self.angle is None:
                raise ConfigError("rotation gate needs angle", field=f"{path}.angle")
        if self.kind == "fisher" and self.psi0 is None:
            raise ConfigError("fisher terminal needs psi0", field=f"{path}.psi0")


@dataclass
class RunningConfig:
    kind: str
    weight: float = 1.0
    p_lim: Optional[float] = None

    def validate(self, path: str):
        _check_choice(self.kind, ("power", "bandwidth"), f"{path}.kind")


@dataclass
class EnsembleConfig:
    kind: str
    offsets: List[float]
    weights: Optional[List[float]] = None

    def validate(self, path: str):
        _check_choice(self.kind, ("detuning", "amplitude"), f"{path}.kind")
        if not self.offsets:
            raise ConfigError("ensemble needs at least one member", field=f"{path}.offsets")
        if self.weights is not None and len(self.weights) != len(self.offsets):
            raise ConfigError("one weight per offset is required", field=f"{path}.weights")


@dataclass
class CostConfig:
    terminal: TerminalConfig
    running: List[RunningConfig] = field(default_factory=list)
    ensemble: Optional[EnsembleConfig] = None


@dataclass
class MappingConfig:
    mode: str
    u_max: Optional[float] = None
    shape: Optional[str] = None

    def validate(self, path: str):
        _check_choice(self.mode, ("clip", "sin", "shape"), f"{path}.mode")
        if self.mode == "shape":
            _check_choice(self.shape, ("sine",), f"{path}.shape")
        elif self.u_max is None or self.u_max <= 0:
            raise ConfigError("needs u_max > 0", field=f"{path}.u_max")


@dataclass
class GrapeConfig:
    max_iters: int = 200
    step: float = 1.0
    tol_cost: float = 1e-10
    tol_grad: float = 1e-9
    update: str = "descent"

    def validate(self, path: str):
        _check_choice(self.update, ("descent", "lbfgs"), f"{path}.update")


@dataclass
class CrabConfig:
    n_be: int = 5
    max_evals: int = 2000
    omega_max: Optional[float] = None
    amplitude_scale: float = 1.0
    initial_step: float = 0.1
    fatol: float = 1e-10


@dataclass
class DcrabConfig:
    n_si: int = 5
    n_be: int = 5
    max_evals: int = 2000
    omega_max: Optional[float] = None
    amplitude_scale: float = 1.0
    initial_step: float = 0.1
    fatol: float = 1e-10


@dataclass
class OptimizerConfig:
    method: str
    grape: Optional[GrapeConfig] = None
    crab: Optional[CrabConfig] = None
    dcrab: Optional[DcrabConfig] = None
    mapping: Optional[MappingConfig] = None

    def validate(self, path: str):
        _check_choice(self.method, OPTIMIZER_METHODS, f"{path}.method")


@dataclass
class SequenceConfig:
    kind: str
    tau: Optional[float] = None
    n_pulses: int = 1
    n_blocks: int = 1

    def validate(self, path: str):
        _check_choice(self.kind, SEQUENCE_KINDS, f"{path}.kind")
        if self.tau is None or self.tau <= 0:
            raise ConfigError("needs tau > 0 (free evolution or pulse spacing)", field=f"{path}.tau")


@dataclass
class SignalConfig:
    kind: str
    amplitude: float
    omega: float = 0.0
    phase: float = 0.0

    def validate(self, path: str):
        _check_choice(self.kind, SIGNAL_KINDS, f"{path}.kind")


@dataclass
class GridConfig:
    start: float
    stop: float
    num: int

    def validate(self, path: str):
        if self.num < 2 or self.stop <= self.start:
            raise ConfigError("needs num >= 2 and stop > start", field=path)


@dataclass
class SweepConfig:
    kind: str
    taus: GridConfig

    def validate(self, path: str):
        _check_choice(self.kind, ("ramsey", "echo"), f"{path}.kind")
        if self.taus.start <= 0:
            raise ConfigError("tau grid must start above zero", field=f"{path}.taus.start")


@dataclass
class ReadoutConfig:
    contrast: float = 1.0
    shots: int = 10000
    t2_star: Optional[float] = None
    t2: Optional[float] = None
    exponent: float = 1.0

    def validate(self, path: str):
        if not 0 < self.contrast <= 1:
            raise ConfigError("must lie in (0, 1]", field=f"{path}.contrast")
        if self.shots < 1:
            raise ConfigError("must be at least 1", field=f"{path}.shots")


@dataclass
class SensingConfig:
    signal: SignalConfig
    sequence: Optional[SequenceConfig] = None
    sweep: Optional[SweepConfig] = None
    filter: Optional[GridConfig] = None
    readout: Optional[ReadoutConfig] = None
    gamma: Optional[float] = None


@dataclass
class QslConfig:
    psi0: StateValue
    psit: StateValue
    from_pulses: bool = False


@dataclass
class LimitsConfig:
    qsl: Optional[QslConfig] = None
    controllability: bool = True


@dataclass
class ProblemConfig:
    system: SystemConfig
    seed: Optional[int] = None
    psi0: Optional[StateValue] = None
    pulse: Optional[PulseConfig] = None
    cost: Optional[CostConfig] = None
    optimizer: Optional[OptimizerConfig] = None
    sensing: Optional[SensingConfig] = None
    limits: Optional[LimitsConfig] = None

    def validate(self, path: str):
        if self.optimizer is not None and self.sensing is not None:
            raise ConfigError("optimizer and sensing blocks are mutually exclusive", field="sensing")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _parse_value(tp, value, path: str):
    origin = get_origin(tp)

    if tp is Any:
        return value

    if origin is Union:
        args = get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("must not be null", field=path)
        errors = []
        for arm in args:
            if arm is type(None):
                continue
            try:
                return _parse_value(arm, value, path)
            except ConfigError as exc:
                errors.append(exc)
        # a single non-null arm: surface its own diagnostic
        if len(errors) == 1:
            raise errors[0]
        raise ConfigError(f"has unsupported value {value!r}", field=path)

    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"must be a list, got {type(value).__name__}", field=path)
        (item_type,) = get_args(tp)
        return [_parse_value(item_type, item, f"{path}[{i}]") for i, item in enumerate(value)]

    if dataclasses.is_dataclass(tp):
        return _parse_block(tp, value, path)

    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"must be true or false, got {value!r}", field=path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"must be an integer, got {value!r}", field=path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"must be a number, got {value!r}", field=path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"must be a string, got {value!r}", field=path)
        return value

    raise ConfigError(f"unsupported field type {_type_name(tp)}", field=path)


def _parse_block(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"must be an object, got {type(data).__name__}", field=path or "<root>")

    hints = get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    prefix = f"{path}." if path else ""

    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key (allowed: {', '.join(sorted(fields))})", field=f"{prefix}{unknown[0]}")

    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError("required key is missing", field=f"{prefix}{name}")
            continue
        kwargs[name] = _parse_value(hints[name], data[name], f"{prefix}{name}")

    block = cls(**kwargs)
    if hasattr(block, "validate"):
        block.validate(path)
    return block


def parse_problem_config(data: Dict[str, Any], seed: Optional[int] = None) -> ProblemConfig:
    """Parse a decoded JSON document into a ProblemConfig

    Args:
        data: Decoded JSON object
        seed: Optional override of the config seed (the --seed flag)

    Returns:
        ProblemConfig

    Raises:
        ConfigError: on unknown keys, missing keys or wrong value types
    """
    config = _parse_block(ProblemConfig, data, "")
    if seed is not None:
        config.seed = seed
    return config


def load_problem_config(path: str, seed: Optional[int] = None) -> ProblemConfig:
    """Read and strictly parse a JSON problem configuration file"""
    if not os.path.exists(path):
        raise ConfigError(f"Configuration file not found: {path}")
    with open(path, "r") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    config = parse_problem_config(data, seed)
    logger.info(f"✅ Loaded problem configuration from {path}")
    return config


def config_hash(echo: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of an echoed configuration"""
    canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def load_presets(presets_file: str) -> Dict[str, Any]:
    """Load the bundled problem presets

    Args:
        presets_file: Path to the presets JSON, relative paths resolved from the project root

    Returns:
        dict: {"description", "version", "presets": {...}}
    """
    path = presets_file
    if not os.path.isabs(path):
        project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        path = os.path.join(project_root, presets_file)
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"Presets file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in presets file at line {exc.lineno}: {exc.msg}") from exc


def get_preset(name: str, presets_file: str) -> Dict[str, Any]:
    """Return one preset entry: {"description", "command", "config"}"""
    if not name or not isinstance(name, str):
        raise ValueError("Preset name must be a non-empty string")
    presets = load_presets(presets_file).get("presets", {})
    if name not in presets:
        raise ConfigError(f"Preset '{name}' not found. Available presets: {', '.join(sorted(presets))}")
    return presets[name]
