"""Run configuration: YAML in, validated dataclasses out, exact round trip.

A configuration names a potential in one of three ways:

``family: bumps``
    explicit bump list and couplings;
``family: tuned``
    a bump layout tuned by :mod:`tuner` to a requested class;
``fixture: <path>``
    a YAML file holding ``dimension`` and a ``bumps`` potential, as written by
    the ``tune`` subcommand.

Every section rejects unknown keys, and every numeric field is checked
against the preconditions of the module that will consume it before any
computation starts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .discretization import Bump, RadialProblem
from .errors import ValidationError
from .ladder import admissible_classes

SCHEMA_VERSION = "1.0"


def _check_keys(section: str, data, allowed) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"section {section!r} must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key(s) in {section!r}: {', '.join(map(str, unknown))}")
    return dict(data)


def _num(section: str, key: str, value, kind=float, positive=False, allow_none=False):
    if value is None:
        if allow_none:
            return None
        raise ValidationError(f"{section}.{key} is required")
    if isinstance(value, bool):
        raise ValidationError(f"{section}.{key} must be numeric")
    try:
        # YAML 1.1 reads '1e-8' as a string; accept it as a number
        if kind is int and isinstance(value, int):
            out = value
        else:
            out = kind(float(value)) if kind is int else kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{section}.{key} must be numeric, got {value!r}") from None
    if kind is int and not isinstance(value, int) and float(value) != out:
        raise ValidationError(f"{section}.{key} must be an integer")
    if isinstance(out, float) and not math.isfinite(out):
        raise ValidationError(f"{section}.{key} must be finite")
    if positive and not out > 0:
        raise ValidationError(f"{section}.{key} must be positive")
    return out


@dataclass(frozen=True)
class BumpSpec:
    kind: str = "poly"
    center: float = 1.0
    width: float = 0.8

    @classmethod
    def from_dict(cls, data, where="potential.bumps") -> "BumpSpec":
        data = _check_keys(where, data, [f.name for f in fields(cls)])
        out = cls(
            kind=str(data.get("kind", "poly")),
            center=_num(where, "center", data.get("center", 1.0)),
            width=_num(where, "width", data.get("width", 0.8), positive=True),
        )
        out.build()
        return out

    def build(self) -> Bump:
        return Bump(self.kind, self.center, self.width)


@dataclass(frozen=True)
class PotentialSpec:
    """Potential source; exactly one of the three forms is populated."""

    family: str = "tuned"
    classification: str | None = "Regular"
    bumps: tuple = ()
    alpha: tuple = ()
    channels: tuple | None = None
    fixture: str | None = None

    KEYS = ("family", "classification", "bumps", "alpha", "channels", "fixture")

    @classmethod
    def from_dict(cls, data) -> "PotentialSpec":
        data = _check_keys("potential", data, cls.KEYS)
        if data.get("fixture") is not None:
            extra = set(data) - {"fixture", "family"}
            if extra:
                raise ValidationError("a fixture potential takes no other keys")
            return cls(family="fixture", classification=None, fixture=str(data["fixture"]))
        family = str(data.get("family", "tuned"))
        channels = data.get("channels")
        if channels is not None:
            if not isinstance(channels, (list, tuple)):
                raise ValidationError("potential.channels must be a list")
            channels = tuple(_num("potential", "channels", c, int) for c in channels)
        if family == "tuned":
            if data.get("bumps") or data.get("alpha"):
                raise ValidationError("a tuned potential takes no bumps or alpha")
            cls_name = str(data.get("classification", "Regular"))
            return cls(family="tuned", classification=cls_name, channels=channels)
        if family == "bumps":
            raw = data.get("bumps") or []
            if not isinstance(raw, (list, tuple)) or not raw:
                raise ValidationError("potential.bumps must be a non-empty list")
            bumps = tuple(BumpSpec.from_dict(b) for b in raw)
            alpha = data.get("alpha") or []
            if not isinstance(alpha, (list, tuple)):
                raise ValidationError("potential.alpha must be a list")
            alpha = tuple(_num("potential", "alpha", a) for a in alpha)
            if len(alpha) != len(bumps):
                raise ValidationError("potential.alpha needs one coupling per bump")
            if data.get("classification") is not None:
                raise ValidationError("classification is only meaningful for tuned potentials")
            return cls(family="bumps", classification=None, bumps=bumps, alpha=alpha, channels=channels)
        raise ValidationError(f"unknown potential family {family!r}")

    def to_dict(self) -> dict:
        if self.family == "fixture":
            return {"fixture": self.fixture}
        out = {"family": self.family}
        if self.family == "tuned":
            out["classification"] = self.classification
        else:
            out["bumps"] = [asdict(b) for b in self.bumps]
            out["alpha"] = list(self.alpha)
        if self.channels is not None:
            out["channels"] = list(self.channels)
        return out


@dataclass(frozen=True)
class GridSpec:
    N: int = 160
    R: float | None = None
    scheme: str = "gauss"

    @classmethod
    def from_dict(cls, data) -> "GridSpec":
        data = _check_keys("grid", data, [f.name for f in fields(cls)])
        N = _num("grid", "N", data.get("N", 160), int)
        if not 8 <= N <= 2000:
            raise ValidationError("grid.N must lie in [8, 2000]")
        R = _num("grid", "R", data.get("R"), positive=True, allow_none=True)
        scheme = str(data.get("scheme", "gauss"))
        if scheme not in ("gauss", "graded"):
            raise ValidationError(f"unknown grid scheme {scheme!r}")
        return cls(N, R, scheme)


@dataclass(frozen=True)
class MuSweep:
    angle: float = math.pi / 8
    min: float = 1e-4
    max: float = 1e-1
    count: int = 40

    @classmethod
    def from_dict(cls, data) -> "MuSweep":
        data = _check_keys("mu_sweep", data, [f.name for f in fields(cls)])
        out = cls(
            _num("mu_sweep", "angle", data.get("angle", math.pi / 8)),
            _num("mu_sweep", "min", data.get("min", 1e-4), positive=True),
            _num("mu_sweep", "max", data.get("max", 1e-1), positive=True),
            _num("mu_sweep", "count", data.get("count", 40), int),
        )
        if not 0 < out.angle < math.pi / 2:
            raise ValidationError("mu_sweep.angle must lie in (0, pi/2)")
        if not out.min < out.max:
            raise ValidationError("mu_sweep.min must be below mu_sweep.max")
        if out.count < 4:
            raise ValidationError("mu_sweep.count must be at least 4")
        return out


@dataclass(frozen=True)
class TSweep:
    """Time window; ``None`` bounds select the class default."""

    min: float | None = None
    max: float | None = None
    count: int = 40

    @classmethod
    def from_dict(cls, data) -> "TSweep":
        data = _check_keys("t_sweep", data, [f.name for f in fields(cls)])
        out = cls(
            _num("t_sweep", "min", data.get("min"), positive=True, allow_none=True),
            _num("t_sweep", "max", data.get("max"), positive=True, allow_none=True),
            _num("t_sweep", "count", data.get("count", 40), int),
        )
        if (out.min is None) != (out.max is None):
            raise ValidationError("t_sweep.min and t_sweep.max are set together")
        if out.min is not None and not 1 < out.min < out.max:
            raise ValidationError("t_sweep needs 1 < min < max")
        if out.count < 4:
            raise ValidationError("t_sweep.count must be at least 4")
        return out


@dataclass(frozen=True)
class TestFunctionSpec:
    __test__ = False

    width: float = 1.0
    center: float = 0.0
    channel: int | None = None

    @classmethod
    def from_dict(cls, data) -> "TestFunctionSpec":
        data = _check_keys("test_function", data, [f.name for f in fields(cls)])
        out = cls(
            _num("test_function", "width", data.get("width", 1.0), positive=True),
            _num("test_function", "center", data.get("center", 0.0)),
            _num("test_function", "channel", data.get("channel"), int, allow_none=True),
        )
        if out.center < 0:
            raise ValidationError("test_function.center must be non-negative")
        if out.channel is not None and out.channel < 0:
            raise ValidationError("test_function.channel must be non-negative")
        return out


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    cache: str | None = ".threshold-cache"

    @classmethod
    def from_dict(cls, data) -> "OutputSpec":
        data = _check_keys("output", data, [f.name for f in fields(cls)])
        cache = data.get("cache", ".threshold-cache")
        return cls(str(data.get("dir", "out")), None if cache is None else str(cache))


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    Attributes
    ----------
    dimension : int
    potential : PotentialSpec
    grid : GridSpec
    tau : float
        Ladder threshold.
    mu_sweep : MuSweep
    t_sweep : TSweep
    test_function : TestFunctionSpec
    cutoff : str
        Low-energy cutoff shape, "smooth" or "poly".
    output : OutputSpec
    seed : int
        Seed for randomized checks.
    """

    dimension: int = 5
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    tau: float = 1e-8
    mu_sweep: MuSweep = field(default_factory=MuSweep)
    t_sweep: TSweep = field(default_factory=TSweep)
    test_function: TestFunctionSpec = field(default_factory=TestFunctionSpec)
    cutoff: str = "smooth"
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0

    SECTIONS = ("dimension", "potential", "grid", "tau", "mu_sweep", "t_sweep", "test_function",
                "cutoff", "output", "seed")

    @classmethod
    def from_dict(cls, data, base_dir: str | Path | None = None) -> "RunConfig":
        data = _check_keys("config", data, cls.SECTIONS)
        d = _num("config", "dimension", data.get("dimension", 5), int)
        if d < 5:
            raise ValidationError("dimension must be at least 5")
        pot = PotentialSpec.from_dict(data.get("potential"))
        if pot.family == "tuned" and pot.classification not in admissible_classes(d):
            raise ValidationError(f"class {pot.classification!r} is not admissible in d={d}")
        if pot.family == "fixture" and base_dir is not None and not Path(pot.fixture).is_absolute():
            pot = PotentialSpec(family="fixture", classification=None,
                                fixture=str(Path(base_dir) / pot.fixture))
        tau = _num("config", "tau", data.get("tau", 1e-8), positive=True)
        if tau >= 1:
            raise ValidationError("tau must be below 1")
        cutoff = str(data.get("cutoff", "smooth"))
        if cutoff not in ("smooth", "poly"):
            raise ValidationError(f"unknown cutoff {cutoff!r}")
        seed = _num("config", "seed", data.get("seed", 0), int)
        if not 0 <= seed < 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        return cls(d, pot, GridSpec.from_dict(data.get("grid")), tau, MuSweep.from_dict(data.get("mu_sweep")),
                   TSweep.from_dict(data.get("t_sweep")), TestFunctionSpec.from_dict(data.get("test_function")),
                   cutoff, OutputSpec.from_dict(data.get("output")), seed)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "potential": self.potential.to_dict(),
            "grid": asdict(self.grid),
            "tau": self.tau,
            "mu_sweep": asdict(self.mu_sweep),
            "t_sweep": asdict(self.t_sweep),
            "test_function": asdict(self.test_function),
            "cutoff": self.cutoff,
            "output": asdict(self.output),
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str, base_dir: str | Path | None = None) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ValidationError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(data or {}, base_dir)

    def with_overrides(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return RunConfig.loads(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


FIXTURE_DIR = Path(__file__).parent / "fixtures"


def shipped_fixture(d: int, classification: str) -> Path:
    """Path of the packaged fixture for (dimension, class)."""
    path = FIXTURE_DIR / f"d{d}_{classification.lower()}.yaml"
    if not path.exists():
        raise ValidationError(f"no shipped fixture for d={d}, class {classification}")
    return path


FIXTURE_KEYS = ("dimension", "bumps", "alpha", "channels", "classification", "grid")


def load_fixture(path: str | Path) -> dict:
    """Read a fixture file and validate it into problem pieces.

    Returns
    -------
    dict
        ``problem`` (RadialProblem), ``classification`` (declared class or
        None) and ``grid`` (GridSpec or None).
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read fixture {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"fixture is not valid YAML: {exc}") from None
    data = _check_keys("fixture", data, FIXTURE_KEYS)
    d = _num("fixture", "dimension", data.get("dimension"), int)
    spec = PotentialSpec.from_dict({"family": "bumps", "bumps": data.get("bumps"), "alpha": data.get("alpha"),
                                    "channels": data.get("channels")})
    channels = spec.channels or ((0, 1) if d in (5, 6) else (0,))
    problem = RadialProblem(d, tuple(b.build() for b in spec.bumps), spec.alpha, channels=channels)
    grid = GridSpec.from_dict(data["grid"]) if data.get("grid") is not None else None
    declared = data.get("classification")
    if declared is not None and declared not in admissible_classes(d):
        raise ValidationError(f"fixture class {declared!r} is not admissible in d={d}")
    return {"problem": problem, "classification": declared, "grid": grid}


def grid_for(problem: RadialProblem, spec: GridSpec):
    """Grid for ``problem`` from a GridSpec; R defaults to the potential support."""
    from .discretization import build_grid

    R = spec.R or problem.support_radius
    if R < problem.support_radius:
        raise ValidationError(f"grid.R = {R} does not cover the potential support {problem.support_radius}")
    return build_grid(spec.N, R, spec.scheme, problem.dimension, problem.breakpoints)


def fixture_dict(problem: RadialProblem, classification: str | None = None, grid: GridSpec | None = None) -> dict:
    out = {
        "dimension": int(problem.dimension),
        "bumps": [b.to_dict() for b in problem.bumps],
        "alpha": [float(a) for a in problem.alpha],
        "channels": list(problem.channels),
    }
    if classification is not None:
        out["classification"] = classification
    if grid is not None:
        out["grid"] = asdict(grid)
    return out


def provenance_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj`` (first 16 hex digits)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


__all__ = [
    "SCHEMA_VERSION",
    "BumpSpec",
    "PotentialSpec",
    "GridSpec",
    "MuSweep",
    "TSweep",
    "TestFunctionSpec",
    "OutputSpec",
    "RunConfig",
    "load_config",
    "load_fixture",
    "shipped_fixture",
    "FIXTURE_DIR",
    "fixture_dict",
    "grid_for",
    "provenance_hash",
]
