"""JSON run configuration with kebab-case keys.

Every section and key is optional; omitted values take the library
defaults. Unknown keys are rejected by schema validation.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import jsonschema

from .errors import ConfigError
from .evaluation import DEFAULT_D_WEIGHT, StudySpec
from .graph import GraphConfig
from .measurements import NoiseSpec
from .simulator import ProfileSpec, TruthSpec
from .solver import SolverConfig

SCHEMA_VERSION = 1


def load_schema(name):
    """Parsed JSON schema shipped with the package (``config`` or ``study-summary``)."""
    text = resources.files("magfg.schemas").joinpath(f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _kebab(name):
    return name.replace("_", "-")


def _section(obj, skip=()):
    return {_kebab(f.name): _plain(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip}


def _plain(v):
    if isinstance(v, tuple):
        return [float(x) if isinstance(x, float) else x for x in v]
    return v


def _build(cls, d, base=None):
    kw = {k.replace("-", "_"): (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    try:
        return replace(base, **kw) if base is not None else cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    field_magnitude: float = 50000.0
    field_q: float = 0.0
    truth: TruthSpec = field(default_factory=TruthSpec)
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    d_weight: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    runs: int = 20
    magnitudes: tuple = (0.0, 500.0, 1000.0, 2500.0, 5000.0)
    field_qs: tuple = (0.0,)
    estimators: tuple = ("factor-graph", "factor-graph-fixed-field", "twostep", "tolles-lawson")
    workers: int = 1
    gyro_rates: bool = False
    decimate: int = 1

    @classmethod
    def from_dict(cls, d):
        """Validate against the shipped schema and fill in defaults."""
        try:
            jsonschema.validate(d, load_schema("config"))
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        cfg = cls()
        cfg.seed = d.get("seed", cfg.seed)
        cfg.noise = _build(NoiseSpec, d.get("noise", {}), cfg.noise)
        fld = d.get("field", {})
        cfg.field_magnitude = float(fld.get("magnitude", cfg.field_magnitude))
        cfg.field_q = float(fld.get("q", cfg.field_q))
        cfg.truth = _build(TruthSpec, d.get("truth", {}), cfg.truth)
        cfg.truth = replace(cfg.truth, field_magnitude=cfg.field_magnitude)
        cfg.profile = _build(ProfileSpec, d.get("profile", {}), cfg.profile)
        cfg.d_weight = d.get("graph", {}).get("d-weight", cfg.d_weight)
        cfg.solver = _build(SolverConfig, d.get("solver", {}), cfg.solver)
        st = d.get("study", {})
        cfg.runs = st.get("runs", cfg.runs)
        cfg.magnitudes = tuple(float(m) for m in st.get("magnitudes", cfg.magnitudes))
        cfg.field_qs = tuple(float(q) for q in st.get("field-qs", cfg.field_qs))
        cfg.estimators = tuple(st.get("estimators", cfg.estimators))
        cfg.workers = st.get("workers", cfg.workers)
        ing = d.get("ingest", {})
        cfg.gyro_rates = ing.get("gyro-rates", cfg.gyro_rates)
        cfg.decimate = ing.get("decimate", cfg.decimate)
        return cfg

    def to_dict(self):
        """Fully resolved configuration in file form."""
        return {
            "schema-version": SCHEMA_VERSION,
            "seed": self.seed,
            "noise": _section(self.noise, skip=("field_q",)),
            "field": {"magnitude": self.field_magnitude, "q": self.field_q},
            "truth": _section(self.truth, skip=("field_magnitude",)),
            "profile": _section(self.profile),
            "graph": {"d-weight": self.d_weight},
            "solver": _section(self.solver),
            "study": {
                "runs": self.runs,
                "magnitudes": list(self.magnitudes),
                "field-qs": list(self.field_qs),
                "estimators": list(self.estimators),
                "workers": self.workers,
            },
            "ingest": {"gyro-rates": self.gyro_rates, "decimate": self.decimate},
        }

    def config_hash(self):
        """SHA-256 of the canonical JSON of the resolved configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def sim_noise(self):
        return replace(self.noise, field_q=self.field_q)

    def graph_config(self, q=None):
        q = self.field_q if q is None else q
        w = self.d_weight
        if w is None:
            w = q if q > 0 else DEFAULT_D_WEIGHT
        return GraphConfig(field_q=w)

    def study_spec(self, zero_noise=False):
        try:
            return StudySpec(
                runs=self.runs, magnitudes=self.magnitudes, field_qs=self.field_qs,
                estimators=self.estimators, base_seed=self.seed, workers=self.workers,
                zero_noise=zero_noise, d_weight=self.d_weight, noise=self.noise,
                profile=self.profile, truth=self.truth, solver=self.solver,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path=None) -> RunConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(data)
