"""Run manifest: one YAML file naming inputs, stage settings and the seed."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .decomposition import WindowSpec
from .econometrics.regression import RegressionSpec
from .errors import ConfigError
from .model import CapabilityDist, ModelParams
from .simulate import SimPanelConfig
from .spillovers import SuperstarRule
from .tfp import ProxySpec

INPUT_KEYS = ("panel", "io_table", "tariffs", "deflators", "regions", "province_island")
STAGES = ("simulate", "deflate", "impute", "classify", "tfp", "spillovers", "instruments", "regress", "decompose")

SCHEMA_DOC = """\
seed: int                      # required when simulating; the only entropy source
output_dir: path               # relative to the working directory (override with --out)
inputs:                        # omitted inputs are produced by the simulate stage
  panel / io_table / tariffs / deflators / regions / province_island: path
simulation:
  config: SimPanelConfig fields
  model: ModelParams fields (capability_dist: {kind, ...})
  blank_capital_year: int      # capital left missing in this year of the emitted panel
  base_year: int               # deflator base year (index 100)
stages:
  deflate: bool
  impute: {gap_average: {year, variables}, capital_regression: {target_year, by_sector}}
  regress: bool
  decompose: bool
superstar_rule: SuperstarRule fields
proxy_spec: ProxySpec fields
instruments: {base_year: int, skill: unskilled|all}
ipw: {controls: [column, ...]}
regressions: [RegressionSpec fields, ...]
windows: [{t1, t2, continuity_required}, ...]
"""


def _build(cls, data, prefix: str):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{prefix}: unknown field {unknown[0]!r}", f"{prefix}.{unknown[0]}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}.{exc.field}: {exc}", f"{prefix}.{exc.field}") from None
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}", prefix) from None


@dataclass
class SimulationSection:
    config: SimPanelConfig
    model: ModelParams
    blank_capital_year: Optional[int] = None
    base_year: int = 2000


@dataclass
class RunManifest:
    path: Optional[Path]
    seed: Optional[int]
    output_dir: Path
    inputs: dict
    simulation: Optional[SimulationSection]
    stages: dict
    superstar_rule: SuperstarRule
    proxy_spec: ProxySpec
    instruments: dict
    ipw: Optional[dict]
    regressions: list
    windows: list
    raw: dict = field(default_factory=dict)

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path else Path.cwd()

    def input_path(self, key: str) -> Optional[Path]:
        value = self.inputs.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def needs_simulation(self) -> bool:
        return self.inputs.get("panel") is None

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "RunManifest":
        m = dataclasses.replace(self)
        if seed is not None:
            m.seed = seed
            if m.simulation is not None:
                m.simulation = dataclasses.replace(
                    m.simulation, config=dataclasses.replace(m.simulation.config, seed=seed))
        if output_dir is not None:
            m.output_dir = Path(output_dir)
        return m

    def validate(self) -> None:
        """Check that referenced inputs exist and that a simulation has its seed."""
        for key in INPUT_KEYS:
            p = self.input_path(key)
            if p is not None and not p.exists():
                raise ConfigError(f"inputs.{key}: {p} does not exist", f"inputs.{key}")
        if self.needs_simulation:
            if self.simulation is None:
                raise ConfigError("inputs.panel missing and no simulation section", "inputs.panel")
            if self.seed is None:
                raise ConfigError("seed is required when simulation is requested", "seed")


def parse_manifest(data: dict, path: Optional[Path] = None) -> RunManifest:
    if not isinstance(data, dict):
        raise ConfigError("manifest must be a mapping", "")
    known = {"seed", "output_dir", "inputs", "simulation", "stages", "superstar_rule", "proxy_spec",
             "instruments", "ipw", "regressions", "windows"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown manifest key {unknown[0]!r}", unknown[0])
    seed = data.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer", "seed")
    inputs = dict(data.get("inputs") or {})
    bad = sorted(set(inputs) - set(INPUT_KEYS))
    if bad:
        raise ConfigError(f"unknown input {bad[0]!r}", f"inputs.{bad[0]}")

    simulation = None
    if data.get("simulation") is not None or inputs.get("panel") is None:
        sim = dict(data.get("simulation") or {})
        extra = sorted(set(sim) - {"config", "model", "blank_capital_year", "base_year"})
        if extra:
            raise ConfigError(f"unknown simulation key {extra[0]!r}", f"simulation.{extra[0]}")
        cfg = dict(sim.get("config") or {})
        if seed is not None:
            cfg.setdefault("seed", seed)
        config = _build(SimPanelConfig, cfg, "simulation.config")
        model = dict(sim.get("model") or {})
        if "capability_dist" in model:
            model["capability_dist"] = _build(CapabilityDist, model["capability_dist"],
                                              "simulation.model.capability_dist")
        params = _build(ModelParams, model, "simulation.model")
        simulation = SimulationSection(config, params, sim.get("blank_capital_year"), int(sim.get("base_year", 2000)))

    stages = {"deflate": True, "impute": {}, "regress": True, "decompose": True}
    stages.update(data.get("stages") or {})
    extra = sorted(set(stages) - {"deflate", "impute", "regress", "decompose"})
    if extra:
        raise ConfigError(f"unknown stage toggle {extra[0]!r}", f"stages.{extra[0]}")

    regressions = []
    for i, spec in enumerate(data.get("regressions") or []):
        spec = dict(spec)
        if "name" not in spec:
            spec["name"] = f"spec{i}"
        regressions.append(_build(RegressionSpec, spec, f"regressions[{i}]"))
    windows = [_build(WindowSpec, w, f"windows[{i}]") for i, w in enumerate(data.get("windows") or [])]
    instruments = {"base_year": 2001, "skill": "unskilled"}
    instruments.update(data.get("instruments") or {})
    if instruments["skill"] not in ("unskilled", "all"):
        raise ConfigError("instruments.skill must be unskilled or all", "instruments.skill")
    return RunManifest(
        path=path, seed=seed, output_dir=Path(data.get("output_dir", "out")), inputs=inputs,
        simulation=simulation, stages=stages,
        superstar_rule=_build(SuperstarRule, data.get("superstar_rule"), "superstar_rule"),
        proxy_spec=_build(ProxySpec, data.get("proxy_spec"), "proxy_spec"),
        instruments=instruments, ipw=data.get("ipw"), regressions=regressions, windows=windows, raw=data,
    )


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest {path} does not exist", "manifest")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"manifest is not valid YAML: {exc}", "manifest") from None
    return parse_manifest(data, path.resolve())


def bundled_manifest_path() -> Path:
    return Path(__file__).parent / "data" / "demo_manifest.yaml"
