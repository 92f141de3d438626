"""Stage graph for batch runs: simulate, load, deflate, impute, classify, tfp, spillovers,
instruments, regress, decompose."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import bartik, decomposition, spillovers, tfp
from .econometrics import add_interactions, ipw_weights, ols, tsls
from .errors import SuperspillError
from .manifest import RunManifest
from .panel import (DeflatorTable, IOTable, MONETARY_COLUMNS, apply_deflators, assign_islands,
                    impute_capital_regression, impute_gap_average, load_panel, load_province_islands,
                    write_panel)
from .simulate import _rng, island_of, simulate_panel

logger = logging.getLogger(__name__)

STAGE_ORDER = ["simulate", "load", "deflate", "impute", "classify", "tfp", "spillovers", "instruments",
               "regress", "decompose"]
PREREQUISITES = {
    "simulate": [],
    "load": ["simulate"],
    "deflate": ["load"],
    "impute": ["deflate"],
    "classify": ["impute"],
    "tfp": ["impute"],
    "spillovers": ["classify"],
    "instruments": ["classify"],
    "regress": ["tfp", "spillovers", "instruments"],
    "decompose": ["tfp", "classify"],
}
VALIDATION_EXIT = 2
STAGE_EXIT_BASE = 10
LOG_NAME = "run_log.json"
FAILED_MARKER = "FAILED"


def stage_closure(targets) -> list:
    """Stages to run, in order, so that every target has its prerequisites."""
    need = set()
    stack = list(targets)
    while stack:
        s = stack.pop()
        if s not in PREREQUISITES:
            raise SuperspillError(f"unknown stage {s!r}")
        if s not in need:
            need.add(s)
            stack.extend(PREREQUISITES[s])
    return [s for s in STAGE_ORDER if s in need]


# -- simulated input bundle ----------------------------------------------------------

def simulation_bundle(section, out_dir: Path) -> dict:
    """Write a nominal-price panel and every lookup table needed by the pipeline.

    Returns a summary (firms, superstar share, entry and exit rates) and the
    paths written.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    config, params = section.config, section.model
    panel, truth = simulate_panel(config, params)
    frame = panel.frame.copy()
    seed = config.seed
    years = sorted(frame["year"].unique())
    first, last = int(years[0]), int(years[-1])
    base_year = section.base_year

    rng = _rng(seed, 11)
    wpi_rows = []
    for s2 in sorted(frame["sector2"].unique()):
        span = range(min(base_year, first), last + 1)
        steps = rng.normal(0.03, 0.02, len(span))
        level = np.exp(np.cumsum(steps))
        level = 100.0 * (level / level[list(span).index(base_year)]) if base_year in span else 100.0 * level
        for y, v in zip(span, level):
            wpi_rows.append((s2, y, 100.0 if y == base_year else float(v)))
    wpi = pd.DataFrame(wpi_rows, columns=["sector2", "year", "wpi"])
    factor = frame.merge(wpi, on=["sector2", "year"], how="left")["wpi"].to_numpy() / 100.0
    for col in MONETARY_COLUMNS:
        frame[col] = frame[col] * factor
    if section.blank_capital_year is not None:
        target = frame["year"] == section.blank_capital_year
        frame.loc[target, "capital"] = np.nan
        # a sprinkle of missing energy values exercises gap-year averaging
        pick = target & (rng.random(len(frame)) < 0.05)
        frame.loc[pick, "energy"] = np.nan

    tariff_rows = []
    for s3 in sorted(frame["sector3"].unique()):
        level = 15.0 + rng.uniform(-3, 3)
        for y in range(first - 1, last + 1):
            tariff_rows.append((s3, y, level))
            level = max(0.0, level - rng.uniform(0.0, 1.0))
    tariffs = pd.DataFrame(tariff_rows, columns=["sector3", "year", "mfn"])

    provinces = sorted(frame["province"].unique())
    region_rows = []
    for p in provinces:
        area = rng.uniform(1000.0, 50000.0)
        road = area * rng.uniform(0.5, 1.5)
        for y in range(first, last + 1):
            observed = y >= 2008 or last < 2008
            region_rows.append((p, y, road if observed else np.nan, area))
            road *= 1.0 + rng.uniform(0.0, 0.03)
    regions = pd.DataFrame(region_rows, columns=["province", "year", "road_km", "area_km2"])
    islands = pd.DataFrame({"province": provinces, "island": [island_of(p) for p in provinces]})

    paths = {
        "panel": out_dir / "panel.csv", "deflators": out_dir / "wpi.csv", "io_table": out_dir / "io.csv",
        "tariffs": out_dir / "tariffs.csv", "regions": out_dir / "regions.csv",
        "province_island": out_dir / "province_island.csv",
    }
    write_panel(frame, paths["panel"])
    wpi.to_csv(paths["deflators"], index=False, lineterminator="\n")
    truth.io.to_frame().to_csv(paths["io_table"], index=False, lineterminator="\n")
    tariffs.to_csv(paths["tariffs"], index=False, lineterminator="\n")
    regions.to_csv(paths["regions"], index=False, na_rep="", lineterminator="\n")
    islands.to_csv(paths["province_island"], index=False, lineterminator="\n")
    truth.tfp.to_csv(out_dir / "ground_truth_tfp.csv", index=False, lineterminator="\n")
    truth.params_frame().to_csv(out_dir / "ground_truth_params.csv", index=False, lineterminator="\n")
    truth.flags.astype(int).rename_axis("firm_id").reset_index().to_csv(
        out_dir / "ground_truth_flags.csv", index=False, lineterminator="\n")
    return {"summary": panel_summary(panel.frame, truth.flags), "paths": paths}


def panel_summary(frame: pd.DataFrame, flags: pd.Series) -> dict:
    years = sorted(frame["year"].unique())
    by_year = {y: set(frame.loc[frame["year"] == y, "firm_id"]) for y in years}
    entry, exit_ = [], []
    for a, b in zip(years[:-1], years[1:]):
        prev, cur = by_year[a], by_year[b]
        entry.append(len(cur - prev) / len(prev))
        exit_.append(len(prev - cur) / len(prev))
    firms = frame["firm_id"].unique()
    return {
        "firms": int(len(firms)),
        "firm_years": int(len(frame)),
        "superstar_share": float(flags.reindex(firms).fillna(False).astype(bool).mean()),
        "entry_rate": float(np.mean(entry)) if entry else 0.0,
        "exit_rate": float(np.mean(exit_)) if exit_ else 0.0,
    }


# -- runner -------------------------------------------------------------------------

@dataclass
class StageRecord:
    stage: str
    status: str
    duration_s: float = 0.0
    rows: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    error: Optional[str] = None


class StageFailure(SuperspillError):
    def __init__(self, stage: str, index: int, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return STAGE_EXIT_BASE + self.index


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


class Pipeline:
    """Runs a manifest's stages in order, writing per-stage CSVs and a run log."""

    def __init__(self, manifest: RunManifest, threads: int = 1):
        self.m = manifest
        self.threads = max(1, int(threads))
        self.out = Path(manifest.output_dir)
        self.state: dict = {}
        self.log: list = []

    # each stage returns (outputs {filename: DataFrame}, rows {name: count})
    def _simulate(self):
        if not self.m.needs_simulation:
            return {}, {}, "inputs supplied"
        bundle = simulation_bundle(self.m.simulation, self.out / "inputs")
        self.state["inputs"] = {k: str(v) for k, v in bundle["paths"].items()}
        self.state["simulation_summary"] = bundle["summary"]
        return {}, {"firm_years": bundle["summary"]["firm_years"]}, None

    def _input(self, key):
        if "inputs" in self.state and key in self.state["inputs"]:
            return Path(self.state["inputs"][key])
        return self.m.input_path(key)

    def _load(self):
        panel = load_panel(self._input("panel"))
        mapping_path = self._input("province_island")
        if mapping_path is not None:
            panel = assign_islands(panel, load_province_islands(mapping_path))
        self.state["panel"] = panel
        outputs = {}
        if len(panel.rejections):
            outputs["rejections.csv"] = panel.rejections
        return outputs, {"rows": len(panel), "rejected": len(panel.rejections)}, None

    def _deflate(self):
        if not self.m.stages.get("deflate", True):
            return {}, {}, "disabled"
        table = DeflatorTable.from_csv(self._input("deflators"),
                                       base_year=self.m.simulation.base_year if self.m.simulation else 2000)
        self.state["panel"] = apply_deflators(self.state["panel"], table)
        return {"panel_deflated.csv": self.state["panel"].frame}, {"rows": len(self.state["panel"])}, None

    def _impute(self):
        cfg = self.m.stages.get("impute") or {}
        if not cfg:
            return {}, {}, "disabled"
        panel = self.state["panel"]
        rows = {}
        gap = cfg.get("gap_average")
        if gap:
            panel = impute_gap_average(panel, gap.get("variables", ["energy"]), int(gap["year"]))
            rows["gap_unfilled"] = len(panel.diagnostics.get("gap_average_unfilled", []))
        cap = cfg.get("capital_regression")
        if cap:
            panel = impute_capital_regression(panel, int(cap["target_year"]), bool(cap.get("by_sector", False)))
            rows["capital_imputed"] = panel.diagnostics["capital_regression"]["imputed"]
        self.state["panel"] = panel
        return {"panel_imputed.csv": panel.frame}, rows, None

    def _classify(self):
        flags = spillovers.classify_superstars(self.state["panel"], self.m.superstar_rule)
        self.state["flags"] = flags
        return ({"superstar_flags.csv": spillovers.flags_to_frame(flags)},
                {"firms": len(flags), "superstars": int(flags["superstar"].sum())}, None)

    def _tfp(self):
        panel = self.state["panel"]
        estimates, skipped = tfp.estimate_all(panel, self.m.proxy_spec, threads=self.threads)
        panel = tfp.labour_productivity(tfp.tfp_growth(tfp.compute_tfp(panel, estimates)))
        self.state["panel"] = panel
        self.state["estimates"] = estimates
        for sector, why in skipped:
            logger.warning("sector %s skipped: %s", sector, why)
        return ({"production_estimates.csv": tfp.estimates_frame(estimates), "panel_tfp.csv": panel.frame},
                {"sectors": len(estimates), "skipped": len(skipped),
                 "phi_missing": panel.diagnostics.get("phi_missing", 0)}, None)

    def _spillovers(self):
        panel, flags = self.state["panel"], self.state["flags"]
        io = IOTable.from_csv(self._input("io_table"))
        h = spillovers.hspill(panel, flags)
        b = spillovers.bspill(h, io)
        f = spillovers.fspill(h, io)
        table = spillovers.spillover_frame(h, b, f)
        self.state["spill"] = table
        return {"spillovers.csv": table}, {"cells": len(table)}, None

    def _instruments(self):
        panel, flags = self.state["panel"], self.state["flags"]
        base_year = int(self.m.instruments["base_year"])
        shares = bartik.base_labor_share(panel, flags, base_year, self.m.instruments["skill"])
        lab = bartik.lab_bartik_iv(shares, bartik.loo_growth_table(panel))
        tarr = bartik.tariff_bartik_iv(panel, flags, bartik.TariffTable.from_csv(self._input("tariffs")), base_year)
        road = None
        if self._input("regions") is not None:
            road = bartik.road_density(self._input("regions"), years=sorted(panel.frame["year"].unique()))
        table = bartik.instruments_frame(lab, tarr, road)
        self.state["instruments"] = table
        return {"instruments.csv": table}, {"cells": len(table), "lab_missing": lab.diagnostics["missing_cells"]}, None

    def analysis_frame(self) -> pd.DataFrame:
        panel, flags = self.state["panel"], self.state["flags"]
        frame = panel.frame.copy()
        ctrl = spillovers.controls(panel, flags)
        frame = pd.concat([frame, ctrl], axis=1)
        frame = frame.merge(self.state["spill"], on=["sector3", "province", "year"], how="left")
        frame = frame.merge(self.state["instruments"], on=["sector3", "province", "year"], how="left")
        if self.m.ipw:
            frame["ipw"] = ipw_weights(frame, flags["superstar"], self.m.ipw.get("controls", []))
        return frame

    def _regress(self):
        if not self.m.stages.get("regress", True) or not self.m.regressions:
            return {}, {}, "disabled"
        frame = self.analysis_frame()
        coef_rows, meta_rows = [], []
        for spec in self.m.regressions:
            data = frame
            for col in spec.used_columns:
                # "<a>_x_<b>" names a product column built on demand
                if col not in data.columns and "_x_" in col:
                    left, right = col.split("_x_", 1)
                    data, _ = add_interactions(data, [left], [right])
            res = tsls(data, spec) if spec.endogenous else ols(data, spec)
            table = res.to_frame()
            table.insert(0, "spec", spec.name)
            coef_rows.append(table)
            meta = {"spec": spec.name, **res.metadata(spec),
                    "dropped_missing": res.diagnostics.get("dropped_missing", 0),
                    "dropped_singletons": res.diagnostics.get("dropped_singletons", 0)}
            meta_rows.append(meta)
        coefs = pd.concat(coef_rows, ignore_index=True)
        meta = pd.DataFrame(meta_rows)
        return {"regressions.csv": coefs, "regression_meta.csv": meta}, {"specs": len(meta_rows)}, None

    def _decompose(self):
        if not self.m.stages.get("decompose", True) or not self.m.windows:
            return {}, {}, "disabled"
        panel, flags = self.state["panel"], self.state["flags"]
        star = flags["superstar"].map({True: "superstar", False: "non_superstar"})
        hetero = pd.Series(np.where(flags["superstar_foreign"], "foreign_superstar",
                                    np.where(flags["superstar_domestic"], "domestic_superstar",
                                             "heterogeneous_non_superstar")), index=flags.index)
        dyn_tables, static_tables = [], []
        for w in self.m.windows:
            general = decomposition.mp_dynamic(panel, w, star.to_dict())
            split = decomposition.mp_dynamic(panel, w, hetero.to_dict())
            split.records = split.records[split.records["group"] != "all"]
            dyn_tables.append(decomposition.decomposition_table([general, split]))
        static_tables.append(decomposition.static_change_table(panel, self.m.windows, star.to_dict()))
        dyn = pd.concat(dyn_tables, ignore_index=True)
        return ({"decomposition_dynamic.csv": dyn, "decomposition_static.csv": pd.concat(static_tables)},
                {"rows": len(dyn)}, None)

    # -- driver --

    def run(self, stages: Optional[list] = None) -> list:
        plan = stage_closure(stages or STAGE_ORDER)
        self.out.mkdir(parents=True, exist_ok=True)
        marker = self.out / FAILED_MARKER
        if marker.exists():
            marker.unlink()
        handler = _WarningCollector()
        root = logging.getLogger("superspill")
        root.addHandler(handler)
        try:
            for name in plan:
                index = STAGE_ORDER.index(name)
                rec = StageRecord(name, "running")
                start = time.perf_counter()
                handler.messages = []
                try:
                    outputs, rows, note = getattr(self, f"_{name}")()
                except (SuperspillError, KeyError, ValueError, OSError) as exc:
                    rec.status = "failed"
                    rec.error = f"{type(exc).__name__}: {exc}"
                    rec.duration_s = time.perf_counter() - start
                    rec.warnings = list(handler.messages)
                    self.log.append(rec)
                    marker.write_text(f"{name}\n{rec.error}\n")
                    self._write_log(plan)
                    raise StageFailure(name, index, exc) from exc
                for fname, df in outputs.items():
                    write_panel(df, self.out / fname)
                    rec.outputs.append(fname)
                rec.rows = rows
                rec.status = "skipped" if note else "ok"
                if note:
                    rec.warnings.append(note)
                rec.warnings.extend(handler.messages)
                rec.duration_s = time.perf_counter() - start
                self.log.append(rec)
        finally:
            root.removeHandler(handler)
        self._write_log(plan)
        return self.log

    def _write_log(self, plan):
        payload = {
            "plan": plan,
            "edges": {s: [p for p in PREREQUISITES[s] if p in plan] for s in plan},
            "threads": self.threads,
            "stages": [rec.__dict__ for rec in self.log],
        }
        if "simulation_summary" in self.state:
            payload["simulation_summary"] = self.state["simulation_summary"]
        with open(self.out / LOG_NAME, "w") as fh:
            json.dump(payload, fh, indent=2, default=str)
