"""Synthetic firm panels with known production elasticities, TFP and spillover effects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError
from .model import ModelParams
from .panel import IOTable, PANEL_COLUMNS, build_panel
from .spillovers import CELL, bspill, fspill, hspill

# latent-process constants of the generator
_CAPITAL_PERSISTENCE = 0.85
_CAPITAL_RESPONSE = 0.3
_CAPITAL_SD = 0.2
_LABOUR_SD = 0.3
_MATERIALS_ON_K = 0.5


@dataclass(frozen=True)
class SimPanelConfig:
    n_firms_initial: int = 2000
    n_years: int = 15
    n_sectors: int = 6
    n_provinces: int = 8
    superstar_fraction: float = 0.05
    elasticities: tuple = (0.45, 0.30)
    productivity_ar1: float = 0.9
    noise_sd: float = 0.1
    entry_rate: float = 0.08
    seed: int = 0
    start_year: int = 2001
    innovation_sd: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "elasticities", tuple(float(e) for e in self.elasticities))
        checks = [
            (self.n_firms_initial >= 1, "n_firms_initial", "must be at least 1"),
            (self.n_years >= 1, "n_years", "must be at least 1"),
            (self.n_sectors >= 1, "n_sectors", "must be at least 1"),
            (self.n_provinces >= 1, "n_provinces", "must be at least 1"),
            (0 < self.superstar_fraction < 1, "superstar_fraction", "must lie in (0, 1)"),
            (len(self.elasticities) == 2 and all(0 < e < 1 for e in self.elasticities),
             "elasticities", "must be two values in (0, 1)"),
            (sum(self.elasticities) < 1, "elasticities", "beta_l + beta_k must be below 1"),
            (-1 < self.productivity_ar1 < 1, "productivity_ar1", "must lie in (-1, 1)"),
            (self.noise_sd >= 0, "noise_sd", "must be non-negative"),
            (0 <= self.entry_rate < 1, "entry_rate", "must lie in [0, 1)"),
            (0 <= self.seed < 2 ** 64, "seed", "must be a 64-bit unsigned integer"),
            (self.innovation_sd >= 0, "innovation_sd", "must be non-negative"),
        ]
        for ok, name, why in checks:
            if not ok:
                raise ConfigError(f"{name} {why}", name)

    @classmethod
    def from_dict(cls, data: dict) -> "SimPanelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation fields: {sorted(unknown)}", sorted(unknown)[0])
        return cls(**data)


@dataclass
class GroundTruth:
    beta_l: float
    beta_k: float
    alpha: float
    tau: float
    psi: float
    seed: int
    tfp: pd.DataFrame
    flags: pd.Series
    exposures: pd.DataFrame
    io: Optional[IOTable] = None
    extra: dict = field(default_factory=dict)

    def params_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"beta_l": self.beta_l, "beta_k": self.beta_k, "alpha": self.alpha,
                              "tau": self.tau, "psi": self.psi, "seed": self.seed}])


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def sector_codes(n: int) -> list:
    """3-digit codes grouped three to a 2-digit prefix: 100, 101, 102, 110, ..."""
    return [f"{10 + s // 3}{s % 3}" for s in range(n)]


def province_codes(n: int) -> list:
    return [f"P{p + 1:02d}" for p in range(n)]


def island_of(province: str) -> str:
    return f"I{(int(province[1:]) - 1) % 3 + 1}"


def random_io_table(sectors: list, rng: np.random.Generator, density: float = 0.4) -> IOTable:
    n = len(sectors)
    coeffs = np.where(rng.random((n, n)) < density, rng.uniform(0.01, 0.3, (n, n)), 0.0)
    return IOTable(sectors, coeffs)


def _cell_exposure(frame: pd.DataFrame, flags: pd.Series, io: IOTable) -> pd.DataFrame:
    h = hspill(frame, flags)
    b = bspill(h, io)
    f = fspill(h, io)
    return pd.concat([h.values.rename("hspill"), b.values.rename("bspill"), f.values.rename("fspill")], axis=1)


def simulate_panel(config: SimPanelConfig, params: ModelParams = ModelParams()) -> tuple:
    """Generate a firm-year panel and its ground truth.

    Log TFP is ``omega_t = a_t + ln c + alpha*H_{t-1} + tau*B_{t-1} + psi*F_{t-1}``
    where ``a`` is an AR(1) started at ln(capability).  Capital is chosen a
    period ahead, labour responds to current TFP plus an idiosyncratic shock,
    and log materials are linear and strictly increasing in TFP given
    capital.  Log value added is ``beta_l*l + beta_k*k + omega + noise``.

    Returns
    -------
    (Panel, GroundTruth)
    """
    beta_l, beta_k = config.elasticities
    seed = config.seed
    sectors = sector_codes(config.n_sectors)
    provinces = province_codes(config.n_provinces)
    dist = params.capability_dist
    log_c = math.log(params.c)
    rho = config.productivity_ar1
    mu = (dist.mu if dist.kind == "lognormal" else float(np.mean(np.log(dist.sample(_rng(seed, 9), 10000)))))

    io = random_io_table(sectors, _rng(seed, 2))

    # static firm attributes for the initial cohort
    rng0 = _rng(seed, 0)
    n0 = config.n_firms_initial
    sector = rng0.integers(0, config.n_sectors, n0)
    province = rng0.integers(0, config.n_provinces, n0)
    capability = dist.sample(rng0, n0)
    flag = np.zeros(n0, dtype=bool)
    thresholds = {}
    ids = np.arange(n0)
    for s in range(config.n_sectors):
        members = ids[sector == s]
        if len(members) == 0:
            thresholds[s] = np.inf
            continue
        n_star = max(1, int(round(config.superstar_fraction * len(members))))
        # rank by capability, ties broken by firm id
        order = members[np.lexsort((members, -capability[members]))]
        flag[order[:n_star]] = True
        thresholds[s] = capability[order[n_star - 1]]
    foreign_share = np.where(rng0.random(n0) < 0.1, rng0.uniform(0.1, 1.0, n0), 0.0)
    import_share = np.where(rng0.random(n0) < 0.3, rng0.uniform(0.0, 0.4, n0), 0.0)

    a = np.log(capability)
    k = 8.0 + 1.0 * (a - mu) + rng0.normal(0.0, 0.3, n0)
    alive = np.ones(n0, dtype=bool)
    spill = np.zeros(n0)

    records = []
    tfp_records = []
    exposure_parts = []
    flag_series = None

    for t in range(config.n_years):
        year = config.start_year + t
        rng_t = _rng(seed, 1, t)
        idx = np.flatnonzero(alive)
        n = len(idx)
        omega = a[idx] + log_c + spill[idx]
        kt = k[idx]
        l_latent = 4.0 + 0.5 * (omega - mu) + 0.2 * (kt - 8.0) + rng_t.normal(0.0, _LABOUR_SD, n)
        workers = np.maximum(1, np.rint(np.exp(l_latent))).astype(np.int64)
        w_prod = rng_t.binomial(workers, 0.7)
        w_nonprod = workers - w_prod
        l = np.log(workers)
        m = 3.0 + 1.0 * omega + _MATERIALS_ON_K * kt
        eta = rng_t.normal(0.0, config.noise_sd, n) if config.noise_sd > 0 else np.zeros(n)
        y = beta_l * l + beta_k * kt + omega + eta
        value_added = np.exp(y)
        materials = np.exp(m)
        output = value_added + materials
        energy = 0.1 * materials * rng_t.uniform(0.8, 1.2, n)
        wage_bill = workers * np.exp(2.0 + 0.3 * (omega - mu) + rng_t.normal(0.0, 0.2, n))
        exporter = rng_t.random(n) < 1.0 / (1.0 + np.exp(-(omega - mu - 1.0)))
        firm_ids = np.array([f"F{i + 1:06d}" for i in idx], dtype=object)
        frame = pd.DataFrame({
            "firm_id": firm_ids,
            "year": np.full(n, year, dtype=np.int64),
            "sector3": np.array(sectors, dtype=object)[sector[idx]],
            "sector2": np.array([s[:2] for s in sectors], dtype=object)[sector[idx]],
            "province": np.array(provinces, dtype=object)[province[idx]],
            "island": np.array([island_of(p) for p in provinces], dtype=object)[province[idx]],
            "output": output,
            "value_added": value_added,
            "capital": np.exp(kt),
            "materials": materials,
            "energy": energy,
            "workers_production": pd.array(w_prod, dtype="Int64"),
            "workers_nonproduction": pd.array(w_nonprod, dtype="Int64"),
            "wage_bill": wage_bill,
            "foreign_share": foreign_share[idx],
            "export_flag": pd.array(exporter, dtype="boolean"),
            "imported_materials": materials * import_share[idx],
        })
        records.append(frame)
        tfp_records.append(pd.DataFrame({"firm_id": firm_ids, "year": year, "true_tfp": omega}))

        flag_series = pd.Series(flag, index=[f"F{i + 1:06d}" for i in range(len(flag))], name="superstar")
        exposure = _cell_exposure(frame, flag_series, io)
        exposure_parts.append(exposure)

        if t == config.n_years - 1:
            break

        # transitions into t + 1
        rng_n = _rng(seed, 3, t)
        cell_key = list(zip(frame["sector3"], frame["province"], frame["year"]))
        ex = exposure.reindex(cell_key).fillna(0.0).to_numpy()
        spill_next = params.alpha * ex[:, 0] + params.tau * ex[:, 1] + params.psi * ex[:, 2]
        xi = rng_n.normal(0.0, config.innovation_sd, n)
        a[idx] = mu + rho * (a[idx] - mu) + xi
        k[idx] = (1 - _CAPITAL_PERSISTENCE) * 8.0 + _CAPITAL_PERSISTENCE * kt \
            + _CAPITAL_RESPONSE * (omega - mu) + rng_n.normal(0.0, _CAPITAL_SD, n)
        spill[idx] = spill_next
        if params.delta > 0:
            died = rng_n.random(n) < params.delta
            alive[idx[died]] = False
        n_new = int(round(config.entry_rate * n))
        if n_new:
            new_sector = rng_n.integers(0, config.n_sectors, n_new)
            new_province = rng_n.integers(0, config.n_provinces, n_new)
            new_cap = dist.sample(rng_n, n_new)
            new_flag = np.array([c >= thresholds[s] for c, s in zip(new_cap, new_sector)], dtype=bool)
            new_a = np.log(new_cap)
            exposure_lookup = exposure.reindex(list(zip(np.array(sectors, dtype=object)[new_sector],
                                                        np.array(provinces, dtype=object)[new_province],
                                                        [year] * n_new))).fillna(0.0).to_numpy()
            new_spill = exposure_lookup @ np.array([params.alpha, params.tau, params.psi])
            new_k = 8.0 + 1.0 * (new_a - mu) + rng_n.normal(0.0, 0.3, n_new)
            sector = np.concatenate([sector, new_sector])
            province = np.concatenate([province, new_province])
            capability = np.concatenate([capability, new_cap])
            flag = np.concatenate([flag, new_flag])
            foreign_share = np.concatenate([foreign_share, np.where(rng_n.random(n_new) < 0.1,
                                                                    rng_n.uniform(0.1, 1.0, n_new), 0.0)])
            import_share = np.concatenate([import_share, np.where(rng_n.random(n_new) < 0.3,
                                                                  rng_n.uniform(0.0, 0.4, n_new), 0.0)])
            a = np.concatenate([a, new_a])
            k = np.concatenate([k, new_k])
            spill = np.concatenate([spill, new_spill])
            alive = np.concatenate([alive, np.ones(n_new, dtype=bool)])

    flag_series = pd.Series(flag, index=[f"F{i + 1:06d}" for i in range(len(flag))], name="superstar")
    frame = pd.concat(records, ignore_index=True)
    panel = build_panel(frame[PANEL_COLUMNS])
    tfp = pd.concat(tfp_records, ignore_index=True).sort_values(["firm_id", "year"], kind="mergesort")
    exposures = pd.concat(exposure_parts).sort_index()
    truth = GroundTruth(beta_l, beta_k, params.alpha, params.tau, params.psi, seed,
                        tfp.reset_index(drop=True), flag_series, exposures, io)
    return panel, truth


def simulate_endogenous_panel(config: SimPanelConfig, params: ModelParams = ModelParams(),
                              shift_loading: float = 8.0, shock_sd: float = 0.3) -> tuple:
    """Balanced panel in which horizontal exposure is endogenous to non-superstar TFP.

    Each (sector, province) cell holds a fixed set of firms; with few firms
    per cell a single firm's shock moves the cell's exposure, while errors
    stay independent across firms so firm clustering remains valid.  A non-superstar's
    TFP shock raises both its log TFP and its output, so the cell's superstar
    output share falls when its non-superstars are productive.  Superstar
    output expands with ``base unskilled share * national sector growth``, which
    is the exogenous variation a labour shift-share instrument picks up.

    ``frame['phi']`` carries log TFP; ``truth.alpha`` is the causal effect per
    percentage point of horizontal exposure.
    """
    rng = _rng(config.seed, 7)
    K, J, T = config.n_sectors, config.n_provinces, config.n_years
    sectors = sector_codes(K)
    provinces = province_codes(J)
    per_cell = max(3, config.n_firms_initial // (K * J))
    n_star = max(1, int(round(config.superstar_fraction * per_cell)))

    base_share = rng.uniform(0.05, 0.6, (K, J))
    base_ratio = rng.uniform(0.3, 1.5, (K, J))
    growth = rng.normal(0.04, 0.10, (K, T))
    scale = np.cumprod(1.0 + growth, axis=1)
    year_effect = 0.02 * np.arange(T)
    province_effect = rng.normal(0.0, 0.2, J)

    rows = []
    firm = 0
    for kk in range(K):
        for jj in range(J):
            ns = per_cell - n_star
            size = rng.normal(0.0, 0.5, ns)
            firm_effect = rng.normal(0.0, 0.3, ns)
            ns_workers = np.maximum(1, np.rint(np.exp(rng.normal(3.5, 0.5, ns)))).astype(np.int64)
            star_total = base_share[kk, jj] / (1 - base_share[kk, jj]) * ns_workers.sum()
            star_workers = np.full(n_star, max(1, int(round(star_total / n_star))), dtype=np.int64)
            star_level = base_ratio[kk, jj] * np.exp(size).sum() / n_star
            shocks = rng.normal(0.0, shock_sd, (ns, T))
            star_noise = rng.normal(0.0, 0.05, (n_star, T))
            ids = [f"F{firm + i + 1:06d}" for i in range(per_cell)]
            firm += per_cell
            for t in range(T):
                ns_out = 10.0 * scale[kk, t] * np.exp(size + shocks[:, t])
                expansion = shift_loading * base_share[kk, jj] * growth[kk, t]
                st_out = 10.0 * scale[kk, t] * star_level * np.exp(expansion + star_noise[:, t])
                outputs = np.concatenate([st_out, ns_out])
                workers = np.concatenate([star_workers, ns_workers])
                latent = np.concatenate([np.zeros(n_star), firm_effect + shocks[:, t]])
                for i, fid in enumerate(ids):
                    rows.append((fid, config.start_year + t, sectors[kk], provinces[jj], outputs[i],
                                 int(workers[i]), latent[i] + province_effect[jj] + year_effect[t], latent[i],
                                 i < n_star))
    df = pd.DataFrame(rows, columns=["firm_id", "year", "sector3", "province", "output",
                                     "workers_production", "latent", "error", "is_star"])
    flags = df.groupby("firm_id")["is_star"].first().rename("superstar")
    h = hspill(df, flags).values
    cell_h = h.reindex(pd.MultiIndex.from_frame(df[CELL])).to_numpy()
    df["phi"] = np.where(df["is_star"], df["latent"], params.alpha * cell_h + df["latent"])
    frame = pd.DataFrame({
        "firm_id": df["firm_id"].astype(object),
        "year": df["year"].astype(np.int64),
        "sector3": df["sector3"].astype(object),
        "sector2": df["sector3"].str[:2].astype(object),
        "province": df["province"].astype(object),
        "island": df["province"].map(island_of).astype(object),
        "output": df["output"],
        "value_added": 0.4 * df["output"],
        "capital": 2.0 * df["output"],
        "materials": 0.5 * df["output"],
        "energy": 0.05 * df["output"],
        "workers_production": pd.array(df["workers_production"], dtype="Int64"),
        "workers_nonproduction": pd.array(np.zeros(len(df), dtype=np.int64), dtype="Int64"),
        "wage_bill": 5.0 * df["workers_production"].astype(float),
        "foreign_share": 0.0,
        "export_flag": pd.array(np.zeros(len(df), dtype=bool), dtype="boolean"),
        "imported_materials": 0.0,
        "phi": df["phi"],
    })
    panel = build_panel(frame)
    tfp = panel.frame[["firm_id", "year", "phi"]].rename(columns={"phi": "true_tfp"})
    tfp["structural_error"] = df.set_index(["firm_id", "year"])["error"].reindex(
        pd.MultiIndex.from_frame(tfp[["firm_id", "year"]])).to_numpy()
    exposures = h.to_frame("hspill")
    truth = GroundTruth(float("nan"), float("nan"), params.alpha, 0.0, 0.0, config.seed, tfp, flags,
                        exposures, extra={"base_share": base_share, "growth": growth})
    return panel, truth
