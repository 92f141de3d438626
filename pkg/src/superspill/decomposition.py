"""Static Olley-Pakes and dynamic Melitz-Polanec decompositions of aggregate log TFP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError, InsufficientDataError
from .panel import Panel

logger = logging.getLogger(__name__)

SURVIVOR, EXITER, ENTRANT, OTHER = "Survivor", "Exiter", "Entrant", "Other"
MP_TERMS = ["plant_improvement", "within_reallocation", "entrant_mean", "entrant_cov", "exiter_mean", "exiter_cov"]


@dataclass(frozen=True)
class WindowSpec:
    t1: int
    t2: int
    continuity_required: bool = True

    def __post_init__(self):
        if not self.t1 < self.t2:
            raise ConfigError(f"window start {self.t1} must precede end {self.t2}", "t1")

    @property
    def label(self) -> str:
        return f"{self.t1}-{self.t2}"


@dataclass
class GroupMoments:
    """Unweighted mean, share-productivity covariance and share-weighted aggregate of one universe."""

    n: int
    mean: float
    cov: float
    aggregate: float


def moments(phi: np.ndarray, output: np.ndarray) -> GroupMoments:
    n = len(phi)
    if n == 0:
        return GroupMoments(0, 0.0, 0.0, 0.0)
    total = output.sum()
    if not total > 0:
        raise DomainError("universe has zero total output")
    s = output / total
    mean = phi.mean()
    cov = float(((s - 1.0 / n) * (phi - mean)).sum())
    return GroupMoments(n, float(mean), cov, float(s @ phi))


def _clean(frame: pd.DataFrame, phi: str) -> tuple:
    ok = frame[phi].notna() & frame["output"].notna()
    return frame[ok], int((~ok).sum())


def op_static(frame: pd.DataFrame, phi: str = "phi", groups: Optional[Mapping] = None) -> pd.DataFrame:
    """Olley-Pakes split of one cross-section.

    Returns one row per group (plus ``all``) with the group's output share
    of the universe, unweighted mean, covariance term and aggregate
    ``mean + cov``.  ``attrs['grouped_aggregate']`` holds
    ``sum_g share_g * (mean_g + cov_g)``.
    """
    data, n_missing = _clean(frame, phi)
    values = data[phi].to_numpy(dtype=float)
    output = data["output"].to_numpy(dtype=float)
    total = output.sum()
    whole = moments(values, output)
    rows = [{"group": "all", "share": 1.0, "mean": whole.mean, "cov": whole.cov,
             "aggregate": whole.mean + whole.cov, "n": whole.n}]
    grouped = np.nan
    omitted = []
    if groups is not None:
        labels = data["firm_id"].map(groups).to_numpy()
        grouped = 0.0
        for g in sorted(pd.unique(labels[pd.notna(labels)])):
            mask = labels == g
            if not mask.any():
                omitted.append(g)
                continue
            m = moments(values[mask], output[mask])
            share = output[mask].sum() / total
            grouped += share * (m.mean + m.cov)
            rows.append({"group": g, "share": share, "mean": m.mean, "cov": m.cov,
                         "aggregate": m.mean + m.cov, "n": m.n})
    out = pd.DataFrame(rows)
    out.attrs.update({"grouped_aggregate": grouped, "share_weighted": whole.aggregate,
                      "missing_rows": n_missing, "omitted_groups": omitted})
    return out


def classify_transitions(panel: Panel | pd.DataFrame, window: WindowSpec) -> pd.Series:
    """Survivor / Exiter / Entrant / Other label per firm for a window."""
    frame = panel.frame if isinstance(panel, Panel) else panel
    years = frame.groupby("firm_id")["year"].agg(lambda s: set(s.tolist()))
    span = set(range(window.t1, window.t2 + 1))
    labels = {}
    for firm, present in years.items():
        at1, at2 = window.t1 in present, window.t2 in present
        survivor = at1 and at2 and (not window.continuity_required or span <= present)
        if survivor:
            labels[firm] = SURVIVOR
        elif at1:
            labels[firm] = EXITER
        elif at2:
            labels[firm] = ENTRANT
        else:
            labels[firm] = OTHER
    return pd.Series(labels, name="transition").sort_index()


@dataclass
class DecompResult:
    window: WindowSpec
    records: pd.DataFrame
    diagnostics: dict = field(default_factory=dict)

    @property
    def aggregate_change(self) -> float:
        return float(self.records.loc[self.records["group"] == "all", "aggregate_change"].iloc[0])

    @property
    def residual_check(self) -> float:
        return float(self.records["residual_check"].abs().max())


def _mp_universe(t1: pd.DataFrame, t2: pd.DataFrame, labels: pd.Series, phi: str) -> dict:
    survivors = set(labels.index[labels == SURVIVOR])
    sur1 = t1["firm_id"].isin(survivors).to_numpy()
    sur2 = t2["firm_id"].isin(survivors).to_numpy()
    p1, o1 = t1[phi].to_numpy(dtype=float), t1["output"].to_numpy(dtype=float)
    p2, o2 = t2[phi].to_numpy(dtype=float), t2["output"].to_numpy(dtype=float)
    total1, total2 = o1.sum(), o2.sum()
    if not (total1 > 0 and total2 > 0):
        raise DomainError("a window endpoint has zero aggregate output")
    S1, X1 = moments(p1[sur1], o1[sur1]), moments(p1[~sur1], o1[~sur1])
    S2, E2 = moments(p2[sur2], o2[sur2]), moments(p2[~sur2], o2[~sur2])
    sh_s1, sh_x1 = o1[sur1].sum() / total1, o1[~sur1].sum() / total1
    sh_s2, sh_e2 = o2[sur2].sum() / total2, o2[~sur2].sum() / total2
    terms = {
        "plant_improvement": S2.mean - S1.mean,
        "within_reallocation": S2.cov - S1.cov,
        "entrant_mean": sh_e2 * (E2.mean - S2.mean) if E2.n else 0.0,
        "entrant_cov": sh_e2 * (E2.cov - S2.cov) if E2.n else 0.0,
        "exiter_mean": sh_x1 * (S1.mean - X1.mean) if X1.n else 0.0,
        "exiter_cov": sh_x1 * (S1.cov - X1.cov) if X1.n else 0.0,
    }
    direct = float(o2 @ p2 / total2 - o1 @ p1 / total1)
    return {**terms, "aggregate_change": direct,
            "residual_check": sum(terms.values()) - direct,
            "share_survivor_t1": sh_s1, "share_exiter_t1": sh_x1,
            "share_survivor_t2": sh_s2, "share_entrant_t2": sh_e2,
            "n_survivors": S1.n, "n_exiters": X1.n, "n_entrants": E2.n}


def mp_dynamic(panel: Panel | pd.DataFrame, window: WindowSpec, groups: Optional[Mapping] = None,
               phi: str = "phi") -> DecompResult:
    """Melitz-Polanec split of the change in aggregate log TFP between the window endpoints.

    Firms at ``t1`` that do not survive form the exiter universe and firms
    at ``t2`` that do not survive form the entrant universe; a firm present
    at both endpoints with a gap in between is therefore an exiter at ``t1``
    and an entrant at ``t2``.  Endpoint rows missing ``phi`` or output are
    treated as absent, so the direct change matches the static aggregates.  With ``groups`` (firm -> label) each group is
    decomposed as its own universe, with shares renormalized inside it.
    """
    frame = panel.frame if isinstance(panel, Panel) else panel
    # an endpoint row without productivity or output counts as absent from that year
    endpoint = frame["year"].isin([window.t1, window.t2])
    unusable = endpoint & (frame[phi].isna() | frame["output"].isna())
    frame = frame[~unusable]
    labels = classify_transitions(frame, window)
    t1 = frame[frame["year"] == window.t1]
    t2 = frame[frame["year"] == window.t2]
    if t1.empty or t2.empty:
        raise InsufficientDataError(f"window {window.label} has an empty endpoint")
    total1, total2 = t1["output"].sum(), t2["output"].sum()

    universes = [("all", t1, t2)]
    if groups is not None:
        g1 = t1["firm_id"].map(groups)
        g2 = t2["firm_id"].map(groups)
        for g in sorted(set(g1.dropna()) | set(g2.dropna())):
            universes.append((g, t1[(g1 == g).to_numpy()], t2[(g2 == g).to_numpy()]))
    records = []
    omitted = []
    for name, a, b in universes:
        if a.empty or b.empty:
            omitted.append(name)
            logger.info("group %s has an empty endpoint in %s; omitted", name, window.label)
            continue
        rec = _mp_universe(a, b, labels, phi)
        rec.update({"window": window.label, "group": name,
                    "share_t1": a["output"].sum() / total1, "share_t2": b["output"].sum() / total2})
        records.append(rec)
    cols = ["window", "group", "aggregate_change"] + MP_TERMS + [
        "residual_check", "share_t1", "share_t2", "share_survivor_t1", "share_exiter_t1",
        "share_survivor_t2", "share_entrant_t2", "n_survivors", "n_exiters", "n_entrants"]
    diag = {"excluded_missing": int(unusable.sum()), "omitted_groups": omitted,
            "transitions": labels.value_counts().to_dict()}
    return DecompResult(window, pd.DataFrame(records, columns=cols), diag)


def report_components(components: pd.DataFrame, parts=("plant_improvement", "within_reallocation",
                                                      "exiter_entrant_reallocation")) -> pd.DataFrame:
    """Aggregate as the sum of reported components, and each component's share of it.

    Shares are ``component / aggregate``; they explode in magnitude and can
    flip sign when the aggregate is close to zero.
    """
    out = components.copy()
    out["aggregate_change"] = out[list(parts)].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p in parts:
            out[f"share_{p}"] = out[p] / out["aggregate_change"]
    return out


def decomposition_table(results: list) -> pd.DataFrame:
    """One row per (window, group) in the reporting layout of the dynamic decomposition."""
    frames = []
    for res in results:
        r = res.records
        frames.append(pd.DataFrame({
            "window": r["window"], "group": r["group"],
            "plant_improvement": r["plant_improvement"],
            "within_reallocation": r["within_reallocation"],
            "exiter_entrant_reallocation": r[["entrant_mean", "entrant_cov", "exiter_mean", "exiter_cov"]].sum(axis=1),
            "direct_change": r["aggregate_change"],
        }))
    table = report_components(pd.concat(frames, ignore_index=True))
    cols = ["window", "group", "aggregate_change", "plant_improvement", "within_reallocation",
            "exiter_entrant_reallocation", "share_plant_improvement", "share_within_reallocation",
            "share_exiter_entrant_reallocation", "direct_change"]
    return table[cols]


def static_change_table(panel: Panel | pd.DataFrame, windows: list, groups: Optional[Mapping] = None,
                        phi: str = "phi") -> pd.DataFrame:
    """Change in static aggregate, unweighted mean and covariance between window endpoints."""
    frame = panel.frame if isinstance(panel, Panel) else panel
    rows = []
    for w in windows:
        a = op_static(frame[frame["year"] == w.t1], phi, groups).set_index("group")
        b = op_static(frame[frame["year"] == w.t2], phi, groups).set_index("group")
        for g in a.index.intersection(b.index):
            rows.append({"window": w.label, "group": g,
                         "plant_improvement": b.at[g, "mean"] - a.at[g, "mean"],
                         "reallocation": b.at[g, "cov"] - a.at[g, "cov"]})
    table = report_components(pd.DataFrame(rows), parts=("plant_improvement", "reallocation"))
    return table[["window", "group", "aggregate_change", "plant_improvement", "reallocation",
                  "share_plant_improvement", "share_reallocation"]]
