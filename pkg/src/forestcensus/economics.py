"""Survey and carbon-offset cost comparison.

Built-in defaults encode the published cost figures this tool is meant to
reproduce: ground campaigns at 300 USD/ha (20 ha in 2-7 days), quadrotor
drone surveys at 10 USD/ha covering 100 ha in a 5 h mission, a planned
VTOL covering 250 ha per 60 min flight, forest offsets from 6-8 trees per
tonne of CO2 at ~3 USD/tree (computed band 18-24 USD/tCO2, commonly quoted
as 20-25), and direct air capture at 94-232 USD/tCO2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import NonPositive


@dataclass(frozen=True)
class SurveyCostModel:
    method: str
    usd_per_ha: float
    ha_per_mission: float
    hours_per_mission: float

    def __post_init__(self):
        if min(self.usd_per_ha, self.ha_per_mission, self.hours_per_mission) <= 0:
            raise ValueError("survey cost parameters must be positive")


@dataclass(frozen=True)
class OffsetCostModel:
    method: str
    usd_per_tco2_low: float
    usd_per_tco2_high: float
    basis: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.usd_per_tco2_low <= self.usd_per_tco2_high:
            raise ValueError("need 0 < low <= high")

    @property
    def usd_per_tco2_mid(self):
        return (self.usd_per_tco2_low + self.usd_per_tco2_high) / 2.0


# Cost split of one planted tree (seedling / labour / monitoring)
TREE_COST_BREAKDOWN = {"seedling": 0.30, "labour": 0.45, "monitoring": 0.25}

DEFAULT_SURVEY_MODELS = {
    "ground": SurveyCostModel("ground", usd_per_ha=300.0, ha_per_mission=20.0,
                              hours_per_mission=36.0),  # 2-7 days/20 ha, 4.5 d * 8 h
    "drone_quadrotor": SurveyCostModel("drone_quadrotor", usd_per_ha=10.0,
                                       ha_per_mission=100.0, hours_per_mission=5.0),
    "drone_vtol": SurveyCostModel("drone_vtol", usd_per_ha=10.0,
                                  ha_per_mission=250.0, hours_per_mission=1.0),
}

DEFAULT_OFFSET_MODELS = [
    OffsetCostModel("forest_computed", 18.0, 24.0,
                    basis="6-8 trees per tCO2 at 3 USD/tree",
                    metadata={"tree_cost_breakdown": TREE_COST_BREAKDOWN}),
    OffsetCostModel("forest_stated", 20.0, 25.0,
                    basis="stated storage cost band",
                    metadata={"tree_cost_breakdown": TREE_COST_BREAKDOWN}),
    OffsetCostModel("direct_air_capture", 94.0, 232.0, basis="conversion plant price"),
    OffsetCostModel("cap_and_trade_credit", 10.0, 15.0,
                    basis="tropical reforestation credit earnings"),
]


@dataclass(frozen=True)
class SurveyCost:
    method: str
    area_ha: float
    usd: float
    missions: int
    hours: float


def survey_cost(area_ha, model):
    """Total cost, mission count, and field hours to survey an area."""
    if area_ha < 0:
        raise NonPositive(f"area {area_ha}")
    if area_ha == 0:
        return SurveyCost(model.method, 0.0, 0.0, 0, 0.0)
    missions = math.ceil(area_ha / model.ha_per_mission)
    return SurveyCost(
        method=model.method,
        area_ha=area_ha,
        usd=area_ha * model.usd_per_ha,
        missions=missions,
        hours=missions * model.hours_per_mission,
    )


def offset_cost_per_tonne(trees_per_tonne, usd_per_tree):
    """USD per tonne of CO2 stored by planting trees."""
    if trees_per_tonne <= 0 or usd_per_tree <= 0:
        raise NonPositive(f"trees_per_tonne {trees_per_tonne}, usd_per_tree {usd_per_tree}")
    return trees_per_tonne * usd_per_tree


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    usd_low: float
    usd_high: float
    usd_mid: float
    cheapest: bool


def compare(models, tco2e):
    """USD to offset a stand's CO2e under each offset model.

    Linear in tonnage; the cheapest method is flagged by band midpoint.
    """
    if tco2e < 0:
        raise NonPositive(f"tco2e {tco2e}")
    if not models:
        return []
    mids = [m.usd_per_tco2_mid for m in models]
    best = min(range(len(models)), key=lambda i: mids[i])
    rows = []
    for i, m in enumerate(models):
        rows.append(
            ComparisonRow(
                method=m.method,
                usd_low=tco2e * m.usd_per_tco2_low,
                usd_high=tco2e * m.usd_per_tco2_high,
                usd_mid=tco2e * m.usd_per_tco2_mid,
                cheapest=(i == best),
            )
        )
    return rows


def comparison_table(rows):
    """Plain-text table for terminal reports."""
    if not rows:
        return "(no offset cost models)\n"
    header = f"{'method':<22}{'USD low':>14}{'USD high':>14}{'USD mid':>14}  cheapest\n"
    lines = [header, "-" * len(header) + "\n"]
    for r in rows:
        lines.append(
            f"{r.method:<22}{r.usd_low:>14.2f}{r.usd_high:>14.2f}{r.usd_mid:>14.2f}"
            f"  {'*' if r.cheapest else ''}\n"
        )
    return "".join(lines)
