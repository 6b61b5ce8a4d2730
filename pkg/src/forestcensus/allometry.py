"""Allometric conversion: crown geometry -> DBH -> biomass -> carbon.

Crown diameter is what a drone census measures, but biomass models consume
stem diameter, so a per-species power-law bridge DBH = a * crown^b links
the two.  Biomass models live in a registry keyed by model_id so multiple
published equations can be swapped and compared without code changes:

  tropical_with_height   AGB = c * (rho * dbh^2 * height)^e
                         (pantropical moist-forest form; dbh cm, height m,
                         rho g/cm^3, AGB kg)
  tropical_no_height     AGB = rho * exp(c0 + c1 ln d + c2 ln^2 d + c3 ln^3 d)
                         (height-free moist-forest polynomial)
  custom                 AGB = c * dbh^p * height^q * rho^r

Carbon is a fixed fraction of dry biomass (default 0.47) and CO2e applies
the molar mass ratio 44/12 exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .errors import NegativeInput

CO2_PER_CARBON = 44.0 / 12.0
DEFAULT_CARBON_FRACTION = 0.47

DEFAULT_MODEL_COEFFS = {
    "tropical_with_height": {"c": 0.0673, "e": 0.976},
    "tropical_no_height": {"c0": -1.499, "c1": 2.148, "c2": 0.207, "c3": -0.0281},
    "custom": {"c": 1.0, "p": 2.0, "q": 0.0, "r": 0.0},
}


@dataclass(frozen=True)
class SpeciesParams:
    """Wood density and the crown-to-DBH bridge for one species."""

    species_id: int
    label: str
    wood_density: float  # g/cm^3
    crown_dbh_a: float = 3.48  # DBH cm at 1 m crown diameter
    crown_dbh_b: float = 1.20

    def __post_init__(self):
        if not 0.1 < self.wood_density < 1.2:
            raise ValueError(f"wood density {self.wood_density} outside (0.1, 1.2)")
        if self.crown_dbh_a <= 0 or self.crown_dbh_b <= 0:
            raise ValueError("crown-DBH coefficients must be positive")


@dataclass(frozen=True)
class AllometricModel:
    """One biomass equation: a model_id plus named coefficients."""

    model_id: str
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_id not in DEFAULT_MODEL_COEFFS:
            raise ValueError(f"unknown model_id {self.model_id!r}")
        merged = dict(DEFAULT_MODEL_COEFFS[self.model_id])
        merged.update(self.coefficients)
        if not all(math.isfinite(v) for v in merged.values()):
            raise ValueError("model coefficients must be finite")
        object.__setattr__(self, "coefficients", merged)


@dataclass(frozen=True)
class TreeBiomass:
    tree_id: int
    dbh_cm: float
    agb_kg: float
    carbon_kg: float
    co2e_kg: float


@dataclass(frozen=True)
class StandCarbon:
    """Per-hectare densities and stand totals for one inventory."""

    area_ha: float
    tree_count: int
    agb_mg_per_ha: float
    carbon_mg_per_ha: float
    co2e_t_per_ha: float
    total_agb_mg: float
    total_carbon_mg: float
    total_co2e_t: float


def dbh_from_crown(crown_diameter_m, species):
    """Stem diameter (cm) from crown diameter (m): a * crown^b."""
    if crown_diameter_m < 0:
        raise NegativeInput(f"crown diameter {crown_diameter_m}")
    if crown_diameter_m == 0:
        return 0.0
    return species.crown_dbh_a * crown_diameter_m**species.crown_dbh_b


def crown_from_dbh(dbh_cm, species):
    """Inverse bridge: crown diameter (m) from stem diameter (cm)."""
    if dbh_cm < 0:
        raise NegativeInput(f"dbh {dbh_cm}")
    if dbh_cm == 0:
        return 0.0
    return (dbh_cm / species.crown_dbh_a) ** (1.0 / species.crown_dbh_b)


def agb(dbh_cm, height_m, wood_density, model):
    """Above-ground biomass (kg) for one stem.

    AGB(0, .) = 0 for every model.  Heights are ignored by height-free
    models.  Inputs must be non-negative; wood density must be physical.
    """
    if dbh_cm < 0 or height_m < 0:
        raise NegativeInput(f"dbh {dbh_cm}, height {height_m}")
    if not 0.1 < wood_density < 1.2:
        raise ValueError(f"wood density {wood_density} outside (0.1, 1.2)")
    if dbh_cm == 0:
        return 0.0
    co = model.coefficients
    if model.model_id == "tropical_with_height":
        return co["c"] * (wood_density * dbh_cm**2 * height_m) ** co["e"]
    if model.model_id == "tropical_no_height":
        ln_d = math.log(dbh_cm)
        return wood_density * math.exp(
            co["c0"] + co["c1"] * ln_d + co["c2"] * ln_d**2 + co["c3"] * ln_d**3
        )
    return co["c"] * dbh_cm ** co["p"] * height_m ** co["q"] * wood_density ** co["r"]


def carbon_and_co2e(agb_kg, carbon_fraction=DEFAULT_CARBON_FRACTION):
    """(carbon kg, co2e kg) for a dry biomass.  co2e/carbon == 44/12 exactly."""
    if agb_kg < 0:
        raise NegativeInput(f"agb {agb_kg}")
    carbon = carbon_fraction * agb_kg
    return carbon, carbon * CO2_PER_CARBON


def tree_biomass(tree_id, crown_diameter_m, height_m, species, model,
                 carbon_fraction=DEFAULT_CARBON_FRACTION):
    """Full conversion chain for one tree record."""
    dbh = dbh_from_crown(crown_diameter_m, species)
    mass = agb(dbh, height_m, species.wood_density, model)
    carbon, co2e = carbon_and_co2e(mass, carbon_fraction)
    return TreeBiomass(tree_id, dbh, mass, carbon, co2e)


def stand_totals(trees, area_ha):
    """Aggregate per-tree biomass into stand densities and totals.

    Sums use exact compensated accumulation (math.fsum), so totals do not
    depend on tree order.
    """
    if area_ha <= 0:
        raise NegativeInput(f"area {area_ha} ha")
    total_agb_mg = math.fsum(t.agb_kg for t in trees) / 1000.0
    total_carbon_mg = math.fsum(t.carbon_kg for t in trees) / 1000.0
    total_co2e_t = math.fsum(t.co2e_kg for t in trees) / 1000.0
    return StandCarbon(
        area_ha=area_ha,
        tree_count=len(trees),
        agb_mg_per_ha=total_agb_mg / area_ha,
        carbon_mg_per_ha=total_carbon_mg / area_ha,
        co2e_t_per_ha=total_co2e_t / area_ha,
        total_agb_mg=total_agb_mg,
        total_carbon_mg=total_carbon_mg,
        total_co2e_t=total_co2e_t,
    )


# ---------------------------------------------------------------------------
# Model registry file
# ---------------------------------------------------------------------------


def load_model_registry(text):
    """Parse a model registry CSV (model_id,param,value) into models.

    Unlisted models keep their built-in default coefficients.
    """
    coeffs = {}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or {"model_id", "param", "value"} - set(reader.fieldnames):
        raise ValueError("model registry needs columns model_id,param,value")
    for row in reader:
        mid = row["model_id"].strip()
        if mid not in DEFAULT_MODEL_COEFFS:
            raise ValueError(f"unknown model_id {mid!r} in registry")
        coeffs.setdefault(mid, {})[row["param"].strip()] = float(row["value"])
    return {
        mid: AllometricModel(mid, coeffs.get(mid, {}))
        for mid in DEFAULT_MODEL_COEFFS
    }


def default_models():
    return {mid: AllometricModel(mid) for mid in DEFAULT_MODEL_COEFFS}
