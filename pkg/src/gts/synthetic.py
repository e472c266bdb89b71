"""Synthetic infant-mortality panels shaped like the Australian sex x region data.

The real data cannot be redistributed, so tests, benchmarks and examples use
panels drawn from this generator: 2 sexes x 8 regions, yearly 1933-2003, with
declining rates, growing exposures and Poisson deaths.
"""

from __future__ import annotations

import numpy as np

from gts.hierarchy import PanelSeries, aggregate_panel, build_hierarchy

SEXES = ("F", "M")
REGIONS = tuple(f"R{i}" for i in range(1, 9))
FIRST_YEAR = 1933
LAST_YEAR = 2003

# rough relative sizes of the eight regions (births share)
_REGION_SIZE = np.array([0.33, 0.25, 0.19, 0.08, 0.10, 0.03, 0.01, 0.01])
_REGION_LEVEL = np.array([0.0, -0.05, 0.1, 0.05, 0.0, 0.15, 0.8, 0.1])


def australian_like(seed: int = 0, first_year: int = FIRST_YEAR, last_year: int = LAST_YEAR,
                    births: float = 120_000.0) -> PanelSeries:
    """Draw a coherent 27-node panel.

    Log rates follow a common downward trend plus per-series AR(1)
    deviations; male rates sit about 25% above female rates.  Exposures grow
    by ~1.3% a year with small per-series noise.  Deaths are Poisson.
    """
    rng = np.random.default_rng(seed)
    years = np.arange(first_year, last_year + 1)
    n = years.size
    h = build_hierarchy({"sex": SEXES, "region": REGIONS})

    t = np.arange(n)
    trend = np.log(0.045) - 0.035 * t + 0.15 * np.cos(np.pi * t / n)
    common = np.cumsum(rng.normal(0.0, 0.03, n))

    deaths = np.empty((h.m_bottom, n))
    exposure = np.empty((h.m_bottom, n))
    for j, (sex, region) in enumerate(h.bottom_keys):
        r = REGIONS.index(region)
        dev = np.empty(n)
        dev[0] = rng.normal(0.0, 0.08)
        for i in range(1, n):
            dev[i] = 0.6 * dev[i - 1] + rng.normal(0.0, 0.06)
        sex_eff = 0.22 if sex == "M" else 0.0
        rate = np.exp(trend + common + _REGION_LEVEL[r] + sex_eff + dev)
        share = 0.512 if sex == "M" else 0.488
        growth = np.cumsum(rng.normal(0.013, 0.01, n))
        exposure[j] = births * _REGION_SIZE[r] * share * np.exp(growth)
        deaths[j] = rng.poisson(rate * exposure[j])
    return aggregate_panel(h, deaths, exposure, years)


def write_panel_csv(panel: PanelSeries, path) -> int:
    """Write the bottom level of ``panel`` in the long CSV schema; returns row count."""
    h = panel.hierarchy
    m_k = h.m_bottom
    rows = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(("year",) + h.attributes + ("deaths", "exposure")) + "\n")
        for i, year in enumerate(panel.years):
            for j, key in enumerate(h.bottom_keys):
                d = panel.deaths[h.m - m_k + j, i]
                e = panel.exposure[h.m - m_k + j, i]
                fh.write(f"{int(year)},{','.join(key)},{d:.10g},{e:.10g}\n")
                rows += 1
    return rows


def write_hierarchy_cfg(panel: PanelSeries, path) -> None:
    """Write the INI hierarchy declaration matching ``panel``."""
    h = panel.hierarchy
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("[hierarchy]\n")
        fh.write(f"attributes = {', '.join(h.attributes)}\n")
        for a, dom in zip(h.attributes, h.domains):
            fh.write(f"\n[{a}]\nvalues = {', '.join(dom)}\n")
