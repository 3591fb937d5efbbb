#!/usr/bin/env python3
"""Generate the pinned OxCGRT-format snapshot shipped in data/.

The case counts are synthetic: a renewal-equation epidemic per country whose
reproduction number is damped by the country's NPI levels, observed through a
reporting delay, partial ascertainment, weekday effects and count noise. The
NPI histories follow staged adoption and partial relaxation. The output keeps
the column names and quirks of the real tracker (blank cells, a missing day,
downward revisions) so the ingestion path is exercised end to end.

Usage: python3 tools/make_snapshot.py [--out data] [--seed 2020]
"""

import argparse
import csv
import datetime as dt
import os

import numpy as np

NPI_COLUMNS = [
    "C1_School closing",
    "C2_Workplace closing",
    "C3_Cancel public events",
    "C4_Restrictions on gatherings",
    "C5_Close public transport",
    "C6_Stay at home requirements",
    "C7_Restrictions on internal movement",
    "C8_International travel controls",
]
NPI_MAX = np.array([3, 3, 2, 4, 2, 3, 2, 4])
# Relative transmission reduction of each NPI at its maximum level.
NPI_EFFECT = np.array([0.20, 0.22, 0.10, 0.18, 0.06, 0.25, 0.10, 0.08])

START = dt.date(2020, 1, 22)
DAYS = 120  # through 2020-05-20

# name, code, population, outbreak offset (days after START), base R0
COUNTRIES = [
    ("United States", "USA", 331_002_651, 18, 3.0),
    ("United Kingdom", "GBR", 67_886_011, 26, 2.9),
    ("Italy", "ITA", 60_461_826, 20, 3.1),
    ("France", "FRA", 65_273_511, 24, 2.8),
    ("Spain", "ESP", 46_754_778, 24, 3.2),
    ("Brazil", "BRA", 212_559_417, 34, 2.7),
    ("Belgium", "BEL", 11_589_623, 28, 2.9),
    ("Germany", "DEU", 83_783_942, 22, 2.7),
    ("Iran", "IRN", 83_992_949, 22, 2.6),
    ("Canada", "CAN", 37_742_154, 30, 2.5),
    ("Netherlands", "NLD", 17_134_872, 28, 2.8),
    ("Mexico", "MEX", 128_932_753, 36, 2.4),
    ("China", "CHN", 1_439_323_776, 0, 3.3),
    ("Turkey", "TUR", 84_339_067, 40, 3.0),
    ("Sweden", "SWE", 10_099_265, 28, 2.3),
    ("India", "IND", 1_380_004_385, 40, 2.2),
    ("Ecuador", "ECU", 17_643_054, 38, 2.6),
    ("Russia", "RUS", 145_934_462, 38, 2.7),
    ("Peru", "PER", 32_971_854, 40, 2.6),
    ("Switzerland", "CHE", 8_654_622, 28, 2.8),
    ("Portugal", "PRT", 10_196_709, 34, 2.6),
    ("Austria", "AUT", 9_006_398, 30, 2.9),
    ("Ireland", "IRL", 4_937_786, 34, 2.8),
    ("Israel", "ISR", 8_655_535, 32, 2.7),
    ("Japan", "JPN", 126_476_461, 14, 1.9),
    ("South Korea", "KOR", 51_269_185, 4, 2.6),
    ("Chile", "CHL", 19_116_201, 36, 2.7),
    ("Poland", "POL", 37_846_611, 38, 2.4),
    ("Romania", "ROU", 19_237_691, 38, 2.5),
    ("Denmark", "DNK", 5_792_202, 32, 2.6),
    ("Norway", "NOR", 5_421_241, 30, 2.5),
    ("Australia", "AUS", 25_499_884, 20, 2.3),
]
# Countries whose tracker coverage starts late: too short to be usable.
LATE_COVERAGE = [("Iceland", "ISL", 341_243, 88), ("Malta", "MLT", 441_543, 92)]
# Present in the tracker but absent from the population table.
NO_POPULATION = ("Kosovo", "RKS", 40)


def generation_weights(length=12, mean=5.0, sd=2.0):
    shape = (mean / sd) ** 2
    scale = sd**2 / mean
    s = np.arange(1, length + 1, dtype=float)
    w = s ** (shape - 1) * np.exp(-s / scale)
    return w / w.sum()


def npi_schedule(rng, outbreak, days):
    """Staged adoption a week or three after the outbreak, optional relaxation."""
    levels = np.zeros((days, 8), dtype=int)
    respond = outbreak + int(rng.integers(8, 26))
    strictness = rng.uniform(0.35, 1.0)
    targets = np.minimum(NPI_MAX, np.round(NPI_MAX * strictness * rng.uniform(0.6, 1.2, 8))).astype(int)
    relax_day = days - int(rng.integers(10, 30)) if rng.uniform() < 0.6 else days
    for k in range(8):
        onset = respond + int(rng.integers(-6, 10))
        steps = max(1, targets[k])
        for lvl in range(1, targets[k] + 1):
            day = onset + int((lvl - 1) * rng.integers(1, 5))
            if day < days:
                levels[max(day, 0):, k] = lvl
        if relax_day < days and targets[k] > 0:
            drop = int(rng.integers(0, steps + 1))
            levels[relax_day + int(rng.integers(0, 6)):, k] = max(0, targets[k] - drop)
    # International travel screening tends to come first.
    early = max(0, outbreak - int(rng.integers(0, 10)))
    levels[early:, 7] = np.maximum(levels[early:, 7], 1)
    return levels


def simulate(rng, population, outbreak, r0, days, levels):
    w = generation_weights()
    burn = 30
    total = days + burn
    lv = np.vstack([np.zeros((burn, 8), dtype=int), levels])
    infections = np.zeros(total)
    susceptible = float(population)
    lag = 4
    for t in range(total):
        day = t - burn
        imports = 0.0
        if outbreak - 8 <= day <= outbreak + 10:
            imports = rng.uniform(1.0, 6.0)
        past = infections[max(0, t - len(w)):t][::-1]
        pressure = float(np.dot(past, w[: len(past)]))
        eff = lv[max(0, t - lag)] / NPI_MAX
        damp = np.prod(1.0 - NPI_EFFECT * eff)
        rt = r0 * damp * susceptible / population
        lam = rt * pressure + imports
        new = float(rng.poisson(lam)) if lam < 1e6 else rng.normal(lam, np.sqrt(lam))
        new = min(max(new, 0.0), susceptible)
        infections[t] = new
        susceptible -= new
    delay = 6
    ascertain = rng.uniform(0.15, 0.5)
    weekend = rng.uniform(0.6, 1.0)
    reported = np.zeros(days)
    for d in range(days):
        src = d + burn - delay
        mean = ascertain * infections[src]
        if (START + dt.timedelta(days=d)).weekday() >= 5:
            mean *= weekend
        if mean <= 0:
            continue
        # Negative-binomial reporting noise (dispersion 50).
        k = 50.0
        reported[d] = rng.poisson(rng.gamma(k, mean / k))
    return reported.astype(np.int64)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--seed", type=int, default=2020)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)

    rows = []
    for name, code, pop, outbreak, r0 in COUNTRIES:
        levels = npi_schedule(rng, outbreak, DAYS)
        cases = simulate(rng, pop, outbreak, r0, DAYS, levels)
        cumulative = np.cumsum(cases)
        for d in range(DAYS):
            rows.append([name, code, d, levels[d].tolist(), int(cumulative[d])])

    for name, code, pop, first in LATE_COVERAGE:
        levels = npi_schedule(rng, first - 30, DAYS)
        cases = simulate(rng, pop, first - 30, 2.5, DAYS, levels)
        cumulative = np.cumsum(cases)
        for d in range(first, DAYS):
            rows.append([name, code, d, levels[d].tolist(), int(cumulative[d])])

    name, code, outbreak = NO_POPULATION
    levels = npi_schedule(rng, outbreak, DAYS)
    cases = simulate(rng, 1_800_000, outbreak, 2.5, DAYS, levels)
    cumulative = np.cumsum(cases)
    for d in range(DAYS):
        rows.append([name, code, d, levels[d].tolist(), int(cumulative[d])])

    # Tracker quirks: a dropped day, blank NPI cells, a downward revision.
    rows = [r for r in rows if not (r[0] == "Italy" and r[2] == 61)]
    for r in rows:
        if r[0] == "Germany" and r[2] in (70, 71):
            r[3][2] = None
        if r[0] == "France" and r[2] == 80:
            r[4] = max(0, r[4] - 400)

    with open(os.path.join(args.out, "oxcgrt_snapshot.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["CountryName", "CountryCode", "Date"] + NPI_COLUMNS + ["ConfirmedCases"])
        for name, code, d, lv, cum in rows:
            date = (START + dt.timedelta(days=d)).strftime("%Y%m%d")
            cells = ["" if v is None else f"{v:.1f}" for v in lv]
            wr.writerow([name, code, date] + cells + [f"{cum:.1f}"])

    with open(os.path.join(args.out, "population.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["country", "population"])
        for name, _, pop, *_ in COUNTRIES:
            wr.writerow([name, pop])
        for name, _, pop, _ in LATE_COVERAGE:
            wr.writerow([name, pop])


if __name__ == "__main__":
    main()
