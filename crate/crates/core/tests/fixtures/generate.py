"""Regenerates the synthetic canonical dataset in ./eu.

Stocks are simulated per single age with known parameters and then reported
in ten-year groups, rounded to whole persons, the way a statistical office
publishes them. Run from this directory: python3 generate.py
"""

import csv
import math
import os

AGES = range(20, 80)
GROUPS = [("<25", 20, 25), ("25-34", 25, 35), ("35-44", 35, 45), ("45-54", 45, 55),
          ("55-64", 55, 65), ("65-74", 65, 75), ("75+", 75, 80)]
YEARS = range(2000, 2017)
SEXES = ("M", "F")

COUNTRIES = {
    # code: (p_enter, p_gp, gp_2000, sp_2000, graduates(year), migrants(year), break years)
    "AT": (0.75, 0.32, 11000.0, 19000.0,
           lambda y: 1450.0 - 12.0 * (y - 2000), lambda y: 180.0 + 3.0 * (y - 2000), []),
    "HR": (0.62, 0.21, 3000.0, 8500.0,
           lambda y: 620.0 + 6.0 * (y - 2000), lambda y: 40.0, [2005]),
}


def exit_rate(sex, age):
    centre = 64.0 if sex == "M" else 62.0
    return 0.003 + 0.25 / (1.0 + math.exp(-(age - centre) / 2.0))


def initial(total, sex):
    shape = {a: math.exp(-((a - 47.0) / 12.0) ** 2) for a in AGES}
    female = {a: min(0.65, max(0.15, 0.62 - 0.009 * (a - 25))) for a in AGES}
    weight = {a: shape[a] * (female[a] if sex == "F" else 1.0 - female[a]) for a in AGES}
    norm = sum(shape[a] for a in AGES)
    return {a: total * weight[a] / norm for a in AGES}


def simulate(p_enter, p_gp, gp0, sp0, grads, migr):
    fields = {"GP": p_gp, "SP": 1.0 - p_gp}
    start = {"GP": gp0, "SP": sp0}
    state = {(f, s): initial(start[f], s) for f in fields for s in SEXES}
    out = {2000: {k: dict(v) for k, v in state.items()}}
    for year in YEARS[1:]:
        y = grads(year) + migr(year)
        for (f, s), old in state.items():
            share = 0.55 if s == "F" else 0.45
            q = p_enter * fields[f]
            entry = {a: (q * y * share / 10.0 if 25 <= a <= 34 else 0.0) for a in AGES}
            new = {20: entry[20]}
            for a in AGES:
                if a + 1 in AGES:
                    new[a + 1] = (1.0 - exit_rate(s, a)) * old[a] + entry[a + 1]
            state[(f, s)] = new
        out[year] = {k: dict(v) for k, v in state.items()}
    return out


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    os.makedirs("eu", exist_ok=True)
    stock_rows, inflow_rows, pop_rows = [], [], []
    for code, (pe, pgp, gp0, sp0, grads, migr, breaks) in COUNTRIES.items():
        sim = simulate(pe, pgp, gp0, sp0, grads, migr)
        for year in YEARS:
            flag = "b" if year in breaks else ""
            for f in ("GP", "SP"):
                for s in SEXES:
                    ages = sim[year][(f, s)]
                    for label, lo, hi in GROUPS:
                        count = round(sum(ages[a] for a in range(lo, hi)))
                        stock_rows.append([code, year, f, "", s, label, count, flag])
            inflow_rows.append([code, year, "GRAD", round(grads(year))])
            inflow_rows.append([code, year, "MIGR", round(migr(year))])

    # totals-only country
    for year in YEARS:
        stock_rows.append(["LU", year, "GP", "", "", "", 480 + 4 * (year - 2000), ""])
        stock_rows.append(["LU", year, "SP", "", "", "", 1050 + 25 * (year - 2000), ""])
        inflow_rows.append(["LU", year, "GRAD", 0])
        inflow_rows.append(["LU", year, "MIGR", 70 + 2 * (year - 2000)])

    growth = {"AT": (8.74e6, {"baseline": 0.004, "low": 0.001, "high": 0.007}),
              "HR": (4.15e6, {"baseline": -0.005, "low": -0.009, "high": -0.002}),
              "LU": (5.8e5, {"baseline": 0.012, "low": 0.006, "high": 0.018})}
    for code, (p2016, rates) in growth.items():
        for scenario, r in rates.items():
            for year in range(2016, 2041):
                pop_rows.append([code, scenario, year, round(p2016 * (1.0 + r) ** (year - 2016))])

    split_rows = []
    at_split = {
        2012: {"GP": (4100, 1300, 1150), "SP": (5900, 11800, 4300)},
        2016: {"GP": (4000, 1250, 1450), "SP": (5700, 12300, 5100)},
    }
    for year, profs in at_split.items():
        for prof, counts in profs.items():
            for sector, c in zip(("CON", "EMP", "NON"), counts):
                split_rows.append(["AT", year, prof, sector, c])

    write("eu/stocks.csv", ["country", "year", "field", "sector", "sex", "age_group", "count", "flags"],
          stock_rows)
    write("eu/inflow.csv", ["country", "year", "source", "count"], inflow_rows)
    write("eu/population.csv", ["country", "scenario", "year", "population"], pop_rows)
    write("eu/sector_split.csv", ["country", "year", "profession", "sector", "count"], split_rows)


if __name__ == "__main__":
    main()
