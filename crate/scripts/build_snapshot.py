#!/usr/bin/env python3
"""Rebuild the bundled Texas data snapshot under data/.

Deterministic: the same script always writes byte-identical files.
See data/README.md for what is reconstructed and what is approximate.
"""

import csv
import json
import math
from datetime import date, timedelta
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
SEED = 20200826

WARNED_TOTAL = 6_016_750

MANDATORY = [
    "Jefferson", "Orange", "Chambers", "Galveston", "Hardin", "Jasper",
    "Newton", "Tyler", "Sabine", "Liberty", "San Jacinto",
]
VOLUNTARY = ["Harris", "Brazoria", "Polk"]

# Surge-zone population per county, split across zones 1..5.
ZONE_POPULATION = {
    "Galveston": (230_000, (0.22, 0.24, 0.21, 0.17, 0.16)),
    "Jefferson": (118_000, (0.18, 0.22, 0.22, 0.19, 0.19)),
    "Orange": (73_000, (0.45, 0.35, 0.15, 0.05, 0.00)),
    "Chambers": (28_000, (0.20, 0.25, 0.25, 0.15, 0.15)),
    "Liberty": (9_000, (0.00, 0.10, 0.25, 0.30, 0.35)),
    "Hardin": (5_473, (0.00, 0.00, 0.20, 0.35, 0.45)),
    "Harris": (580_000, (0.50, 0.25, 0.12, 0.08, 0.05)),
    "Brazoria": (127_224, (0.45, 0.27, 0.13, 0.09, 0.06)),
}
MANDATORY_ZONE_TOTAL = 463_473
VOLUNTARY_ZONE_TOTAL = 707_224

DISTRICTS = {
    "ABL": ["Borden", "Callahan", "Fisher", "Haskell", "Howard", "Jones", "Kent", "Mitchell",
            "Nolan", "Scurry", "Shackelford", "Stonewall", "Taylor"],
    "AMA": ["Armstrong", "Carson", "Dallam", "Deaf Smith", "Gray", "Hansford", "Hartley", "Hemphill",
            "Hutchinson", "Lipscomb", "Moore", "Ochiltree", "Oldham", "Potter", "Randall", "Roberts",
            "Sherman"],
    "ATL": ["Bowie", "Camp", "Cass", "Harrison", "Marion", "Morris", "Panola", "Titus", "Upshur"],
    "AUS": ["Bastrop", "Blanco", "Burnet", "Caldwell", "Gillespie", "Hays", "Lee", "Llano", "Mason",
            "Travis", "Williamson"],
    "BMT": ["Chambers", "Hardin", "Jasper", "Jefferson", "Liberty", "Newton", "Orange", "Tyler"],
    "BRY": ["Brazos", "Burleson", "Freestone", "Grimes", "Leon", "Madison", "Milam", "Robertson",
            "Walker", "Washington"],
    "BWD": ["Brown", "Coleman", "Comanche", "Eastland", "Lampasas", "McCulloch", "Mills", "San Saba",
            "Stephens"],
    "CHS": ["Briscoe", "Childress", "Collingsworth", "Cottle", "Dickens", "Donley", "Foard", "Hall",
            "Hardeman", "King", "Knox", "Motley", "Wheeler"],
    "CRP": ["Aransas", "Bee", "Goliad", "Jim Wells", "Karnes", "Kleberg", "Live Oak", "Nueces",
            "Refugio", "San Patricio"],
    "DAL": ["Collin", "Dallas", "Denton", "Ellis", "Kaufman", "Navarro", "Rockwall"],
    "ELP": ["Brewster", "Culberson", "El Paso", "Hudspeth", "Jeff Davis", "Presidio"],
    "FTW": ["Erath", "Hood", "Jack", "Johnson", "Palo Pinto", "Parker", "Somervell", "Tarrant", "Wise"],
    "HOU": ["Brazoria", "Fort Bend", "Galveston", "Harris", "Montgomery", "Waller"],
    "LBB": ["Bailey", "Castro", "Cochran", "Crosby", "Dawson", "Floyd", "Gaines", "Garza", "Hale",
            "Hockley", "Lamb", "Lubbock", "Lynn", "Parmer", "Swisher", "Terry", "Yoakum"],
    "LFK": ["Angelina", "Houston", "Nacogdoches", "Polk", "Sabine", "San Augustine", "San Jacinto",
            "Shelby", "Trinity"],
    "LRD": ["Dimmit", "Duval", "Jim Hogg", "Kinney", "La Salle", "Maverick", "Val Verde", "Webb",
            "Zapata", "Zavala"],
    "ODA": ["Andrews", "Crane", "Ector", "Loving", "Martin", "Midland", "Pecos", "Reeves", "Terrell",
            "Upton", "Ward", "Winkler"],
    "PAR": ["Delta", "Fannin", "Franklin", "Grayson", "Hopkins", "Hunt", "Lamar", "Rains", "Red River"],
    "PHR": ["Brooks", "Cameron", "Hidalgo", "Kenedy", "Starr", "Willacy"],
    "SAT": ["Atascosa", "Bandera", "Bexar", "Comal", "Frio", "Guadalupe", "Kendall", "Kerr",
            "McMullen", "Medina", "Uvalde", "Wilson"],
    "SJT": ["Coke", "Concho", "Crockett", "Edwards", "Glasscock", "Irion", "Kimble", "Menard",
            "Reagan", "Real", "Runnels", "Schleicher", "Sterling", "Sutton", "Tom Green"],
    "TYL": ["Anderson", "Cherokee", "Gregg", "Henderson", "Rusk", "Smith", "Van Zandt", "Wood"],
    "WAC": ["Bell", "Bosque", "Coryell", "Falls", "Hamilton", "Hill", "Limestone", "McLennan"],
    "WFS": ["Archer", "Baylor", "Clay", "Cooke", "Montague", "Throckmorton", "Wichita", "Wilbarger",
            "Young"],
    "YKM": ["Austin", "Calhoun", "Colorado", "DeWitt", "Fayette", "Gonzales", "Jackson", "Lavaca",
            "Matagorda", "Victoria", "Wharton"],
}

# Approximate non-Hispanic white share by district, with metro overrides.
PCT_WHITE_DISTRICT = {
    "ABL": 0.65, "AMA": 0.60, "ATL": 0.68, "AUS": 0.62, "BMT": 0.58, "BRY": 0.58, "BWD": 0.74,
    "CHS": 0.70, "CRP": 0.38, "DAL": 0.55, "ELP": 0.22, "FTW": 0.74, "HOU": 0.50, "LBB": 0.50,
    "LFK": 0.68, "LRD": 0.10, "ODA": 0.42, "PAR": 0.74, "PHR": 0.07, "SAT": 0.55, "SJT": 0.52,
    "TYL": 0.66, "WAC": 0.60, "WFS": 0.74, "YKM": 0.56,
}
PCT_WHITE_OVERRIDE = {
    "Harris": 0.29, "Dallas": 0.29, "Bexar": 0.27, "Travis": 0.49, "Tarrant": 0.46,
    "Fort Bend": 0.32, "Collin": 0.56, "Denton": 0.60, "El Paso": 0.12, "Hidalgo": 0.06,
    "Cameron": 0.10, "Webb": 0.04, "Nueces": 0.31, "Jefferson": 0.40, "Galveston": 0.57,
    "Brazoria": 0.47, "Montgomery": 0.63, "Williamson": 0.57, "Hays": 0.53,
}

# Mid-bound prevalence per 10,000 (detection 1/5) targeted by the case series.
PREVALENCE_OVERRIDE = {
    "Harris": 68.0, "Galveston": 61.0, "Brazoria": 64.0, "Jefferson": 57.0, "Orange": 55.0,
    "Chambers": 56.0, "Liberty": 52.0, "Hardin": 50.0, "Jasper": 48.0, "Newton": 45.0,
    "Tyler": 47.0, "Sabine": 44.0, "San Jacinto": 49.0, "Polk": 51.0,
}
AS_OF = date(2020, 8, 26)
WINDOW = 10


def load_table():
    rows = []
    with open(ROOT / "scripts" / "texas_counties.tsv") as f:
        for r in csv.DictReader(f, delimiter="\t"):
            rows.append({
                "name": r["name"],
                "population": int(r["population"]),
                "lat": float(r["lat"]),
                "lon": float(r["lon"]),
                "msa": int(r["msa"]),
                "interstate": int(r["interstate"]),
            })
    assert len(rows) == 254
    # Census FIPS codes are the odd numbers in alphabetical (Census) order.
    for i, r in enumerate(rows):
        r["fips"] = f"48{2 * i + 1:03d}"
    by = {r["name"]: r for r in rows}
    for name, fips in [("Bexar", "48029"), ("Dallas", "48113"), ("El Paso", "48141"),
                       ("Galveston", "48167"), ("Harris", "48201"), ("Jefferson", "48245"),
                       ("Orange", "48361"), ("Tarrant", "48439"), ("Travis", "48453"),
                       ("Zavala", "48507")]:
        assert by[name]["fips"] == fips, (name, by[name]["fips"])

    warned = MANDATORY + VOLUNTARY
    others = sum(by[n]["population"] for n in warned if n != "Harris")
    by["Harris"]["population"] = WARNED_TOTAL - others

    district_of = {}
    for d, names in DISTRICTS.items():
        for n in names:
            assert n in by, n
            assert n not in district_of, n
            district_of[n] = d
    assert len(district_of) == 254, 254 - len(district_of)
    for r in rows:
        r["district"] = district_of[r["name"]]
        r["pct_white"] = PCT_WHITE_OVERRIDE.get(r["name"], PCT_WHITE_DISTRICT[r["district"]])
        r["hotels"] = int(round(2 + r["population"] / 2500 + 8 * r["interstate"] + 4 * r["msa"]))
    return rows, by


def split_integer(total, parts, rng):
    """Random positive integers summing exactly to total."""
    if parts <= 0:
        return []
    w = rng.gamma(4.0, size=parts)
    raw = w / w.sum() * total
    base = np.floor(raw).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    if (base <= 0).any():
        base = np.full(parts, total // parts)
        base[: total - base.sum()] += 1
    return [int(x) for x in base]


def zone_targets(total, shares):
    raw = [total * s for s in shares]
    out = [int(math.floor(x)) for x in raw]
    rem = total - sum(out)
    order = sorted(range(5), key=lambda i: -(raw[i] - out[i]))
    for i in order[:rem]:
        out[i] += 1
    return out


def build_block_groups(rows, rng):
    cbgs = []
    for r in rows:
        pop = r["population"]
        pieces = []
        zone_total = 0
        if r["name"] in ZONE_POPULATION:
            total, shares = ZONE_POPULATION[r["name"]]
            for z, t in enumerate(zone_targets(total, shares), start=1):
                if t == 0:
                    continue
                n = max(1, round(t / 1500))
                pieces += [(p, z) for p in split_integer(t, n, rng)]
            zone_total = total
        rest = pop - zone_total
        assert rest >= 0, r["name"]
        if rest > 0:
            n = max(1, round(rest / 1500))
            pieces += [(p, None) for p in split_integer(rest, n, rng)]
        for i, (p, z) in enumerate(pieces):
            tract = 100 + i // 4
            bg = i % 4 + 1
            # surge-zone groups sit on the coastal (south-east) side
            shift = 0.05 if z is not None else 0.0
            lat = r["lat"] + rng.normal(0, 0.07) - shift
            lon = r["lon"] + rng.normal(0, 0.07) + shift
            cbgs.append({
                "geoid": f"{r['fips']}{tract:06d}{bg}",
                "county_fips": r["fips"],
                "population": p,
                "lat": round(lat, 5),
                "lon": round(lon, 5),
                "risk_zone": "" if z is None else str(z),
            })
    return cbgs


def build_cases(rows, rng):
    out = []
    start = date(2020, 8, 1)
    days = [start + timedelta(d) for d in range(31)]
    for r in rows:
        mid = PREVALENCE_OVERRIDE.get(r["name"])
        if mid is None:
            base = {"PHR": 110.0, "LRD": 95.0, "CRP": 90.0, "ELP": 55.0}.get(r["district"], 45.0)
            mid = float(base * rng.lognormal(0.0, 0.3))
        # window reports = mid * detection * population / 10,000
        window_total = int(round(mid * 0.2 * r["population"] / 1e4))
        per_day = split_integer(window_total, WINDOW, rng) if window_total >= WINDOW else (
            [0] * (WINDOW - window_total) + [1] * window_total)
        window_days = [AS_OF - timedelta(WINDOW - 1 - i) for i in range(WINDOW)]
        daily = dict(zip(window_days, per_day))
        rate = window_total / WINDOW
        for d in days:
            if d in daily:
                n = daily[d]
            else:
                n = int(rng.poisson(rate)) if rate > 0 else 0
            out.append((r["fips"], d.isoformat(), n))
    return out


# Target cell means on the logit scale: intercept is zone 0 at category 0.
ALPHA = -1.10
BETA_ZONE = [0.0, -0.35, -1.10, -1.65, -2.08, -2.40]
BETA_INT = [0.0, 0.60, 1.50, 2.60, 4.35, 4.95]

# Beta precision of the reconstructed observations around the cell means.
OBS_PRECISION = 20.0

# (zone, category, kind) design; 30 observed and 15 intended responses.
DESIGN = (
    [(z, h, "observed") for z, h in [
        (0, 0), (0, 2), (0, 4), (0, 5), (1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5),
        (2, 0), (2, 1), (2, 3), (2, 4), (2, 5), (3, 0), (3, 2), (3, 3), (3, 4), (3, 5),
        (4, 0), (4, 1), (4, 3), (4, 4), (4, 5), (5, 0), (5, 2), (5, 3), (5, 4), (5, 5)]]
    + [(z, h, "intended") for z, h in [
        (0, 1), (0, 3), (1, 2), (1, 4), (2, 2), (2, 4), (3, 1), (3, 3),
        (4, 2), (4, 4), (5, 1), (5, 3), (1, 0), (3, 0), (5, 4)]]
)


def build_observations(rng):
    out = []
    n_obs = n_int = 0
    for z, h, kind in DESIGN:
        mu = 1 / (1 + math.exp(-(ALPHA + BETA_ZONE[z] + BETA_INT[h])))
        rate = float(rng.beta(mu * OBS_PRECISION, (1 - mu) * OBS_PRECISION))
        rate = min(max(rate, 0.001), 0.999)
        if kind == "observed":
            n_obs += 1
            study = f"obs-{n_obs:02d}"
        else:
            n_int += 1
            study = f"int-{n_int:02d}"
        out.append((study, round(rate, 3), z, h, kind))
    assert n_obs == 30 and n_int == 15
    return out


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    rng = np.random.default_rng(SEED)
    rows, by = load_table()
    DATA.mkdir(exist_ok=True)

    write_csv(DATA / "counties.csv",
              ["fips", "name", "district_id", "population", "lat", "lon", "hotel_count",
               "msa_flag", "interstate_flag", "pct_white"],
              [(r["fips"], r["name"], r["district"], r["population"], r["lat"], r["lon"],
                r["hotels"], r["msa"], r["interstate"], r["pct_white"]) for r in rows])
    write_csv(DATA / "districts.csv", ["fips", "district_id"],
              [(r["fips"], r["district"]) for r in rows])

    cbgs = build_block_groups(rows, rng)
    write_csv(DATA / "cbg.csv", ["geoid", "county_fips", "population", "lat", "lon", "risk_zone"],
              [(c["geoid"], c["county_fips"], c["population"], c["lat"], c["lon"], c["risk_zone"])
               for c in cbgs])

    write_csv(DATA / "cases.csv", ["fips", "date", "new_cases"], build_cases(rows, rng))
    write_csv(DATA / "evac_observations.csv", ["study", "rate", "zone", "category", "source_kind"],
              build_observations(rng))

    # consistency checks on the published aggregates
    fips_of = {r["name"]: r["fips"] for r in rows}
    mand = {fips_of[n] for n in MANDATORY}
    vol = {fips_of[n] for n in VOLUNTARY}
    zm = sum(c["population"] for c in cbgs if c["risk_zone"] and c["county_fips"] in mand)
    zv = sum(c["population"] for c in cbgs if c["risk_zone"] and c["county_fips"] in vol)
    assert zm == MANDATORY_ZONE_TOTAL, zm
    assert zv == VOLUNTARY_ZONE_TOTAL, zv
    assert sum(by[n]["population"] for n in MANDATORY + VOLUNTARY) == WARNED_TOTAL

    manifest = {
        "generator": "scripts/build_snapshot.py",
        "seed": SEED,
        "vintages": {
            "counties": "approximate 2019 county population estimates; reconstructed",
            "cbg": "synthetic block groups calibrated to county totals and surge-zone populations",
            "districts": "TxDOT district membership",
            "cases": "synthetic daily reports, August 2020",
            "evac_observations": "reconstructed 45-entry dataset (30 observed, 15 intended)",
        },
        "counts": {
            "counties": len(rows),
            "block_groups": len(cbgs),
            "case_rows": 254 * 31,
            "observations": 45,
        },
        "laura": {
            "warned_population": WARNED_TOTAL,
            "mandatory_zone_population": MANDATORY_ZONE_TOTAL,
            "voluntary_zone_population": VOLUNTARY_ZONE_TOTAL,
            "mandatory": sorted(mand),
            "voluntary": sorted(vol),
        },
    }
    (DATA / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"counties={len(rows)} cbgs={len(cbgs)} harris={by['Harris']['population']}")


if __name__ == "__main__":
    main()
