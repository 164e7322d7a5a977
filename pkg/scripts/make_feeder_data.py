"""Generate the shipped 13-bus synthetic feeder and its scenario files.

Writes feeder13.json, history.csv and scenarios20.csv into src/dgplan/data.
Deterministic; rerunning reproduces the same bytes.
"""

import csv
import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "dgplan" / "data"

S_BASE_KVA = 1500.0
V_BASE_KV = 4.16

# self and mutual impedance per km for the two conductor classes, ohms
TRUNK_R, TRUNK_X, TRUNK_RM, TRUNK_XM = 0.19, 0.40, 0.06, 0.13
LAT_R, LAT_X, LAT_RM, LAT_XM = 0.30, 0.36, 0.08, 0.11


def zmat(phases, km, r_s, x_s, r_m, x_m):
    """Full 3x3 impedance blocks; rows for absent phases stay zero."""
    idx = ["abc".index(p) for p in phases]
    r = np.zeros((3, 3))
    x = np.zeros((3, 3))
    for i in idx:
        for j in idx:
            if i == j:
                r[i, j], x[i, j] = r_s * km, x_s * km
            else:
                r[i, j], x[i, j] = r_m * km, x_m * km
    return r, x


BUSES = [
    ("n01", "abc", [0, 0, 0], [0, 0, 0]),
    ("n02", "abc", [40, 45, 35], [16, 18, 14]),
    ("n03", "abc", [50, 40, 45], [20, 16, 18]),
    ("n04", "abc", [35, 50, 40], [14, 20, 16]),
    ("n05", "abc", [45, 35, 50], [18, 14, 20]),
    ("n06", "abc", [30, 30, 35], [12, 12, 14]),
    ("n07", "ab", [60, 55], [24, 22]),
    ("n08", "b", [70], [28]),
    ("n09", "c", [80], [32]),
    ("n10", "abc", [25, 30, 25], [10, 12, 10]),
    ("n11", "a", [65], [26]),
    ("n12", "bc", [45, 50], [18, 20]),
    ("n13", "abc", [40, 35, 30], [16, 14, 12]),
]

# from, to, length km, conductor class, rating kVA
LINES = [
    ("n01", "n02", 0.60, "trunk", 900),
    ("n02", "n03", 0.55, "trunk", 800),
    ("n03", "n04", 0.50, "trunk", 700),
    ("n04", "n05", 0.45, "trunk", 600),
    ("n05", "n06", 0.40, "trunk", 500),
    ("n02", "n07", 0.50, "lateral", 400),
    ("n07", "n08", 0.45, "lateral", 300),
    ("n03", "n09", 0.55, "lateral", 300),
    ("n04", "n10", 0.40, "lateral", 400),
    ("n10", "n11", 0.35, "lateral", 300),
    ("n05", "n12", 0.45, "lateral", 350),
    ("n06", "n13", 0.40, "lateral", 400),
]


def write_feeder(path):
    by_id = {b[0]: b for b in BUSES}
    lines = []
    for frm, to, km, kind, rating in LINES:
        phases = by_id[to][1]
        if kind == "trunk":
            r, x = zmat(phases, km, TRUNK_R, TRUNK_X, TRUNK_RM, TRUNK_XM)
        else:
            r, x = zmat(phases, km, LAT_R, LAT_X, LAT_RM, LAT_XM)
        lines.append({
            "from": frm, "to": to,
            "r_ohm": [[round(v, 6) for v in row] for row in r.tolist()],
            "x_ohm": [[round(v, 6) for v in row] for row in x.tolist()],
            "rating_kva": rating,
        })
    doc = {
        "s_base_kva": S_BASE_KVA,
        "v_base_kv": V_BASE_KV,
        "substation": "n01",
        "voltage_bounds": [0.81, 1.21],
        "buses": [
            {"id": bid, "phases": ph, "load_kw": kw, "load_kvar": kvar}
            for bid, ph, kw, kvar in BUSES
        ],
        "lines": lines,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_history(path, days=14, seed=20240301):
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "hour", "load_multiplier", "pv_multiplier"])
        for d in range(days):
            day_scale = 1.0 + 0.05 * rng.standard_normal()
            cloud = rng.uniform(0.45, 1.0)
            for h in range(24):
                load = (0.68
                        + 0.20 * np.exp(-((h - 8.0) / 2.5) ** 2)
                        + 0.42 * np.exp(-((h - 19.0) / 3.0) ** 2))
                load *= day_scale
                if 6 <= h <= 18:
                    pv = 0.92 * cloud * np.sin(np.pi * (h - 6.0) / 12.0)
                else:
                    pv = 0.0
                w.writerow([d, h, f"{load:.6f}", f"{max(pv, 0.0):.6f}"])


def write_scenarios(path, seed=20240302, count=20):
    """Peak-condition scenario table over the feeder buses.

    The stratified hourly reduction needs a multiple of 24, so this
    fixed 20-scenario set is drawn directly around the evening peak.
    """
    rng = np.random.default_rng(seed)
    bus_ids = [b[0] for b in BUSES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "probability", "bus",
                    "load_multiplier", "pv_multiplier"])
        for i in range(count):
            base_load = rng.uniform(0.9, 1.1)
            base_pv = rng.uniform(0.25, 0.85)
            for b in bus_ids:
                if b == "n01":
                    ld, pv = 1.0, 1.0
                else:
                    ld = max(0.0, base_load * (1.0 + 0.05 * rng.standard_normal()))
                    pv = min(1.5, max(0.0, base_pv * (1.0 + 0.10 * rng.standard_normal())))
                w.writerow([f"s{i:02d}", f"{1.0 / count:.17g}", b,
                            f"{ld:.6f}", f"{pv:.6f}"])


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write_feeder(OUT / "feeder13.json")
    write_history(OUT / "history.csv")
    write_scenarios(OUT / "scenarios20.csv")
    print(f"wrote feeder13.json, history.csv, scenarios20.csv to {OUT}")
