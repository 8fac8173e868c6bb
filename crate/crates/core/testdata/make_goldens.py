"""Writes the frozen reference values in v1/goldens.json.

Everything here is computed from first principles with numpy and the raw
element CSV, without touching the Rust code paths: brute-force periodic
image sums for the oracle, a dense grid search for the relaxation minimum,
rank counting for the k-hot bits and the closed-form cosine schedule.

Run from this directory: python3 make_goldens.py
"""

import csv
import itertools
import json
import math
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent

# default oracle parameters
CUTOFF = 6.0
PAIR_STRENGTH = 0.5
IONIC_WEIGHT = 1.0
GAP_OFFSET, GAP_IONIC, GAP_DENSITY = 0.5, 2.0, 8.0


def load_elements():
    rows = {}
    with open(HERE.parent / "data" / "elements.csv") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            z, sym, group, period, en, radius, states = next(csv.reader([line]))
            rows[sym] = dict(z=int(z), group=int(group), period=int(period), en=float(en), radius=float(radius))
    return rows


ELEMENTS = load_elements()
IMAGES = np.array(list(itertools.product(range(-3, 4), repeat=3)), dtype=float)


def min_image(lattice, fi, fj):
    """Shortest image distance by exhaustive search over 7^3 translations."""
    diffs = (np.asarray(fj) - np.asarray(fi))[None, :] + IMAGES
    return float(np.min(np.linalg.norm(diffs @ lattice, axis=1)))


def energy(lattice, species, frac):
    n = len(species)
    if n == 1:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = min_image(lattice, frac[i], frac[j])
            if d <= CUTOFF:
                a, b = ELEMENTS[species[i]], ELEMENTS[species[j]]
                r0 = a["radius"] + b["radius"]
                x6 = (r0 / d) ** 6
                total += PAIR_STRENGTH * (x6 * x6 - 2 * x6) - IONIC_WEIGHT * abs(a["en"] - b["en"]) / d
    return total / n


def gap(lattice, species, frac):
    n = len(species)
    diffs = [abs(ELEMENTS[species[i]]["en"] - ELEMENTS[species[j]]["en"]) for i in range(n) for j in range(i + 1, n)]
    mean = sum(diffs) / len(diffs) if diffs else 0.0
    density = n / abs(np.linalg.det(lattice))
    return max(GAP_OFFSET + GAP_IONIC * mean - GAP_DENSITY * density, 0.0)


FE2O3 = {
    "lattice": [[5.0, 0.0, 0.0], [0.0, 5.2, 0.0], [0.8, 0.0, 5.4]],
    "species": ["Fe", "Fe", "O", "O", "O"],
    "frac_coords": [[0.1, 0.2, 0.3], [0.9, 0.8, 0.7], [0.0, 0.5, 0.0], [0.6, 0.25, 0.1], [0.4, 0.75, 0.9]],
}

# NaCl pair in a cubic box; the energy depends only on the separation vector
PAIR = {"lattice": [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]], "species": ["Na", "Cl"]}


def pair_minimum(step=0.005):
    """Dense grid over Cl positions in the irreducible octant [0, 0.5]^3."""
    lat = np.array(PAIR["lattice"])
    grid = np.arange(0.0, 0.5 + 1e-12, step)
    best = (math.inf, None)
    for x in grid:
        for y in grid:
            for z in grid:
                if (x, y, z) == (0.0, 0.0, 0.0):
                    continue
                e = energy(lat, PAIR["species"], [[0, 0, 0], [x, y, z]])
                if e < best[0]:
                    best = (e, [x, y, z])
    return best


def rank_bin(v, values, bins):
    below = sum(1 for x in values if x < v)
    return min(bins * below // len(values), bins - 1)


def khot(symbol):
    ordered = sorted(ELEMENTS.values(), key=lambda r: r["z"])
    en = [r["en"] for r in ordered]
    radii = [r["radius"] for r in ordered]
    e = ELEMENTS[symbol]
    bits = [0] * 39
    bits[e["group"] - 1] = 1
    bits[18 + e["period"] - 1] = 1
    bits[25 + rank_bin(e["en"], en, 10)] = 1
    bits[35 + rank_bin(e["radius"], radii, 4)] = 1
    return bits


def alpha_bar(T, s, t):
    """Running product of clipped 1 - beta, as the schedule stores it."""
    f = lambda k: math.cos(((k / T + s) / (1 + s)) * math.pi / 2) ** 2
    prod = 1.0
    for k in range(1, t + 1):
        beta = min(max(1 - f(k) / f(k - 1), 1e-8), 0.999)
        prod *= 1 - beta
    return prod


def main():
    lat = np.array(FE2O3["lattice"])
    e_min, pos = pair_minimum()
    goldens = {
        "fe2o3_cell": FE2O3,
        "fe2o3_formation_energy": energy(lat, FE2O3["species"], FE2O3["frac_coords"]),
        "fe2o3_band_gap": gap(lat, FE2O3["species"], FE2O3["frac_coords"]),
        "nacl_pair_cell": PAIR,
        "nacl_pair_minimum_energy": e_min,
        "nacl_pair_minimum_frac": pos,
        "nacl_pair_grid_step": 0.005,
        "fe_khot": khot("Fe"),
        "o_khot": khot("O"),
        "alpha_bar_mid_T1000": alpha_bar(1000, 0.008, 500),
        "alpha_bar_closed_form_mid_T1000": (
            math.cos(((0.5 + 0.008) / 1.008) * math.pi / 2) ** 2 / math.cos((0.008 / 1.008) * math.pi / 2) ** 2
        ),
    }
    out = HERE / "v1" / "goldens.json"
    out.write_text(json.dumps(goldens, indent=1) + "\n")
    print(json.dumps({k: v for k, v in goldens.items() if not isinstance(v, (dict, list))}, indent=1))


if __name__ == "__main__":
    main()
