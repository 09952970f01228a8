"""Writes synthetic_10k.csv: 10,000 BTS-style rows for December 2023.

Deterministic for a given seed. Column layout and number formats follow the
BTS on-time download (M/D/YYYY dates, minutes with two decimals, extra
columns and a trailing empty column).
"""
import random
import sys

SEED = 20231201
ROWS = 10_000

CARRIERS = ["WN", "AA", "DL", "UA", "B6", "AS", "NK", "F9", "G4", "HA", "MQ", "OO", "YX", "9E"]
AIRPORTS = [
    ("ATL", "GA"), ("DFW", "TX"), ("DEN", "CO"), ("ORD", "IL"), ("LAX", "CA"), ("JFK", "NY"),
    ("LAS", "NV"), ("MCO", "FL"), ("MIA", "FL"), ("CLT", "NC"), ("SEA", "WA"), ("PHX", "AZ"),
    ("EWR", "NJ"), ("SFO", "CA"), ("IAH", "TX"), ("BOS", "MA"), ("FLL", "FL"), ("MSP", "MN"),
    ("LGA", "NY"), ("DTW", "MI"), ("PHL", "PA"), ("SLC", "UT"), ("BWI", "MD"), ("DCA", "VA"),
    ("SAN", "CA"), ("HNL", "HI"), ("BNA", "TN"), ("AUS", "TX"), ("MDW", "IL"), ("PDX", "OR"),
]
HEADER = [
    "YEAR", "MONTH", "FL_DATE", "OP_CARRIER", "OP_CARRIER_FL_NUM", "ORIGIN", "ORIGIN_STATE_ABR",
    "DEST", "DEP_TIME", "DEP_DELAY", "ARR_DELAY", "CANCELLED", "CARRIER_DELAY", "WEATHER_DELAY",
    "NAS_DELAY", "SECURITY_DELAY", "LATE_AIRCRAFT_DELAY", "",
]


def minutes(v):
    return "" if v is None else f"{v:.2f}"


def row(rng):
    day = rng.randint(1, 31)
    carrier = rng.choice(CARRIERS)
    fl_num = rng.randint(1, 60)
    (origin, state), (dest, _) = rng.sample(AIRPORTS, 2)
    cancelled = rng.random() < 0.025
    dep = arr = None
    causes = [None] * 5
    if not cancelled:
        u = rng.random()
        if u < 0.02:
            dep = float(rng.choice([14, 15]))
        elif u < 0.62:
            dep = float(rng.randint(-15, 0))
        elif u < 0.82:
            dep = float(rng.randint(1, 14))
        else:
            dep = float(rng.randint(15, 300))
        arr = dep + rng.randint(-12, 12)
        if arr >= 15:
            parts = [0.0] * 5
            for _ in range(rng.randint(1, 3)):
                parts[rng.randrange(5)] += rng.randint(0, int(arr))
            if rng.random() < 0.05:
                parts[rng.randrange(5)] += 0.5
            causes = parts
    carrier_d, weather, nas, security, late = causes
    return [
        "2023", "12", f"12/{day}/2023 12:00:00 AM", carrier, str(fl_num), origin, state, dest,
        "" if cancelled else f"{rng.randint(5, 23):02d}{rng.randint(0, 59):02d}", minutes(dep), minutes(arr),
        "1.00" if cancelled else "0.00", minutes(carrier_d), minutes(weather), minutes(nas),
        minutes(security), minutes(late), "",
    ]


def main(path="synthetic_10k.csv"):
    rng = random.Random(SEED)
    with open(path, "w", newline="") as f:
        f.write(",".join(HEADER) + "\n")
        for _ in range(ROWS):
            f.write(",".join(row(rng)) + "\n")


if __name__ == "__main__":
    main(*sys.argv[1:])
