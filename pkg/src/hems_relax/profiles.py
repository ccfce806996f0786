"""Per-house profile tables: CSV I/O, synthetic generation, AUSGRID conversion.

Profile CSV header (exact): ``k,d_kw,r_kw,p_buy,p_sell,theta_ex_c``.
Floats are written with 17 significant digits so a write/read round trip is
lossless.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

COLUMNS = ("k", "d_kw", "r_kw", "p_buy", "p_sell", "theta_ex_c")


class ProfileError(ValueError):
    """Malformed profile input; messages carry file line numbers."""


def fmt(value: float) -> str:
    return "%.17g" % value


@dataclass(frozen=True, eq=False)
class ProfileTable:
    house_id: str
    d_kw: np.ndarray
    r_kw: np.ndarray
    p_buy: np.ndarray
    p_sell: np.ndarray
    theta_ex_c: np.ndarray

    @property
    def K(self) -> int:
        return self.d_kw.size

    def rows(self) -> Iterable[tuple]:
        for k in range(self.K):
            yield (k, self.d_kw[k], self.r_kw[k], self.p_buy[k], self.p_sell[k],
                   self.theta_ex_c[k])


def write_profiles(table: ProfileTable, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in table.rows():
            w.writerow([row[0]] + [fmt(v) for v in row[1:]])
    return path


def load_profiles(path, K: Optional[int] = None, house_id: Optional[str] = None) -> ProfileTable:
    """Parse and check a profile CSV.

    Raises :class:`ProfileError` naming the missing column, or the line of the
    first malformed row, or the row-count mismatch against ``K``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ProfileError(f"{path}: empty file") from None
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise ProfileError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {c: header.index(c) for c in COLUMNS}
        data = {c: [] for c in COLUMNS}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for c in COLUMNS:
                try:
                    cell = row[pos[c]].strip()
                except IndexError:
                    raise ProfileError(f"{path}:{line}: missing value for {c}") from None
                try:
                    value = int(cell) if c == "k" else float(cell)
                except ValueError:
                    raise ProfileError(f"{path}:{line}: non-numeric {c}={cell!r}") from None
                if c != "k" and not math.isfinite(value):
                    raise ProfileError(f"{path}:{line}: non-finite {c}")
                data[c].append(value)
    if data["k"] != list(range(len(data["k"]))):
        raise ProfileError(f"{path}: k must run contiguously from 0")
    if not data["k"]:
        raise ProfileError(f"{path}: no data rows")
    if K is not None and len(data["k"]) != K:
        raise ProfileError(f"{path}: {len(data['k'])} rows but K={K}")
    arr = {c: np.array(data[c], dtype=float) for c in COLUMNS[1:]}
    return ProfileTable(house_id or path.stem, **arr)


# --------------------------------------------------------------------------
# synthetic houses
# --------------------------------------------------------------------------

# three-level summer weekday time-of-use tariff, currency/kWh
OFF_PEAK, SHOULDER, PEAK = 0.15, 0.25, 0.55
FEED_IN = 0.08


def tou_tariff(K: int) -> tuple[np.ndarray, np.ndarray]:
    hour = np.arange(K) * 24.0 / K
    p = np.full(K, OFF_PEAK)
    p[(hour >= 7) & (hour < 22)] = SHOULDER
    p[(hour >= 14) & (hour < 20)] = PEAK
    return p, np.full(K, FEED_IN)


def external_temperature(K: int) -> np.ndarray:
    """Daily sinusoid between 22 and 35 degC, coolest at 03:00."""
    hour = np.arange(K) * 24.0 / K
    return 22.0 + 13.0 * 0.5 * (1.0 - np.cos(2 * np.pi * (hour - 3.0) / 24.0))


def synth_houses(seed: int, n_houses: int, K: int = 24) -> list[ProfileTable]:
    """Deterministic synthetic households with morning/evening demand peaks and midday PV."""
    if n_houses < 1:
        raise ValueError("n_houses must be >= 1")
    rng = np.random.default_rng(seed)
    hour = np.arange(K) * 24.0 / K
    p, s = tou_tariff(K)
    theta = external_temperature(K)
    out = []
    for i in range(n_houses):
        base = rng.uniform(0.2, 0.5)
        am_amp, am_at = rng.uniform(0.4, 1.2), rng.uniform(6.5, 8.5)
        pm_amp, pm_at = rng.uniform(1.0, 2.4), rng.uniform(17.5, 20.0)
        noise = rng.normal(0.0, 0.05, K)
        d = (base + am_amp * np.exp(-0.5 * ((hour - am_at) / 1.2) ** 2)
             + pm_amp * np.exp(-0.5 * ((hour - pm_at) / 1.8) ** 2) + noise)
        d = np.clip(d, 0.2, 3.0)
        capacity = rng.uniform(1.0, 4.0)
        cloud = rng.uniform(0.7, 1.0, K)
        sun = np.clip(np.sin(np.pi * (hour - 6.0) / 13.0), 0.0, None) ** 1.2
        r = np.clip(capacity * sun * cloud, 0.0, 4.0)
        out.append(ProfileTable(f"house_{i:03d}", d, r, p.copy(), s.copy(), theta.copy()))
    return out


def write_houses(tables: Iterable[ProfileTable], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [write_profiles(t, out_dir / f"{t.house_id}.csv") for t in tables]


def load_profile_dir(path, K: Optional[int] = None) -> list[ProfileTable]:
    return [load_profiles(f, K) for f in sorted(Path(path).glob("*.csv"))]


# --------------------------------------------------------------------------
# AUSGRID solar home data
# --------------------------------------------------------------------------

# Half-hourly AUSGRID "Solar home electricity data" rows carry
#   Customer, Generator Capacity, Postcode, Consumption Category, date,
#   0:30, 1:00, ..., 23:30, 0:00[, Row Quality]
# in kWh per half hour. Categories: GC general consumption, CL controlled
# load, GG gross generation. Mapping onto a profile table:
#   d_kw = GC + CL,  r_kw = GG,  hourly mean power = e(h:30) + e(h+1:00).
# Tariff and external temperature are not in the dataset; the synthetic
# time-of-use tariff and temperature sinusoid are used.
AUSGRID_DEMAND = ("GC", "CL")
AUSGRID_GENERATION = ("GG",)


def _hourly_power(half_hours: list[float]) -> np.ndarray:
    e = np.asarray(half_hours, dtype=float)
    return e[0::2] + e[1::2]


def convert_ausgrid(path, out_dir) -> list[Path]:
    """Split an AUSGRID half-hourly file into one 24-step profile per customer-day."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    start = next((i for i, r in enumerate(rows) if r and r[0].strip() == "Customer"), None)
    if start is None:
        raise ProfileError(f"{path}: no 'Customer' header row found")
    header = [h.strip() for h in rows[start]]
    try:
        cat_col = header.index("Consumption Category")
        date_col = header.index("date")
    except ValueError as exc:
        raise ProfileError(f"{path}: {exc}") from None
    first = date_col + 1
    energy: dict[tuple[str, str], dict[str, np.ndarray]] = defaultdict(dict)
    for line, row in enumerate(rows[start + 1:], start=start + 2):
        if not row or not row[0].strip():
            continue
        try:
            values = [float(v) for v in row[first:first + 48]]
        except ValueError:
            raise ProfileError(f"{path}:{line}: non-numeric half-hour reading") from None
        if len(values) != 48:
            raise ProfileError(f"{path}:{line}: expected 48 half-hour readings")
        raw_date = row[date_col].strip()
        try:
            day = datetime.strptime(raw_date, "%d/%m/%Y").strftime("%Y%m%d")
        except ValueError:
            day = "".join(ch for ch in raw_date if ch.isalnum())
        energy[(row[0].strip(), day)][row[cat_col].strip()] = _hourly_power(values)
    p, s = tou_tariff(24)
    theta = external_temperature(24)
    tables = []
    for (customer, day), cats in sorted(energy.items()):
        d = sum((cats[c] for c in AUSGRID_DEMAND if c in cats), np.zeros(24))
        r = sum((cats[c] for c in AUSGRID_GENERATION if c in cats), np.zeros(24))
        tables.append(ProfileTable(f"{customer}_{day}", d, r, p.copy(), s.copy(), theta.copy()))
    return write_houses(tables, out_dir)
