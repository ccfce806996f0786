"""Scenario parameter files.

INI-style key/value file whose sections mirror the domain types::

    [horizon]
    dt = 1.0
    K = 24            ; optional, checked against the profile length

    [battery]
    u_ch_max = 3
    u_dch_max = 3
    eta_ch = 0.9
    ...

    [tcl]             ; theta_ex comes from the profile table
    [nd_load]
    [reg]
    [tariff]
    currency = AUD    ; echoed in reports

    [data]
    profiles = house.csv   ; relative to the config file

Absent ``battery``/``tcl``/``nd_load`` sections mean the component is absent.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .model import (
    BatteryParams,
    Horizon,
    HouseholdScenario,
    NonDynLoadParams,
    RegularizationParams,
    Tariff,
    TclParams,
)
from .profiles import ProfileTable


class ConfigError(ValueError):
    pass


_TCL_FIELDS = tuple(f.name for f in fields(TclParams) if f.name != "theta_ex")


@dataclass(frozen=True)
class ScenarioConfig:
    dt: float = 1.0
    K: Optional[int] = None
    battery: Optional[BatteryParams] = None
    tcl: Optional[dict] = None
    nd_load: Optional[NonDynLoadParams] = None
    reg: RegularizationParams = field(default_factory=RegularizationParams)
    currency: str = "currency"
    profiles: Optional[Path] = None

    def scenario(self, table: ProfileTable, **overrides) -> HouseholdScenario:
        """Scenario for one house; ``overrides`` replace scenario fields by name."""
        tcl = None
        if self.tcl is not None:
            tcl = TclParams(theta_ex=table.theta_ex_c, **self.tcl)
        s = HouseholdScenario(
            horizon=Horizon(table.K, self.dt),
            tariff=Tariff(table.p_buy, table.p_sell),
            d=table.d_kw,
            r=table.r_kw,
            battery=self.battery,
            tcl=tcl,
            nd_load=self.nd_load,
            reg=self.reg,
        )
        return replace(s, **overrides) if overrides else s


def _section(cp, name, cls, skip=()):
    if not cp.has_section(name):
        return None
    known = {f.name for f in fields(cls)} - set(skip)
    values = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a number") from None
    try:
        return cls(**values) if cls is not TclParams else values
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    dt, K = 1.0, None
    if cp.has_section("horizon"):
        dt = cp.getfloat("horizon", "dt", fallback=1.0)
        if cp.has_option("horizon", "K"):
            K = cp.getint("horizon", "K")
    tcl = _section(cp, "tcl", TclParams, skip=("theta_ex",))
    if tcl is not None:
        missing = [f for f in _TCL_FIELDS if f not in tcl]
        if missing:
            raise ConfigError(f"[tcl] missing {', '.join(missing)}")
    profiles = None
    if cp.has_option("data", "profiles"):
        profiles = (path.parent / cp.get("data", "profiles")).resolve()
    return ScenarioConfig(
        dt=dt,
        K=K,
        battery=_section(cp, "battery", BatteryParams),
        tcl=tcl,
        nd_load=_section(cp, "nd_load", NonDynLoadParams),
        reg=_section(cp, "reg", RegularizationParams) or RegularizationParams(),
        currency=cp.get("tariff", "currency", fallback="currency"),
        profiles=profiles,
    )


def dump_config(cfg: ScenarioConfig, path) -> Path:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["horizon"] = {"dt": repr(cfg.dt)}
    if cfg.K is not None:
        cp["horizon"]["K"] = str(cfg.K)
    for name, obj in (("battery", cfg.battery), ("nd_load", cfg.nd_load), ("reg", cfg.reg)):
        if obj is not None:
            cp[name] = {f.name: repr(getattr(obj, f.name)) for f in fields(obj)}
    if cfg.tcl is not None:
        cp["tcl"] = {k: repr(v) for k, v in cfg.tcl.items()}
    cp["tariff"] = {"currency": cfg.currency}
    if cfg.profiles is not None:
        cp["data"] = {"profiles": str(cfg.profiles)}
    path = Path(path)
    with path.open("w") as fh:
        cp.write(fh)
    return path
