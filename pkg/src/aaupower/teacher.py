"""Synthetic AAU fleet and ground-truth power oracle.

The oracle is a closed form with the qualitative structure of a multi-carrier
AAU: an always-on baseband share, MCPA static power that grows sub-linearly
with the carriers sharing it and only switches off when all of them are shut
down, per-carrier transceiver power, a load-proportional PA term, and the four
energy-saving modes (carrier, channel and symbol shutdown, deep dormancy).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset

# Documented parameter ranges for sample_fleet.
P_BASE_RANGE = (50.0, 150.0)
P_MCPA0_RANGE = (40.0, 120.0)
GAMMA_RANGE = (0.6, 0.9)
P_FIX_CARRIER_RANGE = (10.0, 40.0)
KAPPA_RANGE = (2.0, 5.0)
ETA_SS_RANGE = (0.3, 0.7)
ETA_CH_RANGE = (0.3, 0.6)
P_DORM_RANGE = (10.0, 30.0)

DEFAULT_SIGMA0 = 2.0
DEFAULT_SIGMA1 = 0.04

TRX_CHOICES = (4, 8, 32, 64)
PMAX_CHOICES = (20.0, 40.0, 60.0, 80.0, 120.0, 160.0)
# band id -> (centre MHz, allowed bandwidths MHz)
BANDS = {
    "B28": (700.0, (10.0, 20.0)),
    "B3": (1800.0, (10.0, 20.0)),
    "B1": (2100.0, (10.0, 20.0)),
    "B41": (2600.0, (40.0, 60.0, 100.0)),
    "B78": (3500.0, (60.0, 80.0, 100.0)),
}


class FleetError(ValueError):
    pass


@dataclass
class AAUTypeSpec:
    type_id: str
    num_trx: int
    num_bands: int
    max_carriers: int
    p_base: float
    p_mcpa0: float
    gamma: float
    p_fix_carrier: float
    kappa: float
    eta_ss: float
    eta_ch: float
    p_dorm: float
    sigma0: float = DEFAULT_SIGMA0
    sigma1: float = DEFAULT_SIGMA1
    bands: tuple[str, ...] = ()
    tx_modes: tuple[str, ...] = ()
    pmax_options: tuple[float, ...] = ()

    def validate(self, c_max: int | None = None) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise FleetError(f"{self.type_id}: gamma must be in (0, 1]")
        for name in ("eta_ss", "eta_ch"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise FleetError(f"{self.type_id}: {name} must be in [0, 1]")
        for name in ("p_base", "p_mcpa0", "p_fix_carrier", "kappa", "p_dorm", "sigma0", "sigma1"):
            if getattr(self, name) < 0:
                raise FleetError(f"{self.type_id}: {name} must be >= 0")
        if not self.p_dorm < self.p_base + self.p_mcpa0:
            raise FleetError(f"{self.type_id}: dormancy floor must be below p_base + p_mcpa0")
        if self.max_carriers < 1 or (c_max is not None and self.max_carriers > c_max):
            raise FleetError(f"{self.type_id}: max_carriers out of range")


@dataclass
class CarrierSpec:
    carrier_idx: int
    band_id: str
    freq_mhz: float
    bw_mhz: float
    p_max: float
    tx_mode: str
    mcpa_group: int


@dataclass
class HourState:
    """Per-carrier load and energy-saving fractions for one hour."""

    load: np.ndarray
    d_cs: np.ndarray
    d_chs: np.ndarray
    d_ss: np.ndarray
    d_dd: float = 0.0

    @classmethod
    def idle(cls, n: int) -> "HourState":
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), 0.0)

    def validate(self) -> None:
        arrays = [np.asarray(a, dtype=float) for a in (self.load, self.d_cs, self.d_chs, self.d_ss)]
        for a in arrays:
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError("fractions must lie in [0, 1]")
        if not 0.0 <= self.d_dd <= 1.0:
            raise ValueError("d_dd must lie in [0, 1]")
        if np.any(arrays[1] + self.d_dd > 1.0 + 1e-12):
            raise ValueError("carrier shutdown and dormancy overlap")


@dataclass
class FleetAAU:
    aau_id: int
    type_id: str
    carriers: list[CarrierSpec]


@dataclass
class Fleet:
    types: list[AAUTypeSpec]
    aaus: list[FleetAAU]
    seed: int
    c_max: int = 6

    def type_by_id(self, type_id: str) -> AAUTypeSpec:
        for t in self.types:
            if t.type_id == type_id:
                return t
        raise KeyError(type_id)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "c_max": self.c_max,
                "types": [asdict(t) for t in self.types],
                "aaus": [asdict(a) for a in self.aaus]}

    @classmethod
    def from_dict(cls, d: dict) -> "Fleet":
        types = []
        for t in d["types"]:
            t = dict(t)
            for key in ("bands", "tx_modes", "pmax_options"):
                t[key] = tuple(t[key])
            types.append(AAUTypeSpec(**t))
        aaus = [FleetAAU(a["aau_id"], a["type_id"], [CarrierSpec(**c) for c in a["carriers"]])
                for a in d["aaus"]]
        return cls(types=types, aaus=aaus, seed=d["seed"], c_max=d["c_max"])

    def with_noise(self, sigma0: float, sigma1: float) -> "Fleet":
        """Copy of the fleet with every type's noise parameters replaced."""
        d = self.to_dict()
        for t in d["types"]:
            t["sigma0"], t["sigma1"] = sigma0, sigma1
        return Fleet.from_dict(d)

    def subset_types(self, type_ids) -> "Fleet":
        keep = set(type_ids)
        d = self.to_dict()
        d["types"] = [t for t in d["types"] if t["type_id"] in keep]
        d["aaus"] = [a for a in d["aaus"] if a["type_id"] in keep]
        return Fleet.from_dict(d)


def _tx_mode_for(trx: int) -> list[str]:
    return [f"{m}T{m}R" for m in TRX_CHOICES if m <= trx]


def _sample_type(rng: np.random.Generator, idx: int, c_max: int,
                 sigma0: float, sigma1: float, force_max: bool) -> AAUTypeSpec:
    u = rng.uniform
    num_trx = int(rng.choice(TRX_CHOICES))
    num_bands = int(rng.integers(1, 4))
    bands = tuple(sorted(rng.choice(list(BANDS), size=num_bands, replace=False).tolist(),
                         key=lambda b: BANDS[b][0]))
    max_carriers = c_max if force_max else int(rng.integers(1, c_max + 1))
    modes = _tx_mode_for(num_trx)
    tx_modes = tuple(modes[-2:])
    n_pmax = min(3, len(PMAX_CHOICES))
    pmax_options = tuple(sorted(rng.choice(PMAX_CHOICES, size=n_pmax, replace=False).tolist()))
    return AAUTypeSpec(
        type_id=f"T{idx:02d}", num_trx=num_trx, num_bands=num_bands,
        max_carriers=max_carriers,
        p_base=u(*P_BASE_RANGE), p_mcpa0=u(*P_MCPA0_RANGE), gamma=u(*GAMMA_RANGE),
        p_fix_carrier=u(*P_FIX_CARRIER_RANGE), kappa=u(*KAPPA_RANGE),
        eta_ss=u(*ETA_SS_RANGE), eta_ch=u(*ETA_CH_RANGE), p_dorm=u(*P_DORM_RANGE),
        sigma0=sigma0, sigma1=sigma1,
        bands=bands, tx_modes=tx_modes, pmax_options=pmax_options,
    )


def _sample_carriers(rng: np.random.Generator, t: AAUTypeSpec) -> list[CarrierSpec]:
    n = int(rng.integers(1, t.max_carriers + 1))
    band_of = [t.bands[k % len(t.bands)] for k in range(n)]
    rng.shuffle(band_of)
    # next free offset inside each band: co-band carriers sit on adjacent channels
    offset: dict[str, float] = {}
    carriers = []
    for band in band_of:
        centre, bws = BANDS[band]
        bw = float(rng.choice(bws))
        start = offset.get(band, 0.0)
        offset[band] = start + bw
        carriers.append(CarrierSpec(
            carrier_idx=0, band_id=band,
            freq_mhz=centre + start, bw_mhz=bw,
            p_max=float(rng.choice(t.pmax_options)),
            tx_mode=str(rng.choice(t.tx_modes)),
            # one MCPA set per band; co-band carriers share it
            mcpa_group=t.bands.index(band),
        ))
    carriers.sort(key=lambda c: (c.freq_mhz, -c.p_max, c.bw_mhz, c.tx_mode))
    for k, c in enumerate(carriers):
        c.carrier_idx = k
    return carriers


def sample_fleet(n_types: int, aaus_per_type: int, c_max: int, seed: int, *,
                 sigma0: float = DEFAULT_SIGMA0, sigma1: float = DEFAULT_SIGMA1) -> Fleet:
    """Draw ``n_types`` AAU types and ``aaus_per_type`` AAUs of each.

    The first type always supports ``c_max`` carriers so that the fleet's most
    capable AAU type defines the padding width.
    """
    if n_types < 1 or aaus_per_type < 1 or c_max < 1:
        raise FleetError("n_types, aaus_per_type and c_max must all be >= 1")
    rng = np.random.default_rng(seed)
    types = [_sample_type(rng, i, c_max, sigma0, sigma1, force_max=(i == 0))
             for i in range(n_types)]
    for t in types:
        t.validate(c_max)
    aaus = []
    for t in types:
        for _ in range(aaus_per_type):
            aaus.append(FleetAAU(len(aaus), t.type_id, _sample_carriers(rng, t)))
    return Fleet(types=types, aaus=aaus, seed=seed, c_max=c_max)


# ── Power oracle ───────────────────────────────────────────────────────


def teacher_power(t: AAUTypeSpec, carriers: list[CarrierSpec], state: HourState) -> float:
    """Noiseless hour-averaged power in watts."""
    if not carriers:
        raise ValueError("at least one carrier required")
    state.validate()
    d_cs = np.asarray(state.d_cs, dtype=float)
    groups: dict[int, list[int]] = {}
    for k, c in enumerate(carriers):
        groups.setdefault(c.mcpa_group, []).append(k)
    mcpa = 0.0
    for members in groups.values():
        off = min(d_cs[k] for k in members)
        mcpa += t.p_mcpa0 * len(members) ** t.gamma * (1.0 - off)
    carrier_sum = 0.0
    for k, c in enumerate(carriers):
        m = 1.0 - t.eta_ch * state.d_chs[k]
        carrier_sum += (1.0 - d_cs[k]) * m * (
            t.p_fix_carrier * (1.0 - t.eta_ss * state.d_ss[k]) + t.kappa * state.load[k] * c.p_max)
    active = t.p_base + mcpa + carrier_sum
    return float(state.d_dd * t.p_dorm + (1.0 - state.d_dd) * active)


def teacher_power_batch(t: AAUTypeSpec, carriers: list[CarrierSpec], load, d_cs, d_chs, d_ss,
                        d_dd) -> np.ndarray:
    """Vectorized :func:`teacher_power` over hours: carrier arrays are ``(H, C)``, ``d_dd`` is ``(H,)``."""
    pmax = np.array([c.p_max for c in carriers])
    group = np.array([c.mcpa_group for c in carriers])
    mcpa = np.zeros(len(d_dd))
    for g in np.unique(group):
        members = group == g
        off = d_cs[:, members].min(axis=1)
        mcpa += t.p_mcpa0 * members.sum() ** t.gamma * (1.0 - off)
    m = 1.0 - t.eta_ch * d_chs
    per_carrier = (1.0 - d_cs) * m * (t.p_fix_carrier * (1.0 - t.eta_ss * d_ss)
                                      + t.kappa * load * pmax)
    active = t.p_base + mcpa + per_carrier.sum(axis=1)
    return d_dd * t.p_dorm + (1.0 - d_dd) * active


# ── Hourly state generation ────────────────────────────────────────────


@dataclass
class ActivityConfig:
    """Knobs of the diurnal load profile and energy-saving activation policy."""

    base_load: tuple[float, float] = (0.3, 0.6)
    amplitude: tuple[float, float] = (0.25, 0.5)
    jitter: float = 0.08
    p_symbol_shutdown: float = 0.8
    p_channel_shutdown: float = 0.5
    p_carrier_shutdown: float = 0.7
    p_deep_dormancy: float = 0.3
    channel_shutdown_load: float = 0.2
    carrier_shutdown_load: float = 0.15
    dormancy_load: float = 0.06


def _hour_states(rng: np.random.Generator, n_carriers: int, n_days: int,
                 act: ActivityConfig):
    hours = 24 * n_days
    h = np.arange(hours) % 24
    base = rng.uniform(*act.base_load)
    amp = rng.uniform(*act.amplitude)
    phase = rng.uniform(12.0, 18.0)  # busy hour in the afternoon/evening
    carrier_scale = rng.uniform(0.6, 1.3, size=n_carriers)
    day_scale = rng.uniform(0.85, 1.15, size=n_days).repeat(24)
    profile = base + amp * np.sin(2 * np.pi * (h - phase + 6.0) / 24.0)
    load = profile[:, None] * carrier_scale[None, :] * day_scale[:, None]
    load = np.clip(load + rng.uniform(-act.jitter, act.jitter, size=(hours, n_carriers)), 0.0, 1.0)

    ss_on = rng.random() < act.p_symbol_shutdown
    ch_on = rng.random() < act.p_channel_shutdown
    cs_on = n_carriers > 1 and rng.random() < act.p_carrier_shutdown
    dd_on = rng.random() < act.p_deep_dormancy

    ss_strength = rng.uniform(0.3, 0.9)
    d_ss = np.clip((1.0 - load) * ss_strength, 0.0, 1.0) if ss_on else np.zeros_like(load)

    d_chs = np.zeros_like(load)
    if ch_on:
        low = load < act.channel_shutdown_load
        d_chs[low] = rng.uniform(0.3, 1.0, size=int(low.sum()))

    d_dd = np.zeros(hours)
    if dd_on:
        quiet = (load < act.dormancy_load).all(axis=1)
        d_dd[quiet] = rng.uniform(0.2, 0.8, size=int(quiet.sum()))

    d_cs = np.zeros_like(load)
    if cs_on:
        # the first (coverage) carrier never shuts down
        low = load < act.carrier_shutdown_load
        low[:, 0] = False
        frac = rng.uniform(0.3, 1.0, size=int(low.sum()))
        frac[rng.random(frac.size) < 0.3] = 1.0
        d_cs[low] = frac
        d_cs = np.minimum(d_cs, 1.0 - d_dd[:, None])
        load = np.where(d_cs >= 1.0, 0.0, load * (1.0 - d_cs))
    return load, d_cs, d_chs, d_ss, d_dd


def generate_dataset(fleet: Fleet, n_days: int, seed: int,
                     activity: ActivityConfig | None = None) -> Dataset:
    """One row per AAU per hour, ``24 * n_days`` rows per AAU.

    Each AAU draws from its own generator seeded by ``(seed, aau_id)``, so the
    result does not depend on iteration order.
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    act = activity or ActivityConfig()
    c_max = fleet.c_max
    hours = 24 * n_days
    n = hours * len(fleet.aaus)
    cols = {
        "aau_id": np.zeros(n, dtype=np.int64), "type_id": np.empty(n, dtype=object),
        "day": np.tile(np.arange(n_days).repeat(24), len(fleet.aaus)),
        "hour": np.tile(np.arange(24), n_days * len(fleet.aaus)),
        "num_trx": np.zeros(n, dtype=np.int64),
        "present": np.zeros((n, c_max), dtype=bool),
        "tx_mode": np.full((n, c_max), "", dtype=object),
        "power_w": np.zeros(n), "true_power_w": np.zeros(n),
    }
    for name in ("freq_mhz", "bw_mhz", "pmax_w", "load", "dcs", "dchs", "dss", "ddd"):
        cols[name] = np.zeros((n, c_max))
    types = {t.type_id: t for t in fleet.types}

    for a_idx, aau in enumerate(fleet.aaus):
        t = types[aau.type_id]
        rng = np.random.default_rng([seed, aau.aau_id])
        nc = len(aau.carriers)
        load, d_cs, d_chs, d_ss, d_dd = _hour_states(rng, nc, n_days, act)
        y = teacher_power_batch(t, aau.carriers, load, d_cs, d_chs, d_ss, d_dd)
        sigma = t.sigma0 + t.sigma1 * y
        y_bar = y + sigma * rng.standard_normal(hours)
        bad = y_bar <= 0
        while bad.any():
            y_bar[bad] = y[bad] + sigma[bad] * rng.standard_normal(int(bad.sum()))
            bad = y_bar <= 0

        rows = slice(a_idx * hours, (a_idx + 1) * hours)
        cols["aau_id"][rows] = aau.aau_id
        cols["type_id"][rows] = aau.type_id
        cols["num_trx"][rows] = t.num_trx
        cols["present"][rows, :nc] = True
        for k, c in enumerate(aau.carriers):
            cols["tx_mode"][rows, k] = c.tx_mode
            cols["freq_mhz"][rows, k] = c.freq_mhz
            cols["bw_mhz"][rows, k] = c.bw_mhz
            cols["pmax_w"][rows, k] = c.p_max
        cols["load"][rows, :nc] = load
        cols["dcs"][rows, :nc] = d_cs
        cols["dchs"][rows, :nc] = d_chs
        cols["dss"][rows, :nc] = d_ss
        cols["ddd"][rows, :nc] = d_dd[:, None]
        cols["power_w"][rows] = y_bar
        cols["true_power_w"][rows] = y
    return Dataset(**cols)
