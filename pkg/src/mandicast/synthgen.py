"""Synthetic sparse price panels with known generative ground truth.

Each market carries a latent daily level

    L[m, d] = base * fac_m * S[d] * exp(x[m, d])

where S is a smooth seasonal multiplier peaking near ``peak_doy``, fac_m is
a per-market log-normal scale, and x follows a slow AR(1) in log space.
Quoted prices are sticky: with probability ``sticky_prob`` a day repeats
yesterday's price unchanged, otherwise it re-quotes round(L).  Stickiness
plus integer rounding makes Stay the majority direction, as in real quote
series.  Missingness (iid per market, or whole blocks) only hides days; the
ground-truth grids stay complete.

``reference_accuracy`` scores an oracle that knows the generative seasonal
state but not the realized noise path: the ceiling a calendar-aware
forecaster could reach.  It is Monte Carlo over freshly spawned panels,
with per-day class probabilities computed in closed form from the model,
so panel-trained models can be judged against a known benchmark.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError
from .panel import AlignedPanel, PriceObservation, PriceSeries, align, day_of_year

__all__ = [
    "SynthConfig",
    "GroundTruth",
    "ReferenceAccuracy",
    "generate",
    "reference_accuracy",
]

_RHO = 0.995               # AR(1) persistence of the log noise level
_YEAR = 365.25
_RULE_TOL = 1e-12          # score ties inside this band resolve to the first class


@dataclass(frozen=True)
class SynthConfig:
    n_markets: int = 6
    start: dt.date = dt.date(2012, 1, 1)
    end: dt.date = dt.date(2016, 12, 31)
    seed: int = 0
    commodity: str = "onion"
    base_level: float = 1500.0
    seasonal_amplitude: float = 0.5
    peak_doy: float = 305.0
    noise_sigma: float = 0.005
    sticky_prob: float = 0.6
    market_level_sigma: float = 0.1
    missing_rate: float = 0.0
    market_missing_rates: tuple = ()      # per-market override, empty = use missing_rate
    block_missing: tuple = ()             # (market_index, start_iso, end_iso) spans
    arrivals_mean_ln: float = 5.0
    arrivals_sigma_ln: float = 0.5

    def __post_init__(self) -> None:
        if self.n_markets < 1:
            raise ConfigError(f"n_markets must be >= 1, got {self.n_markets}")
        if self.end <= self.start:
            raise ConfigError("end must fall after start")
        if not 0.0 <= self.seasonal_amplitude < 1.0:
            raise ConfigError("seasonal_amplitude must lie in [0, 1)")
        if self.noise_sigma <= 0.0:
            raise ConfigError("noise_sigma must be positive")
        if not 0.0 <= self.sticky_prob <= 1.0:
            raise ConfigError("sticky_prob must lie in [0, 1]")
        if self.base_level <= 0.0:
            raise ConfigError("base_level must be positive")
        if self.market_level_sigma < 0.0:
            raise ConfigError("market_level_sigma must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        rates = tuple(self.market_missing_rates)
        if rates and len(rates) != self.n_markets:
            raise ConfigError(
                f"market_missing_rates needs {self.n_markets} entries, got {len(rates)}"
            )
        for r in rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"market missing rate {r!r} outside [0, 1)")
        object.__setattr__(self, "market_missing_rates", rates)
        blocks = []
        for entry in self.block_missing:
            m, s, e = entry
            if not 0 <= m < self.n_markets:
                raise ConfigError(f"block market index {m} outside panel")
            s_d = dt.date.fromisoformat(s) if isinstance(s, str) else s
            e_d = dt.date.fromisoformat(e) if isinstance(e, str) else e
            if e_d < s_d:
                raise ConfigError(f"block span {s_d}..{e_d} is reversed")
            blocks.append((int(m), s_d, e_d))
        object.__setattr__(self, "block_missing", tuple(blocks))

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        if not isinstance(data, dict):
            raise ConfigError("synth section must be an object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        kw = dict(data)
        for name in ("start", "end"):
            if name in kw and isinstance(kw[name], str):
                try:
                    kw[name] = dt.date.fromisoformat(kw[name])
                except ValueError as exc:
                    raise ConfigError(f"synth.{name}: {exc}") from None
        for name in ("market_missing_rates", "block_missing"):
            if name in kw and isinstance(kw[name], list):
                kw[name] = tuple(tuple(v) if isinstance(v, list) else v for v in kw[name])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"synth section: {exc}") from None


@dataclass(frozen=True)
class GroundTruth:
    """Complete generative state behind a synthetic panel."""

    config: SynthConfig
    dates: list
    seasonal: np.ndarray            # (D,) multiplier S[d]
    log_drift: np.ndarray           # (D,) ln S[d] - ln S[d-1], zero at d = 0
    level_factors: np.ndarray       # (M,) per-market scale fac_m
    latent: np.ndarray              # (M, D) L grid
    prices: np.ndarray              # (M, D) quoted price grid, no missingness
    sticky: np.ndarray              # (M, D) bool, True where the quote repeated
    realized_direction: np.ndarray  # (M, D) int8, -1 at d = 0
    observed: np.ndarray            # (M, D) bool visibility after missingness

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def stay_prevalence(self) -> float:
        d = self.realized_direction[:, 1:]
        return float((d == 2).mean())


def _date_range(start: dt.date, end: dt.date) -> list:
    n = (end - start).days + 1
    return [start + dt.timedelta(days=i) for i in range(n)]


def _seasonal_curve(cfg: SynthConfig, dates: list) -> np.ndarray:
    phase = cfg.peak_doy - _YEAR / 4.0
    doy = np.array([day_of_year(d) for d in dates], dtype=np.float64)
    return 1.0 + cfg.seasonal_amplitude * np.sin(2.0 * math.pi * (doy - phase) / _YEAR)


def _market_rng(cfg: SynthConfig, m: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(m,))
    return np.random.Generator(np.random.PCG64(ss))


def _grids(cfg: SynthConfig):
    dates = _date_range(cfg.start, cfg.end)
    D = len(dates)
    M = cfg.n_markets
    S = _seasonal_curve(cfg, dates)
    log_drift = np.zeros(D)
    log_drift[1:] = np.diff(np.log(S))

    fac = np.empty(M)
    latent = np.empty((M, D))
    prices = np.empty((M, D))
    sticky = np.zeros((M, D), dtype=bool)
    observed = np.ones((M, D), dtype=bool)
    arrivals = np.empty((M, D))
    sigma_x = cfg.noise_sigma / math.sqrt(1.0 - _RHO * _RHO)

    for m in range(M):
        rng = _market_rng(cfg, m)
        # one stream per market, fixed draw order: the panel for market m
        # never changes when markets are added or dropped around it
        fac[m] = math.exp(rng.normal(0.0, cfg.market_level_sigma))
        x = np.empty(D)
        x[0] = rng.normal(0.0, sigma_x)
        eps = rng.normal(0.0, cfg.noise_sigma, size=D - 1)
        for d in range(1, D):
            x[d] = _RHO * x[d - 1] + eps[d - 1]
        latent[m] = cfg.base_level * fac[m] * S * np.exp(x)
        stick_u = rng.random(D)
        prices[m, 0] = max(1.0, np.round(latent[m, 0]))
        for d in range(1, D):
            if stick_u[d] < cfg.sticky_prob:
                prices[m, d] = prices[m, d - 1]
                sticky[m, d] = True
            else:
                prices[m, d] = max(1.0, np.round(latent[m, d]))
        rate = (
            cfg.market_missing_rates[m]
            if cfg.market_missing_rates
            else cfg.missing_rate
        )
        miss_u = rng.random(D)
        observed[m] = miss_u >= rate
        arrivals[m] = np.exp(rng.normal(cfg.arrivals_mean_ln, cfg.arrivals_sigma_ln, size=D))

    for m, s_d, e_d in cfg.block_missing:
        lo = max(0, (s_d - cfg.start).days)
        hi = min(D - 1, (e_d - cfg.start).days)
        if lo <= hi:
            observed[m, lo : hi + 1] = False
    # every market keeps its first day, so the panel always has M markets
    observed[:, 0] = True

    delta = prices[:, 1:] - prices[:, :-1]
    realized = np.full((M, D), -1, dtype=np.int8)
    realized[:, 1:] = np.where(delta > 0, 0, np.where(delta < 0, 1, 2)).astype(np.int8)
    return dates, S, log_drift, fac, latent, prices, sticky, observed, arrivals, realized


def generate(cfg: SynthConfig) -> tuple[AlignedPanel, GroundTruth]:
    """Draw one panel and its ground truth from the configured model."""
    (dates, S, log_drift, fac, latent, prices,
     sticky, observed, arrivals, realized) = _grids(cfg)
    M = cfg.n_markets
    width = len(str(M - 1)) if M > 1 else 1
    series = []
    for m in range(M):
        name = f"market_{m:0{width}d}"
        obs = tuple(
            PriceObservation(
                date=dates[d],
                price=float(prices[m, d]),
                arrivals=round(float(arrivals[m, d]), 3),
            )
            for d in np.flatnonzero(observed[m])
        )
        series.append(PriceSeries(market_id=name, commodity=cfg.commodity, observations=obs))
    panel = align(series, start=cfg.start, end=cfg.end, epsilon=0.0)
    truth = GroundTruth(
        config=cfg,
        dates=dates,
        seasonal=S,
        log_drift=log_drift,
        level_factors=fac,
        latent=latent,
        prices=prices,
        sticky=sticky,
        realized_direction=realized,
        observed=observed,
    )
    return panel, truth


# ---------------------------------------------------------------------------
# reference benchmark
# ---------------------------------------------------------------------------

# standard normal CDF via erf; no scipy dependency for one function
_phi = np.vectorize(
    lambda v: 0.5 * (1.0 + math.erf(v / math.sqrt(2.0))), otypes=[np.float64]
)


def _analytic_probs(cfg: SynthConfig, truth: GroundTruth) -> np.ndarray:
    """Per-(market, day) class probabilities given only the seasonal state.

    A non-sticky day re-quotes after a Geometric(1 - s) run of k frozen
    days, so the effective log step is N(ln S[d] - ln S[d-k], k * sigma^2).
    The rounding granularity kappa = 0.5 / price_scale turns the continuous
    step into Up / Down / Stay masses.  Returns (M, D, 3); day 0 is zeros.
    """
    M, D = truth.prices.shape
    s = cfg.sticky_prob
    out = np.zeros((M, D, 3))
    if s >= 1.0:
        out[:, 1:, 2] = 1.0
        return out
    ln_s_curve = np.log(truth.seasonal)
    # run lengths that still carry meaningful probability mass
    k_max = 1
    while s ** k_max > 1e-4 and k_max < 64:
        k_max += 1
    ks = np.arange(1, k_max + 1)
    weights = (1.0 - s) * s ** (ks - 1.0)
    weights = weights / weights.sum()
    days = np.arange(1, D)
    for m in range(M):
        scale = cfg.base_level * truth.level_factors[m] * truth.seasonal[1:]
        kappa = 0.5 / scale
        p_up = np.zeros(D - 1)
        p_down = np.zeros(D - 1)
        for k, w in zip(ks, weights):
            back = np.maximum(days - k, 0)
            drift = ln_s_curve[days] - ln_s_curve[back]
            sd = cfg.noise_sigma * math.sqrt(float(k))
            p_up += w * (1.0 - _phi((kappa - drift) / sd))
            p_down += w * _phi((-kappa - drift) / sd)
        move = 1.0 - s
        out[m, 1:, 0] = move * p_up
        out[m, 1:, 1] = move * p_down
        out[m, 1:, 2] = 1.0 - move * (p_up + p_down)
    return out


def _argmax_with_ties(scores: np.ndarray) -> np.ndarray:
    # first class within _RULE_TOL of the max wins; keeps exact-tie cases
    # (for instance a flat-seasonal panel) off float rounding noise
    top = scores.max(axis=-1, keepdims=True)
    return np.argmax(scores >= top - _RULE_TOL, axis=-1)


@dataclass(frozen=True)
class ReferenceAccuracy:
    raw: float
    balanced: float
    recalls: tuple
    absent_classes: tuple
    class_prevalence: tuple
    trials: int


def reference_accuracy(cfg: SynthConfig, trials: int = 5) -> ReferenceAccuracy:
    """Monte Carlo accuracy of the seasonal-state oracle on fresh panels.

    The raw rule plays argmax class probability; the balanced rule plays
    argmax probability over prevalence (a likelihood-ratio rule that stops
    ignoring rare classes).  Both rules break ties toward the first class
    code.  All realized transitions count, whether later hidden or not.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    raw_correct = 0
    raw_total = 0
    bal_hits = np.zeros(3, dtype=np.int64)
    bal_truth = np.zeros(3, dtype=np.int64)
    for t in range(trials):
        trial_seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(7700 + t,))
        trial_cfg = replace(cfg, seed=int(trial_seed.generate_state(1)[0]))
        (dates, S, log_drift, fac, latent, prices,
         sticky, observed, arrivals, realized) = _grids(trial_cfg)
        truth = GroundTruth(
            config=trial_cfg, dates=dates, seasonal=S, log_drift=log_drift,
            level_factors=fac, latent=latent, prices=prices, sticky=sticky,
            realized_direction=realized, observed=observed,
        )
        probs = _analytic_probs(trial_cfg, truth)[:, 1:, :]   # (M, D-1, 3)
        y = realized[:, 1:].astype(np.int64)
        prevalence = probs.reshape(-1, 3).mean(axis=0)
        raw_pred = _argmax_with_ties(probs)
        ratio = np.where(prevalence > 0.0, probs / np.where(prevalence > 0, prevalence, 1.0), -np.inf)
        bal_pred = _argmax_with_ties(ratio)
        raw_correct += int((raw_pred == y).sum())
        raw_total += y.size
        for c in range(3):
            mask = y == c
            bal_truth[c] += int(mask.sum())
            bal_hits[c] += int((bal_pred[mask] == c).sum())
    recalls = tuple(
        float(bal_hits[c] / bal_truth[c]) if bal_truth[c] > 0 else None for c in range(3)
    )
    present = [r for r in recalls if r is not None]
    absent = tuple(c for c in range(3) if bal_truth[c] == 0)
    return ReferenceAccuracy(
        raw=raw_correct / raw_total,
        balanced=float(sum(present) / len(present)),
        recalls=recalls,
        absent_classes=absent,
        class_prevalence=tuple(float(v) for v in bal_truth / bal_truth.sum()),
        trials=trials,
    )
