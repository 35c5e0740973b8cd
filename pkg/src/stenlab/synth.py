"""Synthetic food-delivery impression logs with planted spatiotemporal structure.

The world has:

* categories with a period-of-day affinity (milk tea peaks at afternoon tea,
  congee at breakfast, ...);
* users with a "home" and a "work" location, each with its own category
  preference; the active location depends on weekday and hour;
* a click logit mixing target-period affinity, location-cluster preference,
  overlap with the user's recent clicks and a small per-item quality term.

The bias of the logit is solved so the expected CTR hits ``base_ctr``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import BehaviorEvent, Sample
from .features import DEFAULT_PERIOD_STARTS, PERIODS, period_table

CATEGORIES = (
    "congee", "bun", "soy_milk", "pancake",          # breakfast
    "rice_bowl", "noodles", "dumplings", "fast_food",  # lunch
    "milk_tea", "dessert", "coffee", "fruit",        # afternoon tea
    "hotpot", "stir_fry", "pizza", "sushi",          # dinner
    "bbq", "fried_chicken", "skewers", "crayfish",   # night snack
)
CITY_CENTER = (30.27, 120.15)
CITY_HALF_SPAN = 0.1
AOI_CELL = 0.02
EPOCH = 1_700_006_400  # a Wednesday, 00:00 UTC
HISTORY_HOURS = 168.0

# request volume by hour: meal peaks
_HOUR_WEIGHTS = np.array(
    [1, 0.6, 0.4, 0.3, 0.3, 0.8, 2.0, 3.0, 3.0, 2.0, 2.5, 4.0,
     5.0, 4.0, 2.5, 3.0, 3.0, 3.0, 4.5, 4.5, 3.0, 2.5, 2.5, 1.8],
    dtype=float,
)


@dataclass
class SynthConfig:
    seed: int = 7
    n_users: int = 2000
    n_items: int = 5000
    n_train: int = 50000
    n_test: int = 10000
    base_ctr: float = 0.1
    mean_history: float = 12.0
    max_history: int = 30
    period_weight: float = 1.5
    location_weight: float = 1.0
    behavior_weight: float = 1.5
    quality_scale: float = 0.3
    shuffle_periods: bool = False


@dataclass
class SynthWorld:
    category_of_item: np.ndarray
    item_latlon: np.ndarray
    item_quality: np.ndarray
    period_logaff: np.ndarray  # [C, 5], centered per category
    user_home: np.ndarray
    user_work: np.ndarray
    user_pref: np.ndarray  # [U, 2, C], 0 = home, 1 = work
    user_gender: np.ndarray
    bias: float = 0.0


@dataclass
class SynthData:
    train: list
    test: list
    world: SynthWorld
    config: SynthConfig
    click_prob: np.ndarray = field(default=None)


def _aoi(lat, lon):
    i = int(np.floor((lat - CITY_CENTER[0] + CITY_HALF_SPAN) / AOI_CELL))
    j = int(np.floor((lon - CITY_CENTER[1] + CITY_HALF_SPAN) / AOI_CELL))
    return f"aoi{i:02d}{j:02d}"


def _make_world(rng, cfg):
    n_c = len(CATEGORIES)
    primary = np.arange(n_c) // (n_c // len(PERIODS))
    raw = rng.normal(0.0, 0.4, size=(n_c, len(PERIODS)))
    raw[np.arange(n_c), primary] += 2.5
    logaff = raw - np.log(np.exp(raw).sum(axis=1, keepdims=True))
    logaff -= logaff.mean(axis=1, keepdims=True)

    category_of_item = rng.integers(0, n_c, size=cfg.n_items)
    item_latlon = np.array(CITY_CENTER) + rng.uniform(-CITY_HALF_SPAN, CITY_HALF_SPAN, size=(cfg.n_items, 2))
    item_quality = rng.normal(0.0, cfg.quality_scale, size=cfg.n_items)

    home = np.array(CITY_CENTER) + rng.uniform(-CITY_HALF_SPAN, CITY_HALF_SPAN, size=(cfg.n_users, 2))
    work = np.array(CITY_CENTER) + rng.uniform(-CITY_HALF_SPAN, CITY_HALF_SPAN, size=(cfg.n_users, 2))
    pref = rng.dirichlet(np.full(n_c, 0.4), size=(cfg.n_users, 2))
    gender = rng.choice(np.array(["f", "m", "u"]), size=cfg.n_users, p=[0.48, 0.48, 0.04])
    return SynthWorld(category_of_item, item_latlon, item_quality, logaff, home, work, pref, gender)


def _at_work(t, rng):
    day = (t // 86400 + 3) % 7
    hour = t // 3600 % 24
    working = day < 5 and 9 <= hour <= 18
    return rng.random() < (0.85 if working else 0.1)


def synth_generate(seed=7, n_users=2000, n_items=5000, n_train=50000, n_test=10000, **overrides):
    """Deterministic train/test sample lists; see module docstring for the structure."""
    cfg = SynthConfig(seed=seed, n_users=n_users, n_items=n_items, n_train=n_train, n_test=n_test, **overrides)
    if min(cfg.n_users, cfg.n_items, cfg.n_train + cfg.n_test) < 1:
        raise ValueError("synthetic sizes must be positive")
    rng = np.random.default_rng(cfg.seed)
    world = _make_world(rng, cfg)
    ptable = period_table(DEFAULT_PERIOD_STARTS)
    n_c = len(CATEGORIES)
    items_by_cat = [np.flatnonzero(world.category_of_item == c) for c in range(n_c)]
    # categories no item landed in fall back to any item
    items_by_cat = [ix if ix.size else np.arange(cfg.n_items) for ix in items_by_cat]
    hour_p = _HOUR_WEIGHTS / _HOUR_WEIGHTS.sum()
    log_pref = np.log(world.user_pref + 0.01)
    log_pref -= log_pref.mean(axis=2, keepdims=True)

    n = cfg.n_train + cfg.n_test
    drafts = []
    logits = np.empty(n)
    for k in range(n):
        user = int(rng.integers(cfg.n_users))
        day = int(rng.integers(8, 22))
        hour = int(rng.choice(24, p=hour_p))
        t_r = EPOCH + day * 86400 + hour * 3600 + int(rng.integers(3600))
        cluster = 1 if _at_work(t_r, rng) else 0
        anchor = (world.user_work if cluster else world.user_home)[user]
        lat, lon = anchor + rng.normal(0.0, 0.002, size=2)

        n_hist = int(min(rng.poisson(cfg.mean_history), cfg.max_history))
        offsets = np.sort(rng.uniform(0.25, HISTORY_HOURS, size=n_hist))[::-1]
        events = []
        recent_cats = []
        for off in offsets:
            t_e = t_r - int(off * 3600)
            p_e = ptable[t_e // 3600 % 24]
            c_e = 1 if _at_work(t_e, rng) else 0
            w = world.user_pref[user, c_e] * np.exp(cfg.period_weight * world.period_logaff[:, p_e])
            cat = int(rng.choice(n_c, p=w / w.sum()))
            item = int(rng.choice(items_by_cat[cat]))
            ilat, ilon = world.item_latlon[item]
            events.append(BehaviorEvent(f"i{item}", CATEGORIES[cat], t_e, round(ilat, 6), round(ilon, 6)))
            recent_cats.append(cat)

        target = int(rng.integers(cfg.n_items))
        cat = int(world.category_of_item[target])
        p_r = ptable[hour]
        last = recent_cats[-5:]
        overlap = (sum(c == cat for c in last) / len(last)) if last else 0.0
        logits[k] = (
            cfg.period_weight * world.period_logaff[cat, p_r]
            + cfg.location_weight * log_pref[user, cluster, cat]
            + cfg.behavior_weight * overlap
            + world.item_quality[target]
        )
        recorded_t = t_r
        if cfg.shuffle_periods:
            recorded_t = t_r + int(rng.integers(24)) * 3600
        drafts.append((user, target, recorded_t, round(lat, 6), round(lon, 6), tuple(events)))

    world.bias = _solve_bias(logits, cfg.base_ctr)
    prob = 1.0 / (1.0 + np.exp(-(logits + world.bias)))
    labels = (rng.random(n) < prob).astype(int)

    samples = []
    for (user, target, t_r, lat, lon, events), y in zip(drafts, labels):
        samples.append(
            Sample(
                int(y),
                f"u{user}",
                str(world.user_gender[user]),
                f"i{target}",
                CATEGORIES[world.category_of_item[target]],
                int(t_r),
                lat,
                lon,
                _aoi(lat, lon),
                events,
            )
        )
    return SynthData(samples[: cfg.n_train], samples[cfg.n_train :], world, cfg, prob)


def _solve_bias(logits, target_rate, iters=100):
    lo, hi = -20.0, 20.0
    for _ in range(iters):
        mid = (lo + hi) / 2
        if np.mean(1.0 / (1.0 + np.exp(-(logits + mid)))) < target_rate:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def period_oracle_scores(samples, world):
    """Score = planted period affinity of the target category at the recorded request period."""
    ptable = period_table(DEFAULT_PERIOD_STARTS)
    cat_index = {c: k for k, c in enumerate(CATEGORIES)}
    return np.array(
        [world.period_logaff[cat_index[s.item_category], ptable[s.request_time // 3600 % 24]] for s in samples]
    )
