"""Seeded synthetic smart-home scenarios.

Two datasets are produced:

* **queries** -- residents' search queries. Each resident is assigned one
  sensitive topic (cancer or diabetes, 2:4 by default). A home's hidden regime
  follows a Markov chain over ``general`` plus the topics of its residents; on
  an active slot the home emits a term from the current regime's vocabulary,
  otherwise nothing (the null symbol).
* **appliances** -- appliance usage events, 30 of 45 appliances used, each
  15-20 times, scattered over free (home, slot) cells.

Ground truth keeps ``home_id``; only :func:`perturb_events` output, keyed by
pseudonym, is meant to reach the aggregator.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError
from .hmm import HmmParams
from .ldp import CategoryDomain, PerturbedReport, as_budget, krr_perturb
from .risk import SensitiveStateSet

GENERAL = "general"

DEFAULT_VOCABULARIES = {
    GENERAL: ["weather", "news", "recipes", "football", "movies", "travel",
              "shopping", "music", "traffic", "banking", "gardening", "jobs"],
    "cancer": ["chemotherapy", "oncologist", "tumor_marker", "radiation_therapy", "biopsy"],
    "diabetes": ["insulin_dose", "blood_glucose", "a1c_test", "metformin", "diabetic_diet"],
}

MEDICAL_APPLIANCES = ["cpap_machine", "oxygen_concentrator", "insulin_fridge",
                      "dialysis_unit", "nebulizer", "glucose_monitor_dock"]
HOUSEHOLD_APPLIANCES = [
    "fridge", "freezer", "oven", "microwave", "dishwasher", "washing_machine", "dryer",
    "kettle", "toaster", "coffee_maker", "air_conditioner", "heater", "water_heater",
    "television", "game_console", "router", "desktop_pc", "laptop_charger", "vacuum",
    "iron", "hair_dryer", "electric_blanket", "ceiling_fan", "dehumidifier", "air_purifier",
    "rice_cooker", "slow_cooker", "blender", "induction_hob", "range_hood", "ev_charger",
    "pool_pump", "garage_door", "security_camera", "smart_speaker", "aquarium_pump",
    "sewing_machine", "treadmill", "power_tool_charger",
]
MEDICAL = "medical"
HOUSEHOLD = "household"

PRESETS = {
    "paper-40homes": {"home_count": 40},
    "table-i": {"home_count": 45},
}


@dataclass(frozen=True)
class ScenarioConfig:
    home_count: int = 40
    entry_count: int = 2000
    user_count: int = 45
    topic_ratio: dict = field(default_factory=lambda: {"cancer": 2, "diabetes": 4})
    application_count: int = 10
    min_entries_per_application: int = 101
    appliance_count: int = 45
    appliances_used: int = 30
    appliance_entries_min: int = 15
    appliance_entries_max: int = 20
    horizon: int = 60
    stay_general: float = 0.85
    stay_topic: float = 0.85
    activity_concentration: float = 5.0
    vocabularies: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_VOCABULARIES.items()})
    seed: int = 0

    def validate(self) -> None:
        for name in ("home_count", "entry_count", "user_count", "application_count",
                     "appliance_count", "appliances_used", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.user_count < self.home_count:
            raise ConfigError("every home needs at least one resident (user_count >= home_count)")
        if self.entry_count > self.home_count * self.horizon:
            raise ConfigError("more entries than (home, slot) cells")
        if self.entry_count < self.application_count * self.min_entries_per_application:
            raise ConfigError("entry_count cannot give every application its minimum")
        if not self.topic_ratio or any(w <= 0 for w in self.topic_ratio.values()):
            raise ConfigError("topic ratio weights must be positive")
        if GENERAL not in self.vocabularies:
            raise ConfigError(f"vocabularies need a '{GENERAL}' entry")
        for topic in self.topic_ratio:
            if not self.vocabularies.get(topic):
                raise ConfigError(f"no vocabulary for topic {topic!r}")
        if self.appliances_used > self.appliance_count:
            raise ConfigError("appliances_used exceeds appliance_count")
        if self.appliance_count > len(MEDICAL_APPLIANCES) + len(HOUSEHOLD_APPLIANCES):
            raise ConfigError("appliance_count exceeds the built-in appliance list")
        if not 1 <= self.appliance_entries_min <= self.appliance_entries_max:
            raise ConfigError("bad appliance entry bounds")
        if not (0 < self.stay_general < 1 and 0 < self.stay_topic < 1):
            raise ConfigError("stay probabilities must lie in (0, 1)")

    @property
    def topics(self) -> tuple[str, ...]:
        return tuple(self.topic_ratio)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        preset = data.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = dict(PRESETS[preset]) if preset else {}
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields {sorted(unknown)}")
        base.update(data)
        return cls(**base)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScenarioConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class Event:
    home_id: str
    pseudonym: str
    slot: int
    symbol: str
    topic: str

    def to_dict(self) -> dict:
        return {"home_id": self.home_id, "pseudonym": self.pseudonym, "slot": self.slot,
                "symbol": self.symbol, "topic": self.topic}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(str(d["home_id"]), str(d["pseudonym"]), int(d["slot"]), str(d["symbol"]),
                   str(d["topic"]))


@dataclass
class GroundTruthDataset:
    queries: list[Event]
    appliances: list[Event]
    query_domain: CategoryDomain
    query_topics: dict
    appliance_domain: CategoryDomain
    appliance_topics: dict
    metadata: dict

    def events(self, name: str) -> list[Event]:
        return {"queries": self.queries, "appliances": self.appliances}[name]

    def domain(self, name: str) -> tuple[CategoryDomain, dict]:
        if name == "queries":
            return self.query_domain, self.query_topics
        if name == "appliances":
            return self.appliance_domain, self.appliance_topics
        raise KeyError(name)


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Split ``total`` proportionally to ``weights``; leftover units go to the
    largest fractional parts (earlier index wins ties)."""
    w = np.asarray(weights, dtype=float)
    quotas = total * w / w.sum()
    base = np.floor(quotas).astype(int)
    left = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base.tolist()


def _capped_allocation(total: int, weights: np.ndarray, cap: int) -> list[int]:
    alloc = np.array(largest_remainder(total, weights))
    while (alloc > cap).any():
        over = int((alloc - cap).clip(min=0).sum())
        alloc = np.minimum(alloc, cap)
        room = alloc < cap
        extra = np.zeros_like(alloc)
        extra[room] = largest_remainder(over, weights[room])
        alloc = alloc + extra
    return alloc.tolist()


def _pseudonyms(n: int, rng: np.random.Generator) -> list[str]:
    out: list[str] = []
    seen = set()
    while len(out) < n:
        token = rng.bytes(8).hex()
        if token not in seen:
            seen.add(token)
            out.append(token)
    return out


def query_domain(cfg: ScenarioConfig) -> tuple[CategoryDomain, dict]:
    symbols, topics = [], {}
    for topic in (GENERAL,) + cfg.topics:
        for s in cfg.vocabularies[topic]:
            symbols.append(s)
            topics[s] = topic
    return CategoryDomain(tuple(symbols)), topics


def appliance_domain(cfg: ScenarioConfig) -> tuple[CategoryDomain, dict]:
    names = (MEDICAL_APPLIANCES + HOUSEHOLD_APPLIANCES)[:cfg.appliance_count]
    topics = {n: (MEDICAL if n in MEDICAL_APPLIANCES else HOUSEHOLD) for n in names}
    return CategoryDomain(tuple(names)), topics


def regime_chain(cfg: ScenarioConfig, topics: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Initial distribution and transition matrix over ``general`` + ``topics``."""
    n = 1 + len(topics)
    trans = np.zeros((n, n))
    trans[0, 0] = cfg.stay_general
    if topics:
        trans[0, 1:] = (1 - cfg.stay_general) / len(topics)
        trans[1:, 0] = 1 - cfg.stay_topic
        trans[np.arange(1, n), np.arange(1, n)] = cfg.stay_topic
    else:
        trans[0, 0] = 1.0
    pi = np.zeros(n)
    pi[0] = 1.0
    return pi, trans


def oracle_model(cfg: ScenarioConfig) -> tuple[HmmParams, SensitiveStateSet]:
    """The generator's regime chain as an HMM over the query alphabet.

    Active slots are modelled with the mean activity rate; every term is
    emitted by exactly one regime, so sensitive terms are unambiguous.
    """
    domain, sym_topics = query_domain(cfg)
    pi, trans = regime_chain(cfg, cfg.topics)
    rate = cfg.entry_count / (cfg.home_count * cfg.horizon)
    regimes = (GENERAL,) + cfg.topics
    emit = np.zeros((len(regimes), domain.k + 1))
    for j, regime in enumerate(regimes):
        vocab = [domain.index(s) for s in cfg.vocabularies[regime]]
        emit[j, vocab] = rate / len(vocab)
        emit[j, domain.null_index] = 1 - rate
    params = HmmParams(pi, trans, emit, domain.observation_symbols)
    return params, SensitiveStateSet(tuple(range(1, len(regimes))), cfg.topics)


def _sample_path(pi, trans, length, rng):
    path = np.empty(length, dtype=np.int64)
    path[0] = rng.choice(len(pi), p=pi)
    for t in range(1, length):
        path[t] = rng.choice(len(pi), p=trans[path[t - 1]])
    return path


def generate_dataset(cfg: ScenarioConfig) -> GroundTruthDataset:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    H, U, T = cfg.home_count, cfg.user_count, cfg.horizon
    homes = [f"home{h:03d}" for h in range(H)]
    pseudonyms = _pseudonyms(H, rng)

    # residents: one per home, the rest placed in distinct random homes
    user_home = list(range(H)) + sorted(rng.choice(H, size=U - H, replace=U - H > H).tolist())
    topic_counts = largest_remainder(U, list(cfg.topic_ratio.values()))
    user_topics = [t for t, n in zip(cfg.topics, topic_counts) for _ in range(n)]
    user_topics = [user_topics[i] for i in rng.permutation(U)]
    home_topics = [sorted({user_topics[u] for u in range(U) if user_home[u] == h},
                          key=cfg.topics.index) for h in range(H)]

    residents = np.bincount(user_home, minlength=H)
    activity = rng.gamma(cfg.activity_concentration, 1.0, size=H) * residents
    per_home = _capped_allocation(cfg.entry_count, activity, T)

    q_domain, q_topics = query_domain(cfg)
    queries: list[Event] = []
    for h in range(H):
        pi, trans = regime_chain(cfg, home_topics[h])
        regimes = [GENERAL] + home_topics[h]
        path = _sample_path(pi, trans, T, rng)
        active = np.sort(rng.choice(T, size=per_home[h], replace=False))
        for t in active:
            regime = regimes[path[t]]
            vocab = cfg.vocabularies[regime]
            queries.append(Event(homes[h], pseudonyms[h], int(t) + 1,
                                 vocab[int(rng.integers(len(vocab)))], regime))

    apps = [cfg.min_entries_per_application] * cfg.application_count
    spare = cfg.entry_count - sum(apps)
    apps = (np.array(apps) + rng.multinomial(spare, np.full(cfg.application_count,
                                                             1 / cfg.application_count))).tolist()

    a_domain, a_topics = appliance_domain(cfg)
    appliances = _generate_appliances(cfg, a_domain, homes, pseudonyms, a_topics, rng)

    metadata = {
        "scenario": cfg.to_dict(),
        "users": [{"user": f"user{u:03d}", "home_id": homes[user_home[u]], "topic": user_topics[u]}
                  for u in range(U)],
        "topic_user_counts": dict(zip(cfg.topics, topic_counts)),
        "entries_per_home": dict(zip(homes, per_home)),
        "entries_per_application": apps,
        "constraints": {
            "query_entries_per_application_min": cfg.min_entries_per_application,
            "appliance_entries_bounds": [cfg.appliance_entries_min, cfg.appliance_entries_max],
            "horizon_slots": T,
        },
    }
    return GroundTruthDataset(queries, appliances, q_domain, q_topics, a_domain, a_topics, metadata)


def _generate_appliances(cfg, domain, homes, pseudonyms, topics, rng) -> list[Event]:
    used = sorted(rng.choice(domain.k, size=cfg.appliances_used, replace=False).tolist())
    counts = rng.integers(cfg.appliance_entries_min, cfg.appliance_entries_max + 1, size=len(used))
    free = {h: set(range(1, cfg.horizon + 1)) for h in range(len(homes))}
    events = []
    for a, n in zip(used, counts):
        name = domain.symbols[a]
        for _ in range(int(n)):
            open_homes = [h for h in free if free[h]]
            if not open_homes:
                raise ConfigError("no free (home, slot) cell left for appliance events")
            h = open_homes[int(rng.integers(len(open_homes)))]
            slots = sorted(free[h])
            slot = slots[int(rng.integers(len(slots)))]
            free[h].discard(slot)
            events.append(Event(homes[h], pseudonyms[h], slot, name, topics[name]))
    events.sort(key=lambda e: (e.home_id, e.slot))
    return events


def perturb_events(events: Sequence[Event], domain: CategoryDomain, epsilon: float,
                   seed: int) -> list[PerturbedReport]:
    """Client-side randomized response, one independent seeded stream per home.

    The output carries pseudonyms only and arrives ordered by (slot, pseudonym).
    """
    budget = as_budget(epsilon)
    by_pseudonym: dict[str, list[Event]] = {}
    for e in events:
        by_pseudonym.setdefault(e.pseudonym, []).append(e)
    reports = []
    for i, p in enumerate(sorted(by_pseudonym)):
        rng = np.random.default_rng([seed, 1, i])
        for e in sorted(by_pseudonym[p], key=lambda e: e.slot):
            reports.append(PerturbedReport(p, e.slot, krr_perturb(e.symbol, domain, budget, rng),
                                           budget.epsilon))
    reports.sort(key=lambda r: (r.time_slot, r.pseudonym))
    return reports


# -- files -----------------------------------------------------------------------

def write_events(path, events: Sequence[Event]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_dict()) + "\n")


def read_events(path) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        return [Event.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_domain(path, domain: CategoryDomain, topics: dict) -> None:
    doc = domain.to_dict()
    doc["topics"] = {s: topics[s] for s in domain.symbols}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_domain(path) -> tuple[CategoryDomain, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return CategoryDomain.from_dict(doc), dict(doc.get("topics", {}))


def write_dataset(out_dir, dataset: GroundTruthDataset) -> dict:
    """Write ground truth, domains and metadata; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "queries": out / "queries.jsonl",
        "appliances": out / "appliances.jsonl",
        "queries_domain": out / "queries_domain.json",
        "appliances_domain": out / "appliances_domain.json",
        "metadata": out / "scenario.json",
    }
    write_events(paths["queries"], dataset.queries)
    write_events(paths["appliances"], dataset.appliances)
    write_domain(paths["queries_domain"], dataset.query_domain, dataset.query_topics)
    write_domain(paths["appliances_domain"], dataset.appliance_domain, dataset.appliance_topics)
    paths["metadata"].write_text(json.dumps(dataset.metadata, indent=2) + "\n", encoding="utf-8")
    return paths
