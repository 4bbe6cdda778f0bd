"""Attack records: loading, per-target partitioning, labeling and synthetic corpora."""

from __future__ import annotations

import configparser
import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(Exception):
    """Invalid input data.  ``problems`` holds ``(position, message)`` pairs."""

    def __init__(self, problems: list[tuple[int | None, str]], source: str = ""):
        self.problems = problems
        head = "; ".join(msg if pos is None else f"record {pos}: {msg}" for pos, msg in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        super().__init__(f"{source + ': ' if source else ''}{head}{more}")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackRecord:
    time: datetime
    byte_hist: Mapping[int, int] = field(hash=False)
    inst_hist: Mapping[str, int] = field(hash=False)
    from_team: str
    to_team: str
    payload_hash: str | None = None
    seq: int = field(default=0, compare=False)

    @cached_property
    def exploit_key(self) -> str:
        """Identity of the payload: the supplied hash, else a digest of both histograms."""
        if self.payload_hash:
            return self.payload_hash
        canon = json.dumps(
            [sorted(self.byte_hist.items()), sorted(self.inst_hist.items())], separators=(",", ":")
        )
        return "h" + hashlib.sha1(canon.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        out = {
            "time": self.time.isoformat(timespec="seconds"),
            "byte_hist": {str(k): v for k, v in sorted(self.byte_hist.items())},
            "inst_hist": dict(sorted(self.inst_hist.items())),
            "from_team": self.from_team,
            "to_team": self.to_team,
        }
        if self.payload_hash:
            out["payload_hash"] = self.payload_hash
        return out


def _byte_key(k) -> int:
    s = str(k).strip().lower().replace("×", "x")
    v = int(s, 16) if s.startswith("0x") else int(s)
    if not 0 <= v <= 255:
        raise ValueError(f"byte value {k!r} outside 0-255")
    return v


def _count(v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ValueError(f"count {v!r} is not an integer")
    if v < 0:
        raise ValueError(f"negative count {v}")
    return int(v)


def record_from_json(obj: Mapping, seq: int = 0) -> AttackRecord:
    if not isinstance(obj, Mapping):
        raise ValueError("record is not an object")
    missing = [k for k in ("time", "byte_hist", "inst_hist", "from_team", "to_team") if k not in obj]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    time = datetime.fromisoformat(str(obj["time"]))
    if time.tzinfo is not None:
        time = time.replace(tzinfo=None)
    if not isinstance(obj["byte_hist"], Mapping) or not isinstance(obj["inst_hist"], Mapping):
        raise ValueError("histograms must be objects")
    byte_hist = {_byte_key(k): _count(v) for k, v in obj["byte_hist"].items()}
    inst_hist = {str(k): _count(v) for k, v in obj["inst_hist"].items()}
    if not byte_hist and not inst_hist:
        raise ValueError("both histograms are empty")
    src, dst = str(obj["from_team"]).strip(), str(obj["to_team"]).strip()
    if not src or not dst:
        raise ValueError("empty team name")
    if src == dst:
        raise ValueError(f"from_team equals to_team ({src!r})")
    ph = obj.get("payload_hash")
    return AttackRecord(time, byte_hist, inst_hist, src, dst, str(ph) if ph else None, seq)


def load_records(path: str | Path) -> list[AttackRecord]:
    """Read a JSON Lines file (or a JSON array) of attack records."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if not stripped:
        return []
    if stripped.startswith("["):
        try:
            items = list(enumerate(json.loads(stripped)))
        except json.JSONDecodeError as exc:
            raise DataError([(0, f"invalid JSON: {exc}")], str(path)) from None
    else:
        items = []
        problems = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                items.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                problems.append((lineno, f"invalid JSON: {exc.msg}"))
        if problems:
            raise DataError(problems, str(path))
    records, problems = [], []
    for seq, (pos, obj) in enumerate(items):
        try:
            records.append(record_from_json(obj, seq))
        except (ValueError, TypeError) as exc:
            problems.append((pos, str(exc)))
    if problems:
        raise DataError(problems, str(path))
    return records


def write_records(records: Iterable[AttackRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# partitioning and labels


def record_order(r: AttackRecord):
    return (r.time, r.from_team, r.exploit_key, r.seq)


@dataclass
class TargetSubset:
    target: str
    records: list[AttackRecord]
    n_train: int

    @property
    def train(self) -> list[AttackRecord]:
        return self.records[: self.n_train]

    @property
    def test(self) -> list[AttackRecord]:
        return self.records[self.n_train :]


def split_point(n: int, train_fraction: float = 0.9) -> int:
    # round first so 0.9 * 10 is 9, not 8
    return math.floor(round(train_fraction * n, 9))


def partition_by_target(records: Iterable[AttackRecord], train_fraction: float = 0.9) -> list[TargetSubset]:
    groups: dict[str, list[AttackRecord]] = {}
    for r in records:
        groups.setdefault(r.to_team, []).append(r)
    out = []
    for target in sorted(groups):
        recs = sorted(groups[target], key=record_order)
        out.append(TargetSubset(target, recs, split_point(len(recs), train_fraction)))
    return out


class Duplicate(enum.Enum):
    NONE = "none"
    NON_DECEPTIVE = "non-deceptive"
    DECEPTIVE = "deceptive"


@dataclass(frozen=True)
class AttackLabel:
    deceptive: bool
    duplicate: Duplicate
    unseen_in_train: bool
    # exploit seen in train, but never from this team
    unseen_team: bool = False


def label_attacks(subset: TargetSubset) -> list[AttackLabel]:
    """Labels aligned with ``subset.records``; deception is judged over the whole subset."""
    teams: dict[str, set[str]] = {}
    initiator: dict[str, str] = {}
    for r in subset.records:
        teams.setdefault(r.exploit_key, set()).add(r.from_team)
        initiator.setdefault(r.exploit_key, r.from_team)
    train_teams: dict[str, set[str]] = {}
    for r in subset.train:
        train_teams.setdefault(r.exploit_key, set()).add(r.from_team)
    seen: set[tuple[str, str]] = set()
    labels = []
    for r in subset.records:
        k = r.exploit_key
        if r.from_team != initiator[k]:
            dup = Duplicate.DECEPTIVE
        elif (k, r.from_team) in seen:
            dup = Duplicate.NON_DECEPTIVE
        else:
            dup = Duplicate.NONE
        seen.add((k, r.from_team))
        in_train = k in train_teams
        labels.append(
            AttackLabel(
                deceptive=len(teams[k]) > 1,
                duplicate=dup,
                unseen_in_train=not in_train,
                unseen_team=in_train and r.from_team not in train_teams[k],
            )
        )
    return labels


def deceptive_unique_fraction(subset: TargetSubset) -> float:
    teams: dict[str, set[str]] = {}
    for r in subset.records:
        teams.setdefault(r.exploit_key, set()).add(r.from_team)
    if not teams:
        return 0.0
    return sum(len(t) > 1 for t in teams.values()) / len(teams)


# ---------------------------------------------------------------------------
# synthetic corpora

INSTRUCTIONS = (
    "add adc adds and b bic bl blx bx cmn cmp eor ldm ldmia ldr ldrb ldrh mla mov movs movtmi "
    "mul mvn orr pop push rsb sbc stm stmdb str strb strh sub subs svc swi teq tst umull lsl lsr "
    "asr ror nop cbz cbnz it"
).split()


@dataclass
class SynthConfig:
    n_teams: int = 10
    n_attacks: int = 20_000
    duration: float = 72 * 3600.0
    deception_prob: float = 0.35
    mean_extra_deceivers: float = 2.0  # copiers per deceptive exploit beyond the first
    max_deceivers: int = 5
    author_uses: float = 2.0  # mean uses by the author before anyone copies
    deceiver_lifetime: float = 20.0  # copy chains last this many exploit lifetimes
    delay_shape: float = 16.0  # gamma shape of per-team delays; higher is tighter
    burst_uses: float = 2.0
    delay_tiers: int = 4
    burst_gap: float = 60.0
    author_concentration: float = 0.2  # Dirichlet weight on which team writes each exploit
    unseen_fraction: float = 0.2
    train_fraction: float = 0.9
    replay_delay_range: tuple[float, float] = (3600.0, 14400.0)
    deception_delay_range: tuple[float, float] = (10000.0, 80000.0)
    replay_delays: tuple[float, ...] = ()
    deception_delays: tuple[float, ...] = ()
    full_train_coverage: bool = False
    style_weight: float = 0.7  # share of each histogram drawn from the author's style
    start: str = "2013-08-02T09:00:00"

    def validate(self) -> None:
        if self.n_teams < 3:
            raise ConfigError("n_teams must be at least 3")
        if self.n_attacks < self.n_teams:
            raise ConfigError("n_attacks must be at least n_teams")
        if not 0.0 <= self.deception_prob <= 1.0:
            raise ConfigError("deception_prob must lie in [0, 1]")
        if not 0.0 <= self.unseen_fraction < 1.0:
            raise ConfigError("unseen_fraction must lie in [0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        for name in ("replay_delays", "deception_delays"):
            vals = getattr(self, name)
            if vals and len(vals) != self.n_teams:
                raise ConfigError(f"{name} needs {self.n_teams} values, got {len(vals)}")
            if any(v <= 0 for v in vals):
                raise ConfigError(f"{name} must be positive")
        for name in ("replay_delay_range", "deception_delay_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < low <= high")
        if self.max_deceivers < 1:
            raise ConfigError("max_deceivers must be at least 1")
        try:
            datetime.fromisoformat(self.start)
        except ValueError:
            raise ConfigError(f"bad start timestamp {self.start!r}") from None

    @property
    def lifetime(self) -> float:
        """Mean active period of an exploit implied by the unseen-test target."""
        window = (1.0 - self.train_fraction) * self.duration
        if self.unseen_fraction <= 0:
            return float("inf")
        return window / -math.log(1.0 - self.unseen_fraction)


def _coerce(value: str, typ):
    value = value.strip()
    if typ is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ in (int, float, str):
        return typ(value)
    # tuples of floats
    return tuple(float(v) for v in value.replace(",", " ").split())


def parse_flat_config(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";", "%"))
    parser.optionxform = str
    parser.read_string("[root]\n" + text)
    return {k.strip().replace("-", "_"): v for k, v in parser["root"].items()}


_SYNTH_TYPES = {
    "n_teams": int,
    "n_attacks": int,
    "duration": float,
    "deception_prob": float,
    "mean_extra_deceivers": float,
    "max_deceivers": int,
    "author_uses": float,
    "deceiver_lifetime": float,
    "delay_shape": float,
    "burst_uses": float,
    "delay_tiers": int,
    "burst_gap": float,
    "author_concentration": float,
    "unseen_fraction": float,
    "train_fraction": float,
    "replay_delay_range": tuple,
    "deception_delay_range": tuple,
    "replay_delays": tuple,
    "deception_delays": tuple,
    "full_train_coverage": bool,
    "style_weight": float,
    "start": str,
}


def synth_config_from_mapping(values: Mapping[str, str], base: SynthConfig | None = None) -> SynthConfig:
    kwargs = {}
    for key, raw in values.items():
        if key not in _SYNTH_TYPES:
            raise ConfigError(f"unknown synthetic config key {key!r}")
        try:
            kwargs[key] = _coerce(str(raw), _SYNTH_TYPES[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    cfg = dataclasses.replace(base or SynthConfig(), **kwargs)
    cfg.validate()
    return cfg


def load_synth_config(path: str | Path) -> SynthConfig:
    return synth_config_from_mapping(parse_flat_config(Path(path).read_text(encoding="utf-8")))


def team_names(n: int) -> list[str]:
    return [f"T-{i}" for i in range(1, n + 1)]


@dataclass
class _Exploit:
    key: str
    author: int
    target: int
    birth: float
    byte_hist: dict[int, int]
    inst_hist: dict[str, int]


def measured_unseen_fraction(records: Sequence[AttackRecord], train_fraction: float = 0.9) -> float:
    total = unseen = 0
    for sub in partition_by_target(records, train_fraction):
        seen = {r.exploit_key for r in sub.train}
        total += len(sub.test)
        unseen += sum(r.exploit_key not in seen for r in sub.test)
    return unseen / total if total else 0.0


def measured_deceptive_fraction(records: Sequence[AttackRecord], train_fraction: float = 0.9) -> float:
    fracs = [deceptive_unique_fraction(s) for s in partition_by_target(records, train_fraction)]
    return float(np.mean(fracs)) if fracs else 0.0


def synth_generate(cfg: SynthConfig, seed: int) -> tuple[list[AttackRecord], dict]:
    """Generate a synthetic corpus calibrated to ``cfg.unseen_fraction`` and ``cfg.deception_prob``.

    The analytic lifetime ignores the warm-up of the process, and exploits
    born late in the game may never be copied, so a few multiplicative
    corrections are applied against the measured fraction of test attacks
    whose exploit is absent from training and the measured fraction of
    unique exploits used by several teams.
    """
    cfg.validate()
    tune_life = cfg.unseen_fraction > 0 and not cfg.full_train_coverage
    tune_decep = 0.0 < cfg.deception_prob < 1.0
    lifetime = cfg.lifetime
    p = cfg.deception_prob
    best = None
    for _ in range(8):
        records, side = _simulate(cfg, seed, lifetime, p)
        u = measured_unseen_fraction(records, cfg.train_fraction)
        d = measured_deceptive_fraction(records, cfg.train_fraction)
        err_u = abs(u - cfg.unseen_fraction) if tune_life else 0.0
        err_d = abs(d - cfg.deception_prob) if tune_decep else 0.0
        err = err_u + err_d
        if best is None or err < best[0]:
            best = (err, records, side)
        if err_u <= 0.01 and err_d <= 0.01:
            break
        if tune_life:
            # longer lifetimes mean fewer fresh exploits in the test window
            lifetime *= (max(u, 1e-3) / cfg.unseen_fraction) ** 1.5
        if tune_decep:
            p = min(1.0, p * cfg.deception_prob / max(d, 1e-3))
    _, records, side = best
    side["measured_unseen_fraction"] = measured_unseen_fraction(records, cfg.train_fraction)
    side["measured_deceptive_fraction"] = measured_deceptive_fraction(records, cfg.train_fraction)
    return records, side


def _simulate(cfg: SynthConfig, seed: int, lifetime: float, deception_prob: float) -> tuple[list[AttackRecord], dict]:
    """Generate a CTF-like corpus and a ground-truth side table.

    Each exploit is written by one team and aimed at one target.  Its author
    replays it (exponential gaps, team-specific mean) until the exploit's
    active period ends.  A deceptive exploit is instead replayed by its
    author only a few times; after that every use comes from one of its
    deceivers: a short burst of replays that starts a gamma-distributed gap
    after the previous use, with the deceiver's latency as mean gap.  Payload
    histograms mix a per-team style with exploit-specific noise, so authorship
    is learnable but copies are indistinguishable from the original.
    """
    rng = np.random.default_rng(seed)
    teams = team_names(cfg.n_teams)
    n = cfg.n_teams

    def spread(rng_range, given):
        if given:
            return np.asarray(given, dtype=float)
        lo, hi = rng_range
        vals = np.exp(np.linspace(math.log(lo), math.log(hi), n))
        return vals[rng.permutation(n)]

    replay_delay = spread(cfg.replay_delay_range, cfg.replay_delays)
    if cfg.deception_delays or cfg.delay_tiers < 1:
        decep_delay = spread(cfg.deception_delay_range, cfg.deception_delays)
    else:
        # teams fall into latency tiers, log-spaced over the range, with jitter
        lo, hi = cfg.deception_delay_range
        levels = np.exp(np.linspace(math.log(lo), math.log(hi), cfg.delay_tiers))
        tier = rng.permutation(np.arange(n) % cfg.delay_tiers)
        decep_delay = levels[tier] * rng.uniform(0.9, 1.1, size=n)
    author_weight = rng.dirichlet(np.full(n, cfg.author_concentration))
    byte_style = rng.dirichlet(np.full(256, 0.3), size=n)
    inst_style = rng.dirichlet(np.full(len(INSTRUCTIONS), 0.5), size=n)

    start = datetime.fromisoformat(cfg.start)
    per_target = [cfg.n_attacks // n + (1 if i < cfg.n_attacks % n else 0) for i in range(n)]

    events: list[tuple[float, int, int, _Exploit]] = []  # (time, attacker, target, exploit)
    exploits: list[_Exploit] = []
    deception_log: list[dict] = []
    serial = 0

    for target in range(n):
        attackers = [t for t in range(n) if t != target]
        w = author_weight[attackers] / author_weight[attackers].sum()
        target_events: list[tuple[float, int, int, _Exploit]] = []
        while len(target_events) < per_target[target]:
            serial += 1
            author = attackers[rng.choice(len(attackers), p=w)]
            birth = float(rng.uniform(0.0, cfg.duration))
            mix_b = cfg.style_weight * byte_style[author] + (1 - cfg.style_weight) * rng.dirichlet(
                np.full(256, 0.3)
            )
            mix_i = cfg.style_weight * inst_style[author] + (1 - cfg.style_weight) * rng.dirichlet(
                np.full(len(INSTRUCTIONS), 0.5)
            )
            bh = rng.multinomial(int(rng.integers(200, 1000)), mix_b)
            ih = rng.multinomial(int(rng.integers(20, 200)), mix_i)
            ex = _Exploit(
                key=f"p{serial:06d}{int(rng.integers(16**6)):06x}",
                author=author,
                target=target,
                birth=birth,
                byte_hist={int(i): int(c) for i, c in enumerate(bh) if c},
                inst_hist={INSTRUCTIONS[i]: int(c) for i, c in enumerate(ih) if c},
            )
            exploits.append(ex)
            end = min(cfg.duration, birth + float(rng.exponential(lifetime)))
            deceivers: list[int] = []
            if rng.random() < deception_prob:
                others = [t for t in attackers if t != author]
                k = min(1 + int(rng.poisson(cfg.mean_extra_deceivers)), cfg.max_deceivers, len(others))
                deceivers = [int(b) for b in rng.choice(others, size=k, replace=False)]

            t = birth
            n_author = 1 + int(rng.poisson(cfg.author_uses)) if deceivers else None
            while t < end and (n_author is None or n_author > 0):
                target_events.append((t, author, target, ex))
                t += float(rng.exponential(replay_delay[author]))
                if n_author is not None:
                    n_author -= 1
            if deceivers:
                # copies follow the previous use after the copier's own latency
                t = target_events[-1][0]
                chain_end = min(cfg.duration, t + float(rng.exponential(lifetime * cfg.deceiver_lifetime)))
                prev_team = author
                while True:
                    # each hop passes the payload to a different team, unless
                    # there is only one copier
                    pool = [d for d in deceivers if d != prev_team] or deceivers
                    b = pool[int(rng.integers(len(pool)))]
                    gap = float(rng.gamma(cfg.delay_shape, decep_delay[b] / cfg.delay_shape))
                    t += gap
                    # the first copy only has to fall inside the game
                    if t >= (cfg.duration if prev_team == author else chain_end):
                        break
                    deception_log.append({"exploit": ex.key, "team": teams[b], "target": teams[target], "gap": gap})
                    # a short burst of replays of the copied payload
                    for j in range(1 + int(rng.poisson(cfg.burst_uses))):
                        if j:
                            t += float(rng.exponential(cfg.burst_gap))
                        if t >= cfg.duration:
                            break
                        target_events.append((t, b, target, ex))
                    prev_team = b
        # only the last exploit can overshoot; cut its tail so other gaps stay intact
        events.extend(target_events[: per_target[target]])

    events.sort(key=lambda ev: (ev[2], ev[0], ev[1], ev[3].key))
    records = [
        AttackRecord(
            time=start + timedelta(seconds=int(t)),
            byte_hist=ex.byte_hist,
            inst_hist=ex.inst_hist,
            from_team=teams[a],
            to_team=teams[x],
            payload_hash=ex.key,
            seq=i,
        )
        for i, (t, a, x, ex) in enumerate(events)
    ]
    if cfg.full_train_coverage:
        records = _enforce_train_coverage(records, cfg.train_fraction)

    side = {
        "seed": seed,
        "lifetime": lifetime,
        "effective_deception_prob": deception_prob,
        "config": _config_json(cfg),
        "teams": {
            teams[i]: {
                "replay_delay": float(replay_delay[i]),
                "deception_delay": float(decep_delay[i]),
                "author_weight": float(author_weight[i]),
            }
            for i in range(n)
        },
        "initiators": {
            ex.key: {
                "team": teams[ex.author],
                "target": teams[ex.target],
                "birth": (start + timedelta(seconds=int(ex.birth))).isoformat(timespec="seconds"),
            }
            for ex in exploits
        },
        "deceptions": deception_log,
    }
    return records, side


def _config_json(cfg: SynthConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def _enforce_train_coverage(records: list[AttackRecord], train_fraction: float) -> list[AttackRecord]:
    """Drop test-period records whose exploit never occurs in the training prefix."""
    keep = set(range(len(records)))
    by_target: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_target.setdefault(r.to_team, []).append(i)
    for idx in by_target.values():
        idx = sorted(idx, key=lambda i: record_order(records[i]))
        while True:
            n_train = split_point(len(idx), train_fraction)
            train_keys = {records[i].exploit_key for i in idx[:n_train]}
            bad = [i for i in idx[n_train:] if records[i].exploit_key not in train_keys]
            if not bad:
                break
            bad_set = set(bad)
            idx = [i for i in idx if i not in bad_set]
            keep -= bad_set
    out = [r for i, r in enumerate(records) if i in keep]
    return [dataclasses.replace(r, seq=i) for i, r in enumerate(out)]


def write_side_table(side: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")
