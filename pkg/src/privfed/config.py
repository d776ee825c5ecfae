"""Public study configuration.

Serialized as line-oriented key=value text.  The canonical form (sorted keys,
LF line endings) feeds the SHA-256 config hash that every party must agree on
before any share moves.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError

MODES = ("full", "multisite", "aggregate_only")

_ENDPOINT_KEYS = ("alice", "bob", "dealer", "analyst")


@dataclass(frozen=True)
class StudyConfig:
    years: tuple[int, ...]
    batch_count: int = 25
    suppression_threshold: int = 11
    mode: str = "full"
    seed: int = 0
    partners: tuple[str, ...] = ()
    endpoints: dict = field(default_factory=dict)

    def __post_init__(self):
        ys = tuple(self.years)
        if not 1 <= len(ys) <= 3:
            raise ConfigError("years must list 1 to 3 calendar years")
        if list(ys) != sorted(set(ys)):
            raise ConfigError("years must be sorted and unique")
        if self.batch_count < 1:
            raise ConfigError("batch_count must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.suppression_threshold < 0:
            raise ConfigError("suppression_threshold must be >= 0")
        if len(set(self.partners)) != len(self.partners):
            raise ConfigError("duplicate partner ids")
        for k in self.endpoints:
            if k not in _ENDPOINT_KEYS:
                raise ConfigError(f"unknown endpoint role {k!r}")

    @property
    def n_years(self) -> int:
        return len(self.years)

    def year_index(self, calendar_year: int) -> int:
        return self.years.index(calendar_year)

    def with_mode(self, mode: str) -> "StudyConfig":
        return replace(self, mode=mode)

    def with_batch_count(self, batch_count: int) -> "StudyConfig":
        return replace(self, batch_count=batch_count)

    def serialize(self) -> str:
        """Canonical key=value text: sorted keys, LF endings."""
        items = {
            "batch_count": str(self.batch_count),
            "mode": self.mode,
            "seed": str(self.seed),
            "suppression_threshold": str(self.suppression_threshold),
            "years": ",".join(str(y) for y in self.years),
        }
        if self.partners:
            items["partners"] = ",".join(self.partners)
        for k in _ENDPOINT_KEYS:
            if k in self.endpoints:
                items[k] = self.endpoints[k]
        return "".join(f"{k}={items[k]}\n" for k in sorted(items))

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.serialize().encode()).digest()

    @classmethod
    def parse(cls, text: str) -> "StudyConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            k, _, v = line.partition("=")
            k = k.strip()
            if k in values:
                raise ConfigError(f"line {lineno}: duplicate key {k!r}")
            values[k] = v.strip()

        known = {"years", "batch_count", "suppression_threshold", "mode", "seed",
                 "partners", *_ENDPOINT_KEYS}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "years" not in values:
            raise ConfigError("missing required key: years")

        def as_int(key, default=None):
            if key not in values:
                return default
            try:
                return int(values[key])
            except ValueError:
                raise ConfigError(f"{key} must be an integer") from None

        try:
            years = tuple(int(y) for y in values["years"].split(",") if y)
        except ValueError:
            raise ConfigError("years must be comma-separated integers") from None
        return cls(
            years=years,
            batch_count=as_int("batch_count", 25),
            suppression_threshold=as_int("suppression_threshold", 11),
            mode=values.get("mode", "full"),
            seed=as_int("seed", 0),
            partners=tuple(p for p in values.get("partners", "").split(",") if p),
            endpoints={k: values[k] for k in _ENDPOINT_KEYS if k in values},
        )

    @classmethod
    def load(cls, path) -> "StudyConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())


def parse_endpoint(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad endpoint {spec!r}, expected host:port")
    return host, int(port)


def batch_capacity(n_rows: int, batch_count: int) -> int:
    """Public per-batch row capacity for one partner's upload.

    Every batch is padded to this size so upload shapes depend only on the
    partner's total row count and the batch count.  The slack makes hash-skew
    overflow astronomically unlikely for honest token distributions.
    """
    if batch_count <= 1 or n_rows == 0:
        return n_rows
    mean = n_rows / batch_count
    return min(n_rows, math.ceil(mean + 12.0 * math.sqrt(mean) + 48))
