"""MIB data model and the virtual MIB: a live in-memory instance store
with deterministic simulated dynamics.

The schema file format is line oriented:

    var <dotted-oid> <name> <syntax> <ro|rw> [table]
    notif <name> <oid>[,<oid>...]
    dyn <dotted-oid> <constant|counter:<rate-per-s>|gauge:<lo>:<hi>:<step>>

`#` starts a comment, blank lines are ignored.  Scalar variables are
declared with their full instance OID (trailing .0); table columns are
declared with the column OID plus the `table` flag, and rows are indexed
by a single integer arc appended to the column OID.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from mfnet.errors import (
    AccessDenied,
    EndOfMib,
    NoSuchInstance,
    NotATable,
    SchemaError,
    WrongType,
)
from mfnet.oid import Oid

U32 = 2**32

INTEGER = "integer"
COUNTER32 = "counter32"
GAUGE = "gauge"
TIMETICKS = "timeticks"
OCTET_STRING = "octet-string"
OID = "oid"

SYNTAXES = (INTEGER, COUNTER32, GAUGE, TIMETICKS, OCTET_STRING, OID)


@dataclass(frozen=True)
class MibValue:
    tag: str
    value: object

    def __post_init__(self):
        if self.tag not in SYNTAXES:
            raise ValueError(f"unknown syntax tag {self.tag!r}")
        v = self.value
        if self.tag in (COUNTER32, GAUGE):
            if not isinstance(v, int) or not (0 <= v < U32):
                raise ValueError(f"{self.tag} out of [0, 2^32-1]: {v!r}")
        elif self.tag == TIMETICKS:
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"timeticks must be a non-negative int: {v!r}")
        elif self.tag == INTEGER:
            if not isinstance(v, int):
                raise ValueError(f"integer value required: {v!r}")
        elif self.tag == OCTET_STRING:
            if not isinstance(v, bytes):
                raise ValueError(f"octet-string value must be bytes: {v!r}")
        elif self.tag == OID:
            if not isinstance(v, Oid):
                raise ValueError(f"oid value must be an Oid: {v!r}")


def default_value(syntax: str) -> MibValue:
    if syntax == OCTET_STRING:
        return MibValue(OCTET_STRING, b"")
    if syntax == OID:
        return MibValue(OID, Oid((0, 0)))
    return MibValue(syntax, 0)


@dataclass(frozen=True)
class VariableDef:
    oid: Oid
    name: str
    syntax: str
    access: str  # "ro" | "rw"
    is_table_column: bool = False
    description: str = ""


@dataclass(frozen=True)
class NotificationDef:
    name: str
    payload: tuple[Oid, ...]


@dataclass
class MibSchema:
    name: str
    variables: list[VariableDef] = field(default_factory=list)
    notifications: list[NotificationDef] = field(default_factory=list)

    def validate(self):
        oids = [v.oid for v in self.variables]
        if len(set(oids)) != len(oids):
            raise SchemaError(f"duplicate variable OIDs in schema {self.name}")
        names = [n.name for n in self.notifications]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate notification names in schema {self.name}")

    def to_text(self) -> str:
        """Render back into the schema file syntax (used by the publish index)."""
        lines = []
        for v in self.variables:
            parts = ["var", str(v.oid), v.name, v.syntax, v.access]
            if v.is_table_column:
                parts.append("table")
            lines.append(" ".join(parts))
        for n in self.notifications:
            lines.append(f"notif {n.name} {','.join(str(o) for o in n.payload)}")
        return "\n".join(lines)


# --- dynamics rules ---

@dataclass(frozen=True)
class Constant:
    pass


@dataclass(frozen=True)
class MonotonicCounter:
    rate_per_s: float  # increments per second


@dataclass(frozen=True)
class GaugeWalk:
    lo: int
    hi: int
    step: int


DynamicsRule = Constant | MonotonicCounter | GaugeWalk


def parse_dynamics(text: str) -> DynamicsRule:
    if text == "constant":
        return Constant()
    if text.startswith("counter:"):
        return MonotonicCounter(float(text.split(":", 1)[1]))
    if text.startswith("gauge:"):
        _, lo, hi, step = text.split(":")
        return GaugeWalk(int(lo), int(hi), int(step))
    raise SchemaError(f"unknown dynamics rule {text!r}")


def render_dynamics(rule: DynamicsRule) -> str:
    if isinstance(rule, Constant):
        return "constant"
    if isinstance(rule, MonotonicCounter):
        rate = rule.rate_per_s
        return f"counter:{int(rate) if rate == int(rate) else rate}"
    return f"gauge:{rule.lo}:{rule.hi}:{rule.step}"


def parse_schema_text(text: str, name: str) -> tuple[MibSchema, dict[Oid, DynamicsRule]]:
    schema = MibSchema(name=name)
    dynamics: dict[Oid, DynamicsRule] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kw = fields[0]
        try:
            if kw == "var":
                oid, vname, syntax, access = fields[1:5]
                is_table = len(fields) > 5 and fields[5] == "table"
                if syntax not in SYNTAXES:
                    raise SchemaError(f"unknown syntax {syntax!r}")
                if access not in ("ro", "rw"):
                    raise SchemaError(f"access must be ro or rw, got {access!r}")
                schema.variables.append(
                    VariableDef(Oid.parse(oid), vname, syntax, access, is_table)
                )
            elif kw == "notif":
                nname, oids = fields[1], fields[2]
                payload = tuple(Oid.parse(o) for o in oids.split(","))
                schema.notifications.append(NotificationDef(nname, payload))
            elif kw == "dyn":
                dynamics[Oid.parse(fields[1])] = parse_dynamics(fields[2])
            else:
                raise SchemaError(f"unknown declaration {kw!r}")
        except (IndexError, ValueError) as exc:
            raise SchemaError(f"{name}:{lineno}: {exc}") from exc
    schema.validate()
    return schema, dynamics


def load_schema_file(path: str | Path) -> tuple[MibSchema, dict[Oid, DynamicsRule]]:
    path = Path(path)
    return parse_schema_text(path.read_text(), path.stem)


def builtin_schema_path(name: str) -> Path:
    return Path(__file__).parent / "schemas" / f"{name}.schema"


def _walk_direction(seed: int, oid: Oid, k: int) -> int:
    """Deterministic +/-1 for gauge-walk step number k."""
    h = hashlib.blake2b(f"{seed}:{oid}:{k}".encode(), digest_size=8).digest()
    return 1 if h[0] & 1 else -1


class VirtualMib:
    """Live instance store over one or more schemas.

    Single-writer: only one thread of control may mutate (set/tick);
    individual reads are atomic.
    """

    def __init__(self, schemas=(), dynamics=None, seed: int = 0):
        self.schemas: list[MibSchema] = list(schemas)
        self.store: dict[Oid, MibValue] = {}
        self.dynamics: dict[Oid, DynamicsRule] = dict(dynamics or {})
        self.sim_time = 0  # milliseconds
        self.seed = seed
        self._defs: dict[Oid, VariableDef] = {}
        for schema in self.schemas:
            for v in schema.variables:
                if v.oid in self._defs:
                    raise SchemaError(f"duplicate OID across schemas: {v.oid}")
                self._defs[v.oid] = v
        self._instantiate_scalars()

    @classmethod
    def from_schema_files(cls, paths, seed: int = 0) -> "VirtualMib":
        schemas = []
        dynamics: dict[Oid, DynamicsRule] = {}
        for p in paths:
            schema, dyn = load_schema_file(p)
            schemas.append(schema)
            dynamics.update(dyn)
        return cls(schemas, dynamics, seed=seed)

    # --- schema lookups ---

    def _instantiate_scalars(self):
        for v in self._defs.values():
            if not v.is_table_column:
                self.store.setdefault(v.oid, default_value(v.syntax))

    def resolve_def(self, oid: Oid) -> VariableDef | None:
        """Definition governing an instance OID (exact for scalars,
        parent column for table cells)."""
        d = self._defs.get(oid)
        if d is not None and not d.is_table_column:
            return d
        if len(oid) > 1:
            col = self._defs.get(oid.parent())
            if col is not None and col.is_table_column:
                return col
        return None

    def notification_def(self, name: str) -> NotificationDef | None:
        for schema in self.schemas:
            for n in schema.notifications:
                if n.name == name:
                    return n
        return None

    def find_variable(self, name: str) -> VariableDef | None:
        for d in self._defs.values():
            if d.name == name:
                return d
        return None

    # --- instance population ---

    def seed_value(self, oid: Oid, value: MibValue):
        d = self.resolve_def(oid)
        if d is None:
            raise NoSuchInstance(f"no definition covers {oid}")
        if value.tag != d.syntax:
            raise WrongType(f"{oid}: expected {d.syntax}, got {value.tag}")
        self.store[oid] = value

    def add_table_row(self, table_oid: Oid, index: int, values: dict[str, MibValue]):
        """Create one row: every column under table_oid gets an instance at
        <column>.<index>; values are keyed by column name, the rest default."""
        cols = self._table_columns(table_oid)
        if not cols:
            raise NotATable(f"{table_oid} has no table columns")
        by_name = {c.name: c for c in cols}
        for name in values:
            if name not in by_name:
                raise SchemaError(f"no column named {name!r} under {table_oid}")
        for col in cols:
            v = values.get(col.name, default_value(col.syntax))
            if v.tag != col.syntax:
                raise WrongType(f"{col.name}: expected {col.syntax}, got {v.tag}")
            self.store[col.oid.child(index)] = v

    def set_dynamics(self, oid: Oid, rule: DynamicsRule):
        if self.resolve_def(oid) is None:
            raise NoSuchInstance(f"no definition covers {oid}")
        self.dynamics[oid] = rule

    def _table_columns(self, table_oid: Oid) -> list[VariableDef]:
        return [
            d
            for d in self._defs.values()
            if d.is_table_column and d.oid.startswith(table_oid) and d.oid != table_oid
        ]

    # --- access operations ---

    def get(self, oid: Oid) -> MibValue:
        try:
            return self.store[oid]
        except KeyError:
            raise NoSuchInstance(str(oid)) from None

    def get_next(self, oid: Oid) -> tuple[Oid, MibValue]:
        best = None
        for k in self.store:
            if k > oid and (best is None or k < best):
                best = k
        if best is None:
            raise EndOfMib(str(oid))
        return best, self.store[best]

    def walk(self, prefix: Oid) -> list[tuple[Oid, MibValue]]:
        """All instances under prefix, via repeated get_next."""
        out = []
        cur = prefix
        while True:
            try:
                cur, val = self.get_next(cur)
            except EndOfMib:
                break
            if not cur.startswith(prefix):
                break
            out.append((cur, val))
        return out

    def get_table(self, table_oid: Oid) -> list[tuple[int, list[tuple[Oid, MibValue]]]]:
        """All rows of a table in one call: [(index, [(oid, value), ...]), ...]."""
        cols = self._table_columns(table_oid)
        if not cols:
            raise NotATable(str(table_oid))
        rows: dict[int, list[tuple[Oid, MibValue]]] = {}
        for col in sorted(cols, key=lambda c: c.oid):
            for inst, val in sorted(self.store.items()):
                if inst.startswith(col.oid) and len(inst) == len(col.oid) + 1:
                    rows.setdefault(inst.arcs[-1], []).append((inst, val))
        return [(idx, rows[idx]) for idx in sorted(rows)]

    def set(self, oid: Oid, value: MibValue) -> MibValue:
        d = self.resolve_def(oid)
        if d is None or oid not in self.store:
            raise NoSuchInstance(str(oid))
        if d.access != "rw":
            raise AccessDenied(str(oid))
        if value.tag != d.syntax:
            raise WrongType(f"{oid}: expected {d.syntax}, got {value.tag}")
        prev = self.store[oid]
        self.store[oid] = value
        return prev

    # --- simulated dynamics ---

    def tick(self, dt_ms: int):
        """Advance simulated time.  Updates depend only on absolute sim
        time, so tick(a); tick(b) equals tick(a+b)."""
        if dt_ms < 0:
            raise ValueError("dt must be >= 0")
        t1 = self.sim_time
        t2 = t1 + dt_ms
        self.sim_time = t2
        for oid, rule in self.dynamics.items():
            if oid not in self.store:
                continue
            cur = self.store[oid]
            if isinstance(rule, MonotonicCounter):
                delta = math.floor(rule.rate_per_s * t2 / 1000) - math.floor(
                    rule.rate_per_s * t1 / 1000
                )
                if delta:
                    self.store[oid] = MibValue(cur.tag, (cur.value + delta) % U32)
            elif isinstance(rule, GaugeWalk):
                # one step per whole elapsed second of sim time
                k1, k2 = t1 // 1000, t2 // 1000
                if k2 > k1:
                    v = cur.value
                    for k in range(k1 + 1, k2 + 1):
                        v += rule.step * _walk_direction(self.seed, oid, k)
                        v = max(rule.lo, min(rule.hi, v))
                    self.store[oid] = MibValue(cur.tag, v)
