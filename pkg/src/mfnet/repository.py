"""File-backed data server: one directory per store.

Definition stores (subscriptions, topology, handler-defs, polling-defs)
keep one file per key, fsynced on every mutation.  Append-only stores
(invocation-log, pushed-data, pushed-notifications) keep a single
``records.log`` of length-prefix framed records, flushed on every
bulk_append; a torn tail (partial frame) is dropped on recovery.

Record payloads are framed documents re-using the wire framing:
subscription records are encoded subscribe-request messages, everything
else is canonical JSON (sorted keys).  See docs/repository-format.md.

``notification-subscriptions`` is a read-only view derived from the
subscriptions store: one record per subscription carrying its filter.
"""

from __future__ import annotations

import io
import json
import os
import tarfile
from pathlib import Path

from mfnet.errors import (
    MfnetError,
    MissingKey,
    NotAppendOnly,
    SnapshotVersionMismatch,
    UnknownStore,
)
from mfnet.subscription import Subscription
from mfnet.wire import Deframer, ManagementMessage, decode_message, encode_message, frame

DEFINITION_STORES = ("subscriptions", "topology", "handler-defs", "polling-defs")
APPEND_ONLY_STORES = ("invocation-log", "pushed-data", "pushed-notifications")
VIEW_STORES = ("notification-subscriptions",)
ALL_STORES = DEFINITION_STORES + APPEND_ONLY_STORES + VIEW_STORES

SNAPSHOT_MAGIC = b"MFSNAP 1\n"


def _encode_record(store: str, record) -> bytes:
    if store == "subscriptions":
        msg = ManagementMessage(
            kind="subscribe-request",
            subscription_id=record.id,
            device_id=record.agent,
            document=record.to_text(),
        )
        return encode_message(msg)
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode()


def _decode_record(store: str, payload: bytes):
    if store == "subscriptions":
        msg = decode_message(payload)
        return Subscription.from_text(msg.document)
    return json.loads(payload.decode())


class Repository:
    """Store catalog rooted at one directory.  Single-writer per store."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        for store in DEFINITION_STORES + APPEND_ONLY_STORES:
            (self.root / store).mkdir(parents=True, exist_ok=True)
        # in-memory mirror of append-only stores, loaded on open
        self._logs: dict[str, list] = {}
        for store in APPEND_ONLY_STORES:
            self._logs[store] = self._recover_log(store)

    # --- path helpers ---

    def _check(self, store: str):
        if store not in ALL_STORES:
            raise UnknownStore(store)

    def _key_path(self, store: str, key: str) -> Path:
        safe = key.replace("/", "_")
        return self.root / store / f"{safe}.rec"

    def _log_path(self, store: str) -> Path:
        return self.root / store / "records.log"

    def _recover_log(self, store: str) -> list:
        path = self._log_path(store)
        records = []
        if not path.exists():
            return records
        data = path.read_bytes()
        d = Deframer()
        for payload in d.feed(data):
            records.append(_decode_record(store, payload))
        if d.pending:
            # torn tail from an interrupted append: drop it on disk too
            keep = len(data) - d.pending
            with open(path, "r+b") as f:
                f.truncate(keep)
        return records

    # --- definition store operations ---

    def put(self, store: str, key: str, record):
        self._check(store)
        if store not in DEFINITION_STORES:
            raise MfnetError(f"put not supported on store {store!r}")
        path = self._key_path(store, key)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(frame(_encode_record(store, record)))
        with open(tmp, "rb") as f:
            os.fsync(f.fileno())
        os.replace(tmp, path)

    def get(self, store: str, key: str):
        self._check(store)
        if store not in DEFINITION_STORES:
            raise MfnetError(f"get not supported on store {store!r}")
        path = self._key_path(store, key)
        if not path.exists():
            raise MissingKey(f"{store}/{key}")
        payloads = Deframer().feed(path.read_bytes())
        return _decode_record(store, payloads[0])

    def delete(self, store: str, key: str):
        self._check(store)
        if store not in DEFINITION_STORES:
            raise MfnetError(f"delete not supported on store {store!r}")
        path = self._key_path(store, key)
        if not path.exists():
            raise MissingKey(f"{store}/{key}")
        path.unlink()

    def keys(self, store: str) -> list[str]:
        self._check(store)
        if store not in DEFINITION_STORES:
            raise MfnetError(f"keys not supported on store {store!r}")
        return sorted(p.stem for p in (self.root / store).glob("*.rec"))

    # --- append-only store operations ---

    def bulk_append(self, store: str, records) -> int:
        self._check(store)
        if store not in APPEND_ONLY_STORES:
            raise NotAppendOnly(store)
        records = list(records)
        if not records:
            return 0
        blob = b"".join(frame(_encode_record(store, r)) for r in records)
        with open(self._log_path(store), "ab") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        self._logs[store].extend(records)
        return len(records)

    # --- listing with filters ---

    def list(self, store: str, device=None, oid=None, time_range=None) -> list:
        """All records of a store; sample stores support (device, oid,
        time-range) filters.  time_range is (t0, t1], inclusive end."""
        self._check(store)
        if store == "notification-subscriptions":
            out = []
            for key in self.keys("subscriptions"):
                sub = self.get("subscriptions", key)
                out.append(
                    {
                        "sub-id": sub.id,
                        "agent": sub.agent,
                        "filter": sorted(sub.notification_filter),
                    }
                )
            return out
        if store in DEFINITION_STORES:
            return [self.get(store, k) for k in self.keys(store)]
        records = self._logs[store]
        if device is None and oid is None and time_range is None:
            return list(records)
        out = []
        for r in records:
            if device is not None and r.get("device") != device:
                continue
            if oid is not None and r.get("oid") != str(oid):
                continue
            if time_range is not None:
                t = r.get("time")
                if t is None or not (time_range[0] < t <= time_range[1]):
                    continue
            out.append(r)
        return out

    # --- subscription helpers ---

    def subscriptions_for(self, agent: str) -> list[Subscription]:
        return [s for s in self.list("subscriptions") if s.agent == agent]

    # --- snapshot / restore ---

    def snapshot(self, out_path: str | Path):
        out_path = Path(out_path)
        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w") as tar:
            tar.add(self.root, arcname="stores")
        out_path.write_bytes(SNAPSHOT_MAGIC + buf.getvalue())

    @classmethod
    def restore(cls, snapshot_path: str | Path, root: str | Path) -> "Repository":
        data = Path(snapshot_path).read_bytes()
        if not data.startswith(SNAPSHOT_MAGIC):
            raise SnapshotVersionMismatch(
                f"snapshot header {data[:16]!r} does not match {SNAPSHOT_MAGIC!r}"
            )
        root = Path(root)
        with tarfile.open(fileobj=io.BytesIO(data[len(SNAPSHOT_MAGIC) :])) as tar:
            for member in tar.getmembers():
                if not member.name.startswith("stores"):
                    raise SnapshotVersionMismatch(f"unexpected member {member.name}")
            tar.extractall(root, filter="data")
        # move stores/* up to root
        stores_dir = root / "stores"
        for child in stores_dir.iterdir():
            child.rename(root / child.name)
        stores_dir.rmdir()
        return cls(root)

    # --- debugging ---

    def dump_text(self, store: str) -> str:
        self._check(store)
        lines = []
        if store in DEFINITION_STORES:
            for key in self.keys(store):
                rec = self.get(store, key)
                body = rec.to_text() if isinstance(rec, Subscription) else json.dumps(
                    rec, sort_keys=True
                )
                lines.append(f"--- {key}\n{body}")
        else:
            for rec in self.list(store):
                lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")
