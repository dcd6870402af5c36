"""Parsing raw transaction logs into an ID-mapped, time-ordered :class:`Dataset`."""

from __future__ import annotations

import calendar
import dataclasses
import csv
import gzip
import hashlib
import io
import os
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .utils import FORMAT_VERSION, DataError

ColumnRef = Union[str, int, Sequence[Union[str, int]]]

VERSION_PREFIX = "#splitkit-format-version:"
_ISO_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d")


@dataclass(frozen=True)
class SchemaConfig:
    """Column mapping for a delimited transaction log.

    Columns are given by header name or zero-based position. A tuple of
    columns builds a composite key (e.g. customer + date as basket id).
    ``basket`` and ``quantity`` are optional; without a basket column each
    row becomes its own basket.

    ``timestamp_format`` is a :func:`~datetime.datetime.strptime` pattern, or
    ``None`` to accept epoch seconds and ``YYYY-MM-DD[ HH:MM:SS]`` (UTC).
    ``basket_policy`` is ``"reject"`` or ``"repair"``; see :func:`build_dataset`.
    """

    user: ColumnRef
    item: ColumnRef
    timestamp: ColumnRef
    basket: ColumnRef | None = None
    quantity: ColumnRef | None = None
    delimiter: str = ","
    timestamp_format: str | None = None
    header: bool = True
    basket_policy: str = "reject"

    def __post_init__(self):
        for name in ("user", "item", "timestamp"):
            if getattr(self, name) is None:
                raise DataError(f"schema: column mapping for {name!r} is mandatory")
        if self.basket_policy not in ("reject", "repair"):
            raise DataError(f"schema: unknown basket_policy {self.basket_policy!r}")
        if not self.header:
            for name in ("user", "item", "timestamp", "basket", "quantity"):
                for ref in _as_tuple(getattr(self, name)):
                    if not isinstance(ref, int):
                        raise DataError(
                            f"schema: {name} column {ref!r} must be a position when header=False")

    @classmethod
    def from_dict(cls, d):
        """Build from parsed JSON: lists become composite keys, ``preset`` selects a named schema."""
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None:
            if preset not in SCHEMA_PRESETS:
                raise DataError(f"schema: unknown preset {preset!r}; valid: {', '.join(SCHEMA_PRESETS)}")
            return dataclasses.replace(SCHEMA_PRESETS[preset], **d)
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"schema: {exc}") from None


CANONICAL_SCHEMA = SchemaConfig(
    user="user", item="item", timestamp="timestamp", basket="basket", quantity="quantity")

# Public Ta-Feng release: one basket per customer per day.
TAFENG_SCHEMA = SchemaConfig(
    user="CUSTOMER_ID",
    item="PRODUCT_ID",
    timestamp="TRANSACTION_DT",
    basket=("CUSTOMER_ID", "TRANSACTION_DT"),
    quantity="AMOUNT",
    timestamp_format="%m/%d/%Y",
)

SCHEMA_PRESETS = {"canonical": CANONICAL_SCHEMA, "tafeng": TAFENG_SCHEMA}


class Dataset:
    """Deduplicated, ID-mapped collection of interactions.

    Interactions are stored column-wise and sorted by (timestamp, basket
    index, input order). ``user_ids``/``item_ids``/``basket_ids`` map dense
    indices back to external identifiers. Instances are immutable: the
    arrays are read-only and derived indexes are computed once.
    """

    def __init__(self, user, item, basket, timestamp, quantity,
                 user_ids, item_ids, basket_ids):
        self.user = _frozen(user)
        self.item = _frozen(item)
        self.basket = _frozen(basket)
        self.timestamp = _frozen(timestamp)
        self.quantity = _frozen(quantity)
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        self.basket_ids = tuple(basket_ids)
        n = len(self.user)
        if not all(len(a) == n for a in (self.item, self.basket, self.timestamp, self.quantity)):
            raise DataError("interaction columns differ in length")
        for arr, ids, name in ((self.user, self.user_ids, "user"),
                               (self.item, self.item_ids, "item"),
                               (self.basket, self.basket_ids, "basket")):
            if n and (arr.min() < 0 or arr.max() >= len(ids)):
                raise DataError(f"{name} index out of range of its map")

    def __len__(self):
        return len(self.user)

    def __repr__(self):
        return (f"Dataset(interactions={len(self)}, users={self.n_users}, "
                f"items={self.n_items}, baskets={self.n_baskets})")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.user_ids == other.user_ids and self.item_ids == other.item_ids
                and self.basket_ids == other.basket_ids
                and all(np.array_equal(getattr(self, c), getattr(other, c))
                        for c in ("user", "item", "basket", "timestamp", "quantity")))

    __hash__ = None

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def n_baskets(self):
        return len(self.basket_ids)

    @cached_property
    def user_index(self):
        return {uid: k for k, uid in enumerate(self.user_ids)}

    @cached_property
    def item_index(self):
        return {iid: k for k, iid in enumerate(self.item_ids)}

    @cached_property
    def basket_index(self):
        return {bid: k for k, bid in enumerate(self.basket_ids)}

    @cached_property
    def _chronology(self):
        # interactions are already time-ordered, so a stable sort by user
        # yields every per-user chronology as a contiguous run
        order = np.argsort(self.user, kind="stable")
        offsets = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.user, minlength=self.n_users), out=offsets[1:])
        return _frozen(order), _frozen(offsets)

    def chronology(self, user):
        """Interaction indices of ``user`` ordered by (timestamp, basket, input order)."""
        if isinstance(user, (bool, np.bool_)) or not isinstance(user, (int, np.integer)):
            raise DataError(f"user index must be an integer, got {user!r}")
        if not 0 <= user < self.n_users:
            raise DataError(f"unknown user index {user}")
        order, offsets = self._chronology
        return order[offsets[user]:offsets[user + 1]]

    def iter_chronologies(self):
        """Yield ``(user, indices)`` for every user in index order."""
        order, offsets = self._chronology
        for u in range(self.n_users):
            yield u, order[offsets[u]:offsets[u + 1]]

    @cached_property
    def time_granularity(self):
        """``"day"`` when every timestamp falls on a UTC midnight, else ``"second"``."""
        if len(self) and np.all(self.timestamp % 86400 == 0):
            return "day"
        return "second"

    @cached_property
    def digest(self):
        h = hashlib.sha256()
        for col in ("user", "item", "basket", "timestamp", "quantity"):
            h.update(np.ascontiguousarray(getattr(self, col), dtype="<i8").tobytes())
        for ids in (self.user_ids, self.item_ids, self.basket_ids):
            h.update(b"\x1e")
            h.update("\x1f".join(ids).encode())
        return h.hexdigest()

    def subset(self, mask):
        """New Dataset with only the interactions selected by ``mask``.

        Maps are compacted, keeping the relative order of surviving IDs.
        """
        mask = np.asarray(mask, dtype=bool)
        cols = {c: getattr(self, c)[mask] for c in ("user", "item", "basket")}
        maps = {}
        for c, ids in (("user", self.user_ids), ("item", self.item_ids),
                       ("basket", self.basket_ids)):
            keep = np.zeros(len(ids), dtype=bool)
            keep[cols[c]] = True
            remap = np.cumsum(keep) - 1
            cols[c] = remap[cols[c]]
            maps[c] = [ids[k] for k in np.flatnonzero(keep)]
        return Dataset(cols["user"], cols["item"], cols["basket"],
                       self.timestamp[mask], self.quantity[mask],
                       maps["user"], maps["item"], maps["basket"])


def _frozen(a):
    a = np.array(a, dtype=np.int64)
    a.flags.writeable = False
    return a


def _as_tuple(ref):
    if ref is None:
        return ()
    if isinstance(ref, (str, int)):
        return (ref,)
    return tuple(ref)


@dataclass
class _Maps:
    ids: list = field(default_factory=list)
    index: dict = field(default_factory=dict)

    @classmethod
    def preset(cls, ids):
        ids = list(ids) if ids is not None else []
        return cls(ids, {v: k for k, v in enumerate(ids)})

    def get(self, key):
        k = self.index.get(key)
        if k is None:
            k = self.index[key] = len(self.ids)
            self.ids.append(key)
        return k


def build_dataset(users, items, timestamps, baskets=None, quantities=None, *,
                  basket_policy="reject", maps=None, line_numbers=None):
    """Canonicalize raw interaction columns into a :class:`Dataset`.

    Dense IDs are assigned in first-seen order (or taken from ``maps``, a dict
    with optional ``"user"``, ``"item"``, ``"basket"`` ID lists). Rows sharing
    (user, item, basket) are merged by summing quantity. Every basket must
    belong to one user at one timestamp: ``basket_policy="reject"`` raises
    :class:`DataError`, ``"repair"`` splits offending baskets into one basket
    per (user, timestamp), suffixing the ID with ``#k``.
    """
    n = len(users)
    if not (len(items) == len(timestamps) == n):
        raise DataError("user, item and timestamp columns differ in length")
    if baskets is None:
        baskets = [str(k) for k in range(n)]
    if quantities is None:
        quantities = [1] * n
    if line_numbers is None:
        line_numbers = range(1, n + 1)
    maps = maps or {}
    umap = _Maps.preset(maps.get("user"))
    imap = _Maps.preset(maps.get("item"))
    bmap = _Maps.preset(maps.get("basket"))

    owner = {}       # basket external id -> (user, timestamp, line)
    repaired = {}    # (basket, user, timestamp) -> repaired basket id
    n_repairs = {}
    rows = {}        # (u, i, b) -> row slot
    out_u, out_i, out_b, out_t, out_q = [], [], [], [], []
    for u_ext, i_ext, t, b_ext, q, line in zip(users, items, timestamps, baskets,
                                               quantities, line_numbers):
        first = owner.setdefault(b_ext, (u_ext, t, line))
        if first[0] != u_ext or first[1] != t:
            if basket_policy != "repair":
                what = "two users" if first[0] != u_ext else "two timestamps"
                raise DataError(
                    f"line {line}: basket {b_ext!r} spans {what} "
                    f"(first seen on line {first[2]})")
            key = (b_ext, u_ext, t)
            if key not in repaired:
                n_repairs[b_ext] = n_repairs.get(b_ext, 0) + 1
                repaired[key] = f"{b_ext}#{n_repairs[b_ext]}"
            b_ext = repaired[key]
        u, i, b = umap.get(u_ext), imap.get(i_ext), bmap.get(b_ext)
        slot = rows.get((u, i, b))
        if slot is None:
            rows[(u, i, b)] = len(out_u)
            out_u.append(u)
            out_i.append(i)
            out_b.append(b)
            out_t.append(t)
            out_q.append(q)
        else:
            out_q[slot] += q

    u = np.array(out_u, dtype=np.int64)
    i = np.array(out_i, dtype=np.int64)
    b = np.array(out_b, dtype=np.int64)
    t = np.array(out_t, dtype=np.int64)
    q = np.array(out_q, dtype=np.int64)
    order = np.lexsort((np.arange(len(u)), b, t))
    return Dataset(u[order], i[order], b[order], t[order], q[order],
                   umap.ids, imap.ids, bmap.ids)


class _TimestampParser:
    def __init__(self, fmt):
        self.fmt = fmt
        self.cache = {}

    def __call__(self, text):
        value = self.cache.get(text)
        if value is None:
            value = self.cache[text] = self._parse(text.strip())
        return value

    def _parse(self, text):
        if self.fmt is None:
            try:
                value = int(text)
            except ValueError:
                for fmt in _ISO_FORMATS:
                    try:
                        return calendar.timegm(datetime.strptime(text, fmt).timetuple())
                    except ValueError:
                        continue
                raise ValueError(f"unparseable timestamp {text!r}") from None
        else:
            try:
                value = calendar.timegm(datetime.strptime(text, self.fmt).timetuple())
            except ValueError:
                raise ValueError(f"timestamp {text!r} does not match {self.fmt!r}") from None
        if value < 0:
            raise ValueError(f"negative timestamp {text!r}")
        return value


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        raw = path.open("rb")
        if path.suffix == ".gz":
            raw = gzip.GzipFile(fileobj=raw)
        return io.TextIOWrapper(raw, encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_transactions(source, schema=CANONICAL_SCHEMA, *, maps=None):
    """Parse a delimited transaction log.

    Parameters
    ----------
    source : path, bytes, or binary/text stream
        Delimited text; ``.gz`` paths are decompressed. A leading
        ``#splitkit-format-version`` line is checked and skipped.
    schema : SchemaConfig
    maps : dict, optional
        Preset external-ID lists (see :func:`build_dataset`).

    Raises
    ------
    DataError
        With the offending line number for malformed rows, bad timestamps or
        baskets spanning several users.
    """
    stream = _open_text(source)
    first = stream.readline()
    line_offset = 1
    if first.startswith(VERSION_PREFIX):
        _check_version(first, "dataset")
        first = None
    lines = [first] if first else []
    reader = csv.reader(_chain(lines, stream), delimiter=schema.delimiter)
    if first is None:
        line_offset = 2  # reader line 1 is file line 2

    header = None
    if schema.header:
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty input: header row expected") from None

    def resolve(ref, name):
        cols = []
        for r in _as_tuple(ref):
            if isinstance(r, int):
                cols.append(r)
            elif header is not None and r in header:
                cols.append(header.index(r))
            else:
                raise DataError(f"schema: column {r!r} for {name} not found in header")
        return cols

    ucol = resolve(schema.user, "user")
    icol = resolve(schema.item, "item")
    tcol = resolve(schema.timestamp, "timestamp")
    bcol = resolve(schema.basket, "basket") if schema.basket is not None else None
    qcol = resolve(schema.quantity, "quantity") if schema.quantity is not None else None
    width = max(ucol + icol + tcol + (bcol or []) + (qcol or [])) + 1
    parse_ts = _TimestampParser(schema.timestamp_format)

    def key(row, cols):
        if len(cols) == 1:
            return row[cols[0]]
        return "|".join(row[c] for c in cols)

    users, items, stamps, baskets, qtys, line_nos = [], [], [], [], [], []
    for row in reader:
        line = reader.line_num + line_offset - 1
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < width:
            raise DataError(f"line {line}: expected at least {width} fields, got {len(row)}")
        try:
            ts = parse_ts(key(row, tcol))
        except ValueError as exc:
            raise DataError(f"line {line}: {exc}") from None
        if qcol is not None:
            try:
                q = int(float(key(row, qcol)))
            except ValueError:
                raise DataError(f"line {line}: quantity {key(row, qcol)!r} is not a number") from None
            if q < 0:
                raise DataError(f"line {line}: negative quantity {q}")
            qtys.append(max(q, 1))
        users.append(key(row, ucol))
        items.append(key(row, icol))
        stamps.append(ts)
        if bcol is not None:
            baskets.append(key(row, bcol))
        line_nos.append(line)

    return build_dataset(users, items, stamps,
                         baskets=baskets if bcol is not None else None,
                         quantities=qtys if qcol is not None else None,
                         basket_policy=schema.basket_policy, maps=maps,
                         line_numbers=line_nos)


def _chain(head, stream):
    yield from head
    yield from stream


def _check_version(line, what):
    try:
        version = int(line[len(VERSION_PREFIX):].strip())
    except ValueError:
        raise DataError(f"malformed {what} format-version line: {line.strip()!r}") from None
    if version != FORMAT_VERSION:
        raise DataError(f"{what} format version {version} is not supported "
                        f"(expected {FORMAT_VERSION})")


def _version_line():
    return f"{VERSION_PREFIX} {FORMAT_VERSION}\n"


def _write_text(path, text, compress):
    data = text.encode("utf-8")
    if compress:
        with open(path, "wb") as fh, gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
            gz.write(data)
    else:
        Path(path).write_bytes(data)


def _csv_text(header, rows):
    buf = io.StringIO()
    buf.write(_version_line())
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def export_dataset(dataset, directory, *, compress=False):
    """Write ``dataset`` in canonical form to ``directory``.

    Produces ``interactions.csv[.gz]`` (external IDs, epoch-second
    timestamps) plus ``users.csv``, ``items.csv`` and ``baskets.csv`` map
    tables so dense indices survive a round trip through :func:`read_dataset`.
    Output is byte-deterministic.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".csv.gz" if compress else ".csv"
    for stale in ("interactions.csv", "interactions.csv.gz"):
        if stale != f"interactions{suffix}" and (directory / stale).exists():
            (directory / stale).unlink()
    d = dataset
    rows = zip((d.user_ids[u] for u in d.user), (d.item_ids[i] for i in d.item),
               (d.basket_ids[b] for b in d.basket), d.timestamp.tolist(), d.quantity.tolist())
    _write_text(directory / f"interactions{suffix}",
                _csv_text(["user", "item", "basket", "timestamp", "quantity"], rows), compress)
    for name, ids in (("users", d.user_ids), ("items", d.item_ids), ("baskets", d.basket_ids)):
        _write_text(directory / f"{name}.csv", _csv_text(["index", "id"], enumerate(ids)), False)
    return directory


def _read_map(path):
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith(VERSION_PREFIX):
            raise DataError(f"{path}: missing format-version line")
        _check_version(first, "map table")
        reader = csv.reader(fh)
        next(reader, None)
        ids = []
        for k, row in enumerate(reader):
            if int(row[0]) != k:
                raise DataError(f"{path}: map indices must be dense and ordered (row {k})")
            ids.append(row[1])
        return ids


def read_dataset(directory):
    """Load a dataset written by :func:`export_dataset`."""
    directory = Path(directory)
    maps = {name: _read_map(directory / f"{name}s.csv") for name in ("user", "item", "basket")}
    path = directory / "interactions.csv"
    if not path.exists():
        path = directory / "interactions.csv.gz"
    if not path.exists():
        raise DataError(f"{directory}: no interactions file")
    d = parse_transactions(path, CANONICAL_SCHEMA, maps=maps)
    if (len(d.user_ids), len(d.item_ids), len(d.basket_ids)) != tuple(len(maps[k]) for k in ("user", "item", "basket")):
        raise DataError(f"{directory}: interactions reference IDs missing from the map tables")
    return d


def chronology(dataset, user):
    """Per-user interaction indices ordered by (timestamp, basket, input order)."""
    return dataset.chronology(user)
