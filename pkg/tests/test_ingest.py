import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitkit.ingest import (
    CANONICAL_SCHEMA,
    TAFENG_SCHEMA,
    SchemaConfig,
    build_dataset,
    export_dataset,
    parse_transactions,
    read_dataset,
)
from splitkit.utils import DataError

from conftest import random_log

CSV = b"""user,item,basket,timestamp,quantity
u1,i1,b1,100,1
u1,i2,b1,100,2
u2,i1,b2,50,1
u1,i1,b1,100,3
u2,i3,b3,200,1
"""


def test_first_seen_ids_and_time_order():
    d = parse_transactions(CSV)
    assert d.user_ids == ("u1", "u2")
    assert d.item_ids == ("i1", "i2", "i3")
    assert d.timestamp.tolist() == [50, 100, 100, 200]
    assert len(d) == 4


def test_duplicate_rows_sum_quantity():
    d = parse_transactions(CSV)
    u1, i1 = d.user_index["u1"], d.item_index["i1"]
    row = np.flatnonzero((d.user == u1) & (d.item == i1))
    assert d.quantity[row].tolist() == [4]


def test_arrays_are_read_only():
    d = parse_transactions(CSV)
    with pytest.raises(ValueError):
        d.user[0] = 1


def test_basket_spanning_users_is_rejected_with_line_number():
    bad = CSV + b"u3,i2,b1,100,1\n"
    with pytest.raises(DataError, match=r"line 7: basket 'b1' spans two users"):
        parse_transactions(bad)


def test_basket_spanning_users_is_repaired():
    bad = CSV + b"u3,i2,b1,100,1\n"
    d = parse_transactions(bad, SchemaConfig(**{**CANONICAL_SCHEMA.__dict__, "basket_policy": "repair"}))
    assert "b1#1" in d.basket_ids
    b = d.basket_index["b1#1"]
    assert set(d.user[d.basket == b].tolist()) == {d.user_index["u3"]}


def test_malformed_rows_report_line():
    with pytest.raises(DataError, match="line 3: unparseable timestamp"):
        parse_transactions(b"user,item,basket,timestamp,quantity\nu,i,b,1,1\nu,i,b,yesterday,1\n")
    with pytest.raises(DataError, match="line 2: expected at least 5 fields"):
        parse_transactions(b"user,item,basket,timestamp,quantity\nu,i\n")
    with pytest.raises(DataError, match="line 2: negative quantity"):
        parse_transactions(b"user,item,basket,timestamp,quantity\nu,i,b,1,-2\n")


def test_missing_mandatory_mapping():
    with pytest.raises(DataError, match="mandatory"):
        SchemaConfig(user="u", item=None, timestamp="t")
    with pytest.raises(DataError, match="not found in header"):
        parse_transactions(b"a,b,c\n1,2,3\n", SchemaConfig(user="user", item="b", timestamp="c"))


def test_zero_quantity_counts_as_one():
    d = parse_transactions(b"user,item,basket,timestamp,quantity\nu,i,b,1,0\n")
    assert d.quantity.tolist() == [1]


def test_without_basket_column_each_row_is_a_basket():
    d = parse_transactions(b"user,item,timestamp\nu,i,1\nu,j,1\n",
                           SchemaConfig(user="user", item="item", timestamp="timestamp"))
    assert d.n_baskets == 2


def test_headerless_positions():
    d = parse_transactions(b"7;x;2020-01-02\n", SchemaConfig(user=0, item=1, timestamp=2,
                                                             delimiter=";", header=False))
    assert d.user_ids == ("7",)
    assert d.timestamp.tolist() == [1577923200]
    assert d.time_granularity == "day"


def test_tafeng_preset_builds_customer_day_baskets():
    raw = (b"TRANSACTION_DT,CUSTOMER_ID,AGE_GROUP,PIN_CODE,PRODUCT_SUBCLASS,PRODUCT_ID,AMOUNT,ASSET,SALES_PRICE\n"
           b"11/1/2000,1104905,45-49,115,110411,4710199010372,2,24,30\n"
           b"11/1/2000,1104905,45-49,115,110507,4710857472535,1,48,46\n"
           b"11/2/2000,1104905,45-49,115,110411,4710199010372,1,24,15\n"
           b"11/1/2000,418683,45-49,115,120103,4710001351346,1,45,39\n")
    d = parse_transactions(raw, TAFENG_SCHEMA)
    assert d.n_users == 2
    assert d.n_baskets == 3
    assert d.time_granularity == "day"
    assert "1104905|11/1/2000" in d.basket_ids


def test_chronology_is_ordered_and_stable():
    d = build_dataset(["u", "u", "u"], ["c", "a", "b"], [5, 1, 1], baskets=["x", "y", "y"])
    c = d.chronology(0)
    assert [d.item_ids[i] for i in d.item[c]] == ["a", "b", "c"]
    with pytest.raises(DataError):
        d.chronology(3)


def test_round_trip(tmp_path):
    d = random_log(3)
    export_dataset(d, tmp_path / "plain")
    export_dataset(d, tmp_path / "gz", compress=True)
    assert read_dataset(tmp_path / "plain") == d
    assert read_dataset(tmp_path / "gz") == d
    again = parse_transactions(tmp_path / "gz" / "interactions.csv.gz")
    assert len(again) == len(d)


def test_export_is_byte_deterministic(tmp_path):
    d = random_log(4)
    export_dataset(d, tmp_path / "a", compress=True)
    export_dataset(d, tmp_path / "b", compress=True)
    for name in ("interactions.csv.gz", "users.csv", "items.csv", "baskets.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = gzip.decompress((tmp_path / "a" / "interactions.csv.gz").read_bytes()).decode()
    assert text.startswith("#splitkit-format-version: 1\n")


def test_unsupported_format_version(tmp_path):
    export_dataset(random_log(1), tmp_path)
    p = tmp_path / "interactions.csv"
    p.write_text(p.read_text().replace("version: 1", "version: 9", 1))
    with pytest.raises(DataError, match="format version 9"):
        read_dataset(tmp_path)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_ingest_is_deterministic_and_digest_stable(seed):
    a, b = random_log(seed), random_log(seed)
    assert a == b
    assert a.digest == b.digest
    ts = a.timestamp
    assert np.all(np.diff(ts) >= 0)
