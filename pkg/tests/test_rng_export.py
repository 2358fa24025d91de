import json
import math

import numpy as np
import pytest

from virgin_island import rng
from virgin_island.export import atomic_write, csv_text, fmt, json_text, sha256


def test_streams_are_keyed():
    a = rng.stream(1, rng.PATHS, 0, 0).standard_normal(5)
    b = rng.stream(1, rng.PATHS, 0, 0).standard_normal(5)
    c = rng.stream(1, rng.PATHS, 0, 1).standard_normal(5)
    d = rng.stream(2, rng.PATHS, 0, 0).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(ValueError):
        rng.stream(None)


def test_blocks_cover_range():
    bl = rng.blocks(1100, 512)
    assert bl == [(0, 0, 512), (1, 512, 1024), (2, 1024, 1100)]
    assert rng.blocks(0) == []


def test_run_blocks_keeps_order():
    assert rng.run_blocks(lambda x: x * x, list(range(10)), workers=4) == [x * x for x in range(10)]


def test_fmt_and_csv():
    assert fmt(None) == "" and fmt(math.nan) == "" and fmt(3) == "3" and fmt(0.1) == "0.1"
    assert csv_text(["a", "b"], [(1, 2.5), ("x", None)]) == "a,b\n1,2.5\nx,\n"


def test_json_text_encodes_non_finite():
    text = json_text({"x": np.float64(np.inf), "y": [np.nan, -np.inf], "z": np.arange(2)})
    assert json.loads(text) == {"x": "inf", "y": ["nan", "-inf"], "z": [0, 1]}


def test_atomic_write_and_hash(tmp_path):
    p = atomic_write(tmp_path / "sub" / "f.txt", "hello")
    assert p.read_text() == "hello"
    assert sha256(p) == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
