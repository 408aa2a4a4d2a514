"""Parsing and fixed-width formatting helpers."""
import math

from utils import float_list, fmt17, fmt_row, name_list, safe_float


def test_safe_float():
    assert safe_float(None) == 0.0
    assert safe_float(" 2.5 ") == 2.5
    assert safe_float("abc", default=-1.0) == -1.0
    assert safe_float(3) == 3.0
    assert safe_float(object(), default=7.0) == 7.0


def test_float_list():
    assert float_list("0.5, 0.2,0.1") == [0.5, 0.2, 0.1]
    assert float_list("", default=(1.0,)) == [1.0]
    assert float_list(0.25) == [0.25]


def test_name_list():
    assert name_list(" F_eps, ,F1 ") == ["F_eps", "F1"]
    assert name_list(None, default=("ift",)) == ["ift"]


def test_fmt17():
    assert fmt17(0.1) == "0.10000000000000001"
    assert fmt17(True) == "1"
    assert fmt17(False) == "0"
    assert fmt17(None) == ""
    assert fmt17(12) == "12"
    assert fmt17(math.nan) == "nan"
    assert fmt17("first_exit[-1,1]") == "first_exit[-1,1]"
    assert fmt_row([1, 0.5, None]) == ["1", "0.5", ""]
