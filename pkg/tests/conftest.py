from pathlib import Path

import pytest

from lrt import stdlib

ROOT = Path(__file__).resolve().parent
PROGRAMS = ROOT / "programs"

INSERT_SORT = """
insert :: x:a -> xs:List a^1 -> List a
insert = \\x. \\xs.
  match xs with
    Nil -> Cons x xs
    Cons hd tl -> if hd < x
      then Cons hd (tick 1 (insert x tl))
      else Cons x (Cons hd tl)

sort :: xs:List a^1 <\\x1 x2. 1> -> List a
sort = \\xs.
  match xs with
    Nil -> Nil
    Cons hd tl ->
      insert hd (tick 1 (sort tl))
"""


@pytest.fixture(scope="session")
def insert_sort():
    return stdlib.load(INSERT_SORT, "insert_sort.lrt")


@pytest.fixture(scope="session")
def fine_sort():
    return stdlib.load(stdlib.CASES[9].source, "benchmark10.lrt")


@pytest.fixture(scope="session")
def prelude_only():
    return stdlib.load("")
