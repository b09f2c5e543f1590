"""Hot-loop kernels with a compiled core and a pure-Python fallback.

The Cython module is built at install time; if it is missing (no compiler,
source checkout without build) or ``FEDLEAK_PURE_PYTHON=1`` is set, the
pure implementations take over. ``BACKEND`` records which one is active.
All kernels operate on integer-encoded token sequences; the wrappers here
normalize inputs to ``array.array('q')`` buffers for the compiled path.
"""

from __future__ import annotations

import os
from array import array
from typing import Sequence

from . import pure

if os.environ.get("FEDLEAK_PURE_PYTHON") == "1":
    _impl = pure
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "python"

_COMPILED = BACKEND == "compiled"


def _as_ids(seq: Sequence[int]) -> array:
    if isinstance(seq, array) and seq.typecode == "q":
        return seq
    return array("q", seq)


def count_ngrams(
    ids: Sequence[int], max_len: int, boundary_id: int
) -> list[dict[tuple[int, ...], dict[int, int]]]:
    if _COMPILED:
        return _impl.count_ngrams(_as_ids(ids), max_len, boundary_id)
    return _impl.count_ngrams(ids, max_len, boundary_id)


def find_subsequence(haystack: Sequence[int], needle: Sequence[int]) -> int:
    if _COMPILED:
        return _impl.find_subsequence(_as_ids(haystack), _as_ids(needle))
    return _impl.find_subsequence(haystack, needle)


def contains_flags(
    haystack: Sequence[int], needles: Sequence[Sequence[int]]
) -> list[bool]:
    if _COMPILED:
        return _impl.contains_flags(
            _as_ids(haystack), [_as_ids(n) for n in needles]
        )
    return _impl.contains_flags(haystack, needles)


def doc_frequencies(
    docs: Sequence[Sequence[int]], needles: Sequence[Sequence[int]]
) -> list[int]:
    if _COMPILED:
        return _impl.doc_frequencies(
            [_as_ids(d) for d in docs], [_as_ids(n) for n in needles]
        )
    return _impl.doc_frequencies(docs, needles)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    if _COMPILED:
        return _impl.edit_distance(_as_ids(a), _as_ids(b))
    return _impl.edit_distance(a, b)
