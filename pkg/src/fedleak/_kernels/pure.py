"""Pure-Python kernel implementations.

Reference versions of the hot loops; `fedleak._kernels` swaps in the
compiled Cython equivalents when they are available. Both operate on
integer-encoded token sequences and must stay behaviourally identical.
"""

from __future__ import annotations

from typing import Sequence


def count_ngrams(
    ids: Sequence[int], max_len: int, boundary_id: int
) -> list[dict[tuple[int, ...], dict[int, int]]]:
    """Count n-grams of every context length 0..max_len-1.

    A context window never contains the boundary id (n-grams do not cross
    documents), but the boundary may appear as a next token, which is how
    the model learns where documents end.
    """
    tables: list[dict[tuple[int, ...], dict[int, int]]] = [
        {} for _ in range(max_len)
    ]
    n = len(ids)
    # run[p] = number of consecutive non-boundary tokens ending just before p
    run = 0
    runs = [0] * n
    for p in range(n):
        runs[p] = run
        run = 0 if ids[p] == boundary_id else run + 1
    for ctx_len in range(max_len):
        table = tables[ctx_len]
        for p in range(ctx_len, n):
            if runs[p] < ctx_len:
                continue
            ctx = tuple(ids[p - ctx_len : p])
            nxt = ids[p]
            bucket = table.get(ctx)
            if bucket is None:
                table[ctx] = {nxt: 1}
            else:
                bucket[nxt] = bucket.get(nxt, 0) + 1
    return tables


def find_subsequence(haystack: Sequence[int], needle: Sequence[int]) -> int:
    """Index of the first occurrence of needle in haystack, or -1."""
    m = len(needle)
    if m == 0:
        return 0
    n = len(haystack)
    first = needle[0]
    for i in range(n - m + 1):
        if haystack[i] != first:
            continue
        if all(haystack[i + j] == needle[j] for j in range(1, m)):
            return i
    return -1


def contains_flags(
    haystack: Sequence[int], needles: Sequence[Sequence[int]]
) -> list[bool]:
    return [find_subsequence(haystack, nd) >= 0 for nd in needles]


def doc_frequencies(
    docs: Sequence[Sequence[int]], needles: Sequence[Sequence[int]]
) -> list[int]:
    """For each needle, the number of docs containing it contiguously."""
    out = []
    for nd in needles:
        count = 0
        for doc in docs:
            if find_subsequence(doc, nd) >= 0:
                count += 1
        out.append(count)
    return out


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Levenshtein distance between two id sequences."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            best = sub if sub < ins else ins
            cur[j] = best if best < dele else dele
        prev, cur = cur, prev
    return prev[len(b)]
