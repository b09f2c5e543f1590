# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations (see pure.py for the reference)."""

from cpython.tuple cimport PyTuple_New, PyTuple_SET_ITEM
from cpython.ref cimport Py_INCREF

from libc.stdlib cimport malloc, free


cdef inline object _id_tuple(long long[:] ids, Py_ssize_t start, Py_ssize_t n):
    cdef object tup = PyTuple_New(n)
    cdef Py_ssize_t i
    cdef object item
    for i in range(n):
        item = ids[start + i]
        Py_INCREF(item)
        PyTuple_SET_ITEM(tup, i, item)
    return tup


def count_ngrams(long long[:] ids, int max_len, long long boundary_id):
    # The output is a Python dict-of-dicts, so construction cost bounds the
    # possible gain here; the win over pure Python is the loop mechanics.
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t p
    cdef int ctx_len
    cdef long long run = 0
    cdef long long* runs = <long long*> malloc(n * sizeof(long long))
    if runs == NULL and n > 0:
        raise MemoryError()
    cdef list tables = []
    cdef dict table, bucket
    cdef object ctx, nxt
    try:
        for p in range(n):
            runs[p] = run
            run = 0 if ids[p] == boundary_id else run + 1
        for ctx_len in range(max_len):
            table = {}
            tables.append(table)
            for p in range(ctx_len, n):
                if runs[p] < ctx_len:
                    continue
                ctx = _id_tuple(ids, p - ctx_len, ctx_len)
                nxt = ids[p]
                bucket = <dict> table.get(ctx)
                if bucket is None:
                    table[ctx] = {nxt: 1}
                else:
                    bucket[nxt] = bucket.get(nxt, 0) + 1
    finally:
        free(runs)
    return tables


cdef Py_ssize_t _find(long long[:] haystack, long long[:] needle) noexcept:
    cdef Py_ssize_t n = haystack.shape[0]
    cdef Py_ssize_t m = needle.shape[0]
    cdef Py_ssize_t i, j
    cdef long long first
    if m == 0:
        return 0
    if m > n:
        return -1
    first = needle[0]
    for i in range(n - m + 1):
        if haystack[i] != first:
            continue
        j = 1
        while j < m and haystack[i + j] == needle[j]:
            j += 1
        if j == m:
            return i
    return -1


def find_subsequence(long long[:] haystack, long long[:] needle):
    return _find(haystack, needle)


def contains_flags(long long[:] haystack, list needles):
    cdef list out = []
    cdef long long[:] nd
    for obj in needles:
        nd = obj
        out.append(_find(haystack, nd) >= 0)
    return out


def doc_frequencies(list docs, list needles):
    cdef list out = []
    cdef long long[:] nd, doc
    cdef Py_ssize_t count
    for nobj in needles:
        nd = nobj
        count = 0
        for dobj in docs:
            doc = dobj
            if _find(doc, nd) >= 0:
                count += 1
        out.append(count)
    return out


def edit_distance(long long[:] a, long long[:] b):
    cdef long long[:] tmp
    if a.shape[0] < b.shape[0]:
        tmp = a
        a = b
        b = tmp
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if lb == 0:
        return la
    cdef Py_ssize_t* prev = <Py_ssize_t*> malloc((lb + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* cur = <Py_ssize_t*> malloc((lb + 1) * sizeof(Py_ssize_t))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    cdef Py_ssize_t i, j, sub, ins, dele, best, result
    cdef Py_ssize_t* swap
    cdef long long ai
    try:
        for j in range(lb + 1):
            prev[j] = j
        for i in range(1, la + 1):
            cur[0] = i
            ai = a[i - 1]
            for j in range(1, lb + 1):
                sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
                ins = cur[j - 1] + 1
                dele = prev[j] + 1
                best = sub if sub < ins else ins
                cur[j] = best if best < dele else dele
            swap = prev
            prev = cur
            cur = swap
        result = prev[lb]
    finally:
        free(prev)
        free(cur)
    return result
