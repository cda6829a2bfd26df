"""Graph traversal kernels over CSR adjacency arrays.

Every kernel has a numba implementation and a pure-numpy one with the same
signature.  The numba path is used when numba imports and the environment
variable ``GITWATCH_DISABLE_NUMBA`` is unset or false; set it to ``1`` to
force the numpy path (useful for debugging and for the benchmark).
"""

from __future__ import annotations

import os

import numpy as np

NO_WITNESS = np.iinfo(np.int64).max

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("GITWATCH_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# -- numpy ------------------------------------------------------------------

def reach_np(indptr, indices, sources, n):
    seen = np.zeros(n, dtype=np.bool_)
    frontier = np.unique(np.asarray(sources, dtype=np.int64))
    seen[frontier] = True
    while frontier.size:
        starts = indptr[frontier]
        lens = indptr[frontier + 1] - starts
        total = int(lens.sum())
        if total == 0:
            break
        offsets = np.repeat(starts - (np.cumsum(lens) - lens), lens) + np.arange(total)
        nxt = indices[offsets]
        nxt = np.unique(nxt[~seen[nxt]])
        seen[nxt] = True
        frontier = nxt
    return seen


def masked_argmin_np(primary, mask):
    """Index of the smallest ``primary`` under ``mask``; ties go to the lowest index."""
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return -1
    return int(cand[np.argmin(primary[cand])])


def witnesses_np(indptr, indices, start, eligible, tc, ev_rank, tag_rank):
    reached = reach_np(indptr, indices, np.array([start]), eligible.shape[0])
    hit = reached & eligible
    count = int(hit.sum())
    if count == 0:
        return 0, -1, NO_WITNESS, NO_WITNESS
    pcf = masked_argmin_np(tc, hit)
    pef = int(ev_rank[hit].min())
    ptf = int(tag_rank[hit].min())
    return count, pcf, pef, ptf


# -- numba ------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def reach_nb(indptr, indices, sources, n):
        seen = np.zeros(n, dtype=np.bool_)
        stack = np.empty(n, dtype=np.int64)
        top = 0
        for s in sources:
            if not seen[s]:
                seen[s] = True
                stack[top] = s
                top += 1
        while top > 0:
            top -= 1
            v = stack[top]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if not seen[w]:
                    seen[w] = True
                    stack[top] = w
                    top += 1
        return seen

    @numba.njit(cache=True, nogil=True)
    def masked_argmin_nb(primary, mask):
        best = -1
        for i in range(mask.shape[0]):
            if mask[i] and (best < 0 or primary[i] < primary[best]):
                best = i
        return best

    @numba.njit(cache=True, nogil=True)
    def witnesses_nb(indptr, indices, start, eligible, tc, ev_rank, tag_rank):
        n = eligible.shape[0]
        seen = np.zeros(n, dtype=np.bool_)
        stack = np.empty(n, dtype=np.int64)
        seen[start] = True
        stack[0] = start
        top = 1
        count = 0
        pcf = -1
        pef = NO_WITNESS
        ptf = NO_WITNESS
        while top > 0:
            top -= 1
            v = stack[top]
            if eligible[v]:
                count += 1
                if pcf < 0 or tc[v] < tc[pcf] or (tc[v] == tc[pcf] and v < pcf):
                    pcf = v
                if ev_rank[v] < pef:
                    pef = ev_rank[v]
                if tag_rank[v] < ptf:
                    ptf = tag_rank[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if not seen[w]:
                    seen[w] = True
                    stack[top] = w
                    top += 1
        return count, pcf, pef, ptf

    reach = reach_nb if USE_NUMBA else reach_np
    masked_argmin = masked_argmin_nb if USE_NUMBA else masked_argmin_np
    witnesses = witnesses_nb if USE_NUMBA else witnesses_np
else:  # pragma: no cover
    reach = reach_np
    masked_argmin = masked_argmin_np
    witnesses = witnesses_np


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def csr_from_edges(src, dst, n):
    """CSR rows for edges ``src -> dst``; neighbours sorted within each row."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((dst, src))
    indices = dst[order]
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, indices
