"""Pure numpy implementation of the jet convolution kernels.

Same signatures and semantics as the compiled ``_kernels`` module.  The
recurrences for ``div`` and ``sqrt`` are vectorized one total degree at a
time: every coefficient of degree ``d`` only depends on coefficients of
strictly lower degree.
"""
import numpy as np

# Per-degree slices of the triple table, keyed by id of the ti array.
_degree_cache = {}


def mul(a, b, out, ti, tj, tk, ntri):
    if ntri == 0:
        out[...] = 0.0
        return
    prod = a[ti[:ntri]] * b[tj[:ntri]]
    starts = np.flatnonzero(np.r_[True, tk[1:ntri] != tk[: ntri - 1]])
    out[...] = 0.0
    out[tk[starts]] = np.add.reduceat(prod, starts, axis=0)


def _degree_groups(ti, tj, offsets, nout, skip_both):
    key = (id(ti), nout, skip_both)
    hit = _degree_cache.get(key)
    if hit is not None and hit[0] is ti:
        return hit[1]
    from .jets import degree_offsets

    bounds = [b for b in degree_offsets() if b <= nout]
    groups = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = slice(offsets[lo], offsets[hi])
        i, j = ti[sl], tj[sl]
        k = np.repeat(np.arange(lo, hi), np.diff(offsets[lo : hi + 1]))
        keep = (i != 0) & (j != 0) if skip_both else (i != 0)
        i, j, k = i[keep], j[keep], k[keep]
        if len(k):
            starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
            groups.append((lo, hi, i, j, k[starts], starts))
        else:
            groups.append((lo, hi, i, j, k, None))
    _degree_cache[key] = (ti, groups)
    return groups


def div(a, b, out, ti, tj, offsets, nout):
    out[:nout] = a[:nout]
    out[0] = a[0] / b[0]
    for lo, hi, i, j, kk, starts in _degree_groups(ti, tj, offsets, nout, False)[1:]:
        if starts is not None:
            out[kk] -= np.add.reduceat(b[i] * out[j], starts, axis=0)
        out[lo:hi] /= b[0]


def sqrt(a, out, ti, tj, offsets, nout):
    out[:nout] = a[:nout]
    out[0] = np.sqrt(a[0])
    for lo, hi, i, j, kk, starts in _degree_groups(ti, tj, offsets, nout, True)[1:]:
        if starts is not None:
            out[kk] -= np.add.reduceat(out[i] * out[j], starts, axis=0)
        out[lo:hi] /= 2.0 * out[0]
