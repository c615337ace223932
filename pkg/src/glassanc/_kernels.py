"""Compiled per-sample inner loops for the real-time engine."""

import numpy as np
from numba import njit


@njit(cache=True)
def run_segment(
    raw, playback, start, count, pos, block,
    xbuf, head_a, tail_a, head_b, tail_b, has_b, cf_done, cf_len,
    ghat, yhist, ypos, plant, ohist, opos, limit,
    out, clean,
):
    """Process ``count`` samples starting at column ``start`` of ``raw``.

    ``pos`` is the offset of the first sample inside the current block. The
    drive history ``yhist`` and output history ``ohist`` are doubled circular
    buffers so the most recent ``n`` values form a contiguous slice.
    Returns the updated ``(cf_done, ypos, opos)``.
    """
    M = raw.shape[0]
    H = head_a.shape[1]
    Lg = ghat.shape[1]
    Lp = plant.shape[1]
    for i in range(count):
        n = start + i
        p = 2 * block + pos + i
        ya = 0.0
        yb = 0.0
        for m in range(M):
            xv = raw[m, n]
            acc = 0.0
            for k in range(Lp):
                acc += plant[m, k] * ohist[opos + Lp - 1 - k]
            xv += acc
            acc = 0.0
            for k in range(Lg):
                acc += ghat[m, k] * yhist[ypos + Lg - 1 - k]
            xv -= acc
            xbuf[m, p] = xv
            clean[m, n] = xv
            acc = 0.0
            for k in range(H):
                acc += head_a[m, k] * xbuf[m, p - k]
            ya += acc
            if has_b:
                acc = 0.0
                for k in range(H):
                    acc += head_b[m, k] * xbuf[m, p - k]
                yb += acc
        ya += tail_a[pos + i]
        if has_b:
            yb += tail_b[pos + i]
            cf_done += 1
            y = ya + (cf_done / cf_len) * (yb - ya)
        else:
            y = ya
        o = y + playback[n]
        if limit > 0.0:
            if o > limit:
                o = limit
            elif o < -limit:
                o = -limit
        out[n] = o
        if Lg > 0:
            yhist[ypos] = y
            yhist[ypos + Lg] = y
            ypos = (ypos + 1) % Lg
        if Lp > 0:
            ohist[opos] = o
            ohist[opos + Lp] = o
            opos = (opos + 1) % Lp
    return cf_done, ypos, opos


@njit(cache=True)
def direct_fir_multichannel(x, h, out):
    """Reference per-sample direct-form FIR summed over channels."""
    M, N = x.shape
    L = h.shape[1]
    for n in range(N):
        acc = 0.0
        for m in range(M):
            kmax = min(L, n + 1)
            for k in range(kmax):
                acc += h[m, k] * x[m, n - k]
        out[n] = acc
    return out


def warmup():
    """Trigger compilation with tiny inputs."""
    M, B = 1, 2
    raw = np.zeros((M, 2))
    run_segment(
        raw, np.zeros(2), 0, 2, 0, B, np.zeros((M, 3 * B)), np.zeros((M, 2 * B)), np.zeros(B),
        np.zeros((M, 2 * B)), np.zeros(B), False, 0, 1, np.zeros((M, 1)), np.zeros(2), 0,
        np.zeros((M, 1)), np.zeros(2), 0, 0.0, np.zeros(2), np.zeros((M, 2)),
    )
    direct_fir_multichannel(raw, np.zeros((M, 2)), np.zeros(2))
