"""Pure numpy implementation of the semi-Lagrangian backward sweep.

Same contract as the compiled ``_sweep`` extension; selected when the
extension is missing or when ``MAYER_SENS_BACKEND=python``.
"""

import numpy as np


def sweep(values, taint, base, frac, outside, strides):
    """Fill ``values[k]`` and ``taint[k]`` for k = S-1, ..., 0 from slice S.

    values  : (S+1, N) float64, slice S holds the terminal cost.
    taint   : (S+1, N) float64, slice S all zero on entry.
    base    : (N, J) int64, flat index of the lower corner of each foot's cell.
    frac    : (N, J, d) float64, cell-local coordinates of each foot in [0, 1].
    outside : (N, J) uint8, 1 where the foot was clamped into the domain.
    strides : (d,) int64, flat-index stride of each axis.

    ``taint`` is the interpolation weight a node's value puts on clamped data:
    1 when any of its candidate feet was clamped (a clamped candidate may hide
    the true minimiser), otherwise the weighted taint of the minimising
    candidate's stencil. Ties go to the first direction.
    """
    d = frac.shape[2]
    n_slices = values.shape[0]
    n_nodes = base.shape[0]
    clamped = outside.astype(bool).any(axis=1)
    if d == 1:
        a = frac[:, :, 0]
        corners = [(base, 1.0 - a), (base + strides[0], a)]
    else:
        a = frac[:, :, 0]
        b = frac[:, :, 1]
        s0, s1 = strides[0], strides[1]
        corners = [
            (base, (1.0 - a) * (1.0 - b)),
            (base + s0, a * (1.0 - b)),
            (base + s1, (1.0 - a) * b),
            (base + s0 + s1, a * b),
        ]
    rows = np.arange(n_nodes)
    for k in range(n_slices - 2, -1, -1):
        v_next = values[k + 1]
        c_next = taint[k + 1]
        val = np.zeros(base.shape)
        for idx, w in corners:
            val += w * v_next[idx]
        j = np.argmin(val, axis=1)
        values[k] = val[rows, j]
        c = np.zeros(n_nodes)
        for idx, w in corners:
            c += w[rows, j] * c_next[idx[rows, j]]
        taint[k] = np.where(clamped, 1.0, c)
