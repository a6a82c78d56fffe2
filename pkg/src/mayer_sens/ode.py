"""Fixed-step classical Runge-Kutta 4 on a uniform grid of nodes."""

from __future__ import annotations

import numpy as np


def rk4_step(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(f, y0, times, callback=None):
    """Integrate y' = f(t, y) forward through increasing ``times``.

    ``callback(i, y)`` runs on every new node before it is stored; it may
    modify ``y`` in place and may return True to stop, in which case the
    returned array ends at that node.
    """
    times = np.asarray(times, dtype=float)
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    y = np.array(y0, dtype=float)
    out = np.empty((times.size,) + y.shape)
    out[0] = y
    if callback is not None and callback(0, y):
        return out[:1]
    for i in range(times.size - 1):
        y = rk4_step(f, times[i], y, times[i + 1] - times[i])
        stop = callback is not None and callback(i + 1, y)
        out[i + 1] = y
        if stop:
            return out[: i + 2]
    return out


def rk4_backward(f, y_end, times, callback=None):
    """Integrate y' = f(t, y) from y(times[-1]) = y_end down to times[0].

    Runs the forward integrator in tau = T + t0 - t, where the system reads
    dy/dtau = -f(T + t0 - tau, y). Returns values in forward time order; on
    early stop the leading (unreached) nodes are dropped. ``callback`` receives
    the forward-order node index.
    """
    times = np.asarray(times, dtype=float)
    t0, T = times[0], times[-1]
    taus = (T + t0) - times[::-1]
    n = times.size

    def g(tau, y):
        return -f(T + t0 - tau, y)

    cb = None
    if callback is not None:
        def cb(i, y):
            return callback(n - 1 - i, y)

    out = rk4(g, y_end, taus, cb)
    return out[::-1]
