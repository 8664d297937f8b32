"""Smooth scalar profiles used throughout the map constructions.

Everything here is a C^2 spline assembled from the quintic smoothstep.
Profiles are exactly constant (or exactly linear) outside their transition
windows, so maps built from them are bit-exact identities away from their
supports.
"""

import numpy as np


def smoothstep(u):
    """Quintic smoothstep: 0 for u <= 0, 1 for u >= 1, C^2-flat at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def smoothstep_d(u):
    """Derivative of :func:`smoothstep` (max value 15/8 at u = 1/2)."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    uc = np.clip(u, 0.0, 1.0)
    d = 30.0 * uc * uc * (1.0 - uc) * (1.0 - uc)
    return np.where(inside, d, 0.0)


def smoothstep_i(u):
    """Integral of :func:`smoothstep` from 0; equals u - 1/2 for u >= 1."""
    u = np.asarray(u, dtype=float)
    uc = np.clip(u, 0.0, 1.0)
    val = uc ** 4 * (2.5 + uc * (-3.0 + uc))
    return np.where(u > 1.0, u - 0.5, np.where(u > 0.0, val, 0.0))


class SmoothPiecewiseLinear:
    """A piecewise-linear function with C^2 rounded corners.

    The function has slope ``slopes[i]`` on the interval between knot i-1 and
    knot i, is anchored by ``f(anchor_t) = anchor_v``, and each corner at
    ``knots[j]`` is replaced by a quintic blend on ``[t_j - delta_j, t_j + delta_j]``.
    Outside every blend window the function agrees exactly with the
    underlying piecewise-linear one.  Monotone whenever all slopes are > 0.
    """

    def __init__(self, knots, slopes, anchor_t, anchor_v, deltas=None):
        knots = np.asarray(knots, dtype=float)
        slopes = np.asarray(slopes, dtype=float)
        if len(slopes) != len(knots) + 1:
            raise ValueError("need one more slope than knots")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if deltas is None:
            gaps = np.diff(knots)
            deltas = np.empty(len(knots))
            for j in range(len(knots)):
                left = gaps[j - 1] if j > 0 else np.inf
                right = gaps[j] if j < len(gaps) else np.inf
                deltas[j] = min(left, right) / 8.0
            deltas = np.where(np.isfinite(deltas), deltas, 1.0 / 8.0)
        else:
            deltas = np.asarray(deltas, dtype=float)
        self.knots = knots
        self.slopes = slopes
        self.deltas = deltas
        # values of the un-rounded PL function at the knots
        vals = np.empty(len(knots))
        # anchor sits in interval index ia
        ia = int(np.searchsorted(knots, anchor_t))
        # walk right from the anchor
        v = anchor_v
        t = anchor_t
        for j in range(ia, len(knots)):
            v = v + slopes[j] * (knots[j] - t)
            t = knots[j]
            vals[j] = v
        v = anchor_v
        t = anchor_t
        for j in range(ia - 1, -1, -1):
            v = v - slopes[j + 1] * (t - knots[j])
            t = knots[j]
            vals[j] = v
        self.knot_vals = vals
        # blend windows must not overlap the anchor or each other
        if np.any(np.abs(anchor_t - knots) < deltas):
            raise ValueError("anchor inside a corner blend window")

    def _pl(self, t):
        idx = np.searchsorted(self.knots, t)
        ref_t = np.where(idx > 0, self.knots[np.maximum(idx - 1, 0)], self.knots[0])
        ref_v = np.where(idx > 0, self.knot_vals[np.maximum(idx - 1, 0)], self.knot_vals[0])
        return ref_v + self.slopes[idx] * (t - ref_t)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = self._pl(t)
        for j in range(len(self.knots)):
            dj = self.deltas[j]
            ds = self.slopes[j + 1] - self.slopes[j]
            if ds == 0.0:
                continue
            u = (t - self.knots[j]) / dj
            corr = ds * dj * (2.0 * smoothstep_i((u + 1.0) / 2.0) - np.maximum(u, 0.0))
            out = out + np.where(np.abs(u) < 1.0, corr, 0.0)
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t)
        out = self.slopes[idx].astype(float).copy()
        for j in range(len(self.knots)):
            dj = self.deltas[j]
            ds = self.slopes[j + 1] - self.slopes[j]
            if ds == 0.0:
                continue
            u = (t - self.knots[j]) / dj
            inside = np.abs(u) < 1.0
            corr = ds * (smoothstep((u + 1.0) / 2.0) - np.where(u > 0.0, 1.0, 0.0))
            out = out + np.where(inside, corr, 0.0)
        return out


def plateau_step(a, b, max_slope=None):
    """Smooth step from 0 at ``a`` to 1 at ``b`` with a capped derivative.

    Returns a pair of vectorized callables (value, derivative).  The
    derivative ramps up over a window of width w, holds a plateau, and ramps
    down; it never exceeds ``max_slope`` (default: gentle, w = (b-a)/4).
    """
    width = b - a
    if width <= 0:
        raise ValueError("need a < b")
    if max_slope is not None and max_slope * width <= 1.0:
        raise ValueError("cap too small for a unit rise over the window")
    if max_slope is None:
        w = width / 4.0
    else:
        # plateau height c = 1 / (width - w) must stay <= max_slope
        w = max(width - 1.0 / max_slope, 0.0) * 1.02
        w = min(max(w, width / 16.0), width * 0.49)
    c = 1.0 / (width - w)

    def value(t):
        t = np.asarray(t, dtype=float)
        u = t - a
        ramp_in = c * w * smoothstep_i(u / w)
        mid = c * w / 2.0 + c * (u - w)
        # assemble: [0,w] ramp, [w, width-w] linear, [width-w, width] mirrored ramp
        out = np.where(u <= 0.0, 0.0, np.where(u >= width, 1.0, 0.0))
        seg1 = (u > 0.0) & (u < w)
        seg2 = (u >= w) & (u <= width - w)
        seg3 = (u > width - w) & (u < width)
        out = np.where(seg1, ramp_in, out)
        out = np.where(seg2, mid, out)
        out = np.where(seg3, 1.0 - c * w * smoothstep_i((width - u) / w), out)
        return out

    def deriv(t):
        t = np.asarray(t, dtype=float)
        u = t - a
        out = np.zeros_like(u)
        seg1 = (u > 0.0) & (u < w)
        seg2 = (u >= w) & (u <= width - w)
        seg3 = (u > width - w) & (u < width)
        out = np.where(seg1, c * smoothstep(u / w), out)
        out = np.where(seg2, c, out)
        out = np.where(seg3, c * smoothstep((width - u) / w), out)
        return out

    return value, deriv


def retraction_profile(eps):
    """The coordinatewise profile of the smooth cube retraction.

    Monotone C^2 map s with s(t) = t at t in {-2,-1,0,1,2}, flat first and
    second derivatives at -1 and 1, and 0 <= s' <= 1 + eps.  Returns
    (value, derivative).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    delta = min(2.0 * eps / (1.0 + eps), 0.5)
    c = 1.0 / (1.0 - delta / 2.0)

    def w_int(t):
        # integral from 0 of the plateau weight (transitions of width delta at +-1)
        t = np.asarray(t, dtype=float)
        at = np.abs(t)
        # integral over [0, u] for u >= 0; weight = 1 except sigma((1-|x|)/delta+...) near 1
        lo = 1.0 - delta
        base = np.minimum(at, lo)
        # contribution of the transition band [1-delta, 1]: integral of sigma((1-x)/delta)
        upper = np.clip((1.0 - np.minimum(at, 1.0)) / delta, 0.0, 1.0)
        band = delta * (0.5 - smoothstep_i(upper))
        # band beyond 1: rising transition sigma((x-1)/delta) on [1, 1+delta] then 1
        beyond = np.where(
            at > 1.0,
            delta * smoothstep_i(np.minimum((at - 1.0) / delta, 1.0))
            + np.maximum(at - 1.0 - delta, 0.0),
            0.0,
        )
        return np.sign(t) * (base + band + beyond)

    def value(t):
        return c * w_int(t)

    def deriv(t):
        t = np.asarray(t, dtype=float)
        at = np.abs(t)
        w = np.where(
            at <= 1.0,
            smoothstep((1.0 - at) / delta),
            smoothstep((at - 1.0) / delta),
        )
        return c * w

    return value, deriv
