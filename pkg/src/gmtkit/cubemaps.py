"""Explicit smooth maps around the cube Q = [-1,1]^n.

Contents: face combinatorics of Q, the nearest-point projection, a smooth
almost-retraction of R^n onto Q, an identity-outside collared retraction,
central projections onto smooth convex boundaries, the smooth
punctured-cube projection that maps Q minus an interior point onto the
boundary of Q, and the local-rotation diffeomorphism that shrinks the image
measure of sampled unrectifiable sets under rank-deficient maps.

All maps evaluate in batch: ``value`` accepts (N, n) arrays and ``jacobian``
returns (N, n_out, n_in).  Displacements are assembled so that maps are
bit-exact identities outside their supports.
"""

from __future__ import annotations

import math

import numpy as np

from ._profiles import (
    SmoothPiecewiseLinear,
    plateau_step,
    retraction_profile,
    smoothstep,
    smoothstep_d,
)
from .grassmann import Plane, build_rotation, projector_distance

__all__ = [
    "FaceIndex",
    "SmoothMap",
    "Region",
    "Ball",
    "Box",
    "WholeSpace",
    "UnionRegion",
    "ConvexBody",
    "BallBody",
    "EllipsoidBody",
    "SuperellipsoidBody",
    "cube_enclosure",
    "nearest_point_cube",
    "smooth_retraction",
    "retraction_with_collar",
    "central_projection",
    "collared_projection",
    "recentering_map",
    "punctured_cube_projection",
    "unrect_perturbation",
]


# ---------------------------------------------------------------------------
# cube face combinatorics


class FaceIndex:
    """Index kappa in {-1,0,1}^n of a face of Q = [-1,1]^n.

    Encodes the face F_kappa, the region C_kappa of points projecting to it,
    the tangent space T_kappa = span{e_j : kappa_j = 0} and the face centre.
    """

    __slots__ = ("kappa",)

    def __init__(self, kappa):
        kappa = tuple(int(k) for k in kappa)
        if any(k not in (-1, 0, 1) for k in kappa):
            raise ValueError("face index entries must be in {-1, 0, 1}")
        self.kappa = kappa

    @property
    def ambient_dim(self):
        return len(self.kappa)

    @property
    def dim(self):
        return sum(1 for k in self.kappa if k == 0)

    def tangent_axes(self):
        return tuple(j for j, k in enumerate(self.kappa) if k == 0)

    def center(self):
        return np.array(self.kappa, dtype=float)

    def tangent_plane(self):
        return Plane.axis(self.ambient_dim, self.tangent_axes())

    def region_contains(self, x):
        """Whether points lie in C_kappa (strict inequality on free axes)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.ones(len(x), dtype=bool)
        for j, k in enumerate(self.kappa):
            if k == 0:
                ok &= np.abs(x[:, j]) < 1.0
            else:
                ok &= x[:, j] * k >= 1.0
        return ok

    def face_contains(self, x, tol=0.0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.ones(len(x), dtype=bool)
        for j, k in enumerate(self.kappa):
            if k == 0:
                ok &= np.abs(x[:, j]) <= 1.0 + tol
            else:
                ok &= np.abs(x[:, j] - k) <= tol
        return ok

    def __eq__(self, other):
        return isinstance(other, FaceIndex) and self.kappa == other.kappa

    def __hash__(self):
        return hash(self.kappa)

    def __repr__(self):
        return f"FaceIndex{self.kappa}"


def nearest_point_cube(x, n=None):
    """Nearest-point projection onto Q = [-1,1]^n and the region index.

    Returns (f(x), kappa) with f the coordinatewise clamp and kappa_j = 0
    iff |x_j| < 1 (strict), else the sign of x_j.
    """
    x = np.asarray(x, dtype=float)
    if n is None:
        n = x.shape[-1]
    clamped = np.clip(x, -1.0, 1.0)
    if x.ndim == 1:
        kappa = [0 if abs(v) < 1.0 else int(np.sign(v)) for v in x]
        return clamped, FaceIndex(kappa)
    indices = [FaceIndex([0 if abs(v) < 1.0 else int(np.sign(v)) for v in row]) for row in x]
    return clamped, indices


# ---------------------------------------------------------------------------
# regions and smooth maps


class Region:
    def contains(self, x):
        raise NotImplementedError

    def sample_outside(self, count, rng, margin=1.0):
        """Points outside the region, for identity checks."""
        raise NotImplementedError


class WholeSpace(Region):
    def __init__(self, n):
        self.n = n

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.ones(len(x), dtype=bool)


class Ball(Region):
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.center, axis=1) <= self.radius

    def contains_ball(self, center, r):
        return np.linalg.norm(np.asarray(center) - self.center) + r <= self.radius

    def sample_outside(self, count, rng, margin=1.0):
        d = rng.standard_normal((count, len(self.center)))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radii = self.radius + margin * (0.1 + rng.random(count))
        return self.center + d * radii[:, None]


class Box(Region):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def contains_ball(self, center, r):
        c = np.asarray(center, dtype=float)
        return bool(np.all(c - r >= self.lo) and np.all(c + r <= self.hi))

    def sample_outside(self, count, rng, margin=1.0):
        n = len(self.lo)
        span = self.hi - self.lo
        pts = self.lo - margin * span + rng.random((count, n)) * (1 + 2 * margin) * span
        bad = self.contains(pts)
        while np.any(bad):
            pts[bad] = self.lo - margin * span + rng.random((int(bad.sum()), n)) * (
                1 + 2 * margin
            ) * span
            bad = self.contains(pts)
        return pts


class UnionRegion(Region):
    def __init__(self, regions):
        self.regions = list(regions)

    def contains(self, x):
        x = np.atleast_2d(x)
        ok = np.zeros(len(x), dtype=bool)
        for r in self.regions:
            ok |= r.contains(x)
        return ok


class SmoothMap:
    """A map R^n -> R^k with exact value and Jacobian evaluation.

    ``support`` is a region outside which the map is the identity (None when
    the map moves points everywhere, e.g. a retraction onto the cube).
    """

    def __init__(self, n_in, n_out, value_fn, jac_fn, support=None, smoothness=2, name="", meta=None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self._value = value_fn
        self._jac = jac_fn
        self.support = support
        self.smoothness_class = smoothness
        self.name = name
        self.meta = dict(meta) if meta else {}

    def value(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.n_in:
            raise ValueError(f"expected points in R^{self.n_in}")
        out = self._value(pts)
        return out[0] if single else out

    __call__ = value

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        out = self._jac(pts)
        return out[0] if single else out

    def jacobian_fd(self, x, step=1e-6):
        """Central finite-difference Jacobian, the generic test oracle."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((len(x), self.n_out, self.n_in))
        for j in range(self.n_in):
            e = np.zeros(self.n_in)
            e[j] = step
            out[:, :, j] = (self._value(x + e) - self._value(x - e)) / (2 * step)
        return out

    @staticmethod
    def identity(n):
        return SmoothMap(
            n,
            n,
            lambda x: x.copy(),
            lambda x: np.broadcast_to(np.eye(n), (len(x), n, n)).copy(),
            support=None,
            smoothness=math.inf,
            name="id",
        )

    @staticmethod
    def affine(a, b=None):
        """x -> A x + b."""
        a = np.asarray(a, dtype=float)
        n_out, n_in = a.shape
        b = np.zeros(n_out) if b is None else np.asarray(b, dtype=float)
        return SmoothMap(
            n_in,
            n_out,
            lambda x: x @ a.T + b,
            lambda x: np.broadcast_to(a, (len(x), n_out, n_in)).copy(),
            smoothness=math.inf,
            name="affine",
        )

    @staticmethod
    def compose(*maps):
        """compose(f, g, h) evaluates f(g(h(x))); Jacobians chain accordingly."""
        maps = list(maps)
        if not maps:
            raise ValueError("need at least one map")
        for outer, inner in zip(maps[:-1], maps[1:]):
            if outer.n_in != inner.n_out:
                raise ValueError("dimension mismatch in composition")
        supports = [m.support for m in maps]
        support = None
        if all(s is not None for s in supports):
            support = UnionRegion(supports)

        def value(x):
            cur = x
            for m in reversed(maps):
                cur = m._value(cur)
            return cur

        def jac(x):
            cur = x
            jtotal = None
            for m in reversed(maps):
                jm = m._jac(cur)
                jtotal = jm if jtotal is None else np.einsum("nij,njk->nik", jm, jtotal)
                cur = m._value(cur)
            return jtotal

        return SmoothMap(
            maps[-1].n_in,
            maps[0].n_out,
            value,
            jac,
            support=support,
            smoothness=min(m.smoothness_class for m in maps),
            name="o".join(m.name or "?" for m in maps),
        )

    def then(self, other):
        """other after self."""
        return SmoothMap.compose(other, self)

    def __repr__(self):
        return f"SmoothMap({self.name or 'anon'}: R^{self.n_in} -> R^{self.n_out})"


# ---------------------------------------------------------------------------
# convex bodies with smooth boundary, given by a 1-homogeneous gauge


class ConvexBody:
    """Bounded open convex set containing 0, described by a smooth gauge.

    ``gauge`` is 1-homogeneous with V = {gauge < 1}; the outward unit normal
    at a boundary point is the normalized gauge gradient.
    """

    def gauge(self, x):
        raise NotImplementedError

    def gauge_grad(self, x):
        raise NotImplementedError

    @property
    def inradius(self):
        raise NotImplementedError

    @property
    def circumradius(self):
        raise NotImplementedError

    def contains(self, x):
        return self.gauge(np.atleast_2d(x)) < 1.0

    def normal(self, y):
        g = self.gauge_grad(np.atleast_2d(y))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def boundary_point(self, direction):
        d = np.asarray(direction, dtype=float)
        return d / self.gauge(d[None, :])[0]


class BallBody(ConvexBody):
    def __init__(self, n, radius=1.0):
        self.n = n
        self.radius = float(radius)

    def gauge(self, x):
        return np.linalg.norm(x, axis=1) / self.radius

    def gauge_grad(self, x):
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return np.where(norm > 0, x / (safe * self.radius), 0.0)

    @property
    def inradius(self):
        return self.radius

    @property
    def circumradius(self):
        return self.radius


class EllipsoidBody(ConvexBody):
    def __init__(self, semi_axes):
        self.semi_axes = np.asarray(semi_axes, dtype=float)

    def gauge(self, x):
        return np.sqrt(np.sum((x / self.semi_axes) ** 2, axis=1))

    def gauge_grad(self, x):
        g = self.gauge(x)
        safe = np.where(g > 0, g, 1.0)[:, None]
        return np.where(g[:, None] > 0, x / (self.semi_axes**2) / safe, 0.0)

    @property
    def inradius(self):
        return float(np.min(self.semi_axes))

    @property
    def circumradius(self):
        return float(np.max(self.semi_axes))


class SuperellipsoidBody(ConvexBody):
    """V = { ||x/r||_p < 1 } for an even integer p; a smooth rounded cube."""

    def __init__(self, n, radius, power):
        if power % 2 or power < 2:
            raise ValueError("power must be a positive even integer")
        self.n = n
        self.radius = float(radius)
        self.power = int(power)

    def _pnorm(self, x):
        # scale-invariant evaluation: no overflow for points far outside
        ax = np.abs(x)
        mx = np.max(ax, axis=1, keepdims=True)
        safe = np.where(mx > 0, mx, 1.0)
        ratios = ax / safe
        s = np.sum(ratios**self.power, axis=1)
        return (mx[:, 0] * s ** (1.0 / self.power))

    def gauge(self, x):
        return self._pnorm(x) / self.radius

    def gauge_grad(self, x):
        norm = self._pnorm(x)
        safe = np.where(norm > 0, norm, 1.0)
        ratios = np.abs(x) / safe[:, None]  # all <= 1
        grad = (ratios ** (self.power - 1)) * np.sign(x) / self.radius
        return np.where(norm[:, None] > 0, grad, 0.0)

    @property
    def inradius(self):
        return self.radius

    @property
    def circumradius(self):
        return self.radius * self.n ** (0.5 - 1.0 / self.power)


def cube_enclosure(n, inner, outer):
    """A smooth convex body V with Q + B(0,inner) <= V <= Q + B(0,outer).

    Q = [-1,1]^n.  Realized as a superellipsoid; the exponent is found by a
    scan so that both inclusions hold on the extremal diagonal directions.
    """
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    if n == 1:
        return SuperellipsoidBody(1, 1.0 + 0.5 * (inner + outer), 2)
    ks = np.arange(1, n + 1, dtype=float)

    def bounds(p):
        # smallest admissible radius: max_k [k (1+inner/sqrt k)^p + (n-k)]^(1/p)
        lo = np.max(
            np.logaddexp(np.log(ks) + p * np.log1p(inner / np.sqrt(ks)), np.log(n - ks + 1e-300))
        )
        r_lo = math.exp(lo / p)
        # largest admissible radius: min_k k^(1/p) (1 + outer/sqrt k)
        r_hi = np.min(ks ** (1.0 / p) * (1.0 + outer / np.sqrt(ks)))
        return r_lo, r_hi

    p_mid = max(4, int(round(3.0 * math.log(n) / min(outer - inner, 1.0))))
    candidates = sorted(
        {4, 6, 8, 12, 16, 24, 32, 48, 64}
        | {2 * max(2, int(p_mid * f / 2)) for f in (0.4, 0.6, 0.8, 1.0, 1.25, 1.6, 2.2, 3.0, 4.5)}
    )
    feasible = []
    for p in candidates:
        r_lo, r_hi = bounds(p)
        if r_lo <= r_hi * (1 - 1e-12):
            feasible.append((p, r_lo, r_hi))
    if not feasible:
        raise ValueError(f"no superellipsoid exponent found for n={n}, inner={inner}, outer={outer}")
    # prefer the gentlest exponent with a little margin off the band edge
    p, r_lo, r_hi = feasible[min(1, len(feasible) - 1)]
    return SuperellipsoidBody(n, math.sqrt(r_lo * r_hi), p)


# ---------------------------------------------------------------------------
# smooth retraction onto the cube


def smooth_retraction(n, eps):
    """Smooth map of R^n onto Q = [-1,1]^n preserving all face regions.

    g = h o f with f the nearest-point projection and h the coordinatewise
    profile with flat derivatives at +-1.  Lip(g) <= 1 + eps and
    |g(x) - x| <= (1 + sqrt n) eps on Q + B(0, eps).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    s_val, s_der = retraction_profile(eps)

    def value(x):
        return s_val(np.clip(x, -1.0, 1.0))

    def jac(x):
        d = s_der(np.clip(x, -1.0, 1.0))
        out = np.zeros((len(x), n, n))
        idx = np.arange(n)
        out[:, idx, idx] = d
        return out

    return SmoothMap(n, n, value, jac, support=None, smoothness=2, name="retract", meta={"eps": eps})


def retraction_with_collar(n, eps):
    """Identity-outside retraction: maps a neighbourhood of Q onto Q.

    l(x) = x for dist(x, Q) > eps; l = g (the smooth retraction) on a convex
    body V enclosing Q; |l(x) - x| <= eps everywhere; Lip(l) < 16 sqrt n; and
    dist(l(x), Q) <= dist(x, Q) since l(x) lies on the segment [x, g(x)].
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    sqrt_n = math.sqrt(n)
    iota = eps / (2.0 * (1.0 + sqrt_n))
    body = cube_enclosure(n, iota / 4.0, iota / 2.0)
    g = smooth_retraction(n, iota)
    # blend reaches 1 before points can be eps away from Q (in gauge terms)
    u1 = (1.0 + eps / (2.0 * sqrt_n)) / body.radius
    du = u1 - 1.0
    if du <= 0:
        raise RuntimeError("enclosure radius too large for the blend zone")

    def blend(gamma):
        return smoothstep((gamma - 1.0) / du)

    def value(x):
        gamma = body.gauge(x)
        a = blend(gamma)
        return x + (1.0 - a)[:, None] * (g._value(x) - x)

    def jac(x):
        gamma = body.gauge(x)
        a = blend(gamma)
        ad = smoothstep_d((gamma - 1.0) / du) / du
        gx = g._value(x)
        jg = g._jac(x)
        eye = np.eye(n)
        out = eye + (1.0 - a)[:, None, None] * (jg - eye)
        grad = body.gauge_grad(x)
        out -= ad[:, None, None] * np.einsum("ni,nj->nij", gx - x, grad)
        return out

    support = Box(-np.ones(n) * (1 + eps), np.ones(n) * (1 + eps))
    return SmoothMap(
        n, n, value, jac, support=support, smoothness=2, name="collar_retract",
        meta={"eps": eps, "iota": iota, "body_power": body.power, "body_radius": body.radius},
    )


# ---------------------------------------------------------------------------
# central projections


def _guard_nonzero(x):
    if np.any(np.linalg.norm(np.atleast_2d(x), axis=1) < 1e-300):
        raise ValueError("central projection is undefined at the origin")


def central_projection(body: ConvexBody):
    """Central projection p(x) = t(x) x onto the boundary of a convex body.

    Returns (p, t) as smooth maps (t has one output component).  For the
    gauge description t = 1/gauge, so Dp = I/gauge - x (grad gauge)^T/gauge^2.
    """
    n = getattr(body, "n", None) or len(np.atleast_1d(body.semi_axes))

    def p_value(x):
        _guard_nonzero(x)
        return x / body.gauge(x)[:, None]

    def p_jac(x):
        _guard_nonzero(x)
        gamma = body.gauge(x)
        grad = body.gauge_grad(x)
        eye = np.eye(n)
        return eye / gamma[:, None, None] - np.einsum("ni,nj->nij", x, grad) / (
            gamma**2
        )[:, None, None]

    def t_value(x):
        _guard_nonzero(x)
        return (1.0 / body.gauge(x))[:, None]

    def t_jac(x):
        _guard_nonzero(x)
        gamma = body.gauge(x)
        return (-body.gauge_grad(x) / (gamma**2)[:, None])[:, None, :]

    p = SmoothMap(n, n, p_value, p_jac, support=None, smoothness=2, name="central_proj")
    t = SmoothMap(n, 1, t_value, t_jac, support=None, smoothness=2, name="central_scale")
    return p, t


def _collar_alpha(delta):
    """Profile with alpha(u) = 1 for u <= 1, alpha(u) = u for u >= delta,
    1 <= alpha(u) <= u in between, 0 <= alpha' <= 1.5."""

    def a_w(w):
        w = np.asarray(w, dtype=float)
        bump = np.minimum(smoothstep(2 * w), smoothstep(2 - 2 * w))
        return smoothstep(w) + bump

    # integral of a_w from 0 to w, in closed form
    from ._profiles import smoothstep_i

    def a_int(w):
        w = np.asarray(w, dtype=float)
        base = smoothstep_i(w)
        low = 0.5 * smoothstep_i(np.minimum(2 * w, 1.0))
        high = np.where(w > 0.5, 0.5 * (0.5 - smoothstep_i(2.0 - 2.0 * w)), 0.0)
        return base + low + high

    span = delta - 1.0

    def value(u):
        u = np.asarray(u, dtype=float)
        w = (u - 1.0) / span
        mid = 1.0 + span * a_int(np.clip(w, 0.0, 1.0))
        return np.where(u <= 1.0, 1.0, np.where(u >= delta, u, mid))

    def deriv(u):
        u = np.asarray(u, dtype=float)
        w = (u - 1.0) / span
        mid = a_w(np.clip(w, 0.0, 1.0))
        return np.where(u <= 1.0, 0.0, np.where(u >= delta, 1.0, mid))

    return value, deriv


def collared_projection(body: ConvexBody, eps):
    """Central projection inside V, identity outside V.

    q(x) = alpha(t(x)) x with a profile alpha interpolating between 1 (for
    t <= 1, i.e. outside V) and t (deep inside, where dist(x, complement)
    >= eps).  q(x) always lies on the segment [x, p(x)].
    """
    n = getattr(body, "n", None) or len(np.atleast_1d(body.semi_axes))
    big_r = body.circumradius
    frac = min(eps / big_r, 0.5)
    delta = 1.0 / (1.0 - frac)
    alpha, alpha_d = _collar_alpha(delta)

    def value(x):
        _guard_nonzero(x)
        t = 1.0 / body.gauge(x)
        return alpha(t)[:, None] * x

    def jac(x):
        _guard_nonzero(x)
        gamma = body.gauge(x)
        t = 1.0 / gamma
        a = alpha(t)
        ad = alpha_d(t)
        grad = body.gauge_grad(x)
        eye = np.eye(n)
        out = a[:, None, None] * eye
        out -= (ad / gamma**2)[:, None, None] * np.einsum("ni,nj->nij", x, grad)
        return out

    support = Box(-np.ones(n) * big_r, np.ones(n) * big_r)
    return SmoothMap(
        n, n, value, jac, support=support, smoothness=2, name="collared_proj",
        meta={"eps": eps, "delta": delta},
    )


# ---------------------------------------------------------------------------
# interior recentering: a diffeomorphism of Q moving a to 0


def _coordinate_profile(a_i, rho):
    """Monotone C^2 profile with f(a_i) = 0, f(t) = t for |t| >= 1 - 5 rho/8
    (up to the corner blends), slope 1 on |t - a_i| <= rho/8."""
    l0, l1 = -1.0 + 5 * rho / 8.0, a_i - rho / 8.0
    r1, r0 = a_i + rho / 8.0, 1.0 - 5 * rho / 8.0
    k_left = (-rho / 8.0 - l0) / (l1 - l0)
    k_right = (r0 - rho / 8.0) / (r0 - r1)
    return SmoothPiecewiseLinear(
        [l0, l1, r1, r0], [1.0, k_left, 1.0, k_right, 1.0], a_i, 0.0
    )


def recentering_map(a):
    """Diffeomorphism of R^n fixing everything outside Int Q and moving a to 0.

    Coordinates are recentred one at a time; each stage is laterally
    localized so the map is the exact identity as soon as any coordinate is
    within rho_j/4 of the boundary (in particular outside Q and near dQ).
    On the core box where all lateral cutoffs equal 1 the map acts as the
    plain product of the 1-d profiles, so f(a) = 0 exactly and
    |f(x)| >= c |x - a| with a dimension constant c.
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    if np.any(np.abs(a) >= 1.0):
        raise ValueError("centre must lie in the open cube")
    rho = np.minimum(0.5, 1.0 - np.abs(a))
    profiles = [None if a[i] == 0.0 else _coordinate_profile(a[i], rho[i]) for i in range(n)]

    def eta(j, t):
        # lateral cutoff: 1 on |t| <= 1 - rho_j/2, 0 on |t| >= 1 - rho_j/4
        hi = 1.0 - rho[j] / 4.0
        return smoothstep((hi - np.abs(t)) / (rho[j] / 4.0))

    def eta_d(j, t):
        hi = 1.0 - rho[j] / 4.0
        return -np.sign(t) * smoothstep_d((hi - np.abs(t)) / (rho[j] / 4.0)) / (rho[j] / 4.0)

    stages = [i for i in range(n) if profiles[i] is not None]

    def value(x):
        cur = np.array(x, dtype=float, copy=True)
        for i in stages:
            lam = np.ones(len(cur))
            for j in range(n):
                if j != i:
                    lam = lam * eta(j, cur[:, j])
            disp = profiles[i].value(cur[:, i]) - cur[:, i]
            cur[:, i] = cur[:, i] + lam * disp
        return cur

    def jac(x):
        cur = np.array(x, dtype=float, copy=True)
        npts = len(cur)
        total = np.broadcast_to(np.eye(n), (npts, n, n)).copy()
        for i in stages:
            etas = np.ones((npts, n))
            for j in range(n):
                if j != i:
                    etas[:, j] = eta(j, cur[:, j])
            lam = np.prod(np.delete(etas, i, axis=1), axis=1)
            fval = profiles[i].value(cur[:, i])
            fder = profiles[i].derivative(cur[:, i])
            disp = fval - cur[:, i]
            stage_jac = np.broadcast_to(np.eye(n), (npts, n, n)).copy()
            stage_jac[:, i, i] = 1.0 + lam * (fder - 1.0)
            for j in range(n):
                if j == i:
                    continue
                others = np.ones(npts)
                for l in range(n):
                    if l != i and l != j:
                        others = others * etas[:, l]
                stage_jac[:, i, j] = disp * eta_d(j, cur[:, j]) * others
            total = np.einsum("nij,njk->nik", stage_jac, total)
            cur[:, i] = cur[:, i] + lam * disp
        return total

    support = Box(-np.ones(n), np.ones(n))
    return SmoothMap(
        n, n, value, jac, support=support, smoothness=2, name="recenter",
        meta={"center": a.tolist(), "rho": rho.tolist()},
    )


# ---------------------------------------------------------------------------
# punctured-cube projection


def punctured_cube_projection(a, eps):
    """The smooth map of Q minus {a} onto the boundary of Q.

    Composite l o q o f_a: recentre a to the origin, project centrally onto
    the boundary of an enclosing smooth convex body, then retract onto Q.
    Identity where dist(x, Q) >= eps; preserves the face regions of Q and of
    the neighbouring dyadic cubes; the derivative at interior points is
    bounded by a constant over |x - a| dist(a, dQ).
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    if not 0.0 < eps < 0.25:
        raise ValueError("eps must be in (0, 1/4)")
    if np.any(np.abs(a) >= 1.0):
        raise ValueError("centre must lie in the open cube")
    eps_l = eps / 2.0
    iota_l = eps_l / (2.0 * (1.0 + math.sqrt(n)))
    iota_q = iota_l / 8.0
    body = cube_enclosure(n, iota_q / 4.0, iota_q)
    f_a = recentering_map(a)
    q = collared_projection(body, iota_q / 8.0)
    l = retraction_with_collar(n, eps_l)
    phi = SmoothMap.compose(l, q, f_a)
    phi.name = "punctured_proj"
    phi.support = Box(-np.ones(n) * (1 + eps), np.ones(n) * (1 + eps))
    phi.meta = {
        "center": a.tolist(),
        "eps": eps,
        "dist_to_boundary": float(1.0 - np.max(np.abs(a))),
        "body_power": body.power,
    }
    return phi


# ---------------------------------------------------------------------------
# perturbation diffeomorphism killing sampled unrectifiable measure


class DirectionSearchError(RuntimeError):
    pass


class RankConditionError(RuntimeError):
    pass


def _covering_count(coords, resolution):
    cells = np.unique(np.floor(coords / resolution).astype(np.int64), axis=0)
    return len(cells)


def _cluster_balls(points, gap, region):
    """Disjoint balls around single-linkage clusters of the samples.

    Each ball's inner core (half of the rotation happens inside it) contains
    its whole cluster; the outer radius is capped by the distance to other
    clusters and by the ambient region.  Returns (centers, r_out, r_in,
    uncovered_idx)."""
    cells = np.floor(points / gap).astype(np.int64)
    order = {}
    for idx, c in enumerate(map(tuple, cells)):
        order.setdefault(c, []).append(idx)
    parent = {c: c for c in order}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    n = points.shape[1]
    offsets = [
        tuple(o)
        for o in np.stack(np.meshgrid(*([[-1, 0, 1]] * n), indexing="ij"), axis=-1).reshape(-1, n)
        if any(o)
    ]
    for c in list(order):
        for off in offsets:
            d = tuple(np.add(c, off))
            if d in order:
                ra, rb = find(c), find(d)
                if ra != rb:
                    parent[ra] = rb
    clusters = {}
    for c, members in order.items():
        clusters.setdefault(find(c), []).extend(members)
    roots = sorted(clusters)
    centers, inner = [], []
    members_by_ball = []
    for root in roots:
        idx = np.array(sorted(clusters[root]))
        pts = points[idx]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        centers.append((lo + hi) / 2.0)
        inner.append(float(np.linalg.norm(hi - lo) / 2.0) * 1.02 + 1e-12)
        members_by_ball.append(idx)
    centers = np.array(centers)
    inner = np.array(inner)
    outer = 2.5 * inner
    if len(centers) > 1:
        d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        outer = np.minimum(outer, 0.48 * d.min(axis=1))
    keep, uncovered = [], []
    for i in range(len(centers)):
        ok = outer[i] >= 1.3 * inner[i]
        if ok and region is not None and hasattr(region, "contains_ball"):
            ok = region.contains_ball(centers[i], outer[i])
        if ok:
            keep.append(i)
        else:
            uncovered.extend(members_by_ball[i].tolist())
    keep = np.array(keep, dtype=int)
    return centers[keep], outer[keep], inner[keep], uncovered


def unrect_perturbation(
    points,
    f: SmoothMap,
    region,
    eps,
    m,
    *,
    weights=None,
    seed=0,
    cluster_gap=None,
    direction_budget=720,
    threshold_factor=0.5,
    resolution=None,
    rank_tol=1e-6,
):
    """Diffeomorphism rho with f o rho shrinking the sampled set's measure.

    ``points`` samples a purely unrectifiable set inside ``region`` where
    rank Df <= m must hold (checked by a singular-value threshold).  Disjoint
    balls cover the samples; in each ball a rotation aligns a low-projection
    direction (found by brute-force search over a direction grid) with the
    row space of Df at the centre.  ||D rho - id|| <= eps by construction.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts, n = points.shape
    if npts == 0:
        rho = SmoothMap.identity(n)
        rho.meta = {"balls": 0, "uncovered": 0}
        return rho
    jacs = f.jacobian(points)
    svals = np.linalg.svd(jacs, compute_uv=False)
    if svals.shape[1] > m:
        bad = svals[:, m] > rank_tol * np.maximum(svals[:, 0], 1e-12)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise RankConditionError(
                f"rank of Df exceeds {m} at sample {i}: {points[i].tolist()} "
                f"(sigma_{m+1} = {svals[i, m]:.3e})"
            )
    if resolution is None:
        # native sample resolution: median nearest-neighbour distance
        sub = points if npts <= 4096 else points[:: npts // 4096]
        mins = np.full(len(sub), np.inf)
        for start in range(0, npts, 1024):
            block = points[start : start + 1024]
            d2 = np.linalg.norm(sub[:, None, :] - block[None, :, :], axis=2)
            d2[d2 == 0.0] = np.inf
            mins = np.minimum(mins, d2.min(axis=1))
        resolution = float(np.median(mins[np.isfinite(mins)]))
    if cluster_gap is None:
        cluster_gap = resolution * 8.0
    centers, outer_radii, inner_radii, uncovered = _cluster_balls(points, cluster_gap, region)
    rng = np.random.default_rng(seed)
    zeta_val, zeta_der = plateau_step(0.0, 1.0, max_slope=2.0)

    balls = []
    for b_idx in range(len(centers)):
        a = centers[b_idx]
        r = float(outer_radii[b_idx])
        r_in = float(inner_radii[b_idx])
        in_ball = np.linalg.norm(points - a, axis=1) < r
        xb = points[in_ball]
        if len(xb) == 0:
            continue
        gamma_loc = (2.0 * r / (r - r_in) + 1.0) * 8.0
        cone = min(0.9 * eps / gamma_loc, 0.95)
        ja = f.jacobian(a)
        u, s, vt = np.linalg.svd(ja)
        t_plane = Plane(vt[:m].T)
        if m == 1 and n == 2:
            base = math.atan2(t_plane.frame[1, 0], t_plane.frame[0, 0])
            amax = math.asin(min(cone, 1.0))
            angles = base + np.linspace(-amax, amax, direction_budget)
            candidates = [Plane.span([math.cos(t), math.sin(t)]) for t in angles]
        else:
            candidates = [t_plane]
            while len(candidates) < direction_budget:
                g = t_plane.frame + cone * 0.7 * rng.standard_normal((n, m))
                try:
                    cand = Plane(g)
                except ValueError:
                    continue
                if projector_distance(cand, t_plane) <= cone:
                    candidates.append(cand)
        baseline = _covering_count(xb @ t_plane.frame, resolution)
        best = None
        for cand in candidates:
            score = _covering_count(xb @ cand.frame, resolution)
            if best is None or score < best[0]:
                best = (score, cand)
        own = _covering_count(xb, resolution)  # ambient occupancy count
        if best[0] > threshold_factor * own:
            raise DirectionSearchError(
                f"no direction below threshold in ball {b_idx} "
                f"(best {best[0]} cells vs own {own} cells)"
            )
        rot = build_rotation(best[1], t_plane)
        balls.append(
            {
                "center": a,
                "r": r,
                "r_inner": r_in,
                "rotation": rot,
                "tilt": projector_distance(best[1], t_plane),
                "score": best[0] * resolution**m,
                "baseline": baseline * resolution**m,
            }
        )

    centers_arr = np.array([b["center"] for b in balls]) if balls else np.zeros((0, n))
    radii_arr = np.array([b["r"] for b in balls])

    def _assign(x):
        if len(balls) == 0:
            return np.full(len(x), -1), None
        d = np.linalg.norm(x[:, None, :] - centers_arr[None, :, :], axis=2)
        idx = np.argmin(d, axis=1)
        dmin = d[np.arange(len(x)), idx]
        idx = np.where(dmin < radii_arr[idx], idx, -1)
        return idx, dmin

    def value(x):
        out = np.array(x, dtype=float, copy=True)
        idx, _ = _assign(out)
        for k, b in enumerate(balls):
            sel = idx == k
            if not np.any(sel):
                continue
            v = out[sel] - b["center"]
            dist = np.linalg.norm(v, axis=1)
            s = zeta_val((b["r"] - dist) / (b["r"] - b["r_inner"]))
            delta = np.zeros_like(v)
            for alpha, sv, sh in b["rotation"].angles:
                cs = np.cos(s * alpha) - 1.0
                sn = np.sin(s * alpha)
                vs = v @ sv
                vh = v @ sh
                delta += (cs * vs - sn * vh)[:, None] * sv + (cs * vh + sn * vs)[:, None] * sh
            out[sel] = out[sel] + delta
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(np.eye(n), (len(x), n, n)).copy()
        idx, _ = _assign(x)
        for k, b in enumerate(balls):
            sel = idx == k
            if not np.any(sel):
                continue
            v = x[sel] - b["center"]
            dist = np.linalg.norm(v, axis=1)
            width = b["r"] - b["r_inner"]
            s = zeta_val((b["r"] - dist) / width)
            sd = zeta_der((b["r"] - dist) / width)
            rot = b["rotation"]
            mrot = np.array([rot.evaluate(t) for t in s])
            mder = np.array([rot.derivative(t) for t in s])
            grad_s = -(sd / width)[:, None] * (v / np.maximum(dist, 1e-300)[:, None])
            out[sel] = mrot + np.einsum("ni,nj->nij", np.einsum("nij,nj->ni", mder, v), grad_s)
        return out

    rho = SmoothMap(
        n, n, value, jac,
        support=UnionRegion([Ball(b["center"], b["r"]) for b in balls]) if balls else None,
        smoothness=2,
        name="unrect_perturb",
        meta={
            "balls": [
                {
                    "center": b["center"].tolist(),
                    "r": b["r"],
                    "tilt": b["tilt"],
                    "projected_estimate": b["score"],
                    "baseline_estimate": b["baseline"],
                }
                for b in balls
            ],
            "uncovered_samples": len(uncovered),
            "resolution": resolution,
            "eps": eps,
        },
    )
    return rho
