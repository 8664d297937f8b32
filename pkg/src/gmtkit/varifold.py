"""Discrete varifolds, anisotropic functionals, slicing, density ratios.

A discrete m-varifold is a weighted list of samples (point, tangent plane)
approximating an m-dimensional set; samples of the purely unrectifiable
part carry no tangent ("isotropic") and average tangent-dependent
quantities over the invariant measure on the Grassmannian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._profiles import SmoothPiecewiseLinear
from .cubemaps import SmoothMap
from .grassmann import Plane, haar_sample

__all__ = [
    "Integrand",
    "AreaIntegrand",
    "TiltPenaltyIntegrand",
    "RiemannianWeightIntegrand",
    "TableIntegrand",
    "FrozenIntegrand",
    "integrand_from_config",
    "DiscreteVarifold",
    "SliceResult",
    "phi_F",
    "psi_F",
    "pullback_integrand",
    "pushforward",
    "slice_varifold",
    "blowup_map",
    "density_ratio",
    "DensityRatio",
    "ellipticity_probe",
    "EllipticityReport",
    "covering_measure",
    "unit_ball_volume",
]


def unit_ball_volume(m):
    """Volume of the m-dimensional unit ball (omega_0 = 1, omega_m = 2 pi omega_(m-2) / m)."""
    if m == 0:
        return 1.0
    if m == 1:
        return 2.0
    return 2.0 * math.pi / m * unit_ball_volume(m - 2)


# ---------------------------------------------------------------------------
# integrands


class Integrand:
    """Positive weight F(x, T) on position x tangent plane, batch-evaluated.

    ``evaluate`` takes points (N, n) and tangent frames (N, n, m).
    """

    inf_bound = 1.0
    sup_bound = 1.0
    smoothness = math.inf
    name = "integrand"

    def evaluate(self, points, frames):
        raise NotImplementedError

    def __call__(self, x, plane: Plane):
        x = np.asarray(x, dtype=float)
        return float(self.evaluate(x[None, :], plane.frame[None, :, :])[0])

    @property
    def bounded(self):
        return self.inf_bound > 0 and np.isfinite(self.sup_bound)


class AreaIntegrand(Integrand):
    name = "area"

    def evaluate(self, points, frames):
        return np.ones(len(points))


def _projector_distance_sq(frames, h_frame):
    """Batched squared operator norm of P_T - P_H."""
    pt = np.einsum("nij,nkj->nik", frames, frames)
    ph = h_frame @ h_frame.T
    diff = pt - ph
    eig = np.linalg.eigvalsh(diff)
    return np.maximum(eig[:, -1], -eig[:, 0]) ** 2


class TiltPenaltyIntegrand(Integrand):
    """F(x, T) = 1 + lam * ||P_T - P_H||^2 for a reference plane H."""

    def __init__(self, reference: Plane, lam=1.0):
        self.reference = reference
        self.lam = float(lam)
        self.inf_bound = 1.0
        self.sup_bound = 1.0 + self.lam
        self.name = f"tilt_penalty(lam={lam})"

    def evaluate(self, points, frames):
        return 1.0 + self.lam * _projector_distance_sq(frames, self.reference.frame)


class RiemannianWeightIntegrand(Integrand):
    """F(x, T) = w(x): an inhomogeneous, isotropic weight."""

    def __init__(self, weight_fn, inf_bound, sup_bound, name="riemannian"):
        self.weight_fn = weight_fn
        self.inf_bound = float(inf_bound)
        self.sup_bound = float(sup_bound)
        self.name = name

    def evaluate(self, points, frames):
        return np.asarray(self.weight_fn(points), dtype=float)


class TableIntegrand(Integrand):
    """Grid-sampled positional weight with multilinear interpolation."""

    def __init__(self, origin, spacing, values):
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = np.asarray(spacing, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.inf_bound = float(self.values.min())
        self.sup_bound = float(self.values.max())
        self.name = "table"

    def evaluate(self, points, frames):
        rel = (points - self.origin) / self.spacing
        n = points.shape[1]
        shape = self.values.shape
        lo = np.clip(np.floor(rel).astype(int), 0, np.array(shape) - 2)
        frac = np.clip(rel - lo, 0.0, 1.0)
        out = np.zeros(len(points))
        for corner in np.ndindex(*(2,) * n):
            idx = tuple((lo + np.array(corner)).T)
            w = np.prod(
                np.where(np.array(corner)[None, :] == 1, frac, 1 - frac), axis=1
            )
            out += w * self.values[idx]
        return out


class FrozenIntegrand(Integrand):
    """F^x: the integrand with the spatial argument frozen at x."""

    def __init__(self, base: Integrand, x):
        self.base = base
        self.x = np.asarray(x, dtype=float)
        self.inf_bound = base.inf_bound
        self.sup_bound = base.sup_bound
        self.name = f"{base.name}@x"

    def evaluate(self, points, frames):
        fixed = np.broadcast_to(self.x, points.shape)
        return self.base.evaluate(fixed, frames)


def integrand_from_config(cfg, n=None):
    """Build a registry integrand from a JSON-style dict."""
    kind = cfg.get("kind", "area")
    if kind == "area":
        return AreaIntegrand()
    if kind == "tilt_penalty":
        axes = cfg.get("reference_axes")
        if axes is not None:
            ref = Plane.axis(n, axes)
        else:
            frame = np.asarray(cfg["reference_frame"], dtype=float)
            ref = Plane(frame.reshape(n, -1))
        return TiltPenaltyIntegrand(ref, lam=float(cfg.get("lam", 1.0)))
    if kind == "table":
        return TableIntegrand(cfg["origin"], cfg["spacing"], np.asarray(cfg["values"]))
    raise ValueError(f"unknown integrand kind: {kind}")


# ---------------------------------------------------------------------------
# discrete varifolds


class DiscreteVarifold:
    """Weighted tangent samples of an m-varifold in R^n.

    frames rows are valid only where ``isotropic`` is False; isotropic
    samples stand for the unrectifiable part, averaged over the Grassmannian
    wherever a tangent is needed.
    """

    def __init__(self, points, frames, weights, isotropic=None, dim=None):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        count, n = self.points.shape
        if frames is None:
            if dim is None:
                raise ValueError("need dim when no frames are given")
            self.frames = np.zeros((count, n, dim))
            iso_default = np.ones(count, dtype=bool)
        else:
            frames = np.asarray(frames, dtype=float)
            if frames.ndim != 3:
                frames = frames.reshape(count, n, -1)
            self.frames = frames
            iso_default = np.zeros(count, dtype=bool)
        self.weights = np.asarray(weights, dtype=float).reshape(count)
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        self.isotropic = (
            iso_default if isotropic is None else np.asarray(isotropic, dtype=bool).reshape(count)
        )

    @property
    def ambient_dim(self):
        return self.points.shape[1]

    @property
    def dim(self):
        return self.frames.shape[2]

    def __len__(self):
        return len(self.points)

    def mass(self):
        return float(self.weights.sum())

    def restrict(self, mask):
        return DiscreteVarifold(
            self.points[mask], self.frames[mask], self.weights[mask], self.isotropic[mask]
        )

    def tangent_part(self):
        return self.restrict(~self.isotropic)

    def isotropic_part(self):
        return self.restrict(self.isotropic)

    @staticmethod
    def concat(parts):
        parts = list(parts)
        if not parts:
            raise ValueError("need at least one varifold to concatenate")
        nonempty = [p for p in parts if len(p)]
        if not nonempty:
            return parts[0]
        return DiscreteVarifold(
            np.vstack([p.points for p in nonempty]),
            np.concatenate([p.frames for p in nonempty], axis=0),
            np.concatenate([p.weights for p in nonempty]),
            np.concatenate([p.isotropic for p in nonempty]),
        )

    @staticmethod
    def from_flat(points, tangent_frames, weights):
        """Tangent samples from per-sample frame matrices (N, n, m)."""
        return DiscreteVarifold(points, tangent_frames, weights)

    @staticmethod
    def flat(points, plane: Plane, weights):
        """All samples share one tangent plane."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        frames = np.broadcast_to(plane.frame, (len(points),) + plane.frame.shape).copy()
        return DiscreteVarifold(points, frames, weights)

    @staticmethod
    def isotropic_set(points, weights, dim):
        return DiscreteVarifold(points, None, weights, dim=dim)

    def to_csv(self, path):
        n, m = self.ambient_dim, self.dim
        with open(path, "w") as fh:
            fh.write(f"# gmtkit varifold n={n} m={m}\n")
            for i in range(len(self)):
                coords = ",".join(repr(float(v)) for v in self.points[i])
                weight = repr(float(self.weights[i]))
                if self.isotropic[i]:
                    fh.write(f"{coords},isotropic,{weight}\n")
                else:
                    fr = ",".join(repr(float(v)) for v in self.frames[i].T.ravel())
                    fh.write(f"{coords},{fr},{weight}\n")

    @staticmethod
    def from_csv(path):
        points, frames, weights, iso = [], [], [], []
        n = m = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line.split():
                        if tok.startswith("n="):
                            n = int(tok[2:])
                        if tok.startswith("m="):
                            m = int(tok[2:])
                    continue
                parts = line.split(",")
                if n is None:
                    raise ValueError("varifold csv requires the header line")
                points.append([float(v) for v in parts[:n]])
                if parts[n] == "isotropic":
                    iso.append(True)
                    frames.append(np.zeros((n, m)))
                    weights.append(float(parts[n + 1]))
                else:
                    iso.append(False)
                    fr = np.array([float(v) for v in parts[n : n + n * m]]).reshape(m, n).T
                    frames.append(fr)
                    weights.append(float(parts[n + n * m]))
        if not points:
            if n is None or m is None:
                raise ValueError("varifold csv requires the header line")
            return DiscreteVarifold(np.zeros((0, n)), np.zeros((0, n, m)), np.zeros(0))
        return DiscreteVarifold(np.array(points), np.array(frames), np.array(weights), np.array(iso))


@dataclass
class SliceResult:
    parameter: np.ndarray
    varifold: DiscreteVarifold
    bin_width: float
    dropped_degenerate: int = 0

    def mass(self):
        return self.varifold.mass()


# ---------------------------------------------------------------------------
# functionals


def _grassmann_grid(n, m, count, seed, include_axes=True):
    planes = []
    if include_axes:
        planes.extend(Plane.axis(n, axes) for axes in itertools.combinations(range(n), m))
    rng = np.random.default_rng(seed)
    planes.extend(haar_sample(n, m, rng) for _ in range(count))
    return planes


def phi_F(v: DiscreteVarifold, f: Integrand, grassmann_samples=256, seed=0, with_report=False):
    """Phi_F(V) = sum of weight * F(x, T) over the samples.

    Isotropic samples contribute weight times the Monte-Carlo average of
    F(x, .) over Haar-random planes (count and standard error reported).
    """
    total = 0.0
    report = {"grassmann_samples": 0, "mc_stderr": 0.0}
    tang = v.tangent_part()
    if len(tang):
        total += float(np.sum(tang.weights * f.evaluate(tang.points, tang.frames)))
    iso = v.isotropic_part()
    if len(iso):
        rng = np.random.default_rng(seed)
        draws = np.zeros((grassmann_samples, len(iso)))
        for k in range(grassmann_samples):
            plane = haar_sample(v.ambient_dim, v.dim, rng)
            frames = np.broadcast_to(plane.frame, (len(iso),) + plane.frame.shape)
            draws[k] = f.evaluate(iso.points, frames)
        means = draws.mean(axis=0)
        total += float(np.sum(iso.weights * means))
        stderr = float(
            np.sum(iso.weights * draws.std(axis=0, ddof=1)) / math.sqrt(grassmann_samples)
        )
        report = {"grassmann_samples": grassmann_samples, "mc_stderr": stderr}
    if with_report:
        return total, report
    return total


def psi_F(s_r: DiscreteVarifold, s_u: DiscreteVarifold, f: Integrand, sup_grid=512, seed=0,
          with_report=False):
    """Psi_F = Phi_F(rectifiable part) + unrectifiable mass at the sup of F.

    The per-point supremum over tangent planes is estimated on a Grassmann
    grid of Haar samples plus all axis planes (grid size recorded).
    """
    if len(s_r) and np.any(s_r.isotropic):
        raise ValueError("rectifiable part must be all-tangent")
    if len(s_u) and not np.all(s_u.isotropic):
        raise ValueError("unrectifiable part must be all-isotropic")
    total = phi_F(s_r, f) if len(s_r) else 0.0
    used_grid = 0
    if len(s_u):
        n, m = s_u.ambient_dim, s_u.dim
        planes = _grassmann_grid(n, m, sup_grid, seed)
        used_grid = len(planes)
        sup = np.full(len(s_u), -np.inf)
        for plane in planes:
            frames = np.broadcast_to(plane.frame, (len(s_u),) + plane.frame.shape)
            sup = np.maximum(sup, f.evaluate(s_u.points, frames))
        total += float(np.sum(s_u.weights * sup))
    if with_report:
        return total, {"sup_grid": used_grid}
    return total


def _m_jacobians(jacs, frames):
    """||Lambda_m D phi o P_T||: the m-Jacobian along each tangent frame."""
    a = np.einsum("nij,njk->nik", jacs, frames)
    gram = np.einsum("nji,njk->nik", a, a)
    det = np.linalg.det(gram)
    return np.sqrt(np.maximum(det, 0.0)), a


def pullback_integrand(phi: SmoothMap, f: Integrand, rank_tol=1e-12):
    """phi^# F: (x, T) -> F(phi(x), D phi[T]) ||Lambda_m D phi o P_T||."""

    class _Pullback(Integrand):
        inf_bound = 0.0
        sup_bound = math.inf
        name = f"pullback({f.name})"

        def evaluate(self, points, frames):
            jacs = phi.jacobian(points)
            jm, a = _m_jacobians(jacs, frames)
            out = np.zeros(len(points))
            ok = jm > rank_tol
            if np.any(ok):
                img_frames, _ = np.linalg.qr(a[ok])
                vals = f.evaluate(phi.value(points[ok]), img_frames)
                out[ok] = vals * jm[ok]
            return out

    return _Pullback()


def pushforward(phi: SmoothMap, v: DiscreteVarifold, haar_draws=16, seed=0):
    """phi_# V: transport points, tangents, and weights by the m-Jacobian.

    Isotropic samples are routed through per-sample Haar draws; samples whose
    image plane degenerates keep zero weight and are dropped.
    """
    parts = []
    tang = v.tangent_part()
    if len(tang):
        jacs = phi.jacobian(tang.points)
        jm, a = _m_jacobians(jacs, tang.frames)
        ok = jm > 1e-12
        if np.any(ok):
            frames, _ = np.linalg.qr(a[ok])
            parts.append(
                DiscreteVarifold(phi.value(tang.points[ok]), frames, tang.weights[ok] * jm[ok])
            )
    iso = v.isotropic_part()
    if len(iso):
        rng = np.random.default_rng(seed)
        reps = []
        for _ in range(haar_draws):
            plane = haar_sample(v.ambient_dim, v.dim, rng)
            frames = np.broadcast_to(plane.frame, (len(iso),) + plane.frame.shape).copy()
            reps.append(DiscreteVarifold(iso.points, frames, iso.weights / haar_draws))
        merged = DiscreteVarifold.concat(reps)
        parts.append(pushforward(phi, merged))
    if not parts:
        return DiscreteVarifold(
            np.zeros((0, phi.n_out)), np.zeros((0, phi.n_out, v.dim)), np.zeros(0)
        )
    return DiscreteVarifold.concat(parts)


def slice_varifold(v: DiscreteVarifold, f: SmoothMap, t, bin_width, coarea_tol=1e-12):
    """The slice of V by f at level t: a discrete density quotient.

    Samples with |f(x) - t| <= bin/2 (componentwise) contribute weight times
    the coarea factor over bin^nu; the slice tangent is S intersected with
    ker Df(x).  Samples with degenerate coarea factor are dropped, matching
    the restriction of the slicing measure to positive-Jacobian pairs.
    """
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nu = f.n_out
    if len(t) != nu:
        raise ValueError("level dimension must match the map")
    if nu > v.dim:
        raise ValueError("cannot slice below dimension 0")
    if np.any(v.isotropic):
        raise ValueError("slicing expects an all-tangent varifold")
    vals = np.atleast_2d(f.value(v.points))
    sel = np.all(np.abs(vals - t) <= bin_width / 2.0, axis=1)
    sub = v.restrict(sel)
    if len(sub) == 0:
        return SliceResult(t, DiscreteVarifold(
            np.zeros((0, v.ambient_dim)), np.zeros((0, v.ambient_dim, v.dim - nu)), np.zeros(0)
        ), bin_width)
    jacs = f.jacobian(sub.points)  # (N, nu, n)
    b = np.einsum("nij,njk->nik", jacs, sub.frames)  # (N, nu, m)
    gram = np.einsum("nij,nkj->nik", b, b)
    coarea = np.sqrt(np.maximum(np.linalg.det(gram), 0.0))
    keep = coarea > coarea_tol
    dropped = int((~keep).sum())
    sub = sub.restrict(keep)
    b = b[keep]
    coarea = coarea[keep]
    # slice tangent: S cap ker Df = frame . null(B), batched
    _, _, vt = np.linalg.svd(b)
    null = np.swapaxes(vt[:, nu:, :], 1, 2)  # (N, m, m - nu)
    new_frames, _ = np.linalg.qr(np.einsum("nij,njk->nik", sub.frames, null))
    weights = sub.weights * coarea / bin_width**nu
    return SliceResult(t, DiscreteVarifold(sub.points, new_frames, weights), bin_width, dropped)


def blowup_map(rho: SmoothMap, t, delta):
    """K(x) = (s_delta((t - rho(x)) / delta), x): the graph map whose
    push-forwards converge to the two endpoint copies plus the product of the
    unit interval with the slice."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    if rho.n_out != 1:
        raise ValueError("blow-up expects a scalar map")
    n = rho.n_in
    w = 0.9 * delta**2 / (1.0 + 2.0 * delta)
    c = (delta - w) / (delta - 2.0 * w)
    profile = SmoothPiecewiseLinear(
        [w, delta - w, 1.0 - delta + w, 1.0 - w],
        [0.0, c, 1.0, c, 0.0],
        0.5,
        0.5,
    )

    def value(x):
        tau = (t - rho.value(x)[:, 0]) / delta
        s = np.where(tau <= 0.0, 0.0, np.where(tau >= 1.0, 1.0, profile.value(np.clip(tau, 0, 1))))
        return np.column_stack([s, x])

    def jac(x):
        npts = len(x)
        tau = (t - rho.value(x)[:, 0]) / delta
        sd = np.where((tau <= 0.0) | (tau >= 1.0), 0.0, profile.derivative(np.clip(tau, 0, 1)))
        jr = rho.jacobian(x)[:, 0, :]
        out = np.zeros((npts, n + 1, n))
        out[:, 0, :] = -(sd / delta)[:, None] * jr
        out[:, 1:, :] = np.eye(n)
        return out

    return SmoothMap(n, n + 1, value, jac, smoothness=2, name="blowup",
                     meta={"t": t, "delta": delta})


@dataclass
class DensityRatio:
    radius: float
    ratio: float
    reliable: bool


def sample_spacing(points, cap=2048):
    """Median nearest-neighbour distance (resolution scale of the sampling).

    Grid-hashed so large clouds stay linear: each probe point is compared
    only against the points in its own and adjacent hash cells.
    """
    pts = np.atleast_2d(points)
    n_pts, dim = pts.shape
    if n_pts < 2:
        return math.inf
    if n_pts <= cap:
        mins = np.full(n_pts, np.inf)
        for start in range(0, n_pts, 1024):
            block = pts[start : start + 1024]
            d = np.linalg.norm(pts[:, None, :] - block[None, :, :], axis=2)
            d[d == 0.0] = np.inf
            mins = np.minimum(mins, d.min(axis=1))
        return float(np.median(mins[np.isfinite(mins)]))
    span = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    cell = max(span / max(n_pts, 2) ** (1.0 / dim) * 2.0, 1e-12)
    buckets = {}
    keys = np.floor(pts / cell).astype(np.int64)
    for i, key in enumerate(map(tuple, keys)):
        buckets.setdefault(key, []).append(i)
    probe_idx = np.arange(0, n_pts, max(1, n_pts // cap))
    offsets = list(itertools.product((-1, 0, 1), repeat=dim))
    mins = []
    for i in probe_idx:
        key = tuple(keys[i])
        cand = []
        for off in offsets:
            cand.extend(buckets.get(tuple(np.add(key, off)), []))
        d = np.linalg.norm(pts[cand] - pts[i], axis=1)
        d = d[d > 0.0]
        if len(d):
            mins.append(d.min())
    return float(np.median(mins)) if mins else math.inf


def density_ratio(v: DiscreteVarifold, x, radii, spacing=None):
    """||V||(closed ball(x, r)) / r^m per radius, with a reliability flag.

    Radii below five times the sample spacing cannot be resolved by the
    discretization and are flagged unreliable.
    """
    x = np.asarray(x, dtype=float)
    if spacing is None:
        spacing = sample_spacing(v.points)
    d = np.linalg.norm(v.points - x, axis=1)
    out = []
    for r in radii:
        if r <= 0:
            raise ValueError("radii must be positive")
        mass = float(v.weights[d <= r].sum())
        out.append(DensityRatio(float(r), mass / r**v.dim, bool(r >= 5.0 * spacing)))
    return out


def covering_measure(points, m, resolution):
    """Box-counting measure estimate: occupied-cell count times res^m.

    Returns (value, resolution); the stated resolution must accompany every
    reported estimate.
    """
    pts = np.atleast_2d(points)
    if len(pts) == 0:
        return 0.0, resolution
    cells = np.unique(np.floor(pts / resolution).astype(np.int64), axis=0)
    return float(len(cells)) * resolution**m, resolution


# ---------------------------------------------------------------------------
# ellipticity probe


@dataclass
class EllipticityReport:
    margins: list = field(default_factory=list)
    min_margin: float = math.inf
    counterexample: str | None = None

    @property
    def refuted(self):
        return self.counterexample is not None


def _build_disc(t_plane: Plane, rings=24, per_ring=16):
    """Exact-quadrature unit m-disc inside the plane (m = 1 or 2)."""
    n, m = t_plane.ambient_dim, t_plane.dim
    if m == 1:
        count = rings * per_ring
        s = (np.arange(count) + 0.5) / count * 2.0 - 1.0
        pts = s[:, None] * t_plane.frame[:, 0][None, :]
        w = np.full(count, 2.0 / count)
        return DiscreteVarifold.flat(pts, t_plane, w)
    if m != 2:
        raise ValueError("probe discs support m in {1, 2}")
    pts, ws = [], []
    dr = 1.0 / rings
    for k in range(rings):
        r = (k + 0.5) * dr
        count = max(8, int(per_ring * (k + 1)))
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        local = np.column_stack([r * np.cos(th), r * np.sin(th)])
        pts.append(local @ t_plane.frame.T)
        ws.append(np.full(count, np.pi * ((r + dr / 2) ** 2 - (r - dr / 2) ** 2) / count))
    return DiscreteVarifold.flat(np.vstack(pts), t_plane, np.concatenate(ws))


def _graph_bump(t_plane: Plane, normal, height, rings=24, per_ring=16):
    """Graph of h (1-r^2)^2 over the unit disc, lifted in a normal direction."""
    n, m = t_plane.ambient_dim, t_plane.dim
    flat = _build_disc(t_plane, rings, per_ring)
    local = flat.points @ t_plane.frame  # (N, m) coordinates in the plane
    r2 = np.sum(local**2, axis=1)
    u = height * (1.0 - r2) ** 2
    du = -4.0 * height * (1.0 - r2)  # du/d(coordinate) = du_dr2 * 2 c_i
    pts = flat.points + u[:, None] * normal[None, :]
    a = np.broadcast_to(t_plane.frame, (len(pts), n, m)).copy()
    a += du[:, None, None] * normal[None, :, None] * local[:, None, :]
    gram = np.einsum("nji,njk->nik", a, a)
    area = np.sqrt(np.maximum(np.linalg.det(gram), 0.0))
    frames, _ = np.linalg.qr(a)
    return DiscreteVarifold(pts, frames, flat.weights * area)


def _cone_over_boundary(t_plane: Plane, normal, height, segs=160, levels=40):
    """Cone from an apex off the plane over the boundary of the unit disc."""
    n, m = t_plane.ambient_dim, t_plane.dim
    apex = height * normal
    pts, frames, ws = [], [], []
    if m == 1:
        ends = [t_plane.frame[:, 0], -t_plane.frame[:, 0]]
        for e in ends:
            t = (np.arange(levels) + 0.5) / levels
            seg = apex[None, :] + t[:, None] * (e - apex)[None, :]
            direction = (e - apex) / np.linalg.norm(e - apex)
            pts.append(seg)
            frames.append(np.broadcast_to(direction[:, None], (levels, n, 1)).copy())
            ws.append(np.full(levels, np.linalg.norm(e - apex) / levels))
    else:
        th = 2 * np.pi * (np.arange(segs) + 0.5) / segs
        omega = np.cos(th)[:, None] * t_plane.frame[:, 0] + np.sin(th)[:, None] * t_plane.frame[:, 1]
        omega_d = -np.sin(th)[:, None] * t_plane.frame[:, 0] + np.cos(th)[:, None] * t_plane.frame[:, 1]
        s = (np.arange(levels) + 0.5) / levels
        pos = apex[None, None, :] + s[None, :, None] * (omega[:, None, :] - apex[None, None, :])
        a = np.zeros((segs, levels, n, 2))
        a[:, :, :, 0] = (omega - apex)[:, None, :]
        a[:, :, :, 1] = s[None, :, None] * omega_d[:, None, :]
        a = a.reshape(segs * levels, n, 2)
        gram = np.einsum("nji,njk->nik", a, a)
        area = np.sqrt(np.maximum(np.linalg.det(gram), 0.0))
        q, _ = np.linalg.qr(a)
        pts = pos.reshape(segs * levels, n)
        return DiscreteVarifold(pts, q, area * (2 * np.pi / segs) / levels)
    return DiscreteVarifold(np.vstack(pts), np.concatenate(frames, axis=0), np.concatenate(ws))


def _disc_with_patch(t_plane: Plane, hole_radius=0.5, mass_factor=1.3, rings=24, per_ring=16):
    """The unit disc with the inner sub-disc replaced by an unrectifiable
    patch of the same position and prescribed Hausdorff mass."""
    full = _build_disc(t_plane, rings, per_ring)
    local = full.points @ t_plane.frame
    r = np.sqrt(np.sum(local**2, axis=1))
    keep = r >= hole_radius
    ann = full.restrict(keep)
    hole = full.restrict(~keep)
    patch = DiscreteVarifold.isotropic_set(
        hole.points, hole.weights * mass_factor, t_plane.dim
    )
    return ann, patch


def ellipticity_probe(f: Integrand, x, t_plane: Plane, candidates=None, sup_grid=512, seed=0):
    """One-sided ellipticity probe: refute, never certify.

    Tests Psi_{F^x}(S) - Psi_{F^x}(D) >= c (H^m(S) - H^m(D)) over a built-in
    family of competitors spanning the boundary of the flat unit disc D:
    graphical bumps, cones over the boundary, and a disc with an
    unrectifiable patch.  Returns the margins and, when some Psi-gap is
    negative, a counterexample certificate.
    """
    n, m = t_plane.ambient_dim, t_plane.dim
    fx = FrozenIntegrand(f, x)
    # complement direction for lifts
    basis = np.linalg.svd(t_plane.frame)[0]
    normal = basis[:, m]
    disc = _build_disc(t_plane)
    empty = DiscreteVarifold.isotropic_set(np.zeros((0, n)), np.zeros(0), m)
    psi_d = psi_F(disc, empty, fx, sup_grid=sup_grid, seed=seed)
    mass_d = disc.mass()
    if candidates is None:
        candidates = []
        for h in (0.35, 0.7):
            candidates.append((f"graph_bump_h{h}", _graph_bump(t_plane, normal, h), empty))
        candidates.append(("cone_h0.5", _cone_over_boundary(t_plane, normal, 0.5), empty))
        ann, patch = _disc_with_patch(t_plane)
        candidates.append(("unrect_patch", ann, patch))
    report = EllipticityReport()
    for name, s_r, s_u in candidates:
        psi_s = psi_F(s_r, s_u, fx, sup_grid=sup_grid, seed=seed)
        mass_s = s_r.mass() + s_u.mass()
        psi_gap = psi_s - psi_d
        mass_gap = mass_s - mass_d
        entry = {"candidate": name, "psi_gap": psi_gap, "mass_gap": mass_gap}
        if psi_gap < -1e-9:
            report.counterexample = name
        if mass_gap > 1e-9:
            entry["margin"] = psi_gap / mass_gap
            report.min_margin = min(report.min_margin, entry["margin"])
        report.margins.append(entry)
    return report
