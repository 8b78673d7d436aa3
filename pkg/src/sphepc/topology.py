"""Euler characteristics of excursion sets, measured two independent ways.

Morse route: find every critical point of the field by damped Newton
iteration on the gradient, classify each by the negated-Hessian index
(0 maximum, 1 saddle, 2 minimum), and count

    chi(f^{-1}(I)) = mu_0 - mu_1 + mu_2

over the critical points whose value lies in I. The search is seeded from a
latitude-longitude lattice of spacing pi/(k*ell) (k = 4, auto-refined to 8),
with the polar caps swept separately in a rotated chart where the
coordinate singularity sits on the equator. A critical-point set is
accepted only if the alternating sum over the whole sphere equals 2, the
sphere's Euler characteristic.

Mesh route: triangulate the sphere, evaluate the field at the vertices, and
take V - E + F of the closed subcomplex whose simplices have all vertices
inside I. The two estimators validate each other; neither is assumed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.spatial import cKDTree

from .analytic import ThresholdInterval
from .harmonics import (
    GridSamples,
    RandomEigenfunction,
    _fd_jet_batch,
    _jet_batch,
    evaluate_values,
    pole_cap_halfangle,
)
from .sphere import (
    SpherePoint,
    angles_from_vectors,
    rotation_about_y,
    unit_vectors,
)

TWO_PI = 2.0 * math.pi


class CompletenessError(RuntimeError):
    """The global Morse check failed even after lattice refinement."""


class DegenerateSampleError(RuntimeError):
    """A critical point's Hessian eigenvalue fell below the degeneracy floor."""


class BoundaryDegeneracyWarning(UserWarning):
    """A critical value sits numerically on an interval endpoint."""


class ResolutionError(RuntimeError):
    """A triangulation edge exceeds the requested resolution."""


@dataclass(frozen=True)
class CriticalPoint:
    """A nondegenerate zero of the gradient with its Morse classification.

    index counts negative eigenvalues of -H (0 maximum, 1 saddle, 2 minimum);
    eigenvalues are those of the covariant Hessian H itself; residual is the
    gradient norm at convergence.
    """

    location: SpherePoint
    value: float
    index: int
    eigenvalues: tuple[float, float]
    residual: float


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of the critical-point search; defaults match the contract."""

    lattice_factor: int = 4
    refine_lattice_factor: int = 8
    max_iterations: int = 30
    grad_tol_scale: float = 1e-9        # |grad| tolerance = scale * ell^2
    dedup_radius_scale: float = 0.1     # merge radius = scale / ell
    degeneracy_floor_scale: float = 1e-8  # eigenvalue floor = scale * ell^2
    early_merge_iteration: int = 4
    early_merge_radius_scale: float = 0.002
    fd_step_scale: float = 1e-4         # rotated-chart FD step = scale / ell


# ---------------------------------------------------------------------------
# Newton search
# ---------------------------------------------------------------------------

def _cluster_keep(vectors: np.ndarray, chord_radius: float, scores: np.ndarray):
    """Indices of cluster representatives (lowest score) under a radius merge."""
    n = vectors.shape[0]
    if n == 0:
        return np.array([], dtype=int)
    pairs = cKDTree(vectors).query_pairs(chord_radius, output_type="ndarray")
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri
    roots = np.fromiter((find(i) for i in range(n)), dtype=int, count=n)
    keep = {}
    for i in range(n):
        r = roots[i]
        if r not in keep or scores[i] < scores[keep[r]]:
            keep[r] = i
    return np.array(sorted(keep.values()), dtype=int)


def _newton(jets_fn, theta, phi, alive_fn, tol, cfg, max_step, ell, early_merge):
    """Damped Newton iteration on grad f = 0, vectorized over seeds.

    jets_fn(theta, phi) -> (f, g1, g2, h11, h12, h22); alive_fn decides which
    iterates remain in the chart's domain. Returns arrays for the converged
    points: theta, phi, value, gnorm, h11, h12, h22.
    """
    th = np.asarray(theta, dtype=float).copy()
    ph = np.asarray(phi, dtype=float).copy()
    f, g1, g2, h11, h12, h22 = jets_fn(th, ph)
    gnorm = np.hypot(g1, g2)
    scale = np.ones_like(th)
    done: list[np.ndarray] = []

    def harvest(mask):
        if np.any(mask):
            done.append(
                np.column_stack(
                    [th[mask], ph[mask], f[mask], gnorm[mask],
                     h11[mask], h12[mask], h22[mask]]
                )
            )

    keep = alive_fn(th, ph)
    th, ph, f, g1, g2 = th[keep], ph[keep], f[keep], g1[keep], g2[keep]
    h11, h12, h22, gnorm, scale = (
        h11[keep], h12[keep], h22[keep], gnorm[keep], scale[keep]
    )

    for iteration in range(cfg.max_iterations):
        conv = gnorm <= tol
        harvest(conv)
        active = ~conv
        if not np.any(active):
            break
        th, ph, f, g1, g2 = th[active], ph[active], f[active], g1[active], g2[active]
        h11, h12, h22 = h11[active], h12[active], h22[active]
        gnorm, scale = gnorm[active], scale[active]

        if early_merge and iteration == cfg.early_merge_iteration and th.size > 1:
            keep = _cluster_keep(
                unit_vectors(th, ph), cfg.early_merge_radius_scale / ell, gnorm
            )
            th, ph, f, g1, g2 = th[keep], ph[keep], f[keep], g1[keep], g2[keep]
            h11, h12, h22 = h11[keep], h12[keep], h22[keep]
            gnorm, scale = gnorm[keep], scale[keep]

        det = h11 * h22 - h12 * h12
        safe = np.abs(det) > 1e-300
        inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
        d1 = -(h22 * g1 - h12 * g2) * inv_det
        d2 = -(h11 * g2 - h12 * g1) * inv_det
        norm = np.hypot(d1, d2)
        clip = np.minimum(1.0, max_step / np.maximum(norm, 1e-300))
        step = scale * clip
        th_try = th + step * d1
        ph_try = (ph + step * d2 / np.sin(th)) % TWO_PI

        alive = alive_fn(th_try, ph_try) & safe & (scale > 1.0 / 64.0)
        if not np.any(alive):
            break
        th, ph, f, g1, g2 = th[alive], ph[alive], f[alive], g1[alive], g2[alive]
        h11, h12, h22 = h11[alive], h12[alive], h22[alive]
        gnorm, scale = gnorm[alive], scale[alive]
        th_try, ph_try = th_try[alive], ph_try[alive]

        f_n, g1_n, g2_n, h11_n, h12_n, h22_n = jets_fn(th_try, ph_try)
        gnorm_n = np.hypot(g1_n, g2_n)
        better = gnorm_n <= gnorm
        th = np.where(better, th_try, th)
        ph = np.where(better, ph_try, ph)
        f = np.where(better, f_n, f)
        g1 = np.where(better, g1_n, g1)
        g2 = np.where(better, g2_n, g2)
        h11 = np.where(better, h11_n, h11)
        h12 = np.where(better, h12_n, h12)
        h22 = np.where(better, h22_n, h22)
        gnorm = np.where(better, gnorm_n, gnorm)
        scale = np.where(better, np.minimum(1.0, scale * 2.0), scale * 0.5)

    harvest(gnorm <= tol)
    if not done:
        return np.empty((0, 7))
    return np.concatenate(done, axis=0)


def _main_chart_search(field, k, cfg, early_merge):
    ell = field.degree
    eps = pole_cap_halfangle(ell)
    spacing = math.pi / (k * ell)
    n_th = max(2, math.ceil((math.pi - 2 * eps) / spacing))
    n_ph = max(4, math.ceil(TWO_PI / spacing))
    th = eps + (np.arange(n_th) + 0.5) * (math.pi - 2 * eps) / n_th
    ph = np.arange(n_ph) * TWO_PI / n_ph
    TH, PH = np.meshgrid(th, ph, indexing="ij")

    def alive(t, p):
        return (t > eps) & (t < math.pi - eps)

    tol = cfg.grad_tol_scale * ell * ell
    return _newton(
        lambda t, p: _jet_batch(field, t, p),
        TH.ravel(), PH.ravel(), alive, tol, cfg,
        max_step=spacing, ell=ell, early_merge=early_merge,
    )


_CAP_ROTATION = rotation_about_y(math.pi / 2.0)  # moves both poles to the equator


def _cap_search(field, k, cfg):
    """Sweep both polar caps in the rotated chart; returns rows as _newton."""
    ell = field.degree
    eps = pole_cap_halfangle(ell)
    spacing = math.pi / (k * ell)
    radius = eps + 2.0 * spacing
    step = cfg.fd_step_scale / ell
    tol = cfg.grad_tol_scale * ell * ell
    offsets = np.arange(-radius, radius + 0.5 * spacing, 0.5 * spacing)
    D1, D2 = np.meshgrid(offsets, offsets, indexing="ij")
    disc = (D1**2 + D2**2) <= radius * radius
    rows = []
    for cap_phi in (math.pi, 0.0):  # rotated-chart images of the north / south pole
        th0 = math.pi / 2.0 + D1[disc].ravel()
        ph0 = cap_phi + D2[disc].ravel()
        center = unit_vectors(math.pi / 2.0, cap_phi)

        def alive(t, p, center=center):
            cosd = unit_vectors(t, p) @ center
            return cosd >= math.cos(2.0 * radius + 2.0 * spacing)

        got = _newton(
            lambda t, p: _fd_jet_batch(field, _CAP_ROTATION, t, p, step),
            th0, ph0, alive, tol, cfg,
            max_step=spacing, ell=ell, early_merge=False,
        )
        if got.shape[0]:
            # keep only points the cap owns; the main chart covers the rest
            v = unit_vectors(got[:, 0], got[:, 1])
            pole_dist = np.arccos(np.clip(np.abs(v @ center), -1.0, 1.0))
            got = got[pole_dist <= eps + spacing]
            if got.shape[0]:
                # map back to the original chart coordinates
                t, p = angles_from_vectors(
                    unit_vectors(got[:, 0], got[:, 1]) @ _CAP_ROTATION.T
                )
                got = got.copy()
                got[:, 0] = t
                got[:, 1] = p
                rows.append(got)
    if not rows:
        return np.empty((0, 7))
    return np.concatenate(rows, axis=0)


def _classify(rows: np.ndarray):
    """Morse index and Hessian eigenvalues from the (h11, h12, h22) columns."""
    h11, h12, h22 = rows[:, 4], rows[:, 5], rows[:, 6]
    mean = 0.5 * (h11 + h22)
    disc = np.sqrt(0.25 * (h11 - h22) ** 2 + h12 * h12)
    lam1 = mean - disc
    lam2 = mean + disc
    index = (lam1 > 0).astype(int) + (lam2 > 0).astype(int)
    return index, lam1, lam2


def _search_once(field, k, cfg, early_merge):
    rows_main = _main_chart_search(field, k, cfg, early_merge)
    rows_cap = _cap_search(field, k, cfg)
    rows = np.concatenate([rows_main, rows_cap], axis=0)
    if rows.shape[0] == 0:
        return rows, np.array([], dtype=int), np.empty(0), np.empty(0)
    index, lam1, lam2 = _classify(rows)
    vec = unit_vectors(rows[:, 0], rows[:, 1])
    chord = 2.0 * math.sin(0.5 * cfg.dedup_radius_scale / field.degree)
    keep_all = []
    for j in (0, 1, 2):  # merging within an index class never erases a distinct point
        sel = np.flatnonzero(index == j)
        if sel.size:
            keep = _cluster_keep(vec[sel], chord, rows[sel, 3])
            keep_all.append(sel[keep])
    order = np.sort(np.concatenate(keep_all))
    return rows[order], index[order], lam1[order], lam2[order]


def _to_points(rows, index, lam1, lam2):
    return [
        CriticalPoint(
            location=SpherePoint(rows[i, 0], rows[i, 1]),
            value=float(rows[i, 2]),
            index=int(index[i]),
            eigenvalues=(float(lam1[i]), float(lam2[i])),
            residual=float(rows[i, 3]),
        )
        for i in range(rows.shape[0])
    ]


def morse_alternating_sum(points) -> int:
    """mu_0 - mu_1 + mu_2 over a critical-point set; 2 when complete."""
    return int(sum((-1) ** p.index for p in points))


def find_critical_points(
    field: RandomEigenfunction, config: SearchConfig | None = None
) -> list[CriticalPoint]:
    """All critical points of the field, classified and deduplicated.

    Newton iteration runs from the seed lattice plus rotated-chart sweeps of
    both polar caps; duplicates within 0.1/ell are merged. Raises
    :class:`DegenerateSampleError` if any Hessian eigenvalue falls below the
    non-Morse floor and :class:`CompletenessError` if the alternating-sum
    check still fails after refining the lattice to k = 8.
    """
    cfg = config or SearchConfig()
    ell = field.degree
    floor = cfg.degeneracy_floor_scale * ell * ell
    for k, early in ((cfg.lattice_factor, True), (cfg.refine_lattice_factor, False)):
        rows, index, lam1, lam2 = _search_once(field, k, cfg, early)
        if rows.shape[0] and np.minimum(np.abs(lam1), np.abs(lam2)).min() < floor:
            raise DegenerateSampleError(
                f"Hessian eigenvalue below the non-Morse floor {floor:.3e} "
                f"(seed {field.seed}, degree {ell})"
            )
        if rows.shape[0] and int(np.sum((-1.0) ** index)) == 2:
            return _to_points(rows, index, lam1, lam2)
    raise CompletenessError(
        f"alternating sum != 2 after lattice refinement "
        f"(seed {field.seed}, degree {ell})"
    )


# ---------------------------------------------------------------------------
# Euler characteristics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EPCResult:
    """Euler characteristic of one excursion set, with its provenance."""

    chi: int
    method: str
    interval: ThresholdInterval
    counts: tuple[int, int, int] | None = None
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.method == "morse":
            mu0, mu1, mu2 = self.counts
            if self.chi != mu0 - mu1 + mu2:
                raise ValueError("chi inconsistent with Morse counts")


def epc_morse(
    points: list[CriticalPoint],
    interval: ThresholdInterval,
    value_tol: float = 1e-9,
) -> EPCResult:
    """Alternating Morse count of critical points with values in the interval.

    The point set must be complete for its field (global check passed).
    Warns with :class:`BoundaryDegeneracyWarning` when a critical value sits
    within value_tol of a finite endpoint, where the threshold is
    non-generic for this sample.
    """
    values = np.array([p.value for p in points])
    indices = np.array([p.index for p in points], dtype=int)
    boundary = False
    for endpoint in (interval.lower, interval.upper):
        if math.isfinite(endpoint) and values.size:
            if np.min(np.abs(values - endpoint)) <= value_tol:
                boundary = True
                warnings.warn(
                    f"critical value within {value_tol:g} of endpoint {endpoint:g}",
                    BoundaryDegeneracyWarning,
                    stacklevel=2,
                )
    inside = interval.contains(values)
    mu = tuple(int(np.sum(inside & (indices == j))) for j in (0, 1, 2))
    return EPCResult(
        chi=mu[0] - mu[1] + mu[2],
        method="morse",
        interval=interval,
        counts=mu,
        diagnostics={"total_points": len(points), "boundary_degenerate": boundary},
    )


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triangulation:
    """Closed triangulated sphere: vertex angles plus edge and face index arrays."""

    thetas: np.ndarray
    phis: np.ndarray
    edges: np.ndarray
    faces: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.thetas.shape[0]

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.edges.shape[0] + self.faces.shape[0]

    def node_angles(self):
        return self.thetas, self.phis

    def vertex_points(self) -> list[SpherePoint]:
        return [SpherePoint(t, p) for t, p in zip(self.thetas, self.phis)]


def build_triangulation(ell: int, oversampling: int) -> Triangulation:
    """Latitude-band triangulation with ~oversampling*ell bands.

    Rings at theta_i = i*pi/bands carry 2*oversampling*ell longitudes each;
    band quads are split into triangles and the poles closed with fans.
    Validates the Euler formula, the edge-face incidence of a closed
    surface, and the resolution bound (quad sides within pi/(os*ell),
    diagonals within sqrt(2) of it).
    """
    if oversampling < 4:
        raise ValueError("oversampling must be >= 4")
    bands = oversampling * ell
    n_lon = 2 * oversampling * ell
    n_rings = bands - 1
    ring_theta = np.arange(1, bands) * math.pi / bands
    lon = np.arange(n_lon) * TWO_PI / n_lon

    thetas = np.concatenate([[0.0], np.repeat(ring_theta, n_lon), [math.pi]])
    phis = np.concatenate([[0.0], np.tile(lon, n_rings), [0.0]])
    north = 0
    south = thetas.shape[0] - 1

    def ring(i):  # 0-based ring index
        return 1 + i * n_lon + np.arange(n_lon)

    faces = []
    r0 = ring(0)
    faces.append(np.column_stack([np.full(n_lon, north), r0, np.roll(r0, -1)]))
    for i in range(n_rings - 1):
        a = ring(i)
        b = np.roll(a, -1)
        c = ring(i + 1)
        d = np.roll(c, -1)
        faces.append(np.column_stack([a, b, c]))
        faces.append(np.column_stack([b, d, c]))
    rl = ring(n_rings - 1)
    faces.append(np.column_stack([np.full(n_lon, south), np.roll(rl, -1), rl]))
    faces = np.concatenate(faces, axis=0)

    raw = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    raw.sort(axis=1)
    edges, counts = np.unique(raw, axis=0, return_counts=True)
    if not np.all(counts == 2):
        raise AssertionError("construction must give a closed surface")
    tri = Triangulation(thetas=thetas, phis=phis, edges=edges, faces=faces)
    if tri.euler_characteristic() != 2:
        raise AssertionError("Euler formula violated by construction")

    bound = math.pi / (oversampling * ell)
    v = unit_vectors(thetas, phis)
    chord = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    length = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
    outside_caps = (edges[:, 0] != north) & (edges[:, 1] != south)
    axis_aligned = np.isclose(
        thetas[edges[:, 0]], thetas[edges[:, 1]]
    ) | np.isclose(phis[edges[:, 0]], phis[edges[:, 1]])
    limit = np.where(axis_aligned, bound, math.sqrt(2.0) * bound) * (1.0 + 1e-9)
    if np.any(length[outside_caps] > limit[outside_caps]):
        raise ResolutionError("edge length exceeds the resolution bound")
    return tri


def epc_mesh(samples: GridSamples, interval: ThresholdInterval) -> EPCResult:
    """V - E + F of the closed subcomplex with all vertices inside the interval."""
    tri = samples.geometry
    if not isinstance(tri, Triangulation):
        raise TypeError("epc_mesh needs samples evaluated on a Triangulation")
    inside = interval.contains(samples.values)
    v_in = int(np.count_nonzero(inside))
    e_in = int(np.count_nonzero(inside[tri.edges].all(axis=1)))
    f_in = int(np.count_nonzero(inside[tri.faces].all(axis=1)))
    return EPCResult(
        chi=v_in - e_in + f_in,
        method="mesh",
        interval=interval,
        diagnostics={"vertices_inside": v_in, "n_vertices": tri.n_vertices},
    )


def mesh_epc_for_field(
    field: RandomEigenfunction, tri: Triangulation, interval: ThresholdInterval
) -> EPCResult:
    """Convenience: evaluate the field on the triangulation and count."""
    values = evaluate_values(field, tri.thetas, tri.phis)
    samples = GridSamples(geometry=tri, thetas=tri.thetas, phis=tri.phis, values=values)
    return epc_mesh(samples, interval)


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------

def write_critical_points_csv(points: list[CriticalPoint], seed: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "theta", "phi", "value", "index", "residual"])
        for p in points:
            writer.writerow(
                [
                    seed,
                    format(p.location.theta, ".17g"),
                    format(p.location.phi, ".17g"),
                    format(p.value, ".17g"),
                    p.index,
                    format(p.residual, ".17g"),
                ]
            )


def write_epc_csv(rows: list[tuple[int, EPCResult]], path) -> None:
    """Rows of (seed, result) as CSV; mesh rows leave the mu columns empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["seed", "method", "interval_lo", "interval_hi", "chi", "mu0", "mu1", "mu2"]
        )
        for seed, res in rows:
            mu = res.counts if res.counts is not None else ("", "", "")
            writer.writerow(
                [
                    seed,
                    res.method,
                    format(res.interval.lower, ".17g"),
                    format(res.interval.upper, ".17g"),
                    res.chi,
                    *mu,
                ]
            )
