"""Shared domain types, communication kernel, RNG streams and diagnostics.

Everything in this module is a pure function of its inputs: ensembles are
values, operations return fresh arrays and never mutate their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "ParticleEnsemble",
    "CommunicationKernel",
    "TargetState",
    "RngStream",
    "DensityGrid",
    "NumericalBlowupError",
    "kernel_eval",
    "velocity_diameter",
    "position_diameter",
    "mean_velocity",
    "wasserstein1",
    "bin_density",
]

# Coordinates beyond this magnitude are treated as a numerical blowup.
BLOWUP_LIMIT = 1e12

# Exact assignment is refused above this ensemble size.
WASSERSTEIN_MAX_N = 256


def format_real(value) -> str:
    """Shortest round-trip decimal form of a real (numpy scalars included)."""
    return repr(float(value))


class NumericalBlowupError(RuntimeError):
    """A solver step produced a non-finite or absurdly large coordinate."""

    def __init__(self, step: int, agent: int, message: str = ""):
        self.step = step
        self.agent = agent
        super().__init__(
            message or f"numerical blowup at step {step}, agent {agent}"
        )


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Positions and velocities of n agents (or kinetic samples) in R^d.

    `x` and `v` are (n, d) float arrays; `t` is the current time. The same
    container serves the N-agent solver and the Monte Carlo solver, which
    treats the rows as samples of the phase-space density.
    """

    x: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.ndim != 2 or v.ndim != 2:
            raise ValueError("x and v must be (n, d) arrays")
        if x.shape != v.shape:
            raise ValueError(f"shape mismatch: x {x.shape} vs v {v.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("need at least one agent and one dimension")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def with_state(self, x=None, v=None, t=None) -> "ParticleEnsemble":
        return ParticleEnsemble(
            x=self.x if x is None else x,
            v=self.v if v is None else v,
            t=self.t if t is None else float(t),
        )

    def check_finite(self, step: int = -1) -> None:
        """Raise NumericalBlowupError naming the first offending agent."""
        for arr in (self.x, self.v):
            bad = ~np.isfinite(arr) | (np.abs(arr) > BLOWUP_LIMIT)
            if bad.any():
                agent = int(np.nonzero(bad.any(axis=1))[0][0])
                raise NumericalBlowupError(step, agent)


@dataclass(frozen=True)
class CommunicationKernel:
    """Alignment weight H(r) = (1 + r^2)^{-gamma}, mapping [0, inf) to (0, 1]."""

    gamma: float = 10.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")

    def __call__(self, r):
        return kernel_eval(self, r)

    def of_squared(self, r2):
        """H from the squared distance (spares a sqrt in pair loops)."""
        return (1.0 + np.asarray(r2, dtype=float)) ** (-self.gamma)


@dataclass(frozen=True)
class TargetState:
    """Desired common velocity the controls steer toward."""

    v_bar: np.ndarray

    def __post_init__(self):
        vb = np.asarray(self.v_bar, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vb)):
            raise ValueError("target velocity must be finite")
        object.__setattr__(self, "v_bar", vb)


def _splitmix64(z: int) -> int:
    """One round of splitmix64; used to fold stream paths into a 64-bit word."""
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(eq=False)
class RngStream:
    """Counter-based random stream (Philox) keyed by a seed and a path.

    Substreams derived with `derive(*indices)` are statistically independent
    and fully determined by (seed, path), so per-step or per-particle streams
    can be split off without consuming draws from the parent. Identical seed
    and call sequence gives bitwise-identical output.
    """

    seed: int
    path: tuple = ()
    _gen: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            fold = 0
            for part in self.path:
                fold = _splitmix64(fold ^ _splitmix64(int(part) & 0xFFFFFFFFFFFFFFFF))
            key = np.array([self.seed, fold], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def derive(self, *indices) -> "RngStream":
        """Independent substream addressed by integer indices (e.g. step, particle)."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    # Thin delegation; keeps call sites free of `.generator`.
    def random(self, *a, **k):
        return self.generator.random(*a, **k)

    def normal(self, *a, **k):
        return self.generator.normal(*a, **k)

    def uniform(self, *a, **k):
        return self.generator.uniform(*a, **k)

    def permutation(self, *a, **k):
        return self.generator.permutation(*a, **k)

    def choice(self, *a, **k):
        return self.generator.choice(*a, **k)

    def integers(self, *a, **k):
        return self.generator.integers(*a, **k)


@dataclass
class DensityGrid:
    """Binned spatial density and momentum flux on an axis-aligned 2D box.

    rho[ix, iy] is the sample mass per cell (total empirical mass is 1, so
    the binned sum is at most 1); flux[ix, iy] is the mean-velocity-weighted
    mass, i.e. the cell's contribution to rho*u. Samples falling outside the
    bounds are dropped and counted.
    """

    bounds: tuple  # (xmin, xmax, ymin, ymax)
    nx: int
    ny: int
    rho: np.ndarray
    flux: np.ndarray
    dropped: int = 0

    def cell_centers(self):
        xmin, xmax, ymin, ymax = self.bounds
        cx = xmin + (np.arange(self.nx) + 0.5) * (xmax - xmin) / self.nx
        cy = ymin + (np.arange(self.ny) + 0.5) * (ymax - ymin) / self.ny
        return cx, cy

    def write_csv(self, path) -> None:
        """Serialize row-major in ix then iy: ix,iy,x_center,y_center,rho,flux_x,flux_y."""
        cx, cy = self.cell_centers()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("ix,iy,x_center,y_center,rho,flux_x,flux_y\n")
            for ix in range(self.nx):
                for iy in range(self.ny):
                    f.write(
                        f"{ix},{iy},{format_real(cx[ix])},{format_real(cy[iy])},"
                        f"{format_real(self.rho[ix, iy])},"
                        f"{format_real(self.flux[ix, iy, 0])},"
                        f"{format_real(self.flux[ix, iy, 1])}\n"
                    )


def kernel_eval(kernel: CommunicationKernel, r) -> float:
    """Evaluate H(r) = (1 + r^2)^{-gamma} for r >= 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("kernel argument r must be nonnegative")
    out = (1.0 + r * r) ** (-kernel.gamma)
    return float(out) if out.ndim == 0 else out


# Above this size the all-pairs matrix is avoided (hull diameter in 2D,
# blockwise scan otherwise); results are identical, only faster.
_DIRECT_PAIRS_MAX = 2048


def _diameter_rotating_calipers(points: np.ndarray) -> float:
    """Exact max pairwise distance of 2D points via antipodal hull pairs."""
    from scipy.spatial import ConvexHull

    verts = points[ConvexHull(points).vertices]  # counterclockwise
    h = len(verts)
    if h == 2:
        return float(np.linalg.norm(verts[0] - verts[1]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    best = 0.0
    k = 1
    for i in range(h):
        j = (i + 1) % h
        # advance the antipodal point while the triangle area keeps growing
        while cross(verts[i], verts[j], verts[(k + 1) % h]) > cross(
            verts[i], verts[j], verts[k]
        ):
            k = (k + 1) % h
        best = max(
            best,
            float(np.linalg.norm(verts[k] - verts[i])),
            float(np.linalg.norm(verts[k] - verts[j])),
        )
    return best


def _diameter_blockwise(points: np.ndarray) -> float:
    best = 0.0
    for lo in range(0, points.shape[0], 1024):
        block = points[lo : lo + 1024]
        diff = block[:, None, :] - points[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def _max_pairwise_distance(points: np.ndarray) -> float:
    n = points.shape[0]
    if n == 1:
        return 0.0
    if n <= _DIRECT_PAIRS_MAX:
        diff = points[:, None, :] - points[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        return float(np.sqrt(d2.max()))
    if points.shape[1] == 2:
        try:
            return _diameter_rotating_calipers(points)
        except Exception:  # degenerate input (collinear, repeated points)
            return _diameter_blockwise(points)
    return _diameter_blockwise(points)


def velocity_diameter(e: ParticleEnsemble) -> float:
    """Largest pairwise velocity distance max_ij |v_i - v_j|."""
    return _max_pairwise_distance(e.v)


def position_diameter(e: ParticleEnsemble) -> float:
    """Largest pairwise position distance max_ij |x_i - x_j|."""
    return _max_pairwise_distance(e.x)


def mean_velocity(e: ParticleEnsemble) -> np.ndarray:
    """Arithmetic mean of the agent velocities."""
    return e.v.mean(axis=0)


def wasserstein1(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    """Wasserstein-1 distance between two equal-size empirical measures.

    Points are compared in the joint (x, v) space with the Euclidean norm,
    and the distance is the minimum over pairings of the mean matched
    distance. The assignment is solved exactly (Jonker-Volgenant via scipy)
    up to n = 256; larger ensembles are refused rather than silently
    approximated, since the diagnostic is meant for desk-scale use.
    """
    if a.n != b.n:
        raise ValueError(f"ensemble sizes differ: {a.n} vs {b.n}")
    if a.dim != b.dim:
        raise ValueError(f"ensemble dimensions differ: {a.dim} vs {b.dim}")
    if a.n > WASSERSTEIN_MAX_N:
        raise ValueError(
            f"exact assignment limited to n <= {WASSERSTEIN_MAX_N}, got {a.n}"
        )
    pa = np.hstack([a.x, a.v])
    pb = np.hstack([b.x, b.v])
    diff = pa[:, None, :] - pb[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def bin_density(
    e: ParticleEnsemble,
    bounds: tuple,
    nx: int,
    ny: int,
) -> DensityGrid:
    """Bin samples onto a 2D grid; each sample deposits mass 1/n and momentum v/n.

    Cells are left-closed right-open except that the top/right boundary is
    folded into the last cell. Samples outside the bounds are dropped and
    counted in the result.
    """
    if e.dim != 2:
        raise ValueError("density binning requires dim = 2")
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("bounds must span a nondegenerate box")
    if nx < 1 or ny < 1:
        raise ValueError("bin counts must be positive")

    n = e.n
    px, py = e.x[:, 0], e.x[:, 1]
    inside = (px >= xmin) & (px <= xmax) & (py >= ymin) & (py <= ymax)
    ix = np.floor((px[inside] - xmin) / (xmax - xmin) * nx).astype(int)
    iy = np.floor((py[inside] - ymin) / (ymax - ymin) * ny).astype(int)
    np.clip(ix, 0, nx - 1, out=ix)  # folds the exact right/top boundary in
    np.clip(iy, 0, ny - 1, out=iy)

    rho = np.zeros((nx, ny))
    flux = np.zeros((nx, ny, 2))
    np.add.at(rho, (ix, iy), 1.0 / n)
    np.add.at(flux, (ix, iy), e.v[inside] / n)
    return DensityGrid(
        bounds=(xmin, xmax, ymin, ymax),
        nx=nx,
        ny=ny,
        rho=rho,
        flux=flux,
        dropped=int(n - inside.sum()),
    )
