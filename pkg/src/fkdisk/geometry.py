"""Wall partitions and polar grids for the unit disk.

Two grid families live here:

* ``build_grid`` -- the uniform full-disk grid, cell-centred in both
  directions, angular count rounded up to a multiple of the segment count.
* ``build_sector_grid`` -- the same disk reduced by symmetry to one half
  segment (a wedge between the centre of a conducting arc and the centre of
  the neighbouring insulated arc), optionally graded towards the wall and
  towards the conducting/insulated transition.

Both are plain tensor-product grids described by their face coordinates, so
the discretisation code treats them identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi

# classification slack for angles that sit on an arc end up to round-off
_ANGLE_EPS = 1e-12


class BoundaryKind(str, Enum):
    FULL_DIRICHLET = "FullDirichlet"
    SINGLE_ARC = "SingleArc"
    PERIODIC = "Periodic"


class WallType(str, Enum):
    CONDUCTING = "Conducting"
    INSULATED = "Insulated"


def parse_fraction(value) -> Fraction:
    """Accept ``Fraction``, int, ``"p/q"`` strings or decimals.

    Floats go through ``limit_denominator`` so that ``1/512`` typed as a
    decimal still round-trips to the exact rational.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1 << 20)
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class BoundarySpec:
    """Which parts of the wall ``rho = 1`` are held at ambient temperature.

    ``alpha`` is the conducting fraction (of the whole wall for ``SingleArc``,
    of every segment for ``Periodic``); ``segments`` is only meaningful for
    ``Periodic``.
    """

    kind: BoundaryKind
    alpha: Fraction = Fraction(1)
    segments: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", BoundaryKind(self.kind))
        object.__setattr__(self, "alpha", parse_fraction(self.alpha))
        if self.kind is BoundaryKind.FULL_DIRICHLET:
            object.__setattr__(self, "alpha", Fraction(1))
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if int(self.segments) != self.segments or self.segments < 1:
            raise ValueError(f"segments must be a positive integer, got {self.segments}")
        object.__setattr__(self, "segments", int(self.segments))
        if self.kind is not BoundaryKind.PERIODIC:
            object.__setattr__(self, "segments", 1)

    @classmethod
    def full(cls) -> "BoundarySpec":
        return cls(BoundaryKind.FULL_DIRICHLET)

    @classmethod
    def single_arc(cls, alpha) -> "BoundarySpec":
        return cls(BoundaryKind.SINGLE_ARC, alpha)

    @classmethod
    def periodic(cls, segments: int, alpha) -> "BoundarySpec":
        return cls(BoundaryKind.PERIODIC, alpha, segments)

    @property
    def fold(self) -> int:
        """Rotational symmetry order of the wall pattern."""
        return self.segments if self.kind is BoundaryKind.PERIODIC else 1

    @property
    def is_fully_conducting(self) -> bool:
        return self.alpha == 1

    @property
    def period(self) -> float:
        return TWO_PI / self.fold

    def with_alpha(self, alpha) -> "BoundarySpec":
        return BoundarySpec(self.kind, alpha, self.segments)

    @property
    def case_id(self) -> str:
        if self.kind is BoundaryKind.FULL_DIRICHLET:
            return "full"
        a = f"{self.alpha.numerator}-{self.alpha.denominator}"
        if self.kind is BoundaryKind.SINGLE_ARC:
            return f"arc_a{a}"
        return f"per_N{self.segments}_a{a}"

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "alpha": f"{self.alpha.numerator}/{self.alpha.denominator}",
            "N": self.segments,
        }

    @classmethod
    def from_record(cls, record: dict) -> "BoundarySpec":
        kind = BoundaryKind(record["kind"])
        return cls(kind, record.get("alpha", 1), record.get("N", record.get("segments", 1)))


def conducting_arcs(spec: BoundarySpec) -> list[tuple[Fraction, Fraction]]:
    """Closed conducting arcs as exact fractions of a full turn."""
    if spec.is_fully_conducting:
        return [(Fraction(0), Fraction(1))]
    m = spec.fold
    return [(Fraction(k, m), Fraction(k, m) + spec.alpha / m) for k in range(m)]


def classify_boundary(spec: BoundarySpec, theta: float) -> WallType:
    """Wall type at angle ``theta`` in [0, 2pi).

    Conducting arcs are closed and insulated arcs half-open, so the point
    where an insulated arc ends (the start of the next segment) and the
    point where a conducting arc ends both count as conducting.
    """
    if spec.is_fully_conducting:
        return WallType.CONDUCTING
    t = (theta % TWO_PI) / spec.period
    frac = t - math.floor(t)
    alpha = float(spec.alpha)
    if frac <= alpha + _ANGLE_EPS or frac >= 1.0 - _ANGLE_EPS:
        return WallType.CONDUCTING
    return WallType.INSULATED


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Cell-centred tensor-product grid on the disk or on a wedge of it.

    Unknowns sit at cell centres ``(rho_coords[i], theta_coords[j])`` and are
    stored with the radial index first.  ``periodic`` grids cover the full
    turn and wrap in theta; wedge grids carry zero-flux (mirror) conditions
    on both straight sides.  ``wall_dirichlet[j]`` is True where the wall
    face of angular cell ``j`` is conducting.
    """

    n: int
    spec: BoundarySpec
    rho_faces: np.ndarray
    theta_faces: np.ndarray
    wall_dirichlet: np.ndarray
    periodic: bool
    alpha_effective: Fraction
    # placement of local theta = 0 inside the disk, and mirror copies for wedges
    theta_origin: float = 0.0
    mode: str = "full"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rho_faces", "theta_faces", "wall_dirichlet"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @cached_property
    def rho_coords(self) -> np.ndarray:
        return 0.5 * (self.rho_faces[1:] + self.rho_faces[:-1])

    @cached_property
    def theta_coords(self) -> np.ndarray:
        return 0.5 * (self.theta_faces[1:] + self.theta_faces[:-1])

    @property
    def n_r(self) -> int:
        return len(self.rho_faces) - 1

    @property
    def n_theta(self) -> int:
        return len(self.theta_faces) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_r, self.n_theta

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        """Polar cell areas ``rho dr dtheta`` (shape ``(n_r, n_theta)``)."""
        dr = np.diff(self.rho_faces)
        dt = np.diff(self.theta_faces)
        return np.outer(self.rho_coords * dr, dt)

    def full_disk_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Map wedge columns onto the whole disk.

        Returns ``(theta, column)``: absolute angles of every image of every
        cell centre, sorted, and the wedge column each image copies.
        """
        if self.periodic:
            return self.theta_coords.copy(), np.arange(self.n_theta)
        fold = self.spec.fold
        period = TWO_PI / fold
        cols = np.arange(self.n_theta)
        angles, sources = [], []
        for k in range(fold):
            base = self.theta_origin + k * period
            angles.append(base + self.theta_coords)
            sources.append(cols)
            angles.append(base - self.theta_coords)
            sources.append(cols)
        theta = np.concatenate(angles) % TWO_PI
        src = np.concatenate(sources)
        order = np.argsort(theta, kind="stable")
        return theta[order], src[order]

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "alpha_requested": f"{self.spec.alpha.numerator}/{self.spec.alpha.denominator}",
            "alpha_effective": f"{self.alpha_effective.numerator}/{self.alpha_effective.denominator}",
            **self.meta,
        }


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def _check_n(n: int) -> None:
    if int(n) != n or n < 8:
        raise ValueError(f"grid needs n >= 8 points per dimension, got {n}")


def build_grid(n: int, spec: BoundarySpec) -> PolarGrid:
    """Uniform full-disk grid: ``n`` radial cells, angular count the smallest
    multiple of the segment count that is at least ``n``.

    The conducting part of each segment is snapped to a whole number of
    angular cells (at least one); the snapped fraction is kept as
    ``alpha_effective``.
    """
    _check_n(n)
    fold = spec.fold
    n_theta = -(-n // fold) * fold
    per_segment = n_theta // fold
    if spec.is_fully_conducting:
        cells = per_segment
    else:
        cells = min(max(_round_half_up(spec.alpha * per_segment), 1), per_segment)
    alpha_eff = Fraction(cells, per_segment)
    eff = spec.with_alpha(alpha_eff)
    theta_faces = np.arange(n_theta + 1) * (TWO_PI / n_theta)
    centres = 0.5 * (theta_faces[1:] + theta_faces[:-1])
    wall = np.array([classify_boundary(eff, t) is WallType.CONDUCTING for t in centres])
    return PolarGrid(
        n=n,
        spec=spec,
        rho_faces=np.arange(n + 1) / n,
        theta_faces=theta_faces,
        wall_dirichlet=wall,
        periodic=True,
        alpha_effective=alpha_eff,
    )


# fraction of wedge cells spent on the conducting half-arc when it is small
_CONDUCTING_SHARE = Fraction(1, 4)
# inner edge of the radially graded wall layer
_LAYER_START = 0.5


def _stretch_rate(ratio: float) -> float:
    """Solve ``b / (exp(b) - 1) = ratio`` for ``b >= 0`` (0 < ratio <= 1)."""
    if ratio >= 1.0:
        return 0.0
    return brentq(lambda b: b / math.expm1(b) - ratio, 1e-12, 200.0, xtol=1e-14)


def _angular_faces(n: int, width: float, alpha: Fraction, graded: bool):
    """Faces on [0, width] with the transition at ``alpha * width`` on a face.

    Returns ``(faces, conducting_cells, alpha_effective, wall_spacing)``
    where ``wall_spacing`` is the cell width at the transition divided by the
    mean width ``width / n``.
    """
    if alpha == 1:
        return np.linspace(0.0, width, n + 1), n, alpha, 1.0
    if not graded or alpha >= _CONDUCTING_SHARE:
        cells = min(max(_round_half_up(alpha * n), 1), n - 1)
        a_eff = Fraction(cells, n)
        return np.linspace(0.0, width, n + 1), cells, a_eff, 1.0
    cells = max(_round_half_up(_CONDUCTING_SHARE * n), 1)
    share = cells / n
    a = float(alpha) * width
    # uniform on the conducting part, exponential growth across the insulated
    # part with the cell width continuous at the transition
    rate = _stretch_rate(float(alpha) / (1 - float(alpha)) * (1 - share) / share)
    inner = np.linspace(0.0, a, cells + 1)
    eta = np.arange(1, n - cells + 1) / (n - cells)
    if rate == 0.0:
        outer = a + (width - a) * eta
    else:
        outer = a + (width - a) * np.expm1(rate * eta) / math.expm1(rate)
    faces = np.concatenate([inner, outer])
    faces[-1] = width
    return faces, cells, alpha, (a / cells) / (width / n)


def _radial_faces(n: int, wall_spacing: float) -> tuple[np.ndarray, dict]:
    """Faces on [0, 1]: uniform core, exponentially refined layer at the wall.

    ``wall_spacing`` is the requested width of the outermost cell in units of
    ``1 / n``.  The mapping is C1 at the start of the layer and independent of
    ``n`` apart from sampling, so refinements nest.
    """
    if wall_spacing >= 0.5:
        return np.arange(n + 1) / n, {"radial": "uniform"}
    rho_b = _LAYER_START
    dw = wall_spacing

    def mismatch(xi_b):
        rate = math.log(rho_b / (xi_b * dw))
        return (1 - rho_b) * rate * xi_b - (1 - xi_b) * (rho_b - xi_b * dw)

    xi_b = brentq(mismatch, 1e-6, rho_b - 1e-9, xtol=1e-15)
    rate = math.log(rho_b / (xi_b * dw))
    xi = np.arange(n + 1) / n
    rho = np.where(
        xi <= xi_b,
        xi * rho_b / xi_b,
        1 - (1 - rho_b) * np.expm1(rate * (1 - xi) / (1 - xi_b)) / math.expm1(rate),
    )
    rho[0], rho[-1] = 0.0, 1.0
    return rho, {"radial": "graded", "layer_start": rho_b, "core_share": xi_b, "layer_rate": rate}


def build_sector_grid(n: int, spec: BoundarySpec, graded: bool = True) -> PolarGrid:
    """Half-segment wedge grid with ``n`` cells in each direction.

    The wedge runs from the centre of the first conducting arc
    (``theta_origin``) through the rest of that arc and across the insulated
    part up to its centre.  Both sides are mirror lines of the periodic wall
    pattern, so the symmetric solution branch of the full disk restricts
    exactly to this wedge.  With ``graded`` the mesh is refined towards the
    wall and towards the transition so that tiny conducting arcs are resolved
    by a fixed share of the cells.
    """
    _check_n(n)
    fold = spec.fold
    width = math.pi / fold
    faces, cells, a_eff, spacing = _angular_faces(n, width, spec.alpha, graded)
    wall = np.zeros(n, dtype=bool)
    wall[:cells] = True
    if graded:
        # the wall cell next to the transition has arc length spacing * width / n
        rho_faces, meta = _radial_faces(n, spacing * width)
    else:
        rho_faces, meta = np.arange(n + 1) / n, {"radial": "uniform"}
    meta["angular"] = "graded" if spacing < 1.0 else "uniform"
    return PolarGrid(
        n=n,
        spec=spec,
        rho_faces=rho_faces,
        theta_faces=faces,
        wall_dirichlet=wall,
        periodic=False,
        alpha_effective=a_eff,
        theta_origin=float(a_eff) * math.pi / fold,
        mode="sector-graded" if graded else "sector",
        meta=meta,
    )
