"""
Grid Module

Structured Cartesian and cylindrical grids, sampled fields, the
finite-difference Laplacian in flux form, quadrature and shift/phase
aligned distances.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import sparse

from .errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

CARTESIAN = "cartesian"
CYLINDRICAL = "cylindrical"
PERIODIC = "periodic"
DIRICHLET = "dirichlet-zero"

GRID_KINDS = (CARTESIAN, CYLINDRICAL)
BOUNDARY_KINDS = (PERIODIC, DIRICHLET)
MIN_POINTS = 4

_deterministic = False


def set_deterministic(flag: bool):
    """Switch quadrature to a fixed pairwise summation order."""
    global _deterministic
    _deterministic = bool(flag)
    logger.debug(f"Deterministic reductions: {_deterministic}")


def is_deterministic() -> bool:
    return _deterministic


def pairwise_sum(values: np.ndarray) -> float:
    """
    Sum an array with a fixed binary tree.

    The tree depends only on the array length, so the result is
    reproducible bit for bit across runs and platforms.
    """
    x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return 0.0
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0])


def _reduce(values: np.ndarray) -> float:
    if _deterministic:
        return pairwise_sum(values)
    return float(np.sum(values))


@dataclass(frozen=True)
class AxisSpec:
    """One grid axis: closed interval [lower, upper] sampled with `points` cells."""
    lower: float
    upper: float
    points: int

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / self.points


@dataclass(frozen=True)
class GridSpec:
    """
    Grid description.

    Attributes:
        kind: "cartesian" or "cylindrical" (axes r, x3)
        dims: One AxisSpec per axis
        boundary: One boundary kind per axis ("periodic" or "dirichlet-zero")
    """
    kind: str
    dims: Tuple[AxisSpec, ...]
    boundary: Tuple[str, ...]

    def validate(self):
        """
        Check the grid invariants.

        Raises:
            ConfigurationError: Naming the offending axis
        """
        if self.kind not in GRID_KINDS:
            raise ConfigurationError(
                f"Unknown grid kind '{self.kind}' (expected one of {GRID_KINDS})"
            )
        if not self.dims:
            raise ConfigurationError("Grid needs at least one axis")
        if len(self.boundary) != len(self.dims):
            raise ConfigurationError(
                f"Grid has {len(self.dims)} axes but {len(self.boundary)} boundary entries"
            )
        if self.kind == CYLINDRICAL and len(self.dims) != 2:
            raise ConfigurationError(
                f"Cylindrical grids have exactly 2 axes (r, x3), got {len(self.dims)}"
            )

        for axis, (dim, bc) in enumerate(zip(self.dims, self.boundary)):
            if bc not in BOUNDARY_KINDS:
                raise ConfigurationError(
                    f"Axis {axis}: unknown boundary '{bc}' (expected one of {BOUNDARY_KINDS})"
                )
            if int(dim.points) != dim.points or dim.points < MIN_POINTS:
                raise ConfigurationError(
                    f"Axis {axis}: points must be an integer >= {MIN_POINTS}, got {dim.points}"
                )
            if not np.isfinite(dim.lower) or not np.isfinite(dim.upper):
                raise ConfigurationError(f"Axis {axis}: bounds must be finite")
            if dim.upper <= dim.lower:
                raise ConfigurationError(
                    f"Axis {axis}: max ({dim.upper}) must exceed min ({dim.lower})"
                )

        if self.kind == CYLINDRICAL:
            r_axis = self.dims[0]
            if r_axis.lower != 0.0:
                raise ConfigurationError(
                    f"Axis 0: cylindrical r-axis must start at 0, got {r_axis.lower}"
                )
            if self.boundary[0] != DIRICHLET:
                raise ConfigurationError(
                    "Axis 0: cylindrical r-axis must use the dirichlet-zero boundary"
                )

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind,
            'dims': [[d.lower, d.upper, d.points] for d in self.dims],
            'boundary': list(self.boundary),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'GridSpec':
        """
        Build a GridSpec from a plain mapping.

        Accepts dims as [min, max, points] triples or {min, max, points} maps.
        """
        try:
            dims = []
            for entry in data['dims']:
                if isinstance(entry, dict):
                    lower, upper, points = entry['min'], entry['max'], entry['points']
                else:
                    lower, upper, points = entry
                dims.append(AxisSpec(float(lower), float(upper), int(points)))
            boundary = data.get('boundary', PERIODIC)
            if isinstance(boundary, str):
                boundary = [boundary] * len(dims)
            return cls(
                kind=str(data.get('kind', CARTESIAN)),
                dims=tuple(dims),
                boundary=tuple(str(b) for b in boundary),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Malformed grid description: {e}") from e


class Grid:
    """
    A validated structured grid with its quadrature weights and
    finite-difference operators.

    Periodic axes place nodes at min + i*h. Dirichlet axes (and the
    cylindrical r-axis) use cell-centered nodes min + (i + 1/2)*h, so the
    zero boundary value sits half a cell outside the first and last node.
    """

    def __init__(self, spec: GridSpec):
        spec.validate()
        self.spec = spec
        self.kind = spec.kind
        self.shape = tuple(int(d.points) for d in spec.dims)
        self.ndim = len(self.shape)
        self.spacings = tuple(d.spacing for d in spec.dims)
        self.boundary = spec.boundary

        self.coords: List[np.ndarray] = []
        for dim, bc in zip(spec.dims, spec.boundary):
            i = np.arange(dim.points, dtype=np.float64)
            if bc == PERIODIC:
                self.coords.append(dim.lower + i * dim.spacing)
            else:
                self.coords.append(dim.lower + (i + 0.5) * dim.spacing)

        self._node_weights_1d = [self._axis_node_weights(a) for a in range(self.ndim)]
        self._edge_weights_1d = [self._axis_edge_weights(a) for a in range(self.ndim)]
        self._edge_lengths_1d = [self._axis_edge_lengths(a) for a in range(self.ndim)]

        self.weights = self._outer(self._node_weights_1d)
        self._edge_weights = [self._edge_weight_array(a) for a in range(self.ndim)]

        logger.debug(
            f"Grid {self.kind} shape={self.shape} spacings={self.spacings} "
            f"boundary={self.boundary}"
        )

    # --- construction helpers -------------------------------------------------

    def _is_radial(self, axis: int) -> bool:
        return self.kind == CYLINDRICAL and axis == 0

    def _axis_node_weights(self, axis: int) -> np.ndarray:
        h = self.spacings[axis]
        n = self.shape[axis]
        if self._is_radial(axis):
            return 2.0 * np.pi * self.coords[axis] * h
        return np.full(n, h)

    def _axis_edge_lengths(self, axis: int) -> np.ndarray:
        h = self.spacings[axis]
        n = self.shape[axis]
        if self.boundary[axis] == PERIODIC:
            return np.full(n, h)
        lengths = np.full(n + 1, h)
        lengths[0] = lengths[-1] = 0.5 * h
        return lengths

    def _axis_edge_weights(self, axis: int) -> np.ndarray:
        h = self.spacings[axis]
        n = self.shape[axis]
        if self.boundary[axis] == PERIODIC:
            return np.full(n, h)
        if self._is_radial(axis):
            faces = np.arange(n + 1, dtype=np.float64) * h
            weights = 2.0 * np.pi * faces * h
            weights[0] = 0.0
            outer = self.spec.dims[axis].upper
            weights[-1] = 2.0 * np.pi * (outer - 0.25 * h) * (0.5 * h)
            return weights
        weights = np.full(n + 1, h)
        weights[0] = weights[-1] = 0.5 * h
        return weights

    def _outer(self, factors: Sequence[np.ndarray]) -> np.ndarray:
        result = np.ones(())
        for factor in factors:
            result = np.multiply.outer(result, factor)
        return np.ascontiguousarray(result)

    def _edge_weight_array(self, axis: int) -> np.ndarray:
        factors = list(self._node_weights_1d)
        factors[axis] = self._edge_weights_1d[axis]
        return self._outer(factors)

    def _along(self, vector: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = vector.size
        return vector.reshape(shape)

    # --- geometry --------------------------------------------------------------

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dimension(self) -> int:
        """Spatial dimension N of the physical problem."""
        return 3 if self.kind == CYLINDRICAL else self.ndim

    @cached_property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def is_periodic(self, axis: int) -> bool:
        return self.boundary[axis] == PERIODIC

    @property
    def periodic_axes(self) -> Tuple[int, ...]:
        return tuple(a for a in range(self.ndim) if self.is_periodic(a))

    @property
    def all_periodic(self) -> bool:
        return len(self.periodic_axes) == self.ndim

    def mesh(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates broadcast to the grid shape (ij indexing)."""
        return tuple(np.meshgrid(*self.coords, indexing='ij'))

    def center(self) -> Tuple[float, ...]:
        """Midpoint of each axis interval (r-axis reports 0)."""
        mid = []
        for axis, dim in enumerate(self.spec.dims):
            mid.append(0.0 if self._is_radial(axis) else 0.5 * (dim.lower + dim.upper))
        return tuple(mid)

    @cached_property
    def radius(self) -> np.ndarray:
        """r-coordinate broadcast over a cylindrical grid."""
        if self.kind != CYLINDRICAL:
            raise UsageError("radius is only defined on cylindrical grids")
        return np.broadcast_to(self._along(self.coords[0], 0), self.shape)

    # --- fields ----------------------------------------------------------------

    def zeros(self, dtype=np.float64) -> 'Field':
        return Field(self, np.zeros(self.shape, dtype=dtype))

    def sample(self, function: Callable[..., np.ndarray], dtype=None) -> 'Field':
        """Evaluate function(*mesh) at the nodes."""
        values = np.asarray(function(*self.mesh()))
        if dtype is not None:
            values = values.astype(dtype)
        return Field(self, np.broadcast_to(values, self.shape).copy())

    # --- difference operators --------------------------------------------------

    def forward_difference(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Edge differences along one axis (zero ghosts on Dirichlet sides)."""
        h = self._along(self._edge_lengths_1d[axis], axis)
        if self.is_periodic(axis):
            return (np.roll(values, -1, axis=axis) - values) / h
        pad = [(0, 0)] * self.ndim
        pad[axis] = (1, 1)
        return np.diff(np.pad(values, pad), axis=axis) / h

    def laplacian_values(self, values: np.ndarray) -> np.ndarray:
        """Flux-form Laplacian of raw node values."""
        result = np.zeros_like(values)
        for axis in range(self.ndim):
            h = self._along(self._edge_lengths_1d[axis], axis)
            flux = self._edge_weights[axis] * self.forward_difference(values, axis) / h
            if self.is_periodic(axis):
                result = result + (flux - np.roll(flux, 1, axis=axis))
            else:
                result = result + np.diff(flux, axis=axis)
        return result / self.weights

    def grad_inner_values(self, f: np.ndarray, g: np.ndarray) -> float:
        """Sum over edges of c_e Re(d_e f conj(d_e g))."""
        total = 0.0
        for axis in range(self.ndim):
            df = self.forward_difference(f, axis)
            dg = self.forward_difference(g, axis)
            total += _reduce(self._edge_weights[axis] * np.real(df * np.conj(dg)))
        return total

    def integrate_values(self, values: np.ndarray) -> float:
        values = np.asarray(values)
        if np.iscomplexobj(values):
            raise UsageError("integrate expects real pointwise values")
        return _reduce(self.weights * values)

    def inner_values(self, a: np.ndarray, b: np.ndarray) -> float:
        return _reduce(self.weights * np.real(a * np.conj(b)))

    def difference_matrix(self, axis: int) -> sparse.csr_matrix:
        """Sparse edge-difference operator along one axis (edges x nodes, row-major)."""
        n = self.shape[axis]
        h = self._edge_lengths_1d[axis]
        if self.is_periodic(axis):
            d1 = sparse.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format='lil')
            d1[n - 1, 0] = 1.0
        else:
            d1 = sparse.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n), format='lil')
        d1 = sparse.diags(1.0 / h) @ d1.tocsr()
        before = int(np.prod(self.shape[:axis]))
        after = int(np.prod(self.shape[axis + 1:]))
        return sparse.kron(
            sparse.identity(before), sparse.kron(d1, sparse.identity(after))
        ).tocsr()

    @cached_property
    def stiffness_matrix(self) -> sparse.csr_matrix:
        """
        Symmetric positive semi-definite K with u^T K v = grad_inner(u, v).
        """
        k = sparse.csr_matrix((self.size, self.size))
        for axis in range(self.ndim):
            d = self.difference_matrix(axis)
            k = k + d.T @ sparse.diags(self._edge_weights[axis].ravel()) @ d
        return k.tocsr()

    @cached_property
    def laplacian_matrix(self) -> sparse.csr_matrix:
        """Sparse Laplacian acting on row-major flattened values."""
        return (sparse.diags(-1.0 / self.weights.ravel()) @ self.stiffness_matrix).tocsr()

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """
        Eigenvalues of the Laplacian on an all-periodic grid, laid out on
        the FFT frequency grid.
        """
        if not self.all_periodic:
            raise UsageError("laplacian_symbol requires every axis periodic")
        symbol = np.zeros(self.shape)
        for axis, (n, h) in enumerate(zip(self.shape, self.spacings)):
            k = 2.0 * np.pi * sp_fft.fftfreq(n)
            symbol = symbol + self._along(-(2.0 / h ** 2) * (1.0 - np.cos(k)), axis)
        return symbol

    # --- alignment -------------------------------------------------------------

    def aligned_overlap(
        self,
        parts: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]]
    ) -> float:
        """
        Max over integer shifts on periodic axes (and a global phase) of
        |sum_parts sum w a conj(shift b)|.

        Args:
            parts: (a, b, weights) triples that share the periodic axes
        """
        periodic = self.periodic_axes
        total = None
        for a, b, w in parts:
            if periodic:
                fa = sp_fft.fftn(w * a, axes=periodic)
                fb = sp_fft.fftn(b, axes=periodic)
                corr = sp_fft.ifftn(fa * np.conj(fb), axes=periodic)
                other = tuple(ax for ax in range(self.ndim) if ax not in periodic)
                if other:
                    corr = np.sum(corr, axis=other)
            else:
                corr = np.sum(w * a * np.conj(b))
            total = corr if total is None else total + corr
        return float(np.max(np.abs(total)))

    def to_dict(self) -> Dict:
        data = self.spec.to_dict()
        data['spacings'] = list(self.spacings)
        return data


def build_grid(spec: Union[GridSpec, Dict]) -> Grid:
    """
    Validate a grid description and construct the grid.

    Args:
        spec: GridSpec or mapping with kind/dims/boundary

    Returns:
        Grid instance

    Raises:
        ConfigurationError: If the description is invalid
    """
    if isinstance(spec, dict):
        spec = GridSpec.from_dict(spec)
    return Grid(spec)


@dataclass
class Field:
    """Samples on a grid, real or complex, stored in row-major order."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.grid.shape:
            if values.size == self.grid.size:
                values = values.reshape(self.grid.shape)
            else:
                raise UsageError(
                    f"Field shape {values.shape} does not match grid shape {self.grid.shape}"
                )
        if np.iscomplexobj(values):
            self.values = values.astype(np.complex128, copy=False)
        else:
            self.values = values.astype(np.float64, copy=False)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def component_type(self) -> str:
        return "complex" if self.is_complex else "real"

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> 'Field':
        return Field(self.grid, self.values.copy())

    def to_complex(self) -> 'Field':
        return Field(self.grid, self.values.astype(np.complex128))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid:
                raise UsageError("Fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass
class NKGState:
    """Phase-space state (psi, psi_hat) of the Klein-Gordon evolution."""
    psi: Field
    psi_hat: Field

    def __post_init__(self):
        if self.psi.grid is not self.psi_hat.grid:
            raise UsageError("NKG components must share one grid")
        self.psi = self.psi.to_complex()
        self.psi_hat = self.psi_hat.to_complex()

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    def copy(self) -> 'NKGState':
        return NKGState(self.psi.copy(), self.psi_hat.copy())

    def is_finite(self) -> bool:
        return self.psi.is_finite() and self.psi_hat.is_finite()

    def max_abs(self) -> float:
        return max(self.psi.max_abs(), self.psi_hat.max_abs())

    def __add__(self, other):
        if isinstance(other, NKGState):
            return NKGState(self.psi + other.psi, self.psi_hat + other.psi_hat)
        return NKGState(self.psi + other, self.psi_hat + other)

    def __sub__(self, other):
        if isinstance(other, NKGState):
            return NKGState(self.psi - other.psi, self.psi_hat - other.psi_hat)
        return NKGState(self.psi - other, self.psi_hat - other)

    def __mul__(self, scalar):
        return NKGState(self.psi * scalar, self.psi_hat * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return NKGState(-self.psi, -self.psi_hat)


State = Union[Field, NKGState]


def _components(state: State) -> List[Field]:
    if isinstance(state, NKGState):
        return [state.psi, state.psi_hat]
    return [state]


def integrate(
    f: Field,
    pointwise: Optional[Callable[[np.ndarray], np.ndarray]] = None
) -> float:
    """
    Quadrature of a real field, or of a real pointwise expression of a
    complex field's samples.

    Raises:
        UsageError: For a complex field without a real-valued expression
    """
    values = f.values if pointwise is None else pointwise(f.values)
    return f.grid.integrate_values(values)


def laplacian(f: Field) -> Field:
    return Field(f.grid, f.grid.laplacian_values(f.values))


def discrete_grad_inner(f: Field, g: Field) -> float:
    """Edge-sum bilinear form with integrate(f * lap g) == -discrete_grad_inner(f, g)."""
    if f.grid is not g.grid:
        raise UsageError("Fields live on different grids")
    return f.grid.grad_inner_values(f.values, g.values)


def dirichlet_energy(f: Field) -> float:
    return f.grid.grad_inner_values(f.values, f.values)


def inner(a: State, b: State) -> float:
    """Real quadrature inner product Re sum w a conj(b), componentwise for NKG states."""
    total = 0.0
    for x, y in zip(_components(a), _components(b)):
        total += x.grid.inner_values(x.values, y.values)
    return total


def norm(a: State) -> float:
    return float(np.sqrt(max(inner(a, a), 0.0)))


def shift(f: Field, offsets: Sequence[int]) -> Field:
    """Integer translation along periodic axes."""
    values = f.values
    for axis, offset in enumerate(offsets):
        if offset == 0:
            continue
        if not f.grid.is_periodic(axis):
            raise UsageError(f"Axis {axis} is not periodic; cannot shift")
        values = np.roll(values, int(offset), axis=axis)
    return Field(f.grid, values)


def _energy_parts(state: NKGState) -> List[Tuple[np.ndarray, np.ndarray]]:
    grid = state.grid
    parts = [(state.psi.values, grid.weights), (state.psi_hat.values, grid.weights)]
    for axis in range(grid.ndim):
        parts.append((grid.forward_difference(state.psi.values, axis), grid._edge_weights[axis]))
    return parts


def aligned_distance(a: State, reference: State, metric: str = "l2") -> float:
    """
    Distance from a to the orbit of the reference under periodic shifts and
    a global phase, relative to the reference's norm.

    Args:
        a: State to measure
        reference: Reference state (same grid and type)
        metric: "l2" or "energy" (H1 x L2 for NKG states)

    Returns:
        min over shifts/phase of ||a - g reference|| / ||reference||
    """
    if type(a) is not type(reference):
        raise UsageError("aligned_distance needs two states of the same type")
    grid = reference.grid if isinstance(reference, Field) else reference.psi.grid

    if metric == "energy" and isinstance(a, NKGState):
        pa = _energy_parts(a)
        pb = _energy_parts(reference)
        parts = [(x, y, w) for (x, w), (y, _) in zip(pa, pb)]
    elif metric in ("l2", "energy"):
        parts = [(x.values, y.values, grid.weights)
                 for x, y in zip(_components(a), _components(reference))]
    else:
        raise UsageError(f"Unknown metric '{metric}'")

    norm_a = sum(_reduce(w * np.abs(x) ** 2) for x, _, w in parts)
    norm_b = sum(_reduce(w * np.abs(y) ** 2) for _, y, w in parts)
    if norm_b <= 0.0:
        raise UsageError("Reference state has zero norm")
    overlap = grid.aligned_overlap(parts)
    dist2 = max(norm_a + norm_b - 2.0 * overlap, 0.0)
    return float(np.sqrt(dist2 / norm_b))


def random_smooth_field(
    grid: Grid,
    rng: np.random.Generator,
    bumps: int = 6,
    amplitude: float = 1.0,
    complex_values: bool = False
) -> Field:
    """
    Random smooth field: a sum of Gaussian bumps, each a few cells wide or
    more, tapered to zero across Dirichlet axes.
    """
    mesh = grid.mesh()
    values = np.zeros(grid.shape, dtype=np.complex128 if complex_values else np.float64)
    for _ in range(bumps):
        exponent = np.zeros(grid.shape)
        for axis, (dim, x) in enumerate(zip(grid.spec.dims, mesh)):
            length = dim.upper - dim.lower
            center = rng.uniform(dim.lower + 0.25 * length, dim.upper - 0.25 * length)
            width = max(rng.uniform(length / 16, length / 6), 4.0 * dim.spacing)
            exponent = exponent + ((x - center) / width) ** 2
        coefficient = rng.normal()
        if complex_values:
            coefficient = coefficient + 1j * rng.normal()
        values = values + coefficient * np.exp(-0.5 * exponent)
    for axis, (dim, x) in enumerate(zip(grid.spec.dims, mesh)):
        if not grid.is_periodic(axis):
            values = values * np.sin(np.pi * (x - dim.lower) / (dim.upper - dim.lower))
    peak = np.max(np.abs(values))
    if peak > 0:
        values = values * (amplitude / peak)
    return Field(grid, values)
