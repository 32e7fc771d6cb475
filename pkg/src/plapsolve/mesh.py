"""
Periodic flat-torus meshes with a summation-by-parts calculus.

Fields are plain ``numpy`` arrays. A scalar field on a mesh with shape
``(N1, ..., Nn)`` is an array of exactly that shape; a vector field is an
array of shape ``(n, N1, ..., Nn)`` whose component ``k`` holds the forward
difference along axis ``k`` (a collocated storage of staggered values: entry
``i`` lives on the edge between node ``i`` and node ``i + e_k``).

The gradient uses forward differences and the divergence uses backward
differences, so that::

    sum(W . grad(phi) * w) == -sum(div(W) * phi * w)

holds to rounding for every ``W`` and ``phi`` on the same mesh.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "build_torus",
    "gradient",
    "divergence",
    "integrate",
    "write_field_csv",
    "read_field_csv",
]


class MeshError(ValueError):
    """Invalid mesh parameters or a field that does not live on the mesh."""


@dataclass(frozen=True)
class Mesh:
    """Uniform lattice on the flat torus ``prod_i [0, lengths[i])``."""

    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.lengths, self.shape))

    @property
    def num_nodes(self) -> int:
        return math.prod(self.shape)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def volume_weight(self) -> np.ndarray:
        """Quadrature weight per node (uniform)."""
        w = self._cache.get("w")
        if w is None:
            w = np.full(self.shape, self.cell_volume)
            w.flags.writeable = False
            self._cache["w"] = w
        return w

    @property
    def total_volume(self) -> float:
        return math.prod(self.lengths)

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(n, N1, ..., Nn)``."""
        c = self._cache.get("x")
        if c is None:
            axes = [self.axis_coordinates(k) for k in range(self.dim)]
            c = np.stack(np.meshgrid(*axes, indexing="ij"))
            c.flags.writeable = False
            self._cache["x"] = c
        return c

    def node_index(self, multi_index: Sequence[int]) -> int:
        """Row-major flat index of a lattice point (indices wrap periodically)."""
        wrapped = tuple(int(i) % N for i, N in zip(multi_index, self.shape))
        return int(np.ravel_multi_index(wrapped, self.shape))

    def neighbors(self, flat_index: int) -> list[int]:
        """The ``2n`` periodic neighbors, ordered ``(+e_0, -e_0, +e_1, -e_1, ...)``."""
        idx = np.unravel_index(flat_index, self.shape)
        out = []
        for k in range(self.dim):
            for step in (1, -1):
                j = list(idx)
                j[k] += step
                out.append(self.node_index(j))
        return out

    def check_scalar(self, u, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise MeshError(f"{name} has shape {u.shape}, mesh has shape {self.shape}")
        return u

    def check_vector(self, W, name: str = "vector field") -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape != (self.dim, *self.shape):
            raise MeshError(
                f"{name} has shape {W.shape}, expected {(self.dim, *self.shape)}"
            )
        return W

    def constant(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def refine(self, factor: int = 2) -> "Mesh":
        return build_torus(self.dim, [N * factor for N in self.shape], self.lengths)

    def describe(self) -> dict:
        return {"dim": self.dim, "shape": list(self.shape), "lengths": list(self.lengths)}


def build_torus(dim: int, shape: Sequence[int], lengths: Sequence[float]) -> Mesh:
    """Build the uniform periodic lattice on an ``dim``-torus.

    Parameters
    ----------
    dim : int
        Dimension of the torus, at least 2.
    shape : sequence of int
        Node count per axis, each at least 3.
    lengths : sequence of float
        Positive side length per axis.
    """
    if int(dim) != dim or dim < 2:
        raise MeshError(f"dim must be an integer >= 2, got {dim}")
    shape = tuple(int(s) for s in shape)
    lengths = tuple(float(L) for L in lengths)
    if len(shape) != dim or len(lengths) != dim:
        raise MeshError(
            f"need {dim} entries in shape and lengths, got {len(shape)} and {len(lengths)}"
        )
    if any(s < 3 for s in shape):
        raise MeshError(f"every shape entry must be >= 3, got {list(shape)}")
    if not all(math.isfinite(L) and L > 0 for L in lengths):
        raise MeshError(f"every length must be positive and finite, got {list(lengths)}")
    return Mesh(shape, lengths)


def gradient(mesh: Mesh, u) -> np.ndarray:
    """Forward differences with periodic wrap, one component per axis."""
    u = mesh.check_scalar(u)
    return np.stack(
        [(np.roll(u, -1, axis=k) - u) / h for k, h in enumerate(mesh.spacing)]
    )


def divergence(mesh: Mesh, W) -> np.ndarray:
    """Backward-difference divergence, the exact negative adjoint of `gradient`."""
    W = mesh.check_vector(W)
    out = np.zeros(mesh.shape)
    for k, h in enumerate(mesh.spacing):
        out += (W[k] - np.roll(W[k], 1, axis=k)) / h
    return out


def integrate(mesh: Mesh, u) -> float:
    u = mesh.check_scalar(u)
    return float(np.sum(u * mesh.volume_weight))


def write_field_csv(path, mesh: Mesh, u, comment: str | None = None) -> None:
    """Dump a scalar field as ``index,x1..xn,value`` rows in row-major order.

    ``comment`` is written first as ``# <comment>`` lines.
    """
    u = mesh.check_scalar(u)
    coords = mesh.coordinates().reshape(mesh.dim, -1)
    values = u.reshape(-1)
    with open(Path(path), "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", *[f"x{k + 1}" for k in range(mesh.dim)], "value"])
        for i in range(mesh.num_nodes):
            writer.writerow([i, *[repr(float(c)) for c in coords[:, i]], repr(float(values[i]))])


def read_field_csv(path, mesh: Mesh) -> np.ndarray:
    """Inverse of `write_field_csv`; leading ``#`` lines are skipped."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        expected = ["index", *[f"x{k + 1}" for k in range(mesh.dim)], "value"]
        if header != expected:
            raise MeshError(f"unexpected CSV header {header}, expected {expected}")
        values = np.empty(mesh.num_nodes)
        seen = 0
        for row in reader:
            values[int(row[0])] = float(row[-1])
            seen += 1
    if seen != mesh.num_nodes:
        raise MeshError(f"CSV has {seen} rows, mesh has {mesh.num_nodes} nodes")
    return values.reshape(mesh.shape)
