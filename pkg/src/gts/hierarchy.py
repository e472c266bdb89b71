"""Grouped hierarchy, aligned death/exposure panels and summing matrices.

Nodes are identified by :class:`GroupKey` tuples holding one value per
grouping attribute, with ``"T"`` standing for the aggregate over that
attribute.  The canonical node order is

1. the top node ``(T, T)``,
2. attribute-1 groups ``(a, T)`` in declaration order,
3. attribute-2 groups ``(T, b)`` in declaration order,
4. bottom keys ``(a, b)`` in row-major order (attribute 1 outer).

With a single attribute the order is simply the top node followed by the
bottom keys.  Every matrix and file layout in the package follows this order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

TOTAL = "T"

GroupKey = tuple[str, ...]

_EXPOSURE_RTOL = 1e-9


class HierarchyError(ValueError):
    """Invalid hierarchy declaration."""


class PanelError(ValueError):
    """Incoherent, misaligned or otherwise invalid panel data."""


def key_label(key: GroupKey) -> str:
    """Human readable node name, e.g. ``F*R1``, ``F``, ``Total``."""
    parts = [v for v in key if v != TOTAL]
    return "*".join(parts) if parts else "Total"


@dataclass(frozen=True)
class GroupedHierarchy:
    """Two-attribute (or single-attribute) grouped structure.

    Attributes
    ----------
    attributes : tuple of str
        Attribute names in declaration order.
    domains : tuple of tuple of str
        Values of each attribute.
    keys : tuple of GroupKey
        All nodes in canonical order.
    levels : tuple of int
        Level index of every key (0 = top, last = bottom).
    level_names : tuple of str
        Name of each level.
    """

    attributes: tuple[str, ...]
    domains: tuple[tuple[str, ...], ...]
    keys: tuple[GroupKey, ...]
    levels: tuple[int, ...]
    level_names: tuple[str, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return len(self.keys)

    @property
    def m_bottom(self) -> int:
        return int(np.prod([len(d) for d in self.domains]))

    @property
    def n_levels(self) -> int:
        return len(self.level_names)

    @property
    def bottom_keys(self) -> tuple[GroupKey, ...]:
        return self.keys[self.m - self.m_bottom:]

    def index(self, key: GroupKey) -> int:
        try:
            return self._index[tuple(key)]
        except KeyError:
            raise KeyError(f"unknown node {key!r}") from None

    def level_members(self, level: int) -> np.ndarray:
        """Row indices of the nodes at ``level``."""
        return np.flatnonzero(np.asarray(self.levels) == level)

    def descendants(self, key: GroupKey) -> list[int]:
        """Bottom-block column indices aggregated by ``key``."""
        cols = []
        for j, b in enumerate(self.bottom_keys):
            if all(k == TOTAL or k == v for k, v in zip(key, b)):
                cols.append(j)
        return cols

    def children(self, key: GroupKey) -> list[GroupKey]:
        """Immediate children, partitioning the first aggregated attribute."""
        key = tuple(key)
        if TOTAL not in key:
            return []
        pos = key.index(TOTAL)
        out = []
        for v in self.domains[pos]:
            child = key[:pos] + (v,) + key[pos + 1:]
            out.append(child)
        return out

    def labels(self) -> list[str]:
        return [key_label(k) for k in self.keys]


def build_hierarchy(attribute_domains: Mapping[str, Sequence[str]] | Sequence[tuple[str, Sequence[str]]]) -> GroupedHierarchy:
    """Build the grouped hierarchy for one or two crossing attributes.

    Parameters
    ----------
    attribute_domains : mapping or sequence of (name, values)
        Attribute names and their values, in declaration order.

    Examples
    --------
    >>> h = build_hierarchy({"sex": ["F", "M"], "region": [f"R{i}" for i in range(1, 9)]})
    >>> h.m, h.m_bottom
    (27, 16)
    """
    items = list(attribute_domains.items()) if isinstance(attribute_domains, Mapping) else list(attribute_domains)
    if not items:
        raise HierarchyError("at least one attribute is required")
    if len(items) > 2:
        raise HierarchyError("only one or two grouping attributes are supported")
    names = [str(n) for n, _ in items]
    if len(set(names)) != len(names):
        raise HierarchyError(f"duplicate attribute names: {names}")
    domains = []
    for name, values in items:
        values = tuple(str(v) for v in values)
        if not values:
            raise HierarchyError(f"attribute {name!r} has an empty domain")
        if len(set(values)) != len(values):
            dup = sorted({v for v in values if values.count(v) > 1})
            raise HierarchyError(f"attribute {name!r} has duplicate values {dup}")
        if TOTAL in values:
            raise HierarchyError(f"attribute {name!r} uses the reserved value {TOTAL!r}")
        domains.append(values)

    keys: list[GroupKey] = []
    levels: list[int] = []
    if len(domains) == 1:
        keys.append((TOTAL,))
        levels.append(0)
        keys.extend((v,) for v in domains[0])
        levels.extend([1] * len(domains[0]))
        level_names = ("Total", names[0])
    else:
        a, b = domains
        keys.append((TOTAL, TOTAL))
        levels.append(0)
        keys.extend((v, TOTAL) for v in a)
        levels.extend([1] * len(a))
        keys.extend((TOTAL, v) for v in b)
        levels.extend([2] * len(b))
        keys.extend((u, v) for u in a for v in b)
        levels.extend([3] * (len(a) * len(b)))
        level_names = ("Total", names[0], names[1], f"{names[0]} x {names[1]}")

    h = GroupedHierarchy(
        attributes=tuple(names),
        domains=tuple(domains),
        keys=tuple(keys),
        levels=tuple(levels),
        level_names=level_names,
    )
    h._index.update({k: i for i, k in enumerate(keys)})
    return h


@dataclass(frozen=True)
class SummingMatrix:
    """``m x m_K`` aggregation matrix.

    ``mode`` is ``"counts"`` (0/1 entries) or ``"rates"`` (exposure ratios).
    ``time`` records the time point or horizon label the exposures came from.
    """

    matrix: np.ndarray
    mode: str
    time: object = None

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other


def summing_matrix_counts(h: GroupedHierarchy) -> SummingMatrix:
    """Constant 0/1 summing matrix; ``S @ c_bottom`` gives all aggregates."""
    S = np.zeros((h.m, h.m_bottom))
    for i, key in enumerate(h.keys):
        S[i, h.descendants(key)] = 1.0
    return SummingMatrix(S, "counts")


def _full_exposures(h: GroupedHierarchy, exposures, time=None) -> np.ndarray:
    """Exposure vector for all ``m`` nodes, derived from the bottom block.

    Accepts either ``m_K`` bottom exposures or all ``m`` exposures; in the
    latter case supplied parent values are checked against the child sums.
    """
    e = np.asarray(exposures, dtype=float)
    if e.shape not in ((h.m,), (h.m_bottom,)):
        raise PanelError(f"expected {h.m} or {h.m_bottom} exposures, got shape {e.shape}")
    bottom = e[-h.m_bottom:]
    bad = np.flatnonzero(~(bottom > 0) | ~np.isfinite(bottom))
    if bad.size:
        j = bad[0]
        raise PanelError(
            f"non-positive exposure {bottom[j]!r} at node {key_label(h.bottom_keys[j])}"
            + (f", time {time}" if time is not None else "")
        )
    full = summing_matrix_counts(h).matrix @ bottom
    if e.shape == (h.m,):
        ok = np.isclose(e, full, rtol=_EXPOSURE_RTOL, atol=0.0)
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            raise PanelError(
                f"exposure of {key_label(h.keys[i])} ({e[i]!r}) differs from the sum of its "
                f"children ({full[i]!r})" + (f" at time {time}" if time is not None else "")
            )
    return full


def summing_matrix_rates(h: GroupedHierarchy, exposures, time=None) -> SummingMatrix:
    """Exposure-weighted summing matrix at one time point.

    Row ``i`` holds ``E_child / E_i`` on the bottom descendants of node ``i``,
    so ``S @ r_bottom`` reproduces every aggregate rate when rates come from
    coherent deaths and exposures.
    """
    full = _full_exposures(h, exposures, time)
    bottom = full[-h.m_bottom:]
    S = summing_matrix_counts(h).matrix * bottom[None, :] / full[:, None]
    S[h.m - h.m_bottom:] = np.eye(h.m_bottom)
    return SummingMatrix(S, "rates", time)


def rates_summing_stack(h: GroupedHierarchy, exposures: np.ndarray) -> np.ndarray:
    """Vectorised rates summing matrices for many exposure vectors.

    ``exposures`` has shape ``(..., m_K)`` (bottom exposures); the result has
    shape ``(..., m, m_K)``.  No validation beyond positivity.
    """
    e = np.asarray(exposures, dtype=float)
    if np.any(~(e > 0)):
        raise PanelError("non-positive exposure in simulated or supplied exposure block")
    C = summing_matrix_counts(h).matrix
    parent = e @ C.T
    return C * e[..., None, :] / parent[..., :, None]


@dataclass(frozen=True)
class PanelSeries:
    """Deaths, exposures and rates for every node on a common yearly axis.

    Arrays have shape ``(m, n)`` in canonical node order.
    """

    hierarchy: GroupedHierarchy
    years: np.ndarray
    deaths: np.ndarray
    exposure: np.ndarray

    def __post_init__(self):
        for a in (self.years, self.deaths, self.exposure):
            a.setflags(write=False)

    @property
    def rates(self) -> np.ndarray:
        return self.deaths / self.exposure

    @property
    def n(self) -> int:
        return self.years.size

    def window(self, stop: int, start: int = 0) -> "PanelSeries":
        """Sub-panel of time positions ``start:stop``."""
        return PanelSeries(
            self.hierarchy,
            self.years[start:stop].copy(),
            self.deaths[:, start:stop].copy(),
            self.exposure[:, start:stop].copy(),
        )


def aggregate_panel(h: GroupedHierarchy, deaths, exposure, years=None) -> PanelSeries:
    """Sum bottom-level deaths and exposures up the hierarchy.

    Parameters
    ----------
    deaths, exposure : array_like, shape (m_K, n)
        Bottom panels in canonical bottom order.
    years : array_like, optional
        Time axis; defaults to ``1..n``.

    Rates at every node are recomputed as deaths over exposure, never by
    averaging child rates.
    """
    d = np.atleast_2d(np.asarray(deaths, dtype=float))
    e = np.atleast_2d(np.asarray(exposure, dtype=float))
    if d.shape != e.shape:
        raise PanelError(f"deaths shape {d.shape} and exposure shape {e.shape} are misaligned")
    if d.shape[0] != h.m_bottom:
        raise PanelError(f"expected {h.m_bottom} bottom series, got {d.shape[0]}")
    n = d.shape[1]
    yrs = np.arange(1, n + 1) if years is None else np.asarray(years)
    if yrs.shape != (n,):
        raise PanelError(f"time axis of length {yrs.size} does not match {n} observations")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        i, t = np.argwhere((d < 0) | ~np.isfinite(d))[0]
        raise PanelError(f"invalid deaths {d[i, t]!r} at node {key_label(h.bottom_keys[i])}, time {yrs[t]}")
    if np.any(~(e > 0)) or not np.all(np.isfinite(e)):
        i, t = np.argwhere(~(e > 0) | ~np.isfinite(e))[0]
        raise PanelError(f"non-positive exposure {e[i, t]!r} at node {key_label(h.bottom_keys[i])}, time {yrs[t]}")
    C = summing_matrix_counts(h).matrix
    return PanelSeries(h, yrs.copy(), C @ d, C @ e)
