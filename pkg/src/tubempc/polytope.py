"""Convex-set primitives: halfspace polytopes, boxes, and support sets.

HPolytope is the workhorse H-representation {x : normals x <= offsets};
it may be an unbounded slab.  Box is an axis-aligned (possibly
degenerate) box.  SupportSet represents a scaled Minkowski sum of linear
images of boxes and is queried only through its support function; it is
how the disturbance-invariant set is stored without explicit facets.

All types are immutable after construction and all operations are pure,
so values can be shared freely across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSetError, EmptySetError, InvalidArgumentError
from .qp.simplex import feasible_point, solve_lp

#: default geometric tolerance for membership and redundancy decisions
GEOM_TOL = 1e-9


@dataclass(frozen=True)
class HPolytope:
    """Halfspace polytope {x : normals x <= offsets}; may be unbounded."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).ravel()
        if normals.shape[0] != offsets.size:
            raise InvalidArgumentError("normals/offsets row mismatch")
        if normals.shape[0] < 1:
            raise InvalidArgumentError("a polytope needs at least one halfspace")
        if not (np.isfinite(normals).all() and np.isfinite(offsets).all()):
            raise InvalidArgumentError("non-finite polytope data")
        if np.any(np.all(normals == 0.0, axis=1)):
            raise InvalidArgumentError("zero normal row")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def nrows(self):
        return self.normals.shape[0]

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if np.any(lower > upper):
            raise InvalidArgumentError("lower bound exceeds upper bound")
        d = lower.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def contains_origin(self, tol=0.0):
        return bool(np.all(self.offsets >= -tol))

    def is_empty(self):
        """LP-decided emptiness; the origin fast path covers constraint sets."""
        if self.contains_origin():
            return False
        x, _ = feasible_point(self.normals, self.offsets)
        return x is None

    def is_bounded(self):
        """True iff every coordinate direction has a finite support value."""
        for i in range(self.dim):
            for sign in (1.0, -1.0):
                a = np.zeros(self.dim)
                a[i] = sign
                if not np.isfinite(support(self, a)):
                    return False
        return True

    def to_dict(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["normals"], dtype=float), np.asarray(data["offsets"], dtype=float))


def constraint_polytope(normals, offsets):
    """Build a constraint set (must contain the origin, offsets >= 0)."""
    poly = HPolytope(normals, offsets)
    if not poly.contains_origin():
        raise InvalidArgumentError("constraint sets must contain the origin (offsets >= 0)")
    return poly


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; zero half-widths (degenerate components) are legal."""

    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        half_widths = np.asarray(self.half_widths, dtype=float).ravel()
        if center.size != half_widths.size:
            raise InvalidArgumentError("box center/half_widths size mismatch")
        if np.any(half_widths < 0.0):
            raise InvalidArgumentError("box half-widths must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_widths", half_widths)

    @property
    def dim(self):
        return self.center.size

    def is_centered(self, tol=0.0):
        return bool(np.all(np.abs(self.center) <= tol))

    def to_dict(self):
        return {"center": self.center.tolist(), "half_widths": self.half_widths.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["center"], dtype=float), np.asarray(data["half_widths"], dtype=float))


@dataclass(frozen=True)
class SupportSet:
    """scale * (map_1(box_1) + ... + map_k(box_k)), queried via supports."""

    terms: tuple
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0.0:
            raise InvalidArgumentError("scale must be positive")
        terms = []
        dim = None
        for mapping, box in self.terms:
            mapping = np.atleast_2d(np.asarray(mapping, dtype=float))
            if not isinstance(box, Box):
                box = Box(*box)
            if mapping.shape[1] != box.dim:
                raise InvalidArgumentError("map columns must match box dimension")
            if dim is None:
                dim = mapping.shape[0]
            elif mapping.shape[0] != dim:
                raise InvalidArgumentError("all terms must map into the same space")
            terms.append((mapping, box))
        if not terms:
            raise InvalidArgumentError("a support set needs at least one term")
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def dim(self):
        return self.terms[0][0].shape[0]

    @classmethod
    def from_box(cls, box):
        return cls(terms=((np.eye(box.dim), box),))

    def minkowski(self, other):
        """Minkowski sum; scales are folded into the term maps."""
        terms = [(m * self.scale, b) for m, b in self.terms]
        terms += [(m * other.scale, b) for m, b in other.terms]
        return SupportSet(terms=tuple(terms), scale=1.0)

    def center(self):
        """Image of the box centers (the symmetry center for centered boxes)."""
        c = np.zeros(self.dim)
        for mapping, box in self.terms:
            c += mapping @ box.center
        return self.scale * c

    def generators(self):
        """Generator vectors of the underlying zonotope, scale applied."""
        cols = []
        for mapping, box in self.terms:
            cols.append(mapping * box.half_widths[None, :])
        return self.scale * np.hstack(cols)

    def sample(self, rng, size):
        """Random points of the set: box coefficients uniform in [-1, 1]."""
        gens = self.generators()
        xi = rng.uniform(-1.0, 1.0, size=(gens.shape[1], size))
        return (self.center()[:, None] + gens @ xi).T

    def to_dict(self):
        return {
            "scale": self.scale,
            "terms": [{"map": m.tolist(), "box": b.to_dict()} for m, b in self.terms],
        }

    @classmethod
    def from_dict(cls, data):
        terms = tuple((np.asarray(t["map"], dtype=float), Box.from_dict(t["box"])) for t in data["terms"])
        return cls(terms=terms, scale=float(data["scale"]))


def support(s, a):
    """Support function  h(a) = max_{x in s} a'x.

    Closed form for Box and SupportSet, an LP for HPolytope (math.inf is
    returned when the LP is unbounded in the direction a).
    """
    a = np.asarray(a, dtype=float).ravel()
    if not np.any(a != 0.0):
        raise InvalidArgumentError("support direction must be nonzero")
    if isinstance(s, Box):
        return float(s.center @ a + s.half_widths @ np.abs(a))
    if isinstance(s, SupportSet):
        total = 0.0
        for mapping, box in s.terms:
            back = mapping.T @ a
            total += box.center @ back + box.half_widths @ np.abs(back)
        return float(s.scale * total)
    if isinstance(s, HPolytope):
        res = solve_lp(a, s.normals, s.offsets, sense="max")
        if res.status == "unbounded":
            return np.inf
        if res.status == "infeasible":
            raise EmptySetError("support of an empty polytope")
        return float(res.value)
    raise InvalidArgumentError(f"unsupported set type {type(s).__name__}")


def pontryagin_diff(p, s):
    """P minus-Pontryagin S: per-row offset shrink by support(S, normal)."""
    if not isinstance(p, HPolytope):
        raise InvalidArgumentError("pontryagin_diff expects an HPolytope minuend")
    shrink = np.array([support(s, row) for row in p.normals])
    out = HPolytope(p.normals, p.offsets - shrink)
    if out.is_empty():
        raise EmptySetError("tightening emptied the set (disturbance too large)")
    return out


def scale_set(p, lam):
    """Scale a polytope containing the origin by lam > 0 (offsets * lam)."""
    if lam <= 0.0:
        raise InvalidArgumentError("scale factor must be positive")
    if not p.contains_origin():
        raise InvalidArgumentError("scale_set requires a set containing the origin")
    return HPolytope(p.normals, p.offsets * lam)


def contains(p, x, tol=None):
    """Membership test normals x <= offsets + tol (elementwise)."""
    tol = GEOM_TOL if tol is None else tol
    x = np.asarray(x, dtype=float).ravel()
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def is_redundant(normal, offset, p, tol=None):
    """True iff the halfspace {x : normal x <= offset} is implied by P."""
    tol = GEOM_TOL if tol is None else tol
    res = solve_lp(normal, p.normals, p.offsets, sense="max")
    if res.status == "unbounded":
        return False
    if res.status == "infeasible":
        raise EmptySetError("redundancy test against an empty polytope")
    return bool(res.value <= offset + tol)


def sample_rays(p, rng, size, center=None, boundary_fraction=0.5):
    """Random points of a bounded polytope along rays from an interior point.

    Covers the whole set (including exact boundary points for a fraction
    of the draws), which is what invariance testing needs; the density is
    not uniform.  The default center is the origin, so offsets must be
    strictly positive then.
    """
    d = p.dim
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float).ravel()
    slack = p.offsets - p.normals @ c
    if np.any(slack <= 0.0):
        raise InvalidArgumentError("center must be strictly interior")
    dirs = rng.normal(size=(size, d))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    den = dirs @ p.normals.T  # (size, q)
    with np.errstate(divide="ignore"):
        steps = np.where(den > 1e-15, slack[None, :] / den, np.inf)
    tmax = steps.min(axis=1)
    if not np.isfinite(tmax).all():
        raise InvalidArgumentError("polytope is unbounded along a sampled ray")
    u = rng.uniform(0.0, 1.0, size=size)
    n_boundary = int(boundary_fraction * size)
    if n_boundary:
        u[:n_boundary] = 1.0
    return c[None, :] + (u * tmax)[:, None] * dirs


def zonotope_facets_2d(s):
    """Exact H-representation of a 2-D SupportSet (a planar zonotope).

    Each facet of a planar zonotope is parallel to one of the generators,
    so the rows are the (deduplicated) generator perpendiculars with
    offsets from the support function.  Rank-1 sets (segments) gain the
    two end rows; an all-zero generator list raises DegenerateSetError so
    the caller can substitute the point {center}.
    """
    if s.dim != 2:
        raise InvalidArgumentError("zonotope_facets_2d requires a 2-D set")
    gens = s.generators()
    norms = np.linalg.norm(gens, axis=0)
    live = gens[:, norms > 1e-15]
    if live.shape[1] == 0:
        raise DegenerateSetError("all generators vanish; set is the point {center}")

    # unique directions mod pi (sign-canonical, tolerance-grouped)
    dirs = live / np.linalg.norm(live, axis=0)[None, :]
    flip = (dirs[0] < 0) | ((dirs[0] == 0) & (dirs[1] < 0))
    dirs[:, flip] *= -1.0
    order = np.lexsort((dirs[1], dirs[0]))
    unique = []
    for j in order:
        d = dirs[:, j]
        if not unique or np.linalg.norm(d - unique[-1]) > 1e-12:
            unique.append(d)
    if len(unique) >= 2 and np.linalg.norm(unique[0] - unique[-1]) <= 1e-12:
        unique.pop()

    rows = []
    offs = []
    for d in unique:
        n = np.array([-d[1], d[0]])
        for sign in (1.0, -1.0):
            a = sign * n
            rows.append(a)
            offs.append(support(s, a))
    if len(unique) == 1:
        # segment: close the two ends
        d = unique[0]
        for sign in (1.0, -1.0):
            a = sign * d
            rows.append(a)
            offs.append(support(s, a))
    return HPolytope(np.array(rows), np.array(offs))
