"""Membrane geometry: parsing, corner normalization, indexing.

A membrane description names the non-trivial part of a lattice interface
(a vertex polyline in 2D, an axis-aligned facet list in 3D) sitting on an
infinite absorbing plane at the tail level.  Building a membrane
rasterizes the description, applies the corner rules (inaccessible corner
points sink into the bulk, ambiguous corner points are cut out of the
lattice with their perpendicular links fused), computes outer normals and
ground points, and fixes one boundary enumeration.

Convention: the last coordinate is the vertical one (y); the remaining
d-1 coordinates are lateral.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from itertools import product

from .errors import ParseError, ValidationError

Point = tuple[int, ...]


@dataclass(frozen=True)
class BoundaryPoint:
    index: int  # 1-based enumerated index
    position: Point
    normal: Point  # outer normal: unit vector toward the near-boundary point

    @property
    def near_point(self) -> Point:
        return tuple(a + b for a, b in zip(self.position, self.normal))


@dataclass(frozen=True)
class CornerRecord:
    """One lattice site cut out by the corner rule.

    ``partners`` are its surviving external neighbors; ``images[i]`` is the
    site a walker stepping from ``partners[i]`` into the removed site lands
    on (the fused perpendicular neighbor, or ``partners[i]`` itself when the
    link is simply blocked).  ``boundary_neighbors`` are the surviving
    absorbing neighbors whose source terms the removal displaces.
    """

    removed: Point
    normals: tuple[Point, ...]
    partners: tuple[Point, ...]
    images: tuple[Point, ...]
    boundary_neighbors: tuple[Point, ...]
    neighbor_indices: tuple[int | None, ...]
    kind: str  # "liaison" | "blocked"


@dataclass(frozen=True)
class PointClass:
    kind: str  # external | internal | boundary | near-boundary | ground
    index: int | None = None
    ground_index: int | None = None

    @property
    def base(self) -> str:
        if self.kind in ("near-boundary", "ground"):
            return "external"
        return self.kind


@dataclass(frozen=True)
class SiteSet:
    """Ordered boundary-index set A over which the operator is built."""

    indices: tuple[int, ...]

    def validate(self, membrane: "Membrane") -> None:
        idx = set(self.indices)
        if len(idx) != len(self.indices):
            raise ValidationError("bijection", detail="duplicate site indices")
        required = set(range(1, membrane.num_nonplane + 1))
        if not required <= idx:
            missing = sorted(required - idx)[0]
            raise ValidationError(
                "bijection",
                membrane.site(missing),
                "site set must contain every non-plane index",
            )
        if idx and (min(idx) < 1 or max(idx) > membrane.num_sites):
            raise ValidationError("bijection", detail="site index out of range")


def _unit_vectors(d: int) -> list[Point]:
    out = []
    for axis in range(d):
        for s in (1, -1):
            e = [0] * d
            e[axis] = s
            out.append(tuple(e))
    return out


class Membrane:
    """Validated, normalized, enumerated lattice membrane."""

    def __init__(
        self,
        d: int,
        name: str,
        boundary: list[BoundaryPoint],
        ground: list[Point],
        corners: list[CornerRecord],
        num_nonplane: int,
        footprint_lo: Point,
        footprint_hi: Point,
        window: int,
        internal: set[Point],
        extra_boundary: list[Point],
        box_lo: Point,
        box_hi: Point,
        spec_data: dict,
    ):
        self.d = d
        self.name = name
        self.boundary = boundary
        self.ground = ground
        self.corners = corners
        self.num_nonplane = num_nonplane
        self.footprint_lo = footprint_lo
        self.footprint_hi = footprint_hi
        self.window = window
        self.extra_boundary = extra_boundary
        self.spec_data = spec_data
        self._internal = frozenset(internal)
        self._box_lo = box_lo
        self._box_hi = box_hi
        self._site_index = {bp.position: bp.index for bp in boundary}
        self._near_index: dict[Point, int] = {}
        for bp in boundary:
            self._near_index.setdefault(bp.near_point, bp.index)
        self._ground_index = {g: i + 1 for i, g in enumerate(ground)}
        self._deleted = {c.removed: c for c in corners if c.kind in ("liaison", "blocked")}
        self._extra = frozenset(extra_boundary)
        ys = [bp.position[-1] for bp in boundary[:num_nonplane]]
        self.N = max([y for y in ys if y > 0], default=0)
        self.Nstar = -min([y for y in ys if y < 0], default=0)

    # -- basic accessors ----------------------------------------------

    @property
    def num_sites(self) -> int:
        return len(self.boundary)

    @property
    def num_ground(self) -> int:
        return len(self.ground)

    def site(self, m: int) -> Point:
        return self.boundary[m - 1].position

    def normal(self, m: int) -> Point:
        return self.boundary[m - 1].normal

    def near_site(self, m: int) -> Point:
        return self.boundary[m - 1].near_point

    def default_sites(self) -> SiteSet:
        return SiteSet(tuple(range(1, self.num_sites + 1)))

    # -- lattice status ------------------------------------------------

    def _in_box(self, p: Point) -> bool:
        return all(lo <= c <= hi for c, lo, hi in zip(p, self._box_lo, self._box_hi))

    def _lateral_in_footprint(self, p: Point) -> bool:
        return all(
            lo <= c <= hi
            for c, lo, hi in zip(p[:-1], self.footprint_lo, self.footprint_hi)
        )

    def status(self, p: Point) -> str:
        """One of "boundary", "external", "internal", "deleted"."""
        p = tuple(p)
        y = p[-1]
        if not self._in_box(p):
            if y > 0:
                return "external"
            if y < 0:
                return "internal"
            return "boundary"  # plane tail
        if p in self._deleted:
            return "deleted"
        if p in self._site_index or p in self._extra:
            return "boundary"
        if y == 0 and not self._lateral_in_footprint(p):
            return "boundary"  # tail inside the box but beyond the window
        if p in self._internal:
            return "internal"
        return "external"

    def is_internal(self, p: Point) -> bool:
        return self.status(p) == "internal"

    def is_boundary(self, p: Point) -> bool:
        return self.status(p) == "boundary"

    def is_deleted(self, p: Point) -> bool:
        return tuple(p) in self._deleted

    def deleted_record(self, p: Point) -> CornerRecord | None:
        return self._deleted.get(tuple(p))

    def index_of(self, p: Point) -> int | None:
        """Enumerated boundary index of p, or None off the indexed set."""
        return self._site_index.get(tuple(p))

    def near_index_of(self, p: Point) -> int | None:
        return self._near_index.get(tuple(p))

    def ground_index_of(self, p: Point) -> int | None:
        return self._ground_index.get(tuple(p))

    def classify(self, p: Point) -> PointClass:
        p = tuple(p)
        st = self.status(p)
        if st == "boundary":
            return PointClass("boundary", self._site_index.get(p))
        if st in ("internal", "deleted"):
            return PointClass("internal")
        m = self._near_index.get(p)
        g = self._ground_index.get(p)
        if m is not None:
            return PointClass("near-boundary", m, ground_index=g)
        if g is not None:
            return PointClass("ground", ground_index=g)
        return PointClass("external")

    # -- reparametrization ----------------------------------------------

    def permuted(self, perm: list[int]) -> "Membrane":
        """Membrane with boundary re-enumerated as old index perm[i] -> i+1.

        The permutation must keep non-plane sites within the first
        ``num_nonplane`` positions.
        """
        if sorted(perm) != list(range(1, self.num_sites + 1)):
            raise ValidationError("bijection", detail="not a permutation of indices")
        for pos, old in enumerate(perm[: self.num_nonplane]):
            if self.boundary[old - 1].position[-1] == 0:
                raise ValidationError(
                    "bijection",
                    self.boundary[old - 1].position,
                    "non-plane block must stay within [1, M]",
                )
        new_boundary = [
            BoundaryPoint(i + 1, self.boundary[old - 1].position, self.boundary[old - 1].normal)
            for i, old in enumerate(perm)
        ]
        clone = Membrane.__new__(Membrane)
        clone.__dict__.update(self.__dict__)
        clone.boundary = new_boundary
        clone._site_index = {bp.position: bp.index for bp in new_boundary}
        clone._near_index = {}
        for bp in new_boundary:
            clone._near_index.setdefault(bp.near_point, bp.index)
        # corner neighbor indices follow the new enumeration
        clone.corners = [
            CornerRecord(
                c.removed,
                c.normals,
                c.partners,
                c.images,
                c.boundary_neighbors,
                tuple(clone._site_index.get(s) for s in c.boundary_neighbors),
                c.kind,
            )
            for c in self.corners
        ]
        clone._deleted = {c.removed: c for c in clone.corners}
        return clone


# -- parsing ------------------------------------------------------------


def parse_spec(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid membrane file: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("membrane file must contain a JSON object")
    if "dimension" not in data:
        raise ParseError("missing field 'dimension'")
    d = data["dimension"]
    if not isinstance(d, int) or d < 2:
        raise ParseError(f"dimension must be an integer >= 2, got {d!r}")
    if data.get("tail_level", 0) != 0:
        raise ParseError("tail_level must be 0")
    if d == 2:
        poly = data.get("polyline", [])
        if not isinstance(poly, list):
            raise ParseError("polyline must be a list of [x, y] vertices")
        for v in poly:
            if (
                not isinstance(v, list)
                or len(v) != 2
                or not all(isinstance(c, int) for c in v)
            ):
                raise ParseError(f"polyline vertex {v!r} is not an integer pair")
    else:
        facets = data.get("facets", [])
        if not isinstance(facets, list):
            raise ParseError("facets must be a list")
        for f in facets:
            if not isinstance(f, dict) or not {"axis", "level", "lo", "hi"} <= set(f):
                raise ParseError(f"facet {f!r} needs axis, level, lo, hi")
            if not (0 <= f["axis"] < d):
                raise ParseError(f"facet axis {f['axis']} out of range for d={d}")
            if len(f["lo"]) != d - 1 or len(f["hi"]) != d - 1:
                raise ParseError("facet lo/hi must list the d-1 free axes")
            if not all(isinstance(c, int) for c in f["lo"] + f["hi"] + [f["level"]]):
                raise ParseError("facet coordinates must be integers")
            if any(a > b for a, b in zip(f["lo"], f["hi"])):
                raise ParseError(f"facet {f!r} has lo > hi")
    w = data.get("window", 0)
    if not isinstance(w, int) or w < 0:
        raise ParseError("window must be a non-negative integer")
    return data


def serialize_spec(data: dict) -> str:
    """Canonical byte-stable rendering of a parsed membrane description."""
    return json.dumps(data, sort_keys=True, indent=2, separators=(",", ": ")) + "\n"


# -- rasterization --------------------------------------------------------


def _raster_polyline(poly: list[list[int]]) -> list[Point]:
    if not poly:
        return []
    pts: list[Point] = [tuple(poly[0])]
    for a, b in zip(poly, poly[1:]):
        (x0, y0), (x1, y1) = a, b
        if x0 != x1 and y0 != y1:
            raise ValidationError(
                "accessibility", tuple(b), "diagonal polyline step (forbidden pattern)"
            )
        if x0 == x1 and y0 == y1:
            continue
        if x0 != x1:
            step = 1 if x1 > x0 else -1
            seg = [(x, y0) for x in range(x0 + step, x1 + step, step)]
        else:
            step = 1 if y1 > y0 else -1
            seg = [(x0, y) for y in range(y0 + step, y1 + step, step)]
        pts.extend(seg)
    seen = set()
    for p in pts:
        if p in seen:
            raise ValidationError("bijection", p, "polyline visits a point twice")
        seen.add(p)
    if pts[0][-1] != 0:
        raise ValidationError("compactness", pts[0], "polyline must start on the tail level")
    if pts[-1][-1] != 0:
        raise ValidationError("compactness", pts[-1], "polyline must end on the tail level")
    return pts


def _raster_facets(facets: list[dict], d: int) -> list[Point]:
    """Facet-union points in facet listing order (first listing wins)."""
    pts: list[Point] = []
    seen: set[Point] = set()
    for f in facets:
        axis, level = f["axis"], f["level"]
        free = [a for a in range(d) if a != axis]
        ranges = [range(f["lo"][i], f["hi"][i] + 1) for i in range(d - 1)]
        # lower free axis varies fastest
        for vals in product(*reversed(ranges)):
            coords = [0] * d
            coords[axis] = level
            for a, v in zip(reversed(free), vals):
                coords[a] = v
            p = tuple(coords)
            if p not in seen:
                seen.add(p)
                pts.append(p)
    return pts


# -- building ------------------------------------------------------------


def _flood_external(
    raw: set[Point],
    box_lo: Point,
    box_hi: Point,
    foot_lo: Point,
    foot_hi: Point,
    d: int,
) -> set[Point]:
    """Sites of the box reachable from above without crossing the membrane."""
    dirs = _unit_vectors(d)
    external: set[Point] = set()
    queue: deque[Point] = deque()

    def boundary_like(p: Point) -> bool:
        if p in raw:
            return True
        # plane tails: level 0 outside the non-trivial footprint
        return p[-1] == 0 and not all(
            lo <= c <= hi for c, lo, hi in zip(p[:-1], foot_lo, foot_hi)
        )

    top = box_hi[-1]
    lateral_ranges = [range(lo, hi + 1) for lo, hi in zip(box_lo[:-1], box_hi[:-1])]
    for lat in product(*lateral_ranges):
        p = (*lat, top)
        if not boundary_like(p):
            external.add(p)
            queue.append(p)
    while queue:
        p = queue.popleft()
        for e in dirs:
            q = tuple(a + b for a, b in zip(p, e))
            if not all(lo <= c <= hi for c, lo, hi in zip(q, box_lo, box_hi)):
                continue
            if q in external or boundary_like(q):
                continue
            external.add(q)
            queue.append(q)
    return external


def _perpendicular(a: Point, b: Point) -> bool:
    return sum(x * y for x, y in zip(a, b)) == 0


def build_membrane(source) -> Membrane:
    """Build a normalized membrane from a file path, JSON text, or dict."""
    if isinstance(source, dict):
        data = parse_spec(json.dumps(source))
    else:
        text = source
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and not source.lstrip().startswith("{"):
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        elif not isinstance(source, str):
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        data = parse_spec(text)

    d = data["dimension"]
    name = data.get("name", "")
    window = data.get("window", 0)
    dirs = _unit_vectors(d)

    if d == 2:
        path = _raster_polyline(data.get("polyline", []))
    else:
        path = _raster_facets(data.get("facets", []), d)

    if not path:
        # unperturbed plane
        lo = tuple([0] * (d - 1))
        hi = tuple([-1] * (d - 1))  # empty footprint
        boundary = _window_tails(d, lo, hi, window)
        bps = [
            BoundaryPoint(i + 1, p, (*([0] * (d - 1)), 1)) for i, p in enumerate(boundary)
        ]
        return Membrane(
            d,
            name,
            bps,
            [],
            [],
            0,
            lo,
            hi,
            window,
            set(),
            [],
            tuple([0] * d),
            tuple([-1] * d),
            data,
        )

    lows = [min(p[a] for p in path) for a in range(d)]
    highs = [max(p[a] for p in path) for a in range(d)]
    foot_lo, foot_hi = tuple(lows[:-1]), tuple(highs[:-1])
    box_lo = tuple([*(c - 2 for c in foot_lo), min(lows[-1], 0) - 2])
    box_hi = tuple([*(c + 2 for c in foot_hi), max(highs[-1], 0) + 2])

    raw = set(path)
    external = _flood_external(raw, box_lo, box_hi, foot_lo, foot_hi, d)

    internal: set[Point] = set()
    removed: dict[Point, CornerRecord] = {}
    survivors: dict[Point, Point] = {}  # position -> normal
    for p in path:
        ext_nbrs = []
        for e in dirs:
            q = tuple(a + b for a, b in zip(p, e))
            if q in external:
                ext_nbrs.append((e, q))
        k = len(ext_nbrs)
        if k == 0:
            internal.add(p)
        elif k == 1:
            survivors[p] = ext_nbrs[0][0]
        elif k == 2 and _perpendicular(ext_nbrs[0][0], ext_nbrs[1][0]):
            normals = (ext_nbrs[0][0], ext_nbrs[1][0])
            partners = (ext_nbrs[0][1], ext_nbrs[1][1])
            removed[p] = CornerRecord(
                p, normals, partners, (partners[1], partners[0]), (), (), "liaison"
            )
        elif (
            d == 3
            and k == 3
            and all(
                _perpendicular(a[0], b[0])
                for i, a in enumerate(ext_nbrs)
                for b in ext_nbrs[i + 1 :]
            )
        ):
            normals = tuple(e for e, _ in ext_nbrs)
            partners = tuple(q for _, q in ext_nbrs)
            removed[p] = CornerRecord(
                p, normals, partners, partners, (), (), "blocked"
            )
        else:
            raise ValidationError(
                "boundary", p, f"{k} external neighbours leave the normal undefined"
            )

    def _is_tail(q: Point) -> bool:
        return (
            q[-1] == 0
            and q not in raw
            and not all(lo <= c <= hi for c, lo, hi in zip(q[:-1], foot_lo, foot_hi))
        )

    # membranes must separate: no external site may touch the bulk
    for p in external:
        for e in dirs:
            q = tuple(a + b for a, b in zip(p, e))
            if not all(lo <= c <= hi for c, lo, hi in zip(q, box_lo, box_hi)):
                continue
            if q in raw or q in external or _is_tail(q):
                continue
            raise ValidationError("boundary", q, "bulk point exposed to the exterior")

    # attach surviving absorbing neighbors to the corner records
    corners = []
    for p, rec in removed.items():
        nbrs = []
        for e in dirs:
            q = tuple(a + b for a, b in zip(p, e))
            if q in survivors or _is_tail(q):
                nbrs.append(q)
        corners.append(
            CornerRecord(
                rec.removed,
                rec.normals,
                rec.partners,
                rec.images,
                tuple(nbrs),
                (),
                rec.kind,
            )
        )

    # enumeration: non-plane survivors in traversal order
    nonplane = [p for p in path if p in survivors and p[-1] != 0]
    plane_window = _window_tails(d, foot_lo, foot_hi, window)
    extra_boundary = sorted(p for p in path if p in survivors and p[-1] == 0)

    boundary_points = []
    for i, p in enumerate(nonplane):
        boundary_points.append(BoundaryPoint(i + 1, p, survivors[p]))
    up = (*([0] * (d - 1)), 1)
    for j, p in enumerate(plane_window):
        boundary_points.append(BoundaryPoint(len(nonplane) + j + 1, p, up))

    ground = sorted(
        p
        for p in external
        if p[-1] == 0 and all(lo <= c <= hi for c, lo, hi in zip(p[:-1], foot_lo, foot_hi))
    )

    # everything in the box that is neither exterior nor membrane is bulk
    bulk: set[Point] = set(internal)
    all_ranges = [range(lo, hi + 1) for lo, hi in zip(box_lo, box_hi)]
    for q in product(*all_ranges):
        if q in external or q in raw or _is_tail(q):
            continue
        bulk.add(q)

    membrane = Membrane(
        d,
        name,
        boundary_points,
        ground,
        corners,
        len(nonplane),
        foot_lo,
        foot_hi,
        window,
        bulk,
        extra_boundary,
        box_lo,
        box_hi,
        data,
    )
    # resolve corner neighbor indices under the final enumeration
    membrane.corners = [
        CornerRecord(
            c.removed,
            c.normals,
            c.partners,
            c.images,
            c.boundary_neighbors,
            tuple(membrane.index_of(s) for s in c.boundary_neighbors),
            c.kind,
        )
        for c in corners
    ]
    membrane._deleted = {c.removed: c for c in membrane.corners}
    return membrane


def _window_tails(d: int, foot_lo: Point, foot_hi: Point, window: int) -> list[Point]:
    """Enumerated plane sites: a window of given width around the footprint."""
    if window == 0:
        return []
    if d == 2:
        (xlo,), (xhi,) = foot_lo, foot_hi
        if xhi < xlo:  # planar membrane: window around the origin
            xlo, xhi = 0, -1
        xs = list(range(xlo - window, xlo)) + list(range(xhi + 1, xhi + window + 1))
        return [(x, 0) for x in sorted(xs)]
    pts = []
    ranges = [range(lo - window, hi + window + 1) for lo, hi in zip(foot_lo, foot_hi)]
    for lat in product(*ranges):
        if all(lo <= c <= hi for c, lo, hi in zip(lat, foot_lo, foot_hi)):
            continue
        pts.append((*lat, 0))
    return sorted(pts)


def load_membrane(path) -> Membrane:
    return build_membrane(path)


def reference_membrane_path(key: str):
    """Path of a bundled reference membrane description.

    Keys: square-bump-2d, square-pit-2d, cube-bump-3d, cube-pit-3d.
    """
    res = resources.files("selftransport").joinpath(f"data/membranes/{key}.json")
    if not res.is_file():
        raise ParseError(f"no bundled membrane named {key!r}")
    return res


# -- spec operations -------------------------------------------------------


def classify_point(membrane: Membrane, p) -> PointClass:
    return membrane.classify(tuple(p))


def index_function(membrane: Membrane, p) -> int | None:
    return membrane.index_of(tuple(p))


def detect_corners(membrane: Membrane) -> list[CornerRecord]:
    return list(membrane.corners)
