"""Independent verification engines: Monte-Carlo walks, a dense finite-box
Laplace solver, and exact time-stepping.

All three consume one lattice graph derived from the normalized membrane
and a finite box (vertical barriers on every lateral axis plus a
horizontal barrier), so corner surgery and barrier conventions cannot
drift between the analytic construction and its oracles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from numba import njit, prange
from scipy.linalg import lu_factor, lu_solve

from .errors import DomainError, MaxStepsExceeded, SingularMatrixError
from .geometry import Membrane, Point, SiteSet
from .kernels import KernelConfig

logger = logging.getLogger(__name__)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class BoxSpec:
    """Finite box: lateral half-width L per axis plus a horizontal barrier."""

    level: int  # highest barrier-free level (barrier line at level+1)
    hmode: str  # "abs" | "ref"
    half_width: int  # L: free lateral columns -L..L
    vmode: str  # "cyclic" | "abs" | "ref"

    def __post_init__(self):
        if self.hmode not in ("abs", "ref"):
            raise DomainError(f"hmode must be abs|ref, got {self.hmode!r}")
        if self.vmode not in ("cyclic", "abs", "ref"):
            raise DomainError(f"vmode must be cyclic|abs|ref, got {self.vmode!r}")

    @property
    def width(self) -> int:
        return 2 * self.half_width + 1


def box_from_config(config: KernelConfig) -> BoxSpec:
    """The finite box described by a kernel configuration's barriers."""
    if config.hbarrier is None or config.vbarrier is None:
        raise DomainError(
            "a finite box needs both a horizontal and a vertical barrier"
        )
    return BoxSpec(
        config.hbarrier.level,
        config.hbarrier.mode,
        config.vbarrier.half_width,
        config.vbarrier.mode,
    )


class LatticeGraph:
    """External sites of a boxed membrane with surgery-aware adjacency.

    ``nbr[i, k]`` encodes the move from site i in direction k:
    ``>= 0`` another external site (self for reflecting/blocked moves),
    ``-1`` absorption at the box barrier, ``<= -2`` absorption at the
    boundary site with id ``-code - 2``.  Boundary ids ``< membrane.num_sites``
    are the enumerated sites (id = m - 1); higher ids are absorbing sites
    off the enumerated set (plane tails beyond the window, unlisted
    plane-level survivors).
    """

    BARRIER = -1

    def __init__(self, membrane: Membrane, box: BoxSpec):
        d = membrane.d
        L = box.half_width
        if any(hi > L - 1 or lo < -L + 1 for lo, hi in zip(membrane.footprint_lo, membrane.footprint_hi)):
            raise DomainError("membrane footprint must lie strictly inside the box")
        if box.level <= membrane.N:
            raise DomainError("horizontal barrier must sit above the membrane")
        self.membrane = membrane
        self.box = box
        ymin = -membrane.Nstar
        lateral = [range(-L, L + 1)] * (d - 1)
        sites: list[Point] = []
        index: dict[Point, int] = {}
        for lat in product(*lateral):
            for y in range(ymin, box.level + 1):
                p = (*lat, y)
                if membrane.status(p) == "external":
                    index[p] = len(sites)
                    sites.append(p)
        self.sites = sites
        self.index = index

        self.boundary_ids: dict[Point, int] = {
            bp.position: bp.index - 1 for bp in membrane.boundary
        }
        self.boundary_points: list[Point] = [bp.position for bp in membrane.boundary]

        def boundary_id(p: Point) -> int:
            bid = self.boundary_ids.get(p)
            if bid is None:
                bid = len(self.boundary_points)
                self.boundary_ids[p] = bid
                self.boundary_points.append(p)
            return bid

        two_d = 2 * d
        nbr = np.empty((len(sites), two_d), dtype=np.int64)
        dirs = []
        for axis in range(d):
            for s in (1, -1):
                e = [0] * d
                e[axis] = s
                dirs.append(tuple(e))
        for i, p in enumerate(sites):
            for k, e in enumerate(dirs):
                q = [a + b for a, b in zip(p, e)]
                # lateral barrier crossings
                wrapped = False
                for ax in range(d - 1):
                    if q[ax] > L or q[ax] < -L:
                        if box.vmode == "cyclic":
                            q[ax] = -L if q[ax] > L else L
                            wrapped = True
                        elif box.vmode == "abs":
                            nbr[i, k] = self.BARRIER
                            break
                        else:  # reflecting: stay put
                            nbr[i, k] = i
                            break
                else:
                    qy = q[-1]
                    if qy > box.level:
                        nbr[i, k] = self.BARRIER if box.hmode == "abs" else i
                        continue
                    qt = tuple(q)
                    st = membrane.status(qt)
                    if st == "external":
                        nbr[i, k] = index[qt]
                    elif st == "boundary":
                        nbr[i, k] = -2 - boundary_id(qt)
                    elif st == "deleted":
                        rec = membrane.deleted_record(qt)
                        if wrapped:
                            raise DomainError("membrane touches the cyclic seam")
                        j = rec.partners.index(p)
                        image = rec.images[j]
                        nbr[i, k] = i if image == p else index[image]
                    else:  # internal: separation guarantees this cannot happen
                        raise DomainError(f"external site {p} adjacent to bulk {qt}")
                    continue
        self.nbr = nbr
        self.dirs = dirs

    @property
    def num_listed(self) -> int:
        return self.membrane.num_sites

    def site_id(self, p: Point) -> int:
        idx = self.index.get(tuple(p))
        if idx is None:
            raise DomainError(f"{tuple(p)} is not an external site of the box")
        return idx


# -- dense solver ----------------------------------------------------------


class DenseSolution:
    """Exact finite-box hitting probabilities for a set of target sites."""

    def __init__(self, graph: LatticeGraph, targets: list[int], values: np.ndarray):
        self.graph = graph
        self.targets = targets  # enumerated indices m
        self._col = {m: j for j, m in enumerate(targets)}
        self.values = values  # (num external sites, len targets)

    def value(self, p: Point, n: int) -> float:
        """P_p(n): probability of first contact at enumerated site n."""
        p = tuple(p)
        j = self._col[n]
        bid = self.graph.boundary_ids.get(p)
        if bid is not None:
            return 1.0 if bid == n - 1 else 0.0
        return float(self.values[self.graph.site_id(p), j])

    def row(self, p: Point) -> np.ndarray:
        p = tuple(p)
        return self.values[self.graph.site_id(p)].copy()


def dense_box_solve(
    membrane: Membrane, box: BoxSpec, targets: SiteSet | None = None
) -> DenseSolution:
    """Directly solve the discrete Laplace system on the boxed lattice.

    The primary deterministic oracle: no kernels, no Fourier sums, just
    the boxed linear system with indicator boundary values.
    """
    graph = LatticeGraph(membrane, box)
    sites = targets.indices if targets is not None else tuple(
        range(1, membrane.num_sites + 1)
    )
    ns = len(graph.sites)
    two_d = 2 * membrane.d
    A = np.zeros((ns, ns))
    np.fill_diagonal(A, float(two_d))
    rhs = np.zeros((ns, len(sites)))
    col = {m: j for j, m in enumerate(sites)}
    for i in range(ns):
        for k in range(two_d):
            code = graph.nbr[i, k]
            if code >= 0:
                A[i, code] -= 1.0
            elif code <= -2:
                bid = -2 - code
                m = bid + 1
                if bid < graph.num_listed and m in col:
                    rhs[i, col[m]] += 1.0
    try:
        lu = lu_factor(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularMatrixError(str(exc)) from exc
    values = lu_solve(lu, rhs)
    return DenseSolution(graph, list(sites), values)


# -- exact time stepping ---------------------------------------------------


def time_stepped_distribution(
    membrane: Membrane, box: BoxSpec, start: Point, t_max: int
) -> np.ndarray:
    """P^{(t)}(n) for t = 0..t_max by applying the one-step transition.

    Rows are steps, columns the enumerated boundary sites; mass absorbed
    off the enumerated set (barrier or unlisted boundary) is dropped.
    """
    graph = LatticeGraph(membrane, box)
    two_d = 2 * membrane.d
    p = np.zeros(len(graph.sites))
    p[graph.site_id(start)] = 1.0
    hits = np.zeros((t_max + 1, membrane.num_sites))
    for t in range(1, t_max + 1):
        share = p / two_d
        nxt = np.zeros_like(p)
        for k in range(two_d):
            code = graph.nbr[:, k]
            ext = code >= 0
            np.add.at(nxt, code[ext], share[ext])
            absorbed = code <= -2
            if np.any(absorbed):
                bids = -2 - code[absorbed]
                listed = bids < graph.num_listed
                np.add.at(hits[t], bids[listed], share[absorbed][listed])
        p = nxt
        if not p.any():
            break
    return hits


# -- Monte-Carlo walker ----------------------------------------------------


@dataclass(frozen=True)
class WalkConfig:
    trials: int
    seed: int
    box: BoxSpec
    max_steps: int = 100_000_000

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError("trials must be >= 1")


@dataclass
class WalkReport:
    start_index: int
    trials: int
    seed: int
    counts: np.ndarray  # per enumerated boundary site
    offlist_count: int  # absorbed at boundary sites off the enumerated set
    barrier_count: int

    def empirical(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.offlist_count + self.barrier_count


@njit(cache=True, parallel=True)
def _walk_trials(nbr, start, n_trials, seed, max_steps, two_d, reject_limit):
    out = np.empty(n_trials, dtype=np.int64)
    for t in prange(n_trials):
        s = np.uint64(seed) ^ np.uint64(t)
        pos = start
        outcome = np.int64(-2)  # max-steps sentinel
        for _ in range(max_steps):
            # splitmix64 stream seeded by seed^trial
            s = s + np.uint64(0x9E3779B97F4A7C15)
            z = s
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            if reject_limit != np.uint64(0):
                while z >= reject_limit:
                    s = s + np.uint64(0x9E3779B97F4A7C15)
                    z = s
                    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                    z = z ^ (z >> np.uint64(31))
            k = np.int64(z % np.uint64(two_d))
            code = nbr[pos, k]
            if code >= 0:
                pos = code
            else:
                outcome = np.int64(-1) if code == -1 else (-code - np.int64(2))
                break
        out[t] = outcome
    return out


def run_walks(membrane: Membrane, config: WalkConfig, start_index: int) -> WalkReport:
    """Simple-random-walk trials from the near-boundary point of a site.

    Each trial runs on its own splitmix64 stream derived as seed^trial, so
    trials are independent of scheduling and merging is associative.
    """
    graph = LatticeGraph(membrane, config.box)
    if not 1 <= start_index <= membrane.num_sites:
        raise DomainError(f"start index {start_index} outside the enumerated set")
    start_site = membrane.near_site(start_index)
    start = graph.site_id(start_site)
    two_d = 2 * membrane.d
    rem = (1 << 64) % two_d
    reject_limit = np.uint64((1 << 64) - rem) if rem else np.uint64(0)
    outcomes = _walk_trials(
        graph.nbr,
        np.int64(start),
        config.trials,
        np.uint64(config.seed),
        config.max_steps,
        np.int64(two_d),
        reject_limit,
    )
    if np.any(outcomes == -2):
        raise MaxStepsExceeded(
            f"{int(np.sum(outcomes == -2))} trials exceeded {config.max_steps} steps"
        )
    barrier = int(np.sum(outcomes == -1))
    hit = outcomes[outcomes >= 0]
    counts_all = np.bincount(hit, minlength=len(graph.boundary_points))
    counts = counts_all[: membrane.num_sites].astype(np.int64)
    offlist = int(counts_all[membrane.num_sites :].sum())
    return WalkReport(
        start_index=start_index,
        trials=config.trials,
        seed=config.seed,
        counts=counts,
        offlist_count=offlist,
        barrier_count=barrier,
    )


def deviation_alpha(exact_row: np.ndarray, report: WalkReport) -> float:
    """max_n |Q - Qtilde| / sqrt(Q) * sqrt(N_t) over sites with Q > 0."""
    exact = np.asarray(exact_row, dtype=float)
    emp = report.empirical()
    mask = exact > 0.0
    excluded = int(np.sum(~mask))
    if excluded:
        logger.debug(
            "deviation_alpha: excluded %d zero-probability sites for start %d",
            excluded,
            report.start_index,
        )
    dev = np.abs(exact[mask] - emp[mask]) / np.sqrt(exact[mask])
    return float(np.max(dev) * np.sqrt(report.trials))
