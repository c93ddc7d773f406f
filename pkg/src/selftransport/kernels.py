"""Planar hitting kernels and derived combinatoric coefficients.

The half-space hitting kernel H^y_x is the Fourier coefficient of the
symbol phi(theta)^|y|; D^{y,y'}_x is a finite sum of H kernels and acts as
the discrete Green's function of the half-space Dirichlet problem.  Both
support a killing parameter lambda, a horizontal barrier above the
membrane (absorbing or reflecting) and finite cyclic width, in any lattice
dimension d >= 2.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from functools import lru_cache
from math import gamma as _gamma_fn
from math import pi

import numpy as np

from .errors import DomainError, QuadratureError

_PHI_ONE_EPS = 1e-13


def phi(theta, d: int = 2, lam: float = 1.0):
    """Symbol of the one-level transfer: the root in (0, 1] of
    z^2 - (2d/lam - 2*sum(cos theta_i)) z/... evaluated stably.

    ``theta`` is a scalar (d=2) or an array whose last axis has length
    d-1.  Returns values in (0, 1]; equals 1 only at theta=0 with lam=1.
    """
    if not 0.0 < lam <= 1.0:
        raise DomainError(f"lambda must be in (0, 1], got {lam}")
    if d < 2:
        raise DomainError(f"dimension must be >= 2, got {d}")
    th = np.asarray(theta, dtype=float)
    if d == 2:
        comp = th[..., np.newaxis]
    else:
        if th.shape[-1] != d - 1:
            raise DomainError(
                f"theta must have {d - 1} components for d={d}, got shape {th.shape}"
            )
        comp = th
    # a = d/lam - sum cos(theta_i); write a-1 without cancellation
    s = 2.0 * np.sum(np.sin(comp / 2.0) ** 2, axis=-1) + d * (1.0 / lam - 1.0)
    val = 1.0 / ((s + 1.0) + np.sqrt(s * (s + 2.0)))
    return float(val) if val.ndim == 0 else val


def gamma_coeff(y: int, yprime: int, theta, d: int = 2, lam: float = 1.0):
    """gamma^{(y)}_{y'}(theta) = sum_{j=1}^{min(y,y')} phi^{2j-1+|y-y'|}.

    Zero when y <= 0 or y' <= 0 (empty-sum convention).
    """
    ph = phi(theta, d=d, lam=lam)
    if y <= 0 or yprime <= 0:
        return np.zeros_like(np.asarray(ph, dtype=float)) if np.ndim(ph) else 0.0
    m = min(y, yprime)
    base = abs(y - yprime)
    ph = np.asarray(ph, dtype=float)
    total = np.zeros_like(ph)
    for j in range(1, m + 1):
        total += ph ** (2 * j - 1 + base)
    return float(total) if total.ndim == 0 else total


def barrier_profile(y: int, theta, nn: int, mode: str, d: int = 2, lam: float = 1.0):
    """Vertical profile f^{(N)}_y replacing phi^y under a horizontal barrier.

    ``nn`` is the highest barrier-free level; the barrier line sits at
    nn+1.  ``mode`` is "abs" (absorbing) or "ref" (reflecting).
    """
    if y > nn:
        raise DomainError(f"y={y} above the barrier level {nn}")
    if y < 0:
        raise DomainError(f"profile defined for 0 <= y <= {nn}, got y={y}")
    ph = np.atleast_1d(np.asarray(phi(theta, d=d, lam=lam), dtype=float))
    out = np.empty_like(ph)
    near_one = np.abs(ph - 1.0) < _PHI_ONE_EPS
    reg = ~near_one
    lp = np.log(ph[reg])
    if mode == "abs":
        num = -np.expm1((2 * nn + 2 - 2 * y) * lp)
        den = -np.expm1((2 * nn + 2) * lp)
        out[reg] = num / den * np.exp(y * lp)
        out[near_one] = (nn + 1 - y) / (nn + 1)
    elif mode == "ref":
        num = 1.0 + np.exp((2 * nn + 1 - 2 * y) * lp)
        den = 1.0 + np.exp((2 * nn + 1) * lp)
        out[reg] = num / den * np.exp(y * lp)
        out[near_one] = 1.0
    else:
        raise DomainError(f"unknown barrier mode {mode!r}")
    return float(out[0]) if np.ndim(theta) == 0 and out.size == 1 else out


def cauchy_asymptotic(x, y: int, d: int = 2) -> float:
    """Large-distance form Gamma(d/2)/pi^{d/2} * |y| / (x^2+y^2)^{d/2}."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    r2 = float(np.dot(xa, xa)) + float(y) ** 2
    if r2 == 0.0:
        raise DomainError("asymptotic form undefined at the origin")
    return _gamma_fn(d / 2.0) / pi ** (d / 2.0) * abs(y) / r2 ** (d / 2.0)


@dataclass(frozen=True)
class HorizontalBarrier:
    level: int  # highest barrier-free level; barrier line at level+1
    mode: str  # "abs" | "ref"

    def __post_init__(self):
        if self.mode not in ("abs", "ref"):
            raise DomainError(f"horizontal barrier mode must be abs|ref, got {self.mode!r}")
        if self.level < 1:
            raise DomainError("horizontal barrier level must be >= 1")


@dataclass(frozen=True)
class VerticalBarrier:
    half_width: int  # L: free columns are -L..L in every lateral axis
    mode: str  # "cyclic" | "abs" | "ref"

    def __post_init__(self):
        if self.mode not in ("cyclic", "abs", "ref"):
            raise DomainError(f"vertical barrier mode must be cyclic|abs|ref, got {self.mode!r}")
        if self.half_width < 1:
            raise DomainError("vertical barrier half width must be >= 1")

    @property
    def width(self) -> int:
        return 2 * self.half_width + 1


@dataclass(frozen=True)
class KernelConfig:
    d: int = 2
    lam: float = 1.0
    hbarrier: HorizontalBarrier | None = None
    vbarrier: VerticalBarrier | None = None
    tol: float | None = None  # quadrature tolerance (infinite width only)
    max_grid: int | None = None

    def __post_init__(self):
        if self.d < 2:
            raise DomainError(f"dimension must be >= 2, got {self.d}")
        if not 0.0 < self.lam <= 1.0:
            raise DomainError(f"lambda must be in (0, 1], got {self.lam}")
        if self.tol is None:
            object.__setattr__(self, "tol", 1e-12 if self.d == 2 else 1e-10)
        if self.max_grid is None:
            object.__setattr__(self, "max_grid", 1 << 23 if self.d == 2 else 1 << 12)

    @property
    def finite_width(self) -> bool:
        return self.vbarrier is not None

    def to_json(self) -> str:
        rec = {
            "d": self.d,
            "lam": self.lam,
            "hbarrier": None
            if self.hbarrier is None
            else [self.hbarrier.level, self.hbarrier.mode],
            "vbarrier": None
            if self.vbarrier is None
            else [self.vbarrier.half_width, self.vbarrier.mode],
            "tol": self.tol,
            "max_grid": self.max_grid,
        }
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KernelConfig":
        rec = json.loads(text)
        hb = rec.get("hbarrier")
        vb = rec.get("vbarrier")
        return cls(
            d=rec["d"],
            lam=rec["lam"],
            hbarrier=None if hb is None else HorizontalBarrier(hb[0], hb[1]),
            vbarrier=None if vb is None else VerticalBarrier(vb[0], vb[1]),
            tol=rec.get("tol"),
            max_grid=rec.get("max_grid"),
        )


_CACHE_FORMAT_VERSION = 1


class KernelTable:
    """Cached H rows and derived D rows for one kernel configuration.

    Rows are write-once then immutable; insertion is guarded by a lock so
    independent evaluations may run from multiple threads.  With a finite
    vertical width (2L+1 columns) rows are exact finite Fourier sums; on
    the infinite lattice the theta grid is doubled until successive rows
    agree within ``config.tol``.
    """

    def __init__(self, config: KernelConfig):
        self.config = config
        self._lock = threading.Lock()
        self._h_rows: dict[tuple[bool, int], np.ndarray] = {}
        self._h_grid: dict[tuple[bool, int], int] = {}
        self._d_rows: dict[tuple[int, int], tuple[int, np.ndarray]] = {}
        self._phi_cache: dict[int, np.ndarray] = {}
        if config.finite_width and config.d > 3:
            raise DomainError("finite-width tables support d in {2, 3}")

    # -- theta grids -------------------------------------------------

    def _grid_phi(self, n: int) -> np.ndarray:
        with self._lock:
            cached = self._phi_cache.get(n)
        if cached is not None:
            return cached
        th = 2.0 * pi * np.arange(n) / n
        if self.config.d == 2:
            vals = phi(th, d=2, lam=self.config.lam)
        else:
            t1, t2 = np.meshgrid(th, th, indexing="ij")
            stacked = np.stack([t1, t2], axis=-1)
            vals = phi(stacked, d=3, lam=self.config.lam)
        with self._lock:
            self._phi_cache[n] = vals
        return vals

    def _profile_values(self, y: int, n: int, modified: bool) -> np.ndarray:
        """phi^|y| (plain) or the barrier profile f_y on the n-point grid."""
        ph = self._grid_phi(n)
        if not modified:
            return ph ** abs(y)
        hb = self.config.hbarrier
        out = np.empty_like(ph)
        near_one = np.abs(ph - 1.0) < _PHI_ONE_EPS
        reg = ~near_one
        lp = np.log(ph[reg])
        nn = hb.level
        if hb.mode == "abs":
            out[reg] = -np.expm1((2 * nn + 2 - 2 * y) * lp) / (
                -np.expm1((2 * nn + 2) * lp)
            ) * np.exp(y * lp)
            out[near_one] = (nn + 1 - y) / (nn + 1)
        else:
            out[reg] = (1.0 + np.exp((2 * nn + 1 - 2 * y) * lp)) / (
                1.0 + np.exp((2 * nn + 1) * lp)
            ) * np.exp(y * lp)
            out[near_one] = 1.0
        return out

    # -- H rows ------------------------------------------------------

    def _fourier_row(self, y: int, n: int, modified: bool) -> np.ndarray:
        vals = self._profile_values(y, n, modified)
        if self.config.d == 2:
            return np.fft.ifft(vals).real
        return np.fft.ifft2(vals).real

    def _modified_level(self, y: int) -> bool:
        """Whether level y uses the barrier-modified profile."""
        return self.config.hbarrier is not None and y > 0

    def h_row(self, y: int) -> np.ndarray:
        """Full row of H^y over all lateral offsets (indexed mod grid size).

        For y above an absorbing/reflecting barrier the row is zero.
        """
        y = int(y)
        hb = self.config.hbarrier
        if hb is not None and y > hb.level:
            n = self._row_grid_hint()
            shape = (n,) if self.config.d == 2 else (n, n)
            return np.zeros(shape)
        key = (self._modified_level(y), abs(y) if not self._modified_level(y) else y)
        with self._lock:
            cached = self._h_rows.get(key)
        if cached is not None:
            return cached
        if self.config.finite_width:
            n = self.config.vbarrier.width
            row = self._fourier_row(key[1], n, key[0])
        else:
            row, n = self._converged_row(key[1], key[0])
        with self._lock:
            self._h_rows.setdefault(key, row)
            self._h_grid.setdefault(key, n)
        return row

    def _row_grid_hint(self) -> int:
        if self.config.finite_width:
            return self.config.vbarrier.width
        return 4096

    def _converged_row(self, y: int, modified: bool) -> tuple[np.ndarray, int]:
        if self.config.d != 2:
            raise DomainError(
                "infinite-width d>2 tables evaluate pointwise; full rows need a vertical barrier"
            )
        n = 4096
        prev = None
        while n <= self.config.max_grid:
            row = self._fourier_row(y, n, modified)
            if prev is not None:
                w = len(prev) // 4
                idx = np.r_[0:w, -w:0]
                delta = np.max(np.abs(row[idx] - prev[idx]))
                if delta <= self.config.tol:
                    return row, n
            prev = row
            n *= 2
        raise QuadratureError(
            f"H row y={y} did not converge to {self.config.tol} below grid {self.config.max_grid}"
        )

    def H(self, y: int, dx) -> float:
        """Single kernel value H^y at lateral offset dx (int or (d-1)-tuple)."""
        return float(self.H_at(y, np.asarray([dx]).reshape(1, -1))[0])

    def H_at(self, y: int, dxs: np.ndarray) -> np.ndarray:
        """Vectorized H^y over an array of lateral offsets.

        ``dxs`` has shape (k,) for d=2 or (k, d-1) otherwise.
        """
        y = int(y)
        dxs = np.asarray(dxs, dtype=int)
        if self.config.d == 2:
            flat = dxs.reshape(-1)
        else:
            flat = dxs.reshape(-1, self.config.d - 1)
        if y == 0:
            if self.config.d == 2:
                return (flat == 0).astype(float)
            return np.all(flat == 0, axis=-1).astype(float)
        if not self.config.finite_width and self.config.d != 2:
            return np.array([self._pointwise_h(y, tuple(p)) for p in flat])
        row = self.h_row(y)
        n = row.shape[0]
        if not self.config.finite_width:
            if np.any(np.abs(flat) > n // 4):
                raise QuadratureError(
                    f"offset beyond converged window (|dx|<= {n // 4}) for y={y}"
                )
        if self.config.d == 2:
            return row[np.mod(flat, n)]
        return row[np.mod(flat[:, 0], n), np.mod(flat[:, 1], n)]

    def _pointwise_h(self, y: int, dx: tuple[int, int]) -> float:
        """Streaming 2-fold Fourier sum for the infinite-width d=3 kernel."""
        hb = self.config.hbarrier
        modified = self._modified_level(y)
        if hb is not None and y > hb.level:
            return 0.0
        yy = y if modified else abs(y)
        n = 256
        prev = None
        while n <= self.config.max_grid:
            val = self._pointwise_sum(yy, dx, n, modified)
            if prev is not None and abs(val - prev) <= self.config.tol:
                return val
            prev = val
            n *= 2
        raise QuadratureError(
            f"pointwise H (y={y}, dx={dx}) did not converge below grid {self.config.max_grid}"
        )

    def _pointwise_sum(self, y: int, dx: tuple[int, int], n: int, modified: bool) -> float:
        th = 2.0 * pi * np.arange(n) / n
        c2 = np.cos(dx[1] * th)
        cos_t = np.cos(th)
        acc = 0.0
        nn = self.config.hbarrier.level if modified else 0
        mode = self.config.hbarrier.mode if modified else None
        base = 3.0 / self.config.lam
        for j1 in range(n):
            a = base - cos_t[j1] - cos_t
            ph = 1.0 / (a + np.sqrt((a - 1.0) * (a + 1.0)))
            if not modified:
                f = ph**y
            else:
                f = np.empty_like(ph)
                near = np.abs(ph - 1.0) < _PHI_ONE_EPS
                lp = np.log(ph[~near])
                if mode == "abs":
                    f[~near] = -np.expm1((2 * nn + 2 - 2 * y) * lp) / (
                        -np.expm1((2 * nn + 2) * lp)
                    ) * np.exp(y * lp)
                    f[near] = (nn + 1 - y) / (nn + 1)
                else:
                    f[~near] = (1.0 + np.exp((2 * nn + 1 - 2 * y) * lp)) / (
                        1.0 + np.exp((2 * nn + 1) * lp)
                    ) * np.exp(y * lp)
                    f[near] = 1.0
            acc += np.cos(dx[0] * th[j1]) * float(np.dot(c2, f))
        return acc / (n * n)

    # -- D rows ------------------------------------------------------

    def d_row(self, y: int, yprime: int) -> tuple[int, np.ndarray]:
        """(grid size, row) of D^{y,y'} over all lateral offsets."""
        y, yprime = int(y), int(yprime)
        key = (y, yprime)
        with self._lock:
            cached = self._d_rows.get(key)
        if cached is not None:
            return cached
        if y * yprime <= 0:
            n = self._row_grid_hint()
            shape = (n,) if self.config.d == 2 else (n, n)
            entry = (n, np.zeros(shape))
        else:
            m = min(abs(y), abs(yprime))
            base = abs(y - yprime)
            levels = [2 * j - 1 + base for j in range(1, m + 1)]
            sign = 1 if y > 0 else -1
            rows = [self.h_row(sign * lv) for lv in levels]
            if not self.config.finite_width:
                # recompute on the largest grid so the sum stays aligned
                nmax = max(r.shape[0] for r in rows)
                rows = [
                    r
                    if r.shape[0] == nmax
                    else self._fourier_row(
                        lv, nmax, self._modified_level(sign * lv)
                    )
                    for r, lv in zip(rows, levels)
                ]
                entry = (nmax, np.sum(rows, axis=0))
            else:
                entry = (rows[0].shape[0], np.sum(rows, axis=0))
        with self._lock:
            self._d_rows.setdefault(key, entry)
        return entry

    def D(self, y: int, yprime: int, dx) -> float:
        return float(self.D_at(y, yprime, np.asarray([dx]).reshape(1, -1))[0])

    def D_at(self, y: int, yprime: int, dxs: np.ndarray) -> np.ndarray:
        """Vectorized D^{y,y'} over lateral offsets (0 when y*y' <= 0)."""
        dxs = np.asarray(dxs, dtype=int)
        flat = dxs.reshape(-1) if self.config.d == 2 else dxs.reshape(-1, self.config.d - 1)
        if y * yprime <= 0:
            return np.zeros(flat.shape[0])
        if not self.config.finite_width and self.config.d != 2:
            m = min(abs(y), abs(yprime))
            base = abs(y - yprime)
            sign = 1 if y > 0 else -1
            out = np.zeros(flat.shape[0])
            for j in range(1, m + 1):
                out += self.H_at(sign * (2 * j - 1 + base), flat)
            return out
        n, row = self.d_row(y, yprime)
        if not self.config.finite_width and np.any(np.abs(flat) > n // 4):
            raise QuadratureError("offset beyond converged window for D row")
        if self.config.d == 2:
            return row[np.mod(flat, n)]
        return row[np.mod(flat[:, 0], n), np.mod(flat[:, 1], n)]

    # -- persistence ---------------------------------------------------

    def save(self, path) -> None:
        """Write cached rows to a versioned .npz cache file."""
        with self._lock:
            payload = {
                "__version__": np.array([_CACHE_FORMAT_VERSION]),
                "__config__": np.frombuffer(
                    self.config.to_json().encode(), dtype=np.uint8
                ),
            }
            for (mod, y), row in self._h_rows.items():
                payload[f"h_{int(mod)}_{y}"] = row
        np.savez_compressed(path, **payload)

    @classmethod
    def load(cls, path) -> "KernelTable":
        from .errors import ParseError

        data = np.load(path)
        version = int(data["__version__"][0])
        if version != _CACHE_FORMAT_VERSION:
            raise ParseError(f"unsupported kernel cache version {version}")
        config = KernelConfig.from_json(bytes(data["__config__"]).decode())
        tab = cls(config)
        for name in data.files:
            if name.startswith("h_"):
                _, mod, y = name.split("_")
                row = data[name]
                key = (bool(int(mod)), int(y))
                tab._h_rows[key] = row
                tab._h_grid[key] = row.shape[0]
        return tab


@lru_cache(maxsize=64)
def table(config: KernelConfig) -> KernelTable:
    """Shared per-config kernel table."""
    return KernelTable(config)


def H(x, y: int, config: KernelConfig) -> float:
    """Planar hitting kernel H^y_x under ``config``."""
    return table(config).H(y, x)


def D(x, y: int, yprime: int, config: KernelConfig) -> float:
    """Half-space Green coefficient D^{y,y'}_x under ``config``."""
    return table(config).D(y, yprime, x)
