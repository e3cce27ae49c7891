"""Dual decomposition solver for the flow-and-interference problem.

The Lagrangian of the constrained program separates into one-dimensional
maximizations over each rate component and two-dimensional maximizations
over each link's (bandwidth, interference) pair, for any multiplier vector
and any coordinate-separable smoothing term. That separability drives all
three entry points here:

* ``dual_value``: evaluate the dual function and its maximizer,
* ``minimize_dual_bound``: projected subgradient descent on the dual,
  yielding a certified upper bound on the achievable utility,
* ``augmented_lagrangian_solve``: primal-dual iterations with a quadratic
  proximal term, tracking the best feasible point found.

Internally every solve is run on a normalized copy of the problem: each
variable is divided by its upper bound and every constraint row by its
natural magnitude, so a single step size serves constraints expressed in
Hz, bps and W/Hz. Reported values, points and multipliers are mapped back
to original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import (
    CUSTOM,
    LOG,
    ZERO,
    Bounds,
    DecisionPoint,
    ProblemInstance,
    UtilitySpec,
    _matvec,
    _rmatvec,
    evaluate_constraints,
    evaluate_utility,
    is_feasible,
)

_TINY = 1e-300
_SCALE_SAFETY = 1.0 - 1e-12
_TOTAL_SAFETY = 1.0 - 1e-9


@dataclass
class DualPoint:
    """Nonnegative multipliers, partitioned like the constraint blocks."""

    mu_x: np.ndarray
    mu_r: np.ndarray
    mu_z: np.ndarray
    mu_c: np.ndarray

    def __post_init__(self):
        for name in ("mu_x", "mu_r", "mu_z", "mu_c"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            setattr(self, name, v)
            if v.size and np.any(v < 0):
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def zeros(cls, inst: ProblemInstance) -> "DualPoint":
        mx, mr, nz, nl = inst.constraint_block_sizes()
        return cls(np.zeros(mx), np.zeros(mr), np.zeros(nz), np.zeros(nl))

    def concat(self) -> np.ndarray:
        return np.concatenate([self.mu_x, self.mu_r, self.mu_z, self.mu_c])

    @classmethod
    def from_concat(cls, v: np.ndarray, inst: ProblemInstance) -> "DualPoint":
        mx, mr, nz, nl = inst.constraint_block_sizes()
        parts = np.split(np.asarray(v, dtype=float), [mx, mx + mr, mx + mr + nz])
        return cls(*parts)


@dataclass(frozen=True)
class ProxSpec:
    """Quadratic smoothing term around a center point.

    Defines ``weight * ||theta - center||^2`` applied separately per
    coordinate. The augmented Lagrangian solver uses the bound-normalized
    variant (each squared deviation divided by the coordinate bound
    squared) so one weight serves all units.
    """

    weight: float
    center: DecisionPoint

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("prox weight must be >= 0")

    def for_rate(self, s: int) -> tuple:
        return (self.weight, float(self.center.r[s]))

    def for_link(self, l: int) -> tuple:
        z = float(self.center.z[l]) if self.center.z.size else 0.0
        return (self.weight, (float(self.center.x[l]), z))


@dataclass
class SolverSettings:
    """Iteration counts, step sizes and search resolutions.

    ``dual_step`` is the base of the diminishing schedule a0/sqrt(t) for
    dual bound minimization; ``al_step`` is the fixed multiplier step of
    the augmented Lagrangian iterations, applied to bound-normalized
    constraints. ``prox_weight`` smooths the per-iteration maximization on
    normalized coordinates.
    """

    dual_iters: int = 500
    al_iters: int = 300
    dual_step: float = 1.0
    al_step: float = 0.05
    prox_weight: float = 1e-2
    grid_points: int = 256
    polish: bool = True
    polish_iters: int = 40
    feas_tol: float = 1e-6
    divergence_window: int = 50

    def __post_init__(self):
        if self.dual_iters < 1 or self.al_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.dual_step <= 0 or self.al_step < 0:
            raise ValueError("steps must be positive (al_step may be 0)")
        if self.grid_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.prox_weight < 0 or self.feas_tol < 0:
            raise ValueError("prox weight and tolerance must be >= 0")


@dataclass
class SolveReport:
    """Outcome of an augmented Lagrangian solve.

    ``trace`` columns: iteration, dual value, recovered feasible utility,
    max normalized constraint violation.
    """

    best_bound: float
    best_point: DecisionPoint
    best_utility: float
    multipliers: DualPoint
    trace: np.ndarray
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "best_bound": self.best_bound,
            "best_utility": self.best_utility,
            "diverged": self.diverged,
            "iterations": int(self.trace.shape[0]),
        }

    def trace_rows(self):
        """Rows (iteration, dual_value, primal_utility, max_violation)."""
        for row in self.trace:
            yield (int(row[0]), row[1], row[2], row[3])


def lagrangian(inst: ProblemInstance, point: DecisionPoint, mu: DualPoint) -> float:
    """U(r) plus multiplier-weighted constraint slacks."""
    r, x, z = point.r, point.x, point.z
    val = evaluate_utility(inst, point)
    val += float(mu.mu_x @ (inst.resources.b - _matvec(inst.resources.a, x)))
    val += float(mu.mu_r @ (inst.network.b - _matvec(inst.network.a, r)))
    if inst.n_z:
        val += float(mu.mu_z @ (z - inst.interference.apply(x)))
        cap = inst.capacity.capacity(x, z)
    else:
        cap = inst.capacity.capacity(x)
    val += float(mu.mu_c @ (cap - _matvec(inst.flows.incidence, r)))
    return val


def _abs_rowsums_times(a, v):
    """|A| @ v for dense or sparse A."""
    import scipy.sparse as sp

    if sp.issparse(a):
        return np.asarray(abs(a) @ v).ravel()
    return np.abs(a) @ v


def _golden_max(f, lo, hi, iters: int):
    """Vectorized golden-section maximization of f on [lo, hi] per row."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    invphi2 = 1.0 - invphi
    a = lo.astype(float).copy()
    b = hi.astype(float).copy()
    for _ in range(iters):
        h = b - a
        c = a + invphi2 * h
        d = a + invphi * h
        keep_left = f(c) >= f(d)
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
    return 0.5 * (a + b)


class _Scaled:
    """Bound-normalized view of a problem instance.

    Variables become u = theta / bounds in [0, 1] (coordinates with zero
    bound are pinned at 0) and each constraint row is divided by its bound,
    or by its maximum reach over the box when the bound is zero. Internal
    multipliers nu relate to original ones by mu = nu / row_scale.
    """

    def __init__(self, inst: ProblemInstance):
        self.inst = inst
        b = inst.bounds
        self.rb, self.xb, self.zb = b.r, b.x, b.z
        self.r_pin = self.rb <= 0
        self.x_pin = self.xb <= 0
        self.z_pin = self.zb <= 0 if self.zb.size else np.zeros(0, dtype=bool)

        self.sig_x = self._row_scales(inst.resources.a, inst.resources.b, self.xb)
        self.sig_r = self._row_scales(inst.network.a, inst.network.b, self.rb)
        if inst.n_z:
            self.sig_z = np.where(self.zb > 0, self.zb, 1.0)
        else:
            self.sig_z = np.zeros(0)
        cap_reach = _matvec(inst.flows.incidence, self.rb)
        self.sig_c = np.where(cap_reach > 0, cap_reach, 1.0)

        self.n_z = inst.n_z
        cap = inst.capacity
        if cap.separable and self.n_z:
            self.link_mode = "sep_z"
        elif cap.separable:
            self.link_mode = "sep_fixed"
            self.se_fixed = cap.efficiency(None)
        else:
            self.link_mode = "generic"

    @staticmethod
    def _row_scales(a, b, ub):
        if b.size == 0:
            return np.zeros(0)
        reach = _abs_rowsums_times(a, ub)
        sig = np.where(b > 0, b, np.where(reach > 0, reach, 1.0))
        return sig

    # -- mappings ---------------------------------------------------------
    def point(self, u_r, u_x, u_z) -> DecisionPoint:
        return DecisionPoint(self.rb * u_r, self.xb * u_x, self.zb * u_z)

    def u_of_point(self, p: DecisionPoint):
        u_r = np.where(self.rb > 0, p.r / np.where(self.rb > 0, self.rb, 1.0), 0.0)
        u_x = np.where(self.xb > 0, p.x / np.where(self.xb > 0, self.xb, 1.0), 0.0)
        if self.n_z:
            u_z = np.where(self.zb > 0, p.z / np.where(self.zb > 0, self.zb, 1.0), 0.0)
        else:
            u_z = np.zeros(0)
        return np.clip(u_r, 0, 1), np.clip(u_x, 0, 1), np.clip(u_z, 0, 1)

    def mu_of_nu(self, nu) -> DualPoint:
        inst = self.inst
        mx, mr, nz, nl = inst.constraint_block_sizes()
        sig = np.concatenate([self.sig_x, self.sig_r, self.sig_z, self.sig_c])
        return DualPoint.from_concat(nu / np.where(sig > 0, sig, 1.0), inst)

    def nu_of_mu(self, mu: DualPoint) -> np.ndarray:
        sig = np.concatenate([self.sig_x, self.sig_r, self.sig_z, self.sig_c])
        return mu.concat() * sig

    # -- evaluation -------------------------------------------------------
    def scaled_constraints(self, u_r, u_x, u_z) -> np.ndarray:
        inst = self.inst
        r, x = self.rb * u_r, self.xb * u_x
        blocks = [
            (_matvec(inst.resources.a, x) - inst.resources.b) / self.sig_x,
            (_matvec(inst.network.a, r) - inst.network.b) / self.sig_r,
        ]
        if self.n_z:
            z = self.zb * u_z
            blocks.append((inst.interference.apply(x) - z) / self.sig_z)
            cap = inst.capacity.capacity(x, z)
        else:
            cap = inst.capacity.capacity(x)
        blocks.append((_matvec(inst.flows.incidence, r) - cap) / self.sig_c)
        return np.concatenate(blocks)

    def scaled_lagrangian(self, u_r, u_x, u_z, nu) -> float:
        g = self.scaled_constraints(u_r, u_x, u_z)
        return float(self.inst.utility.evaluate(self.rb * u_r) - nu @ g)

    # -- prices -----------------------------------------------------------
    def prices(self, nu):
        inst = self.inst
        mx, mr, nz, nl = inst.constraint_block_sizes()
        nu_x, nu_r, nu_z, nu_c = np.split(nu, [mx, mx + mr, mx + mr + nz])
        r_price = self.rb * (
            _rmatvec(inst.network.a, nu_r / self.sig_r)
            + _rmatvec(inst.flows.incidence, nu_c / self.sig_c)
        )
        x_price = self.xb * _rmatvec(inst.resources.a, nu_x / self.sig_x)
        if self.n_z:
            x_price += self.xb * inst.interference.apply_t(nu_z / self.sig_z)
            z_coef = nu_z * (self.zb / self.sig_z)
        else:
            z_coef = np.zeros(0)
        cap_w = nu_c / self.sig_c
        return r_price, x_price, z_coef, cap_w


# ---------------------------------------------------------------------------
# component maximizers (normalized coordinates)
# ---------------------------------------------------------------------------


def _rate_argmax_u(util: UtilitySpec, rb, price, prox, pinned, grid_points, polish_iters):
    """Per-component maximizers of U_s(rb*u) - price*u - eps*(u-c)^2 on [0,1]."""
    s_dim = price.size
    u = np.zeros(s_dim)
    eps, center = (None, None) if prox is None else prox
    if eps is not None and np.all(np.asarray(eps) <= 0):
        eps = None

    kinds = util.kinds
    m_zero = (kinds == ZERO) & ~pinned
    if np.any(m_zero):
        if eps is None:
            u[m_zero] = np.where(price[m_zero] < 0, 1.0, 0.0)
        else:
            e = np.broadcast_to(np.asarray(eps, dtype=float), price.shape)
            u[m_zero] = np.clip(
                center[m_zero] - price[m_zero] / (2 * e[m_zero]), 0.0, 1.0
            )

    m_log = (kinds == LOG) & ~pinned
    if np.any(m_log):
        p = price[m_log]
        r_up = rb[m_log]
        fl = util.floors[m_log]
        u_f = np.minimum(fl / r_up, 1.0)
        if eps is None:
            u_int = np.where(p > 0, np.clip(1.0 / np.where(p > 0, p, 1.0), u_f, 1.0), 1.0)
            val_int = np.log(np.maximum(r_up * u_int, fl)) - p * u_int
            val_zero = np.log(fl)
            u[m_log] = np.where(val_int >= val_zero, u_int, 0.0)
        else:
            e = np.broadcast_to(np.asarray(eps, dtype=float), price.shape)[m_log]
            c = center[m_log]
            bq = p - 2 * e * c
            u_int = np.clip((-bq + np.sqrt(bq * bq + 8 * e)) / (4 * e), u_f, 1.0)
            val_int = np.log(np.maximum(r_up * u_int, fl)) - p * u_int - e * (u_int - c) ** 2
            u_flat = np.clip(c - p / (2 * e), 0.0, u_f)
            val_flat = np.log(fl) - p * u_flat - e * (u_flat - c) ** 2
            u[m_log] = np.where(val_int >= val_flat, u_int, u_flat)

    for s in np.nonzero((kinds == CUSTOM) & ~pinned)[0]:
        fn = util.customs[s]
        e_s = 0.0 if eps is None else float(np.broadcast_to(np.asarray(eps), price.shape)[s])
        c_s = 0.0 if eps is None else float(center[s])

        def obj(uu, s=s, fn=fn, e_s=e_s, c_s=c_s):
            val = np.array([fn(rb[s] * t) for t in np.atleast_1d(uu)], dtype=float)
            val -= price[s] * np.atleast_1d(uu)
            if e_s > 0:
                val -= e_s * (np.atleast_1d(uu) - c_s) ** 2
            return val

        grid = np.linspace(0.0, 1.0, grid_points)
        vals = obj(grid)
        j = int(np.argmax(vals))
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, grid_points - 1)]
        u_best = _golden_max(obj, np.array([lo]), np.array([hi]), polish_iters)[0]
        cands = np.array([grid[j], u_best])
        u[s] = float(cands[np.argmax(obj(cands))])
    return u


def _link_argmax_sep_z(sys: _Scaled, kx, px, z_coef, prox, settings: SolverSettings):
    """Separable C = x*se(z): bandwidth is bang-bang per z, search z only."""
    cap = sys.inst.capacity
    zb = sys.zb
    ub_a = np.where(sys.x_pin, 0.0, 1.0)
    eps, cx, cz = (None, None, None) if prox is None else prox
    if eps is not None and eps <= 0:
        eps = None

    def value_at(b):
        # b: (L,) or (L, K) normalized interference
        z = zb[:, None] * b if b.ndim > 1 else zb * b
        se = cap.efficiency(z)
        coef = (kx[:, None] if b.ndim > 1 else kx) * se
        coef = coef - (px[:, None] if b.ndim > 1 else px)
        if eps is None:
            a = np.where(coef > 0, (ub_a[:, None] if b.ndim > 1 else ub_a), 0.0)
            val = a * coef
        else:
            a = np.clip(
                (cx[:, None] if b.ndim > 1 else cx) + coef / (2 * eps),
                0.0,
                ub_a[:, None] if b.ndim > 1 else ub_a,
            )
            val = a * coef - eps * (a - (cx[:, None] if b.ndim > 1 else cx)) ** 2
        val = val + (z_coef[:, None] if b.ndim > 1 else z_coef) * b
        if eps is not None:
            val = val - eps * (b - (cz[:, None] if b.ndim > 1 else cz)) ** 2
        return val

    k = settings.grid_points
    grid = np.linspace(0.0, 1.0, k)
    b_mat = np.broadcast_to(grid, (sys.inst.n_links, k))
    vals = value_at(b_mat)
    j = np.argmax(vals, axis=1)
    b_hat = grid[j]
    if settings.polish:
        lo = grid[np.maximum(j - 1, 0)]
        hi = grid[np.minimum(j + 1, k - 1)]
        b_pol = _golden_max(lambda b: value_at(b), lo, hi, settings.polish_iters)
        cands = [b_hat, b_pol]
    else:
        cands = [b_hat]
    hints = cap.grid_hints()
    if hints is not None:
        cands.append(np.clip(np.where(zb > 0, hints / np.where(zb > 0, zb, 1.0), 0.0), 0.0, 1.0))
    cand = np.stack(cands, axis=1)
    vals = value_at(cand)
    b_best = cand[np.arange(cand.shape[0]), np.argmax(vals, axis=1)]
    b_best = np.where(sys.z_pin, 0.0, b_best)

    z = zb * b_best
    coef = kx * cap.efficiency(z) - px
    if eps is None:
        a_best = np.where(coef > 0, ub_a, 0.0)
    else:
        a_best = np.clip(cx + coef / (2 * eps), 0.0, ub_a)
    return a_best, b_best


def _link_argmax_fixed(sys: _Scaled, kx, px, prox):
    """Fixed spectral efficiency: linear (or prox-quadratic) in bandwidth."""
    coef = kx * sys.se_fixed - px
    ub_a = np.where(sys.x_pin, 0.0, 1.0)
    if prox is None or prox[0] <= 0:
        return np.where(coef > 0, ub_a, 0.0), np.zeros(0)
    eps, cx, _ = prox
    return np.clip(cx + coef / (2 * eps), 0.0, ub_a), np.zeros(0)


def _link_argmax_generic(sys: _Scaled, cap_w, px, z_coef, prox, settings: SolverSettings):
    """Grid search over each link's (bandwidth, interference) box."""
    cap = sys.inst.capacity
    n_links = sys.inst.n_links
    k = settings.grid_points
    a_grid = np.linspace(0.0, 1.0, k)
    b_grid = np.linspace(0.0, 1.0, k) if sys.n_z else np.array([0.0])
    eps, cx, cz = (None, None, None) if prox is None else prox
    if eps is not None and eps <= 0:
        eps = None
    u_x = np.zeros(n_links)
    u_z = np.zeros(n_links) if sys.n_z else np.zeros(0)

    for l in range(n_links):
        a_l = np.array([0.0]) if sys.x_pin[l] else a_grid
        b_l = b_grid if (sys.n_z and not sys.z_pin[l]) else np.array([0.0])
        aa, bb = np.meshgrid(a_l, b_l, indexing="ij")
        c_vals = np.array(
            [
                cap.capacity_single(l, sys.xb[l] * a, (sys.zb[l] * b) if sys.n_z else 0.0)
                for a, b in zip(aa.ravel(), bb.ravel())
            ]
        ).reshape(aa.shape)
        val = cap_w[l] * c_vals - px[l] * aa
        if sys.n_z:
            val = val + z_coef[l] * bb
        if eps is not None:
            val = val - eps * (aa - cx[l]) ** 2
            if sys.n_z:
                val = val - eps * (bb - cz[l]) ** 2
        idx = np.unravel_index(np.argmax(val), val.shape)
        u_x[l] = a_l[idx[0]]
        if sys.n_z:
            u_z[l] = b_l[idx[1]]
    return u_x, u_z


def _theta_hat_u(sys: _Scaled, nu, prox_u, settings: SolverSettings):
    """Jacobi maximization of the (possibly smoothed) Lagrangian per block."""
    r_price, x_price, z_coef, cap_w = sys.prices(nu)
    if prox_u is None:
        rate_prox, link_prox = None, None
    else:
        eps, (ur, ux, uz) = prox_u
        rate_prox = (eps, ur)
        link_prox = (eps, ux, uz if uz.size else np.zeros(sys.inst.n_links))
    u_r = _rate_argmax_u(
        sys.inst.utility,
        sys.rb,
        r_price,
        rate_prox,
        sys.r_pin,
        settings.grid_points,
        settings.polish_iters,
    )
    kx = cap_w * sys.xb
    if sys.link_mode == "sep_z":
        u_x, u_z = _link_argmax_sep_z(sys, kx, x_price, z_coef, link_prox, settings)
    elif sys.link_mode == "sep_fixed":
        u_x, u_z = _link_argmax_fixed(sys, kx, x_price, link_prox)
    else:
        u_x, u_z = _link_argmax_generic(sys, cap_w, x_price, z_coef, link_prox, settings)
    return u_r, u_x, u_z


# ---------------------------------------------------------------------------
# public component maximizers (original units)
# ---------------------------------------------------------------------------


def maximize_rate_component(
    s: int,
    net_price: float,
    utility: UtilitySpec,
    r_bar: float,
    prox=None,
    grid_points: int = 1024,
    polish_iters: int = 60,
) -> float:
    """Maximizer of U_s(r) - price*r (optionally - w*(r-c)^2) on [0, r_bar]."""
    if r_bar <= 0:
        return 0.0
    sub = UtilitySpec(
        kinds=utility.kinds[s : s + 1],
        floors=utility.floors[s : s + 1],
        customs=(utility.customs[s],),
    )
    price_u = np.array([net_price * r_bar])
    if prox is None:
        prox_u = None
    else:
        w, c = prox
        prox_u = (np.array([w * r_bar * r_bar]), np.array([c / r_bar]))
    u = _rate_argmax_u(
        sub,
        np.array([r_bar]),
        price_u,
        prox_u,
        np.zeros(1, dtype=bool),
        grid_points,
        polish_iters,
    )
    return float(u[0] * r_bar)


def maximize_link_component(
    l: int,
    mu_c: float,
    x_price: float,
    mu_z: float,
    capacity,
    bounds: tuple,
    prox=None,
    grid_points: int = 256,
    polish: bool = True,
    polish_iters: int = 60,
) -> tuple:
    """Maximizer of mu_c*C_l(x,z) - x_price*x + mu_z*z on [0,xb] x [0,zb].

    ``prox`` is an optional (weight, (x_center, z_center)) pair adding
    -weight*((x-cx)^2 + (z-cz)^2). Ties go to the smaller coordinate.
    """
    if mu_c < 0 or mu_z < 0:
        raise ValueError("multipliers must be nonnegative")
    xb, zb = bounds
    has_z = bool(capacity.uses_interference and zb is not None and zb > 0)

    def cap_at(x, z):
        return capacity.capacity_single(l, x, z if has_z else 0.0)

    def obj(x, z):
        val = mu_c * cap_at(x, z) - x_price * x + mu_z * z
        if prox is not None:
            w, (cx, cz) = prox
            val -= w * (x - cx) ** 2
            if has_z:
                val -= w * (z - cz) ** 2
        return val

    if xb <= 0:
        xs = np.array([0.0])
    else:
        xs = np.linspace(0.0, xb, grid_points)
    zs = np.linspace(0.0, zb, grid_points) if has_z else np.array([0.0])
    hints = capacity.grid_hints()
    if has_z and hints is not None:
        zs = np.sort(np.unique(np.append(zs, np.clip(hints[l], 0.0, zb))))

    if capacity.separable and prox is None and xb > 0:
        # bandwidth is bang-bang per z level: compare only the endpoints
        xs = np.array([0.0, xb])

    best_val, best_x, best_z = -np.inf, 0.0, 0.0
    for z in zs:
        for x in xs:
            v = obj(x, z)
            if v > best_val:
                best_val, best_x, best_z = v, x, z

    if polish and xb > 0:
        for _ in range(2):
            if has_z and capacity.separable and prox is None:
                pass  # x already exact on {0, xb}
            elif xb > 0:
                dx = xb / max(grid_points - 1, 1)
                lo, hi = max(best_x - dx, 0.0), min(best_x + dx, xb)
                xs_p = _golden_max(
                    lambda t: np.array([obj(float(t_), best_z) for t_ in np.atleast_1d(t)]),
                    np.array([lo]),
                    np.array([hi]),
                    polish_iters,
                )
                if obj(float(xs_p[0]), best_z) > best_val:
                    best_x = float(xs_p[0])
                    best_val = obj(best_x, best_z)
            if has_z:
                dz = zb / max(grid_points - 1, 1)
                lo, hi = max(best_z - dz, 0.0), min(best_z + dz, zb)
                zs_p = _golden_max(
                    lambda t: np.array([obj(best_x, float(t_)) for t_ in np.atleast_1d(t)]),
                    np.array([lo]),
                    np.array([hi]),
                    polish_iters,
                )
                if obj(best_x, float(zs_p[0])) > best_val:
                    best_z = float(zs_p[0])
                    best_val = obj(best_x, best_z)
    return best_x, best_z


# ---------------------------------------------------------------------------
# dual bound and augmented Lagrangian
# ---------------------------------------------------------------------------


def dual_value(inst: ProblemInstance, mu: DualPoint, settings: SolverSettings = None):
    """Dual function value and its maximizing point at multipliers mu."""
    settings = settings or SolverSettings()
    sys = _Scaled(inst)
    nu = sys.nu_of_mu(mu)
    u_r, u_x, u_z = _theta_hat_u(sys, nu, None, settings)
    point = sys.point(u_r, u_x, u_z)
    return lagrangian(inst, point, mu), point


def minimize_dual_bound(inst: ProblemInstance, settings: SolverSettings = None, mu0: DualPoint = None):
    """Projected subgradient descent on the dual bound with best tracking.

    Returns (best multipliers, best bound, trace); trace columns are
    (iteration, dual value, running minimum).
    """
    settings = settings or SolverSettings()
    sys = _Scaled(inst)
    nu = sys.nu_of_mu(mu0) if mu0 is not None else np.zeros(sum(inst.constraint_block_sizes()))
    best_val = np.inf
    best_nu = nu.copy()
    rows = []
    for t in range(1, settings.dual_iters + 1):
        u_r, u_x, u_z = _theta_hat_u(sys, nu, None, settings)
        g = sys.scaled_constraints(u_r, u_x, u_z)
        val = sys.scaled_lagrangian(u_r, u_x, u_z, nu)
        if not np.isfinite(val):
            raise RuntimeError(
                f"dual value became non-finite at iteration {t}; "
                f"max |nu| = {np.max(np.abs(nu)):.3e}"
            )
        if val < best_val:
            best_val = val
            best_nu = nu.copy()
        rows.append((t, val, best_val))
        step = settings.dual_step / math.sqrt(t)
        nu = np.maximum(0.0, nu + step * g)
    return sys.mu_of_nu(best_nu), best_val, np.array(rows)


def augmented_lagrangian_solve(
    inst: ProblemInstance,
    settings: SolverSettings = None,
    theta0: DecisionPoint = None,
    mu0: DualPoint = None,
) -> SolveReport:
    """Primal-dual iterations with quadratic smoothing and feasible tracking.

    Each iteration maximizes the smoothed Lagrangian separately per
    coordinate around the previous iterate, then takes a fixed multiplier
    step along the constraint values (projected to stay nonnegative). The
    best recovered-feasible utility and the best dual value observed are
    reported together.
    """
    settings = settings or SolverSettings()
    sys = _Scaled(inst)
    if theta0 is None:
        theta0 = DecisionPoint.zeros(inst)
    u = sys.u_of_point(theta0)
    nu = sys.nu_of_mu(mu0) if mu0 is not None else np.zeros(sum(inst.constraint_block_sizes()))

    best_point = recover_feasible(inst, theta0)
    best_util = evaluate_utility(inst, best_point)
    best_bound = np.inf
    rows = []
    prev_viol = np.inf
    grow_count = 0
    diverged = False

    for t in range(1, settings.al_iters + 1):
        prox_u = (settings.prox_weight, u)
        u_new = _theta_hat_u(sys, nu, prox_u, settings)
        g = sys.scaled_constraints(*u_new)

        u_free = _theta_hat_u(sys, nu, None, settings)
        dval = sys.scaled_lagrangian(*u_free, nu)
        if not np.isfinite(dval):
            raise RuntimeError(f"dual value became non-finite at iteration {t}")
        best_bound = min(best_bound, dval)

        rec = recover_feasible(inst, sys.point(*u_new))
        util = evaluate_utility(inst, rec)
        if util > best_util:
            best_util = util
            best_point = rec

        viol = float(np.max(g, initial=0.0))
        viol = max(viol, 0.0)
        rows.append((t, dval, util, viol))

        if viol > prev_viol:
            grow_count += 1
            if grow_count >= settings.divergence_window:
                diverged = True
                break
        else:
            grow_count = 0
        prev_viol = viol

        nu = np.maximum(0.0, nu + settings.al_step * g)
        u = u_new

    return SolveReport(
        best_bound=best_bound,
        best_point=best_point,
        best_utility=best_util,
        multipliers=sys.mu_of_nu(nu),
        trace=np.array(rows),
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# feasible-point recovery
# ---------------------------------------------------------------------------


def _scale_rows_to_bounds(a, b, v, passes=4):
    """Shrink positive contributions of each violated row of a@v <= b."""
    import scipy.sparse as sp

    if b.size == 0:
        return v, True
    sparse = sp.issparse(a)
    if sparse:
        a = sp.csr_array(a)
    for _ in range(passes):
        vals = _matvec(a, v) - b
        if np.all(vals <= 0):
            return v, True
        for k in np.nonzero(vals > 0)[0]:
            if sparse:
                start, end = a.indptr[k], a.indptr[k + 1]
                cols = a.indices[start:end]
                coefs = a.data[start:end]
            else:
                cols = np.nonzero(a[k])[0]
                coefs = a[k, cols]
            contrib = coefs * v[cols]
            pos = contrib > 0
            pos_sum = float(np.sum(contrib[pos]))
            if pos_sum <= 0:
                continue
            neg_sum = float(np.sum(contrib[~pos]))
            f = max((b[k] - neg_sum) / pos_sum, 0.0) * _SCALE_SAFETY
            if f < 1.0:
                v[cols[pos]] *= f
    vals = _matvec(a, v) - b
    return v, bool(np.all(vals <= 0))


def _coupling_rows(a, b):
    """Rows of the form +1*total - sum(members) <= 0, detected structurally."""
    import scipy.sparse as sp

    rows = []
    if b.size == 0:
        return rows
    sparse = sp.issparse(a)
    if sparse:
        a = sp.csr_array(a)
    for k in range(b.size):
        if b[k] != 0:
            continue
        if sparse:
            start, end = a.indptr[k], a.indptr[k + 1]
            cols = a.indices[start:end]
            coefs = a.data[start:end]
        else:
            cols = np.nonzero(a[k])[0]
            coefs = a[k, cols]
        pos = coefs > 0
        if np.count_nonzero(pos) == 1 and np.count_nonzero(~pos) >= 1:
            rows.append((int(cols[pos][0]), float(coefs[pos][0]), cols[~pos], coefs[~pos]))
    return rows


def recover_feasible(inst: ProblemInstance, point: DecisionPoint) -> DecisionPoint:
    """Deterministic repair of a candidate point into the feasible set.

    Bandwidths are shrunk to meet the resource rows, interference recomputed
    exactly, rates capped by link capacity and deflated per link, network
    rows enforced by shrinking their positive contributions and coupled
    totals tightened to their member sums. Falls back to zero rates if the
    generic repair cannot close (never happens for cellular instances with
    nonnegative bounds).
    """
    rb, xb = inst.bounds.r, inst.bounds.x
    r = np.clip(point.r, 0.0, rb)
    x = np.clip(point.x, 0.0, xb)

    x, ok = _scale_rows_to_bounds(inst.resources.a, inst.resources.b, x)
    if not ok:
        x = np.zeros_like(x)

    if inst.n_z:
        z = inst.interference.apply(x)
        zb = inst.bounds.z
        over = z > zb
        if np.any(over):
            ratios = np.where(z > 0, zb / np.where(z > 0, z, 1.0), 1.0)
            f = float(np.min(ratios[over], initial=1.0)) * _SCALE_SAFETY
            x = x * f
            z = inst.interference.apply(x)
        cap = inst.capacity.capacity(x, z)
    else:
        z = np.zeros(0)
        cap = inst.capacity.capacity(x)
    cap = np.maximum(cap, 0.0)

    e = inst.flows.incidence
    single = all(len(f) == 1 for f in inst.flows.link_flows)
    flows_of_links = [np.asarray(f, dtype=int) for f in inst.flows.link_flows]
    counts = np.zeros(inst.n_rate)
    for f in flows_of_links:
        counts[f] += 1
    if single and np.all(counts <= 1):
        idx = np.array([f[0] for f in flows_of_links])
        r[idx] = np.minimum(r[idx], cap)
    else:
        for l, f in enumerate(flows_of_links):
            r[f] = np.minimum(r[f], cap[l])
        for l, f in enumerate(flows_of_links):
            s = float(np.sum(r[f]))
            if s > cap[l] and s > 0:
                r[f] *= (cap[l] / s) * _SCALE_SAFETY

    r, ok = _scale_rows_to_bounds(inst.network.a, inst.network.b, r)
    if not ok:
        r = np.zeros_like(r)

    candidate = DecisionPoint(r.copy(), x, z)
    couplings = _coupling_rows(inst.network.a, inst.network.b)
    if couplings:
        r2 = r.copy()
        for tot, coef, cols, coefs in couplings:
            member_sum = float(np.sum(-coefs * r2[cols])) / coef
            r2[tot] = min(member_sum * _TOTAL_SAFETY, rb[tot])
        tightened = DecisionPoint(r2, x, z)
        if is_feasible(inst, tightened, tol=0.0):
            return tightened

    if is_feasible(inst, candidate, tol=0.0):
        return candidate
    return DecisionPoint(np.zeros(inst.n_rate), x, z)


def _max_violation(inst: ProblemInstance, point: DecisionPoint) -> float:
    g = evaluate_constraints(inst, point)
    return float(np.max(g, initial=0.0))
