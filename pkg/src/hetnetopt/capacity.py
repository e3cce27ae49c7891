"""Wireless link capacity models.

A capacity model maps a per-link bandwidth allocation ``x`` (Hz) and an
interference level ``z`` (W/Hz) to a deliverable rate in bps. Physical
models are nondecreasing in ``x``, nonincreasing in ``z`` and deliver zero
rate at zero bandwidth; test fixtures (e.g. :class:`ConstantCapacity`) may
relax these properties deliberately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectralEfficiencyModel:
    """Rate per unit bandwidth as a function of SINR.

    Shannon efficiency degraded by ``loss_db`` and clamped at ``max_se``
    bps/Hz: ``rho(g) = min(log2(1 + g/loss), max_se)``.
    """

    loss_db: float = 3.0
    max_se: float = 4.8

    @property
    def loss(self) -> float:
        return 10.0 ** (self.loss_db / 10.0)

    def rho(self, sinr):
        sinr = np.asarray(sinr, dtype=float)
        return np.minimum(np.log2(1.0 + sinr / self.loss), self.max_se)

    def sinr_at_cap(self) -> float:
        """SINR above which the efficiency clamp is active."""
        return self.loss * (2.0 ** self.max_se - 1.0)

    def to_dict(self) -> dict:
        return {"loss_db": self.loss_db, "max_se": self.max_se}

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralEfficiencyModel":
        return cls(loss_db=d["loss_db"], max_se=d["max_se"])


class LinkCapacityModel:
    """Base class for per-link capacity evaluators.

    Subclasses set ``n_links`` and ``uses_interference`` and implement
    ``capacity``. Models of the form ``C = x * se(z)`` additionally expose
    ``efficiency`` so optimizers can reduce the per-link search to one
    dimension.
    """

    n_links: int
    uses_interference: bool
    separable: bool = False

    def capacity(self, x, z=None):
        raise NotImplementedError

    def capacity_single(self, l: int, x: float, z: float = 0.0) -> float:
        """Capacity of one link; default routes through the vector call."""
        xv = np.zeros(self.n_links)
        xv[l] = x
        zv = None
        if self.uses_interference:
            zv = np.zeros(self.n_links)
            zv[l] = z
        return float(self.capacity(xv, zv)[l])

    def efficiency(self, z=None):
        """Spectral efficiency array for separable models, else None.

        Accepts ``z`` of shape (L,) or (L, K); returns the same shape.
        """
        return None

    def grid_hints(self):
        """Per-link z values worth adding to search grids (or None)."""
        return None

    def to_dict(self) -> dict:
        raise ValueError(f"{type(self).__name__} is not serializable")


class SinrCapacity(LinkCapacityModel):
    """C(x, z) = x * rho(signal / (z + noise)) for each link.

    ``signal`` and ``noise`` are received power spectral densities in W/Hz,
    so the SINR is dimensionless and ``z`` is an interference PSD.
    """

    uses_interference = True
    separable = True

    def __init__(self, signal_psd, noise_psd, se_model: SpectralEfficiencyModel):
        self.signal = np.asarray(signal_psd, dtype=float)
        self.noise = np.asarray(noise_psd, dtype=float)
        self.sem = se_model
        if np.any(self.signal < 0) or np.any(self.noise <= 0):
            raise ValueError("signal must be >= 0 and noise > 0")
        self.n_links = self.signal.size

    def sinr(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim > 1:
            return self.signal[:, None] / (z + self.noise[:, None])
        return self.signal / (z + self.noise)

    def efficiency(self, z=None):
        if z is None:
            z = np.zeros(self.n_links)
        return self.sem.rho(self.sinr(z))

    def capacity(self, x, z=None):
        if z is None:
            z = np.zeros(self.n_links)
        return np.asarray(x, dtype=float) * self.efficiency(z)

    def grid_hints(self):
        # z at which the efficiency clamp releases: signal/(z+noise) = cap SINR
        g_cap = self.sem.sinr_at_cap()
        return np.maximum(self.signal / g_cap - self.noise, 0.0)

    def to_dict(self) -> dict:
        return {
            "type": "sinr",
            "signal_psd": self.signal.tolist(),
            "noise_psd": self.noise.tolist(),
            "se_model": self.sem.to_dict(),
        }


class FixedEfficiencyCapacity(LinkCapacityModel):
    """C(x) = x * se with a constant per-link spectral efficiency.

    Used when interference is frozen at a known level and z is not a
    decision variable.
    """

    uses_interference = False
    separable = True

    def __init__(self, se):
        self.se = np.asarray(se, dtype=float)
        if np.any(self.se < 0):
            raise ValueError("spectral efficiency must be >= 0")
        self.n_links = self.se.size

    def efficiency(self, z=None):
        return self.se

    def capacity(self, x, z=None):
        return np.asarray(x, dtype=float) * self.se

    def to_dict(self) -> dict:
        return {"type": "fixed_se", "se": self.se.tolist()}


class ConstantCapacity(LinkCapacityModel):
    """C(x, z) = c regardless of the allocation.

    Test fixture: intentionally exempt from the C(0, z) = 0 property of
    physical models (the rate cap is wired, not radio).
    """

    uses_interference = False
    separable = False

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self.n_links = self.values.size

    def capacity(self, x, z=None):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.values, x.shape).copy()

    def capacity_single(self, l, x, z=0.0):
        return float(self.values[l])

    def to_dict(self) -> dict:
        return {"type": "constant", "values": self.values.tolist()}


class CallableCapacity(LinkCapacityModel):
    """Per-link capacity from arbitrary callables C_l(x, z).

    Slow path for tests and experiments with non-separable models.
    """

    separable = False

    def __init__(self, fns, uses_interference=True):
        self.fns = tuple(fns)
        self.n_links = len(self.fns)
        self.uses_interference = uses_interference

    def capacity(self, x, z=None):
        x = np.asarray(x, dtype=float)
        if z is None:
            z = np.zeros_like(x)
        z = np.asarray(z, dtype=float)
        return np.array([f(x[i], z[i]) for i, f in enumerate(self.fns)])

    def capacity_single(self, l, x, z=0.0):
        return float(self.fns[l](x, z))


class TabulatedCapacity(LinkCapacityModel):
    """Capacity tabulated on per-link (x, z) grids.

    Off-grid queries snap to the nearest gridpoint, so the model is exact
    on its own grid and piecewise constant elsewhere.
    """

    separable = False

    def __init__(self, x_grids, z_grids, tables):
        self.x_grids = [np.asarray(g, dtype=float) for g in x_grids]
        self.z_grids = [np.asarray(g, dtype=float) for g in z_grids]
        self.tables = [np.asarray(t, dtype=float) for t in tables]
        self.n_links = len(self.tables)
        self.uses_interference = True
        for i in range(self.n_links):
            if self.tables[i].shape != (self.x_grids[i].size, self.z_grids[i].size):
                raise ValueError("table shape must match grids")

    @staticmethod
    def _snap(grid, v):
        return int(np.argmin(np.abs(grid - v)))

    def capacity(self, x, z=None):
        x = np.asarray(x, dtype=float)
        if z is None:
            z = np.zeros_like(x)
        z = np.asarray(z, dtype=float)
        out = np.empty(self.n_links)
        for i in range(self.n_links):
            ix = self._snap(self.x_grids[i], x[i])
            iz = self._snap(self.z_grids[i], z[i])
            out[i] = self.tables[i][ix, iz]
        return out

    def capacity_single(self, l, x, z=0.0):
        ix = self._snap(self.x_grids[l], x)
        iz = self._snap(self.z_grids[l], z)
        return float(self.tables[l][ix, iz])

    def to_dict(self) -> dict:
        return {
            "type": "tabulated",
            "x_grids": [g.tolist() for g in self.x_grids],
            "z_grids": [g.tolist() for g in self.z_grids],
            "tables": [t.tolist() for t in self.tables],
        }


def capacity_from_dict(d: dict) -> LinkCapacityModel:
    kind = d["type"]
    if kind == "sinr":
        return SinrCapacity(
            d["signal_psd"], d["noise_psd"], SpectralEfficiencyModel.from_dict(d["se_model"])
        )
    if kind == "fixed_se":
        return FixedEfficiencyCapacity(d["se"])
    if kind == "constant":
        return ConstantCapacity(d["values"])
    if kind == "tabulated":
        return TabulatedCapacity(d["x_grids"], d["z_grids"], d["tables"])
    raise ValueError(f"unknown capacity model type: {kind}")
