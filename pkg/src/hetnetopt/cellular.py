"""Mapping of cellular scenarios onto the generic optimization program.

A scenario is a downlink snapshot: base stations with total bandwidth and
a fixed transmit power spectral density, mobiles, candidate flows (each
through exactly one BS-MS pair), linear channel gains and per-flow noise.
``build_instance`` turns it into a :class:`~hetnetopt.problem.ProblemInstance`
whose rate vector stacks the per-mobile totals first and the per-flow rates
after them.

Interference normalization: a base station's contribution to the
interference PSD at a victim flow scales with its fractional bandwidth
utilization, reaching ``H * P`` exactly at full load. Internally all
quantities are SI (bps, Hz, W/Hz); dB/dBm/MHz appear only at the JSON
boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .capacity import FixedEfficiencyCapacity, SinrCapacity, SpectralEfficiencyModel
from .problem import (
    Bounds,
    FlowGraph,
    InterferenceMap,
    NetworkConstraints,
    ProblemInstance,
    ResourceConstraints,
    UtilitySpec,
)

MACRO, PICO = 0, 1

DEFAULT_RATE_FLOOR_BPS = 1e3


class InterferenceMode(enum.Enum):
    """How interference enters the optimization.

    FIXED_POWER freezes every interferer at full utilization (constant
    spectral efficiency per link, interference not a variable);
    POWER_REDUCTION couples interference to the interferers' bandwidth
    allocations through the gain matrix.
    """

    FIXED_POWER = "fixed"
    POWER_REDUCTION = "pr"


@dataclass
class CellularScenario:
    """One downlink snapshot: stations, mobiles, candidate flows, gains."""

    bs_bandwidth_hz: np.ndarray      # (n_bs,)
    bs_psd_w_per_hz: np.ndarray      # (n_bs,) transmit PSD
    bs_tier: np.ndarray              # (n_bs,) MACRO or PICO
    n_ms: int
    flow_bs: np.ndarray              # (n_flows,) serving BS per flow
    flow_ms: np.ndarray              # (n_flows,) receiving MS per flow
    gains: np.ndarray                # (n_flows, n_bs) linear channel gains
    noise_psd: np.ndarray            # (n_flows,) W/Hz at each flow receiver
    se_model: SpectralEfficiencyModel = field(default_factory=SpectralEfficiencyModel)
    backhaul_bps: np.ndarray = None  # (n_bs,), np.inf when uncapped
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bs_bandwidth_hz = np.asarray(self.bs_bandwidth_hz, dtype=float)
        self.bs_psd_w_per_hz = np.asarray(self.bs_psd_w_per_hz, dtype=float)
        self.bs_tier = np.asarray(self.bs_tier, dtype=int)
        self.flow_bs = np.asarray(self.flow_bs, dtype=int)
        self.flow_ms = np.asarray(self.flow_ms, dtype=int)
        self.gains = np.asarray(self.gains, dtype=float)
        self.noise_psd = np.asarray(self.noise_psd, dtype=float)
        if self.backhaul_bps is None:
            self.backhaul_bps = np.full(self.n_bs, np.inf)
        else:
            self.backhaul_bps = np.asarray(self.backhaul_bps, dtype=float)
        if np.any(self.bs_bandwidth_hz <= 0):
            raise ValueError("bandwidths must be positive")
        if np.any(self.gains <= 0):
            raise ValueError("channel gains must be positive")
        if self.gains.shape != (self.n_flows, self.n_bs):
            raise ValueError("gain matrix shape mismatch")
        if self.noise_psd.shape != (self.n_flows,) or np.any(self.noise_psd <= 0):
            raise ValueError("per-flow noise PSD must be positive")
        if np.any(self.flow_bs < 0) or np.any(self.flow_bs >= self.n_bs):
            raise ValueError("flow serving BS out of range")
        if np.any(self.flow_ms < 0) or np.any(self.flow_ms >= self.n_ms):
            raise ValueError("flow MS out of range")
        seen = set(zip(self.flow_bs.tolist(), self.flow_ms.tolist()))
        if len(seen) != self.n_flows:
            raise ValueError("duplicate BS-MS flow")
        counts = np.bincount(self.flow_ms, minlength=self.n_ms)
        if np.any(counts == 0):
            raise ValueError("every mobile needs at least one candidate flow")
        self._flows_by_bs = [np.nonzero(self.flow_bs == j)[0] for j in range(self.n_bs)]
        self._flows_by_ms = [np.nonzero(self.flow_ms == i)[0] for i in range(self.n_ms)]

    @property
    def n_bs(self) -> int:
        return self.bs_bandwidth_hz.size

    @property
    def n_flows(self) -> int:
        return self.flow_bs.size

    def flows_by_bs(self, j: int) -> np.ndarray:
        return self._flows_by_bs[j]

    def flows_by_ms(self, i: int) -> np.ndarray:
        return self._flows_by_ms[i]

    @property
    def serving_gain(self) -> np.ndarray:
        return self.gains[np.arange(self.n_flows), self.flow_bs]

    def ue_gains(self) -> np.ndarray:
        """Per-mobile channel gain row to every BS (n_ms, n_bs)."""
        first_flow = np.array([f[0] for f in self._flows_by_ms])
        return self.gains[first_flow]

    def rsrp_watts(self) -> np.ndarray:
        """Wideband received power per (mobile, BS) in watts."""
        return self.ue_gains() * (self.bs_psd_w_per_hz * self.bs_bandwidth_hz)[None, :]

    def to_dict(self) -> dict:
        """JSON form with boundary units: dB, dBm, MHz, Mbps."""
        tx_dbm = 10 * np.log10(self.bs_psd_w_per_hz * self.bs_bandwidth_hz * 1e3)
        bh = np.where(np.isinf(self.backhaul_bps), -1.0, self.backhaul_bps / 1e6)
        return {
            "bs": {
                "bandwidth_mhz": (self.bs_bandwidth_hz / 1e6).tolist(),
                "tx_power_dbm": tx_dbm.tolist(),
                "tier": ["pico" if t == PICO else "macro" for t in self.bs_tier],
                "backhaul_mbps": bh.tolist(),
            },
            "n_ms": self.n_ms,
            "flows": {"bs": self.flow_bs.tolist(), "ms": self.flow_ms.tolist()},
            "gains_db": (10 * np.log10(self.gains)).tolist(),
            "noise_psd_dbm_per_hz": (10 * np.log10(self.noise_psd * 1e3)).tolist(),
            "se_model": self.se_model.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellularScenario":
        bw = np.asarray(d["bs"]["bandwidth_mhz"], dtype=float) * 1e6
        tx_w = 10 ** (np.asarray(d["bs"]["tx_power_dbm"], dtype=float) / 10) / 1e3
        bh = np.asarray(d["bs"]["backhaul_mbps"], dtype=float)
        return cls(
            bs_bandwidth_hz=bw,
            bs_psd_w_per_hz=tx_w / bw,
            bs_tier=np.array([PICO if t == "pico" else MACRO for t in d["bs"]["tier"]]),
            n_ms=d["n_ms"],
            flow_bs=np.asarray(d["flows"]["bs"]),
            flow_ms=np.asarray(d["flows"]["ms"]),
            gains=10 ** (np.asarray(d["gains_db"], dtype=float) / 10),
            noise_psd=10 ** (np.asarray(d["noise_psd_dbm_per_hz"], dtype=float) / 10) / 1e3,
            se_model=SpectralEfficiencyModel.from_dict(d["se_model"]),
            backhaul_bps=np.where(bh < 0, np.inf, bh * 1e6),
            meta=d.get("meta", {}),
        )


def enumerate_flows(
    ue_gains: np.ndarray,
    bs_tier: np.ndarray,
    bs_psd: np.ndarray,
    bs_bandwidth: np.ndarray,
    macro_candidates: int = 1,
    pico_candidates: int = 2,
):
    """Candidate flows per mobile: strongest macros and strongest picos.

    Selection orders by wideband received power with ties broken toward the
    lower BS index; flows are emitted sorted by (mobile index, BS index).
    Returns (flow_ms, flow_bs) index arrays.
    """
    ue_gains = np.asarray(ue_gains, dtype=float)
    n_ms, n_bs = ue_gains.shape
    rx = ue_gains * (np.asarray(bs_psd) * np.asarray(bs_bandwidth))[None, :]
    tier = np.asarray(bs_tier)
    flow_ms, flow_bs = [], []
    for i in range(n_ms):
        chosen = []
        for t, count in ((MACRO, macro_candidates), (PICO, pico_candidates)):
            idx = np.nonzero(tier == t)[0]
            if idx.size == 0 or count == 0:
                continue
            order = idx[np.lexsort((idx, -rx[i, idx]))]
            chosen.extend(order[:count].tolist())
        if not chosen:
            raise ValueError(f"mobile {i} has no candidate base stations")
        for j in sorted(chosen):
            flow_ms.append(i)
            flow_bs.append(j)
    return np.asarray(flow_ms, dtype=int), np.asarray(flow_bs, dtype=int)


def build_gain_matrix(scenario: CellularScenario) -> InterferenceMap:
    """Interference map with G[l, l'] = H[l, k] * P_k / w_k for l' served
    by a station k other than l's own; zero within the serving station."""
    w = scenario.gains * (scenario.bs_psd_w_per_hz / scenario.bs_bandwidth_hz)[None, :]
    return InterferenceMap.from_factored(w, scenario.flow_bs, scenario.n_bs)


def sinr(scenario: CellularScenario, z) -> np.ndarray:
    """Per-flow SINR: serving PSD over interference-plus-noise PSD."""
    z = np.asarray(z, dtype=float)
    sig = scenario.serving_gain * scenario.bs_psd_w_per_hz[scenario.flow_bs]
    return sig / (z + scenario.noise_psd)


def link_capacity(scenario: CellularScenario, x, z) -> np.ndarray:
    """Deliverable rate x * rho(sinr(z)) per flow, in bps."""
    return np.asarray(x, dtype=float) * scenario.se_model.rho(sinr(scenario, z))


def full_load_interference(scenario: CellularScenario) -> np.ndarray:
    """Interference PSD with every flow-carrying station at full utilization."""
    counts = np.bincount(scenario.flow_bs, minlength=scenario.n_bs).astype(float)
    share = np.where(counts > 0, scenario.bs_bandwidth_hz / np.maximum(counts, 1.0), 0.0)
    x_full = share[scenario.flow_bs]
    return build_gain_matrix(scenario).apply(x_full)


def _capacity_for_mode(scenario: CellularScenario, mode: InterferenceMode):
    sig = scenario.serving_gain * scenario.bs_psd_w_per_hz[scenario.flow_bs]
    if mode is InterferenceMode.POWER_REDUCTION:
        return SinrCapacity(sig, scenario.noise_psd, scenario.se_model)
    z_max = full_load_interference(scenario)
    se = scenario.se_model.rho(sig / (z_max + scenario.noise_psd))
    return FixedEfficiencyCapacity(se)


def build_instance(
    scenario: CellularScenario,
    mode: InterferenceMode = InterferenceMode.POWER_REDUCTION,
    rate_floor_bps: float = DEFAULT_RATE_FLOOR_BPS,
) -> ProblemInstance:
    """Assemble the optimization program for a scenario.

    Rate vector layout: (total rate per mobile) ++ (rate per flow). The
    per-mobile coupling rows and any backhaul caps become network rows; the
    per-station bandwidth sums become resource rows.
    """
    n_ms, n_fl, n_bs = scenario.n_ms, scenario.n_flows, scenario.n_bs
    s_dim = n_ms + n_fl

    link_flows = tuple((n_ms + l,) for l in range(n_fl))
    e = sp.csr_array(
        (np.ones(n_fl), (np.arange(n_fl), n_ms + np.arange(n_fl))), shape=(n_fl, s_dim)
    )
    flows = FlowGraph(s_dim, link_flows, incidence=e)

    active_bs = [j for j in range(n_bs) if scenario.flows_by_bs(j).size]
    rows, cols, vals, b_x = [], [], [], []
    for r_i, j in enumerate(active_bs):
        f = scenario.flows_by_bs(j)
        rows.extend([r_i] * f.size)
        cols.extend(f.tolist())
        vals.extend([1.0] * f.size)
        b_x.append(scenario.bs_bandwidth_hz[j])
    resources = ResourceConstraints(
        sp.csr_array((vals, (rows, cols)), shape=(len(active_bs), n_fl)), np.asarray(b_x)
    )

    rows, cols, vals, b_r = [], [], [], []
    for i in range(n_ms):
        f = scenario.flows_by_ms(i)
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
        rows.extend([i] * f.size)
        cols.extend((n_ms + f).tolist())
        vals.extend([-1.0] * f.size)
        b_r.append(0.0)
    next_row = n_ms
    for j in active_bs:
        cap = scenario.backhaul_bps[j]
        if np.isfinite(cap):
            f = scenario.flows_by_bs(j)
            rows.extend([next_row] * f.size)
            cols.extend((n_ms + f).tolist())
            vals.extend([1.0] * f.size)
            b_r.append(cap)
            next_row += 1
    network = NetworkConstraints(
        sp.csr_array((vals, (rows, cols)), shape=(next_row, s_dim)), np.asarray(b_r)
    )

    capacity = _capacity_for_mode(scenario, mode)
    x_bar = scenario.bs_bandwidth_hz[scenario.flow_bs]
    if mode is InterferenceMode.POWER_REDUCTION:
        imap = build_gain_matrix(scenario)
        z_bar = imap.apply(x_bar)
        r_flow_bar = capacity.capacity(x_bar, np.zeros(n_fl))
    else:
        imap = None
        z_bar = np.zeros(0)
        r_flow_bar = capacity.capacity(x_bar)
    r_total_bar = np.zeros(n_ms)
    np.add.at(r_total_bar, scenario.flow_ms, r_flow_bar)
    bounds = Bounds(np.concatenate([r_total_bar, r_flow_bar]), x_bar, z_bar)

    utility = UtilitySpec.log_then_zero(n_ms, n_fl, rate_floor_bps)
    return ProblemInstance(
        flows=flows,
        resources=resources,
        network=network,
        interference=imap,
        capacity=capacity,
        utility=utility,
        bounds=bounds,
    )
