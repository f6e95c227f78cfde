"""Deterministic right-hand side of the reduced three-box AMOC model.

State is the pair of prognostic salinities (S_Nor, S_Trop); the Southern Ocean
and deep-water salinities are fixed and the Indo-Pacific salinity follows from
global salt conservation. Time is in years, transports in Sv, salinities in psu.

The scalar kernels below are compiled with numba and operate on the flat
parameter vector produced by :meth:`ModelParams.vector`; the public functions
wrap them for use with :class:`OceanState`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit

from .errors import IntegrationError
from .params import ModelParams

# positions in ModelParams.vector()
P_LAM, P_ALPHA, P_BETA, P_TS, P_TNOR, P_SS, P_SB = range(7)
P_VNOR, P_VTROP, P_VS, P_VIP, P_VB = range(7, 12)
P_KNOR, P_KS, P_GAMMA, P_FNOR, P_FTROP = range(12, 17)
P_ANOR, P_ATROP, P_S0, P_C, P_SV = range(17, 22)

SALINITY_RANGE = (0.0, 50.0)


@dataclass(frozen=True)
class OceanState:
    S_Nor: float
    S_Trop: float
    t: float = 0.0

    @property
    def out_of_range(self) -> bool:
        """True when either salinity leaves the plausible [0, 50] psu band."""
        lo, hi = SALINITY_RANGE
        return not (lo <= self.S_Nor <= hi and lo <= self.S_Trop <= hi)


@njit(cache=True, nogil=True)
def q_kernel(s_nor, pv):
    return pv[P_LAM] * (pv[P_ALPHA] * (pv[P_TS] - pv[P_TNOR]) + pv[P_BETA] * (s_nor - pv[P_SS]))


@njit(cache=True, nogil=True)
def s_ip_kernel(s_nor, s_trop, pv):
    return (pv[P_C] - pv[P_VNOR] * s_nor - pv[P_VTROP] * s_trop
            - pv[P_VS] * pv[P_SS] - pv[P_VB] * pv[P_SB]) / pv[P_VIP]


@njit(cache=True, nogil=True)
def tendency_kernel(s_nor, s_trop, hosing, pv):
    """Return (dS_Nor/dt, dS_Trop/dt) in psu/yr."""
    q = q_kernel(s_nor, pv)
    s_ip = s_ip_kernel(s_nor, s_trop, pv)
    f_nor = pv[P_FNOR] + pv[P_ANOR] * hosing
    f_trop = pv[P_FTROP] + pv[P_ATROP] * hosing
    k_nor = pv[P_KNOR]
    s0 = pv[P_S0]
    s_s = pv[P_SS]
    if q >= 0.0:
        budget_nor = q * (s_trop - s_nor) + k_nor * (s_trop - s_nor) - f_nor * s0
        budget_trop = (q * (pv[P_GAMMA] * s_s + (1.0 - pv[P_GAMMA]) * s_ip - s_trop)
                       + pv[P_KS] * (s_s - s_trop) + k_nor * (s_nor - s_trop) - f_trop * s0)
    else:
        aq = -q
        budget_nor = aq * (pv[P_SB] - s_nor) + k_nor * (s_trop - s_nor) - f_nor * s0
        budget_trop = (aq * (s_nor - s_trop) + pv[P_KS] * (s_s - s_trop)
                       + k_nor * (s_nor - s_trop) - f_trop * s0)
    # Sv * psu -> m^3/yr * psu, then per box volume
    return budget_nor * pv[P_SV] / pv[P_VNOR], budget_trop * pv[P_SV] / pv[P_VTROP]


def amoc_strength(state: OceanState, p: ModelParams) -> float:
    """AMOC strength q in Sv. Negative values mean a reversed overturning."""
    return p.lam * (p.alpha * (p.T_S - p.T_Nor) + p.beta * (state.S_Nor - p.S_S))


def indo_pacific_salinity(state: OceanState, p: ModelParams) -> float:
    """Indo-Pacific salinity implied by conservation of total salt ``p.C``."""
    return (p.C - p.V_Nor * state.S_Nor - p.V_Trop * state.S_Trop
            - p.V_S * p.S_S - p.V_B * p.S_B) / p.V_IP


def total_salt(state: OceanState, p: ModelParams) -> float:
    s_ip = indo_pacific_salinity(state, p)
    return (p.V_Nor * state.S_Nor + p.V_Trop * state.S_Trop + p.V_S * p.S_S
            + p.V_IP * s_ip + p.V_B * p.S_B)


def salinity_tendency(state: OceanState, hosing: float, p: ModelParams) -> tuple[float, float]:
    """Salinity tendencies (psu/yr) under ``hosing`` Sv of scenario forcing."""
    d_nor, d_trop = tendency_kernel(state.S_Nor, state.S_Trop, float(hosing), p.vector())
    if not (math.isfinite(d_nor) and math.isfinite(d_trop)):
        raise IntegrationError("non-finite salinity tendency",
                               state=(state.S_Nor, state.S_Trop), t=state.t)
    return d_nor, d_trop
