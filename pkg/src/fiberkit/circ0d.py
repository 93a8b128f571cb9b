"""Closed-loop lumped-parameter circulation.

The loop is::

    RA -> tricuspid -> RV -> pulmonary valve -> pulmonary arteries (RLC)
       -> pulmonary veins (RLC) -> LA -> mitral -> LV -> aortic valve
       -> systemic arteries (RLC) -> systemic veins (RLC) -> RA

Chambers are time-varying elastances ``P = E(t)(V - V0)`` with
``E = A + B e(t)``; valves are non-ideal diodes; each RLC compartment stores a
volume in its capacitor and carries an inductive flow to the next element.
Units are mL, mmHg and s throughout. Time integration is explicit Euler on
plain Python floats (the state has 12 entries, so vectorization would not pay).

The module also holds the PV-loop emulator: a relaxed/contracted blend
``P = (1 - phi(t)) P_ED(V) + phi(t) P_ES(V)`` fitted from PV samples, its
linear interpolation between two contractility levels, and a golden-section
calibration of the contractility against target loop metrics.
"""

from __future__ import annotations

import math
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .exceptions import DataError, DegeneracyError, DivergenceError, ValidationError

VOLUME_NAMES = ("LA", "LV", "RA", "RV", "AR_SYS", "VEN_SYS", "AR_PUL", "VEN_PUL")
FLOW_NAMES = ("AR_SYS", "VEN_SYS", "AR_PUL", "VEN_PUL")
VALVE_NAMES = ("MV", "AV", "TV", "PV")
CHAMBERS = ("LA", "LV", "RA", "RV")
T_HB = 0.2
DT = 2.0e-5


def _check_positive(obj, names, strict=True):
    for name in names:
        v = float(getattr(obj, name))
        ok = v > 0 if strict else v >= 0
        if not (math.isfinite(v) and ok):
            rel = ">" if strict else ">="
            raise ValidationError(f"{type(obj).__name__}.{name} must be {rel} 0, got {v}")


def raised_cosine(phase, t0, t_contraction, t_relaxation):
    """Activation ``e`` in [0, 1] at a phase (fraction of the period).

    Rises as ``(1 - cos)/2`` over ``t_contraction`` starting at ``t0``, then
    falls as ``(1 + cos)/2`` over ``t_relaxation``; zero otherwise. All
    arguments are fractions of the heartbeat period.
    """
    tau = (phase - t0) % 1.0
    if tau < t_contraction:
        return 0.5 * (1.0 - math.cos(math.pi * tau / t_contraction))
    tau -= t_contraction
    if tau < t_relaxation:
        return 0.5 * (1.0 + math.cos(math.pi * tau / t_relaxation))
    return 0.0


@dataclass(frozen=True)
class ElastanceChamber:
    """Time-varying elastance chamber.

    Attributes
    ----------
    A : float
        Passive elastance (mmHg/mL).
    B : float
        Active elastance amplitude (mmHg/mL).
    V0 : float
        Resting volume (mL).
    t_contraction, t_relaxation, t0 : float
        Durations and onset as fractions of the period.
    """

    A: float
    B: float
    V0: float
    t_contraction: float
    t_relaxation: float
    t0: float

    def __post_init__(self):
        _check_positive(self, ("A", "B", "V0"), strict=False)
        for name in ("t_contraction", "t_relaxation"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if self.t_contraction + self.t_relaxation > 1.0:
            raise ValidationError("contraction + relaxation must not exceed one period")
        if not math.isfinite(self.t0):
            raise ValidationError("t0 must be finite")

    def activation(self, t, period=T_HB):
        return raised_cosine(math.fmod(t, period) / period, self.t0,
                             self.t_contraction, self.t_relaxation)

    def elastance(self, t, period=T_HB):
        return self.A + self.B * self.activation(t, period)

    def pressure(self, V, t, period=T_HB):
        return self.elastance(t, period) * (V - self.V0)


@dataclass(frozen=True)
class RLCCompartment:
    """Resistance (mmHg s/mL), compliance (mL/mmHg), inertance (mmHg s²/mL).

    ``R_up`` is a resistance in series with the compartment inlet.
    """

    R: float
    C: float
    L: float = 0.0
    R_up: float = 0.0

    def __post_init__(self):
        _check_positive(self, ("R", "C"))
        _check_positive(self, ("L", "R_up"), strict=False)


@dataclass(frozen=True)
class ValveModel:
    R_min: float = 7.5
    R_max: float = 75000.0

    def __post_init__(self):
        _check_positive(self, ("R_min", "R_max"))
        if not self.R_min < self.R_max:
            raise ValidationError("valve needs R_min < R_max")


def valve_resistance(dp, valve=None):
    """``R_min`` for a forward pressure drop (``dp > 0``), else ``R_max``."""
    valve = ValveModel() if valve is None else valve
    return valve.R_min if dp > 0 else valve.R_max


def chamber_pressure(ch, V, t, T_HB=T_HB):
    """``P = (A + B e(t)) (V - V0)`` in mmHg."""
    if not T_HB > 0:
        raise ValidationError("heartbeat period must be positive")
    return ch.pressure(V, t, T_HB)


@dataclass(frozen=True)
class CirculationParams:
    """Full parameter set; defaults reproduce the baseline murine values."""

    la: ElastanceChamber = ElastanceChamber(140.0, 360.0, 0.0008, 0.36, 0.36, 0.85)
    ra: ElastanceChamber = ElastanceChamber(1000.0, 40.0, 0.0008, 0.38, 0.38, 0.83)
    lv: ElastanceChamber = ElastanceChamber(100.0, 4000.0, 0.005, 0.30, 0.15, 0.0)
    rv: ElastanceChamber = ElastanceChamber(50.0, 1000.0, 0.005, 0.30, 0.15, 0.0)
    sys_ar: RLCCompartment = RLCCompartment(500.0, 0.0008, 2.064, 0.0)
    sys_ven: RLCCompartment = RLCCompartment(400.0, 0.0145, 0.2064)
    pul_ar: RLCCompartment = RLCCompartment(5.216, 0.0024, 0.2064, 0.0)
    pul_ven: RLCCompartment = RLCCompartment(55.45, 0.0387, 0.2064)
    valve: ValveModel = ValveModel()
    T_HB: float = T_HB

    def __post_init__(self):
        if not (math.isfinite(self.T_HB) and self.T_HB > 0):
            raise ValidationError("T_HB must be positive")

    def chamber(self, name):
        return getattr(self, name.lower())

    def with_values(self, **values):
        """Copy with dotted overrides, e.g. ``with_values(**{"sys_ar.R": 1000})``."""
        groups = {}
        top = {}
        for key, v in values.items():
            if "." in key:
                g, k = key.split(".", 1)
                groups.setdefault(g, {})[k] = v
            else:
                top[key] = v
        for g, kv in groups.items():
            if g not in {f.name for f in fields(self)}:
                raise ValidationError(f"unknown parameter group {g!r}")
            top[g] = replace(getattr(self, g), **kv)
        return replace(self, **top)


@dataclass
class CirculationState:
    """Volumes (mL) in :data:`VOLUME_NAMES` order, inductive flows (mL/s)
    in :data:`FLOW_NAMES` order and time (s)."""

    volumes: np.ndarray
    flows: np.ndarray = field(default_factory=lambda: np.zeros(4))
    t: float = 0.0

    def __post_init__(self):
        self.volumes = np.array(self.volumes, dtype=float)
        self.flows = np.array(self.flows, dtype=float)
        if self.volumes.shape != (8,) or self.flows.shape != (4,):
            raise ValidationError("state needs 8 volumes and 4 flows")
        if not np.all(self.volumes > 0):
            raise ValidationError("volumes must be positive")

    @property
    def total_volume(self):
        return math.fsum(self.volumes.tolist())

    def as_dict(self):
        d = dict(zip(VOLUME_NAMES, self.volumes.tolist()))
        d.update({f"Q_{k}": v for k, v in zip(FLOW_NAMES, self.flows.tolist())})
        d["t"] = self.t
        return d


def default_state(params=None, total_scale=1.0):
    """Starting point close to the baseline limit cycle.

    Chambers start at mid-cycle volumes and each compartment at the mean
    pressure it settles to under the baseline parameters (mmHg 37, 18.9, 5.9,
    5.5 for sys_ar, sys_ven, pul_ar, pul_ven). The systemic venous pool
    relaxes with a time constant of about 2.5 s (12 beats), so a start far
    from these values needs many more beats to reach the limit cycle.
    """
    p = CirculationParams() if params is None else params
    v = [0.013, 0.024, 0.002, 0.021,
         p.sys_ar.C * 37.0, p.sys_ven.C * 18.9, p.pul_ar.C * 5.9, p.pul_ven.C * 5.5]
    return CirculationState(np.array(v) * total_scale)


def state_from_pressures(chamber_volumes, compartment_pressures, params=None, total_volume=None):
    """State with given chamber volumes (LA, LV, RA, RV) and compartment
    pressures (sys_ar, sys_ven, pul_ar, pul_ven), optionally rescaled to a
    total blood volume."""
    p = CirculationParams() if params is None else params
    C = [p.sys_ar.C, p.sys_ven.C, p.pul_ar.C, p.pul_ven.C]
    v = np.array(list(chamber_volumes) + [c * q for c, q in zip(C, compartment_pressures)], float)
    if total_volume is not None:
        v *= total_volume / v.sum()
    return CirculationState(v)


PressureFn = Callable[[float, float], float]


class _Network:
    """Right-hand side of the network with parameters unpacked to floats."""

    def __init__(self, params, chamber_models=None):
        self.params = params
        models = dict(chamber_models or {})
        unknown = set(models) - set(CHAMBERS)
        if unknown:
            raise ValidationError(f"unknown chamber(s) {sorted(unknown)}")
        T = params.T_HB
        self.P = []
        for name in CHAMBERS:
            if name in models:
                self.P.append(models[name])
            else:
                self.P.append(_elastance_fn(params.chamber(name), T))
        c = [params.sys_ar, params.sys_ven, params.pul_ar, params.pul_ven]
        self.C = [x.C for x in c]
        self.R = [x.R for x in c]
        self.L = [x.L for x in c]
        self.R_up = [x.R_up for x in c]
        self.Rmin = params.valve.R_min
        self.Rmax = params.valve.R_max

    def rates(self, V, Q, t):
        """Return ``(pressures, valve_flows, dV, dQ, Q_eff)``."""
        P_la = self.P[0](V[0], t)
        P_lv = self.P[1](V[1], t)
        P_ra = self.P[2](V[2], t)
        P_rv = self.P[3](V[3], t)
        p_sa = V[4] / self.C[0]
        p_sv = V[5] / self.C[1]
        p_pa = V[6] / self.C[2]
        p_pv = V[7] / self.C[3]
        Rmin, Rmax = self.Rmin, self.Rmax
        dp = P_la - P_lv
        q_mv = dp / (Rmin if dp > 0 else Rmax)
        dp = P_lv - p_sa
        q_av = dp / ((Rmin if dp > 0 else Rmax) + self.R_up[0])
        dp = P_ra - P_rv
        q_tv = dp / (Rmin if dp > 0 else Rmax)
        dp = P_rv - p_pa
        q_pv = dp / ((Rmin if dp > 0 else Rmax) + self.R_up[2])
        # drop across each compartment: own pressure minus downstream pressure
        drops = (p_sa - p_sv, p_sv - P_ra, p_pa - p_pv, p_pv - P_la)
        Qe = []
        dQ = []
        for k in range(4):
            if self.L[k] > 0:
                Qe.append(Q[k])
                dQ.append((drops[k] - self.R[k] * Q[k]) / self.L[k])
            else:
                Qe.append(drops[k] / self.R[k])
                dQ.append(0.0)
        q_sa, q_sv, q_pa, q_pvn = Qe
        dV = (q_pvn - q_mv, q_mv - q_av, q_sv - q_tv, q_tv - q_pv,
              q_av - q_sa, q_sa - q_sv, q_pv - q_pa, q_pa - q_pvn)
        pressures = (P_la, P_lv, P_ra, P_rv, p_sa, p_sv, p_pa, p_pv)
        return pressures, (q_mv, q_av, q_tv, q_pv), dV, dQ, Qe

    def advance(self, V, Q, t, dt):
        pressures, qv, dV, dQ, Qe = self.rates(V, Q, t)
        Vn = [v + dt * d for v, d in zip(V, dV)]
        Qn = [q + dt * d if L > 0 else qe for q, d, L, qe in zip(Q, dQ, self.L, Qe)]
        for k, v in enumerate(Vn):
            if not v > 0:
                raise DivergenceError(
                    f"non-positive or NaN volume in {VOLUME_NAMES[k]} at t = {t + dt:.6g} s",
                    time=t + dt, compartment=VOLUME_NAMES[k])
        return Vn, Qn, pressures, qv


def _elastance_fn(ch, period):
    A, B, V0 = ch.A, ch.B, ch.V0
    t0, tc, tr = ch.t0, ch.t_contraction, ch.t_relaxation

    def pressure(V, t):
        return (A + B * raised_cosine(math.fmod(t, period) / period, t0, tc, tr)) * (V - V0)

    return pressure


def step(state, dt=DT, params=None, chamber_models=None):
    """One explicit-Euler step of the closed loop.

    Raises
    ------
    DivergenceError
        A volume became non-positive or NaN.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    net = _Network(CirculationParams() if params is None else params, chamber_models)
    V, Q, _, _ = net.advance(state.volumes.tolist(), state.flows.tolist(), state.t, dt)
    return CirculationState(np.array(V), np.array(Q), state.t + dt)


class PVQoIs(NamedTuple):
    EDV: float
    ESV: float
    EDP: float
    ESP: float
    EF: float


@dataclass(frozen=True)
class PVLoop:
    """Samples ``(t, V, P)`` of one chamber over at least one period."""

    t: np.ndarray
    V: np.ndarray
    P: np.ndarray

    def qois(self):
        return pvloop_qois(self)


def pvloop_qois(loop):
    """EDV/EDP at the maximal-volume sample, ESV/ESP at the minimal one.

    A flat loop (``EDV == ESV``) yields ``EF = 0`` with a warning.
    """
    V = np.asarray(loop.V, dtype=float)
    P = np.asarray(loop.P, dtype=float)
    if V.size == 0 or V.shape != P.shape:
        raise ValidationError("loop needs matching non-empty V and P samples")
    i, j = int(np.argmax(V)), int(np.argmin(V))
    edv, esv = float(V[i]), float(V[j])
    if edv == esv or edv <= 0:
        warnings.warn("flat PV loop: ejection fraction set to 0", RuntimeWarning, stacklevel=2)
        ef = 0.0
    else:
        ef = (edv - esv) / edv
    return PVQoIs(edv, esv, float(P[i]), float(P[j]), ef)


@dataclass
class SimulationResult:
    """Sampled trajectories and per-beat summaries.

    Attributes
    ----------
    t : ndarray, shape (n,)
    volumes, pressures : ndarray, shape (n, 8)
        In :data:`VOLUME_NAMES` order.
    flows : ndarray, shape (n, 8)
        Valve flows (:data:`VALVE_NAMES`) then compartment flows.
    beat_edv, beat_esv : ndarray, shape (n_beats, 4)
        Max/min chamber volume per beat, :data:`CHAMBERS` order.
    beat_total_volume : ndarray, shape (n_beats + 1,)
        Total volume at each beat boundary.
    loops : dict of PVLoop
        Last beat of each chamber.
    final_state : CirculationState
    """

    t: np.ndarray
    volumes: np.ndarray
    pressures: np.ndarray
    flows: np.ndarray
    beat_edv: np.ndarray
    beat_esv: np.ndarray
    beat_total_volume: np.ndarray
    loops: dict
    final_state: CirculationState

    def qois(self, chamber="LV"):
        return pvloop_qois(self.loops[chamber])

    def limit_cycle_metric(self, chambers=("LV", "RV")):
        """Max relative change of (EDV, ESV) between the last two beats."""
        if len(self.beat_edv) < 2:
            return math.inf
        idx = [CHAMBERS.index(c) for c in chambers]
        out = 0.0
        for arr in (self.beat_edv, self.beat_esv):
            a, b = arr[-2, idx], arr[-1, idx]
            out = max(out, float(np.max(np.abs(b - a) / np.abs(b))))
        return out

    def volume_drift_per_beat(self):
        """Largest relative change of the total volume over one beat."""
        tv = self.beat_total_volume
        return float(np.max(np.abs(np.diff(tv)) / tv[0]))


def simulate(params=None, n_beats=30, T_HB=None, dt=DT, state=None, output_stride=10,
             chamber_models: Mapping[str, PressureFn] | None = None):
    """Integrate the closed loop over ``n_beats`` heartbeats.

    Parameters
    ----------
    params : CirculationParams, optional
    n_beats : int
    T_HB : float, optional
        Overrides ``params.T_HB``.
    dt : float
        Must divide the period into an integer number of steps.
    state : CirculationState, optional
        Defaults to :func:`default_state`.
    output_stride : int
        Record every ``output_stride``-th step.
    chamber_models : mapping, optional
        Replace chambers by ``pressure(V, t)`` callables (e.g. an emulator).

    Returns
    -------
    SimulationResult
    """
    params = CirculationParams() if params is None else params
    if T_HB is not None:
        params = replace(params, T_HB=float(T_HB))
    if int(n_beats) != n_beats or n_beats < 1:
        raise ValidationError("n_beats must be a positive integer")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    steps_per_beat = params.T_HB / dt
    nsb = int(round(steps_per_beat))
    if nsb < 1 or abs(steps_per_beat - nsb) > 1e-6 * steps_per_beat:
        raise ValidationError(f"dt = {dt} does not divide the period {params.T_HB}")
    if output_stride < 1:
        raise ValidationError("output_stride must be >= 1")
    state = default_state(params) if state is None else state
    net = _Network(params, chamber_models)

    n_beats = int(n_beats)
    n_steps = n_beats * nsb
    n_out = n_steps // output_stride + 1
    ts = np.empty(n_out)
    vol = np.empty((n_out, 8))
    prs = np.empty((n_out, 8))
    flo = np.empty((n_out, 8))
    edv = np.empty((n_beats, 4))
    esv = np.empty((n_beats, 4))
    tot = np.empty(n_beats + 1)

    V = state.volumes.tolist()
    Q = state.flows.tolist()
    t0 = state.t
    tot[0] = math.fsum(V)
    k_out = 0
    hi = V[:4]
    lo = V[:4]
    for beat in range(n_beats):
        hi = list(V[:4])
        lo = list(V[:4])
        for i in range(nsb):
            t = t0 + (beat * nsb + i) * dt
            Vn, Qn, pressures, qv = net.advance(V, Q, t, dt)
            if (beat * nsb + i) % output_stride == 0:
                ts[k_out] = t
                vol[k_out] = V
                prs[k_out] = pressures
                flo[k_out, :4] = qv
                flo[k_out, 4:] = [Q[k] if net.L[k] > 0 else 0.0 for k in range(4)]
                k_out += 1
            V, Q = Vn, Qn
            for c in range(4):
                v = V[c]
                if v > hi[c]:
                    hi[c] = v
                elif v < lo[c]:
                    lo[c] = v
        edv[beat] = hi
        esv[beat] = lo
        tot[beat + 1] = math.fsum(V)
    t_end = t0 + n_steps * dt
    if n_steps % output_stride == 0:
        pressures, qv, _, _, Qe = net.rates(V, Q, t_end)
        ts[k_out] = t_end
        vol[k_out] = V
        prs[k_out] = pressures
        flo[k_out, :4] = qv
        flo[k_out, 4:] = Qe
        k_out += 1
    ts, vol, prs, flo = ts[:k_out], vol[:k_out], prs[:k_out], flo[:k_out]
    last = ts >= t_end - params.T_HB - 0.5 * dt
    loops = {c: PVLoop(ts[last], vol[last, i], prs[last, i]) for i, c in enumerate(CHAMBERS)}
    final = CirculationState(np.array(V), np.array(Q), t_end)
    return SimulationResult(ts, vol, prs, flo, edv, esv, tot, loops, final)


# ----------------------------------------------------------------------------
# Emulator
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EmulatorFit:
    """Fitted emulator of one chamber.

    ``P_ED(V) = a (exp(b (V - V0_ed)) - 1)``, ``P_ES(V) = E_es (V - V0_es)``
    and ``phi(t)`` linear between ``(phase, phi)`` table entries, periodic in
    ``period``.
    """

    a: float
    b: float
    V0_ed: float
    E_es: float
    V0_es: float
    phase: np.ndarray
    phi: np.ndarray
    period: float = T_HB

    def __post_init__(self):
        ph = np.asarray(self.phase, dtype=float)
        fi = np.asarray(self.phi, dtype=float)
        if ph.ndim != 1 or ph.shape != fi.shape or ph.size < 2:
            raise ValidationError("phi table needs >= 2 matching samples")
        if np.any(np.diff(ph) <= 0) or ph[0] < 0 or ph[-1] >= self.period:
            raise ValidationError("phi table phases must increase within [0, period)")
        object.__setattr__(self, "phase", ph)
        object.__setattr__(self, "phi", np.clip(fi, 0.0, 1.0))
        object.__setattr__(self, "_ph", ph.tolist())
        object.__setattr__(self, "_fi", np.clip(fi, 0.0, 1.0).tolist())

    def p_ed(self, V):
        return self.a * np.expm1(self.b * (np.asarray(V, dtype=float) - self.V0_ed))

    def p_es(self, V):
        return self.E_es * (np.asarray(V, dtype=float) - self.V0_es)

    def phi_at(self, t):
        """Scalar activation at time ``t`` (periodic linear interpolation)."""
        ph, fi = self._ph, self._fi
        s = math.fmod(float(t), self.period)
        if s < 0:
            s += self.period
        j = bisect_right(ph, s)
        if j == 0 or j == len(ph):
            x0, y0 = ph[-1] - (self.period if j == 0 else 0.0), fi[-1]
            x1, y1 = ph[0] + (self.period if j == len(ph) else 0.0), fi[0]
        else:
            x0, y0, x1, y1 = ph[j - 1], fi[j - 1], ph[j], fi[j]
        w = (s - x0) / (x1 - x0)
        return y0 + w * (y1 - y0)

    def pressure(self, V, t):
        """Scalar emulator pressure (fast path used inside :func:`simulate`)."""
        f = self.phi_at(t)
        ped = self.a * math.expm1(self.b * (V - self.V0_ed))
        pes = self.E_es * (V - self.V0_es)
        return (1.0 - f) * ped + f * pes

    __call__ = pressure

    def to_dict(self):
        return {"a": self.a, "b": self.b, "V0_ed": self.V0_ed, "E_es": self.E_es,
                "V0_es": self.V0_es, "period": self.period,
                "phase": self.phase.tolist(), "phi": self.phi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["a"]), float(d["b"]), float(d["V0_ed"]), float(d["E_es"]),
                   float(d["V0_es"]), np.asarray(d["phase"], float), np.asarray(d["phi"], float),
                   float(d.get("period", T_HB)))


def emulator_pressure(V, t, fit):
    """``(1 - phi(t)) P_ED(V) + phi(t) P_ES(V)``; vectorized over ``V`` and ``t``."""
    V = np.asarray(V, dtype=float)
    t = np.asarray(t, dtype=float)
    phi = np.interp(np.mod(t, fit.period), fit.phase, fit.phi, period=fit.period)
    return (1.0 - phi) * fit.p_ed(V) + phi * fit.p_es(V)


def _diastolic_mask(t, V, P, period):
    """Filling segment of each beat: from the pressure minimum that follows
    the minimal-volume sample up to the maximal-volume sample."""
    mask = np.zeros(t.shape, dtype=bool)
    beat = np.floor((t - t[0]) / period + 1e-9).astype(int)
    for b in np.unique(beat):
        idx = np.flatnonzero(beat == b)
        if idx.size < 4:
            continue
        i_es = idx[np.argmin(V[idx])]
        # first sample reaching the maximal volume, so that the nearly
        # isovolumic contraction that follows is not counted as filling
        vb = V[idx]
        i_ed = idx[np.flatnonzero(vb >= vb.max() - 1e-3 * np.ptp(vb))[0]]
        # cyclic walk from ES to ED inside the beat
        order = np.roll(idx, -int(np.flatnonzero(idx == i_es)[0]))
        end = int(np.flatnonzero(order == i_ed)[0])
        seg = order[: end + 1]
        start = int(np.argmin(P[seg]))
        mask[seg[start:]] = True
    return mask


_LINEAR_EDPVR_BS = 1e-7


def fit_edpvr(V, P):
    """Least-squares fit of ``P = a (exp(b (V - V0)) - 1)``.

    Variable projection: for fixed ``b`` the model ``c exp(b V) - a`` is
    linear in ``(c, a)``; ``b`` is found by bounded scalar minimization, then
    all three parameters are polished jointly.  Exactly linear data (a
    pure linear-elastance chamber) is returned as the small-``b`` limit with
    the fitted slope ``a b``.

    Returns
    -------
    a, b, V0 : float
    """
    V = np.asarray(V, dtype=float)
    P = np.asarray(P, dtype=float)
    if V.size < 3 or np.ptp(V) <= 0:
        raise DataError("EDPVR fit needs >= 3 samples spanning a volume range")
    scale = 1.0 / np.ptp(V)
    Vs = (V - V.min()) * scale

    def inner(bs):
        A = np.column_stack([np.exp(bs * Vs), -np.ones_like(Vs)])
        coef, *_ = np.linalg.lstsq(A, P, rcond=None)
        return coef, float(np.sum((A @ coef - P) ** 2))

    res = minimize_scalar(lambda bs: inner(bs)[1], bounds=(1e-6, 50.0), method="bounded",
                          options={"xatol": 1e-10})
    bs = float(res.x)
    (c, a), sse = inner(bs)
    k, icpt = np.polyfit(V, P, 1)
    sse_lin = float(np.sum((k * V + icpt - P) ** 2))
    if not (a > 0 and c > 0) or sse_lin <= sse:
        # (nearly) linear filling curve: the exponential degenerates to
        # b -> 0, a -> inf; keep a tiny fixed curvature with slope a*b = k
        if not k > 0:
            raise DataError("diastolic samples are not consistent with an exponential EDPVR")
        b = _LINEAR_EDPVR_BS * scale
        return float(k / b), float(b), float(-icpt / k)
    b = bs * scale
    V0 = V.min() + math.log(a / c) / b

    def resid(x):
        return x[0] * np.expm1(x[1] * (V - x[2])) - P

    sol = least_squares(resid, [a, b, V0], x_scale=[abs(a), abs(b), np.ptp(V)],
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    a, b, V0 = (float(x) for x in sol.x)
    return a, b, V0


def emulator_fit(t, V, P, period=T_HB, diastolic_mask=None, sep_tol=1e-6):
    """Fit the emulator to PV samples spanning one or more beats.

    Parameters
    ----------
    t, V, P : array_like
        Samples; beats are delimited by ``period`` from ``t[0]``.
    diastolic_mask : array_like of bool, optional
        Samples used for the EDPVR; defaults to the filling segment of each beat.
    sep_tol : float
        Minimum ``|P_ES(V) - P_ED(V)|`` (mmHg) for the activation inversion.

    Returns
    -------
    EmulatorFit

    Raises
    ------
    DegeneracyError
        ``P_ES`` and ``P_ED`` indistinguishable at some sample.
    """
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    P = np.asarray(P, dtype=float)
    if not (t.shape == V.shape == P.shape) or t.ndim != 1:
        raise ValidationError("t, V, P must be 1-D arrays of equal length")
    if t.size < 8 or t[-1] - t[0] < period * (1 - 1e-9) - (t[1] - t[0]):
        raise DataError("samples must cover at least one full period")
    if diastolic_mask is None:
        mask = _diastolic_mask(t, V, P, period)
        a, b, V0_ed = fit_edpvr(V[mask], P[mask])
        # the filling segment may start while relaxation is still finishing:
        # trim samples lying clearly above the current EDPVR and refit
        for _ in range(20):
            r = P - a * np.expm1(b * (V - V0_ed))
            rms = float(np.sqrt(np.mean(r[mask] ** 2)))
            keep = mask & (r <= max(3.0 * rms, 1e-12 * np.ptp(P)))
            if keep.sum() == mask.sum() or keep.sum() < 3:
                break
            mask = keep
            a, b, V0_ed = fit_edpvr(V[mask], P[mask])
    else:
        mask = np.asarray(diastolic_mask, bool)
        a, b, V0_ed = fit_edpvr(V[mask], P[mask])

    # end-systolic corners: minimal-volume sample of each beat
    beat = np.floor((t - t[0]) / period + 1e-9).astype(int)
    corners = []
    for bb in np.unique(beat):
        idx = np.flatnonzero(beat == bb)
        if t[idx[-1]] - t[idx[0]] < 0.5 * period:
            continue
        corners.append(idx[np.argmin(V[idx])])
    Vc, Pc = V[corners], P[corners]
    E_es = None
    if len(corners) >= 2 and np.ptp(Vc) > 1e-3 * np.ptp(V):
        # a line through the corners only when they are well spread (load
        # variations); near a limit cycle they collapse onto one point
        E_es, icpt = np.polyfit(Vc, Pc, 1)
        V0_es = -icpt / E_es if E_es > 0 else None
        if V0_es is None:
            E_es = None
    if E_es is None:
        V0_es = V0_ed
        E_es = float(np.mean(Pc / (Vc - V0_es)))
    E_es, V0_es = float(E_es), float(V0_es)

    ped = a * np.expm1(b * (V - V0_ed))
    pes = E_es * (V - V0_es)
    den = pes - ped
    bad = np.abs(den) < sep_tol
    if np.any(bad):
        raise DegeneracyError("ESPVR and EDPVR coincide: activation undefined", np.flatnonzero(bad))
    phi = np.clip((P - ped) / den, 0.0, 1.0)

    phase = np.mod(t - t[0], period) + np.mod(t[0], period)
    phase = np.mod(phase, period)
    key = np.round(phase / period * 1e9).astype(np.int64)
    uniq, inv = np.unique(key, return_inverse=True)
    ph = np.bincount(inv, weights=phase) / np.bincount(inv)
    fi = np.bincount(inv, weights=phi) / np.bincount(inv)
    return EmulatorFit(float(a), float(b), float(V0_ed), E_es, V0_es, ph, fi, float(period))


def parametric_emulator(p_A, p_B, a_A, a_B):
    """Pressure linear in the contractility ``a`` between two emulators.

    ``p(V, t, a) = (a - a_A)/(a_B - a_A) p_B(V, t) + (a - a_B)/(a_A - a_B) p_A(V, t)``,
    exact at both endpoints.

    Returns
    -------
    callable
        ``p(V, t, a)``; also exposes ``at(a)`` returning a scalar ``p(V, t)``.
    """
    a_A, a_B = float(a_A), float(a_B)
    if a_A == a_B:
        raise ValidationError("parametric emulator needs a_A != a_B")

    def weights(a):
        return (a - a_B) / (a_A - a_B), (a - a_A) / (a_B - a_A)

    def p(V, t, a):
        wA, wB = weights(float(a))
        return wB * emulator_pressure(V, t, p_B) + wA * emulator_pressure(V, t, p_A)

    def at(a):
        wA, wB = weights(float(a))
        fa, fb = p_A.pressure, p_B.pressure

        def pressure(V, t):
            return wB * fb(V, t) + wA * fa(V, t)

        return pressure

    p.at = at
    p.bounds = (a_A, a_B)
    return p


def loop_qois_for(pressure_fn, params=None, chamber="LV", n_beats=10, dt=DT, state=None):
    """Last-beat QoIs of ``chamber`` when driven by ``pressure_fn(V, t)``."""
    res = simulate(params, n_beats=n_beats, dt=dt, state=state, output_stride=1,
                   chamber_models={chamber: pressure_fn})
    return res.qois(chamber)


QOI_KEYS = ("EDV", "ESV", "EDP", "ESP", "EF")


def golden_section(f, lo, hi, xtol):
    """Minimize a unimodal scalar function on ``[lo, hi]``.

    Returns
    -------
    x, fx, evaluations : float, float, dict
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    cache = {}

    def F(x):
        if x not in cache:
            cache[x] = f(x)
        return cache[x]

    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    while abs(b - a) > xtol:
        if F(c) < F(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    x = 0.5 * (a + b)
    return x, F(x), cache


def calibrate_axb(target_qois, p_A, p_B, a_A, a_B, bounds=None, weights=None,
                  qoi_fn=None, rtol=1e-5, **sim_kwargs):
    """Contractility minimizing the weighted squared relative QoI mismatch.

    Parameters
    ----------
    target_qois : mapping or PVQoIs
        Any subset of ``EDV, ESV, EDP, ESP, EF``.
    p_A, p_B : EmulatorFit
        Emulators at contractility ``a_A`` and ``a_B``.
    bounds : (float, float), optional
        Search interval; defaults to ``(a_A, a_B)`` sorted.
    weights : mapping, optional
        Per-QoI weights (default 1).
    qoi_fn : callable, optional
        ``qoi_fn(pressure) -> PVQoIs``; defaults to :func:`loop_qois_for`
        with ``sim_kwargs``.
    rtol : float
        Golden-section interval tolerance relative to the bound width.

    Returns
    -------
    a_xb, objective : float
    """
    target = target_qois._asdict() if isinstance(target_qois, PVQoIs) else dict(target_qois)
    unknown = set(target) - set(QOI_KEYS)
    if unknown or not target:
        raise ValidationError(f"target QoIs must be a non-empty subset of {QOI_KEYS}")
    weights = {k: 1.0 for k in target} if weights is None else dict(weights)
    lo, hi = sorted(bounds if bounds is not None else (a_A, a_B))
    if not hi > lo:
        raise ValidationError("calibration bounds must have positive width")
    emu = parametric_emulator(p_A, p_B, a_A, a_B)
    if qoi_fn is None:
        def qoi_fn(pressure):
            return loop_qois_for(pressure, **sim_kwargs)

    def objective(a):
        q = qoi_fn(emu.at(a))._asdict()
        return math.fsum(weights.get(k, 1.0) * ((q[k] - v) / (v if v != 0 else 1.0)) ** 2
                         for k, v in target.items())

    xtol = rtol * (hi - lo)
    x, fx, cache = golden_section(objective, lo, hi, xtol)
    for edge in (lo, hi):
        if abs(x - edge) <= 2 * xtol:
            fe = objective(edge)
            if fe <= fx:
                warnings.warn(f"no interior minimum: returning bound {edge:g}", RuntimeWarning,
                              stacklevel=2)
                return float(edge), float(fe)
    return float(x), float(fx)
