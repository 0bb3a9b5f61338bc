"""Stratonovich integration of the particle, tangent and unit-tangent flows.

All flows use the stochastic Heun (midpoint) scheme: predictor with all
noise terms, corrector averaging the drift-free diffusion evaluations.
The viscous term sqrt(2*kappa) dW~ has constant coefficient fields on the
torus and enters as an exact additive Gaussian kick.  The Stratonovich
tangent system dJ = sum_k Dsigma_k(x) J o dW^k is stepped jointly with the
position; the midpoint corrector realizes the Ito bracket correction
implicitly, so no hand-derived drift appears anywhere.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, fields
from .fields import _pair_plan
from .noise import EnsembleNoise
from .torus import wrap


class FlowBlowupError(RuntimeError):
    """Raised when the tangent integrator produces a non-finite or singular state."""


@dataclass
class FlowState:
    """Ensemble of torus positions with optional tangent data.

    positions: (P, d); tangents: (P, d, d); unit_tangents: (P, d) unit rows;
    log_growth: (P,) accumulated log-norm from renormalizations.
    """

    t: float
    positions: np.ndarray
    tangents: np.ndarray | None = None
    unit_tangents: np.ndarray | None = None
    log_growth: np.ndarray | None = None

    @classmethod
    def initial(cls, positions, track_tangents=False, track_unit_tangents=False,
                unit_tangents=None):
        positions = wrap(np.atleast_2d(np.asarray(positions, dtype=float)))
        P, d = positions.shape
        tangents = np.broadcast_to(np.eye(d), (P, d, d)).copy() if track_tangents else None
        units = None
        log_growth = None
        if track_unit_tangents:
            if unit_tangents is None:
                units = np.zeros((P, d))
                units[:, 0] = 1.0
            else:
                units = np.asarray(unit_tangents, dtype=float).copy()
                units /= np.linalg.norm(units, axis=-1, keepdims=True)
        if track_tangents or track_unit_tangents:
            log_growth = np.zeros(P)
        return cls(0.0, positions, tangents, units, log_growth)


def _check_increments(model, increments):
    dw, dwt = increments
    dw = np.asarray(dw, dtype=float)
    dwt = np.asarray(dwt, dtype=float)
    if dw.shape[-1] != model.n_modes:
        raise ValueError(
            f"transport increment block has {dw.shape[-1]} entries, expected {model.n_modes}"
        )
    if dwt.size and dwt.shape[-1] != model.d:
        raise ValueError(
            f"viscous increment block has {dwt.shape[-1]} entries, expected {model.d}"
        )
    return dw, dwt


def heun_positions(model, x, dw, kick, A):
    """One Heun position update; dw broadcasts against the particle axis."""
    w = A * dw
    v1 = fields.velocity(model, x, w)
    xp = x + v1 + kick
    v2 = fields.velocity(model, xp, w)
    return wrap(x + 0.5 * (v1 + v2) + kick)


def euler_positions(model, x, dw, kick, A):
    """Euler-Maruyama cross-check path; admissible because <Dsigma_k, sigma_k> = 0."""
    return wrap(x + fields.velocity(model, x, A * dw) + kick)


def heun_positions_tangents(model, x, J, dw, kick, A):
    """Joint Heun update of (x, J) for dx = sigma o dW, dJ = Dsigma(x) J o dW."""
    w = A * dw
    v1, g1 = fields.velocity_and_matrix_action(model, x, J, w)
    xp = x + v1 + kick
    Jp = J + g1
    v2, g2 = fields.velocity_and_matrix_action(model, xp, Jp, w)
    return wrap(x + 0.5 * (v1 + v2) + kick), J + 0.5 * (g1 + g2)


def heun_positions_unit(model, x, v, dw, kick, A):
    """Joint Heun update of (x, w=v) followed by renormalization.

    Returns (x', v', log-growth increment); equivalent in law to the
    intrinsic sigma~ dynamics on the sphere bundle.
    """
    w = A * dw
    v1, g1 = fields.velocity_and_vector_action(model, x, v, w)
    xp = x + v1 + kick
    vp = v + g1
    v2, g2 = fields.velocity_and_vector_action(model, xp, vp, w)
    vnew = v + 0.5 * (g1 + g2)
    growth = np.linalg.norm(vnew, axis=-1)
    return wrap(x + 0.5 * (v1 + v2) + kick), vnew / growth[..., None], np.log(growth)


def _kick(dwt, kappa):
    if kappa > 0 and dwt.size:
        return np.sqrt(2.0 * kappa) * dwt
    return 0.0


# ---------------------------------------------------------------------------
# in-place batch advancement (compiled fast path with a numpy fallback);
# every integrator in the package routes through these, so the public
# step API, run_ensemble, and the estimators all produce identical bits.
# Contract: x/v/J/logg are state rows (M, ...); dw is (R, K); wmap (M,)
# maps a state row to its realization row; kick is None or (R, d).


def _fast_plan(model):
    return _pair_plan(model) if model.d == 2 else None


def _use_kernels(model):
    return _kernels.supported(model.d, _fast_plan(model))


def _kick_or_zeros(kick, nreal, d):
    return np.zeros((nreal, d)) if kick is None else kick


def advance_positions(model, x, dw, wmap, kick, A, heun=True):
    """Advance position rows x (M, d) in place."""
    if _use_kernels(model):
        karr = _kick_or_zeros(kick, dw.shape[0], x.shape[1])
        _kernels.positions_step(x, dw, wmap, karr, A, _fast_plan(model), heun)
        return
    dwr = dw[wmap]
    k = 0.0 if kick is None else kick[wmap]
    x[:] = heun_positions(model, x, dwr, k, A) if heun else euler_positions(
        model, x, dwr, k, A)


def advance_unit(model, x, v, logg, dw, wmap, kick, A):
    """Advance (x, v, logg) rows in place through one unit-tangent Heun step."""
    if _use_kernels(model):
        karr = _kick_or_zeros(kick, dw.shape[0], x.shape[1])
        _kernels.unit_step(x, v, logg, dw, wmap, karr, A, _fast_plan(model))
        return
    dwr = dw[wmap]
    k = 0.0 if kick is None else kick[wmap]
    xn, vn, dlog = heun_positions_unit(model, x, v, dwr, k, A)
    x[:] = xn
    v[:] = vn
    logg += dlog


def advance_tangent(model, x, J, dw, wmap, kick, A):
    """Advance (x, J) rows in place through one joint Heun step."""
    if _use_kernels(model):
        karr = _kick_or_zeros(kick, dw.shape[0], x.shape[1])
        _kernels.tangent_step(x, J, dw, wmap, karr, A, _fast_plan(model))
        return
    dwr = dw[wmap]
    k = 0.0 if kick is None else kick[wmap]
    xn, Jn = heun_positions_tangents(model, x, J, dwr, k, A)
    x[:] = xn
    J[:] = Jn


def _shared_rows(model, increments, kappa):
    """Increment tuple -> ((1, K) noise rows, kick rows or None, particle wmap)."""
    dw, dwt = _check_increments(model, increments)
    kick = None
    if kappa > 0 and dwt.size:
        kick = (np.sqrt(2.0 * kappa) * dwt)[None, :]
    return dw[None, :], kick


def step(model, state: FlowState, increments, dt: float, A: float = 1.0,
         kappa: float = 0.0, scheme: str = "heun") -> FlowState:
    """Advance positions one step; noise is shared across the P particles."""
    if scheme not in ("heun", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    dw, kick = _shared_rows(model, increments, kappa)
    x = state.positions.copy()
    wmap = np.zeros(len(x), dtype=np.int64)
    advance_positions(model, x, dw, wmap, kick, A, heun=scheme == "heun")
    return replace(state, t=state.t + dt, positions=x)


def step_tangent(model, state: FlowState, increments, dt: float, A: float = 1.0) -> FlowState:
    """Advance (positions, tangents) jointly one Heun step."""
    if state.tangents is None:
        raise ValueError("state has no tangents")
    dw, _ = _shared_rows(model, increments, 0.0)
    x = state.positions.copy()
    J = state.tangents.copy()
    wmap = np.zeros(len(x), dtype=np.int64)
    advance_tangent(model, x, J, dw, wmap, None, A)
    return replace(state, t=state.t + dt, positions=x, tangents=J)


def step_unit_tangent(model, state: FlowState, increments, dt: float, A: float = 1.0) -> FlowState:
    """Advance (positions, unit tangents) one Heun step, renormalizing."""
    if state.unit_tangents is None:
        raise ValueError("state has no unit tangents")
    dw, _ = _shared_rows(model, increments, 0.0)
    x = state.positions.copy()
    v = state.unit_tangents.copy()
    logg = (state.log_growth if state.log_growth is not None else np.zeros(len(x))).copy()
    wmap = np.zeros(len(x), dtype=np.int64)
    advance_unit(model, x, v, logg, dw, wmap, None, A)
    return replace(state, t=state.t + dt, positions=x, unit_tangents=v, log_growth=logg)


def positive_qr(J):
    """Batched QR with the positive-diagonal-R convention."""
    q, r = np.linalg.qr(J)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    sgn = np.where(diag >= 0, 1.0, -1.0)
    q = q * sgn[..., None, :]
    r = r * sgn[..., :, None]
    return q, r


def qr_renormalize(state: FlowState) -> FlowState:
    """Replace each J by its orthonormal Q factor, logging R11 into log_growth."""
    if state.tangents is None:
        raise ValueError("state has no tangents")
    if not np.all(np.isfinite(state.tangents)):
        raise FlowBlowupError("non-finite tangent matrix")
    q, r = positive_qr(state.tangents)
    r11 = r[..., 0, 0]
    if np.any(r11 <= 0.0):
        raise FlowBlowupError("singular tangent matrix in QR renormalization")
    log_growth = state.log_growth + np.log(r11) if state.log_growth is not None else np.log(r11)
    return replace(state, tangents=q, log_growth=log_growth)


@dataclass
class EnsembleConfig:
    """Run parameters for a multi-realization particle ensemble."""

    particles: int = 1
    realizations: int = 1
    t_final: float = 1.0
    dt: float = 1e-3
    amplitude: float = 1.0
    kappa: float = 0.0
    seed: int = 0
    initial_positions: np.ndarray | None = None  # (P, d), shared by realizations
    track_tangents: bool = False
    track_unit_tangents: bool = False
    snapshot_every: int = 1  # steps between stored snapshots
    qr_every: int = 10
    scheme: str = "heun"

    def validate(self, model):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.particles < 1 or self.realizations < 1:
            raise ValueError("particles and realizations must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.initial_positions is not None:
            x0 = np.atleast_2d(np.asarray(self.initial_positions, dtype=float))
            if x0.shape != (self.particles, model.d):
                raise ValueError("initial_positions must have shape (particles, d)")


@dataclass
class EnsembleRun:
    """Snapshot series over an arithmetic time grid covering [0, T]."""

    times: np.ndarray  # (S,)
    positions: np.ndarray  # (S, R, P, d)
    tangents: np.ndarray | None  # (S, R, P, d, d)
    unit_tangents: np.ndarray | None  # (S, R, P, d)
    log_growth: np.ndarray | None  # (S, R, P)
    config: EnsembleConfig


def run_ensemble(model, config: EnsembleConfig, noise: EnsembleNoise | None = None) -> EnsembleRun:
    """Integrate R independent realizations of a shared-noise P-particle ensemble.

    Within one realization every particle sees the same increments; across
    realizations the streams are independent.  Deterministic given the seed.
    `noise` overrides the default streams (dt-refinement studies).
    """
    config.validate(model)
    R, P, d = config.realizations, config.particles, model.d
    nsteps = int(round(config.t_final / config.dt))
    if config.initial_positions is None:
        x = np.zeros((R, P, d))
    else:
        x0 = np.atleast_2d(np.asarray(config.initial_positions, dtype=float))
        x = np.broadcast_to(wrap(x0), (R, P, d)).copy()
    J = np.broadcast_to(np.eye(d), (R, P, d, d)).copy() if config.track_tangents else None
    vu = None
    if config.track_unit_tangents:
        vu = np.zeros((R, P, d))
        vu[..., 0] = 1.0
    logg = np.zeros((R, P)) if (config.track_tangents or config.track_unit_tangents) else None

    ens = noise if noise is not None else EnsembleNoise(
        config.seed, config.dt, model.n_modes, model.d if config.kappa > 0 else 0)
    if abs(ens.dt - config.dt) > 1e-15 * config.dt:
        raise ValueError("noise dt does not match config dt")
    snaps = list(range(0, nsteps + 1, config.snapshot_every))
    if snaps[-1] != nsteps:
        snaps.append(nsteps)
    times = np.asarray(snaps, dtype=float) * config.dt
    pos_out = np.empty((len(snaps), R, P, d))
    tan_out = np.empty((len(snaps), R, P, d, d)) if J is not None else None
    unit_out = np.empty((len(snaps), R, P, d)) if vu is not None else None
    logg_out = np.empty((len(snaps), R, P)) if logg is not None else None

    def record(idx):
        pos_out[idx] = x
        if tan_out is not None:
            tan_out[idx] = J
        if unit_out is not None:
            unit_out[idx] = vu
        if logg_out is not None:
            logg_out[idx] = logg

    record(0)
    out_idx = 1
    A = config.amplitude
    wmap = np.repeat(np.arange(R, dtype=np.int64), P)
    xr = x.reshape(R * P, d)
    Jr = J.reshape(R * P, d, d) if J is not None else None
    vr = vu.reshape(R * P, d) if vu is not None else None
    gr = logg.reshape(R * P) if logg is not None else None
    for n in range(nsteps):
        dw, dwt = ens.step_rows(n, 0, R)
        kick = _kick(dwt, config.kappa) if dwt is not None else None
        kick = kick if isinstance(kick, np.ndarray) else None
        if Jr is not None:
            advance_tangent(model, xr, Jr, dw, wmap, kick, A)
            if (n + 1) % config.qr_every == 0:
                if not np.all(np.isfinite(Jr)):
                    raise FlowBlowupError(f"non-finite tangents at step {n + 1}")
                q, r = positive_qr(Jr)
                r11 = r[..., 0, 0]
                if np.any(r11 <= 0):
                    raise FlowBlowupError(f"singular tangents at step {n + 1}")
                Jr[:] = q
                gr += np.log(r11)
        elif vr is not None:
            advance_unit(model, xr, vr, gr, dw, wmap, kick, A)
        else:
            advance_positions(model, xr, dw, wmap, kick, A, heun=config.scheme == "heun")
        if out_idx < len(snaps) and n + 1 == snaps[out_idx]:
            record(out_idx)
            out_idx += 1
    return EnsembleRun(times, pos_out, tan_out, unit_out, logg_out, config)


def snapshots_to_csv_rows(run: EnsembleRun):
    """Rows (realization, t, particle, x1..xd, J row-major, v, log_growth)."""
    S, R, P, d = run.positions.shape
    header = ["realization", "t", "particle"] + [f"x{i + 1}" for i in range(d)]
    if run.tangents is not None:
        header += [f"J{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    if run.unit_tangents is not None:
        header += [f"v{i + 1}" for i in range(d)]
    if run.log_growth is not None:
        header += ["log_growth"]
    rows = []
    for s in range(S):
        for r in range(R):
            for p in range(P):
                row = [r, run.times[s], p] + list(run.positions[s, r, p])
                if run.tangents is not None:
                    row += list(run.tangents[s, r, p].reshape(-1))
                if run.unit_tangents is not None:
                    row += list(run.unit_tangents[s, r, p])
                if run.log_growth is not None:
                    row += [run.log_growth[s, r, p]]
                rows.append(row)
    return header, rows
