"""Top Lyapunov exponent and moment Lyapunov function estimators.

lambda_1 comes from QR-renormalized tangent ensembles (time average of
log R11 over the second half of the run, first half discarded as burn-in).
The moment function Lambda(p) = -(1/T) log E exp(-p L_T) reweights the
accumulated log growth L_T of the normalized tangent flow; an
effective-sample-size guard flags p values whose exponential reweighting
is dominated by a single trajectory.  A grid-discretized twisted semigroup
provides an independent second estimator of Lambda(p) through its leading
eigenvalue, with the eigenfunction returned on the grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowBlowupError, advance_tangent, advance_unit, positive_qr
from .noise import EnsembleNoise, uniform_rows
from .parallel import map_blocks, realization_blocks
from .torus import TWO_PI, wrap


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""


@dataclass
class LyapunovEstimate:
    lambda1_hat: float
    stderr: float
    t_final: float
    dt: float
    n_realizations: int
    exponents: np.ndarray  # per-realization finite-time exponents

    def confidence_interval(self, z: float = 1.96) -> tuple[float, float]:
        return (self.lambda1_hat - z * self.stderr, self.lambda1_hat + z * self.stderr)


def _lambda1_block(args):
    model, A, nsteps, half, dt, seed, r0, r1, qr_every = args
    n = r1 - r0
    x = wrap(uniform_rows(seed, r0, r1, model.d) * TWO_PI)
    J = np.broadcast_to(np.eye(model.d), (n, model.d, model.d)).copy()
    logg = np.zeros(n)
    g_half = np.zeros(n)
    ens = EnsembleNoise(seed, dt, model.n_modes)
    wmap = np.arange(n, dtype=np.int64)

    def flush():
        if not np.all(np.isfinite(J)):
            raise FlowBlowupError("non-finite tangents in lambda1 estimation")
        q, r = positive_qr(J)
        r11 = r[..., 0, 0]
        if np.any(r11 <= 0):
            raise FlowBlowupError("singular tangents in lambda1 estimation")
        J[:] = q
        logg[:] = logg + np.log(r11)

    for step in range(nsteps):
        dw, _ = ens.step_rows(step, r0, r1)
        advance_tangent(model, x, J, dw, wmap, None, A)
        if (step + 1) % qr_every == 0 or step + 1 in (half, nsteps):
            flush()
        if step + 1 == half:
            g_half[:] = logg
    return (logg - g_half) / ((nsteps - half) * dt)


def estimate_lambda1(model, A: float, t_final: float, dt: float, n_realizations: int,
                     seed: int, qr_every: int = 10, workers: int = 1) -> LyapunovEstimate:
    """Estimate the top Lyapunov exponent of the amplitude-A flow.

    Per realization, the time average of QR log growth over [T/2, T];
    the estimate is the realization mean with stderr = std/sqrt(n).
    """
    if t_final < 50.0:
        raise ValueError("t_final must be >= 50 (decorrelation budget)")
    if n_realizations < 8:
        raise ValueError("n_realizations must be >= 8")
    nsteps = int(round(t_final / dt))
    half = nsteps // 2
    tasks = [
        (model, A, nsteps, half, dt, seed, r0, r1, qr_every)
        for (r0, r1) in realization_blocks(n_realizations)
    ]
    exponents = np.concatenate(map_blocks(_lambda1_block, tasks, workers))
    return LyapunovEstimate(
        lambda1_hat=float(exponents.mean()),
        stderr=float(exponents.std(ddof=1) / np.sqrt(n_realizations)),
        t_final=t_final,
        dt=dt,
        n_realizations=n_realizations,
        exponents=exponents,
    )


@dataclass
class MomentLyapunovCurve:
    p: np.ndarray
    lambda_hat: np.ndarray
    stderr: np.ndarray
    reliable: np.ndarray  # False where the ESS guard tripped
    max_weight_fraction: np.ndarray
    t_final: float
    dt: float
    n_samples: int
    bias_drift: np.ndarray = field(default=None)  # Lambda_T - Lambda_{T/2} per p
    lambda1_proxy: float = float("nan")  # mean log growth / T (no burn-in)
    lambda1_proxy_se: float = float("nan")


def _moment_block(args):
    model, A, nsteps, half, dt, seed, r0, r1 = args
    n = r1 - r0
    init = uniform_rows(seed, r0, r1, model.d + 1)
    x = wrap(init[:, : model.d] * TWO_PI)
    if model.d == 2:
        theta = init[:, model.d] * TWO_PI
        v = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        v = uniform_rows(seed, r0, r1, model.d, salt=3) - 0.5
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    logg = np.zeros(n)
    l_half = np.zeros(n)
    ens = EnsembleNoise(seed, dt, model.n_modes)
    wmap = np.arange(n, dtype=np.int64)
    for step in range(nsteps):
        dw, _ = ens.step_rows(step, r0, r1)
        advance_unit(model, x, v, logg, dw, wmap, None, A)
        if step + 1 == half:
            l_half[:] = logg
    return l_half, logg


def _log_mean_exp(a: np.ndarray) -> float:
    m = a.max()
    return float(m + np.log(np.mean(np.exp(a - m))))


def _jackknife_se(a: np.ndarray, t_final: float) -> float:
    """Leave-one-out stderr of -(1/T) log mean exp(a)."""
    m = a.max()
    u = np.exp(a - m)
    s = u.sum()
    n = u.size
    loo = -(m + np.log((s - u) / (n - 1))) / t_final
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def estimate_moment_lyapunov(model, A: float, p_grid, t_final: float, dt: float,
                             n_samples: int, seed: int, p_max: float = 1.0,
                             workers: int = 1) -> MomentLyapunovCurve:
    """Estimate Lambda(p) = -(1/T) log E |D phi_T v|^{-p} on a p grid.

    Lambda(0) is imposed to be exactly 0.  Per-p jackknife standard errors;
    p values whose largest weight exp(-p L) exceeds half the total are
    flagged unreliable rather than rejected.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(np.abs(p_grid) > p_max):
        raise ValueError(f"p grid must lie within [-{p_max}, {p_max}]")
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    nsteps = int(round(t_final / dt))
    half = nsteps // 2
    tasks = [
        (model, A, nsteps, half, dt, seed, r0, r1)
        for (r0, r1) in realization_blocks(n_samples)
    ]
    parts = map_blocks(_moment_block, tasks, workers)
    l_half = np.concatenate([p[0] for p in parts])
    l_full = np.concatenate([p[1] for p in parts])

    lam = np.zeros_like(p_grid)
    se = np.zeros_like(p_grid)
    maxw = np.zeros_like(p_grid)
    drift = np.zeros_like(p_grid)
    for i, p in enumerate(p_grid):
        if p == 0.0:
            continue
        a = -p * l_full
        lam[i] = -_log_mean_exp(a) / t_final
        se[i] = _jackknife_se(a, t_final)
        u = np.exp(a - a.max())
        maxw[i] = float(u.max() / u.sum())
        lam_half = -_log_mean_exp(-p * l_half) / (half * dt)
        drift[i] = lam[i] - lam_half
    return MomentLyapunovCurve(
        p=p_grid,
        lambda_hat=lam,
        stderr=se,
        reliable=maxw <= 0.5,
        max_weight_fraction=maxw,
        t_final=t_final,
        dt=dt,
        n_samples=n_samples,
        bias_drift=drift,
        lambda1_proxy=float(l_full.mean() / t_final),
        lambda1_proxy_se=float(l_full.std(ddof=1) / np.sqrt(n_samples) / t_final),
    )


def check_slope_at_zero(curve: MomentLyapunovCurve, lambda1: float,
                        lambda1_se: float = 0.0) -> dict:
    """Compare the central-difference slope of Lambda at 0 against lambda_1."""
    ps = curve.p
    candidates = sorted(
        p for p in ps if p > 0 and np.any(np.abs(ps + p) < 1e-12)
    )
    if not candidates:
        raise ValueError("curve contains no symmetric +-p pair")
    p_small = candidates[0]
    i_plus = int(np.argmin(np.abs(ps - p_small)))
    i_minus = int(np.argmin(np.abs(ps + p_small)))
    slope = (curve.lambda_hat[i_plus] - curve.lambda_hat[i_minus]) / (2 * p_small)
    slope_se = float(np.hypot(curve.stderr[i_plus], curve.stderr[i_minus]) / (2 * p_small))
    return {
        "p_small": float(p_small),
        "slope": float(slope),
        "slope_se": slope_se,
        "lambda1": float(lambda1),
        "lambda1_se": float(lambda1_se),
        "difference": float(slope - lambda1),
        "combined_se": float(np.hypot(slope_se, lambda1_se)),
    }


def second_differences(curve: MomentLyapunovCurve):
    """Curvature probes on the (possibly nonuniform) p grid.

    For consecutive p1 < p2 < p3 returns 2 * f[p1, p2, p3] (the divided
    difference), negative for concave data, with propagated stderr.
    """
    order = np.argsort(curve.p)
    p = curve.p[order]
    f = curve.lambda_hat[order]
    s = curve.stderr[order]
    vals, errs = [], []
    for i in range(len(p) - 2):
        p1, p2, p3 = p[i], p[i + 1], p[i + 2]
        c1 = 2.0 / ((p2 - p1) * (p3 - p1))
        c2 = -2.0 / ((p3 - p2) * (p2 - p1))
        c3 = 2.0 / ((p3 - p2) * (p3 - p1))
        vals.append(c1 * f[i] + c2 * f[i + 1] + c3 * f[i + 2])
        errs.append(np.sqrt((c1 * s[i]) ** 2 + (c2 * s[i + 1]) ** 2 + (c3 * s[i + 2]) ** 2))
    return np.asarray(vals), np.asarray(errs)


@dataclass
class TwistedEigenResult:
    lambda_hat: float
    stderr: float
    eigenvalue: float
    t_step: float
    p: float
    psi: np.ndarray  # (nx, nx, n_angle) eigenfunction, mean 1
    quarter_estimates: np.ndarray


def _power_iteration(mat: np.ndarray, cap: int) -> tuple[float, np.ndarray]:
    """Leading eigenpair of a nonnegative matrix by shifted power iteration.

    The Perron shift M + cI (c = max row sum) makes the leading root
    strictly dominant in modulus, which defeats the oscillation a noisy
    discretization can produce through complex subdominant pairs.
    """
    n = mat.shape[0]
    shift = float(mat.sum(axis=1).max())
    if shift == 0.0:
        raise PowerIterationError("operator annihilated the iterate")
    psi = np.ones(n)
    lam_prev = np.inf
    stable = 0
    for _ in range(cap):
        phi = mat @ psi + shift * psi
        norm = np.linalg.norm(phi)
        if norm == 0.0:
            raise PowerIterationError("operator annihilated the iterate")
        lam = float(psi @ phi / (psi @ psi))
        psi = phi / norm
        # sustained eigenvalue stability; the gap-limited eigenvector slop
        # left at this tolerance sits far below the Monte Carlo noise
        stable = stable + 1 if abs(lam - lam_prev) <= 1e-11 * max(1.0, abs(lam)) else 0
        if stable >= 20:
            return lam - shift, psi
        lam_prev = lam
    raise PowerIterationError(f"no convergence after {cap} iterations")


def estimate_twisted_eigen(model, A: float, p: float, grid_resolution: int,
                           t_step: float, n_transition_samples: int, seed: int,
                           dt: float = 1e-3, n_angle: int = 8, quarters: int = 4,
                           power_iter_cap: int = 20000, chunk: int = 4096):
    """Leading eigenpair of the grid-discretized twisted semigroup (d = 2 only).

    Each cell of the (grid x angle-bin) partition of T^2 x S^1 launches
    `n_transition_samples` trajectories of length `t_step`; the weight
    |J v|^{-p} is deposited into the landing cell.  Returns
    -log(eigenvalue)/t_step and the grid eigenfunction; the stderr comes
    from rebuilding the operator on disjoint sample quarters.
    """
    if model.d != 2:
        raise ValueError("twisted-semigroup estimator supports d = 2 only")
    if n_transition_samples % quarters:
        raise ValueError("n_transition_samples must be divisible by quarters")
    nx = int(grid_resolution)
    ncells = nx * nx * n_angle
    nsteps = int(round(t_step / dt))
    nsamp = int(n_transition_samples)

    ix, iy, ia = np.meshgrid(np.arange(nx), np.arange(nx), np.arange(n_angle), indexing="ij")
    cx = (ix.reshape(-1) + 0.5) * (TWO_PI / nx)
    cy = (iy.reshape(-1) + 0.5) * (TWO_PI / nx)
    th = (ia.reshape(-1) + 0.5) * (TWO_PI / n_angle)

    total = ncells * nsamp
    src_all = np.repeat(np.arange(ncells), nsamp)
    mats = np.zeros((quarters, ncells, ncells))
    ens = EnsembleNoise(seed, dt, model.n_modes)
    per_quarter = nsamp // quarters

    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        src = src_all[lo:hi]
        sample_idx = np.arange(lo, hi) % nsamp
        x = np.ascontiguousarray(np.stack([cx[src], cy[src]], axis=-1))
        ang = th[src]
        v = np.ascontiguousarray(np.stack([np.cos(ang), np.sin(ang)], axis=-1))
        logg = np.zeros(hi - lo)
        wmap = np.arange(hi - lo, dtype=np.int64)
        for step in range(nsteps):
            dw, _ = ens.step_rows(step, lo, hi)
            advance_unit(model, x, v, logg, dw, wmap, None, A)
        w = np.exp(-p * logg)
        gx = (x[:, 0] // (TWO_PI / nx)).astype(int) % nx
        gy = (x[:, 1] // (TWO_PI / nx)).astype(int) % nx
        ga = (np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI) // (TWO_PI / n_angle)).astype(int) % n_angle
        dst = (gx * nx + gy) * n_angle + ga
        q = sample_idx // per_quarter
        np.add.at(mats, (q, src, dst), w / per_quarter)

    lam_q = np.empty(quarters)
    for qi in range(quarters):
        ev, _ = _power_iteration(mats[qi], power_iter_cap)
        lam_q[qi] = -np.log(ev) / t_step
    full = mats.mean(axis=0)
    ev_full, psi = _power_iteration(full, power_iter_cap)
    psi = psi / psi.mean()
    return TwistedEigenResult(
        lambda_hat=float(-np.log(ev_full) / t_step),
        stderr=float(lam_q.std(ddof=1) / np.sqrt(quarters)),
        eigenvalue=float(ev_full),
        t_step=t_step,
        p=p,
        psi=psi.reshape(nx, nx, n_angle),
        quarter_estimates=lam_q,
    )
