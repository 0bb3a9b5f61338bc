"""Two-point-motion diagnostics and Lagrangian mixing estimates.

Everything here rides on the shared-noise coupling of the particle flow:
pair separations contract at the moment-function rate, correlations of
mean-zero observables of the pair decay exponentially, and the Fourier
pairings c_z(t) = (2pi)^-d sum_q u(x_q) exp(-i z . phi_t(x_q)) advect one
quadrature cloud forward instead of simulating the inverse flow.  For
kappa > 0 the pairings are averaged over independent viscous streams
sharing one transport path.
"""

from dataclasses import dataclass

import numpy as np

from .flow import advance_positions
from .noise import EnsembleNoise, uniform_rows
from .parallel import map_blocks, realization_blocks
from .torus import TWO_PI, distance, wrap


# ---------------------------------------------------------------------------
# decay-rate fitting


@dataclass
class FitResult:
    rate: float
    intercept: float
    r_squared: float
    flat: bool = False
    rate_stderr: float = float("nan")


def fit_decay_rate(times, values, window=None, stderrs=None) -> FitResult:
    """Least-squares line through (t, log value); value ~ intercept * exp(-rate t).

    `window` is an (i0, i1) index range (default: everything).  Raises on
    non-positive values inside the window or fewer than 3 points.  A
    constant series fits rate 0 with R^2 reported as 0 and the flat flag.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (0, len(times))
    i0, i1 = window
    t = times[i0:i1]
    v = values[i0:i1]
    if len(t) < 3:
        raise ValueError("fit window must contain at least 3 points")
    if np.any(v <= 0.0):
        raise ValueError("fit window contains non-positive values")
    y = np.log(v)
    slope, b = np.polyfit(t, y, 1)
    resid = y - (slope * t + b)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        return FitResult(rate=0.0, intercept=float(np.exp(b)), r_squared=0.0, flat=True,
                         rate_stderr=0.0)
    r2 = 1.0 - float(np.sum(resid**2) / ss_tot)
    if stderrs is not None:
        sy = np.asarray(stderrs, dtype=float)[i0:i1] / v  # delta method on log
        sy = np.where(sy > 0, sy, np.nan)
        wgt = 1.0 / np.where(np.isnan(sy), np.nanmedian(sy) if np.any(~np.isnan(sy)) else 1.0, sy) ** 2
        wsum = wgt.sum()
        tbar = (wgt * t).sum() / wsum
        denom = (wgt * (t - tbar) ** 2).sum()
        se = float(np.sqrt(1.0 / denom)) if denom > 0 else float("nan")
    else:
        dof = len(t) - 2
        denom = np.sum((t - t.mean()) ** 2)
        se = float(np.sqrt(np.sum(resid**2) / dof / denom)) if dof > 0 else float("nan")
    return FitResult(rate=float(-slope), intercept=float(np.exp(b)), r_squared=r2,
                     rate_stderr=se)


def auto_window(values, stderrs, noise_factor: float = 3.0, min_points: int = 3):
    """Longest contiguous index range with value above noise_factor * stderr.

    Returns (i0, i1) or None when no stretch of at least `min_points`
    survives (the series has decayed below the Monte Carlo noise floor).
    """
    values = np.asarray(values, dtype=float)
    if stderrs is None:
        return (0, len(values)) if len(values) >= min_points else None
    ok = values > noise_factor * np.asarray(stderrs, dtype=float)
    best = None
    start = None
    for i, good in enumerate(list(ok) + [False]):
        if good and start is None:
            start = i
        elif not good and start is not None:
            if best is None or i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if best is None or best[1] - best[0] < min_points:
        return None
    return best


@dataclass
class DecaySeries:
    """(time, value) series with an exponential-rate fit over a window."""

    times: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray | None = None
    rate: float = float("nan")
    intercept: float = float("nan")
    r_squared: float = float("nan")
    rate_stderr: float = float("nan")
    window: tuple | None = None
    flat: bool = False
    below_noise: bool = False
    note: str = ""

    def fit(self, window=None) -> "DecaySeries":
        """Fit over `window` (indices) or the automatic above-noise window."""
        if window is None:
            window = auto_window(self.values, self.stderrs)
        if window is None:
            self.below_noise = True
            i = int(np.argmax(
                self.values <= 3.0 * (self.stderrs if self.stderrs is not None else 0.0)
            ))
            self.note = f"decayed below noise floor by t = {self.times[i]:g}"
            return self
        res = fit_decay_rate(self.times, self.values, window, stderrs=self.stderrs)
        self.rate = res.rate
        self.intercept = res.intercept
        self.r_squared = res.r_squared
        self.rate_stderr = res.rate_stderr
        self.flat = res.flat
        self.window = window
        return self


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class TrigProductObservable:
    """psi(x, y) = trig_a(z_a . x) * trig_b(z_b . y); exactly mean-zero."""

    z_a: tuple
    phase_a: str
    z_b: tuple
    phase_b: str

    def __call__(self, x, y):
        fa = np.cos if self.phase_a == "cos" else np.sin
        fb = np.cos if self.phase_b == "cos" else np.sin
        return fa(np.asarray(x) @ np.asarray(self.z_a, dtype=float)) * fb(
            np.asarray(y) @ np.asarray(self.z_b, dtype=float)
        )

    @property
    def sup_norm(self) -> float:
        return 1.0

    def quadrature_mean(self, q: int = 64) -> float:
        grid = (np.arange(q) + 0.5) * (TWO_PI / q)
        xx, yy = np.meshgrid(grid, grid, indexing="ij")
        pts = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=-1)
        fa = np.cos if self.phase_a == "cos" else np.sin
        fb = np.cos if self.phase_b == "cos" else np.sin
        ma = fa(pts @ np.asarray(self.z_a, dtype=float)).mean()
        mb = fb(pts @ np.asarray(self.z_b, dtype=float)).mean()
        return float(ma * mb)


def cos_cos_observable() -> TrigProductObservable:
    """psi(x, y) = cos(x1) cos(y1)."""
    return TrigProductObservable((1, 0), "cos", (1, 0), "cos")


# ---------------------------------------------------------------------------
# two-point motion


def _snap_steps(t_grid, dt):
    steps = np.asarray(np.round(np.asarray(t_grid, dtype=float) / dt), dtype=int)
    return steps, steps * dt


def _two_point_block(args):
    (model, A, kappa, x, y, snap_steps, dt, seed, r0, r1, shared, m_total) = args
    n = r1 - r0
    pos = np.empty((2 * n, model.d))
    pos[0::2] = x
    pos[1::2] = y
    wmap = np.empty(2 * n, dtype=np.int64)
    wmap[0::2] = np.arange(n)
    # shared: both particles read the realization's stream; misuse toggle
    # (test only): the second particle gets stream m_total + r instead
    wmap[1::2] = np.arange(n) if shared else np.arange(n) + n
    ens = EnsembleNoise(seed, dt, model.n_modes, model.d if kappa > 0 else 0)
    nsteps = int(snap_steps.max())
    snapset = set(int(s) for s in snap_steps)
    out = np.empty((len(snap_steps), n))
    si = 0
    if 0 in snapset:
        out[si] = distance(pos[0::2], pos[1::2])
        si += 1
    for step in range(nsteps):
        if shared:
            dw, dwt = ens.step_rows(step, r0, r1)
        else:
            dw0, dwt0 = ens.step_rows(step, r0, r1)
            dw1, dwt1 = ens.step_rows(step, m_total + r0, m_total + r1)
            dw = np.concatenate([dw0, dw1])
            dwt = np.concatenate([dwt0, dwt1]) if dwt0 is not None else None
        kick = np.sqrt(2.0 * kappa) * dwt if (kappa > 0 and dwt is not None) else None
        advance_positions(model, pos, dw, wmap, kick, A)
        if step + 1 in snapset:
            out[si] = distance(pos[0::2], pos[1::2])
            si += 1
    return out


def two_point_moments(model, A: float, kappa: float, x, y, p_list, t_grid, M: int,
                      seed: int, dt: float = 1e-3, shared_noise: bool = True,
                      workers: int = 1) -> dict:
    """Monte Carlo series of E[d(x_t, y_t)^{-p}] for each p in p_list.

    The pair is advanced under shared noise (`shared_noise=False` is a
    test-only misuse toggle that decouples the streams).  Returns
    {p: DecaySeries} with per-time standard errors; distances use torus
    wrapping.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if distance(x, y) == 0.0:
        raise ValueError("x and y must be distinct")
    p_list = [float(p) for p in p_list]
    if any(p <= 0 or p > 1 for p in p_list):
        raise ValueError("p values must lie in (0, 1]")
    snap_steps, times = _snap_steps(t_grid, dt)
    tasks = [
        (model, A, kappa, x, y, snap_steps, dt, seed, r0, r1, shared_noise, M)
        for (r0, r1) in realization_blocks(M)
    ]
    dists = np.concatenate(map_blocks(_two_point_block, tasks, workers), axis=1)
    out = {}
    for p in p_list:
        vals = dists ** (-p)
        series = DecaySeries(
            times=times,
            values=vals.mean(axis=1),
            stderrs=vals.std(axis=1, ddof=1) / np.sqrt(M),
        )
        out[p] = series
    return out


@dataclass
class VpDriftReport:
    p: float
    t_star: float
    separations: np.ndarray
    rho: np.ndarray  # E[d_{t*}^{-p}] / delta^{-p}
    rho_stderr: np.ndarray
    plateau_vp: float  # E[d_{t*}^{-p}] at the largest separation
    predicted_rho_smalldelta: float | None = None  # exp(-Lambda(p) A^2 t*)


def vp_drift_check(model, A: float, kappa: float, p: float, separations, t_star: float,
                   M: int, seed: int, dt: float = 1e-3, moment_rate: float | None = None,
                   workers: int = 1) -> VpDriftReport:
    """Contraction factors rho(delta) of the separation moment at time t_star.

    rho(delta) -> exp(-Lambda(p) A^2 t_star) as delta -> 0 and is bounded
    in delta; the additive constant of the drift bound shows up as the
    large-delta plateau of E[d^{-p}].
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    separations = np.asarray(sorted(separations), dtype=float)
    base = uniform_rows(seed, 0, M, model.d + 1)
    x0 = wrap(base[:, : model.d] * TWO_PI)
    theta = base[:, model.d] * TWO_PI
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    rho = np.empty(len(separations))
    rho_se = np.empty(len(separations))
    plateau = 0.0
    for i, delta in enumerate(separations):
        y0 = wrap(x0 + delta * u)
        tasks = [
            (model, A, kappa, x0[r0:r1], y0[r0:r1], np.array([int(round(t_star / dt))]),
             dt, seed, r0, r1, True, M)
            for (r0, r1) in realization_blocks(M)
        ]
        d_t = np.concatenate([b[-1] for b in map_blocks(_pair_block_xy, tasks, workers)])
        vals = d_t ** (-p)
        rho[i] = vals.mean() / delta ** (-p)
        rho_se[i] = vals.std(ddof=1) / np.sqrt(M) / delta ** (-p)
        plateau = float(vals.mean())
    return VpDriftReport(
        p=p,
        t_star=t_star,
        separations=separations,
        rho=rho,
        rho_stderr=rho_se,
        plateau_vp=plateau,
        predicted_rho_smalldelta=(
            float(np.exp(-moment_rate * A**2 * t_star)) if moment_rate is not None else None
        ),
    )


def _pair_block_xy(args):
    """Like _two_point_block but with per-realization initial pairs."""
    (model, A, kappa, x, y, snap_steps, dt, seed, r0, r1, shared, m_total) = args
    n = r1 - r0
    pos = np.empty((2 * n, model.d))
    pos[0::2] = x
    pos[1::2] = y
    wmap = np.repeat(np.arange(n, dtype=np.int64), 2)
    ens = EnsembleNoise(seed, dt, model.n_modes, model.d if kappa > 0 else 0)
    nsteps = int(snap_steps.max())
    snapset = set(int(s) for s in snap_steps)
    out = np.empty((len(snap_steps), n))
    si = 0
    if 0 in snapset:
        out[si] = distance(pos[0::2], pos[1::2])
        si += 1
    for step in range(nsteps):
        dw, dwt = ens.step_rows(step, r0, r1)
        kick = np.sqrt(2.0 * kappa) * dwt if (kappa > 0 and dwt is not None) else None
        advance_positions(model, pos, dw, wmap, kick, A)
        if step + 1 in snapset:
            out[si] = distance(pos[0::2], pos[1::2])
            si += 1
    return out


def _correlation_block(args):
    (model, A, kappa, psi, x, y, snap_steps, dt, seed, r0, r1) = args
    n = r1 - r0
    pos = np.empty((2 * n, model.d))
    pos[0::2] = x
    pos[1::2] = y
    wmap = np.repeat(np.arange(n, dtype=np.int64), 2)
    ens = EnsembleNoise(seed, dt, model.n_modes, model.d if kappa > 0 else 0)
    nsteps = int(snap_steps.max())
    snapset = set(int(s) for s in snap_steps)
    out = np.empty((len(snap_steps), n))
    si = 0
    if 0 in snapset:
        out[si] = psi(pos[0::2], pos[1::2])
        si += 1
    for step in range(nsteps):
        dw, dwt = ens.step_rows(step, r0, r1)
        kick = np.sqrt(2.0 * kappa) * dwt if (kappa > 0 and dwt is not None) else None
        advance_positions(model, pos, dw, wmap, kick, A)
        if step + 1 in snapset:
            out[si] = psi(pos[0::2], pos[1::2])
            si += 1
    return out


def correlation_decay(model, A: float, kappa: float, psi, x, y, t_grid, M: int,
                      seed: int, dt: float = 1e-3, workers: int = 1) -> DecaySeries:
    """|E psi(x_t, y_t)| with Monte Carlo errors and an exponential fit.

    psi must be mean-zero with respect to mu (x) mu (checked by quadrature
    to 1e-10) and bounded.  The fit runs over the automatic window where
    the signal exceeds 3x the MC noise; if no such window exists the
    series is returned with the below-noise note instead of a fit.
    """
    if abs(psi.quadrature_mean(64)) > 1e-10:
        raise ValueError("observable is not mean-zero under the product measure")
    if not np.isfinite(psi.sup_norm):
        raise ValueError("observable must be bounded")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    snap_steps, times = _snap_steps(t_grid, dt)
    tasks = [
        (model, A, kappa, psi, x, y, snap_steps, dt, seed, r0, r1)
        for (r0, r1) in realization_blocks(M)
    ]
    vals = np.concatenate(map_blocks(_correlation_block, tasks, workers), axis=1)
    series = DecaySeries(
        times=times,
        values=np.abs(vals.mean(axis=1)),
        stderrs=vals.std(axis=1, ddof=1) / np.sqrt(M),
    )
    return series.fit()


# ---------------------------------------------------------------------------
# Lagrangian Fourier pairings


@dataclass
class PairingSeries:
    """Fourier pairings c_z(t) of an advected initial scalar.

    `c` holds the complex pairings of the first transport realization
    (after inner viscous averaging); `energy` holds |c_z|^2 averaged over
    the outer transport realizations, which is what the weak-norm proxies
    consume.
    """

    times: np.ndarray
    zs: np.ndarray  # (nz, 2) integer wavevectors, 0 excluded
    c: np.ndarray  # (S, nz) complex, realization 0
    quadrature: int
    inner_samples: int
    z_cut: int
    n_realizations: int = 1
    energy: np.ndarray | None = None  # (S, nz) mean |c|^2 over realizations
    energy_se: np.ndarray | None = None

    def z_index(self, z) -> int:
        hit = np.where((self.zs == np.asarray(z)).all(axis=1))[0]
        if not len(hit):
            raise KeyError(f"wavevector {z} not retained")
        return int(hit[0])

    def hminus_proxy(self, s: float = 1.0) -> DecaySeries:
        """sum_z (1 + |z|^2)^{-s} |c_z(t)|^2, a truncated H^{-s} norm-squared proxy."""
        wgt = (1.0 + np.sum(self.zs.astype(float) ** 2, axis=1)) ** (-s)
        if self.energy is not None:
            vals = (self.energy * wgt).sum(axis=1)
            se = (
                np.sqrt(((self.energy_se * wgt) ** 2).sum(axis=1))
                if self.energy_se is not None else None
            )
            return DecaySeries(times=self.times, values=vals, stderrs=se)
        vals = (np.abs(self.c) ** 2 * wgt).sum(axis=1)
        return DecaySeries(times=self.times, values=vals, stderrs=None)

    def csv_rows(self):
        rows = []
        for si, t in enumerate(self.times):
            for zi, z in enumerate(self.zs):
                rows.append([t, int(z[0]), int(z[1]), self.c[si, zi].real, self.c[si, zi].imag])
        return ["t", "z1", "z2", "re_c", "im_c"], rows


def build_u_weights(u_terms, Q: int):
    """Midpoint-grid samples of u = sum coef * trig(z . x), scaled by 1/Q^2."""
    grid = (np.arange(Q) + 0.5) * (TWO_PI / Q)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=-1)
    u = np.zeros(Q * Q)
    for coef, phase, z1, z2 in u_terms:
        ph = pts @ np.array([z1, z2], dtype=float)
        u += coef * (np.cos(ph) if phase == "cos" else np.sin(ph))
    return pts, u / (Q * Q)


def _pairing_run(args):
    (model, A, kappa, pts, w, z_cut, snap_steps, dt, seed, realization, inner_idx) = args
    Q2 = len(pts)
    pos = pts.copy()
    wmap = np.zeros(Q2, dtype=np.int64)
    ens = EnsembleNoise(seed, dt, model.n_modes, model.d if kappa > 0 else 0,
                        viscous_offset=inner_idx - realization)
    nsteps = int(snap_steps.max())
    snapset = set(int(s) for s in snap_steps)
    out = []

    def _powers(e):
        p = np.empty((len(e), 2 * z_cut + 1), dtype=complex)
        p[:, z_cut] = 1.0
        for m in range(1, z_cut + 1):
            p[:, z_cut + m] = p[:, z_cut + m - 1] * e
            p[:, z_cut - m] = np.conj(p[:, z_cut + m])
        return p

    def snapshot():
        p1 = _powers(np.exp(-1j * pos[:, 0]))
        p2 = _powers(np.exp(-1j * pos[:, 1]))
        return p1.T @ (p2 * w[:, None])

    if 0 in snapset:
        out.append(snapshot())
    for step in range(nsteps):
        dw, dwt = ens.step_rows(step, realization, realization + 1)
        kick = np.sqrt(2.0 * kappa) * dwt if (kappa > 0 and dwt is not None) else None
        advance_positions(model, pos, dw, wmap, kick, A)
        if step + 1 in snapset:
            out.append(snapshot())
    return np.asarray(out)


def mixing_pairing(model, A: float, kappa: float, u_terms, z_cut: int, t_grid,
                   Q: int, inner_samples: int, seed: int, dt: float = 1e-3,
                   n_realizations: int = 1, workers: int = 1,
                   _allow_nonzero_mean: bool = False) -> PairingSeries:
    """Pairings c_z(t) of the advected scalar against Fourier modes |z|_inf <= z_cut.

    One shared transport stream advects the whole midpoint quadrature
    cloud; for kappa > 0 the pairings are averaged over `inner_samples`
    independent viscous streams (the conditional expectation over the
    viscous noise).  `n_realizations` adds outer Monte Carlo over
    independent transport streams: the complex pairings of realization 0
    are returned as `c`, the realization-averaged energies |c_z|^2 as
    `energy`.  Requires Q >= 4 z_cut and mean-zero u.
    """
    if Q < 4 * z_cut:
        raise ValueError("quadrature must satisfy Q >= 4 * z_cut")
    pts, w = build_u_weights(u_terms, Q)
    if not _allow_nonzero_mean and abs(w.sum()) > 1e-12:
        raise ValueError("initial scalar must be mean-zero")
    snap_steps, times = _snap_steps(t_grid, dt)
    inner = inner_samples if kappa > 0 else 1
    tasks = [
        (model, A, kappa, pts, w, z_cut, snap_steps, dt, seed, r, r * inner + i)
        for r in range(n_realizations)
        for i in range(inner)
    ]
    grids = map_blocks(_pairing_run, tasks, workers)
    zz1, zz2 = np.meshgrid(np.arange(-z_cut, z_cut + 1), np.arange(-z_cut, z_cut + 1),
                           indexing="ij")
    keep = ~((zz1 == 0) & (zz2 == 0)).reshape(-1)
    zs = np.stack([zz1.reshape(-1)[keep], zz2.reshape(-1)[keep]], axis=-1)
    per_real = []
    for r in range(n_realizations):
        cg = np.mean(grids[r * inner : (r + 1) * inner], axis=0)
        per_real.append(cg.reshape(len(times), -1)[:, keep])
    energies = np.abs(np.asarray(per_real)) ** 2  # (R, S, nz)
    energy = energies.mean(axis=0)
    energy_se = (
        energies.std(axis=0, ddof=1) / np.sqrt(n_realizations)
        if n_realizations > 1 else None
    )
    return PairingSeries(times=times, zs=zs, c=per_real[0], quadrature=Q,
                         inner_samples=inner, z_cut=z_cut,
                         n_realizations=n_realizations, energy=energy,
                         energy_se=energy_se)


def measure_preservation_check(model, A: float, kappa: float, z_cut: int, t_grid,
                               Q: int, seed: int, dt: float = 1e-3) -> float:
    """Max |c_z(t)| over z != 0 and t for u = 1: volume preservation proxy."""
    series = mixing_pairing(
        model, A, kappa, [(1.0, "cos", 0, 0)], z_cut, t_grid, Q, 1, seed, dt=dt,
        _allow_nonzero_mean=True,
    )
    return float(np.abs(series.c).max())
