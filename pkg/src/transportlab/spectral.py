"""Pseudo-spectral solver for the advected-diffused scalar on the 2-torus.

Convention: u(x) = sum_z uhat(z) e^{i z.x} with ||u||_{L^2}^2 = sum |uhat|^2
(normalized measure).  The state is the raw fft2 spectrum F = N^2 uhat.
One step applies the stochastic Heun update of the Stratonovich transport
term (gradient in Fourier space, product in physical space, 2/3-rule
dealiasing) followed by the exact integrating factor of kappa*Laplacian + C,
so the pure-heat problem is solved to round-off for any dt.
"""

from dataclasses import dataclass, field

import numpy as np

from .fields import VelocityModel
from .noise import EnsembleNoise
from .torus import TWO_PI


class CflError(RuntimeError):
    """Transport displacement per step too large for the grid."""


def wavenumbers(N: int):
    z = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    return np.meshgrid(z, z, indexing="ij")


def dealias_mask(N: int) -> np.ndarray:
    z1, z2 = wavenumbers(N)
    return (np.abs(z1) <= N // 3) & (np.abs(z2) <= N // 3)


@dataclass
class SpectralField:
    """Real scalar on an N x N grid with a Fourier-coefficient view."""

    N: int
    values: np.ndarray  # (N, N) real, index [i, j] ~ x = (2 pi i / N, 2 pi j / N)

    def __post_init__(self):
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two (>= 4)")
        if self.values.shape != (self.N, self.N):
            raise ValueError("values must have shape (N, N)")

    @classmethod
    def from_terms(cls, N: int, terms) -> "SpectralField":
        """Build from a list of (coef, 'cos'|'sin', z1, z2) trigonometric terms."""
        grid = np.arange(N) * (TWO_PI / N)
        xx, yy = np.meshgrid(grid, grid, indexing="ij")
        vals = np.zeros((N, N))
        for coef, phase, z1, z2 in terms:
            ph = z1 * xx + z2 * yy
            vals += coef * (np.cos(ph) if phase == "cos" else np.sin(ph))
        return cls(N, vals)

    @property
    def coeffs(self) -> np.ndarray:
        """uhat(z) on the fft layout, u = sum uhat e^{iz.x}."""
        return np.fft.fft2(self.values) / self.N**2

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def sobolev_norm(self, s: float) -> float:
        return sobolev_norm(self, s)


def sobolev_norm(f, s: float) -> float:
    """H^s norm (sum_z (1 + |z|^2)^s |uhat|^2)^{1/2} on the retained modes.

    Accepts a SpectralField or a raw coefficient array in fft layout.
    For s < 0 the field must be mean-zero (the z = 0 term would otherwise
    dominate the weak norm meaninglessly).
    """
    if isinstance(f, SpectralField):
        coeff = f.coeffs
        N = f.N
    else:
        coeff = np.asarray(f)
        N = coeff.shape[0]
    if s < 0 and abs(coeff[0, 0]) > 1e-12:
        raise ValueError("negative-order Sobolev norm requires a mean-zero field")
    z1, z2 = wavenumbers(N)
    mult = (1.0 + z1.astype(float) ** 2 + z2.astype(float) ** 2) ** s
    return float(np.sqrt(np.sum(mult * np.abs(coeff) ** 2)))


class _ModeTables:
    """Velocity-mode trig tables on the N x N grid, built once per (model, N)."""

    def __init__(self, model: VelocityModel, N: int):
        grid = np.arange(N) * (TWO_PI / N)
        xx, yy = np.meshgrid(grid, grid, indexing="ij")
        pts = np.stack([xx, yy], axis=-1)
        ph = pts @ model.wavevectors.T  # (N, N, K)
        tr = np.where(model.phases == 1, np.sin(ph), np.cos(ph))
        # fold amplitude and direction into per-component weight tables
        self.t1 = tr * (model.eval_amps * model.eval_dirs[:, 0])
        self.t2 = tr * (model.eval_amps * model.eval_dirs[:, 1])

    def velocity(self, weights):
        return self.t1 @ weights, self.t2 @ weights


_TABLE_CACHE: dict = {}


def _tables(model: VelocityModel, N: int) -> _ModeTables:
    key = (id(model), N)
    tab = _TABLE_CACHE.get(key)
    if tab is None or tab[0]() is None:
        import weakref

        tab = (weakref.ref(model), _ModeTables(model, N))
        _TABLE_CACHE[key] = tab
    return tab[1]


class TransportBlowupError(RuntimeError):
    """Exponential transport step failed to converge within the term cap."""


def spde_step(F, model, tables, dw, dt, A, kappa, C, mask, lam, max_terms: int = 400,
              term_cap: int | None = None):
    """One step of du + A <sigma_k, grad u> o dW^k = (kappa Lap + C) u dt.

    F is the raw fft2 spectrum; returns the updated spectrum.  Within one
    step the transport generator S = -P(V . grad), with V the frozen
    velocity realization of the step's increments and P the 2/3-rule
    dealiasing projection, is applied as a truncated exponential
    sum_j S^j u / j!, stopped when the term drops below round-off.  S is
    exactly skew-adjoint on the dealiased grid (div V = 0 and the products
    stay band-limited), so the converged step is an L^2 isometry; the
    2-term truncation (`term_cap=2`) reproduces the classical stochastic
    Heun corrector, which is Stratonovich-consistent but only
    conditionally stable at large amplitude.  The reaction-diffusion part
    uses the exact integrating factor lam = exp((-kappa|z|^2 + C) dt).
    """
    N = F.shape[0]
    z1, z2 = wavenumbers(N)
    v1, v2 = tables.velocity(A * dw)

    def transport(Fc):
        ux = np.fft.ifft2(1j * z1 * Fc).real
        uy = np.fft.ifft2(1j * z2 * Fc).real
        w = -(v1 * ux + v2 * uy)
        Fw = np.fft.fft2(w)
        Fw[~mask] = 0.0
        return Fw

    unorm = np.linalg.norm(F)
    acc = F.copy()
    term = F
    cap = term_cap if term_cap is not None else max_terms
    tol = 1e-14 * unorm
    j = 0
    while j < cap:
        j += 1
        term = transport(term) / j
        acc += term
        if j >= 2 and np.linalg.norm(term) <= tol:
            break
    else:
        if term_cap is None:
            raise TransportBlowupError(
                f"transport exponential did not converge within {max_terms} terms"
            )
    Fn = acc * lam
    # enforce reality and the mean-zero contract
    Fsym = np.conj(np.roll(np.flip(Fn, (0, 1)), 1, (0, 1)))
    Fn = 0.5 * (Fn + Fsym)
    Fn[~mask] = 0.0
    Fn[0, 0] = 0.0
    return Fn


@dataclass
class SpdeRun:
    times: np.ndarray
    l2: np.ndarray
    h1: np.ndarray
    hminus1: np.ndarray
    grad_l2_sq: np.ndarray  # ||grad u||_{L^2}^2 = sum |z|^2 |uhat|^2
    residual: np.ndarray
    final: SpectralField
    final_coeffs: np.ndarray | None = None  # exact internal spectrum uhat(z)
    config: dict = field(default_factory=dict)


def cfl_guard(model, A: float, dt: float, N: int):
    h = TWO_PI / N
    if A * model.max_speed * dt > 0.5 * h:
        raise CflError(
            f"A * max|sigma| * dt = {A * model.max_speed * dt:.3g} exceeds half the "
            f"grid spacing {0.5 * h:.3g}; refuse to step"
        )


def run_spde(model, u0: SpectralField, A: float, kappa: float, C: float, t_final: float,
             dt: float, seed: int, realization: int = 0, record_every: int = 1,
             term_cap: int | None = None) -> SpdeRun:
    """Integrate the scalar SPDE, recording norms and the energy residual.

    Noise comes from the same per-realization transport streams as the
    Lagrangian modules, so Eulerian and Lagrangian runs are couplable.
    """
    N = u0.N
    cfl_guard(model, A, dt, N)
    nsteps = int(round(t_final / dt))
    mask = dealias_mask(N)
    z1, z2 = wavenumbers(N)
    zsq = z1.astype(float) ** 2 + z2.astype(float) ** 2
    lam = np.exp((-kappa * zsq + C) * dt)
    sob1 = 1.0 + zsq
    F = np.fft.fft2(u0.values)
    F[~mask] = 0.0
    ens = EnsembleNoise(seed, dt, model.n_modes)
    tables = _tables(model, N)

    steps = list(range(0, nsteps + 1, record_every))
    if steps[-1] != nsteps:
        steps.append(nsteps)
    times = np.asarray(steps, dtype=float) * dt
    S = len(steps)
    l2 = np.empty(S)
    h1 = np.empty(S)
    hm1 = np.empty(S)
    grad2 = np.empty(S)
    # per-step series for the trapezoid energy integral
    l2_all = np.empty(nsteps + 1)

    def norms(Fc):
        p = np.abs(Fc) ** 2 / N**4
        return (
            float(p.sum()),
            float((sob1 * p).sum()),
            float((p / sob1).sum()),
            float((zsq * p).sum()),
        )

    h1_all = np.empty(nsteps + 1)

    si = 0
    for n in range(nsteps + 1):
        l2sq, h1sq, hm1sq, g2 = norms(F)
        l2_all[n] = np.sqrt(l2sq)
        h1_all[n] = np.sqrt(h1sq)
        if si < S and n == steps[si]:
            l2[si] = np.sqrt(l2sq)
            h1[si] = np.sqrt(h1sq)
            hm1[si] = np.sqrt(hm1sq)
            grad2[si] = g2
            si += 1
        if n == nsteps:
            break
        dw = ens.step_rows(n, realization, realization + 1)[0][0]
        F = spde_step(F, model, tables, dw, dt, A, kappa, C, mask, lam, term_cap=term_cap)

    times_all = np.arange(nsteps + 1) * dt
    residual_all = energy_balance(times_all, l2_all, h1_all, kappa)
    residual = residual_all[np.asarray(steps, dtype=int)]
    final = SpectralField(N, np.fft.ifft2(F).real)
    return SpdeRun(times, l2, h1, hm1, grad2, residual, final, final_coeffs=F / N**2,
                   config={"A": A, "kappa": kappa, "C": C, "dt": dt, "seed": seed})


def energy_balance(times, l2, h1, kappa: float) -> np.ndarray:
    """Residual r(t) = ||u_0||^2 - ||u_t||^2 - 2 kappa int_0^t ||grad u_s||^2 ds.

    The history supplies L^2 and H^1 norms per recorded step; on the torus
    ||grad u||^2 = ||u||_{H^1}^2 - ||u||_{L^2}^2 (the gradient form of the
    Laplacian, sum_m ||d_m u||^2 = ||grad u||^2).  Trapezoid rule in time;
    for C = 0 the residual vanishes up to quadrature and integrator error.
    """
    times = np.asarray(times, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    grad_sq = h1**2 - l2**2
    seg = 0.5 * (grad_sq[1:] + grad_sq[:-1]) * np.diff(times)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return l2[0] ** 2 - l2**2 - 2.0 * kappa * cum


@dataclass
class SweepResult:
    amplitudes: np.ndarray
    rates: np.ndarray
    rate_stderrs: np.ndarray
    r_squared: np.ndarray
    windows: list
    monotone: bool
    q_hat: float | None
    median_series: list  # per-A DecaySeries of the median L2 norm


def enhanced_dissipation_sweep(model, u0_terms, a_list, kappa: float, C: float,
                               t_final: float, dt: float, n_realizations: int,
                               seed: int, N: int = 64, record_every: int = 10,
                               workers: int = 1) -> SweepResult:
    """Median L2 decay and fitted rate per amplitude; monotonicity and slope.

    The largest positive amplitudes (upper half, geometrically) enter the
    least-squares exponent q_hat of gamma(A) ~ A^q; the asymptotic A^2 law
    is reported, never asserted.
    """
    from .mixing import DecaySeries
    from .parallel import map_blocks

    a_list = list(a_list)
    if any(a2 <= a1 for a1, a2 in zip(a_list, a_list[1:])):
        raise ValueError("a_list must be strictly ascending")
    u0 = SpectralField.from_terms(N, u0_terms)
    if abs(u0.coeffs[0, 0]) > 1e-12:
        raise ValueError("initial scalar must be mean-zero")
    tasks = [
        (model, u0_terms, A, kappa, C, t_final, dt, seed, r, N, record_every)
        for A in a_list
        for r in range(n_realizations)
    ]
    runs = map_blocks(_sweep_run, tasks, workers)
    rates, ses, r2s, windows, series_list = [], [], [], [], []
    for ai, A in enumerate(a_list):
        group = runs[ai * n_realizations : (ai + 1) * n_realizations]
        times = group[0][0]
        l2s = np.stack([g[1] for g in group])
        med = np.median(l2s, axis=0)
        series = DecaySeries(times=times, values=med, stderrs=None)
        series.fit(window=_sweep_window(times, med))
        series_list.append(series)
        rates.append(series.rate)
        ses.append(series.rate_stderr)
        r2s.append(series.r_squared)
        windows.append(series.window)
    rates = np.asarray(rates)
    monotone = bool(np.all(np.diff(rates) > 0))
    pos = [(a, g) for a, g in zip(a_list, rates) if a > 0 and g > 0]
    q_hat = None
    if len(pos) >= 2:
        top = [ag for ag in pos if ag[0] >= pos[-1][0] / 2.0]
        if len(top) >= 2:
            la = np.log([a for a, _ in top])
            lg = np.log([g for _, g in top])
            q_hat = float(np.polyfit(la, lg, 1)[0])
    return SweepResult(
        amplitudes=np.asarray(a_list, dtype=float),
        rates=rates,
        rate_stderrs=np.asarray(ses),
        r_squared=np.asarray(r2s),
        windows=windows,
        monotone=monotone,
        q_hat=q_hat,
        median_series=series_list,
    )


def _sweep_window(times, values, floor: float = 1e-10):
    """Fit window for a positive decaying norm: skip the initial transient
    tenth of the horizon and everything below the round-off floor."""
    i0 = int(np.searchsorted(times, times[-1] * 0.1))
    above = values > floor * values[0]
    i1 = int(np.argmin(above)) if not above.all() else len(values)
    if i1 - i0 < 3:
        i0, i1 = 0, len(values)
    return (i0, i1)


def _sweep_run(args):
    (model, u0_terms, A, kappa, C, t_final, dt, seed, realization, N, record_every) = args
    u0 = SpectralField.from_terms(N, u0_terms)
    run = run_spde(model, u0, A, kappa, C, t_final, dt, seed, realization=realization,
                   record_every=record_every)
    return run.times, run.l2
