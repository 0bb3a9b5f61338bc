"""Velocity-field mode families on the flat torus.

Every built-in family is a finite ordered list of divergence-free
trigonometric modes

    sigma_k(x) = amplitude_k * a_k * trig_k(z_k . x),

with a_k a unit polarization orthogonal to the integer wavevector z_k and
trig in {cos, sin}.  Values, Jacobians and Hessians are therefore available
in closed form, and the whole family can be evaluated at a batch of points
with a couple of matrix products.  Constant modes (z = 0, cos phase) are
allowed for custom families used in tests.
"""

from dataclasses import dataclass, field
from itertools import product as _iproduct

import numpy as np

from .torus import TWO_PI

PHASE_COS = 0
PHASE_SIN = 1


@dataclass(frozen=True)
class VelocityModel:
    """Immutable family of analytic velocity modes on T^d.

    `polarizations` holds the unit vectors a_k; evaluation goes through
    `eval_dirs`/`eval_amps`, an equivalent factorization amp_k * a_k =
    eval_amps_k * eval_dirs_k in which eval_dirs is integer-valued where
    possible (d = 2), so that <eval_dirs_k, z_k> and hence the divergence
    are exactly zero in floating point.
    """

    kind: str
    d: int
    wavevectors: np.ndarray  # (K, d) float array of integer wavevectors
    polarizations: np.ndarray  # (K, d) unit vectors, <a_k, z_k> = 0
    amplitudes: np.ndarray  # (K,)
    phases: np.ndarray  # (K,) int, PHASE_COS or PHASE_SIN
    params: dict = field(default_factory=dict)
    eval_dirs: np.ndarray | None = None
    eval_amps: np.ndarray | None = None
    # lazily computed evaluation plan; None = not yet computed, False = unpaired
    _plan: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.eval_dirs is None:
            object.__setattr__(self, "eval_dirs", self.polarizations)
        if self.eval_amps is None:
            object.__setattr__(self, "eval_amps", self.amplitudes)
        for name in ("wavevectors", "polarizations", "amplitudes", "phases",
                     "eval_dirs", "eval_amps"):
            getattr(self, name).setflags(write=False)

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    @property
    def max_speed(self) -> float:
        """Conservative bound sum_k sup_x |sigma_k(x)| = sum_k amplitude_k."""
        return float(np.sum(self.amplitudes))

    def to_config(self) -> dict:
        """Serializable description (built-in families only)."""
        if self.kind == "kraichnan":
            return {
                "kind": "kraichnan",
                "d": self.d,
                "alpha": self.params["alpha"],
                "zmax": self.params["zmax"],
                "scale": self.params.get("scale", 1.0),
            }
        if self.kind == "br":
            return {"kind": "br"}
        raise ValueError("only built-in families are config-serializable")


def model_from_config(cfg: dict) -> VelocityModel:
    kind = cfg["kind"]
    if kind == "kraichnan":
        return build_kraichnan(
            int(cfg.get("d", 2)),
            float(cfg["alpha"]),
            int(cfg["zmax"]),
            scale=float(cfg.get("scale", 1.0)),
        )
    if kind == "br":
        return build_br()
    raise ValueError(f"unknown field kind {kind!r}")


def _polarization_basis(z: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the orthogonal complement of z.

    d = 2 uses the rotation (-z2, z1)/|z| (exact zero inner product in
    floating point); d >= 3 uses Gram-Schmidt on the standard basis
    projected onto z-perp, skipping near-parallel candidates.
    """
    z = np.asarray(z, dtype=float)
    d = z.size
    if d == 2:
        a = np.array([-z[1], z[0]]) / np.linalg.norm(z)
        return a[None, :]
    zn = z / np.linalg.norm(z)
    basis: list[np.ndarray] = []
    for i in range(d):
        v = np.zeros(d)
        v[i] = 1.0
        v -= zn * (zn @ v)
        for b in basis:
            v -= b * (b @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
        if len(basis) == d - 1:
            break
    return np.asarray(basis)


def _lex_dominant_wavevectors(d: int, zmax: int) -> list[tuple[int, ...]]:
    """One representative per pair {z, -z} with |z|_inf <= zmax, sorted."""
    reps = []
    for z in _iproduct(range(-zmax, zmax + 1), repeat=d):
        if all(c == 0 for c in z):
            continue
        if z > tuple(-c for c in z):
            reps.append(z)
    reps.sort()
    return reps


def build_kraichnan(d: int, alpha: float, zmax: int, scale: float = 1.0) -> VelocityModel:
    """Kraichnan family on T^d truncated to |z|_inf <= zmax.

    Per unordered pair {z, -z} (representative z lexicographically
    dominating) and per polarization-basis vector a_z^l the family holds a
    cosine and a sine mode with amplitude 1/(2 |z|^{(d+alpha)/2}).  That
    normalization is pinned by the covariance identity: the mode sum then
    equals sum_z [delta_ij - z_i z_j/|z|^2] e^{iz.(x-y)} / (8 |z|^{d+alpha})
    entrywise.  Requires alpha > 2; rougher fields do not generate a flow.
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if not alpha > 2:
        raise ValueError(f"alpha must be > 2, got {alpha}")
    if zmax < 1:
        raise ValueError(f"zmax must be >= 1, got {zmax}")
    zs, pols, amps, phs, dirs, eamps = [], [], [], [], [], []
    for z in _lex_dominant_wavevectors(d, zmax):
        zarr = np.asarray(z, dtype=float)
        znorm = np.linalg.norm(zarr)
        amp = scale / (2.0 * znorm ** ((d + alpha) / 2.0))
        if d == 2:
            cands = [(np.array([-zarr[1], zarr[0]]), znorm)]
        else:
            cands = [(a, 1.0) for a in _polarization_basis(zarr)]
        for direction, dirnorm in cands:
            for phase in (PHASE_COS, PHASE_SIN):
                zs.append(zarr)
                pols.append(direction / dirnorm)
                dirs.append(direction)
                amps.append(amp)
                eamps.append(amp / dirnorm)
                phs.append(phase)
    return VelocityModel(
        kind="kraichnan",
        d=d,
        wavevectors=np.asarray(zs),
        polarizations=np.asarray(pols),
        amplitudes=np.asarray(amps),
        phases=np.asarray(phs, dtype=np.int64),
        params={"alpha": float(alpha), "zmax": int(zmax), "scale": float(scale)},
        eval_dirs=np.asarray(dirs),
        eval_amps=np.asarray(eamps),
    )


def build_br() -> VelocityModel:
    """Four-mode family on T^2: (0, sin x1), (0, cos x1), (sin x2, 0), (cos x2, 0)."""
    zs = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    pols = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    amps = np.ones(4)
    phs = np.array([PHASE_SIN, PHASE_COS, PHASE_SIN, PHASE_COS], dtype=np.int64)
    return VelocityModel(
        kind="br", d=2, wavevectors=zs, polarizations=pols, amplitudes=amps, phases=phs
    )


def build_custom(modes) -> VelocityModel:
    """Custom analytic family from (wavevector, polarization, amplitude, phase) tuples.

    A constant field is a z = 0 cosine mode; phase is "cos"/"sin" or the
    PHASE_* integer.  Polarizations are normalized; non-constant modes must
    satisfy <a, z> = 0.
    """
    if len(modes) == 0:
        return VelocityModel(
            kind="custom",
            d=2,
            wavevectors=np.zeros((0, 2)),
            polarizations=np.zeros((0, 2)),
            amplitudes=np.zeros(0),
            phases=np.zeros(0, dtype=np.int64),
        )
    zs, pols, amps, phs = [], [], [], []
    for z, a, amp, phase in modes:
        z = np.asarray(z, dtype=float)
        a = np.asarray(a, dtype=float)
        if isinstance(phase, str):
            phase = {"cos": PHASE_COS, "sin": PHASE_SIN}[phase]
        if np.any(z != 0) and abs(a @ z) > 1e-12 * np.linalg.norm(a) * np.linalg.norm(z):
            raise ValueError("custom mode polarization is not orthogonal to z")
        zs.append(z)
        pols.append(a / np.linalg.norm(a))
        amps.append(float(amp))
        phs.append(phase)
    return VelocityModel(
        kind="custom",
        d=len(zs[0]),
        wavevectors=np.asarray(zs),
        polarizations=np.asarray(pols),
        amplitudes=np.asarray(amps),
        phases=np.asarray(phs, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# batched evaluation engine


def mode_trigs(model: VelocityModel, x: np.ndarray):
    """trig_k(z_k . x) and its derivative trig_k'(z_k . x), each (..., K)."""
    x = np.asarray(x, dtype=float)
    phases = x @ model.wavevectors.T
    c = np.cos(phases)
    s = np.sin(phases)
    sin_mask = model.phases == PHASE_SIN
    tr = np.where(sin_mask, s, c)
    dtr = np.where(sin_mask, c, -s)
    return tr, dtr


class _PairPlan:
    """Grouping of cos/sin mode pairs sharing (z, direction, amplitude).

    Lets the hot kernels evaluate one phase per pair instead of one per
    mode.  `perm` maps external mode order to [cos_0, sin_0, cos_1, ...];
    identity permutations are skipped.  Integer wavevectors additionally
    enable the power-table phase evaluation e^{iz.x} = prod_j (e^{ix_j})^{z_j},
    which replaces per-mode libm trig with a handful of complex multiplies.
    """

    def __init__(self, perm, z, dirs, amps):
        self.perm = perm
        self.identity = bool(np.array_equal(perm, np.arange(perm.size)))
        self.z = z  # (npair, d)
        self.dirs = dirs  # (npair, d)
        self.amps = amps  # (npair,)
        zi = z.astype(np.int64)
        if np.array_equal(zi, z) and np.abs(zi).max(initial=0) <= 64:
            self.zint = zi
            self.zspan = np.abs(zi).max(axis=0)
        else:
            self.zint = None
            self.zspan = None

    def phase_trigs(self, x: np.ndarray):
        """(cos(z_p . x), sin(z_p . x)) for every pair, shapes (..., npair)."""
        if self.zint is None:
            ph = x @ self.z.T
            return np.cos(ph), np.sin(ph)
        out = None
        for j in range(self.z.shape[1]):
            span = int(self.zspan[j])
            if span == 0:
                continue
            e = np.exp(1j * x[..., j])
            pows = np.empty(x.shape[:-1] + (2 * span + 1,), dtype=complex)
            pows[..., span] = 1.0
            for m in range(1, span + 1):
                pows[..., span + m] = pows[..., span + m - 1] * e
                pows[..., span - m] = np.conj(pows[..., span + m])
            t = pows[..., self.zint[:, j] + span]
            out = t if out is None else out * t
        if out is None:  # all-constant family
            shape = x.shape[:-1] + (self.z.shape[0],)
            return np.ones(shape), np.zeros(shape)
        return out.real, out.imag


def _pair_plan(model: VelocityModel) -> _PairPlan | None:
    if model._plan is not None:
        return model._plan or None
    plan = None
    K = model.n_modes
    if K and K % 2 == 0:
        used = np.zeros(K, dtype=bool)
        perm, zs, dirs, amps = [], [], [], []
        ok = True
        for k in range(K):
            if used[k]:
                continue
            partner = -1
            for m in range(k + 1, K):
                if used[m] or model.phases[m] == model.phases[k]:
                    continue
                if (
                    np.array_equal(model.wavevectors[m], model.wavevectors[k])
                    and np.array_equal(model.eval_dirs[m], model.eval_dirs[k])
                    and model.eval_amps[m] == model.eval_amps[k]
                ):
                    partner = m
                    break
            if partner < 0:
                ok = False
                break
            used[k] = used[partner] = True
            cos_k, sin_k = (k, partner) if model.phases[k] == PHASE_COS else (partner, k)
            perm += [cos_k, sin_k]
            zs.append(model.wavevectors[k])
            dirs.append(model.eval_dirs[k])
            amps.append(model.eval_amps[k])
        if ok:
            plan = _PairPlan(np.asarray(perm), np.asarray(zs), np.asarray(dirs), np.asarray(amps))
    object.__setattr__(model, "_plan", plan if plan is not None else False)
    return plan


def paired_factors(model: VelocityModel, x: np.ndarray, weights: np.ndarray):
    """Per-pair weighted value/derivative factors, or None if unpaired.

    Returns (eff, deff, plan) with eff = amp (w_cos cos + w_sin sin) and
    deff = amp (w_sin cos - w_cos sin), each (..., npair), so that
    sum_k w_k sigma_k = eff @ plan.dirs and the Jacobian action uses deff.
    """
    plan = _pair_plan(model)
    if plan is None:
        return None
    w = np.asarray(weights)
    wp = w if plan.identity else w[..., plan.perm]
    wc = wp[..., 0::2]
    ws = wp[..., 1::2]
    c, s = plan.phase_trigs(np.asarray(x, dtype=float))
    eff = plan.amps * (wc * c + ws * s)
    deff = plan.amps * (ws * c - wc * s)
    return eff, deff, plan


def velocity(model: VelocityModel, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_k weights_k sigma_k(x) for x of shape (..., d), weights (..., K) or (K,)."""
    pf = paired_factors(model, x, weights)
    if pf is not None:
        eff, _, plan = pf
        return eff @ plan.dirs
    tr, _ = mode_trigs(model, x)
    wtr = tr * (model.eval_amps * np.asarray(weights))
    return wtr @ model.eval_dirs


def velocity_and_vector_action(model, x, vec, weights):
    """(sum_k w_k sigma_k(x), sum_k w_k Dsigma_k(x) vec) in one trig pass."""
    pf = paired_factors(model, x, weights)
    if pf is not None:
        eff, deff, plan = pf
        zv = np.asarray(vec) @ plan.z.T
        return eff @ plan.dirs, (deff * zv) @ plan.dirs
    tr, dtr = mode_trigs(model, x)
    aw = model.eval_amps * np.asarray(weights)
    zv = np.asarray(vec) @ model.wavevectors.T
    return (tr * aw) @ model.eval_dirs, (dtr * aw * zv) @ model.eval_dirs


def velocity_and_matrix_action(model, x, mat, weights):
    """(sum_k w_k sigma_k(x), sum_k w_k Dsigma_k(x) @ mat) in one trig pass."""
    pf = paired_factors(model, x, weights)
    if pf is not None:
        eff, deff, plan = pf
        zm = np.einsum("kj,...jc->...kc", plan.z, mat)
        return eff @ plan.dirs, np.einsum("...k,ka,...kc->...ac", deff, plan.dirs, zm)
    tr, dtr = mode_trigs(model, x)
    aw = model.eval_amps * np.asarray(weights)
    zm = np.einsum("kj,...jc->...kc", model.wavevectors, mat)
    return (tr * aw) @ model.eval_dirs, np.einsum(
        "...k,ka,...kc->...ac", dtr * aw, model.eval_dirs, zm
    )


def tangent_action(model, x, mat, weights):
    """sum_k weights_k Dsigma_k(x) @ mat for matrices mat of shape (..., d, d)."""
    return velocity_and_matrix_action(model, x, mat, weights)[1]


def tangent_action_vector(model, x, vec, weights):
    """sum_k weights_k Dsigma_k(x) @ vec for vectors vec of shape (..., d)."""
    return velocity_and_vector_action(model, x, vec, weights)[1]


def all_sigma(model: VelocityModel, x: np.ndarray) -> np.ndarray:
    """Stack of sigma_k(x), shape (..., K, d)."""
    tr, _ = mode_trigs(model, x)
    return (model.eval_amps * tr)[..., None] * model.eval_dirs


def all_jacobians(model: VelocityModel, x: np.ndarray) -> np.ndarray:
    """Stack of Dsigma_k(x), shape (..., K, d, d); entry [i, j] = d sigma^i / d x^j."""
    _, dtr = mode_trigs(model, x)
    outer = model.eval_dirs[:, :, None] * model.wavevectors[:, None, :]  # (K, d, d)
    return (model.eval_amps * dtr)[..., None, None] * outer


def eval_sigma(model: VelocityModel, k: int, x) -> np.ndarray:
    """Closed-form sigma_k(x)."""
    _check_index(model, k)
    return all_sigma(model, np.asarray(x, dtype=float))[..., k, :]


def eval_jacobian(model: VelocityModel, k: int, x) -> np.ndarray:
    """Closed-form Dsigma_k(x)."""
    _check_index(model, k)
    return all_jacobians(model, np.asarray(x, dtype=float))[..., k, :, :]


def eval_hessian(model: VelocityModel, k: int, x) -> np.ndarray:
    """Closed-form D^2 sigma_k(x); entry [i, j, l] = d^2 sigma^i / dx^j dx^l."""
    _check_index(model, k)
    tr, _ = mode_trigs(model, np.asarray(x, dtype=float))
    z = model.wavevectors[k]
    a = model.eval_dirs[k]
    # trig'' = -trig for both phases
    return -model.eval_amps[k] * tr[..., k, None, None, None] * (
        a[:, None, None] * z[None, :, None] * z[None, None, :]
    )


def _check_index(model, k):
    if not 0 <= k < model.n_modes:
        raise IndexError(f"mode index {k} out of range [0, {model.n_modes})")


# ---------------------------------------------------------------------------
# covariance


def covariance(model: VelocityModel, x, y) -> np.ndarray:
    """Two-point covariance D(x, y) = sum_k sigma_k(x) (x) sigma_k(y)."""
    sx = all_sigma(model, np.asarray(x, dtype=float))
    sy = all_sigma(model, np.asarray(y, dtype=float))
    return np.einsum("...ka,...kb->...ab", sx, sy)


def covariance_closed_form(d: int, alpha: float, zmax: int, r, scale: float = 1.0) -> np.ndarray:
    """Truncated closed-form Kraichnan covariance at displacement r.

    sum over 0 < |z|_inf <= zmax of [delta_ij - z_i z_j / |z|^2]
    cos(z . r) / (8 |z|^{d+alpha}); the z <-> -z symmetry cancels the
    imaginary parts, leaving the cosine.
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros((d, d))
    for z in _iproduct(range(-zmax, zmax + 1), repeat=d):
        if all(c == 0 for c in z):
            continue
        zarr = np.asarray(z, dtype=float)
        n2 = zarr @ zarr
        proj = np.eye(d) - np.outer(zarr, zarr) / n2
        out += proj * (np.cos(zarr @ r) / (8.0 * n2 ** ((d + alpha) / 2.0)))
    return scale * scale * out


# ---------------------------------------------------------------------------
# structural checks


@dataclass
class CheckRecord:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.value <= self.threshold


@dataclass
class ConditionReport:
    """Outcome of a family of pointwise checks; passes iff every record does."""

    name: str
    records: list
    summary: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)


def structural_checks(model: VelocityModel, nsamples: int, seed: int) -> ConditionReport:
    """Divergence-free and self-advection identities plus shell summability.

    At `nsamples` uniform points reports max_k |div sigma_k| and
    max_k |<Dsigma_k, sigma_k>|, and per shell |z|_inf = n the partial sum
    sum_k ||sigma_k||_inf^2 + ||Dsigma_k||_inf^2 + ||D^2 sigma_k||_inf
    ||sigma_k||_inf (analytic sup-norms) with the integral tail bound.
    """
    if nsamples < 1:
        raise ValueError("nsamples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, TWO_PI, size=(nsamples, model.d))
    sig = all_sigma(model, pts)  # (n, K, d)
    jac = all_jacobians(model, pts)  # (n, K, d, d)
    max_div = float(np.abs(np.trace(jac, axis1=-2, axis2=-1)).max()) if model.n_modes else 0.0
    self_adv = np.einsum("nkij,nkj->nki", jac, sig)
    max_selfadv = float(np.abs(self_adv).max()) if model.n_modes else 0.0

    znorm = np.linalg.norm(model.wavevectors, axis=1)
    shell = np.max(np.abs(model.wavevectors), axis=1).astype(int)
    terms = model.amplitudes**2 * (1.0 + 2.0 * znorm**2)
    shells = sorted(set(shell[shell > 0]))
    shell_sums = {int(n): float(terms[shell == n].sum()) for n in shells}

    summary = {
        "max_abs_divergence": max_div,
        "max_abs_self_advection": max_selfadv,
        "shell_sums": shell_sums,
    }
    if model.kind == "kraichnan" and len(shells) >= 2:
        alpha = model.params["alpha"]
        zmax = model.params["zmax"]
        logn = np.log(np.asarray(shells, dtype=float))
        logs = np.log([shell_sums[n] for n in shells])
        slope = float(np.polyfit(logn, logs, 1)[0])
        c_last = shell_sums[shells[-1]] / shells[-1] ** (1.0 - alpha)
        tail = c_last * zmax ** (2.0 - alpha) / (alpha - 2.0)
        summary["shell_slope"] = slope
        summary["expected_slope"] = 1.0 - alpha
        summary["tail_bound"] = float(tail)

    records = [
        CheckRecord("max_abs_divergence", max_div, 1e-12),
        CheckRecord("max_abs_self_advection", max_selfadv, 1e-12),
    ]
    return ConditionReport(name=f"structural[{model.kind}]", records=records, summary=summary)
