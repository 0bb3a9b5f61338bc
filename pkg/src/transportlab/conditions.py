"""Numerical checks of the hypoellipticity/ellipticity hypotheses.

Span checks work on Gram matrices of mode vectors at sample points; Lie
brackets use the analytic Jacobians.  Bracket sign convention:
[f, g] = <Dg, f> - <Df, g>, so for the four-mode family
[sigma_1, sigma_3](x) = (sin x1 cos x2, -cos x1 sin x2); the opposite
convention only flips signs and leaves every span unchanged, and reports
record that equivalence.
"""

from dataclasses import dataclass

import numpy as np

from . import fields
from .torus import displacement

RANK_RTOL = 1e-9  # singular values below RANK_RTOL * s_max count as zero


@dataclass
class SpanResult:
    points: tuple
    rank: int
    smallest_sv: float
    generating_set: str
    rank_with_brackets: int | None = None


def _rank_and_sv(rows: np.ndarray, ambient: int):
    """Numerical rank of the row span and the ambient-smallest singular value."""
    if rows.size == 0:
        return 0, 0.0
    sv = np.linalg.svd(rows, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > RANK_RTOL * smax)) if smax > 0 else 0
    padded = np.zeros(ambient)
    padded[: sv.size] = sv
    return rank, float(padded[ambient - 1])


def check_span_A(model: fields.VelocityModel, x) -> SpanResult:
    """Order-0 span of {sigma_k(x)}; bracket-augmented rank if deficient."""
    x = np.asarray(x, dtype=float)
    rows = fields.all_sigma(model, x)
    rank, sv = _rank_and_sv(rows, model.d)
    result = SpanResult(points=(tuple(x),), rank=rank, smallest_sv=sv, generating_set="fields")
    if rank < model.d and model.n_modes > 1:
        brackets = [
            lie_bracket(model, j, k, x)
            for j in range(model.n_modes)
            for k in range(j + 1, model.n_modes)
        ]
        aug = np.vstack([rows, np.asarray(brackets)])
        result.rank_with_brackets, _ = _rank_and_sv(aug, model.d)
        result.generating_set = "fields + depth-1 brackets"
    return result


def two_point_ellipticity(model: fields.VelocityModel, x, y) -> float:
    """Smallest eigenvalue of the Gram matrix of (sigma_k(x) (+) sigma_k(y)).

    Equals inf over unit (u, v) of sum_k |<sigma_k(x), u> + <sigma_k(y), v>|^2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(displacement(x, y), 0.0):
        raise ValueError("two-point ellipticity is undefined on the diagonal x = y")
    rows = np.concatenate([fields.all_sigma(model, x), fields.all_sigma(model, y)], axis=-1)
    sv = np.linalg.svd(rows, compute_uv=False)
    padded = np.zeros(2 * model.d)
    padded[: sv.size] = sv
    return float(padded[2 * model.d - 1] ** 2)


def sigma_tilde(model: fields.VelocityModel, x, v) -> np.ndarray:
    """Normalized-tangent-flow coefficients (K, d).

    sigma~_k(x, v) = <Dsigma_k(x), v> - v <v, <Dsigma_k(x), v>>, i.e. the
    projection of Dsigma_k(x) v onto v-perp.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    jac = fields.all_jacobians(model, x)  # (K, d, d)
    jv = jac @ v
    return jv - np.outer(jv @ v, v)


def tangent_ellipticity(model: fields.VelocityModel, x, v) -> float:
    """Smallest eigenvalue of the Gram of (sigma_k(x) (+) P_{v-perp} sigma~_k).

    The sigma~ part is expressed in an orthonormal basis of v-perp, so the
    test space has dimension d + (d - 1).
    """
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    x = np.asarray(x, dtype=float)
    # deterministic orthonormal basis of v-perp from the SVD of v as a row
    _, _, vt = np.linalg.svd(v[None, :])
    perp = vt[1:]  # (d-1, d)
    st = sigma_tilde(model, x, v) @ perp.T  # (K, d-1)
    rows = np.concatenate([fields.all_sigma(model, x), st], axis=-1)
    dim = 2 * model.d - 1
    sv = np.linalg.svd(rows, compute_uv=False)
    padded = np.zeros(dim)
    padded[: sv.size] = sv
    return float(padded[dim - 1] ** 2)


def lie_bracket(model: fields.VelocityModel, j: int, k: int, x) -> np.ndarray:
    """[sigma_j, sigma_k](x) = <Dsigma_k(x), sigma_j(x)> - <Dsigma_j(x), sigma_k(x)>."""
    x = np.asarray(x, dtype=float)
    sj = fields.eval_sigma(model, j, x)
    sk = fields.eval_sigma(model, k, x)
    return fields.eval_jacobian(model, k, x) @ sj - fields.eval_jacobian(model, j, x) @ sk


def two_point_lie_bracket(model: fields.VelocityModel, j: int, k: int, x, y) -> np.ndarray:
    """Componentwise bracket of the stacked fields (sigma(x), sigma(y)), shape (2d,)."""
    return np.concatenate([lie_bracket(model, j, k, x), lie_bracket(model, j, k, y)])


_BR_MODEL = None


def _br():
    global _BR_MODEL
    if _BR_MODEL is None:
        _BR_MODEL = fields.build_br()
    return _BR_MODEL


def check_br_two_point_span(x, y, include_brackets: bool = True) -> SpanResult:
    """Rank of the two-point span for the four-mode family at (x, y).

    Raw rows are the 4 stacked fields; with `include_brackets` all
    first-order two-point brackets are appended.
    """
    model = _br()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rows = np.concatenate([fields.all_sigma(model, x), fields.all_sigma(model, y)], axis=-1)
    rank_raw, sv = _rank_and_sv(rows, 2 * model.d)
    result = SpanResult(
        points=(tuple(x), tuple(y)),
        rank=rank_raw,
        smallest_sv=sv,
        generating_set="two-point fields",
    )
    if include_brackets:
        brackets = [
            two_point_lie_bracket(model, j, k, x, y)
            for j in range(model.n_modes)
            for k in range(j + 1, model.n_modes)
        ]
        aug = np.vstack([rows, np.asarray(brackets)])
        result.rank_with_brackets, _ = _rank_and_sv(aug, 2 * model.d)
        result.generating_set = "two-point fields + depth-1 brackets"
    return result


def br_degeneracy_distance(x, y) -> float:
    """Distance of the wrapped offset x - y from the lattice {0, pi}^2.

    The raw four-mode two-point fields lose rank exactly on that lattice,
    and first-order brackets repair the loss only away from it; sampling
    margins are stated against this distance.
    """
    delta = displacement(x, y)
    best = np.inf
    for ox in (0.0, np.pi):
        for oy in (0.0, np.pi):
            r = displacement(delta, np.array([ox, oy]))
            best = min(best, float(np.linalg.norm(r)))
    return best
