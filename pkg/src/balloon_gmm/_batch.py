"""Vectorized closed-form 2x2 kernels for the fitting hot path.

Mirrors the scalar algebra in `gauss2` on numpy arrays that hold one matrix
per row as separate (a, b, c) channels. Only elementwise arithmetic and
fixed-order numpy reductions are used -- no BLAS calls, no np.linalg -- so
results are bit-reproducible across runs and independent of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss2 import (
    DET_FLOOR,
    TWO_PI,
    GaussComponent,
    MixtureModel,
    SampleSet,
    SingularMatrixError,
    SpdMat2,
    Vec2,
)


def inv2(a: np.ndarray, b: np.ndarray, c: np.ndarray, what: str = "matrix"):
    """Channel-wise inverse of [[a, b], [b, c]]; returns (ia, ib, ic, det)."""
    det = a * c - b * b
    bad = ~((a > 0.0) & (det > DET_FLOOR))
    if np.any(bad):
        i = int(np.flatnonzero(np.ravel(bad))[0])
        af, bf, cf = np.ravel(a)[i] if np.ndim(a) else a, np.ravel(b)[i] if np.ndim(b) else b, np.ravel(c)[i] if np.ndim(c) else c
        raise SingularMatrixError(f"{what} (flat index {i}) [[{af}, {bf}], [{bf}, {cf}]] is not positive-definite")
    return c / det, -b / det, a / det, det


def eig_floor(a: np.ndarray, b: np.ndarray, c: np.ndarray, floor: float):
    """Raise eigenvalues below `floor`; returns (a, b, c, count_floored)."""
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lmin = mid - rad
    need = lmin < floor
    count = int(np.count_nonzero(need))
    if count == 0:
        return a, b, c, 0
    l1 = np.maximum(mid + rad, floor)
    l2 = np.maximum(lmin, floor)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    cs = np.cos(theta)
    sn = np.sin(theta)
    a2 = l1 * cs * cs + l2 * sn * sn
    b2 = (l1 - l2) * cs * sn
    c2 = l1 * sn * sn + l2 * cs * cs
    return np.where(need, a2, a), np.where(need, b2, b), np.where(need, c2, c), count


@dataclass
class ModelArrays:
    """Struct-of-arrays view of a mixture: weights, means, covariance channels."""

    pi: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    ca: np.ndarray
    cb: np.ndarray
    cc: np.ndarray

    def __len__(self) -> int:
        return self.pi.shape[0]


def from_model(model: MixtureModel) -> ModelArrays:
    comp = model.components
    return ModelArrays(
        pi=np.array([c.weight for c in comp], dtype=np.float64),
        mx=np.array([c.mean.x for c in comp], dtype=np.float64),
        my=np.array([c.mean.y for c in comp], dtype=np.float64),
        ca=np.array([c.cov.a for c in comp], dtype=np.float64),
        cb=np.array([c.cov.b for c in comp], dtype=np.float64),
        cc=np.array([c.cov.c for c in comp], dtype=np.float64),
    )


def to_model(pi, mx, my, ca, cb, cc) -> MixtureModel:
    comps = tuple(
        GaussComponent(
            weight=float(pi[m]),
            mean=Vec2(float(mx[m]), float(my[m])),
            cov=SpdMat2(float(ca[m]), float(cb[m]), float(cc[m])),
        )
        for m in range(len(pi))
    )
    return MixtureModel(components=comps)


def from_samples(samples: SampleSet) -> np.ndarray:
    return np.array([(p.x, p.y) for p in samples], dtype=np.float64)


def pdf_matrix(arr: ModelArrays, X: np.ndarray) -> np.ndarray:
    """(M, N) matrix of weight_m * N(x_n | mean_m, cov_m)."""
    ia, ib, ic, det = inv2(arr.ca, arr.cb, arr.cc, "component covariance")
    dx = X[None, :, 0] - arr.mx[:, None]
    dy = X[None, :, 1] - arr.my[:, None]
    q = ia[:, None] * dx * dx + (2.0 * ib)[:, None] * dx * dy + ic[:, None] * dy * dy
    norm = arr.pi / (TWO_PI * np.sqrt(det))
    return norm[:, None] * np.exp(-0.5 * q)


def e_step(arr: ModelArrays, X: np.ndarray) -> np.ndarray:
    """Column-normalized responsibilities; raises when a sample is unreachable."""
    P = pdf_matrix(arr, X)
    col = np.sum(P, axis=0)
    if np.any(col <= 0.0):
        n = int(np.flatnonzero(col <= 0.0)[0])
        raise ValueError(f"sample {n} has zero responsibility under every component")
    return P / col[None, :]


def log_likelihood(arr: ModelArrays, X: np.ndarray) -> float:
    P = pdf_matrix(arr, X)
    col = np.sum(P, axis=0)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(col)))


def mixture_pdf_grid(arr: ModelArrays, xv: np.ndarray, yv: np.ndarray) -> np.ndarray:
    """Mixture density evaluated elementwise on coordinate arrays."""
    ia, ib, ic, det = inv2(arr.ca, arr.cb, arr.cc, "component covariance")
    norm = arr.pi / (TWO_PI * np.sqrt(det))
    out = np.zeros(np.broadcast(xv, yv).shape, dtype=np.float64)
    for m in range(len(arr)):
        dx = xv - arr.mx[m]
        dy = yv - arr.my[m]
        q = ia[m] * dx * dx + (2.0 * ib[m]) * dx * dy + ic[m] * dy * dy
        out += norm[m] * np.exp(-0.5 * q)
    return out


def _kernel_fit(arr, ia, ib, ic, imx, imy, x, y, s2):
    """Fit anisotropic kernels to the density-times-balloon product.

    Arguments are per-subset column vectors x, y, s2 of shape (k, 1) / (k,)
    plus precomputed component inverse channels. Returns the kernel channels
    (k,) and the mass captured by the isotropic balloons (k,).
    """
    inv_s2 = 1.0 / s2[:, None]
    # product parameters with the balloon S = s2 * I
    Ta = ia[None, :] + inv_s2
    Tb = np.broadcast_to(ib[None, :], Ta.shape)
    Tc = ic[None, :] + inv_s2
    detT = Ta * Tc - Tb * Tb
    Pa = Tc / detT
    Pb = -Tb / detT
    Pc = Ta / detT
    vx = imx[None, :] + x * inv_s2
    vy = imy[None, :] + y * inv_s2
    mpx = Pa * vx + Pb * vy
    mpy = Pb * vx + Pc * vy
    dxp = x - mpx
    dyp = y - mpy
    # per-component captured mass at S
    Aa = arr.ca[None, :] + s2[:, None]
    Ab = arr.cb[None, :]
    Ac = arr.cc[None, :] + s2[:, None]
    detA = Aa * Ac - Ab * Ab
    iAa = Ac / detA
    iAb = -Ab / detA
    iAc = Aa / detA
    ddx = x - arr.mx[None, :]
    ddy = y - arr.my[None, :]
    q = iAa * ddx * ddx + 2.0 * iAb * ddx * ddy + iAc * ddy * ddy
    Pm = arr.pi[None, :] * np.sqrt((s2 * s2)[:, None] / detA) * np.exp(-0.5 * q)
    pS = np.sum(Pm, axis=1)
    # the caller validates pS; keep a zero total from spraying warnings here
    with np.errstate(invalid="ignore", divide="ignore"):
        w = Pm / pS[:, None]
    Ra = np.sum(w * (Pa + dxp * dxp), axis=1)
    Rb = np.sum(w * (Pb + dxp * dyp), axis=1)
    Rc = np.sum(w * (Pc + dyp * dyp), axis=1)
    return Ra, Rb, Rc, pS


def _overlap_at(arr, x, y, ka, kb, kc, what: str):
    """Mixture mass captured by per-row kernels (ka, kb, kc); rows are queries."""
    detK = ka * kc - kb * kb
    if np.any(detK <= 0.0):
        i = int(np.flatnonzero(detK <= 0.0)[0])
        raise SingularMatrixError(f"{what} for row {i} is not positive-definite")
    Ba = arr.ca[None, :] + ka[:, None]
    Bb = arr.cb[None, :] + kb[:, None]
    Bc = arr.cc[None, :] + kc[:, None]
    detB = Ba * Bc - Bb * Bb
    iBa = Bc / detB
    iBb = -Bb / detB
    iBc = Ba / detB
    ddx = x - arr.mx[None, :]
    ddy = y - arr.my[None, :]
    q = iBa * ddx * ddx + 2.0 * iBb * ddx * ddy + iBc * ddy * ddy
    Pm = arr.pi[None, :] * np.sqrt(detK[:, None] / detB) * np.exp(-0.5 * q)
    return np.sum(Pm, axis=1)


def solve_field(
    arr: ModelArrays,
    X: np.ndarray,
    *,
    target_p: float,
    sigma2_init: np.ndarray,
    max_evals: int,
    sigma2_cap: float,
    target_on_balloon: bool,
):
    """Balloon fixed point for all samples at once.

    Returns (sigma2, Ra, Rb, Rc, achieved_p, saturated, inner_iters). Each
    sample iterates sigma2 <- (P / p) sigma2 independently; rows drop out of
    the active set as they converge, so results do not depend on the other
    rows (or on their order).
    """
    n = X.shape[0]
    P = target_p
    tol2 = (0.01 * P) ** 2
    sigma2 = np.array(np.broadcast_to(sigma2_init, (n,)), dtype=np.float64)
    out_s2 = sigma2.copy()
    out_R = np.zeros((n, 3), dtype=np.float64)
    out_p = np.zeros(n, dtype=np.float64)
    out_sat = np.zeros(n, dtype=bool)
    out_iters = np.zeros(n, dtype=np.int64)
    capped = np.zeros(n, dtype=bool)

    ia, ib, ic, _ = inv2(arr.ca, arr.cb, arr.cc, "component covariance")
    imx = ia * arr.mx + ib * arr.my
    imy = ib * arr.mx + ic * arr.my

    active = np.arange(n)
    for sweep in range(1, max_evals + 1):
        s2 = sigma2[active]
        x = X[active, 0:1]
        y = X[active, 1:2]
        Ra, Rb, Rc, pS = _kernel_fit(arr, ia, ib, ic, imx, imy, x, y, s2)
        if np.any(pS <= 0.0) or not np.all(np.isfinite(pS)):
            i = int(np.flatnonzero((pS <= 0.0) | ~np.isfinite(pS))[0])
            g = int(active[i])
            raise ValueError(
                f"balloon overlap underflow at sample {g} "
                f"(position ({X[g, 0]}, {X[g, 1]}), sigma2 {s2[i]})"
            )
        if target_on_balloon:
            p = pS
        else:
            p = _overlap_at(arr, x, y, Ra, Rb, Rc, "fitted kernel")
        ok = (p - P) ** 2 < tol2
        done = ok | capped[active] | (sweep == max_evals)
        d = active[done]
        out_s2[d] = s2[done]
        out_R[d, 0] = Ra[done]
        out_R[d, 1] = Rb[done]
        out_R[d, 2] = Rc[done]
        out_p[d] = p[done]
        out_sat[d] = ~ok[done]
        out_iters[d] = sweep
        remaining = ~done
        active = active[remaining]
        if active.size == 0:
            break
        new_s2 = s2[remaining] * (P / p[remaining])
        if not np.all(np.isfinite(new_s2)):
            i = int(np.flatnonzero(~np.isfinite(new_s2))[0])
            g = int(active[i])
            raise ValueError(f"non-finite balloon update at sample {g} (p {p[remaining][i]})")
        over = new_s2 > sigma2_cap
        new_s2 = np.where(over, sigma2_cap, new_s2)
        capped[active] |= over
        sigma2[active] = new_s2
    return out_s2, out_R[:, 0], out_R[:, 1], out_R[:, 2], out_p, out_sat, out_iters


def m_step(
    arr: ModelArrays,
    X: np.ndarray,
    resp: np.ndarray,
    kernels: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
    *,
    prune_threshold: float,
    psd_floor: float,
):
    """Weighted parameter update with optional additive kernel corrections.

    Returns (pi, mx, my, ca, cb, cc, keep_indices, projection_count).
    `kernels` holds the per-sample (Ra, Rb, Rc) channels; None runs the
    plain EM update. Components whose raw prior falls below
    `prune_threshold` are dropped and the remaining priors renormalized.
    """
    n = X.shape[0]
    W = np.sum(resp, axis=1)
    pi_raw = W / n
    keep = np.flatnonzero(pi_raw >= prune_threshold)
    if keep.size == 0:
        raise ValueError("all components fell below the pruning threshold")
    Wk = W[keep]
    rk = resp[keep]
    mux = np.sum(rk * X[None, :, 0], axis=1) / Wk
    muy = np.sum(rk * X[None, :, 1], axis=1) / Wk
    dx = X[None, :, 0] - mux[:, None]
    dy = X[None, :, 1] - muy[:, None]
    if kernels is None:
        ca = np.sum(rk * dx * dx, axis=1) / Wk
        cb = np.sum(rk * dx * dy, axis=1) / Wk
        cc = np.sum(rk * dy * dy, axis=1) / Wk
    else:
        Ra, Rb, Rc = kernels
        ia, ib, ic, _ = inv2(arr.ca[keep], arr.cb[keep], arr.cc[keep], "component covariance")
        iRa, iRb, iRc, _ = inv2(Ra, Rb, Rc, "balloon kernel")
        Ta = ia[:, None] + iRa[None, :]
        Tb = ib[:, None] + iRb[None, :]
        Tc = ic[:, None] + iRc[None, :]
        detT = Ta * Tc - Tb * Tb
        Pa = Tc / detT
        Pb = -Tb / detT
        Pc = Ta / detT
        imx = ia * arr.mx[keep] + ib * arr.my[keep]
        imy = ib * arr.mx[keep] + ic * arr.my[keep]
        kx = iRa * X[:, 0] + iRb * X[:, 1]
        ky = iRb * X[:, 0] + iRc * X[:, 1]
        vx = imx[:, None] + kx[None, :]
        vy = imy[:, None] + ky[None, :]
        mpx = Pa * vx + Pb * vy
        mpy = Pb * vx + Pc * vy
        ddx = X[None, :, 0] - mpx
        ddy = X[None, :, 1] - mpy
        add_a = Ra[None, :] - (Pa + ddx * ddx)
        add_b = Rb[None, :] - (Pb + ddx * ddy)
        add_c = Rc[None, :] - (Pc + ddy * ddy)
        ca = np.sum(rk * (dx * dx + add_a), axis=1) / Wk
        cb = np.sum(rk * (dx * dy + add_b), axis=1) / Wk
        cc = np.sum(rk * (dy * dy + add_c), axis=1) / Wk
    ca, cb, cc, projections = eig_floor(ca, cb, cc, psd_floor)
    pi_keep = pi_raw[keep]
    pi_out = pi_keep / np.sum(pi_keep)
    return pi_out, mux, muy, ca, cb, cc, keep, projections
