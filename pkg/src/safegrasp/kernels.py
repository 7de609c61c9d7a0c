"""Hot numeric kernels.

Each kernel is written once as a plain Python/numpy function and wrapped with
``@njit`` when numba is enabled (see :mod:`safegrasp.accel`).  The compiled
and uncompiled variants execute the same floating-point operations, so
results are identical in both modes, except for ``quantile_huber_loss_grad``
whose fallback is a vectorised numpy implementation (the scalar loop form is
impractically slow without compilation); the two variants agree to machine
rounding and are cross-checked in the test suite.

``BENCH_PAIRS`` maps kernel names to ``(compiled_or_selected, fallback)``
pairs for the ``safegrasp bench`` command.
"""

from __future__ import annotations

import numpy as np

from .accel import NUMBA_ENABLED, maybe_njit


# ---------------------------------------------------------------------------
# forward kinematics: standard DH chain
# ---------------------------------------------------------------------------

def _fk_frames(dh: np.ndarray, q: np.ndarray):
    """Compose the DH chain for a 6-joint serial arm.

    ``dh`` is a (6, 4) array of per-joint ``a, d, alpha, theta_offset``.
    Returns the end-effector rotation (3, 3), the per-frame origins (7, 3)
    and joint z axes (7, 3); index 0 is the base frame.
    """
    t = np.eye(4)
    origins = np.zeros((7, 3))
    zaxes = np.zeros((7, 3))
    zaxes[0, 2] = 1.0
    a_mat = np.empty((4, 4))
    a_mat[3, 0] = 0.0
    a_mat[3, 1] = 0.0
    a_mat[3, 2] = 0.0
    a_mat[3, 3] = 1.0
    for i in range(6):
        theta = q[i] + dh[i, 3]
        ct = np.cos(theta)
        st = np.sin(theta)
        ca = np.cos(dh[i, 2])
        sa = np.sin(dh[i, 2])
        a_len = dh[i, 0]
        d_len = dh[i, 1]
        a_mat[0, 0] = ct
        a_mat[0, 1] = -st * ca
        a_mat[0, 2] = st * sa
        a_mat[0, 3] = a_len * ct
        a_mat[1, 0] = st
        a_mat[1, 1] = ct * ca
        a_mat[1, 2] = -ct * sa
        a_mat[1, 3] = a_len * st
        a_mat[2, 0] = 0.0
        a_mat[2, 1] = sa
        a_mat[2, 2] = ca
        a_mat[2, 3] = d_len
        t = t @ a_mat
        origins[i + 1, 0] = t[0, 3]
        origins[i + 1, 1] = t[1, 3]
        origins[i + 1, 2] = t[2, 3]
        zaxes[i + 1, 0] = t[0, 2]
        zaxes[i + 1, 1] = t[1, 2]
        zaxes[i + 1, 2] = t[2, 2]
    rot = t[:3, :3].copy()
    return rot, origins, zaxes


fk_frames = maybe_njit(_fk_frames)


# ---------------------------------------------------------------------------
# inverse kinematics: damped least squares on position
# ---------------------------------------------------------------------------

def _ik_dls(
    dh: np.ndarray,
    limits: np.ndarray,
    q_seed: np.ndarray,
    target: np.ndarray,
    damping: float,
    tolerance: float,
    max_iterations: int,
):
    """Position-only damped-least-squares IK, iterates projected to limits.

    Returns ``(q_best, best_residual, iterations, clamped, converged)`` where
    ``clamped`` is 1 when the best iterate had a joint pinned at a limit.
    """
    q = q_seed.copy()
    best_q = q_seed.copy()
    best_res = 1.0e300
    best_clamped = 0
    lam2 = damping * damping
    iterations = 0
    converged = 0
    jac = np.empty((3, 6))
    for it in range(max_iterations + 1):
        rot, origins, zaxes = fk_frames(dh, q)
        ex = target[0] - origins[6, 0]
        ey = target[1] - origins[6, 1]
        ez = target[2] - origins[6, 2]
        res = np.sqrt(ex * ex + ey * ey + ez * ez)
        clamped = 0
        for j in range(6):
            if q[j] <= limits[j, 0] or q[j] >= limits[j, 1]:
                clamped = 1
        if res < best_res:
            best_res = res
            best_q[:] = q
            best_clamped = clamped
        iterations = it
        if res <= tolerance:
            converged = 1
            break
        if it == max_iterations:
            break
        # geometric position Jacobian: column j = z_j x (p - o_j)
        for j in range(6):
            rx = origins[6, 0] - origins[j, 0]
            ry = origins[6, 1] - origins[j, 1]
            rz = origins[6, 2] - origins[j, 2]
            zx = zaxes[j, 0]
            zy = zaxes[j, 1]
            zz = zaxes[j, 2]
            jac[0, j] = zy * rz - zz * ry
            jac[1, j] = zz * rx - zx * rz
            jac[2, j] = zx * ry - zy * rx
        # solve (J J^T + lam^2 I) y = e, 3x3 by Cramer's rule
        m00 = lam2
        m01 = 0.0
        m02 = 0.0
        m11 = lam2
        m12 = 0.0
        m22 = lam2
        for j in range(6):
            m00 += jac[0, j] * jac[0, j]
            m01 += jac[0, j] * jac[1, j]
            m02 += jac[0, j] * jac[2, j]
            m11 += jac[1, j] * jac[1, j]
            m12 += jac[1, j] * jac[2, j]
            m22 += jac[2, j] * jac[2, j]
        det = (
            m00 * (m11 * m22 - m12 * m12)
            - m01 * (m01 * m22 - m12 * m02)
            + m02 * (m01 * m12 - m11 * m02)
        )
        if det == 0.0:
            break
        y0 = (
            ex * (m11 * m22 - m12 * m12)
            - m01 * (ey * m22 - m12 * ez)
            + m02 * (ey * m12 - m11 * ez)
        ) / det
        y1 = (
            m00 * (ey * m22 - m12 * ez)
            - ex * (m01 * m22 - m12 * m02)
            + m02 * (m01 * ez - ey * m02)
        ) / det
        y2 = (
            m00 * (m11 * ez - ey * m12)
            - m01 * (m01 * ez - ey * m02)
            + ex * (m01 * m12 - m11 * m02)
        ) / det
        for j in range(6):
            dq = jac[0, j] * y0 + jac[1, j] * y1 + jac[2, j] * y2
            qj = q[j] + dq
            if qj < limits[j, 0]:
                qj = limits[j, 0]
            elif qj > limits[j, 1]:
                qj = limits[j, 1]
            q[j] = qj
    return best_q, best_res, iterations, best_clamped, converged


ik_dls = maybe_njit(_ik_dls)


# ---------------------------------------------------------------------------
# sphere vs axis-aligned box signed distance
# ---------------------------------------------------------------------------

def _sphere_box_signed_distance(
    point: np.ndarray, center: np.ndarray, half: np.ndarray
):
    """Signed distance from ``point`` to the box surface plus outward normal.

    Positive outside, negative inside.  The normal points from the box
    surface toward the point (for inside points: toward the nearest face).
    """
    dx = point[0] - center[0]
    dy = point[1] - center[1]
    dz = point[2] - center[2]
    qx = abs(dx) - half[0]
    qy = abs(dy) - half[1]
    qz = abs(dz) - half[2]
    px = qx if qx > 0.0 else 0.0
    py = qy if qy > 0.0 else 0.0
    pz = qz if qz > 0.0 else 0.0
    outside = np.sqrt(px * px + py * py + pz * pz)
    if outside > 0.0:
        nx = px / outside
        ny = py / outside
        nz = pz / outside
        if dx < 0.0:
            nx = -nx
        if dy < 0.0:
            ny = -ny
        if dz < 0.0:
            nz = -nz
        return outside, nx, ny, nz
    # inside (or on the surface): nearest face along the axis of max q
    inside = qx
    axis = 0
    if qy > inside:
        inside = qy
        axis = 1
    if qz > inside:
        inside = qz
        axis = 2
    nx = 0.0
    ny = 0.0
    nz = 0.0
    if axis == 0:
        nx = 1.0 if dx >= 0.0 else -1.0
    elif axis == 1:
        ny = 1.0 if dy >= 0.0 else -1.0
    else:
        nz = 1.0 if dz >= 0.0 else -1.0
    return inside, nx, ny, nz


sphere_box_signed_distance = maybe_njit(_sphere_box_signed_distance)


# ---------------------------------------------------------------------------
# quantile Huber loss over pooled target atoms, with gradient
# ---------------------------------------------------------------------------

def _quantile_huber_loss_grad_loops(
    preds: np.ndarray, targets: np.ndarray, fractions: np.ndarray
):
    """Asymmetric Huber quantile loss (kappa=1) and d(loss)/d(preds).

    ``preds`` has shape (n_critics, batch, n_quantiles), ``targets``
    (batch, n_atoms).  The loss is the mean over every
    (critic, sample, quantile, atom) pair of ``|tau_m - 1{u<0}| * huber(u)``
    with ``u = target - prediction``.  The inner loop is branchless so the
    compiler can vectorise it.
    """
    n_crit, batch, n_quant = preds.shape
    n_atoms = targets.shape[1]
    grad = np.zeros_like(preds)
    scale = 1.0 / (n_crit * batch * n_quant * n_atoms)
    loss = 0.0
    for n in range(n_crit):
        for b in range(batch):
            for m in range(n_quant):
                z = preds[n, b, m]
                tau = fractions[m]
                g = 0.0
                for k in range(n_atoms):
                    u = targets[b, k] - z
                    neg = 1.0 if u < 0.0 else 0.0
                    w = tau + neg * (1.0 - 2.0 * tau)
                    au = abs(u)
                    inside = 1.0 if au <= 1.0 else 0.0
                    loss += w * (inside * 0.5 * u * u + (1.0 - inside) * (au - 0.5))
                    g -= w * (inside * u + (1.0 - inside) * (1.0 - 2.0 * neg))
                grad[n, b, m] = g * scale
    return loss * scale, grad


def _quantile_huber_loss_grad_numpy(
    preds: np.ndarray, targets: np.ndarray, fractions: np.ndarray
):
    """Vectorised fallback for :func:`quantile_huber_loss_grad`."""
    n_crit, batch, n_quant = preds.shape
    n_atoms = targets.shape[1]
    u = targets[None, :, None, :] - preds[..., None]
    au = np.abs(u)
    taus = fractions.reshape(1, 1, n_quant, 1)
    w = np.where(u < 0.0, 1.0 - taus, taus)
    huber = np.where(au <= 1.0, 0.5 * u * u, au - 0.5)
    dhuber = np.where(au <= 1.0, u, np.sign(u))
    scale = 1.0 / (n_crit * batch * n_quant * n_atoms)
    loss = float(np.sum(w * huber)) * scale
    grad = -np.sum(w * dhuber, axis=-1) * scale
    return loss, grad


if NUMBA_ENABLED:
    # fastmath only reassociates the loss reduction; differences against the
    # numpy fallback stay at rounding level and are covered by tests
    quantile_huber_loss_grad = maybe_njit(
        _quantile_huber_loss_grad_loops, fastmath=True
    )
else:
    quantile_huber_loss_grad = _quantile_huber_loss_grad_numpy


BENCH_PAIRS = {
    "fk_frames": (fk_frames, _fk_frames),
    "ik_dls": (ik_dls, _ik_dls),
    "sphere_box_signed_distance": (
        sphere_box_signed_distance,
        _sphere_box_signed_distance,
    ),
    "quantile_huber_loss_grad": (
        quantile_huber_loss_grad,
        _quantile_huber_loss_grad_numpy,
    ),
}
