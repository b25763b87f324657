"""Compiled RK4 forward/variational kernel for polynomial-backed systems.

The kernel mirrors the generic numpy stepper in ``flow`` exactly: same
stages, same stage-exact variational matrices, same blowup rules.  It only
exists because the per-step Python overhead dominates on desk-scale
problems; when numba is unavailable the package silently falls back to the
numpy path.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def _eval_stage(expo, c_val, c_jac, c_q, c_gq, x, u, powbuf, mono, vals, gq,
                rhs, a_aug, b_aug, want_var):
    """One RK4 stage: augmented RHS and, on request, augmented Jacobians."""
    n_terms, m = expo.shape
    d = u.shape[0]
    maxdeg = powbuf.shape[1] - 1

    for j in range(m):
        powbuf[j, 0] = 1.0
        for k in range(1, maxdeg + 1):
            powbuf[j, k] = powbuf[j, k - 1] * x[j]
    for t in range(n_terms):
        v = 1.0
        for j in range(m):
            v *= powbuf[j, expo[t, j]]
        mono[t] = v

    n_val = c_val.shape[0]
    for row in range(n_val):
        acc = 0.0
        for t in range(n_terms):
            acc += c_val[row, t] * mono[t]
        vals[row] = acc
    qval = 0.0
    for t in range(n_terms):
        qval += c_q[t] * mono[t]

    usq = 0.0
    for i in range(d):
        usq += u[i] * u[i]
    for a in range(m):
        acc = vals[a]
        for i in range(d):
            acc += u[i] * vals[(i + 1) * m + a]
        rhs[a] = acc
    rhs[m] = 0.5 * (usq - qval)

    if want_var:
        for b in range(m):
            acc = 0.0
            for t in range(n_terms):
                acc += c_gq[b, t] * mono[t]
            gq[b] = acc
        mm = m * m
        for a in range(m):
            for b in range(m):
                acc = c_jac_dot(c_jac, mono, a * m + b, n_terms)
                for i in range(d):
                    acc2 = c_jac_dot(c_jac, mono, (i + 1) * mm + a * m + b, n_terms)
                    acc += u[i] * acc2
                a_aug[a, b] = acc
            a_aug[a, m] = 0.0
        for b in range(m):
            a_aug[m, b] = -0.5 * gq[b]
        a_aug[m, m] = 0.0
        for a in range(m):
            for i in range(d):
                b_aug[a, i] = vals[(i + 1) * m + a]
        for i in range(d):
            b_aug[m, i] = u[i]


@njit(cache=True, inline="always")
def c_jac_dot(c_jac, mono, row, n_terms):
    acc = 0.0
    for t in range(n_terms):
        acc += c_jac[row, t] * mono[t]
    return acc


@njit(cache=True, nogil=True)
def rk4_poly_kernel(expo, c_val, c_jac, c_q, c_gq, x0, controls, T, substeps,
                    lo, hi, blow_limit, want_var, want_states):
    """Batched RK4 over piecewise-constant controls; see ``flow.rk4_forward``."""
    b_count, n_int, d = controls.shape
    m = x0.shape[0]
    ma = m + 1
    steps = n_int * substeps
    h = T / steps
    maxdeg = 0
    for t in range(expo.shape[0]):
        for j in range(m):
            if expo[t, j] > maxdeg:
                maxdeg = expo[t, j]

    z = np.zeros((b_count, ma))
    for b in range(b_count):
        for j in range(m):
            z[b, j] = x0[j]
    blown = np.zeros(b_count, dtype=np.bool_)
    blow_step = np.full(b_count, steps, dtype=np.int64)

    states = np.zeros((b_count, steps + 1 if want_states else 1, ma))
    if want_states:
        for b in range(b_count):
            for j in range(ma):
                states[b, 0, j] = z[b, j]
    J = np.zeros((steps if want_var else 1, b_count, ma, ma))
    G = np.zeros((steps if want_var else 1, b_count, ma, d))

    powbuf = np.zeros((m, maxdeg + 1))
    mono = np.zeros(expo.shape[0])
    vals = np.zeros(c_val.shape[0])
    gq = np.zeros(m)
    k1 = np.zeros(ma)
    k2 = np.zeros(ma)
    k3 = np.zeros(ma)
    k4 = np.zeros(ma)
    ztmp = np.zeros(ma)
    a1 = np.zeros((ma, ma))
    a2 = np.zeros((ma, ma))
    a3 = np.zeros((ma, ma))
    a4 = np.zeros((ma, ma))
    b1 = np.zeros((ma, d))
    b2 = np.zeros((ma, d))
    b3 = np.zeros((ma, d))
    b4 = np.zeros((ma, d))
    dk1 = np.zeros((ma, ma))
    dk2 = np.zeros((ma, ma))
    dk3 = np.zeros((ma, ma))
    dk4 = np.zeros((ma, ma))
    tmp = np.zeros((ma, ma))
    g1 = np.zeros((ma, d))
    g2 = np.zeros((ma, d))
    g3 = np.zeros((ma, d))
    g4 = np.zeros((ma, d))
    gtmp = np.zeros((ma, d))

    for step in range(steps):
        k_int = step // substeps
        for b in range(b_count):
            if blown[b]:
                if want_var:
                    for i in range(ma):
                        J[step, b, i, i] = 1.0
                if want_states:
                    for j in range(ma):
                        states[b, step + 1, j] = z[b, j]
                continue
            u = controls[b, k_int]
            x = z[b, :m]

            _eval_stage(expo, c_val, c_jac, c_q, c_gq, x, u, powbuf, mono, vals,
                        gq, k1, a1, b1, want_var)
            for j in range(ma):
                ztmp[j] = z[b, j] + 0.5 * h * k1[j]
            _eval_stage(expo, c_val, c_jac, c_q, c_gq, ztmp[:m], u, powbuf, mono,
                        vals, gq, k2, a2, b2, want_var)
            for j in range(ma):
                ztmp[j] = z[b, j] + 0.5 * h * k2[j]
            _eval_stage(expo, c_val, c_jac, c_q, c_gq, ztmp[:m], u, powbuf, mono,
                        vals, gq, k3, a3, b3, want_var)
            for j in range(ma):
                ztmp[j] = z[b, j] + h * k3[j]
            _eval_stage(expo, c_val, c_jac, c_q, c_gq, ztmp[:m], u, powbuf, mono,
                        vals, gq, k4, a4, b4, want_var)

            if want_var:
                # dk1 = a1; dk2 = a2 (I + h/2 dk1); dk3 = a3 (I + h/2 dk2);
                # dk4 = a4 (I + h dk3); same recursion for the control blocks
                for i in range(ma):
                    for j in range(ma):
                        dk1[i, j] = a1[i, j]
                        tmp[i, j] = 0.5 * h * dk1[i, j]
                    tmp[i, i] += 1.0
                _matmul(a2, tmp, dk2)
                for i in range(ma):
                    for j in range(ma):
                        tmp[i, j] = 0.5 * h * dk2[i, j]
                    tmp[i, i] += 1.0
                _matmul(a3, tmp, dk3)
                for i in range(ma):
                    for j in range(ma):
                        tmp[i, j] = h * dk3[i, j]
                    tmp[i, i] += 1.0
                _matmul(a4, tmp, dk4)
                for i in range(ma):
                    for j in range(ma):
                        J[step, b, i, j] = (h / 6.0) * (dk1[i, j] + 2.0 * dk2[i, j]
                                                        + 2.0 * dk3[i, j] + dk4[i, j])
                    J[step, b, i, i] += 1.0

                for i in range(ma):
                    for j in range(d):
                        g1[i, j] = b1[i, j]
                        gtmp[i, j] = 0.5 * h * g1[i, j]
                _matmul_rect(a2, gtmp, g2, d)
                for i in range(ma):
                    for j in range(d):
                        g2[i, j] += b2[i, j]
                        gtmp[i, j] = 0.5 * h * g2[i, j]
                _matmul_rect(a3, gtmp, g3, d)
                for i in range(ma):
                    for j in range(d):
                        g3[i, j] += b3[i, j]
                        gtmp[i, j] = h * g3[i, j]
                _matmul_rect(a4, gtmp, g4, d)
                for i in range(ma):
                    for j in range(d):
                        g4[i, j] += b4[i, j]
                        G[step, b, i, j] = (h / 6.0) * (g1[i, j] + 2.0 * g2[i, j]
                                                        + 2.0 * g3[i, j] + g4[i, j])

            ok = True
            for j in range(ma):
                znew = z[b, j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                ztmp[j] = znew
                if not np.isfinite(znew):
                    ok = False
            if ok:
                for j in range(m):
                    if abs(ztmp[j]) > blow_limit or ztmp[j] < lo[j] or ztmp[j] > hi[j]:
                        ok = False
            if ok:
                for j in range(ma):
                    z[b, j] = ztmp[j]
            else:
                blown[b] = True
                blow_step[b] = step
                if want_var:
                    for i in range(ma):
                        for j in range(ma):
                            J[step, b, i, j] = 1.0 if i == j else 0.0
                        for j in range(d):
                            G[step, b, i, j] = 0.0
            if want_states:
                for j in range(ma):
                    states[b, step + 1, j] = z[b, j]

    return z, blown, blow_step, states, J, G


@njit(cache=True, nogil=True)
def adjoint_sweep(J, G, q_term, substeps):
    """Backward sweep of the step Jacobians: gradients of q_term @ z_final.

    ``J`` is (S, B, ma, ma), ``G`` is (S, B, ma, d), ``q_term`` is (B, ma).
    Returns (grad (B, N, d), q_path (S+1, B, ma)) where q_path[j] is the
    adjoint state at node j.
    """
    steps, b_count, ma, d = G.shape
    n_int = steps // substeps
    grad = np.zeros((b_count, n_int, d))
    q_path = np.zeros((steps + 1, b_count, ma))
    q = q_term.copy()
    qn = np.zeros(ma)
    for b in range(b_count):
        for i in range(ma):
            q_path[steps, b, i] = q[b, i]
    for j in range(steps - 1, -1, -1):
        k_int = j // substeps
        for b in range(b_count):
            for c in range(d):
                acc = 0.0
                for i in range(ma):
                    acc += G[j, b, i, c] * q[b, i]
                grad[b, k_int, c] += acc
            for i in range(ma):
                acc = 0.0
                for r in range(ma):
                    acc += J[j, b, r, i] * q[b, r]
                qn[i] = acc
            for i in range(ma):
                q[b, i] = qn[i]
                q_path[j, b, i] = qn[i]
    return grad, q_path


@njit(cache=True)
def _ham_stage(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, x, p, powbuf, mono,
               vals, jacs, rhs, a_mat, want_var):
    """Hamiltonian stage: RHS of (x, p, cost) and its (2m)x(2m) Jacobian.

    Dynamics: xdot = X0 + sum phi_i X_i with phi_i = <p, X_i>;
    pdot = -(DX0 + sum phi_i DX_i)^T p - 0.5 grad Q; cdot = 0.5 (sum phi^2 - Q).
    """
    n_terms, m = expo.shape
    n_fields = c_val.shape[0] // m
    d = n_fields - 1
    maxdeg = powbuf.shape[1] - 1

    for j in range(m):
        powbuf[j, 0] = 1.0
        for k in range(1, maxdeg + 1):
            powbuf[j, k] = powbuf[j, k - 1] * x[j]
    for t in range(n_terms):
        v = 1.0
        for j in range(m):
            v *= powbuf[j, expo[t, j]]
        mono[t] = v

    for row in range(c_val.shape[0]):
        acc = 0.0
        for t in range(n_terms):
            acc += c_val[row, t] * mono[t]
        vals[row] = acc
    for row in range(c_jac.shape[0]):
        acc = 0.0
        for t in range(n_terms):
            acc += c_jac[row, t] * mono[t]
        jacs[row] = acc
    qval = 0.0
    for t in range(n_terms):
        qval += c_q[t] * mono[t]

    phi = np.zeros(d)
    for i in range(d):
        acc = 0.0
        for a in range(m):
            acc += p[a] * vals[(i + 1) * m + a]
        phi[i] = acc

    # jtp[f, a] = (DX_f^T p)_a
    jtp = np.zeros((n_fields, m))
    for f in range(n_fields):
        for a in range(m):
            acc = 0.0
            for l in range(m):
                acc += p[l] * jacs[f * m * m + l * m + a]
            jtp[f, a] = acc

    phisq = 0.0
    for i in range(d):
        phisq += phi[i] * phi[i]
    for a in range(m):
        acc = vals[a]
        for i in range(d):
            acc += phi[i] * vals[(i + 1) * m + a]
        rhs[a] = acc
        gq_a = 0.0
        for t in range(n_terms):
            gq_a += c_gq[a, t] * mono[t]
        accp = -jtp[0, a] - 0.5 * gq_a
        for i in range(d):
            accp -= phi[i] * jtp[i + 1, a]
        rhs[m + a] = accp
    rhs[2 * m] = 0.5 * (phisq - qval)

    if want_var:
        # Axx, Axp, Apx blocks; App = -Axx^T by the Hamiltonian structure
        for a in range(m):
            for b in range(m):
                acc = jacs[a * m + b]
                for i in range(d):
                    acc += (vals[(i + 1) * m + a] * jtp[i + 1, b]
                            + phi[i] * jacs[(i + 1) * m * m + a * m + b])
                a_mat[a, b] = acc
                accxp = 0.0
                for i in range(d):
                    accxp += vals[(i + 1) * m + a] * vals[(i + 1) * m + b]
                a_mat[a, m + b] = accxp
        for a in range(m):
            for b in range(m):
                hq_ab = 0.0
                for t in range(n_terms):
                    hq_ab += c_hq[a * m + b, t] * mono[t]
                ph0 = 0.0
                for l in range(m):
                    acc_h = 0.0
                    for t in range(n_terms):
                        acc_h += c_hess[((0 * m + l) * m + a) * m + b, t] * mono[t]
                    ph0 += p[l] * acc_h
                acc = ph0 + 0.5 * hq_ab
                for i in range(d):
                    phi_h = 0.0
                    for l in range(m):
                        acc_h = 0.0
                        for t in range(n_terms):
                            acc_h += c_hess[(((i + 1) * m + l) * m + a) * m + b, t] * mono[t]
                        phi_h += p[l] * acc_h
                    acc += jtp[i + 1, a] * jtp[i + 1, b] + phi[i] * phi_h
                a_mat[m + a, b] = -acc
                a_mat[m + a, m + b] = -a_mat[b, a]


@njit(cache=True, nogil=True)
def rk4_extremal_kernel(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, x_init,
                        p_init, c_init, w_init, h, steps, lo, hi, blow_limit,
                        want_var):
    """RK4 on the Hamiltonian system with stage-exact variational matrices.

    Returns node arrays (xs, ps, cs), cumulative variational matrices W
    (steps+1, 2m, 2m) with W[0] = w_init, and blowup information.
    """
    m = x_init.shape[0]
    n2 = 2 * m
    nz = n2 + 1
    maxdeg = 0
    for t in range(expo.shape[0]):
        for j in range(m):
            if expo[t, j] > maxdeg:
                maxdeg = expo[t, j]

    xs = np.zeros((steps + 1, m))
    ps = np.zeros((steps + 1, m))
    cs = np.zeros(steps + 1)
    W = np.zeros((steps + 1 if want_var else 1, n2, n2))
    z = np.zeros(nz)
    for j in range(m):
        xs[0, j] = x_init[j]
        ps[0, j] = p_init[j]
        z[j] = x_init[j]
        z[m + j] = p_init[j]
    cs[0] = c_init
    z[n2] = c_init
    if want_var:
        for i in range(n2):
            for j in range(n2):
                W[0, i, j] = w_init[i, j]

    powbuf = np.zeros((m, maxdeg + 1))
    mono = np.zeros(expo.shape[0])
    vals = np.zeros(c_val.shape[0])
    jacs = np.zeros(c_jac.shape[0])
    k1 = np.zeros(nz)
    k2 = np.zeros(nz)
    k3 = np.zeros(nz)
    k4 = np.zeros(nz)
    ztmp = np.zeros(nz)
    a1 = np.zeros((n2, n2))
    a2 = np.zeros((n2, n2))
    a3 = np.zeros((n2, n2))
    a4 = np.zeros((n2, n2))
    dk1 = np.zeros((n2, n2))
    dk2 = np.zeros((n2, n2))
    dk3 = np.zeros((n2, n2))
    dk4 = np.zeros((n2, n2))
    tmp = np.zeros((n2, n2))
    jstep = np.zeros((n2, n2))
    blown = False
    blow_step = steps

    for step in range(steps):
        _ham_stage(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, z[:m], z[m:n2],
                   powbuf, mono, vals, jacs, k1, a1, want_var)
        for j in range(nz):
            ztmp[j] = z[j] + 0.5 * h * k1[j]
        _ham_stage(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, ztmp[:m],
                   ztmp[m:n2], powbuf, mono, vals, jacs, k2, a2, want_var)
        for j in range(nz):
            ztmp[j] = z[j] + 0.5 * h * k2[j]
        _ham_stage(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, ztmp[:m],
                   ztmp[m:n2], powbuf, mono, vals, jacs, k3, a3, want_var)
        for j in range(nz):
            ztmp[j] = z[j] + h * k3[j]
        _ham_stage(expo, c_val, c_jac, c_hess, c_q, c_gq, c_hq, ztmp[:m],
                   ztmp[m:n2], powbuf, mono, vals, jacs, k4, a4, want_var)

        ok = True
        for j in range(nz):
            znew = z[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            ztmp[j] = znew
            if not np.isfinite(znew):
                ok = False
        if ok:
            for j in range(m):
                if (abs(ztmp[j]) > blow_limit or ztmp[j] < lo[j] or ztmp[j] > hi[j]
                        or abs(ztmp[m + j]) > blow_limit):
                    ok = False
        if not ok:
            blown = True
            blow_step = step
            for rem in range(step + 1, steps + 1):
                for j in range(m):
                    xs[rem, j] = z[j]
                    ps[rem, j] = z[m + j]
                cs[rem] = z[n2]
                if want_var:
                    for i in range(n2):
                        for jj in range(n2):
                            W[rem, i, jj] = W[step, i, jj]
            break

        if want_var:
            for i in range(n2):
                for j in range(n2):
                    dk1[i, j] = a1[i, j]
                    tmp[i, j] = 0.5 * h * dk1[i, j]
                tmp[i, i] += 1.0
            _matmul(a2, tmp, dk2)
            for i in range(n2):
                for j in range(n2):
                    tmp[i, j] = 0.5 * h * dk2[i, j]
                tmp[i, i] += 1.0
            _matmul(a3, tmp, dk3)
            for i in range(n2):
                for j in range(n2):
                    tmp[i, j] = h * dk3[i, j]
                tmp[i, i] += 1.0
            _matmul(a4, tmp, dk4)
            for i in range(n2):
                for j in range(n2):
                    jstep[i, j] = (h / 6.0) * (dk1[i, j] + 2.0 * dk2[i, j]
                                               + 2.0 * dk3[i, j] + dk4[i, j])
                jstep[i, i] += 1.0
            _matmul(jstep, W[step], W[step + 1])

        for j in range(nz):
            z[j] = ztmp[j]
        for j in range(m):
            xs[step + 1, j] = z[j]
            ps[step + 1, j] = z[m + j]
        cs[step + 1] = z[n2]

    return xs, ps, cs, W, blown, blow_step


@njit(cache=True, inline="always")
def _matmul(a, b, out):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(cache=True, inline="always")
def _matmul_rect(a, b, out, ncol):
    n = a.shape[0]
    for i in range(n):
        for j in range(ncol):
            acc = 0.0
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
