"""Primal-dual interior-point method for small nonconvex NLPs.

Solves::

    min f(x)  s.t.  c(x) = 0,  g(x) <= 0

with slacks ``g + s = 0, s > 0``, a log barrier, Newton steps on the
condensed KKT system and a filter line search with second-order
correction.  The KKT matrix is
factorised densely with a symmetric indefinite LDL^T so that its inertia can
be corrected (Hessian shift for nonconvexity, constraint regularisation for
rank-deficient Jacobians).  When the line search stalls a
Levenberg-Marquardt feasibility restoration takes over.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

TAU_MIN = 0.99
KAPPA_SIGMA = 1e10


@dataclass
class IpmOptions:
    tol: float = 1e-8  # overall scaled KKT error
    constr_tol: float = 1e-9  # constraint violation (scaled units)
    max_iter: int = 300
    mu_init: float = 1e-1
    slack_push: float = 1e-2
    armijo: float = 1e-4
    min_step: float = 1e-12
    max_restorations: int = 5


@dataclass
class IpmResult:
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # inequality multipliers
    status: str  # local_optimum | max_iter | infeasible_detected
    iterations: int
    objective: float
    kkt_error: float
    constr_violation: float
    stationarity: float
    restorations: int = 0
    history: list = field(default_factory=list)


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _inertia(d):
    """(positive, negative, zero) eigenvalue counts of the block-diagonal LDL factor."""
    n = d.shape[0]
    pos = neg = zero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(d[i:i + 2, i:i + 2])
            i += 2
        else:
            ev = (d[i, i],)
            i += 1
        for e in ev:
            if e > 1e-14:
                pos += 1
            elif e < -1e-14:
                neg += 1
            else:
                zero += 1
    return pos, neg, zero


class _Kkt:
    """Inertia-corrected factorisation of [[H + dw I, A^T], [A, -dc I]]."""

    def __init__(self):
        self.last_dw = 0.0

    def factor(self, h, a):
        n, m = h.shape[0], a.shape[0]
        dc = 0.0
        dw = 0.0
        for attempt in range(60):
            k = np.zeros((n + m, n + m))
            k[:n, :n] = h + dw * np.eye(n)
            k[n:, :n] = a
            k[:n, n:] = a.T
            k[n:, n:] = -dc * np.eye(m)
            try:
                lu, d, perm = sla.ldl(k, lower=True)
            except (ValueError, np.linalg.LinAlgError):
                lu = None
            if lu is not None:
                pos, neg, zero = _inertia(d)
                if pos == n and neg == m and zero == 0:
                    self.last_dw = dw
                    self.lu, self.d, self.perm = lu, d, perm
                    return dw
                if zero and dc == 0.0 and m:
                    dc = 1e-8
                    continue
            if dw == 0.0:
                dw = 1e-4 if self.last_dw == 0.0 else max(1e-20, self.last_dw / 3.0)
            else:
                dw *= 8.0 if self.last_dw == 0.0 else 4.0
            if dw > 1e40:
                break
        raise np.linalg.LinAlgError("KKT inertia correction failed")

    def solve(self, rhs):
        # K = lu d lu^T with lu[perm] unit lower triangular and d block diagonal
        low = self.lu[self.perm]
        u = sla.solve_triangular(low, rhs[self.perm], lower=True, unit_diagonal=True)
        d = self.d
        ab = np.zeros((3, d.shape[0]))
        ab[0, 1:] = np.diag(d, 1)
        ab[1] = np.diag(d)
        ab[2, :-1] = np.diag(d, -1)
        v = sla.solve_banded((1, 1), ab, u)
        out = np.empty_like(rhs)
        out[self.perm] = sla.solve_triangular(low.T, v, lower=False, unit_diagonal=True)
        return out


def _violation(ce, g):
    v = float(np.max(np.abs(ce))) if ce.size else 0.0
    if g.size:
        v = max(v, float(np.max(g, initial=0.0)))
    return v


def _restore(obj_f, eq, ineq, x, opt, target):
    """Levenberg-Marquardt on 0.5*|c|^2 + 0.5*|max(g, 0)|^2; returns (x, ok)."""
    lam = 1e-3
    def resid(xx):
        ce = eq.value(xx)
        g = ineq.value(xx)
        return ce, g, np.concatenate([ce, np.maximum(g, 0.0)])
    ce, g, r = resid(x)
    phi = 0.5 * r @ r
    for _ in range(200):
        if _violation(ce, g) <= target:
            return x, True
        je = _dense(eq.jacobian(x))
        ji = _dense(ineq.jacobian(x))
        ji[g <= 0.0] = 0.0
        j = np.vstack([je, ji])
        grad = j.T @ r
        if np.max(np.abs(grad), initial=0.0) < 1e-14:
            return x, False
        while True:
            step = np.linalg.solve(j.T @ j + lam * np.eye(len(x)), -grad)
            xn = x + step
            cen, gn, rn = resid(xn)
            phin = 0.5 * rn @ rn
            if phin < phi:
                x, ce, g, r, phi = xn, cen, gn, rn, phin
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                return x, False
    return x, _violation(ce, g) <= target


class _Filter:
    """Pairs (theta, phi) that trial points must improve on."""

    def __init__(self, theta_max):
        self.entries = []
        self.theta_max = theta_max

    def acceptable(self, theta, phi):
        if theta > self.theta_max:
            return False
        return all(theta < tf or phi < pf for tf, pf in self.entries)

    def add(self, theta, phi):
        self.entries = [(tf, pf) for tf, pf in self.entries if not (tf >= theta and pf >= phi)]
        self.entries.append((theta, phi))


GAMMA_THETA = 1e-5
GAMMA_PHI = 1e-8
S_THETA = 1.1
S_PHI = 2.3
DELTA_SWITCH = 1.0


def solve_nlp(objective, eq, ineq, x0, options: IpmOptions | None = None) -> IpmResult:
    """Minimise ``objective`` subject to ``eq(x) = 0`` and ``ineq(x) <= 0``.

    ``objective`` provides ``value(x)``, ``grad(x)`` and ``hess(x)``; the
    constraint sets provide ``value``, ``jacobian`` and ``hessian(weights)``
    (see ``_poly.QuadRows``).  Globalisation is a filter line search on
    (constraint violation, barrier objective) with second-order corrections.
    """
    opt = options or IpmOptions()
    x = np.array(x0, dtype=float)
    n, me, mi = len(x), eq.m, ineq.m
    mu = opt.mu_init
    g = ineq.value(x)
    s = np.maximum(-g, opt.slack_push)
    z = mu / s
    y = np.zeros(me)
    kkt = _Kkt()
    restorations = 0
    history = []
    status = "max_iter"
    it = 0

    def measures(xx, ss):
        ce_ = eq.value(xx)
        g_ = ineq.value(xx)
        theta_ = float(np.sum(np.abs(ce_)) + np.sum(np.abs(g_ + ss)))
        phi_ = float(objective.value(xx) - mu * np.sum(np.log(ss)))
        return theta_, phi_, ce_, g_

    theta0 = measures(x, s)[0]
    theta_min = 1e-4 * max(1.0, theta0)
    filt = _Filter(1e4 * max(1.0, theta0))

    for it in range(opt.max_iter + 1):
        ce = eq.value(x)
        g = ineq.value(x)
        gf = objective.grad(x)
        je = _dense(eq.jacobian(x))
        ji = _dense(ineq.jacobian(x))
        rd = gf + je.T @ y + ji.T @ z
        rp = np.concatenate([ce, g + s])
        viol = _violation(ce, g)
        s_d = max(100.0, (np.sum(np.abs(y)) + np.sum(np.abs(z))) / max(1, me + mi)) / 100.0
        s_c = max(100.0, np.sum(np.abs(z)) / max(1, mi)) / 100.0
        stat = float(np.max(np.abs(rd), initial=0.0))
        prim = float(np.max(np.abs(rp), initial=0.0))
        err0 = max(stat / s_d, prim, float(np.max(np.abs(s * z), initial=0.0)) / s_c)
        history.append((it, float(objective.value(x)), viol, err0, mu))
        if err0 <= opt.tol and viol <= opt.constr_tol:
            status = "local_optimum"
            break
        if it == opt.max_iter:
            break
        # monotone barrier update; the filter restarts with every new mu
        while mu > opt.tol / 10.0:
            err_mu = max(stat / s_d, prim, float(np.max(np.abs(s * z - mu), initial=0.0)) / s_c)
            if err_mu > 10.0 * mu:
                break
            mu = max(opt.tol / 10.0, min(0.2 * mu, mu ** 1.5))
            filt = _Filter(filt.theta_max)
        tau = max(TAU_MIN, 1.0 - mu)

        sigma = z / s
        w = _dense(objective.hess(x)) + _dense(eq.hessian(y)) + _dense(ineq.hessian(z))
        h = w + ji.T @ (sigma[:, None] * ji)
        try:
            dw = kkt.factor(h, je)
        except np.linalg.LinAlgError:
            status = "infeasible_detected"
            break

        def direction(r_e, r_i):
            rhs_x = -rd - ji.T @ (mu / s - z + sigma * r_i)
            sol = kkt.solve(np.concatenate([rhs_x, -r_e]))
            dx_ = sol[:n]
            ds_ = -r_i - ji @ dx_
            return dx_, sol[n:], ds_, mu / s - z - sigma * ds_

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-tau * v[neg] / dv[neg]))) if np.any(neg) else 1.0

        dx, dy, ds, dz = direction(ce, g + s)
        a_pri, a_dual = max_step(s, ds), max_step(z, dz)
        theta, phi, _, _ = measures(x, s)
        dphi = float(gf @ dx - mu * np.sum(ds / s))
        if dphi < 0:
            a_min = 0.05 * min(GAMMA_THETA, GAMMA_PHI * theta / -dphi,
                               DELTA_SWITCH * theta ** S_THETA / (-dphi) ** S_PHI)
        else:
            a_min = 0.05 * GAMMA_THETA
        a_min = max(a_min, opt.min_step)

        alpha = a_pri
        accepted = False
        f_type = False
        first = True
        while alpha >= a_min:
            xt, st = x + alpha * dx, s + alpha * ds
            theta_t, phi_t, ce_t, g_t = measures(xt, st)
            cand = [(alpha, dx, dy, ds, dz, theta_t, phi_t)]
            if first and theta_t >= theta:
                # second-order correction against the Maratos effect
                c_soc, i_soc = alpha * ce + ce_t, alpha * (g + s) + (g_t + st)
                dx2, dy2, ds2, dz2 = direction(c_soc, i_soc)
                a2 = max_step(s, ds2)
                th2, ph2, _, _ = measures(x + a2 * dx2, s + a2 * ds2)
                cand.insert(0, (a2, dx2, dy2, ds2, dz2, th2, ph2))
            first = False
            for a_c, dx_c, dy_c, ds_c, dz_c, th_c, ph_c in cand:
                if not np.isfinite(ph_c) or not filt.acceptable(th_c, ph_c):
                    continue
                switching = dphi < 0 and a_c * (-dphi) ** S_PHI > DELTA_SWITCH * theta ** S_THETA
                if switching and theta <= theta_min:
                    if ph_c <= phi + opt.armijo * a_c * dphi:
                        accepted, f_type = True, True
                elif th_c <= (1.0 - GAMMA_THETA) * theta or ph_c <= phi - GAMMA_PHI * theta:
                    accepted = True
                if accepted:
                    alpha, dx, dy, ds, dz = a_c, dx_c, dy_c, ds_c, dz_c
                    a_dual = max_step(z, dz)
                    break
            if accepted:
                break
            alpha *= 0.5
        if accepted:
            if not f_type:
                filt.add((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta)
            log.debug("ipm %d: alpha %.3g a_dual %.3g dw %.3g theta %.3g mu %.3g", it, alpha, a_dual,
                      dw, theta, mu)
            x = x + alpha * dx
            s = s + alpha * ds
            y = y + alpha * dy
            z = z + a_dual * dz
            # keep z close to mu / s
            z = np.clip(z, mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s)
            continue
        # restoration phase
        restorations += 1
        if restorations > opt.max_restorations:
            status = "infeasible_detected" if viol > opt.constr_tol else "max_iter"
            break
        log.debug("ipm: line search failed at iter %d, restoring feasibility", it)
        filt.add(theta, phi)
        x, ok = _restore(objective, eq, ineq, x, opt, target=max(opt.constr_tol, 1e-2 * viol))
        g = ineq.value(x)
        if not ok and _violation(eq.value(x), g) > max(opt.constr_tol, 0.9 * viol):
            status = "infeasible_detected"
            break
        s = np.maximum(-g, mu)
        z = mu / s
        y = np.zeros(me)

    ce, g = eq.value(x), ineq.value(x)
    rd = objective.grad(x) + _dense(eq.jacobian(x)).T @ y + _dense(ineq.jacobian(x)).T @ z
    return IpmResult(x=x, y=y, z=z, status=status, iterations=it, objective=float(objective.value(x)),
                     kkt_error=history[-1][3] if history else math.nan,
                     constr_violation=_violation(ce, g),
                     stationarity=float(np.max(np.abs(rd), initial=0.0)),
                     restorations=restorations, history=history)
