"""Compiled iteration loop; mirrors the numpy subproblems step for step.

Only used when the conflict cliques are disjoint, so that scheduling reduces
to a per-clique argmax.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_SQRT, _HARMONIC, _CONSTANT = 0, 1, 2
SCHEDULES = {"sqrt": _SQRT, "harmonic": _HARMONIC, "constant": _CONSTANT}


@njit(cache=True)
def _project(vals, n, out):
    top = vals[:n].max()   # shift-invariant; keeps huge inputs exact
    u = np.sort(np.maximum(vals[:n] - top, -1.0))[::-1]   # entries <= -1 project to 0
    css = 0.0
    theta = 0.0
    for j in range(n):
        css += u[j]
        t = (css - 1.0) / (j + 1)
        if u[j] - t > 0:
            theta = t
    for j in range(n):
        v = max(vals[j] - top, -1.0) - theta
        out[j] = v if v > 0 else 0.0


@njit(cache=True)
def _vertex(vals, n, out, maximize):
    best = vals[0] if maximize else -vals[0]
    for j in range(1, n):
        v = vals[j] if maximize else -vals[j]
        if v > best:
            best = v
    tol = 1e-12 * abs(best) + 1e-15
    cnt = 0
    for j in range(n):
        v = vals[j] if maximize else -vals[j]
        if abs(v - best) <= tol:
            cnt += 1
    for j in range(n):
        v = vals[j] if maximize else -vals[j]
        out[j] = 1.0 / cnt if abs(v - best) <= tol else 0.0


@njit(cache=True)
def run(e_flow, e_h, e_part, code_groups, code_h, split_groups, clique_of, n_cliques, rates,
        x, alpha, m, beta, mu_m, mu_beta, tau, q,
        c0, schedule, prox_c, anchor_period, max_iters, tol, gamma, x_min, x_max, window,
        stride, tail, rec_x, rec_q, rec_m, rec_obj, rec_res, rec_iter,
        tail_x, tail_q, tail_m, tail_obj, tail_res):
    n_e = e_flow.shape[0]
    n_f = x.shape[0]
    n_h = q.shape[0]
    n_p = beta.shape[0]
    buf = np.empty(max(code_groups.shape[1], split_groups.shape[1]))
    res_buf = np.empty_like(buf)
    price = np.empty(n_p)
    pflow = np.empty(n_f)
    inflow = np.empty(n_h)
    usage = np.empty(n_cliques)
    qpos = np.empty(n_cliques)
    n_rec = 0
    calm = 0
    converged = False
    t = 0
    for t in range(1, max_iters + 1):
        # dominance
        for g in range(code_groups.shape[0]):
            cnt = 0
            for j in range(code_groups.shape[1]):
                e = code_groups[g, j]
                if e < 0:
                    break
                v = alpha[e] * x[e_flow[e]]
                buf[j] = v if prox_c == 0 else mu_m[e] + v / (2.0 * prox_c)
                cnt += 1
            if prox_c > 0 and not np.isfinite(buf[:cnt]).all():
                for j in range(cnt):
                    buf[j] = alpha[code_groups[g, j]] * x[e_flow[code_groups[g, j]]]
                _vertex(buf, cnt, res_buf, True)
            elif prox_c == 0:
                _vertex(buf, cnt, res_buf, True)
            else:
                _project(buf, cnt, res_buf)
            for j in range(cnt):
                m[code_groups[g, j]] = res_buf[j]
        # splitting
        price[:] = 0.0
        for e in range(n_e):
            price[e_part[e]] += q[e_h[e]] * m[e]
        for g in range(split_groups.shape[0]):
            cnt = 0
            for j in range(split_groups.shape[1]):
                p = split_groups[g, j]
                if p < 0:
                    break
                buf[j] = price[p] if prox_c == 0 else mu_beta[p] - price[p] / (2.0 * prox_c)
                cnt += 1
            if prox_c > 0 and not np.isfinite(buf[:cnt]).all():
                for j in range(cnt):
                    buf[j] = price[split_groups[g, j]]
                _vertex(buf, cnt, res_buf, False)
            elif prox_c == 0:
                _vertex(buf, cnt, res_buf, False)
            else:
                _project(buf, cnt, res_buf)
            for j in range(cnt):
                beta[split_groups[g, j]] = res_buf[j]
        for e in range(n_e):
            alpha[e] = beta[e_part[e]]
        # rate
        pflow[:] = 0.0
        for e in range(n_e):
            pflow[e_flow[e]] += q[e_h[e]] * m[e] * alpha[e]
        dx = 0.0
        for s in range(n_f):
            xs = 1.0 / pflow[s] if pflow[s] > 0 else x_max
            xs = min(max(xs, x_min), x_max)
            d = abs(xs - x[s])
            if d > dx:
                dx = d
            x[s] = xs
        # schedule: per clique argmax of q R, ties split equally
        tau[:] = 0.0
        for c in range(n_cliques):
            best = 0.0
            for h in range(n_h):
                if clique_of[h] == c and q[h] * rates[h] > best:
                    best = q[h] * rates[h]
            if best > 0:
                cnt = 0
                for h in range(n_h):
                    if clique_of[h] == c and abs(q[h] * rates[h] - best) <= 1e-12 * best:
                        cnt += 1
                for h in range(n_h):
                    if clique_of[h] == c and abs(q[h] * rates[h] - best) <= 1e-12 * best:
                        tau[h] = gamma / cnt
        # dual update
        inflow[:] = 0.0
        for g in range(code_groups.shape[0]):
            mx = -1.0
            for j in range(code_groups.shape[1]):
                e = code_groups[g, j]
                if e < 0:
                    break
                v = alpha[e] * x[e_flow[e]]
                if v > mx:
                    mx = v
            inflow[code_h[g]] += mx
        if schedule == _SQRT:
            step = c0 / np.sqrt(t)
        elif schedule == _HARMONIC:
            step = c0 / t
        else:
            step = c0
        dq = 0.0
        for h in range(n_h):
            nq = q[h] + step * (inflow[h] - rates[h] * tau[h])
            if nq < 0:
                nq = 0.0
            d = abs(nq - q[h])
            if d > dq:
                dq = d
            q[h] = nq
        if t % anchor_period == 0:
            mu_m[:] = m
            mu_beta[:] = beta
        # residual: overshoot anywhere, slack where a clique carries a positive price
        usage[:] = 0.0
        qpos[:] = 0.0
        for h in range(n_h):
            usage[clique_of[h]] += inflow[h] / rates[h]
            if q[h] > 0:
                qpos[clique_of[h]] = 1.0
        res = 0.0
        for c in range(n_cliques):
            r = usage[c] - gamma
            if r < 0:
                r = -r if qpos[c] > 0 else 0.0
            if r > res:
                res = r
        obj = 0.0
        for s in range(n_f):
            obj += np.log(x[s])
        if t % stride == 0 and n_rec < rec_x.shape[0]:
            rec_x[n_rec] = x
            rec_q[n_rec] = q
            rec_m[n_rec] = m
            rec_obj[n_rec] = obj
            rec_res[n_rec] = res
            rec_iter[n_rec] = t
            n_rec += 1
        slot = t % tail
        tail_x[slot] = x
        tail_q[slot] = q
        tail_m[slot] = m
        tail_obj[slot] = obj
        tail_res[slot] = res
        if max(dx, res, dq) < tol:
            calm += 1
        else:
            calm = 0
        if calm >= window:
            converged = True
            break
    return t, n_rec, converged
