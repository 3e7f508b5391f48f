"""Slow, independent reference computations used as test oracles.

Everything here is written as plain loops against the weak form and the
constitutive differentials directly, deliberately avoiding the vectorized
production assembly paths.
"""
import numpy as np

from thmrom.physics import alpha_w_law, thermal_load
from thmrom.mesh import TAG_ALVEOLUS, TAG_TOP


def p2_shape(lmb):
    """P2 values/derivatives from barycentric coordinates (l1, l2, l3)."""
    l1, l2, l3 = lmb
    vals = np.array([
        l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
        4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1,
    ])
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.array([
        (4 * l1 - 1) * dl[0],
        (4 * l2 - 1) * dl[1],
        (4 * l3 - 1) * dl[2],
        4 * (l1 * dl[1] + l2 * dl[0]),
        4 * (l2 * dl[2] + l3 * dl[1]),
        4 * (l3 * dl[0] + l1 * dl[2]),
    ])
    return vals, grads


def p1_shape(lmb):
    l1, l2, l3 = lmb
    vals = np.array([l1, l2, l3])
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return vals, grads


def eval_mixed(problem, k, U, x_ref):
    """Field values/gradients of the mixed state at one reference point."""
    model = problem.model
    space = model.space
    mesh = model.mesh
    conn = mesh.elements[k]
    v = mesh.nodes[conn]
    J = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    Jinv_T = np.linalg.inv(J).T
    lmb = (1.0 - x_ref[0] - x_ref[1], x_ref[0], x_ref[1])
    p2v, p2g = p2_shape(lmb)
    p1v, p1g = p1_shape(lmb)
    p2g = p2g @ Jinv_T.T
    p1g = p1g @ Jinv_T.T
    loc = U[space.loc2glob[k]]
    u1, u2, pc, Tc = loc[:6], loc[6:12], loc[12:15], loc[15:18]
    out = {
        "u1": p2v @ u1, "u2": p2v @ u2,
        "gu1": p2g.T @ u1, "gu2": p2g.T @ u2,
        "p": p1v @ pc, "T": p1v @ Tc,
        "gp": p1g.T @ pc, "gT": p1g.T @ Tc,
    }
    out["eps_v"] = out["gu1"][0] + out["gu2"][1]
    return out, (p2v, p2g, p1v, p1g)


def constitutive_substep_oracle(params, region, state_m, w_m, state_p, n_sub=1000):
    """Integrate the differential constitutive forms along the straight path
    from the old to the new state with explicit sub-steps."""
    c = params.const
    eps0, p0, T0 = state_m
    eps1, p1, T1 = state_p
    rho, phi, h, Q = w_m
    for i in range(n_sub):
        s0 = i / n_sub
        eps = eps0 + (eps1 - eps0) * s0
        p = p0 + (p1 - p0) * s0
        T = T0 + (T1 - T0) * s0
        de = (eps1 - eps0) / n_sub
        dp = (p1 - p0) / n_sub
        dT = (T1 - T0) / n_sub
        T_abs = c.T_ref + c.dT_bar * T
        aw = alpha_w_law(T_abs)
        drho = rho * (dp / params.kw_star - 3.0 * aw * c.dT_bar * dT)
        dphi = (c.b - phi) * (de - 3.0 * c.alpha_s * c.dT_bar * dT
                              + dp / params.ks_star[region])
        dh = params.cwp_star * dT + (1.0 - 3.0 * aw * T_abs) * dp / rho
        if params.alpha_wm_const is None:
            awm = phi * aw + (c.b - phi) * c.alpha_s
        else:
            awm = params.alpha_wm_const
        k0_dim = params.k0_star[region] * c.sigma0
        ceps = ((1.0 - phi) * params.rho_s_si[region] * params.c_sigma[region]
                + phi * (c.rho0 * rho) * c.C_w_p
                - 9.0 * T_abs * k0_dim * c.alpha_s**2) * params.ceps_scale
        dQ = (3.0 * c.alpha_s * params.k0_star[region] * T_abs * de
              - 3.0 * awm * T_abs * dp + ceps * dT)
        rho, phi, h, Q = rho + drho, phi + dphi, h + dh, Q + dQ
    m = rho * (1.0 + eps1) * phi - params.rho_w0_star * params.phi0[region]
    return {"rho": rho, "phi": phi, "h": h, "Q": Q, "m": m}


def monolithic_residual_oracle(problem, U_p, U_m, W_m, dt, t_plus):
    """Loop-based assembly of the global residual (all three equations,
    volume and boundary terms), matching the weak form term by term."""
    model = problem.model
    space = model.space
    mesh = model.mesh
    params = problem.params
    from thmrom.physics import constitutive_update

    c = params.const
    r = np.zeros(space.n_dofs)
    f_m = params.f_m
    s_u, s_p, s_e = model.eq_scale

    for k in range(mesh.n_elements):
        reg = mesh.element_region[k]
        l2g = space.loc2glob[k]
        for q in range(mesh.n_quad):
            w = mesh.quad_weights[k, q]
            x_ref = mesh.quad_ref[q]
            fp, (p2v, p2g, p1v, p1g) = eval_mixed(problem, k, U_p, x_ref)
            fm, _ = eval_mixed(problem, k, U_m, x_ref)
            pos = np.flatnonzero(W_m.elems == k)[0]
            wm = W_m.values[q, pos]
            eps_ref = problem.eps_ref[k, q]
            con = constitutive_update(
                params, reg,
                fp["eps_v"] - eps_ref, fp["p"], fp["T"],
                fm["eps_v"] - eps_ref, fm["p"], fm["T"],
                wm[0], wm[1], wm[2], wm[3])
            mu = params.mu_star[reg]
            lam = params.lam_star[reg]
            thc = params.therm_stress[reg]
            eps = np.array([
                [fp["gu1"][0], 0.5 * (fp["gu1"][1] + fp["gu2"][0])],
                [0.5 * (fp["gu1"][1] + fp["gu2"][0]), fp["gu2"][1]],
            ])
            press = lam * fp["eps_v"] - thc * fp["T"] - c.b * fp["p"]
            sig = 2 * mu * eps + press * np.eye(2)
            F = np.array([0.0, -f_m])
            body = -(params.rho0_star[reg] + con["m"]) * F
            dm = con["m"] - wm[6]
            dQ = con["Q"] - wm[3]
            vdir = fp["gp"] - con["rho"] * F
            vm = con["gamma"] * vdir
            sen = con["h"] * dm / dt + dQ / dt + np.dot(vm, F)
            cond = params.cond_star[reg]
            ve = wm[2] * vm + cond * fp["gT"]
            for i in range(6):
                for d in range(2):
                    val = w * (sig[d] @ p2g[i] + body[d] * p2v[i]) * s_u
                    r[l2g[d * 6 + i]] += val
            for i in range(3):
                r[l2g[12 + i]] += w * (dm / dt * p1v[i] + vm @ p1g[i]) * s_p
                r[l2g[15 + i]] += w * (sen * p1v[i] + ve @ p1g[i]) * s_e

    # boundary terms: top traction and alveolus heating
    g_t = thermal_load(params, t_plus)
    for (k, le), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        conn = mesh.elements[k]
        a, b_ = le, (le + 1) % 3
        va, vb = mesh.nodes[conn[a]], mesh.nodes[conn[b_]]
        L = np.linalg.norm(vb - va)
        l2g = space.loc2glob[k]
        if tag == TAG_TOP:
            r[l2g[6 + a]] += L / 6.0 * s_u
            r[l2g[6 + b_]] += L / 6.0 * s_u
            r[l2g[6 + 3 + le]] += 2.0 * L / 3.0 * s_u
        elif tag == TAG_ALVEOLUS and g_t != 0.0:
            r[l2g[15 + a]] -= 0.5 * L * g_t * s_e
            r[l2g[15 + b_]] -= 0.5 * L * g_t * s_e
    r[space.dirichlet_idx] = 0.0
    return r
