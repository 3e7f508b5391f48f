"""Constitutive model of the coupled thermo-hydro-mechanical system.

All computations are nondimensional: lengths are scaled by the reference
height, time by the reference time, stresses and pressures by the reference
stress, densities by the reference density, temperature is the deviation
from the reference temperature divided by the temperature scale, and the
water enthalpy carries (stress / density) units.  The physical constants are
stored in SI units and the dimensionless groups are derived once per
parameter vector.

The four-dimensional parameter vector is (Young's modulus of the bottom
clay layer [Pa], its Poisson ratio [-], the thermal decay time [s], the
dimensionless alveolus flux amplitude [-]); the admissible box is +/-15%
around the nominal values.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

N_INTERNAL = 7  # rho_w, phi, h_w, Q, M_x, M_y, m_w

IV_RHO, IV_PHI, IV_H, IV_Q, IV_MX, IV_MY, IV_M = range(N_INTERNAL)


class ConstitutiveDomainError(ValueError):
    """Raised when a state leaves the constitutive domain (T below 273 K)."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Characteristic scales and material data (SI units).

    Per-layer tuples are ordered bottom-to-top: clay (UA), transition (UT),
    silt-carbonate (USC).
    """

    # characteristic scales
    t_bar: float = 3.15e7
    H_bar: float = 77.3
    sigma0: float = 11.3e6
    rho0: float = 2450.0
    T_ref: float = 297.5
    dT_bar: float = 30.0

    # global material constants
    g: float = 9.81
    b: float = 0.6
    alpha_s: float = 1.28e-5
    alpha_0: float = 1.28e-5
    kappa_w: float = 1e-21
    mu_w0: float = 2.1e-6            # Pa*s (2.1e-12 MPa*s)
    K_w: float = 2e9
    C_w_p: float = 4180.0
    rho_w0: float = 1000.0

    # per-layer material constants
    E_layers: tuple = (11.4e9, 12.3e9, 20e9)
    nu_layers: tuple = (0.3, 0.3, 0.3)
    C_sigma_s: tuple = (537.0, 603.0, 640.0)
    rho0_layers: tuple = (2450.0, 2450.0, 2500.0)
    phi0_layers: tuple = (0.25, 0.21, 0.19)
    lam1_layers: tuple = (1.5, 1.5, 1.3)
    lam2_layers: tuple = (1.0, 1.0, 1.3)

    # alveolus heating data
    P_t: float = 31.4
    n_canisters: float = 45.0
    l_Q: float = 3.09
    decay_fraction: float = 0.112    # remaining flux fraction after one t_bar

    # pressure data (gauge)
    p_w_top: float = 0.0
    p_atm: float = 0.0

    def nominal_c_al(self) -> float:
        return self.P_t * self.n_canisters * self.t_bar / (
            self.l_Q * self.H_bar**2 * self.sigma0
        )

    def nominal_tau(self) -> float:
        """Decay time in seconds; flux drops to ``decay_fraction`` per t_bar."""
        return self.t_bar / np.log(1.0 / self.decay_fraction)


def alpha_w_law(T_abs):
    """Thermal expansion coefficient of water at absolute temperature [K]."""
    return 9.52e-5 * np.log(T_abs - 273.0) - 2.19e-4


@dataclass(frozen=True)
class ThmParameters:
    """One point of the parameter domain plus derived dimensionless groups."""

    E_ua: float
    nu_ua: float
    tau: float      # seconds
    c_al: float     # dimensionless flux amplitude
    const: PhysicalConstants = field(default_factory=PhysicalConstants)
    alpha_wm_const: float | None = None   # None -> porosity-mixture rule

    # derived, filled in __post_init__
    mu_star: np.ndarray = field(init=False, repr=False)
    lam_star: np.ndarray = field(init=False, repr=False)
    ks_star: np.ndarray = field(init=False, repr=False)
    k0_star: np.ndarray = field(init=False, repr=False)
    therm_stress: np.ndarray = field(init=False, repr=False)
    rho0_star: np.ndarray = field(init=False, repr=False)
    rho_s_si: np.ndarray = field(init=False, repr=False)
    c_sigma: np.ndarray = field(init=False, repr=False)
    phi0: np.ndarray = field(init=False, repr=False)
    cond_star: np.ndarray = field(init=False, repr=False)
    kw_star: float = field(init=False, repr=False)
    cwp_star: float = field(init=False, repr=False)
    rho_w0_star: float = field(init=False, repr=False)
    f_m: float = field(init=False, repr=False)
    gamma_mob: float = field(init=False, repr=False)
    tau_star: float = field(init=False, repr=False)
    ceps_scale: float = field(init=False, repr=False)

    def __post_init__(self):
        c = self.const
        E = np.array(c.E_layers, dtype=float)
        nu = np.array(c.nu_layers, dtype=float)
        E[0] = self.E_ua
        nu[0] = self.nu_ua
        E_star = E / c.sigma0
        mu = E_star / (2.0 * (1.0 + nu))
        lam = E_star * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        ks = E_star / (3.0 * (1.0 - 2.0 * nu))
        phi0 = np.array(c.phi0_layers, dtype=float)
        rho0_l = np.array(c.rho0_layers, dtype=float)
        object.__setattr__(self, "mu_star", mu)
        object.__setattr__(self, "lam_star", lam)
        object.__setattr__(self, "ks_star", ks)
        object.__setattr__(self, "k0_star", (1.0 - c.b) * ks)
        object.__setattr__(self, "therm_stress", (2 * mu + 3 * lam) * c.alpha_s * c.dT_bar)
        object.__setattr__(self, "rho0_star", rho0_l / c.rho0)
        object.__setattr__(self, "rho_s_si", (rho0_l - c.rho_w0 * phi0) / (1.0 - phi0))
        object.__setattr__(self, "c_sigma", np.array(c.C_sigma_s, dtype=float))
        object.__setattr__(self, "phi0", phi0)
        cond = c.dT_bar * c.t_bar / (c.sigma0 * c.H_bar**2)
        object.__setattr__(
            self,
            "cond_star",
            np.stack([np.array(c.lam1_layers) * cond, np.array(c.lam2_layers) * cond], axis=1),
        )
        object.__setattr__(self, "kw_star", c.K_w / c.sigma0)
        object.__setattr__(self, "cwp_star", c.C_w_p * c.rho0 * c.dT_bar / c.sigma0)
        object.__setattr__(self, "rho_w0_star", c.rho_w0 / c.rho0)
        object.__setattr__(self, "f_m", c.g * c.rho0 * c.H_bar / c.sigma0)
        object.__setattr__(
            self, "gamma_mob", c.kappa_w * c.sigma0 * c.t_bar / (c.mu_w0 * c.H_bar**2)
        )
        object.__setattr__(self, "tau_star", self.tau / c.t_bar)
        object.__setattr__(self, "ceps_scale", c.dT_bar / c.sigma0)

    @classmethod
    def nominal(cls, const: PhysicalConstants | None = None, **kw):
        c = const or PhysicalConstants()
        return cls(E_ua=c.E_layers[0], nu_ua=c.nu_layers[0],
                   tau=c.nominal_tau(), c_al=c.nominal_c_al(), const=c, **kw)

    @classmethod
    def nominal_vector(cls, const: PhysicalConstants | None = None):
        c = const or PhysicalConstants()
        return np.array([c.E_layers[0], c.nu_layers[0], c.nominal_tau(), c.nominal_c_al()])

    @classmethod
    def box(cls, const: PhysicalConstants | None = None, spread=0.15):
        nom = cls.nominal_vector(const)
        return np.stack([(1.0 - spread) * nom, (1.0 + spread) * nom], axis=1)

    @classmethod
    def from_vector(cls, vec, const: PhysicalConstants | None = None, **kw):
        vec = np.asarray(vec, dtype=float)
        return cls(E_ua=float(vec[0]), nu_ua=float(vec[1]), tau=float(vec[2]),
                   c_al=float(vec[3]), const=const or PhysicalConstants(), **kw)

    def vector(self):
        return np.array([self.E_ua, self.nu_ua, self.tau, self.c_al])

    def with_vector(self, vec):
        return replace(self, E_ua=float(vec[0]), nu_ua=float(vec[1]),
                       tau=float(vec[2]), c_al=float(vec[3]))

    def hydrostatic_coeff(self):
        """Slope of the nondimensional hydrostatic pressure profile."""
        return self.rho_w0_star * self.f_m

    def p_top_star(self):
        return self.const.p_w_top / self.const.sigma0

    def p_atm_star(self):
        return self.const.p_atm / self.const.sigma0


def sample_parameters(rng, n, const: PhysicalConstants | None = None, spread=0.15):
    """I.i.d. uniform samples from the parameter box, shape (n, 4)."""
    box = ThmParameters.box(const, spread)
    u = rng.uniform(size=(n, 4))
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def thermal_load(params: ThmParameters, t):
    """Alveolus boundary flux magnitude at nondimensional time ``t``."""
    return params.c_al * np.exp(-np.asarray(t) / params.tau_star)


def constitutive_update(params, region, eps_p, p_p, T_p, eps_m, p_m, T_m,
                        rho_m, phi_m, h_m, Q_m, *, derivs=False, validate=True):
    """One implicit-Euler update of the internal variables at quadrature points.

    ``eps_*`` are volumetric strains measured from the initial equilibrium
    configuration (so the initial mass input is exactly zero).  All arrays
    broadcast together; ``region`` selects per-layer constants.  Returns a
    dict with the updated fields plus the Darcy mobility ``gamma``; with
    ``derivs=True`` a second dict maps ``d<field>_d<e|p|T>`` to the partial
    derivatives with respect to the new state.

    Raises :class:`ConstitutiveDomainError` when the absolute temperature
    drops to 273 K or below (the water-expansion law loses meaning there);
    with ``validate=False`` NaNs are propagated instead so a Newton line
    search can back off.
    """
    c = params.const
    dTb = c.dT_bar
    T_abs = c.T_ref + dTb * T_p
    T_cel = T_abs - 273.0
    ok = T_cel > 0.0
    if validate and not np.all(ok):
        raise ConstitutiveDomainError("temperature out of constitutive domain")
    with np.errstate(invalid="ignore", divide="ignore"):
        log_cel = np.where(ok, np.log(np.where(ok, T_cel, 1.0)), np.nan)
    alpha_w = 9.52e-5 * log_cel - 2.19e-4
    awd = np.where(ok, 9.52e-5 * dTb / np.where(ok, T_cel, 1.0), np.nan)

    ks = params.ks_star[region]
    k0 = params.k0_star[region]
    phi0 = params.phi0[region]
    rho_s = params.rho_s_si[region]
    c_sig = params.c_sigma[region]

    dp = p_p - p_m
    dT = T_p - T_m
    de = eps_p - eps_m

    # water density
    g_rho = dp / params.kw_star - 3.0 * alpha_w * dTb * dT
    rho = rho_m * np.exp(g_rho)

    # porosity
    g_phi = -de + 3.0 * c.alpha_0 * dTb * dT - dp / ks
    phi = c.b - (c.b - phi_m) * np.exp(g_phi)

    # enthalpy
    c_h = 1.0 - 3.0 * alpha_w * T_abs
    h = h_m + params.cwp_star * dT + c_h * dp / rho

    # non-convected heat; midpoint absolute temperature as in the update rule
    T_mid = c.T_ref + dTb * 0.5 * (T_p + T_m)
    if params.alpha_wm_const is None:
        alpha_wm = phi * alpha_w + (c.b - phi) * c.alpha_s
    else:
        alpha_wm = np.full_like(rho, params.alpha_wm_const)
    k0_dim = k0 * c.sigma0
    ceps = (
        (1.0 - phi) * rho_s * c_sig
        + phi * (c.rho0 * rho) * c.C_w_p
        - 9.0 * T_abs * k0_dim * c.alpha_s**2
    ) * params.ceps_scale
    Q = (
        Q_m
        + 3.0 * c.alpha_s * k0 * T_mid * de
        - 3.0 * alpha_wm * T_mid * dp
        + ceps * dT
    )

    # mass input and Darcy mobility
    m = rho * (1.0 + eps_p) * phi - params.rho_w0_star * phi0
    gamma = rho * params.gamma_mob * np.exp(-1808.5 / T_abs)

    out = {"rho": rho, "phi": phi, "h": h, "Q": Q, "m": m, "gamma": gamma}
    if not derivs:
        return out

    drho_dp = rho / params.kw_star
    drho_dT = rho * (-3.0 * dTb) * (alpha_w + awd * dT)
    dphi_de = c.b - phi
    dphi_dp = (c.b - phi) / ks
    dphi_dT = -(c.b - phi) * 3.0 * c.alpha_0 * dTb

    dch_dT = -3.0 * (awd * T_abs + alpha_w * dTb)
    dh_dp = c_h / rho - c_h * dp / rho**2 * drho_dp
    dh_dT = params.cwp_star + dp / rho * dch_dT - c_h * dp / rho**2 * drho_dT

    if params.alpha_wm_const is None:
        dawm_dphi = alpha_w - c.alpha_s
        dawm_dT_direct = phi * awd
    else:
        dawm_dphi = np.zeros_like(rho)
        dawm_dT_direct = np.zeros_like(rho)
    dawm_de = dawm_dphi * dphi_de
    dawm_dp = dawm_dphi * dphi_dp
    dawm_dT = dawm_dphi * dphi_dT + dawm_dT_direct

    dceps_dphi = (-rho_s * c_sig + c.rho0 * rho * c.C_w_p) * params.ceps_scale
    dceps_drho = phi * c.rho0 * c.C_w_p * params.ceps_scale
    dceps_dTabs = -9.0 * k0_dim * c.alpha_s**2 * params.ceps_scale
    dceps_de = dceps_dphi * dphi_de
    dceps_dp = dceps_dphi * dphi_dp + dceps_drho * drho_dp
    dceps_dT = dceps_dphi * dphi_dT + dceps_drho * drho_dT + dceps_dTabs * dTb

    dQ_de = 3.0 * c.alpha_s * k0 * T_mid - 3.0 * dawm_de * T_mid * dp + dceps_de * dT
    dQ_dp = (
        -3.0 * (dawm_dp * T_mid * dp + alpha_wm * T_mid)
        + dceps_dp * dT
    )
    dQ_dT = (
        3.0 * c.alpha_s * k0 * (0.5 * dTb) * de
        - 3.0 * (dawm_dT * T_mid + alpha_wm * 0.5 * dTb) * dp
        + dceps_dT * dT
        + ceps
    )

    one_eps = 1.0 + eps_p
    dm_de = rho * phi + rho * one_eps * dphi_de
    dm_dp = drho_dp * one_eps * phi + rho * one_eps * dphi_dp
    dm_dT = drho_dT * one_eps * phi + rho * one_eps * dphi_dT

    dgam_dp = gamma / rho * drho_dp
    dgam_dT = gamma * (drho_dT / rho + 1808.5 * dTb / T_abs**2)

    zeros = np.zeros_like(rho)
    der = {
        "drho_de": zeros, "drho_dp": drho_dp, "drho_dT": drho_dT,
        "dphi_de": dphi_de, "dphi_dp": dphi_dp, "dphi_dT": dphi_dT,
        "dh_de": zeros, "dh_dp": dh_dp, "dh_dT": dh_dT,
        "dQ_de": dQ_de, "dQ_dp": dQ_dp, "dQ_dT": dQ_dT,
        "dm_de": dm_de, "dm_dp": dm_dp, "dm_dT": dm_dT,
        "dgam_de": zeros, "dgam_dp": dgam_dp, "dgam_dT": dgam_dT,
    }
    return out, der
