//! Material constants, carrier statistics, doping, recombination/generation
//! models and unit scaling.
//!
//! All functions here take and return physical units: volts, cm^-3,
//! A/cm^2, V/cm, cm^-3 s^-1. Mesh coordinates passed to doping profiles are
//! in micrometres.

use crate::error::{Error, Result};
use crate::mesh::Point;

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permittivity in F/cm.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_8128e-14;

/// Largest exponent magnitude accepted by the Maxwell-Boltzmann relations.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Carrier {
    Electron,
    Hole,
}

impl Carrier {
    /// +1 for electrons, -1 for holes: the carrier density grows like
    /// `exp(sign * phi / V_th)`.
    pub fn sign(self) -> f64 {
        match self {
            Carrier::Electron => 1.0,
            Carrier::Hole => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Carrier::Electron => "electron",
            Carrier::Hole => "hole",
        }
    }
}

/// Chynoweth-law coefficients `alpha = a * exp(-b / E)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpactIonization {
    pub a_n: f64,
    pub b_n: f64,
    pub a_p: f64,
    pub b_p: f64,
    /// Parallel field (V/cm) below which the ionization coefficient is zero.
    pub field_threshold: f64,
}

impl Default for ImpactIonization {
    /// van Overstraeten - de Man silicon values (high-field branch for holes).
    fn default() -> Self {
        ImpactIonization { a_n: 7.03e5, b_n: 1.231e6, a_p: 6.71e5, b_p: 1.693e6, field_threshold: 1e4 }
    }
}

impl ImpactIonization {
    pub fn alpha(&self, carrier: Carrier, e_parallel: f64) -> f64 {
        let (a, b) = match carrier {
            Carrier::Electron => (self.a_n, self.b_n),
            Carrier::Hole => (self.a_p, self.b_p),
        };
        if e_parallel <= self.field_threshold {
            0.0
        } else {
            a * (-b / e_parallel).exp()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialParams {
    /// Elementary charge (C).
    pub q: f64,
    /// Thermal voltage (V).
    pub v_th: f64,
    /// Intrinsic concentration (cm^-3).
    pub n_i: f64,
    /// Permittivities (F/cm).
    pub eps_si: f64,
    pub eps_ox: f64,
    /// Mobilities (cm^2 V^-1 s^-1).
    pub mu_n: f64,
    pub mu_p: f64,
    /// SRH lifetimes (s).
    pub tau_n: f64,
    pub tau_p: f64,
    pub ii: ImpactIonization,
}

impl Default for MaterialParams {
    /// Silicon at 300 K with constant mobilities.
    fn default() -> Self {
        MaterialParams {
            q: ELEMENTARY_CHARGE,
            v_th: BOLTZMANN * 300.0 / ELEMENTARY_CHARGE,
            n_i: 1.45e10,
            eps_si: 11.7 * VACUUM_PERMITTIVITY,
            eps_ox: 3.9 * VACUUM_PERMITTIVITY,
            mu_n: 1417.0,
            mu_p: 470.5,
            tau_n: 1e-7,
            tau_p: 1e-7,
            ii: ImpactIonization::default(),
        }
    }
}

impl MaterialParams {
    /// Checks that every parameter is strictly positive and finite.
    pub fn validated(self) -> Result<Self> {
        let checks = [
            ("q", self.q),
            ("v_th", self.v_th),
            ("n_i", self.n_i),
            ("eps_si", self.eps_si),
            ("eps_ox", self.eps_ox),
            ("mu_n", self.mu_n),
            ("mu_p", self.mu_p),
            ("tau_n", self.tau_n),
            ("tau_p", self.tau_p),
            ("ii.a_n", self.ii.a_n),
            ("ii.b_n", self.ii.b_n),
            ("ii.a_p", self.ii.a_p),
            ("ii.b_p", self.ii.b_p),
            ("ii.field_threshold", self.ii.field_threshold),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(self)
    }

    /// Electron diffusivity from Einstein's relation.
    pub fn d_n(&self) -> f64 {
        self.mu_n * self.v_th
    }

    pub fn d_p(&self) -> f64 {
        self.mu_p * self.v_th
    }

    pub fn mobility(&self, carrier: Carrier) -> f64 {
        match carrier {
            Carrier::Electron => self.mu_n,
            Carrier::Hole => self.mu_p,
        }
    }

    pub fn diffusivity(&self, carrier: Carrier) -> f64 {
        self.mobility(carrier) * self.v_th
    }
}

/// Maxwell-Boltzmann density: `n = n_i exp((phi - phi_n)/V_th)` for
/// electrons and `p = n_i exp((phi_p - phi)/V_th)` for holes, so that
/// `J_n = -q mu_n n grad(phi_n)` and `J_p = -q mu_p p grad(phi_p)`.
pub fn mb_density(phi: f64, phi_c: f64, params: &MaterialParams, carrier: Carrier) -> Result<f64> {
    mb_density_at(None, phi, phi_c, params, carrier)
}

pub(crate) fn mb_density_at(
    node: Option<usize>,
    phi: f64,
    phi_c: f64,
    params: &MaterialParams,
    carrier: Carrier,
) -> Result<f64> {
    let exponent = carrier.sign() * (phi - phi_c) / params.v_th;
    if !(exponent.abs() <= MAX_EXPONENT) {
        return Err(Error::Range { exponent, node });
    }
    Ok(params.n_i * exponent.exp())
}

/// Default clamp for densities entering logarithms, relative to `n_i`.
pub const DENSITY_FLOOR_REL: f64 = 1e-25;

/// Inverse of [`mb_density`]: the quasi-Fermi potential of density `c` at
/// potential `phi`. Densities below `1e-25 n_i` are clamped.
pub fn quasi_fermi_from_density(phi: f64, c: f64, params: &MaterialParams, carrier: Carrier) -> Result<f64> {
    quasi_fermi_with_floor(phi, c, params, carrier, DENSITY_FLOOR_REL * params.n_i)
}

pub fn quasi_fermi_with_floor(phi: f64, c: f64, params: &MaterialParams, carrier: Carrier, floor: f64) -> Result<f64> {
    let c = if c < floor { floor } else { c };
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Density { value: c, node: None });
    }
    Ok(phi - carrier.sign() * params.v_th * (c / params.n_i).ln())
}

/// Charge-neutral, equilibrium Dirichlet data of an ohmic contact with net
/// doping `net` (cm^-3) at applied `bias` (V). Returns `(phi, n, p)`.
pub fn ohmic_contact_values(net: f64, bias: f64, params: &MaterialParams) -> (f64, f64, f64) {
    let ni = params.n_i;
    let root = (net * net + 4.0 * ni * ni).sqrt();
    // avoid cancellation in the minority density
    let (n, p) = if net >= 0.0 {
        let n = 0.5 * (net + root);
        (n, ni * ni / n)
    } else {
        let p = 0.5 * (-net + root);
        (ni * ni / p, p)
    };
    let phi = bias + params.v_th * (net / (2.0 * ni)).asinh();
    (phi, n, p)
}

/// Shockley-Read-Hall net recombination rate (cm^-3 s^-1).
pub fn srh_recombination(n: f64, p: f64, params: &MaterialParams) -> f64 {
    let ni = params.n_i;
    (n * p - ni * ni) / srh_denominator(n, p, params)
}

pub(crate) fn srh_denominator(n: f64, p: f64, params: &MaterialParams) -> f64 {
    params.tau_p * (n + params.n_i) + params.tau_n * (p + params.n_i)
}

/// Impact-ionization generation rate `(alpha_n |J_n| + alpha_p |J_p|) / q`
/// with ionization coefficients evaluated at the field component along
/// each carrier's current.
pub fn impact_ionization_rate(j_n: [f64; 3], j_p: [f64; 3], e: [f64; 3], params: &MaterialParams) -> f64 {
    let term = |j: [f64; 3], carrier| {
        let jm = (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sqrt();
        if jm == 0.0 {
            return 0.0;
        }
        let e_par = (e[0] * j[0] + e[1] * j[1] + e[2] * j[2]).abs() / jm;
        params.ii.alpha(carrier, e_par) * jm
    };
    (term(j_n, Carrier::Electron) + term(j_p, Carrier::Hole)) / params.q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Species {
    Donor,
    Acceptor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DopingPrimitive {
    /// Uniform level inside an axis-aligned box (micrometres).
    ConstantSlab { species: Species, level: f64, lo: Point, hi: Point },
    /// Gaussian profile `peak * exp(-((x_axis - position)/depth)^2)` along
    /// `axis`, restricted laterally to the box `lateral_lo..lateral_hi` (the
    /// `axis` component of the box is ignored). Outside the lateral box the
    /// profile decays like `exp(-(d/lateral_spread)^2)`; a zero spread cuts
    /// it off sharply.
    GaussianImplant {
        species: Species,
        peak: f64,
        axis: usize,
        position: f64,
        depth: f64,
        lateral_lo: Point,
        lateral_hi: Point,
        lateral_spread: f64,
    },
}

impl DopingPrimitive {
    pub fn species(&self) -> Species {
        match self {
            DopingPrimitive::ConstantSlab { species, .. } | DopingPrimitive::GaussianImplant { species, .. } => {
                *species
            }
        }
    }

    pub fn concentration(&self, x: Point) -> f64 {
        match *self {
            DopingPrimitive::ConstantSlab { level, lo, hi, .. } => {
                if (0..3).all(|a| x[a] >= lo[a] && x[a] <= hi[a]) {
                    level
                } else {
                    0.0
                }
            }
            DopingPrimitive::GaussianImplant {
                peak, axis, position, depth, lateral_lo, lateral_hi, lateral_spread, ..
            } => {
                let t = (x[axis] - position) / depth;
                let mut lateral = 0.0;
                for a in (0..3).filter(|&a| a != axis) {
                    let d = if x[a] < lateral_lo[a] {
                        lateral_lo[a] - x[a]
                    } else if x[a] > lateral_hi[a] {
                        x[a] - lateral_hi[a]
                    } else {
                        0.0
                    };
                    if d > 0.0 {
                        if lateral_spread <= 0.0 {
                            return 0.0;
                        }
                        lateral += (d / lateral_spread).powi(2);
                    }
                }
                peak * (-(t * t) - lateral).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DopingPrimitive::ConstantSlab { level, lo, hi, .. } => {
                if !(level > 0.0 && level.is_finite()) {
                    return Err(Error::param("doping.level", format!("must be positive, got {level}")));
                }
                if (0..3).any(|a| lo[a] > hi[a]) {
                    return Err(Error::param("doping.box", "lo exceeds hi"));
                }
            }
            DopingPrimitive::GaussianImplant { peak, axis, depth, lateral_spread, .. } => {
                if !(peak > 0.0 && peak.is_finite()) {
                    return Err(Error::param("doping.peak", format!("must be positive, got {peak}")));
                }
                if axis > 2 {
                    return Err(Error::param("doping.axis", "must be 0, 1 or 2"));
                }
                if !(depth > 0.0) {
                    return Err(Error::param("doping.depth", format!("must be positive, got {depth}")));
                }
                if !(lateral_spread >= 0.0) {
                    return Err(Error::param("doping.lateral_spread", "must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DopingProfile {
    pub primitives: Vec<DopingPrimitive>,
}

impl DopingProfile {
    pub fn new(primitives: Vec<DopingPrimitive>) -> Result<Self> {
        for p in &primitives {
            p.validate()?;
        }
        Ok(DopingProfile { primitives })
    }

    fn total(&self, x: Point, species: Species) -> f64 {
        self.primitives.iter().filter(|p| p.species() == species).map(|p| p.concentration(x)).sum()
    }

    pub fn donors(&self, x: Point) -> f64 {
        self.total(x, Species::Donor)
    }

    pub fn acceptors(&self, x: Point) -> f64 {
        self.total(x, Species::Acceptor)
    }

    /// Net doping `N_D - N_A` (cm^-3).
    pub fn net(&self, x: Point) -> f64 {
        self.donors(x) - self.acceptors(x)
    }
}

/// Characteristic scales used to make the discrete equations dimensionless.
///
/// Potentials are measured in thermal voltages, lengths in `length_cm`,
/// concentrations in `concentration`, diffusivities in `diffusivity`; time,
/// rates and currents follow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub length_cm: f64,
    pub potential: f64,
    pub concentration: f64,
    pub diffusivity: f64,
    pub q: f64,
}

impl Scaling {
    pub fn new(length_cm: f64, concentration: f64, params: &MaterialParams) -> Result<Self> {
        let s = Scaling {
            length_cm,
            potential: params.v_th,
            concentration,
            diffusivity: params.d_n().max(params.d_p()),
            q: params.q,
        };
        for (name, v) in [("length", s.length_cm), ("concentration", s.concentration)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("scale must be positive, got {v}")));
            }
        }
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.length_cm * self.length_cm / self.diffusivity
    }

    /// Unit of volumetric rates (cm^-3 s^-1).
    pub fn rate(&self) -> f64 {
        self.concentration / self.time()
    }

    /// Unit of current density (A/cm^2).
    pub fn current_density(&self) -> f64 {
        self.q * self.diffusivity * self.concentration / self.length_cm
    }

    /// Unit of terminal current (A).
    pub fn current(&self) -> f64 {
        self.current_density() * self.length_cm * self.length_cm
    }

    /// Debye-type coefficient `eps V_th / (q C L^2)` of the scaled Poisson equation.
    pub fn poisson_lambda2(&self, eps: f64) -> f64 {
        eps * self.potential / (self.q * self.concentration * self.length_cm * self.length_cm)
    }

    pub fn scale_potential(&self, v: f64) -> f64 {
        v / self.potential
    }
    pub fn unscale_potential(&self, v: f64) -> f64 {
        v * self.potential
    }
    pub fn scale_concentration(&self, c: f64) -> f64 {
        c / self.concentration
    }
    pub fn unscale_concentration(&self, c: f64) -> f64 {
        c * self.concentration
    }
    pub fn scale_length(&self, l_cm: f64) -> f64 {
        l_cm / self.length_cm
    }
    pub fn unscale_length(&self, l: f64) -> f64 {
        l * self.length_cm
    }
    pub fn scale_rate(&self, r: f64) -> f64 {
        r / self.rate()
    }
    pub fn unscale_rate(&self, r: f64) -> f64 {
        r * self.rate()
    }
    pub fn scale_time(&self, t: f64) -> f64 {
        t / self.time()
    }
}
