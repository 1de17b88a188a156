//! Per-element current-density reconstruction and terminal currents.
//!
//! Three reconstructions of the constant-per-element current density are
//! provided:
//!
//! * DDFE: `J = q mu <c> E +- q D grad(c_h)`, the direct finite-element form.
//! * Method A: `J = -q mu sigma_K grad(phi_c,h)` where `sigma_K` is the
//!   harmonic average of `n_i exp(Phi)` along the element edge carrying the
//!   largest drop of `Phi`.
//! * Method B: DDFE with the diffusion term stabilized by a diagonal tensor
//!   built from the exponential interpolant of the potential.
//!
//! Element kernels work on one tetrahedron in physical units (cm, V, cm^-3)
//! and are exposed for testing; the `reconstruct_*` functions apply them to
//! every silicon element of a device state.

use rayon::prelude::*;
use serde::Deserialize;

use crate::discretization::bernoulli::{bernoulli, bernoulli_checked};
use crate::error::{Error, Result};
use crate::gummel::DeviceState;
use crate::mesh::{mean_value, ElementGeometry, Mesh, Region};
use crate::physics::{Carrier, MaterialParams, MAX_EXPONENT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMethod {
    Ddfe,
    #[default]
    MethodA,
    MethodB,
}

impl ReconstructionMethod {
    pub const ALL: [ReconstructionMethod; 3] =
        [ReconstructionMethod::Ddfe, ReconstructionMethod::MethodA, ReconstructionMethod::MethodB];

    pub fn name(self) -> &'static str {
        match self {
            ReconstructionMethod::Ddfe => "ddfe",
            ReconstructionMethod::MethodA => "method_a",
            ReconstructionMethod::MethodB => "method_b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Current(Carrier),
    ElectricField,
}

/// One constant 3-vector per element. Currents are in A/cm^2 and cover the
/// silicon elements only; the electric field (V/cm) covers every element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementVectorField {
    pub kind: FieldKind,
    pub method: Option<ReconstructionMethod>,
    pub elements: Vec<usize>,
    pub values: Vec<[f64; 3]>,
}

impl ElementVectorField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| norm3(*v))
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().fold(0.0, f64::max)
    }

    /// Values scattered to all `num_elements` cells, zero where undefined.
    pub fn to_cells(&self, num_elements: usize) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; num_elements];
        for (&k, v) in self.elements.iter().zip(&self.values) {
            out[k] = *v;
        }
        out
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

/// Vertices carrying the smallest and largest dimensionless potential
/// `Phi` on an element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtremalEdge {
    /// Local vertex index of the minimum.
    pub m: usize,
    /// Local vertex index of the maximum.
    pub big_m: usize,
    pub phi_m: f64,
    pub phi_big_m: f64,
    /// `phi_big_m - phi_m >= 0`.
    pub delta: f64,
}

/// `Phi = (phi - phi_n)/V_th` for electrons and `(phi_p - phi)/V_th` for
/// holes, so that the carrier density is `n_i exp(Phi)` in both cases.
pub fn dimensionless_potential(phi: f64, phi_c: f64, v_th: f64, carrier: Carrier) -> f64 {
    carrier.sign() * (phi - phi_c) / v_th
}

/// Extremal vertices of `Phi` on one element; ties go to the lowest index.
pub fn find_extremal_edge(phi: &[f64; 4], phi_c: &[f64; 4], v_th: f64, carrier: Carrier) -> ExtremalEdge {
    let big_phi: [f64; 4] = std::array::from_fn(|i| dimensionless_potential(phi[i], phi_c[i], v_th, carrier));
    let (mut m, mut big_m) = (0, 0);
    for i in 1..4 {
        if big_phi[i] < big_phi[m] {
            m = i;
        }
        if big_phi[i] > big_phi[big_m] {
            big_m = i;
        }
    }
    ExtremalEdge { m, big_m, phi_m: big_phi[m], phi_big_m: big_phi[big_m], delta: big_phi[big_m] - big_phi[m] }
}

/// DDFE element current `q mu <c> E + s q D grad(c)`, `s = +1` for
/// electrons and `-1` for holes.
pub fn ddfe_element(geom: &ElementGeometry, phi: &[f64; 4], c: &[f64; 4], params: &MaterialParams, carrier: Carrier) -> [f64; 3] {
    let e = neg(geom.gradient(phi));
    let gc = geom.gradient(c);
    let drift = params.q * params.mobility(carrier) * mean_value(c);
    let diff = carrier.sign() * params.q * params.diffusivity(carrier);
    std::array::from_fn(|i| drift * e[i] + diff * gc[i])
}

/// Method A element current from the electrostatic and quasi-Fermi nodal
/// potentials (V).
pub fn method_a_element(
    geom: &ElementGeometry,
    phi: &[f64; 4],
    phi_c: &[f64; 4],
    params: &MaterialParams,
    carrier: Carrier,
) -> Result<[f64; 3]> {
    let edge = find_extremal_edge(phi, phi_c, params.v_th, carrier);
    for x in [edge.phi_m, edge.phi_big_m] {
        if !(x.abs() <= MAX_EXPONENT) {
            return Err(Error::Range { exponent: x, node: None });
        }
    }
    let c_m = params.n_i * edge.phi_m.exp();
    let c_big_m = params.n_i * edge.phi_big_m.exp();
    let bracket = 0.5 * (c_m * bernoulli_checked(-edge.delta)? + c_big_m * bernoulli_checked(edge.delta)?);
    let g = geom.gradient(phi_c);
    let factor = -params.q * params.mobility(carrier) * bracket;
    Ok(g.map(|x| factor * x))
}

/// One-dimensional artificial-diffusion coefficient `B(2 Pe) + Pe - 1` for
/// the local Peclet number `Pe = |delta phi| / (2 V_th)`.
pub fn stabilization_phi_1d(pe: f64) -> Result<f64> {
    if !(pe >= 0.0) {
        return Err(Error::param("peclet", format!("must be non-negative, got {pe}")));
    }
    Ok(bernoulli_checked(2.0 * pe)? + pe - 1.0)
}

/// Diagonal stabilizing tensor of one element for Method B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilizationTensor {
    pub carrier: Carrier,
    pub diagonal: [f64; 3],
}

/// Relative size of an exponential-interpolant gradient component below
/// which the tensor entry falls back to 0.
pub const TENSOR_GRADIENT_EPS: f64 = 1e-12;

/// Tensor entries `<u> s d_i phi / (d_i u V_th) - 1` with `u` the P1
/// interpolant of `exp((phi - phi_max)/V_th)` for electrons (`s = +1`) and of
/// `exp((phi_min - phi)/V_th)` for holes (`s = -1`). The reference value
/// keeps every exponential in `(0, 1]`.
pub fn stabilization_tensor_3d(geom: &ElementGeometry, phi: &[f64; 4], v_th: f64, carrier: Carrier) -> StabilizationTensor {
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let u: [f64; 4] = match carrier {
        Carrier::Electron => phi.map(|x| ((x - max) / v_th).exp()),
        Carrier::Hole => phi.map(|x| ((min - x) / v_th).exp()),
    };
    let gu = geom.gradient(&u);
    let gphi = geom.gradient(phi);
    let mean_u = mean_value(&u);
    // |grad(lambda_i)| ~ 1/h, so this is the natural scale of grad(u)
    let scale = geom.grads.iter().map(|g| norm3(*g)).fold(0.0, f64::max);
    let s = carrier.sign();
    let diagonal = std::array::from_fn(|i| {
        if gu[i].abs() < TENSOR_GRADIENT_EPS * scale {
            0.0
        } else {
            mean_u * s * gphi[i] / (gu[i] * v_th) - 1.0
        }
    });
    StabilizationTensor { carrier, diagonal }
}

/// Method B element current `q mu <c> E + s q D (I + Phi) grad(c)`.
pub fn method_b_element(geom: &ElementGeometry, phi: &[f64; 4], c: &[f64; 4], params: &MaterialParams, carrier: Carrier) -> [f64; 3] {
    let t = stabilization_tensor_3d(geom, phi, params.v_th, carrier);
    let e = neg(geom.gradient(phi));
    let gc = geom.gradient(c);
    let drift = params.q * params.mobility(carrier) * mean_value(c);
    let diff = carrier.sign() * params.q * params.diffusivity(carrier);
    std::array::from_fn(|i| drift * e[i] + diff * (1.0 + t.diagonal[i]) * gc[i])
}

fn gather(values: &[f64], tet: [usize; 4]) -> [f64; 4] {
    tet.map(|v| values[v])
}

fn silicon_elements(mesh: &Mesh) -> Vec<usize> {
    (0..mesh.num_elements()).filter(|&k| mesh.region(k) == Region::Silicon).collect()
}

fn check_state(mesh: &Mesh, state: &DeviceState) -> Result<()> {
    let nv = mesh.num_vertices();
    for (name, len) in [
        ("phi", state.phi.len()),
        ("n", state.n.len()),
        ("p", state.p.len()),
        ("phi_n", state.phi_n.len()),
        ("phi_p", state.phi_p.len()),
    ] {
        if len != nv {
            return Err(Error::Dimension(format!("{name} has length {len}, mesh has {nv} vertices")));
        }
    }
    Ok(())
}

fn carrier_fields(state: &DeviceState, carrier: Carrier) -> (&[f64], &[f64]) {
    match carrier {
        Carrier::Electron => (&state.n, &state.phi_n),
        Carrier::Hole => (&state.p, &state.phi_p),
    }
}

fn current_field<F>(mesh: &Mesh, state: &DeviceState, carrier: Carrier, method: ReconstructionMethod, f: F) -> Result<ElementVectorField>
where
    F: Fn(&ElementGeometry, [usize; 4]) -> Result<[f64; 3]> + Sync,
{
    check_state(mesh, state)?;
    let elements = silicon_elements(mesh);
    let values = elements
        .par_iter()
        .map(|&k| f(&mesh.element_geometry_cm(k), mesh.element(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ElementVectorField { kind: FieldKind::Current(carrier), method: Some(method), elements, values })
}

pub fn reconstruct_ddfe(mesh: &Mesh, state: &DeviceState, params: &MaterialParams, carrier: Carrier) -> Result<ElementVectorField> {
    let (c, _) = carrier_fields(state, carrier);
    current_field(mesh, state, carrier, ReconstructionMethod::Ddfe, |g, tet| {
        Ok(ddfe_element(g, &gather(&state.phi, tet), &gather(c, tet), params, carrier))
    })
}

pub fn reconstruct_method_a(mesh: &Mesh, state: &DeviceState, params: &MaterialParams, carrier: Carrier) -> Result<ElementVectorField> {
    let (_, phi_c) = carrier_fields(state, carrier);
    current_field(mesh, state, carrier, ReconstructionMethod::MethodA, |g, tet| {
        method_a_element(g, &gather(&state.phi, tet), &gather(phi_c, tet), params, carrier)
    })
}

pub fn reconstruct_method_b(mesh: &Mesh, state: &DeviceState, params: &MaterialParams, carrier: Carrier) -> Result<ElementVectorField> {
    let (c, _) = carrier_fields(state, carrier);
    current_field(mesh, state, carrier, ReconstructionMethod::MethodB, |g, tet| {
        Ok(method_b_element(g, &gather(&state.phi, tet), &gather(c, tet), params, carrier))
    })
}

pub fn reconstruct_current(
    mesh: &Mesh,
    state: &DeviceState,
    params: &MaterialParams,
    carrier: Carrier,
    method: ReconstructionMethod,
) -> Result<ElementVectorField> {
    match method {
        ReconstructionMethod::Ddfe => reconstruct_ddfe(mesh, state, params, carrier),
        ReconstructionMethod::MethodA => reconstruct_method_a(mesh, state, params, carrier),
        ReconstructionMethod::MethodB => reconstruct_method_b(mesh, state, params, carrier),
    }
}

/// Electric field `E = -grad(phi_h)` on every element (V/cm).
pub fn reconstruct_field(mesh: &Mesh, state: &DeviceState) -> Result<ElementVectorField> {
    if state.phi.len() != mesh.num_vertices() {
        return Err(Error::Dimension(format!("phi has length {}", state.phi.len())));
    }
    let elements: Vec<usize> = (0..mesh.num_elements()).collect();
    let values = elements
        .par_iter()
        .map(|&k| neg(mesh.element_geometry_cm(k).gradient(&gather(&state.phi, mesh.element(k)))))
        .collect();
    Ok(ElementVectorField { kind: FieldKind::ElectricField, method: None, elements, values })
}

/// Un-eliminated continuity residuals at a converged state, in scaled units.
///
/// For each carrier `r = A c + M U` with `A` the EAFE operator without
/// Dirichlet rows and `U` the net recombination; interior entries vanish at
/// convergence and contact entries carry the flux leaving through the
/// contact.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityResiduals {
    pub electron: Vec<f64>,
    pub hole: Vec<f64>,
    /// Amperes per unit of scaled residual.
    pub current_unit: f64,
}

/// Current (A) leaving the device through `contact`, by the residual
/// method with the contact's nodal characteristic function as weight.
pub fn terminal_current(mesh: &Mesh, contact: &str, residuals: &ContinuityResiduals) -> Result<f64> {
    let vertices = mesh.contact_vertices(contact)?;
    let nv = mesh.num_vertices();
    if residuals.electron.len() != nv || residuals.hole.len() != nv {
        return Err(Error::Dimension("residual vectors do not match the mesh".into()));
    }
    let mut total = 0.0;
    for v in vertices {
        total += residuals.electron[v] - residuals.hole[v];
    }
    Ok(residuals.current_unit * total)
}

/// Bracket of Method A for a single edge, `n_i (e^Phi_m B(-d) + e^Phi_M B(d)) / 2`,
/// which equals the harmonic mean of `n_i exp(Phi)` along a linear profile.
pub fn harmonic_edge_density(n_i: f64, phi_m: f64, phi_big_m: f64) -> f64 {
    let d = phi_big_m - phi_m;
    0.5 * n_i * (phi_m.exp() * bernoulli(-d) + phi_big_m.exp() * bernoulli(d))
}
