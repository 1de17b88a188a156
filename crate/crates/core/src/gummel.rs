//! Decoupled (Gummel) solution of the drift-diffusion system, bias ramping
//! and the residual-method terminal currents.

use crate::discretization::{solve, Discretization, SolverOptions, SparseSystem};
use crate::error::{Error, Result};
use crate::jrecon::{self, ContinuityResiduals, ReconstructionMethod};
use crate::mesh::Mesh;
use crate::physics::{
    impact_ionization_rate, mb_density_at, ohmic_contact_values, quasi_fermi_from_density, srh_denominator,
    Carrier, DopingProfile, MaterialParams, Scaling,
};

/// Nodal solution in physical units. Carrier densities and quasi-Fermi
/// potentials are zero at vertices that touch no silicon element.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub phi: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub phi_n: Vec<f64>,
    pub phi_p: Vec<f64>,
    /// Applied bias per contact, in mesh contact order.
    pub biases: Vec<f64>,
}

impl DeviceState {
    /// Smallest electron and hole density over silicon vertices.
    pub fn min_densities(&self, mesh: &Mesh) -> (f64, f64) {
        let mut out = (f64::INFINITY, f64::INFINITY);
        for v in (0..mesh.num_vertices()).filter(|&v| mesh.is_silicon_vertex(v)) {
            out.0 = out.0.min(self.n[v]);
            out.1 = out.1.min(self.p[v]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Models {
    pub srh: bool,
    pub impact_ionization: bool,
}

impl Default for Models {
    fn default() -> Self {
        Models { srh: true, impact_ionization: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GummelOptions {
    /// Convergence threshold on the potential increment (V_th units) and on
    /// the log-density increments.
    pub tol: f64,
    pub max_iter: usize,
    /// Per-update clamp of the potential increment, in V_th units.
    pub clamp: f64,
    /// Inner Newton tolerance of the nonlinear Poisson solve (V_th units).
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
    pub method: ReconstructionMethod,
    pub models: Models,
    pub linear: SolverOptions,
    /// History length of Anderson acceleration of the Gummel map; 0 runs
    /// the plain map.
    pub anderson_depth: usize,
}

impl Default for GummelOptions {
    fn default() -> Self {
        GummelOptions {
            tol: 1e-6,
            max_iter: 100,
            clamp: 5.0,
            poisson_tol: 1e-10,
            poisson_max_iter: 60,
            method: ReconstructionMethod::MethodA,
            models: Models::default(),
            linear: SolverOptions::default(),
            anderson_depth: 0,
        }
    }
}

/// Sup-norm increments of one Gummel pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Increments {
    /// `max |delta phi| / V_th`.
    pub psi: f64,
    pub log_n: f64,
    pub log_p: f64,
}

impl Increments {
    pub fn max(&self) -> f64 {
        self.psi.max(self.log_n).max(self.log_p)
    }
}

#[derive(Clone, Debug)]
pub struct BiasPointSolution {
    pub state: DeviceState,
    pub iterations: usize,
    /// Largest increment of each Gummel pass.
    pub history: Vec<f64>,
    /// Smallest electron and hole density over every accepted iterate.
    pub min_densities: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub bias: f64,
    /// Current leaving the device through each contact (A), mesh contact order.
    pub currents: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Bias step taken to reach this point (0 for the first point).
    pub step: f64,
    /// Smallest electron and hole density seen over the Gummel iterates of
    /// this point.
    pub min_densities: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub contact: String,
    pub contact_names: Vec<String>,
    pub points: Vec<SweepPoint>,
    /// Number of times the step was halved.
    pub reductions: usize,
    /// True when the sweep ended before `stop` because the step fell below the minimum.
    pub stalled: bool,
    pub final_state: DeviceState,
}

/// A device ready to be solved: mesh, materials, doping and the derived
/// scaled discretization.
pub struct Simulator {
    mesh: Mesh,
    params: MaterialParams,
    net: Vec<f64>,
    scaling: Scaling,
    disc: Discretization,
    options: GummelOptions,
    lambda2: f64,
    contact_vertices: Vec<Vec<usize>>,
    contact_offsets: Vec<f64>,
}

impl Simulator {
    pub fn new(mesh: Mesh, params: MaterialParams, doping: &DopingProfile, options: GummelOptions) -> Result<Self> {
        let params = params.validated()?;
        if !(options.tol > 0.0) || options.max_iter == 0 || !(options.clamp > 0.0) {
            return Err(Error::param("gummel", "tol, max_iter and clamp must be positive"));
        }
        if mesh.contacts().is_empty() {
            return Err(Error::Mesh("device has no contacts".into()));
        }
        let net: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| if mesh.is_silicon_vertex(v) { doping.net(mesh.vertices()[v]) } else { 0.0 })
            .collect();
        if let Some(v) = net.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { field: "net_doping", node: v });
        }
        let c0 = net.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(params.n_i);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in mesh.vertices() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max) * mesh.unit_cm();
        let scaling = Scaling::new(extent, c0, &params)?;
        let disc = Discretization::new(&mesh, extent, params.eps_ox / params.eps_si)?;
        let lambda2 = scaling.poisson_lambda2(params.eps_si);
        let contact_vertices =
            mesh.contacts().iter().map(|c| mesh.contact_vertices(c)).collect::<Result<Vec<_>>>()?;
        let contact_offsets = vec![0.0; mesh.contacts().len()];
        Ok(Simulator { mesh, params, net, scaling, disc, options, lambda2, contact_vertices, contact_offsets })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn options(&self) -> &GummelOptions {
        &self.options
    }

    pub fn options_mut(&mut self) -> &mut GummelOptions {
        &mut self.options
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Net doping at every vertex (zero off silicon), cm^-3.
    pub fn net_doping(&self) -> &[f64] {
        &self.net
    }

    pub fn contact_names(&self) -> &[String] {
        self.mesh.contacts()
    }

    pub fn contact_index(&self, name: &str) -> Result<usize> {
        self.mesh.contact_index(name).ok_or_else(|| Error::UnknownContact(name.to_string()))
    }

    /// Potential offset (V) added to the bias of contacts that touch no
    /// silicon, such as a gate on oxide (a work-function difference).
    pub fn set_contact_offset(&mut self, contact: &str, offset: f64) -> Result<()> {
        let i = self.contact_index(contact)?;
        self.contact_offsets[i] = offset;
        Ok(())
    }

    fn check_biases(&self, biases: &[f64]) -> Result<()> {
        if biases.len() != self.mesh.contacts().len() {
            return Err(Error::Dimension(format!(
                "{} biases for {} contacts",
                biases.len(),
                self.mesh.contacts().len()
            )));
        }
        if let Some(i) = biases.iter().position(|b| !b.is_finite()) {
            return Err(Error::param("bias", format!("bias of contact `{}` is not finite", self.mesh.contacts()[i])));
        }
        Ok(())
    }

    /// Dirichlet data (physical): potential at every contact vertex and
    /// densities at silicon contact vertices.
    fn boundary_values(&self, biases: &[f64]) -> (Vec<Option<f64>>, Vec<Option<f64>>, Vec<Option<f64>>) {
        let nv = self.mesh.num_vertices();
        let (mut phi, mut n, mut p) = (vec![None; nv], vec![None; nv], vec![None; nv]);
        for (c, verts) in self.contact_vertices.iter().enumerate() {
            for &v in verts {
                if self.mesh.is_silicon_vertex(v) {
                    let (f, nn, pp) = ohmic_contact_values(self.net[v], biases[c], &self.params);
                    phi[v] = Some(f);
                    n[v] = Some(nn);
                    p[v] = Some(pp);
                } else {
                    phi[v] = Some(biases[c] + self.contact_offsets[c]);
                }
            }
        }
        (phi, n, p)
    }

    /// Charge-neutral initial guess with flat quasi-Fermi levels at 0 V.
    pub fn initial_state(&self, biases: &[f64]) -> Result<DeviceState> {
        self.check_biases(biases)?;
        let nv = self.mesh.num_vertices();
        let mut phi = vec![0.0; nv];
        let mut n = vec![0.0; nv];
        let mut p = vec![0.0; nv];
        for v in 0..nv {
            if self.mesh.is_silicon_vertex(v) {
                let (f, _, _) = ohmic_contact_values(self.net[v], 0.0, &self.params);
                phi[v] = f;
                n[v] = mb_density_at(Some(v), f, 0.0, &self.params, Carrier::Electron)?;
                p[v] = mb_density_at(Some(v), f, 0.0, &self.params, Carrier::Hole)?;
            }
        }
        let (bphi, bn, bp) = self.boundary_values(biases);
        for v in 0..nv {
            if let Some(x) = bphi[v] {
                phi[v] = x;
            }
            if let Some(x) = bn[v] {
                n[v] = x;
            }
            if let Some(x) = bp[v] {
                p[v] = x;
            }
        }
        self.finish_state(phi, n, p, biases.to_vec())
    }

    fn finish_state(&self, phi: Vec<f64>, n: Vec<f64>, p: Vec<f64>, biases: Vec<f64>) -> Result<DeviceState> {
        let nv = self.mesh.num_vertices();
        let mut phi_n = vec![0.0; nv];
        let mut phi_p = vec![0.0; nv];
        for v in 0..nv {
            if self.mesh.is_silicon_vertex(v) {
                phi_n[v] = quasi_fermi_from_density(phi[v], n[v], &self.params, Carrier::Electron)
                    .map_err(|_| Error::Density { value: n[v], node: Some(v) })?;
                phi_p[v] = quasi_fermi_from_density(phi[v], p[v], &self.params, Carrier::Hole)
                    .map_err(|_| Error::Density { value: p[v], node: Some(v) })?;
            }
        }
        Ok(DeviceState { phi, n, p, phi_n, phi_p, biases })
    }

    /// Impact-ionization generation per element (cm^-3 s^-1), zero on oxide,
    /// from currents reconstructed with `method`.
    pub fn ii_element_rates(&self, state: &DeviceState, method: ReconstructionMethod) -> Result<Vec<f64>> {
        let jn = jrecon::reconstruct_current(&self.mesh, state, &self.params, Carrier::Electron, method)?;
        let jp = jrecon::reconstruct_current(&self.mesh, state, &self.params, Carrier::Hole, method)?;
        let e = jrecon::reconstruct_field(&self.mesh, state)?;
        let mut g = vec![0.0; self.mesh.num_elements()];
        for ((&k, a), b) in jn.elements.iter().zip(&jn.values).zip(&jp.values) {
            g[k] = impact_ionization_rate(*a, *b, e.values[k], &self.params);
        }
        Ok(g)
    }

    /// Element rates lumped to vertices and multiplied by the scaled lumped
    /// mass: the generation term of the scaled continuity rows.
    fn lumped_generation(&self, element_rates: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_vertices()];
        let f = self.disc.length_factor();
        for (k, &g) in element_rates.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let vol = self.mesh.element_geometry(k).volume * f * f * f;
            let share = vol / 4.0 * self.scaling.scale_rate(g);
            for v in self.mesh.element(k) {
                out[v] += share;
            }
        }
        out
    }

    /// Nodal impact-ionization rate (cm^-3 s^-1), lumped from the elements.
    pub fn ii_nodal_rates(&self, state: &DeviceState) -> Result<Vec<f64>> {
        self.ii_nodal_rates_with(state, self.options.method)
    }

    pub fn ii_nodal_rates_with(&self, state: &DeviceState, method: ReconstructionMethod) -> Result<Vec<f64>> {
        let rates = self.ii_element_rates(state, method)?;
        let lumped = self.lumped_generation(&rates);
        let mass = self.disc.silicon_mass();
        Ok(lumped
            .iter()
            .zip(mass)
            .map(|(g, m)| if *m > 0.0 { self.scaling.unscale_rate(g / m) } else { 0.0 })
            .collect())
    }

    fn generation(&self, state: &DeviceState) -> Result<Vec<f64>> {
        if self.options.models.impact_ionization {
            Ok(self.lumped_generation(&self.ii_element_rates(state, self.options.method)?))
        } else {
            Ok(vec![0.0; self.mesh.num_vertices()])
        }
    }

    fn solve_system(&self, mut sys: SparseSystem, what: &str) -> Result<Vec<f64>> {
        sys.apply_dirichlet()?;
        let (x, report) = solve(&sys, &self.options.linear)?;
        if !report.converged {
            return Err(Error::LinearSolve(format!(
                "{what}: residual {:e} after {} iterations",
                report.residual, report.iterations
            )));
        }
        Ok(x)
    }

    /// One Gummel pass from `state` at its own biases:
    /// nonlinear Poisson at frozen quasi-Fermi levels, then electron and
    /// hole continuity with recombination and generation lagged.
    pub fn gummel_step(&self, state: &DeviceState) -> Result<(DeviceState, Increments)> {
        self.gummel_step_lagged(state, state)
    }

    /// Gummel pass from `state` with the generation term evaluated on
    /// `lagged` (the previous converged point on the first pass after a
    /// bias change, whose currents are not polluted by the jump of the
    /// contact values).
    fn gummel_step_lagged(&self, state: &DeviceState, lagged: &DeviceState) -> Result<(DeviceState, Increments)> {
        self.check_biases(&state.biases)?;
        let nv = self.mesh.num_vertices();
        let s = &self.scaling;
        let silicon = |v: usize| self.mesh.is_silicon_vertex(v);
        let (bphi, bn, bp) = self.boundary_values(&state.biases);

        let gen = self.generation(lagged)?;

        let psi_old: Vec<f64> = state.phi.iter().map(|x| s.scale_potential(*x)).collect();
        let mut psi = psi_old.clone();
        let mut n: Vec<f64> = state.n.iter().map(|x| s.scale_concentration(*x)).collect();
        let mut p: Vec<f64> = state.p.iter().map(|x| s.scale_concentration(*x)).collect();
        let net: Vec<f64> = self.net.iter().map(|x| s.scale_concentration(*x)).collect();
        let psi_bc: Vec<Option<f64>> = bphi.iter().map(|b| b.map(|x| s.scale_potential(x))).collect();

        for it in 0..self.options.poisson_max_iter {
            let sys = self.disc.assemble_poisson(self.lambda2, &psi, &n, &p, &net, &psi_bc)?;
            let delta = self.solve_system(sys, "poisson")?;
            let mut largest: f64 = 0.0;
            for v in 0..nv {
                let d = delta[v].clamp(-self.options.clamp, self.options.clamp);
                largest = largest.max(d.abs());
                psi[v] += d;
                if silicon(v) {
                    n[v] *= d.exp();
                    p[v] *= (-d).exp();
                }
            }
            if !largest.is_finite() {
                return Err(Error::NonFinite { field: "phi", node: delta.iter().position(|x| !x.is_finite()).unwrap_or(0) });
            }
            if largest < self.options.poisson_tol {
                break;
            }
            if it + 1 == self.options.poisson_max_iter {
                log::debug!("event=poisson_inner_limit last={largest:e}");
            }
        }

        let mass = self.disc.silicon_mass();
        let ni = self.params.n_i;
        let t0 = s.time();
        let c0 = s.concentration;
        let d_n = self.params.d_n() / s.diffusivity;
        let d_p = self.params.d_p() / s.diffusivity;
        let scaled_bc = |b: &Vec<Option<f64>>| -> Vec<Option<f64>> {
            b.iter().map(|x| x.map(|v| s.scale_concentration(v))).collect()
        };

        // electrons
        let mut diag = vec![0.0; nv];
        let mut rhs = gen.clone();
        if self.options.models.srh {
            for v in (0..nv).filter(|&v| silicon(v)) {
                let den = srh_denominator(n[v] * c0, p[v] * c0, &self.params);
                diag[v] = mass[v] * t0 * p[v] * c0 / den;
                rhs[v] += mass[v] * (t0 / c0) * ni * ni / den;
            }
        }
        let sys = self.disc.assemble_continuity(Carrier::Electron, &psi, d_n, &diag, &rhs, &scaled_bc(&bn))?;
        let n_new = self.solve_system(sys, "electron continuity")?;

        // holes, with the new electrons
        let mut rhs = gen;
        if self.options.models.srh {
            for v in (0..nv).filter(|&v| silicon(v)) {
                let den = srh_denominator(n_new[v] * c0, p[v] * c0, &self.params);
                diag[v] = mass[v] * t0 * n_new[v] * c0 / den;
                rhs[v] += mass[v] * (t0 / c0) * ni * ni / den;
            }
        }
        let sys = self.disc.assemble_continuity(Carrier::Hole, &psi, d_p, &diag, &rhs, &scaled_bc(&bp))?;
        let p_new = self.solve_system(sys, "hole continuity")?;

        let mut inc = Increments { psi: 0.0, log_n: 0.0, log_p: 0.0 };
        for v in 0..nv {
            inc.psi = inc.psi.max((psi[v] - psi_old[v]).abs());
            if !silicon(v) {
                continue;
            }
            for (field, c, cname) in [("n", n_new[v], "electron"), ("p", p_new[v], "hole")] {
                if !c.is_finite() {
                    return Err(Error::NonFinite { field, node: v });
                }
                if !(c > 0.0) {
                    return Err(Error::Positivity { carrier: cname, node: v, value: s.unscale_concentration(c) });
                }
            }
            inc.log_n = inc.log_n.max(log_increment(n_new[v], s.scale_concentration(state.n[v])));
            inc.log_p = inc.log_p.max(log_increment(p_new[v], s.scale_concentration(state.p[v])));
        }
        let phi: Vec<f64> = psi.iter().map(|x| s.unscale_potential(*x)).collect();
        let n_phys = n_new.iter().map(|x| s.unscale_concentration(*x)).collect();
        let p_phys = p_new.iter().map(|x| s.unscale_concentration(*x)).collect();
        let next = self.finish_state(phi, n_phys, p_phys, state.biases.clone())?;
        Ok((next, inc))
    }

    /// Gummel iteration to convergence at `biases` with the configured
    /// tolerance and iteration limit.
    pub fn solve_bias_point(&self, state: &DeviceState, biases: &[f64]) -> Result<BiasPointSolution> {
        self.solve_bias_point_with(state, biases, self.options.tol, self.options.max_iter)
    }

    pub fn solve_bias_point_with(
        &self,
        state: &DeviceState,
        biases: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<BiasPointSolution> {
        self.check_biases(biases)?;
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::param("gummel", "tol and max_iter must be positive"));
        }
        let mut current = self.with_biases(state, biases)?;
        let mut history = Vec::new();
        let mut anderson = Anderson::new(self.options.anderson_depth);
        let mut min_densities = (f64::INFINITY, f64::INFINITY);
        let mut track = |st: &DeviceState| {
            let (a, b) = st.min_densities(&self.mesh);
            min_densities = (min_densities.0.min(a), min_densities.1.min(b));
        };
        for it in 1..=max_iter {
            let lagged = if it == 1 { state } else { &current };
            let (next, inc) = self.gummel_step_lagged(&current, lagged)?;
            history.push(inc.max());
            log::info!(
                "event=gummel_iter bias={} iter={} dpsi={:.3e} dlogn={:.3e} dlogp={:.3e}",
                format_biases(biases),
                it,
                inc.psi,
                inc.log_n,
                inc.log_p
            );
            track(&next);
            if inc.psi < tol && inc.log_n.max(inc.log_p) < tol {
                return Ok(BiasPointSolution { state: next, iterations: it, history, min_densities });
            }
            current = if anderson.depth == 0 { next } else { self.accelerate(&mut anderson, &current, next)? };
            track(&current);
        }
        Err(Error::NonConvergence { iterations: max_iter, last: *history.last().unwrap_or(&f64::NAN), history })
    }

    /// Gummel-map unknowns as one vector: `phi / V_th` on every vertex, then
    /// `ln n` and `ln p` on silicon vertices (0 elsewhere).
    fn pack(&self, state: &DeviceState) -> Vec<f64> {
        let nv = self.mesh.num_vertices();
        let mut x = Vec::with_capacity(3 * nv);
        x.extend(state.phi.iter().map(|v| v / self.params.v_th));
        for c in [&state.n, &state.p] {
            x.extend((0..nv).map(|v| if self.mesh.is_silicon_vertex(v) { c[v].ln() } else { 0.0 }));
        }
        x
    }

    fn unpack(&self, x: &[f64], biases: &[f64]) -> Result<DeviceState> {
        let nv = self.mesh.num_vertices();
        let phi = x[..nv].iter().map(|v| v * self.params.v_th).collect();
        let density = |off: usize| -> Vec<f64> {
            (0..nv).map(|v| if self.mesh.is_silicon_vertex(v) { x[off + v].exp() } else { 0.0 }).collect()
        };
        self.finish_state(phi, density(nv), density(2 * nv), biases.to_vec())
    }

    /// Anderson mixing of the map `x -> g`. Falls back to `g` (and clears
    /// the history) when the extrapolation is unusable or moves any unknown
    /// by more than the clamp.
    fn accelerate(&self, acc: &mut Anderson, x: &DeviceState, g: DeviceState) -> Result<DeviceState> {
        let nv = self.mesh.num_vertices();
        let xv = self.pack(x);
        let gv = self.pack(&g);
        let floor = (LOG_INCREMENT_FLOOR * self.scaling.concentration).ln();
        let weights: Vec<f64> = (0..3 * nv)
            .map(|i| if i < nv || (gv[i] > floor && xv[i] > floor) { 1.0 } else { 0.0 })
            .collect();
        let Some(y) = acc.mix(&xv, &gv, &weights) else {
            return Ok(g);
        };
        let jump = y.iter().zip(&gv).zip(&weights).fold(0.0f64, |m, ((a, b), w)| m.max(w * (a - b).abs()));
        if !(jump <= self.options.clamp) {
            log::debug!("event=anderson_reset jump={jump:e}");
            acc.clear();
            return Ok(g);
        }
        self.unpack(&y, &g.biases)
    }

    /// Copy of `state` moved to new biases: contact Dirichlet values are
    /// replaced, the interior is kept as initial guess.
    fn with_biases(&self, state: &DeviceState, biases: &[f64]) -> Result<DeviceState> {
        let nv = self.mesh.num_vertices();
        for (name, len) in [("phi", state.phi.len()), ("n", state.n.len()), ("p", state.p.len())] {
            if len != nv {
                return Err(Error::Dimension(format!("{name} has length {len}, mesh has {nv} vertices")));
            }
        }
        if biases == state.biases.as_slice() {
            return Ok(state.clone());
        }
        let (bphi, bn, bp) = self.boundary_values(biases);
        let mut phi = state.phi.clone();
        let mut n = state.n.clone();
        let mut p = state.p.clone();
        for v in 0..nv {
            if let Some(x) = bphi[v] {
                phi[v] = x;
            }
            if let Some(x) = bn[v] {
                n[v] = x;
            }
            if let Some(x) = bp[v] {
                p[v] = x;
            }
        }
        self.finish_state(phi, n, p, biases.to_vec())
    }

    /// Un-eliminated continuity residuals of `state` (see [`ContinuityResiduals`]).
    pub fn continuity_residuals(&self, state: &DeviceState) -> Result<ContinuityResiduals> {
        let nv = self.mesh.num_vertices();
        let s = &self.scaling;
        let psi: Vec<f64> = state.phi.iter().map(|x| s.scale_potential(*x)).collect();
        let n: Vec<f64> = state.n.iter().map(|x| s.scale_concentration(*x)).collect();
        let p: Vec<f64> = state.p.iter().map(|x| s.scale_concentration(*x)).collect();
        let gen = self.generation(state)?;
        let mass = self.disc.silicon_mass();
        let mut u = vec![0.0; nv];
        for v in 0..nv {
            if self.mesh.is_silicon_vertex(v) {
                let r = if self.options.models.srh {
                    mass[v] * s.scale_rate(crate::physics::srh_recombination(state.n[v], state.p[v], &self.params))
                } else {
                    0.0
                };
                u[v] = r - gen[v];
            }
        }
        let zeros = vec![0.0; nv];
        let none = vec![None; nv];
        let d_n = self.params.d_n() / s.diffusivity;
        let d_p = self.params.d_p() / s.diffusivity;
        let an = self.disc.assemble_continuity(Carrier::Electron, &psi, d_n, &zeros, &zeros, &none)?;
        let ap = self.disc.assemble_continuity(Carrier::Hole, &psi, d_p, &zeros, &zeros, &none)?;
        let mut rn = an.matrix.matvec(&n);
        let mut rp = ap.matrix.matvec(&p);
        for v in 0..nv {
            rn[v] += u[v];
            rp[v] += u[v];
        }
        Ok(ContinuityResiduals { electron: rn, hole: rp, current_unit: s.q * s.concentration * s.diffusivity * s.length_cm })
    }

    /// Terminal current (A) of every contact, outflow positive.
    pub fn terminal_currents(&self, state: &DeviceState) -> Result<Vec<f64>> {
        let r = self.continuity_residuals(state)?;
        self.mesh.contacts().iter().map(|c| jrecon::terminal_current(&self.mesh, c, &r)).collect()
    }

    /// Ramps the bias of `contact` from `start` to `stop`, halving the step
    /// on failure and growing it back after success.
    pub fn bias_sweep(
        &self,
        initial: &DeviceState,
        contact: &str,
        start: f64,
        stop: f64,
        step: f64,
        min_step: f64,
    ) -> Result<SweepResult> {
        self.bias_sweep_with(initial, contact, start, stop, step, min_step, |_, _| Ok(()))
    }

    /// [`Simulator::bias_sweep`] calling `on_point` after every accepted point.
    #[allow(clippy::too_many_arguments)]
    pub fn bias_sweep_with<F>(
        &self,
        initial: &DeviceState,
        contact: &str,
        start: f64,
        stop: f64,
        step: f64,
        min_step: f64,
        mut on_point: F,
    ) -> Result<SweepResult>
    where
        F: FnMut(&SweepPoint, &DeviceState) -> Result<()>,
    {
        let ci = self.contact_index(contact)?;
        if !(start.is_finite() && stop.is_finite()) || start == stop {
            return Err(Error::param("sweep", "start and stop must be finite and distinct"));
        }
        if !(step > 0.0 && min_step > 0.0 && min_step <= step) {
            return Err(Error::param("sweep", "steps must satisfy 0 < min_step <= step"));
        }
        let dir = (stop - start).signum();
        let mut biases = initial.biases.clone();
        biases[ci] = start;
        let first = self
            .solve_bias_point(initial, &biases)
            .map_err(|e| Error::SweepSetup { bias: start, source: Box::new(e) })?;
        let mut state = first.state;
        let point = SweepPoint {
            bias: start,
            currents: self.terminal_currents(&state)?,
            iterations: first.iterations,
            converged: true,
            step: 0.0,
            min_densities: first.min_densities,
        };
        on_point(&point, &state)?;
        let mut points = vec![point];
        let mut h = step;
        let mut reductions = 0;
        let mut stalled = false;
        let mut current = start;
        while (stop - current) * dir > 1e-12 * step {
            let mut next = snap_bias(current + dir * h);
            if (next - stop) * dir > -1e-9 * step {
                next = stop;
            }
            let mut trial = biases.clone();
            trial[ci] = next;
            match self.solve_bias_point(&state, &trial) {
                Ok(sol) => {
                    let taken = snap_bias((next - current).abs());
                    state = sol.state;
                    current = next;
                    biases = trial;
                    let point = SweepPoint {
                        bias: next,
                        currents: self.terminal_currents(&state)?,
                        iterations: sol.iterations,
                        converged: true,
                        step: taken,
                        min_densities: sol.min_densities,
                    };
                    log::info!(
                        "event=sweep_point contact={contact} bias={next} iterations={} step={taken}",
                        sol.iterations
                    );
                    on_point(&point, &state)?;
                    points.push(point);
                    h = (2.0 * h).min(step);
                }
                Err(e) => {
                    h *= 0.5;
                    reductions += 1;
                    log::warn!("event=step_reduction contact={contact} bias={next} new_step={h} reason=\"{e}\"");
                    if h < min_step {
                        stalled = true;
                        log::warn!("event=sweep_stall contact={contact} last_bias={current}");
                        break;
                    }
                }
            }
        }
        Ok(SweepResult {
            contact: contact.to_string(),
            contact_names: self.mesh.contacts().to_vec(),
            points,
            reductions,
            stalled,
            final_state: state,
        })
    }
}

/// Rounds a bias to a 1 pV grid so that repeated steps do not accumulate
/// binary round-off (0.1 + 0.2 is reported as 0.3).
fn snap_bias(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// Anderson acceleration history (type II, unconstrained least squares).
struct Anderson {
    depth: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson { depth, prev: None, df: Vec::new(), dg: Vec::new() }
    }

    fn clear(&mut self) {
        self.prev = None;
        self.df.clear();
        self.dg.clear();
    }

    /// Next iterate from the current point `x` and its image `g`, or `None`
    /// when no history is available yet.
    fn mix(&mut self, x: &[f64], g: &[f64], w: &[f64]) -> Option<Vec<f64>> {
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((f0, g0)) = self.prev.take() {
            self.df.push(f.iter().zip(&f0).map(|(a, b)| a - b).collect());
            self.dg.push(g.iter().zip(&g0).map(|(a, b)| a - b).collect());
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.prev = Some((f.clone(), g.to_vec()));
        let m = self.df.len();
        if m == 0 {
            return None;
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum::<f64>();
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m {
            for j in 0..m {
                a[i][j] = dot(&self.df[i], &self.df[j]);
            }
            a[i][m] = dot(&self.df[i], &f);
        }
        let scale = (0..m).map(|i| a[i][i]).fold(0.0, f64::max);
        if !(scale > 0.0) {
            self.clear();
            return None;
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 1e-12 * scale;
        }
        let gamma = gauss_solve(a)?;
        let mut y = g.to_vec();
        for (c, d) in gamma.iter().zip(&self.dg) {
            for (yi, di) in y.iter_mut().zip(d) {
                *yi -= c * di;
            }
        }
        Some(y)
    }
}

/// Dense Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for k in 0..m {
        let piv = (k..m).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        a.swap(k, piv);
        if a[k][k] == 0.0 {
            return None;
        }
        for i in k + 1..m {
            let l = a[i][k] / a[k][k];
            for j in k..=m {
                a[i][j] -= l * a[k][j];
            }
        }
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let s: f64 = (k + 1..m).map(|j| a[k][j] * x[j]).sum();
        x[k] = (a[k][m] - s) / a[k][k];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Scaled densities below this are dominated by linear-solve round-off;
/// log increments are measured against it.
pub const LOG_INCREMENT_FLOOR: f64 = 1e-15;

/// `|ln(new/old)|`, with both densities raised to [`LOG_INCREMENT_FLOOR`].
fn log_increment(new: f64, old: f64) -> f64 {
    (new.max(LOG_INCREMENT_FLOOR) / old.max(LOG_INCREMENT_FLOOR)).ln().abs()
}

fn format_biases(b: &[f64]) -> String {
    b.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxMeshSpec, ContactRect};
    use crate::physics::{DopingPrimitive, Species};

    fn small_diode() -> Simulator {
        let mut spec = BoxMeshSpec::new([0.3, 0.3, 0.3], [2, 2, 8]);
        spec.contacts.push(ContactRect { name: "top".into(), lo: [0.0, 0.0, 0.3], hi: [0.3, 0.3, 0.3] });
        spec.contacts.push(ContactRect { name: "body".into(), lo: [0.0, 0.0, 0.0], hi: [0.3, 0.3, 0.0] });
        let mesh = build_box_mesh(&spec).unwrap();
        let doping = DopingProfile::new(vec![
            DopingPrimitive::ConstantSlab { species: Species::Donor, level: 1e18, lo: [0.0, 0.0, 0.15], hi: [0.3; 3] },
            DopingPrimitive::ConstantSlab { species: Species::Acceptor, level: 1e17, lo: [0.0; 3], hi: [0.3; 3] },
        ])
        .unwrap();
        Simulator::new(mesh, MaterialParams::default(), &doping, GummelOptions::default()).unwrap()
    }

    #[test]
    fn equilibrium_has_flat_quasi_fermi_levels() {
        let sim = small_diode();
        let s0 = sim.initial_state(&[0.0, 0.0]).unwrap();
        let sol = sim.solve_bias_point(&s0, &[0.0, 0.0]).unwrap();
        assert!(sol.iterations <= 30);
        let tol = 10.0 * sim.options().tol * sim.params().v_th;
        for v in 0..sim.mesh().num_vertices() {
            assert!(sol.state.phi_n[v].abs() < tol, "phi_n = {}", sol.state.phi_n[v]);
            assert!(sol.state.phi_p[v].abs() < tol);
        }
        let again = sim.solve_bias_point(&sol.state, &[0.0, 0.0]).unwrap();
        assert_eq!(again.iterations, 1);
        let once = sim.solve_bias_point_with(&s0, &[0.0, 0.0], f64::INFINITY, 100).unwrap();
        assert_eq!(once.iterations, 1);
    }

    #[test]
    fn forward_bias_conserves_current() {
        let sim = small_diode();
        let s0 = sim.initial_state(&[0.0, 0.0]).unwrap();
        let sweep = sim.bias_sweep(&s0, "body", 0.0, 0.5, 0.25, 0.01).unwrap();
        assert_eq!(sweep.points.len(), 3);
        let last = sweep.points.last().unwrap();
        let (a, b) = (last.currents[0], last.currents[1]);
        assert!(b < 0.0 && a > 0.0, "forward current enters at the p-side contact: {a} {b}");
        assert!((a + b).abs() <= 1e-6 * b.abs(), "{a} {b}");
    }

    #[test]
    fn sweep_preconditions() {
        let sim = small_diode();
        let s0 = sim.initial_state(&[0.0, 0.0]).unwrap();
        assert!(sim.bias_sweep(&s0, "body", 0.2, 0.2, 0.1, 0.01).is_err());
        assert!(sim.bias_sweep(&s0, "body", 0.0, 0.2, 0.0, 0.01).is_err());
        assert!(matches!(sim.bias_sweep(&s0, "nope", 0.0, 0.2, 0.1, 0.01), Err(Error::UnknownContact(_))));
        assert!(sim.initial_state(&[0.0]).is_err());
    }
}
