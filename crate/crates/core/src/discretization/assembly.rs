use super::bernoulli::bernoulli_checked;
use super::sparse::{CsrMatrix, SparseSystem};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Region, LOCAL_EDGES};
use crate::physics::Carrier;

/// Mesh-derived quantities shared by every assembly, in scaled lengths.
///
/// Both the Poisson stiffness and the EAFE operators are sums over edges of
/// element edge weights `-vol(K) grad(l_i).grad(l_j)`; the EAFE Bernoulli
/// factor depends only on the edge end points, so the element sums can be
/// collapsed once into per-edge weights.
#[derive(Clone, Debug)]
pub struct Discretization {
    edges: Vec<[usize; 2]>,
    weight_si: Vec<f64>,
    weight_eps: Vec<f64>,
    mass_si: Vec<f64>,
    mass_all: Vec<f64>,
    silicon: Vec<bool>,
    pattern: CsrMatrix,
    edge_pos: Vec<[usize; 4]>,
    diag_pos: Vec<usize>,
    length_factor: f64,
}

impl Discretization {
    /// `length_scale_cm` is the characteristic length; `eps_ratio_oxide` is
    /// `eps_ox / eps_si`.
    pub fn new(mesh: &Mesh, length_scale_cm: f64, eps_ratio_oxide: f64) -> Result<Self> {
        if !(length_scale_cm > 0.0) || !(eps_ratio_oxide > 0.0) {
            return Err(Error::param("scaling", "length scale and permittivity ratio must be positive"));
        }
        let length_factor = mesh.unit_cm() / length_scale_cm;
        let nv = mesh.num_vertices();
        let ne = mesh.edges().len();
        let mut weight_si = vec![0.0; ne];
        let mut weight_eps = vec![0.0; ne];
        let mut mass_si = vec![0.0; nv];
        let mut mass_all = vec![0.0; nv];
        for k in 0..mesh.num_elements() {
            let g = mesh.element_geometry(k).rescaled(length_factor);
            let w = g.edge_weights();
            let edges = mesh.element_edges(k);
            let silicon = mesh.region(k) == Region::Silicon;
            let eps = if silicon { 1.0 } else { eps_ratio_oxide };
            for (l, &e) in edges.iter().enumerate() {
                weight_eps[e] += eps * w[l];
                if silicon {
                    weight_si[e] += w[l];
                }
            }
            for &v in &mesh.element(k) {
                mass_all[v] += g.volume / 4.0;
                if silicon {
                    mass_si[v] += g.volume / 4.0;
                }
            }
        }
        let max_w = weight_si.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let negative = weight_si.iter().filter(|w| **w < -1e-12 * max_w).count();
        if negative > 0 {
            log::warn!("event=negative_edge_weights count={negative} note=maximum_principle_not_guaranteed");
        }
        let edges = mesh.edges().to_vec();
        let pattern = CsrMatrix::from_edges(nv, &edges)?;
        let pos = |i, j| pattern.position(i, j).expect("pattern built from edges");
        let edge_pos = edges.iter().map(|&[i, j]| [pos(i, i), pos(j, j), pos(i, j), pos(j, i)]).collect();
        let diag_pos = (0..nv).map(|i| pos(i, i)).collect();
        debug_assert_eq!(LOCAL_EDGES.len(), 6);
        Ok(Discretization {
            edges,
            weight_si,
            weight_eps,
            mass_si,
            mass_all,
            silicon: mesh.silicon_vertices().to_vec(),
            pattern,
            edge_pos,
            diag_pos,
            length_factor,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.silicon.len()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Scaled lengths per mesh length unit.
    pub fn length_factor(&self) -> f64 {
        self.length_factor
    }

    /// Edge weights summed over silicon elements only.
    pub fn silicon_weights(&self) -> &[f64] {
        &self.weight_si
    }

    /// Edge weights summed over all elements, multiplied by `eps / eps_si`.
    pub fn permittivity_weights(&self) -> &[f64] {
        &self.weight_eps
    }

    /// Lumped mass from silicon elements (zero at oxide-only vertices).
    pub fn silicon_mass(&self) -> &[f64] {
        &self.mass_si
    }

    /// Lumped mass from all elements.
    pub fn total_mass(&self) -> &[f64] {
        &self.mass_all
    }

    pub fn is_silicon(&self, v: usize) -> bool {
        self.silicon[v]
    }

    /// Laplacian-type matrix `sum_e w_e (e_i - e_j)(e_i - e_j)^T`.
    pub fn stiffness(&self, weights: &[f64]) -> Result<CsrMatrix> {
        if weights.len() != self.edges.len() {
            return Err(Error::Dimension(format!("{} edge weights for {} edges", weights.len(), self.edges.len())));
        }
        let mut m = self.pattern.clone();
        let vals = m.values_mut();
        for (pos, &w) in self.edge_pos.iter().zip(weights) {
            vals[pos[0]] += w;
            vals[pos[1]] += w;
            vals[pos[2]] -= w;
            vals[pos[3]] -= w;
        }
        Ok(m)
    }

    fn check_len(&self, name: &str, len: usize) -> Result<()> {
        if len != self.num_vertices() {
            return Err(Error::Dimension(format!("{name} has length {len}, mesh has {} vertices", self.num_vertices())));
        }
        Ok(())
    }

    /// Newton system for the increment of the scaled potential `psi` in
    ///
    /// `-div(lambda2 eps_r grad psi) = p - n + net`
    ///
    /// with `n`, `p` following `psi` at frozen quasi-Fermi levels, so the
    /// Jacobian gains the lumped term `M (n + p)` on silicon vertices.
    /// `psi_dirichlet` holds prescribed potentials; the mask of the returned
    /// system holds the corresponding increments. Dirichlet rows are not yet
    /// applied.
    pub fn assemble_poisson(
        &self,
        lambda2: f64,
        psi: &[f64],
        n: &[f64],
        p: &[f64],
        net: &[f64],
        psi_dirichlet: &[Option<f64>],
    ) -> Result<SparseSystem> {
        for (name, v) in [("psi", psi.len()), ("n", n.len()), ("p", p.len()), ("net", net.len())] {
            self.check_len(name, v)?;
        }
        self.check_len("dirichlet mask", psi_dirichlet.len())?;
        let weights: Vec<f64> = self.weight_eps.iter().map(|w| lambda2 * w).collect();
        let mut matrix = self.stiffness(&weights)?;
        let mut rhs = matrix.matvec(psi);
        for r in rhs.iter_mut() {
            *r = -*r;
        }
        let vals = matrix.values_mut();
        for v in 0..self.num_vertices() {
            let m = self.mass_si[v];
            if m > 0.0 {
                vals[self.diag_pos[v]] += m * (n[v] + p[v]);
                rhs[v] += m * (p[v] - n[v] + net[v]);
            }
        }
        let mut sys = SparseSystem::new(matrix, rhs)?;
        for (v, d) in psi_dirichlet.iter().enumerate() {
            sys.dirichlet[v] = d.map(|target| target - psi[v]);
        }
        Ok(sys)
    }

    /// EAFE system for the density of `carrier`:
    ///
    /// `A_ii += w_ij D B(s psi_i - s psi_j)`, `A_ij = -w_ij D B(s psi_j - s psi_i)`
    ///
    /// with `s = +1` for electrons and `-1` for holes, plus `diag` on the
    /// diagonal and `rhs` on the right. Columns of the edge part sum to zero
    /// and off-diagonals are nonpositive wherever the silicon edge weights are
    /// nonnegative. Vertices outside silicon get Dirichlet value 0; `dirichlet`
    /// adds the contact values. Dirichlet rows are not yet applied.
    pub fn assemble_continuity(
        &self,
        carrier: Carrier,
        psi: &[f64],
        diffusivity: f64,
        diag: &[f64],
        rhs: &[f64],
        dirichlet: &[Option<f64>],
    ) -> Result<SparseSystem> {
        for (name, v) in [("psi", psi.len()), ("diag", diag.len()), ("rhs", rhs.len()), ("dirichlet", dirichlet.len())] {
            self.check_len(name, v)?;
        }
        let s = carrier.sign();
        let mut matrix = self.pattern.clone();
        let vals = matrix.values_mut();
        for ((pos, &[i, j]), &w) in self.edge_pos.iter().zip(&self.edges).zip(&self.weight_si) {
            if w == 0.0 {
                continue;
            }
            let dz = s * (psi[j] - psi[i]);
            let b_ji = bernoulli_checked(dz).map_err(|_| Error::Range { exponent: dz, node: Some(i) })?;
            let b_ij = bernoulli_checked(-dz).map_err(|_| Error::Range { exponent: -dz, node: Some(i) })?;
            let wd = w * diffusivity;
            vals[pos[0]] += wd * b_ij;
            vals[pos[1]] += wd * b_ji;
            vals[pos[2]] -= wd * b_ji;
            vals[pos[3]] -= wd * b_ij;
        }
        for (v, d) in diag.iter().enumerate() {
            vals[self.diag_pos[v]] += d;
        }
        let mut sys = SparseSystem::new(matrix, rhs.to_vec())?;
        for v in 0..self.num_vertices() {
            sys.dirichlet[v] = if self.silicon[v] { dirichlet[v] } else { Some(0.0) };
        }
        Ok(sys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::bernoulli::bernoulli;
    use crate::discretization::solve::{solve, SolverOptions};
    use crate::mesh::{build_box_mesh, BoxMeshSpec, ContactRect, RegionSlab};

    fn cube(n: usize) -> Mesh {
        build_box_mesh(&BoxMeshSpec::new([1.0; 3], [n; 3])).unwrap()
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_symmetric() {
        let mesh = cube(3);
        let d = Discretization::new(&mesh, 1e-4, 1.0 / 3.0).unwrap();
        let k = d.stiffness(d.permittivity_weights()).unwrap();
        assert_eq!(k.asymmetry(), 0.0);
        let scale = k.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
        for i in 0..k.nrows() {
            let s: f64 = k.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-13 * scale);
        }
        let m: f64 = d.total_mass().iter().sum();
        assert!((m - 1.0).abs() < 1e-12);
        assert!(d.silicon_weights().iter().all(|w| *w >= -1e-15));
    }

    #[test]
    fn stiffness_is_positive_semidefinite() {
        let mesh = cube(2);
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let k = d.stiffness(d.permittivity_weights()).unwrap();
        let x: Vec<f64> = (0..k.nrows()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let kx = k.matvec(&x);
        let q: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum();
        assert!(q >= 0.0);
        // energy of a linear function equals |grad|^2 * volume
        let lin: Vec<f64> = mesh.vertices().iter().map(|p| 2.0 * p[0] - p[2]).collect();
        let kl = k.matvec(&lin);
        let e: f64 = lin.iter().zip(&kl).map(|(a, b)| a * b).sum();
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_poisson_has_zero_rhs() {
        let mesh = cube(2);
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let nv = mesh.num_vertices();
        let ones = vec![1e-9; nv];
        let sys = d.assemble_poisson(0.5, &vec![0.0; nv], &ones, &ones, &vec![0.0; nv], &vec![None; nv]).unwrap();
        assert!(sys.rhs.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn eafe_reduces_to_laplacian_for_constant_potential() {
        let mesh = cube(2);
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let nv = mesh.num_vertices();
        let zeros = vec![0.0; nv];
        for carrier in [Carrier::Electron, Carrier::Hole] {
            let sys = d.assemble_continuity(carrier, &vec![3.7; nv], 0.4, &zeros, &zeros, &vec![None; nv]).unwrap();
            let weights: Vec<f64> = d.silicon_weights().iter().map(|w| 0.4 * w).collect();
            let k = d.stiffness(&weights).unwrap();
            for (a, b) in sys.matrix.values().iter().zip(k.values()) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn eafe_m_matrix_and_zero_column_sums() {
        let mesh = cube(3);
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let nv = mesh.num_vertices();
        let psi: Vec<f64> = mesh.vertices().iter().map(|p| 20.0 * p[0] * p[0] - 7.0 * p[1] + 3.0 * p[2]).collect();
        let zeros = vec![0.0; nv];
        for carrier in [Carrier::Electron, Carrier::Hole] {
            let sys = d.assemble_continuity(carrier, &psi, 1.0, &zeros, &zeros, &vec![None; nv]).unwrap();
            let mut colsum = vec![0.0; nv];
            let mut colabs = vec![0.0; nv];
            for i in 0..nv {
                for (j, v) in sys.matrix.row(i) {
                    if i != j {
                        assert!(v <= 0.0);
                    }
                    colsum[j] += v;
                    colabs[j] += v.abs();
                }
            }
            for j in 0..nv {
                assert!(colsum[j].abs() <= 1e-13 * colabs[j]);
            }
            // Slotboom equilibrium n = exp(s psi) is in the kernel of the rows
            let eq: Vec<f64> = psi.iter().map(|v| (carrier.sign() * v).exp()).collect();
            let r = sys.matrix.matvec(&eq);
            for (i, ri) in r.iter().enumerate() {
                let scale: f64 = sys.matrix.row(i).map(|(j, v)| (v * eq[j]).abs()).sum();
                assert!(ri.abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn one_dimensional_rows_match_sg_stencil() {
        // 1D extruded slab: interior rows must be the classical SG balance.
        let nx = 8;
        let h = 1.0 / nx as f64;
        let mesh = build_box_mesh(&BoxMeshSpec::new([1.0, 0.25, 0.25], [nx, 1, 1])).unwrap();
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let nv = mesh.num_vertices();
        let slope = 3.3;
        let psi: Vec<f64> = mesh.vertices().iter().map(|p| slope * p[0]).collect();
        let zeros = vec![0.0; nv];
        let sys = d.assemble_continuity(Carrier::Electron, &psi, 1.0, &zeros, &zeros, &vec![None; nv]).unwrap();
        // nodal data depending on x only
        let c: Vec<f64> = mesh.vertices().iter().map(|p| 1.0 + p[0] * p[0]).collect();
        let r = sys.matrix.matvec(&c);
        // sum rows over the cross-section at x = x_i (i interior): equals
        // area/h * [B(-D) c_i - B(D) c_{i+1} + B(D) c_i - B(-D) c_{i-1}]
        let area = 0.25 * 0.25;
        let delta = slope * h;
        for i in 1..nx {
            let xi = i as f64 * h;
            let total: f64 = (0..nv).filter(|&v| (mesh.vertices()[v][0] - xi).abs() < 1e-12).map(|v| r[v]).sum();
            let f = |x: f64| 1.0 + x * x;
            let sg = area / h
                * (bernoulli(-delta) * f(xi) - bernoulli(delta) * f(xi + h) + bernoulli(delta) * f(xi)
                    - bernoulli(-delta) * f(xi - h));
            assert!((total - sg).abs() < 1e-12 * sg.abs().max(1.0), "i = {i}: {total} vs {sg}");
        }
    }

    #[test]
    fn maximum_principle_on_random_potential() {
        let mut spec = BoxMeshSpec::new([1.0; 3], [4; 3]);
        spec.contacts.push(ContactRect { name: "a".into(), lo: [0.0, 0.0, 0.0], hi: [0.0, 1.0, 1.0] });
        spec.contacts.push(ContactRect { name: "b".into(), lo: [1.0, 0.0, 0.0], hi: [1.0, 1.0, 1.0] });
        let mesh = build_box_mesh(&spec).unwrap();
        let d = Discretization::new(&mesh, 1e-4, 1.0).unwrap();
        let nv = mesh.num_vertices();
        let psi: Vec<f64> = (0..nv).map(|i| 15.0 * (((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5)).collect();
        let mut dir = vec![None; nv];
        for v in mesh.contact_vertices("a").unwrap() {
            dir[v] = Some(1e-3);
        }
        for v in mesh.contact_vertices("b").unwrap() {
            dir[v] = Some(5.0);
        }
        let mass = d.silicon_mass().to_vec();
        let rhs: Vec<f64> = mass.iter().map(|m| 1e-6 * m).collect();
        for carrier in [Carrier::Electron, Carrier::Hole] {
            let mut sys = d.assemble_continuity(carrier, &psi, 1.0, &mass, &rhs, &dir).unwrap();
            sys.apply_dirichlet().unwrap();
            let (x, rep) = solve(&sys, &SolverOptions::default()).unwrap();
            assert!(rep.converged);
            assert!(x.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn oxide_vertices_are_pinned() {
        let mut spec = BoxMeshSpec::new([1.0; 3], [2, 2, 4]);
        spec.regions.push(RegionSlab { region: Region::Oxide, lo: [0.0, 0.0, 0.5], hi: [1.0, 1.0, 1.0] });
        let mesh = build_box_mesh(&spec).unwrap();
        let d = Discretization::new(&mesh, 1e-4, 0.33).unwrap();
        let nv = mesh.num_vertices();
        let zeros = vec![0.0; nv];
        let sys = d.assemble_continuity(Carrier::Electron, &zeros, 1.0, &zeros, &zeros, &vec![None; nv]).unwrap();
        for v in 0..nv {
            assert_eq!(sys.dirichlet[v].is_some(), !mesh.is_silicon_vertex(v));
            if !mesh.is_silicon_vertex(v) {
                assert_eq!(d.silicon_mass()[v], 0.0);
            }
        }
        assert!(d.assemble_poisson(1.0, &zeros[1..], &zeros, &zeros, &zeros, &vec![None; nv]).is_err());
    }
}
