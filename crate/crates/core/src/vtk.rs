//! Legacy ASCII VTK export of nodal and per-element fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gummel::{DeviceState, Simulator};
use crate::jrecon::{reconstruct_current, reconstruct_field, ReconstructionMethod};
use crate::mesh::Mesh;
use crate::physics::Carrier;

/// VTK cell type of a linear tetrahedron.
pub const VTK_TETRA: u8 = 10;

/// Every field written for one device state, sized to the mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceFields {
    pub phi: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub phi_n: Vec<f64>,
    pub phi_p: Vec<f64>,
    pub net_doping: Vec<f64>,
    pub ii_rate: Vec<f64>,
    /// Per element; zero on oxide.
    pub j_n: Vec<[f64; 3]>,
    pub j_p: Vec<[f64; 3]>,
    pub e: Vec<[f64; 3]>,
    pub method: ReconstructionMethod,
}

impl DeviceFields {
    /// Reconstructs currents with `method`; the impact-ionization rate is
    /// evaluated from the same currents whether or not the model is enabled.
    pub fn compute(sim: &Simulator, state: &DeviceState, method: ReconstructionMethod) -> Result<Self> {
        let mesh = sim.mesh();
        let ne = mesh.num_elements();
        let jn = reconstruct_current(mesh, state, sim.params(), Carrier::Electron, method)?;
        let jp = reconstruct_current(mesh, state, sim.params(), Carrier::Hole, method)?;
        let e = reconstruct_field(mesh, state)?;
        Ok(DeviceFields {
            phi: state.phi.clone(),
            n: state.n.clone(),
            p: state.p.clone(),
            phi_n: state.phi_n.clone(),
            phi_p: state.phi_p.clone(),
            net_doping: sim.net_doping().to_vec(),
            ii_rate: sim.ii_nodal_rates_with(state, method)?,
            j_n: jn.to_cells(ne),
            j_p: jp.to_cells(ne),
            e: e.to_cells(ne),
            method,
        })
    }

    pub fn point_scalars(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("phi", &self.phi),
            ("n", &self.n),
            ("p", &self.p),
            ("phi_n", &self.phi_n),
            ("phi_p", &self.phi_p),
            ("net_doping", &self.net_doping),
            ("ii_rate", &self.ii_rate),
        ]
    }

    pub fn cell_vectors(&self) -> [(&'static str, &[[f64; 3]]); 3] {
        [("J_n", &self.j_n), ("J_p", &self.j_p), ("E", &self.e)]
    }
}

fn num(out: &mut String, x: f64) {
    // 17 significant digits round-trip every finite double
    let _ = write!(out, "{x:.16e}");
}

/// Renders the VTK document. All field lengths are checked first.
pub fn render_vtk(mesh: &Mesh, fields: &DeviceFields, title: &str) -> Result<String> {
    let nv = mesh.num_vertices();
    let ne = mesh.num_elements();
    for (name, v) in fields.point_scalars() {
        if v.len() != nv {
            return Err(Error::Dimension(format!("point field `{name}` has {} values, mesh has {nv} vertices", v.len())));
        }
    }
    for (name, v) in fields.cell_vectors() {
        if v.len() != ne {
            return Err(Error::Dimension(format!("cell field `{name}` has {} values, mesh has {ne} elements", v.len())));
        }
    }
    if title.contains('\n') || title.len() > 255 {
        return Err(Error::param("title", "must be a single line of at most 255 characters"));
    }

    let mut out = String::with_capacity(64 * (nv * 10 + ne * 12));
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title);
    out.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {nv} double");
    for p in mesh.vertices() {
        num(&mut out, p[0]);
        out.push(' ');
        num(&mut out, p[1]);
        out.push(' ');
        num(&mut out, p[2]);
        out.push('\n');
    }
    let _ = writeln!(out, "CELLS {ne} {}", 5 * ne);
    for t in mesh.elements() {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(out, "{VTK_TETRA}");
    }
    let _ = writeln!(out, "POINT_DATA {nv}");
    for (name, v) in fields.point_scalars() {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for &x in v {
            num(&mut out, x);
            out.push('\n');
        }
    }
    let _ = writeln!(out, "CELL_DATA {ne}");
    for (name, v) in fields.cell_vectors() {
        let _ = writeln!(out, "VECTORS {name} double");
        for x in v {
            num(&mut out, x[0]);
            out.push(' ');
            num(&mut out, x[1]);
            out.push(' ');
            num(&mut out, x[2]);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes `fields` on `mesh` to `path`. Nothing is written when a field
/// length does not match the mesh.
pub fn export_vtk(path: &Path, mesh: &Mesh, fields: &DeviceFields, title: &str) -> Result<()> {
    let text = render_vtk(mesh, fields, title)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
