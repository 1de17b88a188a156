//! Tetrahedral meshes with region labels and contact-tagged boundary facets.
//!
//! Vertex coordinates are stored in micrometres; [`Mesh::unit_cm`] converts
//! mesh lengths to centimetres for the physics.
//!
//! Plain-text mesh format (`#` starts a comment, blank lines ignored):
//!
//! ```text
//! vertices <N>
//! <x> <y> <z>                 # N lines, micrometres
//! tetrahedra <M>
//! <v0> <v1> <v2> <v3> <region>  # M lines, region = silicon | oxide
//! facets <F>
//! <v0> <v1> <v2> <contact>      # F lines, contact-tagged boundary facets
//! ```
//!
//! Boundary facets not listed are insulating.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Centimetres per micrometre.
pub const MICROMETER_CM: f64 = 1e-4;

/// Local vertex pairs of the six tetrahedron edges.
pub const LOCAL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Silicon,
    Oxide,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Silicon => "silicon",
            Region::Oxide => "oxide",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        match s {
            "silicon" => Some(Region::Silicon),
            "oxide" => Some(Region::Oxide),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetTag {
    Insulating,
    /// Index into [`Mesh::contacts`].
    Contact(usize),
}

#[derive(Clone, Debug)]
pub struct BoundaryFacet {
    pub vertices: [usize; 3],
    /// The single tetrahedron owning this facet.
    pub element: usize,
    pub tag: FacetTag,
}

/// Volume and constant P1 shape-function gradients of one tetrahedron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub volume: f64,
    pub grads: [[f64; 3]; 4],
}

impl ElementGeometry {
    /// Computes the geometry of the tetrahedron `points`, which must be
    /// positively oriented.
    pub fn from_points(element: usize, points: &[Point; 4]) -> Result<Self> {
        let e1 = sub(points[1], points[0]);
        let e2 = sub(points[2], points[0]);
        let e3 = sub(points[3], points[0]);
        let det = dot(e1, cross(e2, e3));
        let scale = [e1, e2, e3].iter().map(|e| norm(*e)).fold(0.0, f64::max).powi(3);
        if !(det > 1e-12 * scale) {
            return Err(Error::DegenerateElement { element, volume: det / 6.0 });
        }
        let g1 = scaled(cross(e2, e3), 1.0 / det);
        let g2 = scaled(cross(e3, e1), 1.0 / det);
        let g3 = scaled(cross(e1, e2), 1.0 / det);
        let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
        Ok(ElementGeometry { volume: det / 6.0, grads: [g0, g1, g2, g3] })
    }

    /// Gradient of the P1 function with the given vertex values.
    ///
    /// Uses differences to vertex 0, so constant data give an exactly zero
    /// gradient.
    pub fn gradient(&self, values: &[f64; 4]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for i in 1..4 {
            let d = values[i] - values[0];
            for (gc, gi) in g.iter_mut().zip(self.grads[i]) {
                *gc += d * gi;
            }
        }
        g
    }

    /// P1 Laplacian edge weights `-vol * grad(l_i).grad(l_j)` in [`LOCAL_EDGES`] order.
    pub fn edge_weights(&self) -> [f64; 6] {
        LOCAL_EDGES.map(|(i, j)| -self.volume * dot(self.grads[i], self.grads[j]))
    }

    /// Same element with lengths multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        ElementGeometry {
            volume: self.volume * factor.powi(3),
            grads: self.grads.map(|g| scaled(g, 1.0 / factor)),
        }
    }
}

/// Mean integral value of a P1 function over a tetrahedron.
pub fn mean_value(values: &[f64; 4]) -> f64 {
    (values[0] + values[1] + values[2] + values[3]) / 4.0
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    regions: Vec<Region>,
    facets: Vec<BoundaryFacet>,
    contacts: Vec<String>,
    edges: Vec<[usize; 2]>,
    tet_edges: Vec<[usize; 6]>,
    geometry: Vec<ElementGeometry>,
    silicon_vertex: Vec<bool>,
    unit_cm: f64,
}

impl Mesh {
    /// Builds a mesh from raw arrays. Tetrahedra with negative orientation
    /// are flipped. `contact_facets` lists boundary facets with the contact
    /// name they belong to; the remaining boundary is insulating.
    pub fn new(
        vertices: Vec<Point>,
        mut tets: Vec<[usize; 4]>,
        regions: Vec<Region>,
        contact_facets: Vec<([usize; 3], String)>,
    ) -> Result<Mesh> {
        if tets.len() != regions.len() {
            return Err(Error::Mesh(format!(
                "{} tetrahedra but {} region labels",
                tets.len(),
                regions.len()
            )));
        }
        let nv = vertices.len();
        let mut geometry = Vec::with_capacity(tets.len());
        for (k, tet) in tets.iter_mut().enumerate() {
            if tet.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh(format!("tetrahedron {k} references a missing vertex")));
            }
            let mut pts = tet.map(|v| vertices[v]);
            let det = dot(sub(pts[1], pts[0]), cross(sub(pts[2], pts[0]), sub(pts[3], pts[0])));
            if det < 0.0 {
                tet.swap(2, 3);
                pts.swap(2, 3);
            }
            geometry.push(ElementGeometry::from_points(k, &pts)?);
        }

        // facets: sorted triple -> (count, owner, oriented vertices)
        let mut faces: HashMap<[usize; 3], (usize, usize, [usize; 3])> = HashMap::new();
        let mut face_order = Vec::new();
        for (k, tet) in tets.iter().enumerate() {
            for skip in 0..4 {
                let f: Vec<usize> = (0..4).filter(|&i| i != skip).map(|i| tet[i]).collect();
                let face = [f[0], f[1], f[2]];
                let mut key = face;
                key.sort_unstable();
                let entry = faces.entry(key).or_insert_with(|| {
                    face_order.push(key);
                    (0, k, face)
                });
                entry.0 += 1;
            }
        }
        let mut facets = Vec::new();
        let mut facet_index: HashMap<[usize; 3], usize> = HashMap::new();
        for key in &face_order {
            let (count, owner, face) = faces[key];
            match count {
                1 => {
                    facet_index.insert(*key, facets.len());
                    facets.push(BoundaryFacet { vertices: face, element: owner, tag: FacetTag::Insulating });
                }
                2 => {}
                c => return Err(Error::Mesh(format!("facet {key:?} shared by {c} tetrahedra"))),
            }
        }

        let mut contacts: Vec<String> = Vec::new();
        for (face, name) in contact_facets {
            let mut key = face;
            key.sort_unstable();
            let Some(&fi) = facet_index.get(&key) else {
                return Err(Error::Mesh(format!("contact `{name}` facet {face:?} is not a boundary facet")));
            };
            let ci = match contacts.iter().position(|c| *c == name) {
                Some(i) => i,
                None => {
                    contacts.push(name.clone());
                    contacts.len() - 1
                }
            };
            match facets[fi].tag {
                FacetTag::Contact(other) if other != ci => {
                    return Err(Error::Mesh(format!(
                        "facet {face:?} tagged with both `{}` and `{name}`",
                        contacts[other]
                    )))
                }
                _ => facets[fi].tag = FacetTag::Contact(ci),
            }
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut tet_edges = Vec::with_capacity(tets.len());
        for tet in &tets {
            let local = LOCAL_EDGES.map(|(a, b)| {
                let key = if tet[a] < tet[b] { [tet[a], tet[b]] } else { [tet[b], tet[a]] };
                *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                })
            });
            tet_edges.push(local);
        }

        let mut silicon_vertex = vec![false; nv];
        for (tet, region) in tets.iter().zip(&regions) {
            if *region == Region::Silicon {
                for &v in tet {
                    silicon_vertex[v] = true;
                }
            }
        }

        Ok(Mesh {
            vertices,
            tets,
            regions,
            facets,
            contacts,
            edges,
            tet_edges,
            geometry,
            silicon_vertex,
            unit_cm: MICROMETER_CM,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn element(&self, k: usize) -> [usize; 4] {
        self.tets[k]
    }

    pub fn region(&self, k: usize) -> Region {
        self.regions[k]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn contacts(&self) -> &[String] {
        &self.contacts
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Global edge indices of element `k` in [`LOCAL_EDGES`] order.
    pub fn element_edges(&self, k: usize) -> [usize; 6] {
        self.tet_edges[k]
    }

    /// Centimetres per mesh length unit.
    pub fn unit_cm(&self) -> f64 {
        self.unit_cm
    }

    /// Geometry of element `k` in mesh units.
    pub fn element_geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    /// Geometry of element `k` in centimetres.
    pub fn element_geometry_cm(&self, k: usize) -> ElementGeometry {
        self.geometry[k].rescaled(self.unit_cm)
    }

    pub fn element_points(&self, k: usize) -> [Point; 4] {
        self.tets[k].map(|v| self.vertices[v])
    }

    pub fn centroid(&self, k: usize) -> Point {
        let p = self.element_points(k);
        [0, 1, 2].map(|c| (p[0][c] + p[1][c] + p[2][c] + p[3][c]) / 4.0)
    }

    pub fn is_silicon_vertex(&self, v: usize) -> bool {
        self.silicon_vertex[v]
    }

    pub fn silicon_vertices(&self) -> &[bool] {
        &self.silicon_vertex
    }

    pub fn silicon_elements(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tets.len()).filter(|&k| self.regions[k] == Region::Silicon)
    }

    pub fn total_volume(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    pub fn contact_index(&self, name: &str) -> Option<usize> {
        self.contacts.iter().position(|c| c == name)
    }

    /// Sorted vertices of all facets tagged with `contact`.
    pub fn contact_vertices(&self, contact: &str) -> Result<Vec<usize>> {
        let ci = self.contact_index(contact).ok_or_else(|| Error::UnknownContact(contact.to_string()))?;
        let mut vs: Vec<usize> = self
            .facets
            .iter()
            .filter(|f| f.tag == FacetTag::Contact(ci))
            .flat_map(|f| f.vertices)
            .collect();
        vs.sort_unstable();
        vs.dedup();
        Ok(vs)
    }

    /// Area of the facets tagged with `contact`, in mesh units squared.
    pub fn contact_area(&self, contact: &str) -> Result<f64> {
        let ci = self.contact_index(contact).ok_or_else(|| Error::UnknownContact(contact.to_string()))?;
        Ok(self
            .facets
            .iter()
            .filter(|f| f.tag == FacetTag::Contact(ci))
            .map(|f| {
                let p = f.vertices.map(|v| self.vertices[v]);
                0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])))
            })
            .sum())
    }

    /// Serializes to the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
        }
        let _ = writeln!(out, "tetrahedra {}", self.tets.len());
        for (t, r) in self.tets.iter().zip(&self.regions) {
            let _ = writeln!(out, "{} {} {} {} {}", t[0], t[1], t[2], t[3], r.name());
        }
        let tagged: Vec<_> = self
            .facets
            .iter()
            .filter_map(|f| match f.tag {
                FacetTag::Contact(c) => Some((f.vertices, &self.contacts[c])),
                FacetTag::Insulating => None,
            })
            .collect();
        let _ = writeln!(out, "facets {}", tagged.len());
        for (v, name) in tagged {
            let _ = writeln!(out, "{} {} {} {}", v[0], v[1], v[2], name);
        }
        out
    }

    /// Parses the plain-text mesh format. `origin` is used in error messages.
    pub fn from_text(text: &str, origin: &Path) -> Result<Mesh> {
        let err = |line: usize, reason: String| Error::Format { path: origin.to_path_buf(), line, reason };
        let mut rest: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        rest.reverse();
        let mut next = |what: &str| rest.pop().ok_or_else(|| err(0, format!("unexpected end of file reading {what}")));
        let count = |ln: usize, l: &str, keyword: &str| -> Result<usize> {
            let mut it = l.split_whitespace();
            if it.next() != Some(keyword) {
                return Err(err(ln, format!("expected `{keyword} <count>`")));
            }
            it.next().and_then(|c| c.parse().ok()).ok_or_else(|| err(ln, format!("bad `{keyword}` count")))
        };

        let (ln, l) = next("vertices header")?;
        let nv = count(ln, l, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertices")?;
            let xs: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln, e.to_string()))?;
            if xs.len() != 3 {
                return Err(err(ln, "vertex needs 3 coordinates".into()));
            }
            vertices.push([xs[0], xs[1], xs[2]]);
        }
        let (ln, l) = next("tetrahedra header")?;
        let nt = count(ln, l, "tetrahedra")?;
        let mut tets = Vec::with_capacity(nt);
        let mut regions = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = next("tetrahedra")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(err(ln, "tetrahedron needs 4 vertex indices and a region".into()));
            }
            let mut t = [0usize; 4];
            for (slot, tok) in t.iter_mut().zip(&toks[..4]) {
                *slot = tok.parse().map_err(|_| err(ln, format!("bad vertex index `{tok}`")))?;
            }
            tets.push(t);
            regions.push(Region::parse(toks[4]).ok_or_else(|| err(ln, format!("unknown region `{}`", toks[4])))?);
        }
        let (ln, l) = next("facets header")?;
        let nf = count(ln, l, "facets")?;
        let mut facets = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, l) = next("facets")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(err(ln, "facet needs 3 vertex indices and a contact name".into()));
            }
            let mut f = [0usize; 3];
            for (slot, tok) in f.iter_mut().zip(&toks[..3]) {
                *slot = tok.parse().map_err(|_| err(ln, format!("bad vertex index `{tok}`")))?;
            }
            facets.push((f, toks[3].to_string()));
        }
        if let Some((ln, _)) = next("trailer").ok() {
            return Err(err(ln, "trailing data after facets section".into()));
        }
        Mesh::new(vertices, tets, regions, facets)
    }

    pub fn read(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mesh::from_text(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Axis-aligned box assigning a region to the elements whose centroid lies inside.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSlab {
    pub region: Region,
    pub lo: Point,
    pub hi: Point,
}

/// Axis-aligned rectangle on the box boundary: exactly one axis has `lo == hi`,
/// equal to 0 or the box extent on that axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactRect {
    pub name: String,
    pub lo: Point,
    pub hi: Point,
}

impl ContactRect {
    fn normal_axis(&self) -> Option<usize> {
        let flat: Vec<usize> = (0..3).filter(|&a| self.lo[a] == self.hi[a]).collect();
        (flat.len() == 1).then(|| flat[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxMeshSpec {
    /// Box `(0, extents[0]) x (0, extents[1]) x (0, extents[2])` in micrometres.
    pub extents: [f64; 3],
    pub subdivisions: [usize; 3],
    /// Applied in order; later slabs override earlier ones. Default is silicon.
    pub regions: Vec<RegionSlab>,
    pub contacts: Vec<ContactRect>,
}

impl BoxMeshSpec {
    pub fn new(extents: [f64; 3], subdivisions: [usize; 3]) -> Self {
        BoxMeshSpec { extents, subdivisions, regions: Vec::new(), contacts: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.extents[a] > 0.0) || !self.extents[a].is_finite() {
                return Err(Error::param("extents", format!("axis {a} extent {} must be > 0", self.extents[a])));
            }
            if self.subdivisions[a] == 0 {
                return Err(Error::param("subdivisions", format!("axis {a} needs at least one subdivision")));
            }
        }
        for c in &self.contacts {
            let Some(axis) = c.normal_axis() else {
                return Err(Error::param(
                    "contacts",
                    format!("contact `{}` must be flat along exactly one axis", c.name),
                ));
            };
            let v = c.lo[axis];
            let tol = 1e-12 * self.extents[axis];
            if v.abs() > tol && (v - self.extents[axis]).abs() > tol {
                return Err(Error::param("contacts", format!("contact `{}` does not lie on the box boundary", c.name)));
            }
            if (0..3).any(|a| c.lo[a] > c.hi[a]) {
                return Err(Error::param("contacts", format!("contact `{}` has lo > hi", c.name)));
            }
        }
        Ok(())
    }
}

/// Structured box mesh: every grid cell is split into six tetrahedra sharing
/// the cell's main diagonal (Kuhn subdivision), the same diagonal everywhere.
pub fn build_box_mesh(spec: &BoxMeshSpec) -> Result<Mesh> {
    spec.validate()?;
    let [nx, ny, nz] = spec.subdivisions;
    let h = [0, 1, 2].map(|a| spec.extents[a] / spec.subdivisions[a] as f64);
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                // exact boundary coordinates
                let coord = |n: usize, count: usize, a: usize| {
                    if n == count {
                        spec.extents[a]
                    } else {
                        n as f64 * h[a]
                    }
                };
                vertices.push([coord(i, nx, 0), coord(j, ny, 1), coord(k, nz, 2)]);
            }
        }
    }

    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut tet = [idx(c[0], c[1], c[2]), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        tet[step + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    let mut regions = vec![Region::Silicon; tets.len()];
    for (t, region) in tets.iter().zip(regions.iter_mut()) {
        let p = t.map(|v| vertices[v]);
        let centroid = [0, 1, 2].map(|a| (p[0][a] + p[1][a] + p[2][a] + p[3][a]) / 4.0);
        for slab in &spec.regions {
            if (0..3).all(|a| centroid[a] >= slab.lo[a] && centroid[a] <= slab.hi[a]) {
                *region = slab.region;
            }
        }
    }

    // Contact facets: boundary-face triangles whose vertices all lie in a rectangle.
    let mut contact_facets = Vec::new();
    for c in &spec.contacts {
        let axis = c.normal_axis().expect("validated");
        let tol = 1e-9 * spec.extents.iter().cloned().fold(0.0, f64::max);
        let inside = |p: &Point| (0..3).all(|a| p[a] >= c.lo[a] - tol && p[a] <= c.hi[a] + tol);
        let before = contact_facets.len();
        for t in &tets {
            for skip in 0..4 {
                let f: Vec<usize> = (0..4).filter(|&s| s != skip).map(|s| t[s]).collect();
                let pts = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
                let on_plane = pts.iter().all(|p| (p[axis] - c.lo[axis]).abs() <= tol);
                if on_plane && pts.iter().all(inside) {
                    contact_facets.push(([f[0], f[1], f[2]], c.name.clone()));
                }
            }
        }
        if contact_facets.len() == before {
            return Err(Error::param(
                "contacts",
                format!("contact `{}` covers no boundary facet; align it with the grid", c.name),
            ));
        }
    }
    Mesh::new(vertices, tets, regions, contact_facets)
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scaled(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube(n: [usize; 3]) -> Mesh {
        build_box_mesh(&BoxMeshSpec::new([1.0, 1.0, 1.0], n)).unwrap()
    }

    #[test]
    fn single_cube_kuhn_split() {
        let m = unit_cube([1, 1, 1]);
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_elements(), 6);
        assert_eq!(m.boundary_facets().len(), 12);
        // 12 cube edges + 6 face diagonals + 1 main diagonal
        assert_eq!(m.edges().len(), 19);
    }

    #[test]
    fn diode_box_counts() {
        for n in 1..4 {
            let m = build_box_mesh(&BoxMeshSpec::new([0.3; 3], [n; 3])).unwrap();
            assert_eq!(m.num_elements(), 6 * n * n * n);
            assert_eq!(m.num_vertices(), (n + 1).pow(3));
        }
    }

    #[test]
    fn volume_additivity() {
        let m = unit_cube([2, 1, 1]);
        assert_eq!(m.num_elements(), 12);
        assert!((m.total_volume() - 1.0).abs() < 1e-15);
        let m = build_box_mesh(&BoxMeshSpec::new([0.3, 0.2, 0.7], [4, 3, 5])).unwrap();
        assert!((m.total_volume() - 0.3 * 0.2 * 0.7).abs() < 1e-12 * 0.042);
        assert!((0..m.num_elements()).all(|k| m.element_geometry(k).volume > 0.0));
    }

    #[test]
    fn reference_tetrahedron() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let g = ElementGeometry::from_points(0, &pts).unwrap();
        assert!((g.volume - 1.0 / 6.0).abs() < 1e-16);
        assert_eq!(g.grads[0], [-1.0, -1.0, -1.0]);
        assert_eq!(g.grads[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_element_reported() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        match ElementGeometry::from_points(7, &pts) {
            Err(Error::DegenerateElement { element, .. }) => assert_eq!(element, 7),
            other => panic!("expected degenerate element error, got {other:?}"),
        }
        let r = Mesh::new(pts.to_vec(), vec![[0, 1, 2, 3]], vec![Region::Silicon], vec![]);
        assert!(matches!(r, Err(Error::DegenerateElement { element: 0, .. })));
    }

    #[test]
    fn negative_orientation_is_fixed() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let m = Mesh::new(pts, vec![[0, 2, 1, 3]], vec![Region::Silicon], vec![]).unwrap();
        assert!((m.element_geometry(0).volume - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn mean_value_examples() {
        assert_eq!(mean_value(&[1.0, 1.0, 1.0, 1.0]), 1.0);
        assert_eq!(mean_value(&[0.0, 0.0, 0.0, 4.0]), 1.0);
    }

    #[test]
    fn interior_facets_shared_by_two() {
        let m = unit_cube([3, 2, 2]);
        // 6 tets * 4 faces = boundary + 2 * interior
        let total = 4 * m.num_elements();
        let boundary = m.boundary_facets().len();
        assert_eq!((total - boundary) % 2, 0);
        // each box face is 2 triangles per square
        assert_eq!(boundary, 2 * 2 * (3 * 2 + 3 * 2 + 2 * 2));
    }

    #[test]
    fn nonobtuse_edge_weights() {
        let m = build_box_mesh(&BoxMeshSpec::new([0.3, 0.1, 0.5], [3, 2, 4])).unwrap();
        for k in 0..m.num_elements() {
            let g = m.element_geometry(k);
            for w in g.edge_weights() {
                assert!(w > -1e-12, "negative edge weight {w}");
            }
        }
    }

    #[test]
    fn contacts_tag_boundary_rectangles() {
        let mut spec = BoxMeshSpec::new([0.3; 3], [3, 3, 3]);
        spec.contacts.push(ContactRect { name: "top".into(), lo: [0.1, 0.1, 0.3], hi: [0.2, 0.2, 0.3] });
        spec.contacts.push(ContactRect { name: "body".into(), lo: [0.0, 0.0, 0.0], hi: [0.3, 0.3, 0.0] });
        let m = build_box_mesh(&spec).unwrap();
        assert_eq!(m.contacts(), &["top".to_string(), "body".to_string()]);
        assert_eq!(m.contact_vertices("top").unwrap().len(), 4);
        assert_eq!(m.contact_vertices("body").unwrap().len(), 16);
        assert!((m.contact_area("top").unwrap() - 0.01).abs() < 1e-14);
        assert!((m.contact_area("body").unwrap() - 0.09).abs() < 1e-14);
        assert!(matches!(m.contact_vertices("gate"), Err(Error::UnknownContact(_))));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_box_mesh(&BoxMeshSpec::new([0.0, 1.0, 1.0], [1, 1, 1])).is_err());
        assert!(build_box_mesh(&BoxMeshSpec::new([1.0, -1.0, 1.0], [1, 1, 1])).is_err());
        assert!(build_box_mesh(&BoxMeshSpec::new([1.0, 1.0, 1.0], [1, 0, 1])).is_err());
        let mut spec = BoxMeshSpec::new([1.0; 3], [1, 1, 1]);
        spec.contacts.push(ContactRect { name: "mid".into(), lo: [0.0, 0.0, 0.5], hi: [1.0, 1.0, 0.5] });
        assert!(build_box_mesh(&spec).is_err());
    }

    #[test]
    fn regions_from_slabs() {
        let mut spec = BoxMeshSpec::new([1.0, 1.0, 1.0], [2, 2, 4]);
        spec.regions.push(RegionSlab { region: Region::Oxide, lo: [0.0, 0.0, 0.75], hi: [1.0, 1.0, 1.0] });
        let m = build_box_mesh(&spec).unwrap();
        let oxide = m.regions().iter().filter(|r| **r == Region::Oxide).count();
        assert_eq!(oxide, 6 * 4);
        // top plane vertices are oxide-only
        let top_si = (0..m.num_vertices()).filter(|&v| m.vertices()[v][2] == 1.0 && m.is_silicon_vertex(v)).count();
        assert_eq!(top_si, 0);
        let iface_si = (0..m.num_vertices()).filter(|&v| m.vertices()[v][2] == 0.75 && m.is_silicon_vertex(v)).count();
        assert_eq!(iface_si, 9);
    }

    #[test]
    fn text_round_trip() {
        let mut spec = BoxMeshSpec::new([0.3, 0.2, 0.1], [2, 2, 1]);
        spec.contacts.push(ContactRect { name: "left".into(), lo: [0.0, 0.0, 0.0], hi: [0.0, 0.2, 0.1] });
        spec.regions.push(RegionSlab { region: Region::Oxide, lo: [0.0, 0.0, 0.0], hi: [0.15, 0.2, 0.1] });
        let m = build_box_mesh(&spec).unwrap();
        let text = m.to_text();
        let back = Mesh::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.elements(), m.elements());
        assert_eq!(back.regions(), m.regions());
        assert_eq!(back.contact_vertices("left").unwrap(), m.contact_vertices("left").unwrap());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_errors_carry_line() {
        let text = "vertices 1\n0 0\n";
        match Mesh::from_text(text, Path::new("bad.mesh")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
