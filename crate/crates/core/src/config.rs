//! Run configuration (TOML).
//!
//! ```toml
//! [mesh]
//! extents = [0.3, 0.3, 0.3]          # micrometres, or `file = "device.mesh"`
//! subdivisions = [15, 15, 15]
//! [[mesh.contacts]]
//! name = "top"
//! lo = [0.1, 0.1, 0.3]
//! hi = [0.2, 0.2, 0.3]
//!
//! [[doping]]
//! kind = "constant"
//! species = "acceptor"
//! level = 1e18
//! lo = [0.0, 0.0, 0.0]
//! hi = [0.3, 0.3, 0.3]
//!
//! [[contacts]]
//! name = "body"
//! sweep = { start = 0.0, stop = 0.8, step = 0.1, min_step = 0.0125 }
//! ```
//!
//! See `docs/config.md` for every key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::discretization::{SolverKind, SolverOptions};
use crate::error::{Error, Result};
use crate::gummel::{GummelOptions, Models, Simulator};
use crate::jrecon::ReconstructionMethod;
use crate::mesh::{build_box_mesh, BoxMeshSpec, ContactRect, Mesh, Point, Region, RegionSlab};
use crate::physics::{DopingPrimitive, DopingProfile, ImpactIonization, MaterialParams, Species};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub doping: Vec<DopingConfig>,
    pub contacts: Vec<ContactConfig>,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file; a relative mesh file path is resolved
    /// against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub file: Option<PathBuf>,
    pub extents: Option<[f64; 3]>,
    pub subdivisions: Option<[usize; 3]>,
    #[serde(default)]
    pub regions: Vec<RegionConfig>,
    #[serde(default)]
    pub contacts: Vec<ContactRectConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    Silicon,
    Oxide,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub region: RegionName,
    pub lo: Point,
    pub hi: Point,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRectConfig {
    pub name: String,
    pub lo: Point,
    pub hi: Point,
}

/// Material parameters; omitted keys take the silicon defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub v_th: Option<f64>,
    pub n_i: Option<f64>,
    pub eps_si: Option<f64>,
    pub eps_ox: Option<f64>,
    pub mu_n: Option<f64>,
    pub mu_p: Option<f64>,
    pub tau_n: Option<f64>,
    pub tau_p: Option<f64>,
    #[serde(default)]
    pub impact_ionization: IiConfig,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IiConfig {
    pub a_n: Option<f64>,
    pub b_n: Option<f64>,
    pub a_p: Option<f64>,
    pub b_p: Option<f64>,
    pub field_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesName {
    Donor,
    Acceptor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    X,
    Y,
    Z,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DopingConfig {
    Constant {
        species: SpeciesName,
        level: f64,
        lo: Point,
        hi: Point,
    },
    Gaussian {
        species: SpeciesName,
        peak: f64,
        axis: AxisName,
        position: f64,
        depth: f64,
        lateral_lo: Point,
        lateral_hi: Point,
        #[serde(default)]
        lateral_spread: f64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub name: String,
    /// Fixed bias (V); ignored for the swept contact.
    #[serde(default)]
    pub bias: f64,
    /// Potential offset added at vertices of this contact that touch no
    /// silicon (gate work-function difference), V.
    #[serde(default)]
    pub offset: f64,
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub min_step: f64,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default = "yes")]
    pub srh: bool,
    #[serde(default)]
    pub impact_ionization: bool,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig { srh: true, impact_ionization: false }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Option<ReconstructionMethod>,
    pub gummel_tol: Option<f64>,
    pub gummel_max_iter: Option<usize>,
    pub clamp: Option<f64>,
    pub anderson_depth: Option<usize>,
    pub linear_solver: Option<SolverKind>,
    pub linear_tol: Option<f64>,
    pub linear_max_iter: Option<usize>,
}

/// When field files are written during a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum DumpSchedule {
    Every,
    Final,
    Never,
    /// Points whose bias is within 1e-9 V of a listed value.
    Biases(Vec<f64>),
}

impl<'de> Deserialize<'de> for DumpSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) => match w.as_str() {
                "every" => Ok(DumpSchedule::Every),
                "final" => Ok(DumpSchedule::Final),
                "never" => Ok(DumpSchedule::Never),
                other => Err(serde::de::Error::custom(format!(
                    "unknown dump schedule `{other}`, expected \"every\", \"final\", \"never\" or a list of biases"
                ))),
            },
            Raw::List(v) => Ok(DumpSchedule::Biases(v)),
        }
    }
}

impl DumpSchedule {
    pub fn wants(&self, bias: f64, last: bool) -> bool {
        match self {
            DumpSchedule::Every => true,
            DumpSchedule::Final => last,
            DumpSchedule::Never => false,
            DumpSchedule::Biases(v) => v.iter().any(|b| (b - bias).abs() <= 1e-9),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_output_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_dump")]
    pub dump: DumpSchedule,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: default_output_dir(), dump: default_dump() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

fn default_dump() -> DumpSchedule {
    DumpSchedule::Final
}

fn semantic(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { path: path.into(), reason: reason.into() }
}

/// Parses and validates a configuration; relative paths inside it are
/// resolved against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string().trim_end().to_string()))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

fn positive(path: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(semantic(path, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        match (&m.file, m.extents, m.subdivisions) {
            (Some(_), None, None) => {
                if !m.regions.is_empty() || !m.contacts.is_empty() {
                    return Err(semantic("mesh", "regions and contacts come from the mesh file when `file` is set"));
                }
            }
            (None, Some(_), Some(_)) => self.box_spec()?.validate().map_err(|e| semantic("mesh", e.to_string()))?,
            _ => return Err(semantic("mesh", "give either `file` or both `extents` and `subdivisions`")),
        }

        let mat = &self.material;
        for (key, v) in [
            ("material.v_th", mat.v_th),
            ("material.n_i", mat.n_i),
            ("material.eps_si", mat.eps_si),
            ("material.eps_ox", mat.eps_ox),
            ("material.mu_n", mat.mu_n),
            ("material.mu_p", mat.mu_p),
            ("material.tau_n", mat.tau_n),
            ("material.tau_p", mat.tau_p),
            ("material.impact_ionization.a_n", mat.impact_ionization.a_n),
            ("material.impact_ionization.b_n", mat.impact_ionization.b_n),
            ("material.impact_ionization.a_p", mat.impact_ionization.a_p),
            ("material.impact_ionization.b_p", mat.impact_ionization.b_p),
            ("material.impact_ionization.field_threshold", mat.impact_ionization.field_threshold),
        ] {
            positive(key, v)?;
        }

        for (i, d) in self.doping.iter().enumerate() {
            d.primitive().validate().map_err(|e| semantic(format!("doping[{i}]"), e.to_string()))?;
        }

        if self.contacts.is_empty() {
            return Err(semantic("contacts", "at least one contact bias entry is required"));
        }
        let mut swept = None;
        for (i, c) in self.contacts.iter().enumerate() {
            let path = format!("contacts[{i}]");
            if self.contacts[..i].iter().any(|o| o.name == c.name) {
                return Err(semantic(format!("{path}.name"), format!("contact `{}` listed twice", c.name)));
            }
            if !c.bias.is_finite() || !c.offset.is_finite() {
                return Err(semantic(&path, "bias and offset must be finite"));
            }
            if let Some(s) = &c.sweep {
                if let Some(j) = swept {
                    return Err(semantic(
                        format!("{path}.sweep"),
                        format!("only one swept contact is allowed; contacts[{j}] is already swept"),
                    ));
                }
                swept = Some(i);
                if !(s.start.is_finite() && s.stop.is_finite()) || s.start == s.stop {
                    return Err(semantic(format!("{path}.sweep"), "start and stop must be finite and distinct"));
                }
                if !(s.step > 0.0 && s.min_step > 0.0 && s.min_step <= s.step) {
                    return Err(semantic(format!("{path}.sweep"), "steps must satisfy 0 < min_step <= step"));
                }
            }
        }
        if let Some(names) = self.mesh_contact_names() {
            for (i, c) in self.contacts.iter().enumerate() {
                if !names.contains(&c.name) {
                    return Err(semantic(format!("contacts[{i}].name"), format!("no mesh contact named `{}`", c.name)));
                }
            }
        }

        let s = &self.solver;
        positive("solver.gummel_tol", s.gummel_tol)?;
        positive("solver.clamp", s.clamp)?;
        positive("solver.linear_tol", s.linear_tol)?;
        if s.gummel_max_iter == Some(0) {
            return Err(semantic("solver.gummel_max_iter", "must be at least 1"));
        }
        if s.linear_max_iter == Some(0) {
            return Err(semantic("solver.linear_max_iter", "must be at least 1"));
        }
        if let DumpSchedule::Biases(v) = &self.output.dump {
            if v.iter().any(|b| !b.is_finite()) {
                return Err(semantic("output.dump", "biases must be finite"));
            }
        }
        Ok(())
    }

    fn mesh_contact_names(&self) -> Option<Vec<String>> {
        self.mesh.file.is_none().then(|| self.mesh.contacts.iter().map(|c| c.name.clone()).collect())
    }

    /// Box-mesh description, when the mesh is generated.
    pub fn box_spec(&self) -> Result<BoxMeshSpec> {
        let (Some(extents), Some(subdivisions)) = (self.mesh.extents, self.mesh.subdivisions) else {
            return Err(semantic("mesh", "no box description"));
        };
        let mut spec = BoxMeshSpec::new(extents, subdivisions);
        spec.regions = self
            .mesh
            .regions
            .iter()
            .map(|r| RegionSlab {
                region: match r.region {
                    RegionName::Silicon => Region::Silicon,
                    RegionName::Oxide => Region::Oxide,
                },
                lo: r.lo,
                hi: r.hi,
            })
            .collect();
        spec.contacts =
            self.mesh.contacts.iter().map(|c| ContactRect { name: c.name.clone(), lo: c.lo, hi: c.hi }).collect();
        Ok(spec)
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match &self.mesh.file {
            Some(f) => Mesh::read(&self.base_dir.join(f)),
            None => build_box_mesh(&self.box_spec()?),
        }
    }

    pub fn material(&self) -> Result<MaterialParams> {
        let d = MaterialParams::default();
        let m = &self.material;
        let ii = &m.impact_ionization;
        let di = ImpactIonization::default();
        MaterialParams {
            q: d.q,
            v_th: m.v_th.unwrap_or(d.v_th),
            n_i: m.n_i.unwrap_or(d.n_i),
            eps_si: m.eps_si.unwrap_or(d.eps_si),
            eps_ox: m.eps_ox.unwrap_or(d.eps_ox),
            mu_n: m.mu_n.unwrap_or(d.mu_n),
            mu_p: m.mu_p.unwrap_or(d.mu_p),
            tau_n: m.tau_n.unwrap_or(d.tau_n),
            tau_p: m.tau_p.unwrap_or(d.tau_p),
            ii: ImpactIonization {
                a_n: ii.a_n.unwrap_or(di.a_n),
                b_n: ii.b_n.unwrap_or(di.b_n),
                a_p: ii.a_p.unwrap_or(di.a_p),
                b_p: ii.b_p.unwrap_or(di.b_p),
                field_threshold: ii.field_threshold.unwrap_or(di.field_threshold),
            },
        }
        .validated()
    }

    pub fn doping(&self) -> Result<DopingProfile> {
        DopingProfile::new(self.doping.iter().map(DopingConfig::primitive).collect())
    }

    pub fn gummel_options(&self) -> GummelOptions {
        let d = GummelOptions::default();
        let s = &self.solver;
        GummelOptions {
            tol: s.gummel_tol.unwrap_or(d.tol),
            max_iter: s.gummel_max_iter.unwrap_or(d.max_iter),
            clamp: s.clamp.unwrap_or(d.clamp),
            method: s.method.unwrap_or(d.method),
            models: Models { srh: self.models.srh, impact_ionization: self.models.impact_ionization },
            linear: SolverOptions {
                kind: s.linear_solver.unwrap_or(d.linear.kind),
                tol: s.linear_tol.unwrap_or(d.linear.tol),
                max_iter: s.linear_max_iter.unwrap_or(d.linear.max_iter),
            },
            anderson_depth: s.anderson_depth.unwrap_or(d.anderson_depth),
            ..d
        }
    }

    /// The swept contact and its program, if any.
    pub fn swept(&self) -> Option<(&ContactConfig, SweepConfig)> {
        self.contacts.iter().find_map(|c| c.sweep.map(|s| (c, s)))
    }

    /// Output directory; relative paths are taken from the working directory.
    pub fn output_dir(&self) -> PathBuf {
        self.output.directory.clone()
    }

    /// Builds the simulator with contact offsets applied, and the starting
    /// bias of every mesh contact (the swept contact at its `start`).
    /// `method` overrides the configured reconstruction method.
    pub fn build_simulator(&self, method: Option<ReconstructionMethod>) -> Result<(Simulator, Vec<f64>)> {
        let mesh = self.build_mesh().map_err(|e| as_config_error(e, "mesh"))?;
        let params = self.material().map_err(|e| as_config_error(e, "material"))?;
        let doping = self.doping().map_err(|e| as_config_error(e, "doping"))?;
        let mut options = self.gummel_options();
        if let Some(m) = method {
            options.method = m;
        }
        let mut sim = Simulator::new(mesh, params, &doping, options).map_err(|e| as_config_error(e, "mesh"))?;
        let mut biases = vec![0.0; sim.contact_names().len()];
        for (i, c) in self.contacts.iter().enumerate() {
            let k = sim
                .contact_index(&c.name)
                .map_err(|_| semantic(format!("contacts[{i}].name"), format!("no mesh contact `{}`", c.name)))?;
            biases[k] = c.sweep.map_or(c.bias, |s| s.start);
            sim.set_contact_offset(&c.name, c.offset)?;
        }
        Ok((sim, biases))
    }
}

fn as_config_error(e: Error, path: &str) -> Error {
    match e {
        Error::Io { .. } | Error::Config { .. } | Error::ConfigParse(_) => e,
        other => Error::Config { path: path.into(), reason: other.to_string() },
    }
}

impl DopingConfig {
    pub fn primitive(&self) -> DopingPrimitive {
        let species = |s: SpeciesName| match s {
            SpeciesName::Donor => Species::Donor,
            SpeciesName::Acceptor => Species::Acceptor,
        };
        match *self {
            DopingConfig::Constant { species: s, level, lo, hi } => {
                DopingPrimitive::ConstantSlab { species: species(s), level, lo, hi }
            }
            DopingConfig::Gaussian { species: s, peak, axis, position, depth, lateral_lo, lateral_hi, lateral_spread } => {
                DopingPrimitive::GaussianImplant {
                    species: species(s),
                    peak,
                    axis: axis as usize,
                    position,
                    depth,
                    lateral_lo,
                    lateral_hi,
                    lateral_spread,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
extents = [1.0, 1.0, 1.0]
subdivisions = [2, 2, 2]
[[mesh.contacts]]
name = "a"
lo = [0.0, 0.0, 0.0]
hi = [1.0, 1.0, 0.0]
[[mesh.contacts]]
name = "b"
lo = [0.0, 0.0, 1.0]
hi = [1.0, 1.0, 1.0]

[[doping]]
kind = "constant"
species = "donor"
level = 1e16
lo = [0.0, 0.0, 0.0]
hi = [1.0, 1.0, 1.0]

[[contacts]]
name = "a"

[[contacts]]
name = "b"
sweep = { start = 0.0, stop = 0.5, step = 0.1, min_step = 0.01 }
"#;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config(text, Path::new("."))
    }

    #[test]
    fn minimal_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.gummel_options().method, ReconstructionMethod::MethodA);
        assert_eq!(cfg.output.dump, DumpSchedule::Final);
        assert!(cfg.models.srh && !cfg.models.impact_ionization);
        assert_eq!(cfg.swept().unwrap().0.name, "b");
        assert_eq!(cfg.material().unwrap(), MaterialParams::default());
    }

    #[test]
    fn empty_is_parse_error() {
        assert!(matches!(parse(""), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn unknown_key_has_location() {
        let text = MINIMAL.replace("[[doping]]", "[[doping]]\ncolour = 3");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("line") && err.contains("colour"), "{err}");
    }

    #[test]
    fn two_swept_contacts_rejected() {
        let text = MINIMAL.replace("name = \"a\"\n\n", "name = \"a\"\nsweep = { start = 0.0, stop = 1.0, step = 0.1, min_step = 0.01 }\n\n");
        match parse(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "contacts[1].sweep"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_paths() {
        let text = MINIMAL.replace("level = 1e16", "level = -1.0");
        assert!(matches!(parse(&text), Err(Error::Config { path, .. }) if path == "doping[0]"));
        let text = format!("{MINIMAL}\n[solver]\ngummel_tol = 0.0\n");
        assert!(matches!(parse(&text), Err(Error::Config { path, .. }) if path == "solver.gummel_tol"));
        let text = MINIMAL.replace("[[contacts]]\nname = \"a\"", "[[contacts]]\nname = \"c\"");
        assert!(matches!(parse(&text), Err(Error::Config { path, .. }) if path == "contacts[0].name"));
    }

    #[test]
    fn dump_schedules() {
        for (v, want) in [
            ("\"every\"", DumpSchedule::Every),
            ("\"never\"", DumpSchedule::Never),
            ("[0.2, 0.4]", DumpSchedule::Biases(vec![0.2, 0.4])),
        ] {
            let cfg = parse(&format!("{MINIMAL}\n[output]\ndump = {v}\n")).unwrap();
            assert_eq!(cfg.output.dump, want);
        }
        assert!(parse(&format!("{MINIMAL}\n[output]\ndump = \"sometimes\"\n")).is_err());
        assert!(DumpSchedule::Biases(vec![0.4]).wants(0.4 + 1e-12, false));
        assert!(DumpSchedule::Final.wants(0.0, true) && !DumpSchedule::Final.wants(0.0, false));
    }

    #[test]
    fn method_names() {
        let cfg = parse(&format!("{MINIMAL}\n[solver]\nmethod = \"method_b\"\n")).unwrap();
        assert_eq!(cfg.gummel_options().method, ReconstructionMethod::MethodB);
        assert!(parse(&format!("{MINIMAL}\n[solver]\nmethod = \"method_c\"\n")).is_err());
    }
}
