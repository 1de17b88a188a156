// Each test binary uses a different subset of these helpers.
#![allow(dead_code)]

use std::path::Path;

/// A coarse 0.3 um diode that solves in well under a second.
pub fn small_diode_toml(extra: &str) -> String {
    format!(
        r#"
[mesh]
extents = [0.3, 0.3, 0.3]
subdivisions = [4, 4, 6]

[[mesh.contacts]]
name = "top"
lo = [0.0, 0.0, 0.3]
hi = [0.3, 0.3, 0.3]

[[mesh.contacts]]
name = "body"
lo = [0.0, 0.0, 0.0]
hi = [0.3, 0.3, 0.0]

[[doping]]
kind = "constant"
species = "donor"
level = 1e18
lo = [0.0, 0.0, 0.15]
hi = [0.3, 0.3, 0.3]

[[doping]]
kind = "constant"
species = "acceptor"
level = 1e17
lo = [0.0, 0.0, 0.0]
hi = [0.3, 0.3, 0.15]

[[contacts]]
name = "top"

[[contacts]]
name = "body"
sweep = {{ start = 0.0, stop = 0.4, step = 0.2, min_step = 0.05 }}

{extra}
"#
    )
}

pub fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}
