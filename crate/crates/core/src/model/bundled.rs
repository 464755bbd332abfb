//! Problem files shipped with the crate, addressable by name.

use super::{ModelError, ProblemSpec};

const FILES: &[(&str, &str)] = &[
    ("dw", include_str!("../../examples/dw.json")),
    ("eg2_2", include_str!("../../examples/eg2_2.json")),
    ("eg2_3", include_str!("../../examples/eg2_3.json")),
    ("eg2_4", include_str!("../../examples/eg2_4.json")),
    ("eg2_5", include_str!("../../examples/eg2_5.json")),
    ("h_phi", include_str!("../../examples/h_phi.json")),
    ("psi_half", include_str!("../../examples/psi_half.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|f| f.0)
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    FILES.iter().find(|f| f.0 == name).map(|f| f.1)
}

/// Parses a bundled problem; `None` for unknown names.
pub fn bundled(name: &str) -> Option<Result<ProblemSpec, ModelError>> {
    bundled_source(name).map(ProblemSpec::from_json)
}
