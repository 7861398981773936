//! Robot descriptions shipped with the crate.

use super::{build_model, RobotModel};

pub const BIPED14_JSON: &str = include_str!("../../models/biped14.json");
pub const HUMANOID25_JSON: &str = include_str!("../../models/humanoid25.json");

/// Two 7-DoF legs under a pelvis carrying the frozen torso mass, 51 kg total.
pub fn biped14() -> RobotModel {
    build_model(BIPED14_JSON).expect("bundled biped description is valid")
}

/// The biped legs plus a 3-DoF waist and two 4-DoF arms.
pub fn humanoid25() -> RobotModel {
    build_model(HUMANOID25_JSON).expect("bundled humanoid description is valid")
}

/// Resolves `builtin:<name>` model references.
pub fn by_name(name: &str) -> Option<RobotModel> {
    match name {
        "biped14" => Some(biped14()),
        "humanoid25" => Some(humanoid25()),
        _ => None,
    }
}
