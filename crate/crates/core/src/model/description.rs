//! On-disk robot description.
//!
//! A description is a JSON document with a floating base link, a list of
//! child links (each attached to its parent through one joint) and a list
//! of named frames rigidly attached to links. Units are SI throughout.
//!
//! ```json
//! {
//!   "name": "pendulum",
//!   "base": { "name": "base", "mass": 1.0, "com": [0, 0, 0],
//!             "inertia": [0.1, 0.1, 0.1, 0, 0, 0] },
//!   "links": [
//!     { "name": "arm", "parent": "base", "mass": 1.0, "com": [0, 0, -1],
//!       "inertia": [1e-3, 1e-3, 1e-3, 0, 0, 0],
//!       "joint": { "name": "swing", "type": "revolute", "axis": [0, 1, 0],
//!                  "origin": { "xyz": [0, 0, 0], "rpy": [0, 0, 0] },
//!                  "limits": { "position": [-3.0, 3.0], "effort": [-50, 50] } } }
//!   ],
//!   "frames": [ { "name": "tip", "link": "arm", "xyz": [0, 0, -1] } ]
//! }
//! ```
//!
//! `inertia` is `[ixx, iyy, izz, ixy, ixz, iyz]` about the link CoM in link
//! axes. A `null` bound in `position` or `effort` means unbounded.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelDescription {
    pub name: String,
    pub base: BodyDescription,
    #[serde(default)]
    pub links: Vec<LinkDescription>,
    #[serde(default)]
    pub frames: Vec<FrameDescription>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BodyDescription {
    pub name: String,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LinkDescription {
    pub name: String,
    pub parent: String,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    pub inertia: [f64; 6],
    pub joint: JointDescription,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JointDescription {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointType,
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: OriginDescription,
    #[serde(default)]
    pub limits: LimitsDescription,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct OriginDescription {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LimitsDescription {
    #[serde(default = "unbounded")]
    pub position: [Option<f64>; 2],
    #[serde(default = "unbounded")]
    pub effort: [Option<f64>; 2],
}

fn unbounded() -> [Option<f64>; 2] {
    [None, None]
}

impl Default for LimitsDescription {
    fn default() -> Self {
        Self {
            position: unbounded(),
            effort: unbounded(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FrameDescription {
    pub name: String,
    pub link: String,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl BodyDescription {
    pub fn new(name: &str, mass: f64, com: [f64; 3], inertia: [f64; 6]) -> Self {
        Self {
            name: name.to_string(),
            mass,
            com,
            inertia,
        }
    }
}

impl LinkDescription {
    /// Link attached to `parent` through a revolute joint about `axis` located
    /// at `xyz` in the parent frame.
    pub fn revolute(
        name: &str,
        parent: &str,
        axis: [f64; 3],
        xyz: [f64; 3],
        mass: f64,
        com: [f64; 3],
        inertia: [f64; 6],
    ) -> Self {
        Self {
            name: name.to_string(),
            parent: parent.to_string(),
            mass,
            com,
            inertia,
            joint: JointDescription {
                name: format!("{name}_joint"),
                kind: JointType::Revolute,
                axis,
                origin: OriginDescription { xyz, rpy: [0.0; 3] },
                limits: LimitsDescription::default(),
            },
        }
    }
}
