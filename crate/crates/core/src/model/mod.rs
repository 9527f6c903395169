//! Planar musculoskeletal model: links, hinge joints, muscle actuators with
//! straight-segment tendon paths, mimic sites and ground-contact probes.
//!
//! A model is loaded from a JSON document, validated once, and is immutable
//! afterwards. Generalized coordinates are laid out as `[x, z, pitch]` for
//! the floating root (when `root_free`) followed by one angle per hinge in
//! declaration order. Angles are counter-clockwise in the x–z plane with z
//! pointing up.

mod kinematics;
pub mod muscle;
mod tendon;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kinematics::{perp, rot, LinkPoses, SiteKinematics};
pub use muscle::{activation_step, activation_time_constant, muscle_force, MuscleCurves};
pub(crate) use tendon::tendon_length_and_jacobian;
pub use tendon::{moment_arm, muscle_torques, tendon_jacobian, tendon_length, MOMENT_ARM_PROBE};

pub type Vec2 = Vector2<f64>;

/// Name used to reference the fixed world frame in fixed-base models.
pub const WORLD: &str = "world";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    /// kg
    pub mass: f64,
    /// kg·m², about the center of mass
    pub inertia: f64,
    /// m (informational; geometry lives in anchors and points)
    pub length: f64,
    /// center of mass in the link frame (m)
    pub com: [f64; 2],
    /// ground-contact probe points in the link frame; each one is also a touch sensor
    #[serde(default)]
    pub contact_points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent_link: String,
    pub child_link: String,
    /// hinge location in the parent frame; also the child frame origin
    pub axis_anchor: [f64; 2],
    pub range_lo: f64,
    pub range_hi: f64,
    #[serde(default)]
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViaPoint {
    pub link: String,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonPath {
    pub via_points: Vec<ViaPoint>,
    /// L0, used to normalize frame-to-frame length changes
    pub rest_length: f64,
}

fn default_v_max() -> f64 {
    10.0
}
fn default_tau_act() -> f64 {
    0.01
}
fn default_tau_deact() -> f64 {
    0.04
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleActuator {
    pub name: String,
    pub path: TendonPath,
    /// maximum isometric force (N)
    pub f_max: f64,
    /// optimal muscle-tendon length (m)
    pub l_opt: f64,
    /// maximum shortening speed in optimal lengths per second
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_tau_act")]
    pub tau_act: f64,
    #[serde(default = "default_tau_deact")]
    pub tau_deact: f64,
    /// initial activation
    #[serde(default)]
    pub act: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimicSite {
    pub name: String,
    pub link: String,
    pub offset: [f64; 2],
    #[serde(default)]
    pub is_root: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    /// normal stiffness (N/m)
    pub k_n: f64,
    /// normal damping (N·s/m)
    pub c_n: f64,
    /// Coulomb friction coefficient
    pub mu: f64,
    /// friction regularization velocity (m/s)
    pub v_slip: f64,
}

impl Default for ContactSpec {
    fn default() -> Self {
        Self {
            k_n: 2e4,
            c_n: 200.0,
            mu: 1.0,
            v_slip: 0.01,
        }
    }
}

/// Left/right pairs for models declared symmetric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorSpec {
    #[serde(default)]
    pub joints: Vec<[String; 2]>,
    #[serde(default)]
    pub muscles: Vec<[String; 2]>,
}

fn default_limit_stiffness() -> f64 {
    200.0
}
fn default_limit_damping() -> f64 {
    2.0
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub muscles: Vec<MuscleActuator>,
    pub sites: Vec<MimicSite>,
    /// gravitational acceleration magnitude (m/s²), acting along −z
    pub gravity: f64,
    pub root_free: bool,
    #[serde(default)]
    pub contact: ContactSpec,
    /// joint-limit restoring stiffness (N·m/rad), active only beyond the range
    #[serde(default = "default_limit_stiffness")]
    pub limit_stiffness: f64,
    #[serde(default = "default_limit_damping")]
    pub limit_damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<MirrorSpec>,
}

/// Resolved indices; built once at load.
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    /// topological order of body links, parents first
    pub order: Vec<usize>,
    /// joint whose child is this link
    pub parent_joint: Vec<Option<usize>>,
    /// parent link of each joint (None = world)
    pub joint_parent: Vec<Option<usize>>,
    /// rotational generalized coordinates moving each link, root first
    pub link_rot_coords: Vec<Vec<usize>>,
    /// for every generalized coordinate: the link whose origin is the rotation
    /// center (None for the root translations)
    pub coord_center: Vec<Option<usize>>,
    pub via_links: Vec<Vec<Option<usize>>>,
    pub site_links: Vec<Option<usize>>,
    pub root_site: usize,
    /// flattened contact probes (link, point in link frame)
    pub probes: Vec<(usize, Vec2)>,
}

/// Validated, immutable musculoskeletal model.
#[derive(Debug, Clone)]
pub struct MskModel {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub muscles: Vec<MuscleActuator>,
    pub sites: Vec<MimicSite>,
    pub root_free: bool,
    pub gravity: f64,
    pub contact: ContactSpec,
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    pub mirror: Option<MirrorSpec>,
    pub(crate) topo: Topology,
    /// non-fatal findings from validation (e.g. degenerate tendon geometry)
    pub warnings: Vec<String>,
}

/// Finds the 1-based line of the first occurrence of `needle` in `text`.
fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.find(needle)
        .map(|pos| text[..pos].bytes().filter(|&b| b == b'\n').count() + 1)
}

fn anchored(text: Option<&str>, name: &str, msg: String) -> Error {
    let line = text.and_then(|t| line_of(t, &format!("\"{name}\"")));
    match line {
        Some(l) => Error::Model(format!("line {l}: {msg}")),
        None => Error::Model(msg),
    }
}

fn v2(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

impl MskModel {
    /// Parses and validates a model document from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| {
            Error::Model(format!("line {}: column {}: {e}", e.line(), e.column()))
        })?;
        Self::build(doc, Some(text))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Loads a bundled model by name, or a model file when `spec` is a path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match bundled(spec) {
            Some(text) => Self::from_json(text),
            None => Self::load(spec),
        }
    }

    pub fn from_doc(doc: ModelDoc) -> Result<Self> {
        Self::build(doc, None)
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            name: self.name.clone(),
            links: self.links.clone(),
            joints: self.joints.clone(),
            muscles: self.muscles.clone(),
            sites: self.sites.clone(),
            gravity: self.gravity,
            root_free: self.root_free,
            contact: self.contact,
            limit_stiffness: self.limit_stiffness,
            limit_damping: self.limit_damping,
            mirror: self.mirror.clone(),
        }
    }

    fn build(doc: ModelDoc, text: Option<&str>) -> Result<Self> {
        let err = |name: &str, msg: String| anchored(text, name, msg);

        let mut link_index = HashMap::new();
        for (i, link) in doc.links.iter().enumerate() {
            if link.name == WORLD {
                return Err(err(&link.name, "link name 'world' is reserved".into()));
            }
            if link_index.insert(link.name.clone(), i).is_some() {
                return Err(err(&link.name, format!("duplicate link '{}'", link.name)));
            }
            let finite = [link.mass, link.inertia, link.length, link.com[0], link.com[1]]
                .iter()
                .all(|v| v.is_finite());
            if !finite || link.mass < 0.0 || link.inertia < 0.0 {
                return Err(err(
                    &link.name,
                    format!("link '{}' needs finite, non-negative mass and inertia", link.name),
                ));
            }
        }
        let total_mass: f64 = doc.links.iter().map(|l| l.mass).sum();
        if doc.links.is_empty() || total_mass <= 0.0 {
            return Err(Error::Model("total mass must be > 0".into()));
        }
        if !(doc.gravity.is_finite() && doc.gravity >= 0.0) {
            return Err(Error::Model("gravity must be finite and >= 0".into()));
        }
        let c = doc.contact;
        if !(c.k_n >= 0.0 && c.c_n >= 0.0 && c.mu >= 0.0 && c.v_slip > 0.0) {
            return Err(Error::Model(
                "contact requires k_n, c_n, mu >= 0 and v_slip > 0".into(),
            ));
        }

        let resolve = |name: &str, allow_world: bool| -> Option<Option<usize>> {
            if name == WORLD {
                allow_world.then_some(None)
            } else {
                link_index.get(name).map(|&i| Some(i))
            }
        };

        let n_links = doc.links.len();
        let mut parent_joint = vec![None; n_links];
        let mut joint_parent = Vec::with_capacity(doc.joints.len());
        let mut joint_child = Vec::with_capacity(doc.joints.len());
        let mut joint_names = HashMap::new();
        for (j, joint) in doc.joints.iter().enumerate() {
            if joint_names.insert(joint.name.clone(), j).is_some() {
                return Err(err(&joint.name, format!("duplicate joint '{}'", joint.name)));
            }
            if !(joint.range_lo < joint.range_hi) {
                return Err(err(
                    &joint.name,
                    format!("joint '{}': range_lo must be < range_hi", joint.name),
                ));
            }
            if !(joint.damping >= 0.0) {
                return Err(err(&joint.name, format!("joint '{}': damping < 0", joint.name)));
            }
            let parent = resolve(&joint.parent_link, !doc.root_free).ok_or_else(|| {
                err(
                    &joint.name,
                    format!("joint '{}': unknown parent link '{}'", joint.name, joint.parent_link),
                )
            })?;
            let child = match resolve(&joint.child_link, false) {
                Some(Some(c)) => c,
                _ => {
                    return Err(err(
                        &joint.name,
                        format!("joint '{}': unknown child link '{}'", joint.name, joint.child_link),
                    ))
                }
            };
            if parent_joint[child].is_some() {
                return Err(err(
                    &joint.name,
                    format!("link '{}' has two parent joints", joint.child_link),
                ));
            }
            parent_joint[child] = Some(j);
            joint_parent.push(parent);
            joint_child.push(child);
        }

        let orphans: Vec<usize> = (0..n_links).filter(|&l| parent_joint[l].is_none()).collect();
        let root_link = if doc.root_free {
            if orphans.len() != 1 {
                return Err(Error::Model(format!(
                    "free-root model needs exactly one link without a parent joint, found {}",
                    orphans.len()
                )));
            }
            Some(orphans[0])
        } else {
            if let Some(&l) = orphans.first() {
                return Err(err(
                    &doc.links[l].name,
                    format!("fixed-base model: link '{}' is not attached to anything", doc.links[l].name),
                ));
            }
            None
        };

        // topological order; also detects cycles
        let mut order = Vec::with_capacity(n_links);
        let mut placed = vec![false; n_links];
        if let Some(r) = root_link {
            order.push(r);
            placed[r] = true;
        }
        loop {
            let mut progressed = false;
            for (j, &child) in joint_child.iter().enumerate() {
                if placed[child] {
                    continue;
                }
                let ready = match joint_parent[j] {
                    None => true,
                    Some(p) => placed[p],
                };
                if ready {
                    order.push(child);
                    placed[child] = true;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        if order.len() != n_links {
            return Err(Error::Model("kinematic tree is not connected or contains a cycle".into()));
        }

        let n_root = if doc.root_free { 3 } else { 0 };
        let n_dof = n_root + doc.joints.len();
        let mut coord_center = vec![None; n_dof];
        if let Some(r) = root_link {
            coord_center[2] = Some(r);
        }
        for (j, &child) in joint_child.iter().enumerate() {
            coord_center[n_root + j] = Some(child);
        }
        let mut link_rot_coords: Vec<Vec<usize>> = vec![Vec::new(); n_links];
        for &l in &order {
            let chain = match parent_joint[l] {
                None => {
                    if doc.root_free {
                        vec![2]
                    } else {
                        Vec::new()
                    }
                }
                Some(j) => {
                    let mut c = match joint_parent[j] {
                        None => Vec::new(),
                        Some(p) => link_rot_coords[p].clone(),
                    };
                    c.push(n_root + j);
                    c
                }
            };
            link_rot_coords[l] = chain;
        }

        let mut warnings = Vec::new();
        let mut muscle_names = HashMap::new();
        let mut via_links = Vec::with_capacity(doc.muscles.len());
        for m in &doc.muscles {
            if muscle_names.insert(m.name.clone(), ()).is_some() {
                return Err(err(&m.name, format!("duplicate muscle '{}'", m.name)));
            }
            if m.path.via_points.len() < 2 {
                return Err(err(&m.name, format!("muscle '{}': tendon path needs >= 2 via points", m.name)));
            }
            if !(m.path.rest_length > 0.0) {
                return Err(err(&m.name, format!("muscle '{}': rest_length must be > 0", m.name)));
            }
            if !(m.f_max > 0.0 && m.l_opt > 0.0 && m.v_max > 0.0) {
                return Err(err(&m.name, format!("muscle '{}': f_max, l_opt, v_max must be > 0", m.name)));
            }
            if !(m.tau_act > 0.0 && m.tau_deact > 0.0) {
                return Err(err(&m.name, format!("muscle '{}': time constants must be > 0", m.name)));
            }
            if !(0.0..=1.0).contains(&m.act) {
                return Err(err(&m.name, format!("muscle '{}': act must lie in [0, 1]", m.name)));
            }
            let mut links = Vec::with_capacity(m.path.via_points.len());
            for vp in &m.path.via_points {
                let l = resolve(&vp.link, !doc.root_free).ok_or_else(|| {
                    err(&m.name, format!("muscle '{}': via point on unknown link '{}'", m.name, vp.link))
                })?;
                links.push(l);
            }
            via_links.push(links);
        }

        let mut site_links = Vec::with_capacity(doc.sites.len());
        let mut roots = Vec::new();
        let mut site_names = HashMap::new();
        for (i, s) in doc.sites.iter().enumerate() {
            if site_names.insert(s.name.clone(), ()).is_some() {
                return Err(err(&s.name, format!("duplicate site '{}'", s.name)));
            }
            let l = resolve(&s.link, !doc.root_free).ok_or_else(|| {
                err(&s.name, format!("site '{}': unknown link '{}'", s.name, s.link))
            })?;
            site_links.push(l);
            if s.is_root {
                roots.push(i);
            }
        }
        if roots.len() != 1 {
            return Err(Error::Model(format!(
                "exactly one site must have is_root = true, found {}",
                roots.len()
            )));
        }

        let mut probes = Vec::new();
        for (l, link) in doc.links.iter().enumerate() {
            for p in &link.contact_points {
                probes.push((l, v2(*p)));
            }
        }

        if let Some(mirror) = &doc.mirror {
            for [a, b] in &mirror.joints {
                if !joint_names.contains_key(a) || !joint_names.contains_key(b) {
                    return Err(Error::Model(format!("mirror pair ({a}, {b}) names an unknown joint")));
                }
            }
            for [a, b] in &mirror.muscles {
                if !muscle_names.contains_key(a) || !muscle_names.contains_key(b) {
                    return Err(Error::Model(format!("mirror pair ({a}, {b}) names an unknown muscle")));
                }
            }
        }

        let model = MskModel {
            name: doc.name,
            links: doc.links,
            joints: doc.joints,
            muscles: doc.muscles,
            sites: doc.sites,
            root_free: doc.root_free,
            gravity: doc.gravity,
            contact: doc.contact,
            limit_stiffness: doc.limit_stiffness,
            limit_damping: doc.limit_damping,
            mirror: doc.mirror,
            topo: Topology {
                order,
                parent_joint,
                joint_parent,
                link_rot_coords,
                coord_center,
                via_links,
                site_links,
                root_site: roots[0],
                probes,
            },
            warnings: Vec::new(),
        };

        // degenerate geometry at the neutral pose is a warning, not an error
        let q0 = model.neutral_q();
        for (m, len) in model.muscles.iter().zip(tendon_length(&model, &q0)) {
            if len <= 1e-12 {
                warnings.push(format!("muscle '{}': zero tendon length at the neutral pose", m.name));
            }
        }
        Ok(MskModel { warnings, ..model })
    }

    pub fn n_root(&self) -> usize {
        if self.root_free {
            3
        } else {
            0
        }
    }

    /// Total number of generalized coordinates.
    pub fn n_dof(&self) -> usize {
        self.n_root() + self.joints.len()
    }

    pub fn n_muscles(&self) -> usize {
        self.muscles.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_probes(&self) -> usize {
        self.topo.probes.len()
    }

    pub fn root_site(&self) -> usize {
        self.topo.root_site
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Index into the generalized coordinate vector of joint `j`.
    pub fn joint_coord(&self, j: usize) -> usize {
        self.n_root() + j
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.name == name)
    }

    pub fn site_index(&self, name: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.name == name)
    }

    /// All-zero configuration; free-root models get zero root pose too.
    pub fn neutral_q(&self) -> Vec<f64> {
        vec![0.0; self.n_dof()]
    }

    /// Contact probes as (link index, point in link frame).
    pub fn probes(&self) -> &[(usize, Vec2)] {
        &self.topo.probes
    }

    /// Swaps left/right coordinates of a declared symmetric model.
    pub fn mirror_q(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mirror = self
            .mirror
            .as_ref()
            .ok_or_else(|| Error::Input(format!("model '{}' declares no mirror pairs", self.name)))?;
        let mut out = q.to_vec();
        for [a, b] in &mirror.joints {
            let ia = self.joint_coord(self.joint_index(a).expect("validated"));
            let ib = self.joint_coord(self.joint_index(b).expect("validated"));
            out.swap(ia, ib);
        }
        Ok(out)
    }

    /// Muscle index pairs (left, right) from the mirror declaration.
    pub fn mirror_muscle_pairs(&self) -> Vec<(usize, usize)> {
        self.mirror
            .iter()
            .flat_map(|m| m.muscles.iter())
            .filter_map(|[a, b]| Some((self.muscle_index(a)?, self.muscle_index(b)?)))
            .collect()
    }
}

const ARM2_JSON: &str = include_str!("../../assets/arm2.json");
const WALKER7_JSON: &str = include_str!("../../assets/walker7.json");

/// JSON text of a bundled model.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "arm2" => Some(ARM2_JSON),
        "walker7" => Some(WALKER7_JSON),
        _ => None,
    }
}

pub fn bundled_names() -> &'static [&'static str] {
    &["arm2", "walker7"]
}
