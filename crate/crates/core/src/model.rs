//! Declarative robot description.
//!
//! A model file is UTF-8 JSON (`schema: 1`). Coordinates live on three levels:
//!
//! * motor coordinates `q^m`, one per actuator;
//! * dVRK coordinates `q^d`, obtained from `q^m` through named square
//!   coupling blocks (`q^d = A^d_m q^m` on the block's motors, identity elsewhere);
//! * model coordinates `q`, each an affine expression over dVRK and motor
//!   coordinates.
//!
//! The complete coordinate vector is `q^c = [q; q^m]`, an affine function
//! `q^c = E q^m + e0` with constant Jacobian `E`. Joints reference complete
//! coordinates by name through their own affine `coordinate` expression.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regressor::ParameterLayout;

pub const SCHEMA_VERSION: u32 = 1;

/// Relaxed spring length used when `l_r` is omitted, in metres.
pub const DEFAULT_SPRING_RELAXED_LENGTH: f64 = 0.0613;

/// Half-width of the COM box assumed for links without a configured hull.
pub const DEFAULT_HULL_HALF_WIDTH: f64 = 0.5;

pub(crate) mod angle {
    use serde::{Deserialize, Deserializer};
    use std::f64::consts::PI;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    /// Parses `"90deg"`, `"-0.5 rad"` or a bare number (radians).
    pub fn parse(text: &str) -> Result<f64, String> {
        let t = text.trim();
        let (num, scale) = if let Some(x) = t.strip_suffix("deg") {
            (x, PI / 180.0)
        } else if let Some(x) = t.strip_suffix("rad") {
            (x, 1.0)
        } else {
            (t, 1.0)
        };
        num.trim()
            .parse::<f64>()
            .map(|v| v * scale)
            .map_err(|_| format!("cannot parse angle `{text}`"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(s) => parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn default_relaxed_length() -> f64 {
    DEFAULT_SPRING_RELAXED_LENGTH
}

fn default_cable_degree() -> usize {
    7
}

/// Affine expression `sum(coef * symbol) + offset`.
#[derive(Serialize, Deserialize, Clone, Debug, Default, PartialEq)]
pub struct Affine {
    #[serde(default)]
    pub terms: BTreeMap<String, f64>,
    #[serde(default, deserialize_with = "angle::deserialize", skip_serializing_if = "is_zero")]
    pub offset: f64,
}

impl Affine {
    pub fn single(symbol: &str, coef: f64) -> Self {
        Affine {
            terms: [(symbol.to_string(), coef)].into_iter().collect(),
            offset: 0.0,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlockSpec {
    pub name: String,
    pub motors: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CoordinateSpec {
    pub name: String,
    #[serde(flatten)]
    pub expr: Affine,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Zero-DOF geometric joint (e.g. PSM link 2').
    Fixed,
}

/// Modified (proximal) DH constants. The joint variable is added to `theta`
/// for revolute joints and to `d` for prismatic joints.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DhSpec {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub a_prev: f64,
    #[serde(default, deserialize_with = "angle::deserialize", skip_serializing_if = "is_zero")]
    pub alpha_prev: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub d: f64,
    #[serde(default, deserialize_with = "angle::deserialize", skip_serializing_if = "is_zero")]
    pub theta: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// `"base"`, the name of another joint, or `null` for effect-only sites
    /// (motor bodies, relative friction) that are not part of the kinematic tree.
    pub predecessor: Option<String>,
    #[serde(default)]
    pub dh: DhSpec,
    #[serde(default)]
    pub coordinate: Affine,
    #[serde(default, skip_serializing_if = "is_false")]
    pub link_inertia: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub motor_inertia: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub friction: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub spring: bool,
    /// Motor coordinate driven by the motor-inertia parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motor: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub exclude_from_trajectory_objective: bool,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpringSpec {
    Extension {
        joint: String,
        h_s: f64,
        r_s: f64,
        #[serde(deserialize_with = "angle::deserialize")]
        q_o: f64,
        #[serde(default = "default_relaxed_length")]
        l_r: f64,
    },
    Torsional {
        joint: String,
    },
}

impl SpringSpec {
    pub fn joint(&self) -> &str {
        match self {
            SpringSpec::Extension { joint, .. } | SpringSpec::Torsional { joint } => joint,
        }
    }
}

/// Polynomial cable torque `sum(c_i x^i)` on a joint coordinate, N·m.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CableSpec {
    pub joint: String,
    #[serde(default = "default_cable_degree")]
    pub degree: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub coordinate: String,
    #[serde(deserialize_with = "angle::deserialize")]
    pub q_min: f64,
    #[serde(deserialize_with = "angle::deserialize")]
    pub q_max: f64,
    #[serde(deserialize_with = "angle::deserialize")]
    pub dq_min: f64,
    #[serde(deserialize_with = "angle::deserialize")]
    pub dq_max: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    /// Frame (joint) name for workspace boxes, link name for COM hulls.
    pub frame: String,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

/// On-disk model description.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: u32,
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub motors: Vec<String>,
    pub dvrk: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coupling_blocks: Vec<CouplingBlockSpec>,
    pub coordinates: Vec<CoordinateSpec>,
    pub basis: Vec<String>,
    pub joints: Vec<JointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub springs: Vec<SpringSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cables: Vec<CableSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joint_limits: Vec<LimitSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workspace: Vec<BoxSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub com_hulls: Vec<BoxSpec>,
}

/// Constant affine maps among motor, dVRK, and complete coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMap {
    /// `d q^c / d q^m`, complete × motor.
    pub e: DMatrix<f64>,
    pub e0: DVector<f64>,
    pub blocks: Vec<CouplingBlock>,
    /// Indices into the complete coordinates that form `q^b`.
    pub basis_selector: Vec<usize>,
    /// Inverse of the basis rows of `E`: `q^m = B (q^b − e0_b)`.
    pub basis_to_motor: DMatrix<f64>,
    pub coordinate_names: Vec<String>,
    pub motor_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub name: String,
    pub motors: Vec<usize>,
    /// `A^d_m`: maps the block's motor coordinates to dVRK coordinates.
    pub matrix: DMatrix<f64>,
}

impl CouplingMap {
    pub fn motor_count(&self) -> usize {
        self.e.ncols()
    }

    pub fn complete_count(&self) -> usize {
        self.e.nrows()
    }

    /// Full `A^d_m` (motor × motor), identity outside the named blocks.
    pub fn dvrk_matrix(&self) -> DMatrix<f64> {
        let n = self.motor_count();
        let mut a = DMatrix::identity(n, n);
        for block in &self.blocks {
            for (r, &mr) in block.motors.iter().enumerate() {
                for (c, &mc) in block.motors.iter().enumerate() {
                    a[(mr, mc)] = block.matrix[(r, c)];
                }
            }
        }
        a
    }

    pub fn complete(&self, q_m: &DVector<f64>) -> DVector<f64> {
        &self.e * q_m + &self.e0
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.coordinate_names.iter().position(|n| n == name)
    }

    pub fn basis(&self, q_m: &DVector<f64>) -> DVector<f64> {
        let q_c = self.complete(q_m);
        DVector::from_iterator(self.basis_selector.len(), self.basis_selector.iter().map(|&i| q_c[i]))
    }

    pub fn motor_from_basis(&self, q_b: &DVector<f64>) -> DVector<f64> {
        let e0_b = DVector::from_iterator(
            self.basis_selector.len(),
            self.basis_selector.iter().map(|&i| self.e0[i]),
        );
        &self.basis_to_motor * (q_b - e0_b)
    }

    /// Maps basis velocities or accelerations to motor ones.
    pub fn motor_rate_from_basis(&self, dq_b: &DVector<f64>) -> DVector<f64> {
        &self.basis_to_motor * dq_b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parent {
    Base,
    Joint(usize),
    /// Effect-only site, not part of the kinematic tree.
    Detached,
}

/// A joint with its coordinate expression resolved against the coupling map.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedJoint {
    pub name: String,
    pub kind: JointKind,
    pub parent: Parent,
    pub dh: DhSpec,
    /// Coefficients of the joint variable over complete coordinates.
    pub complete_row: DVector<f64>,
    /// Coefficients of the joint variable over motor coordinates (Jacobian row).
    pub motor_row: DVector<f64>,
    /// Constant of the coordinate expression (the DH-style offset).
    pub offset: f64,
    /// `offset + complete_row · e0`.
    pub motor_offset: f64,
    pub link_inertia: bool,
    pub motor_inertia: bool,
    pub friction: bool,
    pub spring: bool,
    pub motor: Option<usize>,
    pub exclude_from_trajectory_objective: bool,
}

impl ResolvedJoint {
    pub fn in_tree(&self) -> bool {
        self.parent != Parent::Detached
    }

    /// Joint variable (angle or displacement) at motor coordinates `q_m`.
    pub fn value(&self, q_m: &DVector<f64>) -> f64 {
        self.motor_row.dot(q_m) + self.motor_offset
    }

    /// Joint coordinate without its constant offset, as used by springs and cables.
    pub fn coordinate_value(&self, q_m: &DVector<f64>) -> f64 {
        self.value(q_m) - self.offset
    }

    pub fn rate(&self, dq_m: &DVector<f64>) -> f64 {
        self.motor_row.dot(dq_m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedLimit {
    pub coordinate: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub dq_min: f64,
    pub dq_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedBox {
    pub joint: usize,
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpringKind {
    Extension { h_s: f64, r_s: f64, q_o: f64, l_r: f64 },
    Torsional,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedSpring {
    pub joint: usize,
    pub kind: SpringKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedCable {
    pub joint: usize,
    pub coefficients: Vec<f64>,
}

/// Validated, immutable robot model.
#[derive(Clone, Debug)]
pub struct RobotModel {
    file: ModelFile,
    coupling: CouplingMap,
    joints: Vec<ResolvedJoint>,
    tree_order: Vec<usize>,
    layout: Arc<ParameterLayout>,
    limits: Vec<ResolvedLimit>,
    workspace: Vec<ResolvedBox>,
    hulls: Vec<Option<ResolvedBox>>,
    springs: Vec<ResolvedSpring>,
    cables: Vec<ResolvedCable>,
    gravity: Vector3<f64>,
}

impl PartialEq for RobotModel {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

/// Loads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RobotModel::from_json(&text)
}

impl RobotModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(file)
    }

    /// Canonical JSON form; reloading it yields an identical model.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("model file serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn new(file: ModelFile) -> Result<Self> {
        if file.schema != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", file.schema),
            ));
        }
        if file.joints.is_empty() {
            return Err(Error::validation("joints", "joint list is empty"));
        }
        if file.motors.is_empty() {
            return Err(Error::validation("motors", "motor list is empty"));
        }
        if file.dvrk.len() != file.motors.len() {
            return Err(Error::validation(
                "dvrk",
                format!(
                    "expected {} dVRK coordinate names, got {}",
                    file.motors.len(),
                    file.dvrk.len()
                ),
            ));
        }
        if !file.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::validation("gravity", "gravity must be finite"));
        }

        let coupling = build_coupling(&file)?;
        let (joints, tree_order) = resolve_joints(&file, &coupling)?;
        let joint_index: HashMap<&str, usize> = joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.as_str(), i))
            .collect();

        let springs = resolve_springs(&file, &joints, &joint_index)?;
        let cables = resolve_cables(&file, &joint_index)?;
        let limits = resolve_limits(&file, &coupling)?;

        let mut workspace = Vec::new();
        for (i, b) in file.workspace.iter().enumerate() {
            let path = format!("workspace[{i}]");
            let joint = *joint_index
                .get(b.frame.as_str())
                .ok_or_else(|| Error::validation(&path, format!("unknown frame `{}`", b.frame)))?;
            if !joints[joint].in_tree() {
                return Err(Error::validation(&path, "workspace frame must be in the kinematic tree"));
            }
            workspace.push(resolve_box(&path, joint, b)?);
        }

        let mut hulls = vec![None; joints.len()];
        for (i, b) in file.com_hulls.iter().enumerate() {
            let path = format!("com_hulls[{i}]");
            let joint = *joint_index
                .get(b.frame.as_str())
                .ok_or_else(|| Error::validation(&path, format!("unknown link `{}`", b.frame)))?;
            if !joints[joint].link_inertia {
                return Err(Error::validation(&path, "COM hull given for a link without inertia"));
            }
            let resolved = resolve_box(&path, joint, b)?;
            if (0..3).any(|k| resolved.lower[k] >= resolved.upper[k]) {
                return Err(Error::validation(&path, "hull lower bound must be below upper bound"));
            }
            hulls[joint] = Some(resolved);
        }
        for (j, joint) in joints.iter().enumerate() {
            if joint.link_inertia && hulls[j].is_none() {
                let h = Vector3::repeat(DEFAULT_HULL_HALF_WIDTH);
                hulls[j] = Some(ResolvedBox {
                    joint: j,
                    lower: -h,
                    upper: h,
                });
            }
        }

        let layout = Arc::new(ParameterLayout::from_joints(&joints));
        let gravity = Vector3::from(file.gravity);
        Ok(RobotModel {
            file,
            coupling,
            joints,
            tree_order,
            layout,
            limits,
            workspace,
            hulls,
            springs,
            cables,
            gravity,
        })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn file(&self) -> &ModelFile {
        &self.file
    }

    pub fn coupling(&self) -> &CouplingMap {
        &self.coupling
    }

    pub fn joints(&self) -> &[ResolvedJoint] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Tree joints in an order where every parent precedes its children.
    pub fn tree_order(&self) -> &[usize] {
        &self.tree_order
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.len()
    }

    pub fn motor_count(&self) -> usize {
        self.coupling.motor_count()
    }

    pub fn motor_names(&self) -> &[String] {
        &self.coupling.motor_names
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn limits(&self) -> &[ResolvedLimit] {
        &self.limits
    }

    pub fn limit_for(&self, coordinate: usize) -> Option<&ResolvedLimit> {
        self.limits.iter().find(|l| l.coordinate == coordinate)
    }

    pub fn workspace(&self) -> &[ResolvedBox] {
        &self.workspace
    }

    pub fn com_hull(&self, joint: usize) -> Option<&ResolvedBox> {
        self.hulls[joint].as_ref()
    }

    pub fn springs(&self) -> &[ResolvedSpring] {
        &self.springs
    }

    pub fn cables(&self) -> &[ResolvedCable] {
        &self.cables
    }

    /// Returns a copy with a different gravity vector.
    pub fn with_gravity(&self, gravity: [f64; 3]) -> Result<Self> {
        let mut file = self.file.clone();
        file.gravity = gravity;
        Self::new(file)
    }

    /// Model used for excitation design: links flagged
    /// `exclude_from_trajectory_objective` lose their inertial parameters.
    pub fn for_trajectory_objective(&self) -> Result<Self> {
        let mut file = self.file.clone();
        let mut dropped = Vec::new();
        for joint in &mut file.joints {
            if joint.exclude_from_trajectory_objective && joint.link_inertia {
                joint.link_inertia = false;
                dropped.push(joint.name.clone());
            }
        }
        file.com_hulls.retain(|h| !dropped.contains(&h.frame));
        Self::new(file)
    }
}

fn resolve_box(path: &str, joint: usize, b: &BoxSpec) -> Result<ResolvedBox> {
    let lower = Vector3::from(b.lower);
    let upper = Vector3::from(b.upper);
    if !lower.iter().chain(upper.iter()).all(|v| v.is_finite()) {
        return Err(Error::validation(path, "box bounds must be finite"));
    }
    if (0..3).any(|k| lower[k] > upper[k]) {
        return Err(Error::validation(path, "box lower bound exceeds upper bound"));
    }
    Ok(ResolvedBox { joint, lower, upper })
}

fn check_unique<'a>(path: &str, names: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, n) in names.enumerate() {
        if n.is_empty() {
            return Err(Error::validation(format!("{path}[{i}]"), "empty name"));
        }
        if seen.insert(n.as_str(), i).is_some() {
            return Err(Error::validation(format!("{path}[{i}]"), format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn build_coupling(file: &ModelFile) -> Result<CouplingMap> {
    let n_m = file.motors.len();
    check_unique("motors", file.motors.iter())?;
    check_unique("dvrk", file.dvrk.iter())?;
    check_unique("coordinates", file.coordinates.iter().map(|c| &c.name))?;
    for (i, c) in file.coordinates.iter().enumerate() {
        if file.motors.contains(&c.name) {
            return Err(Error::validation(
                format!("coordinates[{i}].name"),
                format!("`{}` clashes with a motor name", c.name),
            ));
        }
    }

    let motor_idx: HashMap<&str, usize> =
        file.motors.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut blocks = Vec::new();
    let mut owned = vec![false; n_m];
    for (b, spec) in file.coupling_blocks.iter().enumerate() {
        let path = format!("coupling_blocks[{b}]");
        let k = spec.motors.len();
        if k == 0 {
            return Err(Error::validation(&path, "block lists no motors"));
        }
        let mut motors = Vec::with_capacity(k);
        for m in &spec.motors {
            let idx = *motor_idx
                .get(m.as_str())
                .ok_or_else(|| Error::validation(format!("{path}.motors"), format!("unknown motor `{m}`")))?;
            if owned[idx] {
                return Err(Error::validation(
                    format!("{path}.motors"),
                    format!("motor `{m}` appears in two blocks"),
                ));
            }
            owned[idx] = true;
            motors.push(idx);
        }
        if spec.matrix.len() != k || spec.matrix.iter().any(|r| r.len() != k) {
            return Err(Error::validation(
                format!("{path}.matrix"),
                format!("matrix must be {k}x{k}"),
            ));
        }
        let matrix = DMatrix::from_fn(k, k, |r, c| spec.matrix[r][c]);
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!("{path}.matrix"), "non-finite entry"));
        }
        blocks.push(CouplingBlock {
            name: spec.name.clone(),
            motors,
            matrix,
        });
    }

    let mut map = CouplingMap {
        e: DMatrix::zeros(0, n_m),
        e0: DVector::zeros(0),
        blocks,
        basis_selector: Vec::new(),
        basis_to_motor: DMatrix::zeros(0, 0),
        coordinate_names: Vec::new(),
        motor_names: file.motors.clone(),
    };
    // Singular blocks are rejected before anything is built on top of them.
    block_conditions(&map)?;
    let dvrk = map.dvrk_matrix();

    let n_q = file.coordinates.len();
    let n_c = n_q + n_m;
    let mut e = DMatrix::zeros(n_c, n_m);
    let mut e0 = DVector::zeros(n_c);
    for (i, c) in file.coordinates.iter().enumerate() {
        for (sym, &coef) in &c.expr.terms {
            if !coef.is_finite() {
                return Err(Error::validation(
                    format!("coordinates[{i}].terms.{sym}"),
                    "non-finite coefficient",
                ));
            }
            if let Some(d) = file.dvrk.iter().position(|n| n == sym) {
                let row = dvrk.row(d) * coef;
                let mut target = e.row_mut(i);
                target += row;
            } else if let Some(&m) = motor_idx.get(sym.as_str()) {
                e[(i, m)] += coef;
            } else {
                return Err(Error::validation(
                    format!("coordinates[{i}].terms"),
                    format!("unknown symbol `{sym}` (expected a dVRK or motor coordinate)"),
                ));
            }
        }
        e0[i] = c.expr.offset;
    }
    for m in 0..n_m {
        e[(n_q + m, m)] = 1.0;
    }

    let mut names: Vec<String> = file.coordinates.iter().map(|c| c.name.clone()).collect();
    names.extend(file.motors.iter().cloned());

    let mut basis = Vec::with_capacity(file.basis.len());
    for (i, b) in file.basis.iter().enumerate() {
        let idx = names
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| Error::validation(format!("basis[{i}]"), format!("unknown coordinate `{b}`")))?;
        basis.push(idx);
    }
    if basis.len() != n_m {
        return Err(Error::validation(
            "basis",
            format!("expected {n_m} basis coordinates (one per motor), got {}", basis.len()),
        ));
    }
    let e_b = DMatrix::from_fn(n_m, n_m, |r, c| e[(basis[r], c)]);
    if !condition_number(&e_b).is_finite() {
        return Err(Error::validation("basis", "basis coordinates do not determine the motor coordinates"));
    }
    let basis_to_motor = e_b.try_inverse().expect("nonsingular basis block");

    map.e = e;
    map.e0 = e0;
    map.basis_selector = basis;
    map.basis_to_motor = basis_to_motor;
    map.coordinate_names = names;
    Ok(map)
}

fn resolve_joints(file: &ModelFile, coupling: &CouplingMap) -> Result<(Vec<ResolvedJoint>, Vec<usize>)> {
    check_unique("joints", file.joints.iter().map(|j| &j.name))?;
    let names: HashMap<&str, usize> = file
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| (j.name.as_str(), i))
        .collect();
    if names.contains_key("base") {
        return Err(Error::validation("joints", "`base` is reserved"));
    }

    let n_c = coupling.complete_count();
    let mut joints = Vec::with_capacity(file.joints.len());
    for (i, spec) in file.joints.iter().enumerate() {
        let path = format!("joints[{i}]");
        let parent = match spec.predecessor.as_deref() {
            None => Parent::Detached,
            Some("base") => Parent::Base,
            Some(p) => Parent::Joint(*names.get(p).ok_or_else(|| {
                Error::validation(format!("{path}.predecessor"), format!("unknown joint `{p}`"))
            })?),
        };
        if parent == Parent::Joint(i) {
            return Err(Error::validation(format!("{path}.predecessor"), "joint is its own predecessor"));
        }

        let mut complete_row = DVector::zeros(n_c);
        for (sym, &coef) in &spec.coordinate.terms {
            let idx = coupling.coordinate_index(sym).ok_or_else(|| {
                Error::validation(
                    format!("{path}.coordinate.terms"),
                    format!("unknown complete coordinate `{sym}`"),
                )
            })?;
            if !coef.is_finite() {
                return Err(Error::validation(format!("{path}.coordinate.terms.{sym}"), "non-finite coefficient"));
            }
            complete_row[idx] += coef;
        }
        let has_terms = complete_row.iter().any(|&c| c != 0.0);
        match spec.kind {
            JointKind::Fixed if has_terms => {
                return Err(Error::validation(
                    format!("{path}.coordinate"),
                    "fixed joints carry no coordinate",
                ))
            }
            JointKind::Fixed if parent == Parent::Detached => {
                return Err(Error::validation(format!("{path}.kind"), "detached sites cannot be fixed"))
            }
            JointKind::Revolute | JointKind::Prismatic if !has_terms => {
                return Err(Error::validation(
                    format!("{path}.coordinate"),
                    "moving joint needs a coordinate expression",
                ))
            }
            _ => {}
        }
        if spec.kind == JointKind::Fixed
            && (spec.friction || spec.spring || spec.motor_inertia)
        {
            return Err(Error::validation(&path, "fixed joints cannot carry friction, spring or motor inertia"));
        }
        if parent == Parent::Detached && spec.link_inertia {
            return Err(Error::validation(
                format!("{path}.link_inertia"),
                "detached sites have no link to carry inertia",
            ));
        }
        let motor = match (&spec.motor, spec.motor_inertia) {
            (Some(m), _) => Some(coupling.motor_names.iter().position(|n| n == m).ok_or_else(|| {
                Error::validation(format!("{path}.motor"), format!("unknown motor `{m}`"))
            })?),
            (None, true) => {
                return Err(Error::validation(
                    format!("{path}.motor"),
                    "motor inertia requires the driven motor coordinate",
                ))
            }
            (None, false) => None,
        };
        if !spec.coordinate.offset.is_finite()
            || ![spec.dh.a_prev, spec.dh.alpha_prev, spec.dh.d, spec.dh.theta]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::validation(format!("{path}.dh"), "non-finite DH constant"));
        }

        let motor_row = coupling.e.tr_mul(&complete_row);
        let motor_offset = spec.coordinate.offset + complete_row.dot(&coupling.e0);
        joints.push(ResolvedJoint {
            name: spec.name.clone(),
            kind: spec.kind,
            parent,
            dh: spec.dh,
            complete_row,
            motor_row,
            offset: spec.coordinate.offset,
            motor_offset,
            link_inertia: spec.link_inertia,
            motor_inertia: spec.motor_inertia,
            friction: spec.friction,
            spring: spec.spring,
            motor,
            exclude_from_trajectory_objective: spec.exclude_from_trajectory_objective,
        });
    }

    // Topological order; also rejects cycles.
    let n = joints.len();
    let mut order = Vec::new();
    let mut state = vec![0u8; n];
    for start in 0..n {
        if !joints[start].in_tree() || state[start] == 2 {
            continue;
        }
        let mut chain = Vec::new();
        let mut cur = start;
        loop {
            if state[cur] == 2 {
                break;
            }
            if state[cur] == 1 {
                return Err(Error::validation(
                    format!("joints[{cur}].predecessor"),
                    "predecessor graph contains a cycle",
                ));
            }
            state[cur] = 1;
            chain.push(cur);
            match joints[cur].parent {
                Parent::Joint(p) => {
                    if !joints[p].in_tree() {
                        return Err(Error::validation(
                            format!("joints[{cur}].predecessor"),
                            "predecessor is a detached site",
                        ));
                    }
                    cur = p;
                }
                _ => break,
            }
        }
        for &j in chain.iter().rev() {
            state[j] = 2;
            order.push(j);
        }
    }
    Ok((joints, order))
}

fn resolve_springs(
    file: &ModelFile,
    joints: &[ResolvedJoint],
    index: &HashMap<&str, usize>,
) -> Result<Vec<ResolvedSpring>> {
    let mut springs = Vec::new();
    let mut seen = vec![false; joints.len()];
    for (i, s) in file.springs.iter().enumerate() {
        let path = format!("springs[{i}]");
        let joint = *index
            .get(s.joint())
            .ok_or_else(|| Error::validation(format!("{path}.joint"), format!("unknown joint `{}`", s.joint())))?;
        if !joints[joint].spring {
            return Err(Error::validation(format!("{path}.joint"), "joint is not flagged with a spring"));
        }
        if seen[joint] {
            return Err(Error::validation(format!("{path}.joint"), "joint already has a spring"));
        }
        seen[joint] = true;
        let kind = match *s {
            SpringSpec::Extension { h_s, r_s, q_o, l_r, .. } => {
                for (name, v) in [("h_s", h_s), ("r_s", r_s), ("l_r", l_r)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::validation(format!("{path}.{name}"), "must be positive"));
                    }
                }
                if !q_o.is_finite() {
                    return Err(Error::validation(format!("{path}.q_o"), "must be finite"));
                }
                SpringKind::Extension { h_s, r_s, q_o, l_r }
            }
            SpringSpec::Torsional { .. } => SpringKind::Torsional,
        };
        springs.push(ResolvedSpring { joint, kind });
    }
    for (j, joint) in joints.iter().enumerate() {
        if joint.spring && !seen[j] {
            return Err(Error::validation(
                format!("joints[{j}].spring"),
                "spring flag set but no spring references this joint",
            ));
        }
    }
    Ok(springs)
}

fn resolve_cables(file: &ModelFile, index: &HashMap<&str, usize>) -> Result<Vec<ResolvedCable>> {
    let mut cables = Vec::new();
    for (i, c) in file.cables.iter().enumerate() {
        let path = format!("cables[{i}]");
        let joint = *index
            .get(c.joint.as_str())
            .ok_or_else(|| Error::validation(format!("{path}.joint"), format!("unknown joint `{}`", c.joint)))?;
        if c.coefficients.len() != c.degree + 1 {
            return Err(Error::validation(
                format!("{path}.coefficients"),
                format!("expected {} coefficients for degree {}", c.degree + 1, c.degree),
            ));
        }
        if !c.coefficients.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!("{path}.coefficients"), "non-finite coefficient"));
        }
        cables.push(ResolvedCable {
            joint,
            coefficients: c.coefficients.clone(),
        });
    }
    Ok(cables)
}

fn resolve_limits(file: &ModelFile, coupling: &CouplingMap) -> Result<Vec<ResolvedLimit>> {
    let mut limits: Vec<ResolvedLimit> = Vec::new();
    for (i, l) in file.joint_limits.iter().enumerate() {
        let path = format!("joint_limits[{i}]");
        let coordinate = coupling.coordinate_index(&l.coordinate).ok_or_else(|| {
            Error::validation(format!("{path}.coordinate"), format!("unknown coordinate `{}`", l.coordinate))
        })?;
        if limits.iter().any(|x| x.coordinate == coordinate) {
            return Err(Error::validation(format!("{path}.coordinate"), "duplicate limit"));
        }
        if !(l.q_min < l.q_max) {
            return Err(Error::validation(format!("{path}.q_min"), "q_min must be below q_max"));
        }
        if !(l.dq_min < l.dq_max) {
            return Err(Error::validation(format!("{path}.dq_min"), "dq_min must be below dq_max"));
        }
        limits.push(ResolvedLimit {
            coordinate,
            q_min: l.q_min,
            q_max: l.q_max,
            dq_min: l.dq_min,
            dq_max: l.dq_max,
        });
    }
    Ok(limits)
}

/// Per-block condition numbers of the coupling map.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingReport {
    pub blocks: Vec<(String, f64)>,
    /// Condition number of the full `A^d_m`.
    pub dvrk_condition: f64,
}

impl CouplingReport {
    pub fn ok(&self) -> bool {
        self.blocks.iter().all(|(_, c)| c.is_finite()) && self.dvrk_condition.is_finite()
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= max * 1e-13 || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn block_conditions(map: &CouplingMap) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(map.blocks.len());
    for block in &map.blocks {
        let cond = condition_number(&block.matrix);
        if !cond.is_finite() {
            return Err(Error::SingularCoupling(block.name.clone()));
        }
        out.push((block.name.clone(), cond));
    }
    Ok(out)
}

/// Checks invertibility of each `A^d_m` block and that the motor rows of `E`
/// are the identity.
pub fn validate_coupling(model: &RobotModel) -> Result<CouplingReport> {
    let map = model.coupling();
    let blocks = block_conditions(map)?;
    let n_m = map.motor_count();
    let n_q = map.complete_count() - n_m;
    for m in 0..n_m {
        for c in 0..n_m {
            let expect = if m == c { 1.0 } else { 0.0 };
            if map.e[(n_q + m, c)] != expect {
                return Err(Error::validation(
                    format!("coupling.e[{}]", n_q + m),
                    "motor rows of E must be the identity",
                ));
            }
        }
    }
    let dvrk_condition = condition_number(&map.dvrk_matrix());
    if !dvrk_condition.is_finite() {
        return Err(Error::SingularCoupling("A_dm".into()));
    }
    Ok(CouplingReport {
        blocks,
        dvrk_condition,
    })
}

/// Degrees to radians, for building models in code.
pub fn deg(v: f64) -> f64 {
    v * PI / 180.0
}
