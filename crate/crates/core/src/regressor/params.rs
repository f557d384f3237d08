use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResolvedJoint;

/// Symbol of one standard dynamic parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Lxx,
    Lxy,
    Lxz,
    Lyy,
    Lyz,
    Lzz,
    Lx,
    Ly,
    Lz,
    Mass,
    Fv,
    Fc,
    Fo,
    Im,
    Ks,
}

impl ParamKind {
    pub const INERTIAL: [ParamKind; 10] = [
        ParamKind::Lxx,
        ParamKind::Lxy,
        ParamKind::Lxz,
        ParamKind::Lyy,
        ParamKind::Lyz,
        ParamKind::Lzz,
        ParamKind::Lx,
        ParamKind::Ly,
        ParamKind::Lz,
        ParamKind::Mass,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ParamKind::Lxx => "L_xx",
            ParamKind::Lxy => "L_xy",
            ParamKind::Lxz => "L_xz",
            ParamKind::Lyy => "L_yy",
            ParamKind::Lyz => "L_yz",
            ParamKind::Lzz => "L_zz",
            ParamKind::Lx => "l_x",
            ParamKind::Ly => "l_y",
            ParamKind::Lz => "l_z",
            ParamKind::Mass => "m",
            ParamKind::Fv => "F_v",
            ParamKind::Fc => "F_c",
            ParamKind::Fo => "F_o",
            ParamKind::Im => "I_m",
            ParamKind::Ks => "K_s",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        ParamKind::INERTIAL
            .iter()
            .chain(&[ParamKind::Fv, ParamKind::Fc, ParamKind::Fo, ParamKind::Im, ParamKind::Ks])
            .copied()
            .find(|k| k.symbol() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub joint: usize,
    pub kind: ParamKind,
}

/// Flat ordering of standard parameters: for each joint in model order, the
/// ten inertial entries (if the link carries inertia) followed by `F_v, F_c,
/// F_o`, `I_m` and `K_s` as flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterLayout {
    entries: Vec<ParamEntry>,
    joint_names: Vec<String>,
    link_start: Vec<Option<usize>>,
    index: HashMap<(usize, ParamKind), usize>,
}

impl ParameterLayout {
    pub fn from_joints(joints: &[ResolvedJoint]) -> Self {
        let mut entries = Vec::new();
        let mut link_start = Vec::with_capacity(joints.len());
        for (j, joint) in joints.iter().enumerate() {
            if joint.link_inertia {
                link_start.push(Some(entries.len()));
                entries.extend(ParamKind::INERTIAL.iter().map(|&kind| ParamEntry { joint: j, kind }));
            } else {
                link_start.push(None);
            }
            if joint.friction {
                for kind in [ParamKind::Fv, ParamKind::Fc, ParamKind::Fo] {
                    entries.push(ParamEntry { joint: j, kind });
                }
            }
            if joint.motor_inertia {
                entries.push(ParamEntry { joint: j, kind: ParamKind::Im });
            }
            if joint.spring {
                entries.push(ParamEntry { joint: j, kind: ParamKind::Ks });
            }
        }
        let index = entries.iter().enumerate().map(|(i, e)| ((e.joint, e.kind), i)).collect();
        ParameterLayout {
            entries,
            joint_names: joints.iter().map(|j| j.name.clone()).collect(),
            link_start,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn index_of(&self, joint: usize, kind: ParamKind) -> Option<usize> {
        self.index.get(&(joint, kind)).copied()
    }

    /// Start of the ten-entry inertial block of a link, if present.
    pub fn link_block(&self, joint: usize) -> Option<usize> {
        self.link_start.get(joint).copied().flatten()
    }

    /// Joints that carry link inertia.
    pub fn links(&self) -> impl Iterator<Item = usize> + '_ {
        self.link_start
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.map(|_| j))
    }

    pub fn label(&self, i: usize) -> String {
        let e = self.entries[i];
        format!("{}[{}]", e.kind.symbol(), self.joint_names[e.joint])
    }
}

/// Inertial parameters of one link in the frame of its joint: mass, first
/// moment `l = m r` and inertia `L` about the frame origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycentricInertia {
    pub mass: f64,
    pub first_moment: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

/// Mass, centre of mass and inertia about the centre of mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia_com: Matrix3<f64>,
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl BarycentricInertia {
    pub fn from_slice(s: &[f64]) -> Self {
        BarycentricInertia {
            mass: s[9],
            first_moment: Vector3::new(s[6], s[7], s[8]),
            inertia: Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        let l = &self.inertia;
        let f = &self.first_moment;
        [
            l[(0, 0)],
            l[(0, 1)],
            l[(0, 2)],
            l[(1, 1)],
            l[(1, 2)],
            l[(2, 2)],
            f.x,
            f.y,
            f.z,
            self.mass,
        ]
    }

    /// `l = m r`, `L = I + m S(r)ᵀ S(r)`.
    pub fn from_standard(s: &StandardInertia) -> Self {
        let sr = skew(&s.com);
        BarycentricInertia {
            mass: s.mass,
            first_moment: s.com * s.mass,
            inertia: s.inertia_com + sr.transpose() * sr * s.mass,
        }
    }

    /// Inverse of [`from_standard`](Self::from_standard); `None` below `m_floor`.
    pub fn to_standard(&self, m_floor: f64) -> Option<StandardInertia> {
        if !(self.mass >= m_floor) {
            return None;
        }
        let com = self.first_moment / self.mass;
        let sr = skew(&com);
        Some(StandardInertia {
            mass: self.mass,
            com,
            inertia_com: self.inertia - sr.transpose() * sr * self.mass,
        })
    }

    /// Pseudo-inertia `[½tr(L)·1 − L, l; lᵀ, m]`.
    pub fn pseudo_inertia(&self) -> Matrix4<f64> {
        let sigma = self.inertia * -1.0 + Matrix3::identity() * (0.5 * self.inertia.trace());
        let mut d = Matrix4::zeros();
        d.fixed_view_mut::<3, 3>(0, 0).copy_from(&sigma);
        d.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.first_moment);
        d.fixed_view_mut::<1, 3>(3, 0).copy_from(&self.first_moment.transpose());
        d[(3, 3)] = self.mass;
        d
    }
}

/// Standard dynamic parameters in [`ParameterLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    layout: Arc<ParameterLayout>,
    pub values: DVector<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<ParameterLayout>) -> Self {
        let n = layout.len();
        ParameterVector {
            layout,
            values: DVector::zeros(n),
        }
    }

    pub fn from_values(layout: Arc<ParameterLayout>, values: DVector<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParameterVector { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, joint: usize, kind: ParamKind) -> Option<f64> {
        self.layout.index_of(joint, kind).map(|i| self.values[i])
    }

    /// Sets a parameter; returns false if the layout has no such entry.
    pub fn set(&mut self, joint: usize, kind: ParamKind, value: f64) -> bool {
        match self.layout.index_of(joint, kind) {
            Some(i) => {
                self.values[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn inertial(&self, joint: usize) -> Option<BarycentricInertia> {
        self.layout
            .link_block(joint)
            .map(|s| BarycentricInertia::from_slice(&self.values.as_slice()[s..s + 10]))
    }

    pub fn set_inertial(&mut self, joint: usize, b: &BarycentricInertia) -> bool {
        match self.layout.link_block(joint) {
            Some(s) => {
                self.values.as_mut_slice()[s..s + 10].copy_from_slice(&b.to_array());
                true
            }
            None => false,
        }
    }
}

/// One named parameter value as written to parameter files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub joint: String,
    pub symbol: String,
    pub value: f64,
}

impl ParameterVector {
    pub fn to_records(&self) -> Vec<ParameterRecord> {
        self.layout
            .entries()
            .iter()
            .zip(self.values.iter())
            .map(|(e, &value)| ParameterRecord {
                joint: self.layout.joint_names()[e.joint].clone(),
                symbol: e.kind.symbol().to_string(),
                value,
            })
            .collect()
    }

    /// Rebuilds a vector from records; every layout entry must appear once.
    pub fn from_records(layout: Arc<ParameterLayout>, records: &[ParameterRecord]) -> Result<Self> {
        let mut v = ParameterVector::zeros(layout.clone());
        let mut seen = vec![false; layout.len()];
        for (i, r) in records.iter().enumerate() {
            let path = format!("parameters[{i}]");
            let kind = ParamKind::from_symbol(&r.symbol)
                .ok_or_else(|| Error::validation(&path, format!("unknown symbol `{}`", r.symbol)))?;
            let joint = layout
                .joint_names()
                .iter()
                .position(|n| *n == r.joint)
                .ok_or_else(|| Error::validation(&path, format!("unknown joint `{}`", r.joint)))?;
            let idx = layout
                .index_of(joint, kind)
                .ok_or_else(|| Error::validation(&path, format!("joint `{}` has no `{}`", r.joint, r.symbol)))?;
            if seen[idx] {
                return Err(Error::validation(&path, "duplicate parameter"));
            }
            if !r.value.is_finite() {
                return Err(Error::validation(&path, "non-finite value"));
            }
            seen[idx] = true;
            v.values[idx] = r.value;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation("parameters", format!("missing `{}`", layout.label(missing))));
        }
        Ok(v)
    }
}

impl fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{:>16} {:+.9e}", self.layout.label(i), v)?;
        }
        Ok(())
    }
}
