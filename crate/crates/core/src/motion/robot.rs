//! Planar-chain kinematics of the unloader and AABB collision checks.
//!
//! The robot drives along the trailer depth axis (`x`, metres from the rear
//! opening) and stays centred across the width (`y`). Links live in the
//! `x`-`z` plane and are inflated to axis-aligned boxes for collision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldState;

pub const DOF: usize = 8;
pub const JOINT_NAMES: [&str; DOF] =
    ["base_x", "nose_lift", "nose_extend", "nose_pitch", "shoulder", "arm_extend", "wrist", "gripper_height"];

pub const BASE_X: usize = 0;
pub const NOSE_LIFT: usize = 1;
pub const NOSE_EXTEND: usize = 2;
pub const NOSE_PITCH: usize = 3;
pub const SHOULDER: usize = 4;
pub const ARM_EXTEND: usize = 5;
pub const WRIST: usize = 6;
pub const GRIPPER: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub base_x: f64,
    /// Lift (rad), extension (m), lip pitch (rad).
    pub nose: [f64; 3],
    /// Shoulder lift (rad), extension (m), wrist pitch (rad), gripper height (m).
    pub arm: [f64; 4],
}

impl RobotConfig {
    pub fn get(&self, j: usize) -> f64 {
        match j {
            0 => self.base_x,
            1..=3 => self.nose[j - 1],
            _ => self.arm[j - 4],
        }
    }

    pub fn set(&mut self, j: usize, v: f64) {
        match j {
            0 => self.base_x = v,
            1..=3 => self.nose[j - 1] = v,
            _ => self.arm[j - 4] = v,
        }
    }

    pub fn joints(&self) -> [f64; DOF] {
        std::array::from_fn(|j| self.get(j))
    }

    pub fn from_joints(q: [f64; DOF]) -> Self {
        Self { base_x: q[0], nose: [q[1], q[2], q[3]], arm: [q[4], q[5], q[6], q[7]] }
    }
}

/// End-effector target: gripper face centre and absolute wrist angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
}

impl EePose {
    pub fn distance(&self, o: &EePose) -> f64 {
        (self.x - o.x).hypot(self.z - o.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Strict overlap: touching faces do not count.
    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] < o.max[k] && self.max[k] > o.min[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Base,
    NosePlate,
    NoseLip,
    UpperArm,
    WristLink,
    Gripper,
}

/// Longest piece a straight link is split into for collision checks.
pub const LINK_CHUNK: f64 = 0.1;

pub const SELF_COLLISION_PAIRS: [(Link, Link); 7] = [
    (Link::UpperArm, Link::NosePlate),
    (Link::UpperArm, Link::NoseLip),
    (Link::WristLink, Link::NosePlate),
    (Link::WristLink, Link::NoseLip),
    (Link::Gripper, Link::NosePlate),
    (Link::Gripper, Link::NoseLip),
    (Link::Gripper, Link::Base),
];

#[derive(Debug, Error)]
pub enum RobotFileError {
    #[error("malformed robot file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid robot description: {0}")]
    Invalid(String),
}

/// Link lengths, joint limits and joint speeds. Lengths in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub base_length: f64,
    pub base_width: f64,
    pub base_height: f64,
    pub nose_pivot_z: f64,
    pub nose_length: f64,
    pub nose_lip: f64,
    pub nose_width: f64,
    pub nose_thickness: f64,
    /// Distance of the shoulder behind the base front face.
    pub shoulder_setback: f64,
    pub shoulder_z: f64,
    pub upper_arm: f64,
    pub wrist_link: f64,
    pub arm_width: f64,
    pub arm_thickness: f64,
    pub gripper_width: f64,
    pub gripper_height: f64,
    pub gripper_depth: f64,
    pub limits: [[f64; 2]; DOF],
    pub speeds: [f64; DOF],
    pub resolution: [f64; DOF],
    /// End-effector distance below which the analytic IK jump is offered.
    pub ik_threshold: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let deg5 = 5f64.to_radians();
        Self {
            base_length: 1.2,
            base_width: 1.6,
            base_height: 0.6,
            nose_pivot_z: 0.3,
            nose_length: 0.8,
            nose_lip: 0.1,
            nose_width: 1.5,
            nose_thickness: 0.05,
            shoulder_setback: 0.2,
            shoulder_z: 1.0,
            upper_arm: 0.6,
            wrist_link: 0.3,
            arm_width: 0.3,
            arm_thickness: 0.1,
            gripper_width: 1.5,
            gripper_height: 0.6,
            gripper_depth: 0.1,
            limits: [
                [-4.0, 8.0],
                [-0.35, 0.35],
                [0.0, 0.4],
                [-0.35, 0.35],
                [-1.2, 1.2],
                [0.0, 1.4],
                [-1.6, 1.6],
                [-0.2, 0.2],
            ],
            speeds: [0.5, 0.4, 0.2, 0.5, 0.5, 0.4, 1.0, 0.2],
            resolution: [0.05, deg5, 0.05, deg5, deg5, 0.05, deg5, 0.05],
            ik_threshold: 0.15,
        }
    }
}

impl RobotModel {
    pub fn from_json_str(s: &str) -> Result<Self, RobotFileError> {
        let m: RobotModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), RobotFileError> {
        let lengths = [
            self.base_length,
            self.base_width,
            self.base_height,
            self.nose_length,
            self.nose_width,
            self.upper_arm,
            self.wrist_link,
            self.arm_width,
            self.gripper_width,
            self.gripper_height,
        ];
        if lengths.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(RobotFileError::Invalid("link dimensions must be positive".into()));
        }
        let others = [
            self.nose_pivot_z,
            self.nose_lip,
            self.nose_thickness,
            self.shoulder_setback,
            self.shoulder_z,
            self.arm_thickness,
            self.gripper_depth,
            self.ik_threshold,
        ];
        if others.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RobotFileError::Invalid("offsets must be finite and non-negative".into()));
        }
        for j in 0..DOF {
            let [lo, hi] = self.limits[j];
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(RobotFileError::Invalid(format!("bad limits for {}", JOINT_NAMES[j])));
            }
            if !(self.speeds[j].is_finite() && self.speeds[j] > 0.0) {
                return Err(RobotFileError::Invalid(format!("bad speed for {}", JOINT_NAMES[j])));
            }
            if !(self.resolution[j].is_finite() && self.resolution[j] > 0.0) {
                return Err(RobotFileError::Invalid(format!("bad resolution for {}", JOINT_NAMES[j])));
            }
        }
        Ok(())
    }

    pub fn within_limits(&self, c: &RobotConfig) -> bool {
        c.joints().iter().zip(&self.limits).all(|(v, [lo, hi])| *v >= lo - 1e-9 && *v <= hi + 1e-9)
    }

    fn shoulder(&self, c: &RobotConfig) -> (f64, f64) {
        (c.base_x - self.shoulder_setback, self.shoulder_z)
    }

    /// Elbow (end of the extending link) and wrist end points.
    fn arm_points(&self, c: &RobotConfig) -> ((f64, f64), (f64, f64)) {
        let (sx, sz) = self.shoulder(c);
        let [s, e, w, _] = c.arm;
        let r = self.upper_arm + e;
        let elbow = (sx + r * s.cos(), sz + r * s.sin());
        let a = s + w;
        (elbow, (elbow.0 + self.wrist_link * a.cos(), elbow.1 + self.wrist_link * a.sin()))
    }

    pub fn end_effector(&self, c: &RobotConfig) -> EePose {
        let (_, (wx, wz)) = self.arm_points(c);
        EePose { x: wx, z: wz + c.arm[3], pitch: c.arm[0] + c.arm[2] }
    }

    /// Closed-form arm solution for a pose, keeping base and gripper height.
    pub fn inverse_kinematics(&self, c: &RobotConfig, goal: &EePose) -> Option<RobotConfig> {
        let (sx, sz) = self.shoulder(c);
        let gh = c.arm[3];
        let ex = goal.x - self.wrist_link * goal.pitch.cos() - sx;
        let ez = goal.z - gh - self.wrist_link * goal.pitch.sin() - sz;
        let s = ez.atan2(ex);
        let ext = ex.hypot(ez) - self.upper_arm;
        let mut out = *c;
        out.arm = [s, ext, goal.pitch - s, gh];
        self.within_limits(&out).then_some(out)
    }

    /// Upper bound on end-effector speed per unit joint motion, per joint.
    pub fn ee_lipschitz(&self) -> [f64; DOF] {
        let gh = self.limits[GRIPPER][0].abs().max(self.limits[GRIPPER][1].abs());
        let reach = self.upper_arm + self.limits[ARM_EXTEND][1] + self.wrist_link + gh;
        [1.0, 0.0, 0.0, 0.0, reach, 1.0, self.wrist_link + gh, 1.0]
    }

    /// Link bounding boxes. Straight links are split into pieces no longer
    /// than [`LINK_CHUNK`] so a diagonal link does not cover its whole
    /// bounding rectangle.
    pub fn link_boxes(&self, c: &RobotConfig, truck_width: f64) -> Vec<(Link, Aabb)> {
        let yc = truck_width / 2.0;
        let ys = |w: f64| [yc - w / 2.0, yc + w / 2.0];
        let mut out = Vec::with_capacity(32);
        let mut seg = |link: Link, p: (f64, f64), q: (f64, f64), t: f64, w: f64| {
            let [y0, y1] = ys(w);
            let len = (q.0 - p.0).hypot(q.1 - p.1);
            let n = ((len / LINK_CHUNK).ceil() as usize).max(1);
            let at = |i: usize| {
                let f = i as f64 / n as f64;
                (p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1))
            };
            for i in 0..n {
                let (a, b) = (at(i), at(i + 1));
                let bx = Aabb {
                    min: [a.0.min(b.0), y0, a.1.min(b.1) - t / 2.0],
                    max: [a.0.max(b.0), y1, a.1.max(b.1) + t / 2.0],
                };
                out.push((link, bx));
            }
        };
        let bx = c.base_x;
        let [by0, by1] = ys(self.base_width);
        let base = Aabb { min: [bx - self.base_length, by0, 0.0], max: [bx, by1, self.base_height] };

        let [lift, next, pitch] = c.nose;
        let pivot = (bx, self.nose_pivot_z);
        let nl = self.nose_length + next;
        let tip = (pivot.0 + nl * lift.cos(), pivot.1 + nl * lift.sin());
        let lip_end = (tip.0 + self.nose_lip * (lift + pitch).cos(), tip.1 + self.nose_lip * (lift + pitch).sin());

        let (elbow, wrist) = self.arm_points(c);
        let shoulder = self.shoulder(c);
        let gz = wrist.1 + c.arm[3];
        let [gy0, gy1] = ys(self.gripper_width);
        let gripper = Aabb {
            min: [wrist.0 - self.gripper_depth, gy0, gz - self.gripper_height / 2.0],
            max: [wrist.0, gy1, gz + self.gripper_height / 2.0],
        };
        seg(Link::NosePlate, pivot, tip, self.nose_thickness, self.nose_width);
        seg(Link::NoseLip, tip, lip_end, self.nose_thickness, self.nose_width);
        seg(Link::UpperArm, shoulder, elbow, self.arm_thickness, self.arm_width);
        seg(Link::WristLink, elbow, wrist, self.arm_thickness, self.arm_width);
        out.push((Link::Base, base));
        out.push((Link::Gripper, gripper));
        out
    }

    pub fn self_collides(&self, c: &RobotConfig) -> bool {
        let links = self.link_boxes(c, 0.0);
        let of = |l: Link| links.iter().filter(move |(k, _)| *k == l).map(|(_, b)| b);
        SELF_COLLISION_PAIRS.iter().any(|(a, b)| of(*a).any(|x| of(*b).any(|y| x.overlaps(y))))
    }

    /// True when any link overlaps an occupied cell (trailer structure
    /// included) or a declared link pair overlaps.
    pub fn collides(&self, c: &RobotConfig, w: &WorldState) -> bool {
        if self.self_collides(c) {
            return true;
        }
        let cs = w.cell_size();
        let width = w.dims().w as f64 * cs;
        self.link_boxes(c, width).iter().any(|(_, b)| aabb_hits_grid(b, w))
    }
}

fn aabb_hits_grid(b: &Aabb, w: &WorldState) -> bool {
    let cs = w.cell_size();
    let range = |k: usize| ((b.min[k] / cs).floor() as i64, (b.max[k] / cs).ceil() as i64 - 1);
    let (d0, d1) = range(0);
    let (w0, w1) = range(1);
    let (h0, h1) = range(2);
    let grid = w.grid();
    for d in d0..=d1 {
        for wi in w0..=w1 {
            for h in h0..=h1 {
                if !grid.is_occupied(d, wi, h) {
                    continue;
                }
                let cell = Aabb {
                    min: [d as f64 * cs, wi as f64 * cs, h as f64 * cs],
                    max: [(d + 1) as f64 * cs, (wi + 1) as f64 * cs, (h + 1) as f64 * cs],
                };
                if b.overlaps(&cell) {
                    return true;
                }
            }
        }
    }
    false
}
