//! Kinematic end-effector pose tracking with the full 10D action layout:
//! 6D rotation (three in-plane axis pairs), planar translation, height, gripper.
//!
//! Actions are absolute target poses; each step moves the pose toward the target
//! under per-step translation and rotation limits.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::math;

/// `[xy(2), z, rot6(6), gripper, goal xy(2), goal z, goal rot6(6)]`
pub(crate) const STATE_DIM: usize = 19;
const POS: usize = 0;
const ROT: usize = 3;
const GRIP: usize = 9;
const GOAL: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Pose10d {
    pub max_translation: f64,
    pub max_rotation: f64,
    pub position_tolerance: f64,
    pub angle_tolerance: f64,
    pub horizon: usize,
    pub expert_bias: f64,
}

impl Default for Pose10d {
    fn default() -> Self {
        Self {
            max_translation: 0.1,
            max_rotation: 0.3,
            position_tolerance: 0.05,
            angle_tolerance: 0.1,
            horizon: 40,
            expert_bias: 0.01,
        }
    }
}

/// Rows `(a, b)` of a rotation matrix stored as axis pairs `(a_j, b_j)`, `j = 0..3`.
fn rows(rot6: &[f64]) -> ([f64; 3], [f64; 3]) {
    (
        [rot6[0], rot6[2], rot6[4]],
        [rot6[1], rot6[3], rot6[5]],
    )
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Symmetric orthonormalization `(M Mᵀ)^{-1/2} M` of the two stored rows.
///
/// Unlike sequential Gram–Schmidt this commutes with rotations that mix the two
/// rows, which is exactly how planar rotations act on the encoding. Returns `None`
/// for (near-)degenerate input.
pub fn orthonormalize_rot6(rot6: &[f64]) -> Option<[f64; 6]> {
    let (a, b) = rows(rot6);
    let (saa, sab, sbb) = (dot(a, a), dot(a, b), dot(b, b));
    let det = saa * sbb - sab * sab;
    if !(det > 1e-12) {
        return None;
    }
    let s = math::sqrt(det);
    let t = math::sqrt(saa + sbb + 2.0 * s);
    // sqrt(S) = (S + sI)/t, then invert the 2x2.
    let (r00, r01, r11) = ((saa + s) / t, sab / t, (sbb + s) / t);
    let rdet = r00 * r11 - r01 * r01;
    let (i00, i01, i11) = (r11 / rdet, -r01 / rdet, r00 / rdet);
    let na = [
        i00 * a[0] + i01 * b[0],
        i00 * a[1] + i01 * b[1],
        i00 * a[2] + i01 * b[2],
    ];
    let nb = [
        i01 * a[0] + i11 * b[0],
        i01 * a[1] + i11 * b[1],
        i01 * a[2] + i11 * b[2],
    ];
    Some([na[0], nb[0], na[1], nb[1], na[2], nb[2]])
}

/// Full rotation matrix (rows) decoded from the 6D encoding.
pub fn decode_rotation(rot6: &[f64]) -> Option<[[f64; 3]; 3]> {
    let o = orthonormalize_rot6(rot6)?;
    let (a, b) = rows(&o);
    Some([a, b, cross(a, b)])
}

fn encode_rotation(r: [[f64; 3]; 3]) -> [f64; 6] {
    [r[0][0], r[1][0], r[0][1], r[1][1], r[0][2], r[1][2]]
}

fn rot_z_x(yaw: f64, tilt: f64) -> [[f64; 3]; 3] {
    let (cz, sz) = (math::cos(yaw), math::sin(yaw));
    let (cx, sx) = (math::cos(tilt), math::sin(tilt));
    // Rz(yaw) · Rx(tilt)
    [
        [cz, -sz * cx, sz * sx],
        [sz, cz * cx, -cz * sx],
        [0.0, sx, cx],
    ]
}

/// Geodesic angle between two rotations given by their 6D encodings.
pub fn rotation_angle(a6: &[f64], b6: &[f64]) -> f64 {
    match (decode_rotation(a6), decode_rotation(b6)) {
        (Some(a), Some(b)) => {
            let tr: f64 = (0..3).map(|i| dot(a[i], b[i])).sum();
            math::acos(((tr - 1.0) / 2.0).clamp(-1.0, 1.0))
        }
        _ => PI,
    }
}

fn clip_toward(cur: &[f64], target: &[f64], max: f64) -> Vec<f64> {
    let d: Vec<f64> = target.iter().zip(cur).map(|(t, c)| t - c).collect();
    let n = math::sqrt(d.iter().map(|v| v * v).sum());
    let scale = if n > max { max / n } else { 1.0 };
    cur.iter().zip(&d).map(|(c, v)| c + scale * v).collect()
}

impl Pose10d {
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut s = vec![0.0; STATE_DIM];
        let pose = |rng: &mut R, out: &mut [f64]| {
            let r = 0.5 * math::sqrt(rng.random::<f64>());
            let th = rng.random_range(0.0..2.0 * PI);
            out[0] = r * math::cos(th);
            out[1] = r * math::sin(th);
            out[2] = rng.random_range(0.1..0.3);
            let rot = rot_z_x(rng.random_range(0.0..2.0 * PI), rng.random_range(-0.3..0.3));
            out[3..9].copy_from_slice(&encode_rotation(rot));
        };
        pose(rng, &mut s[0..9]);
        s[GRIP] = 1.0;
        let mut goal = [0.0; 9];
        pose(rng, &mut goal);
        s[GOAL..].copy_from_slice(&goal);
        s
    }

    /// `a = [rot6 target (6), xy target (2), z target, gripper target]`.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut next = s.to_vec();
        let target_pos = [a[6], a[7], a[8]];
        let pos = clip_toward(&s[POS..POS + 3], &target_pos, self.max_translation);
        next[POS..POS + 3].copy_from_slice(&pos);
        let rot = clip_toward(&s[ROT..ROT + 6], &a[0..6], self.max_rotation);
        if let Some(o) = orthonormalize_rot6(&rot) {
            next[ROT..ROT + 6].copy_from_slice(&o);
        }
        next[GRIP] = a[9].clamp(0.0, 1.0);
        next
    }

    pub fn position_error(&self, s: &[f64]) -> f64 {
        let d: f64 = (0..3).map(|i| { let e = s[GOAL + i] - s[POS + i]; e * e }).sum();
        math::sqrt(d)
    }

    pub fn is_success(&self, s: &[f64]) -> bool {
        self.position_error(s) < self.position_tolerance
            && rotation_angle(&s[ROT..ROT + 6], &s[GOAL + 3..GOAL + 9]) < self.angle_tolerance
    }

    /// Absolute target: the goal pose, with a small world-frame x drift.
    pub fn expert_action(&self, s: &[f64]) -> Vec<f64> {
        let dist = self.position_error(s);
        let mut a = vec![0.0; 10];
        a[0..6].copy_from_slice(&s[GOAL + 3..GOAL + 9]);
        a[6] = s[GOAL] + self.expert_bias * (dist / 0.2).min(1.0);
        a[7] = s[GOAL + 1];
        a[8] = s[GOAL + 2];
        a[9] = if dist > 0.1 { 1.0 } else { 0.0 };
        a
    }
}
