//! Planar reaching around a central obstacle.
//!
//! The agent starts on a circle and must reach a goal on the far side. The obstacle
//! at the origin blocks the straight path, so demonstrations detour either clockwise
//! or counter-clockwise: the chunk distribution is bimodal near the start.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::math;

pub(crate) const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Reach2d {
    pub start_radius: f64,
    pub goal_jitter: f64,
    pub obstacle_radius: f64,
    pub detour_radius: f64,
    pub max_speed: f64,
    pub success_radius: f64,
    pub horizon: usize,
    /// Magnitude of the expert's fixed world-frame drift.
    pub expert_bias: f64,
}

impl Default for Reach2d {
    fn default() -> Self {
        Self {
            start_radius: 1.0,
            goal_jitter: 0.4,
            obstacle_radius: 0.4,
            detour_radius: 0.7,
            max_speed: 0.15,
            success_radius: 0.05,
            horizon: 30,
            expert_bias: 0.02,
        }
    }
}

fn norm(v: [f64; 2]) -> f64 {
    math::sqrt(v[0] * v[0] + v[1] * v[1])
}

fn clip(v: [f64; 2], max: f64) -> [f64; 2] {
    let n = norm(v);
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

/// Distance from the origin to the segment `p → q`.
fn segment_clearance(p: [f64; 2], q: [f64; 2]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let dd = d[0] * d[0] + d[1] * d[1];
    if dd == 0.0 {
        return norm(p);
    }
    let s = (-(p[0] * d[0] + p[1] * d[1]) / dd).clamp(0.0, 1.0);
    norm([p[0] + s * d[0], p[1] + s * d[1]])
}

impl Reach2d {
    /// State layout: `[agent x, agent y, goal x, goal y]`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let phi = rng.random_range(0.0..2.0 * PI);
        let delta = rng.random_range(-self.goal_jitter..=self.goal_jitter);
        let r = self.start_radius;
        let psi = phi + PI + delta;
        vec![
            r * math::cos(phi),
            r * math::sin(phi),
            r * math::cos(psi),
            r * math::sin(psi),
        ]
    }

    /// Velocity clipped to `max_speed`; a step ending inside the obstacle is projected
    /// radially onto its boundary.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let v = clip([a[0], a[1]], self.max_speed);
        let next = [s[0] + v[0], s[1] + v[1]];
        let r = norm(next);
        let p = if r >= self.obstacle_radius {
            next
        } else if r > 0.0 {
            [next[0] * self.obstacle_radius / r, next[1] * self.obstacle_radius / r]
        } else {
            [s[0], s[1]]
        };
        vec![p[0], p[1], s[2], s[3]]
    }

    pub fn goal_distance(&self, s: &[f64]) -> f64 {
        norm([s[2] - s[0], s[3] - s[1]])
    }

    pub fn is_success(&self, s: &[f64]) -> bool {
        self.goal_distance(s) < self.success_radius
    }

    /// Scripted detour expert. `side` is `+1` (counter-clockwise) or `-1`.
    pub fn expert_action(&self, s: &[f64], side: f64) -> Vec<f64> {
        let p = [s[0], s[1]];
        let g = [s[2], s[3]];
        let d = [g[0] - p[0], g[1] - p[1]];
        let dist = norm(d);
        let mut a = if segment_clearance(p, g) >= self.obstacle_radius + 0.1 {
            let speed = dist.min(self.max_speed);
            if dist > 0.0 {
                [d[0] * speed / dist, d[1] * speed / dist]
            } else {
                [0.0, 0.0]
            }
        } else {
            let r = norm(p).max(1e-9);
            let radial = [p[0] / r, p[1] / r];
            let tangent = [-side * radial[1], side * radial[0]];
            let pull = 2.0 * (self.detour_radius - r);
            let dir = [tangent[0] + pull * radial[0], tangent[1] + pull * radial[1]];
            let n = norm(dir);
            [dir[0] * self.max_speed / n, dir[1] * self.max_speed / n]
        };
        // Fixed world-frame drift: the demonstrations are deliberately not equivariant.
        a[0] += self.expert_bias * (dist / 0.5).min(1.0);
        let a = clip(a, self.max_speed);
        vec![a[0], a[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_into_the_obstacle_slide_onto_its_boundary() {
        let env = Reach2d::default();
        let s = [0.5, 0.0, -1.0, 0.0];
        let next = env.step(&s, &[-0.15, 0.1]);
        let r = norm([next[0], next[1]]);
        assert!((r - env.obstacle_radius).abs() < 1e-12);
        assert!(next[1] > 0.0);
        assert_eq!(&next[2..], &s[2..]);
    }

    #[test]
    fn speed_is_clipped() {
        let env = Reach2d::default();
        let next = env.step(&[1.0, 0.0, -1.0, 0.0], &[3.0, 4.0]);
        assert!((norm([next[0] - 1.0, next[1]]) - env.max_speed).abs() < 1e-12);
    }
}
