//! Rigid planar mapping from the real-world frame to the virtual frame.

use serde::{Deserialize, Serialize};

use crate::link::codec::PosePayload;
use crate::sim::geometry::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub rotation: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Default for FrameTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl FrameTransform {
    pub fn identity() -> Self {
        FrameTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            rotation: 0.0,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }

    pub fn new(origin: (f64, f64), rotation: f64, offset: (f64, f64)) -> Self {
        FrameTransform {
            origin_x: origin.0,
            origin_y: origin.1,
            rotation: wrap_angle(rotation),
            offset_x: offset.0,
            offset_y: offset.1,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// Real → virtual: `R(θ0)·(p − origin) + offset`, heading shifted by θ0.
pub fn transform_pose(p: &PosePayload, t: &FrameTransform) -> PosePayload {
    if t.is_identity() {
        return *p;
    }
    let (s, c) = t.rotation.sin_cos();
    let (dx, dy) = (p.x - t.origin_x, p.y - t.origin_y);
    PosePayload {
        x: c * dx - s * dy + t.offset_x,
        y: s * dx + c * dy + t.offset_y,
        psi: wrap_angle(p.psi + t.rotation),
        ..*p
    }
}

pub fn inverse_transform(p: &PosePayload, t: &FrameTransform) -> PosePayload {
    if t.is_identity() {
        return *p;
    }
    let (s, c) = t.rotation.sin_cos();
    let (dx, dy) = (p.x - t.offset_x, p.y - t.offset_y);
    PosePayload {
        x: c * dx + s * dy + t.origin_x,
        y: -s * dx + c * dy + t.origin_y,
        psi: wrap_angle(p.psi - t.rotation),
        ..*p
    }
}
