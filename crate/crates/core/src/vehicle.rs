//! Kinematic bicycle vehicle with incremental steering.
//!
//! The agent commands a normalized steering adjustment in [-1, 1]; forward
//! speed is fixed. One decision step first applies the steering change, then
//! advances the pose with a forward-Euler bicycle step at the new heading.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, OrientedBox, Vec2};
use crate::{Error, Result};

/// Static vehicle description. Distances in meters, angles in radians,
/// `steer_rate` in radians per decision step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub body_length: f64,
    pub body_width: f64,
    pub speed: f64,
    pub max_steer: f64,
    pub steer_rate: f64,
    pub dt: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.wheelbase > 0.0
            && self.wheelbase <= self.body_length
            && self.body_width > 0.0
            && self.speed > 0.0
            && self.max_steer > 0.0
            && self.max_steer < std::f64::consts::FRAC_PI_2
            && self.steer_rate > 0.0
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "vehicle params out of range: {self:?}"
            )))
        }
    }
}

/// Vehicle pose: rear-axle midpoint, heading, and current steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub steer_angle: f64,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            steer_angle: 0.0,
        }
    }

    /// Midpoint of the body rectangle (rear axle + half wheelbase forward).
    pub fn body_center(&self, params: &VehicleParams) -> Vec2 {
        self.position
            .add(Vec2::from_angle(self.heading).scale(params.wheelbase / 2.0))
    }
}

/// Apply a normalized steering action: the steering angle moves by
/// `action * steer_rate`, clamped to the steering limits. Negative actions
/// steer clockwise, zero maintains the angle, positive counterclockwise.
/// Out-of-range finite actions are clamped to [-1, 1] first.
pub fn update_steering(
    state: &VehicleState,
    action: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !action.is_finite() {
        return Err(Error::InvalidAction(format!(
            "steering action must be finite, got {action}"
        )));
    }
    let a = action.clamp(-1.0, 1.0);
    let steer = (state.steer_angle + a * params.steer_rate).clamp(-params.max_steer, params.max_steer);
    Ok(VehicleState {
        steer_angle: steer,
        ..*state
    })
}

/// One forward-Euler bicycle step at the current steering angle:
/// the heading advances by `(speed / wheelbase) * tan(steer) * dt`, then the
/// rear axle moves `speed * dt` along the new heading.
pub fn integrate(state: &VehicleState, params: &VehicleParams) -> VehicleState {
    let heading = wrap_angle(
        state.heading + params.speed / params.wheelbase * state.steer_angle.tan() * params.dt,
    );
    let position = state
        .position
        .add(Vec2::from_angle(heading).scale(params.speed * params.dt));
    VehicleState {
        position,
        heading,
        steer_angle: state.steer_angle,
    }
}

/// Body collision rectangle: `body_length x body_width`, centered on the body
/// midpoint and aligned with the heading.
pub fn body_box(state: &VehicleState, params: &VehicleParams) -> OrientedBox {
    OrientedBox {
        center: state.body_center(params),
        half_extents: (params.body_length / 2.0, params.body_width / 2.0),
        heading: state.heading,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    fn params() -> VehicleParams {
        VehicleParams {
            wheelbase: 2.5,
            body_length: 4.0,
            body_width: 2.0,
            speed: 3.0,
            max_steer: 30.0_f64.to_radians(),
            steer_rate: 3.0_f64.to_radians(),
            dt: 0.1,
        }
    }

    #[test]
    fn zero_action_maintains_steer() {
        let p = params();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0);
        s.steer_angle = 0.1;
        let s2 = update_steering(&s, 0.0, &p).unwrap();
        assert_eq!(s2.steer_angle, 0.1);
    }

    #[test]
    fn full_action_moves_by_steer_rate() {
        let p = params();
        let s = VehicleState::new(Vec2::ZERO, 0.0);
        let s2 = update_steering(&s, 1.0, &p).unwrap();
        assert!((s2.steer_angle - p.steer_rate).abs() < 1e-15);
        assert!((s2.steer_angle - 0.0524).abs() < 1e-4);
    }

    #[test]
    fn steer_clamps_at_limit() {
        let p = params();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0);
        s.steer_angle = p.max_steer;
        let s2 = update_steering(&s, 1.0, &p).unwrap();
        assert_eq!(s2.steer_angle, p.max_steer);
    }

    #[test]
    fn out_of_range_action_clamped_nonfinite_rejected() {
        let p = params();
        let s = VehicleState::new(Vec2::ZERO, 0.0);
        let s2 = update_steering(&s, 7.0, &p).unwrap();
        assert!((s2.steer_angle - p.steer_rate).abs() < 1e-15);
        assert!(update_steering(&s, f64::NAN, &p).is_err());
        assert!(update_steering(&s, f64::INFINITY, &p).is_err());
    }

    #[test]
    fn straight_line_step() {
        let p = params();
        let s = VehicleState::new(Vec2::ZERO, 0.0);
        let s2 = integrate(&s, &p);
        assert!((s2.position.x - 0.3).abs() < 1e-15);
        assert_eq!(s2.position.z, 0.0);
        assert_eq!(s2.heading, 0.0);
    }

    #[test]
    fn constant_steer_traces_turning_circle() {
        // Closed-form turning radius L / tan(delta) = 2.5 / tan(30 deg).
        let p = params();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0);
        s.steer_angle = 30.0_f64.to_radians();
        let expected_r = p.wheelbase / s.steer_angle.tan();
        assert!((expected_r - 4.3301).abs() < 1e-4);

        let mut pts = Vec::with_capacity(1000);
        for _ in 0..1000 {
            s = integrate(&s, &p);
            pts.push(s.position);
        }
        // Algebraic circle fit: x^2 + z^2 = 2 cx x + 2 cz z + t solved by
        // 3x3 normal equations, exact when the points lie on a circle.
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for q in &pts {
            let row = [2.0 * q.x, 2.0 * q.z, 1.0];
            let y = q.x * q.x + q.z * q.z;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += row[i] * row[j];
                }
                rhs[i] += row[i] * y;
            }
        }
        let det = |a: &[[f64; 3]; 3]| {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let d = det(&m);
        let mut sol = [0.0f64; 3];
        for k in 0..3 {
            let mut mk = m;
            for i in 0..3 {
                mk[i][k] = rhs[i];
            }
            sol[k] = det(&mk) / d;
        }
        let center = Vec2::new(sol[0], sol[1]);
        for q in &pts {
            let r = q.distance(center);
            assert!(
                (r - expected_r).abs() < 1e-2,
                "radius {r} vs expected {expected_r}"
            );
        }
    }

    #[test]
    fn straight_steps_compose() {
        let p = params();
        let s = VehicleState::new(Vec2::new(1.0, 2.0), 0.7);
        let two = integrate(&integrate(&s, &p), &p);
        let double = integrate(
            &s,
            &VehicleParams {
                dt: 2.0 * p.dt,
                ..p
            },
        );
        assert!(two.position.distance(double.position) < 1e-12);
        assert!((two.heading - double.heading).abs() < 1e-12);
    }

    #[test]
    fn body_box_at_origin_and_rotated() {
        let p = params();
        let s = VehicleState::new(Vec2::ZERO, 0.0);
        let b = body_box(&s, &p);
        assert!((b.center.x - 1.25).abs() < 1e-15);
        assert_eq!(b.center.z, 0.0);
        assert_eq!(b.half_extents, (2.0, 1.0));

        let s90 = VehicleState::new(Vec2::ZERO, std::f64::consts::FRAC_PI_2);
        let b90 = body_box(&s90, &p);
        assert!(b90.center.x.abs() < 1e-12);
        assert!((b90.center.z - 1.25).abs() < 1e-12);
        assert_eq!(b90.heading, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn body_box_corners_match_rigid_transform_oracle() {
        let p = params();
        let mut rng = SimRng::from_seed(0xb0d7);
        // Corners of the heading-0 box at the origin, in local frame.
        let local = [
            Vec2::new(p.wheelbase / 2.0 + p.body_length / 2.0, p.body_width / 2.0),
            Vec2::new(p.wheelbase / 2.0 - p.body_length / 2.0, p.body_width / 2.0),
            Vec2::new(p.wheelbase / 2.0 - p.body_length / 2.0, -p.body_width / 2.0),
            Vec2::new(p.wheelbase / 2.0 + p.body_length / 2.0, -p.body_width / 2.0),
        ];
        for _ in 0..200 {
            let s = VehicleState::new(
                Vec2::new(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)),
                rng.uniform(-3.0, 3.0),
            );
            let corners = body_box(&s, &p).corners();
            for l in &local {
                let world = l.rotate(s.heading).add(s.position);
                assert!(
                    corners.iter().any(|c| c.distance(world) < 1e-9),
                    "missing corner {world:?}"
                );
            }
        }
    }

    #[test]
    fn steer_limit_holds_under_any_action_sequence() {
        let p = params();
        let mut rng = SimRng::from_seed(0x57ee);
        let mut s = VehicleState::new(Vec2::ZERO, 0.0);
        for _ in 0..2000 {
            s = update_steering(&s, rng.uniform(-2.0, 2.0), &p).unwrap();
            s = integrate(&s, &p);
            assert!(s.steer_angle.abs() <= p.max_steer + 1e-15);
        }
    }

    #[test]
    fn update_steering_monotone_in_action() {
        let p = params();
        let mut rng = SimRng::from_seed(0x0a0a);
        for _ in 0..500 {
            let mut s = VehicleState::new(Vec2::ZERO, 0.0);
            s.steer_angle = rng.uniform(-p.max_steer, p.max_steer);
            let a1 = rng.uniform(-1.5, 1.5);
            let a2 = rng.uniform(-1.5, 1.5);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let s_lo = update_steering(&s, lo, &p).unwrap();
            let s_hi = update_steering(&s, hi, &p).unwrap();
            assert!(s_hi.steer_angle >= s_lo.steer_angle);
        }
    }

    #[test]
    fn mirror_symmetry_of_paths() {
        // Negating the action sequence and the initial steer mirrors the
        // path across the initial heading axis.
        let p = params();
        let mut rng = SimRng::from_seed(0x3133);
        let actions: Vec<f64> = (0..200).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let mut a = VehicleState::new(Vec2::ZERO, 0.0);
        a.steer_angle = 0.1;
        let mut b = VehicleState::new(Vec2::ZERO, 0.0);
        b.steer_angle = -0.1;

        for &act in &actions {
            a = integrate(&update_steering(&a, act, &p).unwrap(), &p);
            b = integrate(&update_steering(&b, -act, &p).unwrap(), &p);
            assert!((a.position.x - b.position.x).abs() < 1e-9);
            assert!((a.position.z + b.position.z).abs() < 1e-9);
            assert!((a.steer_angle + b.steer_angle).abs() < 1e-12);
        }
    }
}
