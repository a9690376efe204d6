//! Constant-curvature kinematics of a single-segment, three-tendon continuum robot.
//!
//! The backbone is an inextensible rod of length `l0`. Three cables run at a
//! fixed pitch radius `r`, spaced 120 degrees apart (cable `i` at azimuth
//! `σᵢ = 2π·i/3`). Bending the segment by `φ` towards azimuth `θ` changes the
//! cable length inside the structure by `−r·φ·cos(θ − σᵢ)`; a pulled cable is
//! negative.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};

/// Below this bend angle the arc position is evaluated by its Taylor series.
pub const SMALL_BEND: f64 = 1e-6;

/// Tolerance on `Σ dlᵢ` accepted by [`bend_from_deltas`].
pub const DELTA_SUM_TOLERANCE: f64 = 1e-6;

/// Azimuths of the three cables around the backbone.
pub const CABLE_AZIMUTHS: [f64; 3] = [0.0, TAU / 3.0, 2.0 * TAU / 3.0];

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Bend direction `theta` and bend angle `phi`, both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendState {
    theta: f64,
    phi: f64,
}

impl BendState {
    pub const STRAIGHT: BendState = BendState { theta: 0.0, phi: 0.0 };

    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        ensure_finite("theta", theta)?;
        ensure_finite("phi", phi)?;
        if phi < 0.0 {
            return Err(invalid(format!("bend angle must be >= 0, got {phi}")));
        }
        Ok(Self::normalized(theta, phi))
    }

    /// Builds a bend from the tilt vector `(φ·cosθ, φ·sinθ)`.
    pub fn from_tilt(x: f64, y: f64) -> Self {
        let phi = x.hypot(y);
        if phi == 0.0 {
            Self::STRAIGHT
        } else {
            Self { theta: y.atan2(x), phi }
        }
    }

    fn normalized(theta: f64, phi: f64) -> Self {
        if phi == 0.0 {
            Self::STRAIGHT
        } else {
            Self { theta: wrap_angle(theta), phi }
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// The tilt vector `(φ·cosθ, φ·sinθ)`; continuous through `φ = 0`.
    pub fn tilt(&self) -> (f64, f64) {
        (self.phi * self.theta.cos(), self.phi * self.theta.sin())
    }

    /// Returns the bend with `phi` clamped to `phi_max`.
    pub fn clamped(self, phi_max: f64) -> Self {
        Self { phi: self.phi.min(phi_max), ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotGeometry {
    /// Backbone length `l0`, meters.
    pub backbone_length: f64,
    /// Distance from the backbone axis to each cable, meters.
    pub cable_pitch_radius: f64,
    pub spacer_count: u32,
    /// Largest permitted bend angle, radians.
    pub phi_max: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            backbone_length: 1.0,
            cable_pitch_radius: 0.02,
            spacer_count: 5,
            phi_max: 20f64.to_radians(),
        }
    }
}

impl RobotGeometry {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("backbone_length", self.backbone_length)?;
        ensure_finite("cable_pitch_radius", self.cable_pitch_radius)?;
        ensure_finite("phi_max", self.phi_max)?;
        if self.backbone_length <= 0.0 {
            return Err(invalid("backbone_length must be > 0"));
        }
        if self.cable_pitch_radius <= 0.0 {
            return Err(invalid("cable_pitch_radius must be > 0"));
        }
        if !(self.phi_max > 0.0 && self.phi_max < PI) {
            return Err(invalid("phi_max must lie in (0, pi)"));
        }
        Ok(())
    }

    /// Euclidean norm of the cable delta vector at `phi_max`; every bend
    /// within the limit maps inside this ball.
    pub fn delta_norm_limit(&self) -> f64 {
        self.cable_pitch_radius * self.phi_max * 1.5f64.sqrt()
    }

    /// Largest cable length change any bend within `phi_max` produces.
    pub fn max_cable_delta(&self) -> f64 {
        self.cable_pitch_radius * self.phi_max
    }
}

/// Per-cable length change in meters; shortening is negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CableDeltas(pub [f64; 3]);

impl CableDeltas {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

pub fn cable_deltas(bend: BendState, geom: &RobotGeometry) -> Result<CableDeltas> {
    geom.validate()?;
    if bend.phi > geom.phi_max {
        return Err(invalid(format!(
            "bend angle {} exceeds phi_max {}",
            bend.phi, geom.phi_max
        )));
    }
    let scale = -geom.cable_pitch_radius * bend.phi;
    Ok(CableDeltas(CABLE_AZIMUTHS.map(|sigma| scale * (bend.theta - sigma).cos())))
}

/// Inverts [`cable_deltas`]. The deltas must sum to zero within
/// [`DELTA_SUM_TOLERANCE`].
pub fn bend_from_deltas(deltas: CableDeltas, geom: &RobotGeometry) -> Result<BendState> {
    geom.validate()?;
    for (i, d) in deltas.0.iter().enumerate() {
        ensure_finite(&format!("dl{}", i + 1), *d)?;
    }
    let sum = deltas.sum();
    if sum.abs() > DELTA_SUM_TOLERANCE {
        return Err(invalid(format!(
            "cable deltas are inconsistent: sum {sum:e} m exceeds {DELTA_SUM_TOLERANCE:e}"
        )));
    }
    let [d1, d2, d3] = deltas.0;
    let r = geom.cable_pitch_radius;
    Ok(BendState::from_tilt(-d1 / r, (d3 - d2) / (SQRT_3 * r)))
}

/// Least-squares bend estimate for cable lengths that need not sum to zero.
///
/// Independently rate-limited cables drift off the zero-sum plane while in
/// transit; this projects them back onto it before inverting. Equal to
/// [`bend_from_deltas`] whenever the sum is zero.
pub fn bend_estimate(deltas: CableDeltas, geom: &RobotGeometry) -> BendState {
    let [d1, d2, d3] = deltas.0;
    let r = geom.cable_pitch_radius;
    let x = -(2.0 * d1 - d2 - d3) / (3.0 * r);
    let y = (d3 - d2) / (SQRT_3 * r);
    BendState::from_tilt(x, y)
}

/// Point on the constant-curvature arc at arc length `s` from the base.
fn arc_point(bend: BendState, l0: f64, s: f64) -> Vector3<f64> {
    let angle = bend.phi * s / l0;
    let (radial, axial) = if angle < SMALL_BEND {
        let a2 = angle * angle;
        (s * angle * (0.5 - a2 / 24.0), s * (1.0 - a2 / 6.0))
    } else {
        let rho = s / angle;
        let half = (0.5 * angle).sin();
        (rho * 2.0 * half * half, rho * angle.sin())
    };
    Vector3::new(radial * bend.theta.cos(), radial * bend.theta.sin(), axial)
}

fn validate_arc(bend: BendState, geom: &RobotGeometry) -> Result<()> {
    geom.validate()?;
    if bend.phi >= PI {
        return Err(invalid(format!("bend angle {} must be < pi", bend.phi)));
    }
    Ok(())
}

pub fn tip_pose(bend: BendState, geom: &RobotGeometry) -> Result<TipPose> {
    validate_arc(bend, geom)?;
    let l0 = geom.backbone_length;
    let z = Vector3::z_axis();
    let orientation = Rotation3::from_axis_angle(&z, bend.theta)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), bend.phi)
        * Rotation3::from_axis_angle(&z, -bend.theta);
    Ok(TipPose { position: arc_point(bend, l0, l0), orientation })
}

/// `n` points at equal arc length from the base to the tip.
pub fn backbone_points(bend: BendState, geom: &RobotGeometry, n: usize) -> Result<Vec<Vector3<f64>>> {
    validate_arc(bend, geom)?;
    if n < 2 {
        return Err(invalid(format!("need at least 2 backbone points, got {n}")));
    }
    let l0 = geom.backbone_length;
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            // The endpoint uses exactly l0 so it matches tip_pose bit for bit.
            let s = if i == n - 1 { l0 } else { l0 * i as f64 / last };
            arc_point(bend, l0, s)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn geom() -> RobotGeometry {
        RobotGeometry::default()
    }

    // Independent evaluation of the three trigonometric length formulas with
    // the third cable carrying the +sin term.
    fn expanded_formulas(theta: f64, phi: f64, r: f64) -> [f64; 3] {
        let h = 3f64.sqrt() / 2.0;
        [
            -r * theta.cos() * phi,
            (0.5 * r * theta.cos() - h * r * theta.sin()) * phi,
            (0.5 * r * theta.cos() + h * r * theta.sin()) * phi,
        ]
    }

    #[test]
    fn straight_backbone_has_no_deltas() {
        let d = cable_deltas(BendState::STRAIGHT, &geom()).unwrap();
        assert_eq!(d.0, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_bend_towards_first_cable() {
        let d = cable_deltas(BendState::new(0.0, 20f64.to_radians()).unwrap(), &geom()).unwrap();
        let expected = [-0.0069813, 0.0034907, 0.0034907];
        for i in 0..3 {
            assert_abs_diff_eq!(d.0[i], expected[i], epsilon = 5e-8);
        }
        let oracle = expanded_formulas(0.0, 20f64.to_radians(), 0.02);
        for i in 0..3 {
            assert_abs_diff_eq!(d.0[i], oracle[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn quarter_turn_direction() {
        let d = cable_deltas(BendState::new(FRAC_PI_2, 0.2).unwrap(), &geom()).unwrap();
        let expected = [0.0, -0.0034641, 0.0034641];
        for i in 0..3 {
            assert_abs_diff_eq!(d.0[i], expected[i], epsilon = 5e-8);
        }
        let oracle = expanded_formulas(FRAC_PI_2, 0.2, 0.02);
        assert_abs_diff_eq!(oracle.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        for i in 0..3 {
            assert_abs_diff_eq!(d.0[i], oracle[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_bends() {
        assert!(BendState::new(f64::NAN, 0.1).is_err());
        assert!(BendState::new(0.0, -0.1).is_err());
        let too_far = BendState::new(0.0, 0.5).unwrap();
        assert!(cable_deltas(too_far, &geom()).is_err());
    }

    #[test]
    fn zero_bend_resolves_direction_to_zero() {
        let b = BendState::new(2.0, 0.0).unwrap();
        assert_eq!(b.theta(), 0.0);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn inverse_examples() {
        let g = geom();
        let b = bend_from_deltas(CableDeltas([0.0; 3]), &g).unwrap();
        assert_eq!(b, BendState::STRAIGHT);

        let b = bend_from_deltas(CableDeltas([-0.0069813, 0.0034907, 0.0034907]), &g).unwrap();
        assert_abs_diff_eq!(b.theta(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.phi(), 0.349066, epsilon = 1e-6);

        let b = bend_from_deltas(CableDeltas([0.0, -0.0034641, 0.0034641]), &g).unwrap();
        assert_abs_diff_eq!(b.theta(), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(b.phi(), 0.2, epsilon = 1e-6);
    }

    #[test]
    fn inverse_rejects_inconsistent_deltas() {
        let err = bend_from_deltas(CableDeltas([0.001, 0.001, 0.0]), &geom());
        assert!(err.is_err());
    }

    #[test]
    fn estimate_matches_exact_inverse_on_plane() {
        let g = geom();
        let b = BendState::new(1.1, 0.25).unwrap();
        let d = cable_deltas(b, &g).unwrap();
        let exact = bend_from_deltas(d, &g).unwrap();
        let est = bend_estimate(d, &g);
        assert_abs_diff_eq!(exact.theta(), est.theta(), epsilon = 1e-12);
        assert_abs_diff_eq!(exact.phi(), est.phi(), epsilon = 1e-12);
    }

    #[test]
    fn tip_pose_examples() {
        let g = geom();
        let straight = tip_pose(BendState::new(1.0, 0.0).unwrap(), &g).unwrap();
        assert_eq!(straight.position, Vector3::new(0.0, 0.0, 1.0));
        assert_abs_diff_eq!(straight.orientation.matrix(), Rotation3::identity().matrix(), epsilon = 1e-15);

        let q = tip_pose(BendState::new(0.0, FRAC_PI_2).unwrap(), &g).unwrap();
        let two_over_pi = 2.0 / PI;
        assert_abs_diff_eq!(q.position, Vector3::new(two_over_pi, 0.0, two_over_pi), epsilon = 1e-12);
        // Tip tangent is the rotated z-axis: horizontal, pointing along +x.
        assert_abs_diff_eq!(q.orientation * Vector3::z(), Vector3::x(), epsilon = 1e-12);

        let back = tip_pose(BendState::new(PI, FRAC_PI_2).unwrap(), &g).unwrap();
        assert_abs_diff_eq!(back.position, Vector3::new(-two_over_pi, 0.0, two_over_pi), epsilon = 1e-12);
    }

    #[test]
    fn tip_pose_is_continuous_at_series_switch() {
        let g = geom();
        let below = tip_pose(BendState::new(0.4, SMALL_BEND.next_down()).unwrap(), &g).unwrap();
        let above = tip_pose(BendState::new(0.4, SMALL_BEND).unwrap(), &g).unwrap();
        assert!((below.position - above.position).norm() < 1e-18);
    }

    #[test]
    fn backbone_examples() {
        let g = geom();
        let pts = backbone_points(BendState::STRAIGHT, &g, 3).unwrap();
        assert_eq!(pts, vec![Vector3::zeros(), Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, 1.0)]);

        let bend = BendState::new(0.0, FRAC_PI_2).unwrap();
        let pts = backbone_points(bend, &g, 2).unwrap();
        assert_eq!(pts[0], Vector3::zeros());
        assert_eq!(pts[1], tip_pose(bend, &g).unwrap().position);

        assert!(backbone_points(bend, &g, 1).is_err());
    }

    #[test]
    fn backbone_chords_never_exceed_arc_spacing() {
        let g = geom();
        for &(theta, phi) in &[(0.3, 0.349), (-2.0, 1.2), (3.0, 3.0)] {
            let n = 16;
            let pts = backbone_points(BendState::new(theta, phi).unwrap(), &g, n).unwrap();
            let step = g.backbone_length / (n - 1) as f64;
            for w in pts.windows(2) {
                assert!((w[1] - w[0]).norm() <= step + 1e-9);
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use std::f64::consts::{PI, TAU};

        const PHI_MAX: f64 = 0.349_065_850_398_865_9;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn deltas_sum_to_zero(theta in -PI..PI, phi in 0.0..PHI_MAX) {
                let d = cable_deltas(BendState::new(theta, phi).unwrap(), &geom()).unwrap();
                prop_assert!(d.sum().abs() < 1e-9);
            }

            #[test]
            fn inverse_round_trips(theta in -PI..PI, phi in SMALL_BEND..PHI_MAX) {
                let b = BendState::new(theta, phi).unwrap();
                let back = bend_from_deltas(cable_deltas(b, &geom()).unwrap(), &geom()).unwrap();
                prop_assert!((back.phi() - b.phi()).abs() < 1e-9);
                prop_assert!(wrap_angle(back.theta() - b.theta()).abs() < 1e-9);
            }

            #[test]
            fn a_third_turn_rotates_the_cables(theta in -PI..PI, phi in 0.0..PHI_MAX) {
                let a = cable_deltas(BendState::new(theta, phi).unwrap(), &geom()).unwrap().0;
                let b = cable_deltas(BendState::new(theta + TAU / 3.0, phi).unwrap(), &geom()).unwrap().0;
                for i in 0..3 {
                    prop_assert!((b[i] - a[(i + 2) % 3]).abs() < 1e-12);
                }
            }

            #[test]
            fn tip_stays_above_the_base(theta in -PI..PI, phi in 0.0..=PHI_MAX) {
                let p = tip_pose(BendState::new(theta, phi).unwrap(), &geom()).unwrap();
                prop_assert!(p.position.z > 0.0);
            }
        }
    }
}
