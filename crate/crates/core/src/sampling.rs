//! Sampling arithmetic for continuous 1D synthetic-aperture scans.
//!
//! A drone flies a straight line at constant speed, recording single images
//! every `d_i` meters and computing an integral image every `t_p` seconds.
//! Everything here is a closed-form function of [`FlightParams`]; the
//! composed result is a [`SamplingPlan`]. Lengths are meters, times seconds,
//! angles degrees at the interface.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Relative slack used when flooring ratios that are integers in exact arithmetic
/// (27.6 / 0.92 must yield 30, not 29).
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightParams {
    /// Flying speed, m/s.
    pub v_f: f64,
    /// Processing time per integral, s.
    pub t_p: f64,
    /// Imaging time per frame, s.
    pub t_i: f64,
    /// Altitude above ground level, m.
    pub h: f64,
    /// Full field of view, degrees.
    pub fov: f64,
    /// Sampling distance of single images within an integral, m.
    pub d_i: f64,
}

impl Default for FlightParams {
    fn default() -> Self {
        FlightParams {
            v_f: 4.0,
            t_p: 0.5,
            t_i: 1.0 / 30.0,
            h: 35.0,
            fov: 43.10,
            d_i: 0.92,
        }
    }
}

impl FlightParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("flying speed v_f", self.v_f)?;
        ensure_positive("processing time t_p", self.t_p)?;
        ensure_positive("imaging time t_i", self.t_i)?;
        ensure_positive("altitude h", self.h)?;
        ensure_positive("single-image spacing d_i", self.d_i)?;
        check_fov(self.fov)
    }

    /// Ground distance between consecutive camera frames, `v_f * t_i`.
    pub fn frame_spacing(&self) -> f64 {
        self.v_f * self.t_i
    }
}

/// Advisory conditions of a plan. They are data, never printed by the library.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanWarnings {
    /// `o_f < 1`: parts of the ground are never covered by any integral.
    pub gap: bool,
    /// `d_f < d_i`: consecutive integrals may be computed from the same images.
    pub stale_integrals: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub params: FlightParams,
    /// Spacing between consecutive integrals, m.
    pub d_f: f64,
    /// Ground coverage of one integral, m.
    pub c_f: f64,
    /// Overlap factor: how many integrals see each ground point.
    pub o_f: f64,
    /// Single images per integral (sampling density).
    pub n: usize,
    /// Time to record the images of one integral, s.
    pub t_f: f64,
    /// Worst-case pose interpolation error, m.
    pub e_i_max: f64,
    pub warnings: PlanWarnings,
}

impl SamplingPlan {
    /// `⌈o_f⌉`, the number of integrals after which a ground cell has left the view.
    pub fn overlap_ceil(&self) -> usize {
        ceil_with_slack(self.o_f)
    }

    pub fn overlap_floor(&self) -> usize {
        floor_with_slack(self.o_f)
    }
}

fn check_fov(fov: f64) -> Result<()> {
    if fov.is_finite() && fov > 0.0 && fov < 180.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("field of view must lie in (0, 180) degrees, got {fov}")))
    }
}

pub(crate) fn floor_with_slack(x: f64) -> usize {
    (x * (1.0 + FLOOR_SLACK)).floor().max(0.0) as usize
}

pub(crate) fn ceil_with_slack(x: f64) -> usize {
    (x * (1.0 - FLOOR_SLACK)).ceil().max(0.0) as usize
}

/// Distance between two subsequent integrals: `d_f = v_f * t_p`.
pub fn integral_spacing(v_f: f64, t_p: f64) -> Result<f64> {
    ensure_positive("flying speed v_f", v_f)?;
    ensure_positive("processing time t_p", t_p)?;
    Ok(v_f * t_p)
}

/// Ground coverage of an integral: `c_f = 2 h tan(fov / 2)`.
pub fn ground_coverage(h: f64, fov_deg: f64) -> Result<f64> {
    ensure_positive("altitude h", h)?;
    check_fov(fov_deg)?;
    Ok(2.0 * h * (fov_deg.to_radians() / 2.0).tan())
}

/// Overlap factor `o_f = c_f / d_f` and whether it leaves imaging gaps (`o_f < 1`).
pub fn overlap_factor(c_f: f64, d_f: f64) -> Result<(f64, bool)> {
    ensure_positive("ground coverage c_f", c_f)?;
    ensure_positive("integral spacing d_f", d_f)?;
    let o_f = c_f / d_f;
    Ok((o_f, o_f < 1.0))
}

/// Number of single images per integral, `N = ⌊c_f / d_i⌋`, at least 1.
pub fn sampling_density(c_f: f64, d_i: f64) -> Result<usize> {
    ensure_positive("ground coverage c_f", c_f)?;
    ensure_positive("single-image spacing d_i", d_i)?;
    Ok(floor_with_slack(c_f / d_i).max(1))
}

/// Time needed to record all images of one integral: `t_f = c_f / v_f`.
pub fn integration_time(c_f: f64, v_f: f64) -> Result<f64> {
    ensure_positive("ground coverage c_f", c_f)?;
    ensure_positive("flying speed v_f", v_f)?;
    Ok(c_f / v_f)
}

/// Sampling distance at altitude `h_2` giving the same image disparity as `d_i1` at `h_1`.
pub fn altitude_scaled_spacing(d_i1: f64, h_1: f64, h_2: f64) -> Result<f64> {
    ensure_positive("sampling distance d_i1", d_i1)?;
    ensure_positive("altitude h_1", h_1)?;
    ensure_positive("altitude h_2", h_2)?;
    Ok(d_i1 * h_2 / h_1)
}

/// Largest position error from linearly interpolating GPS fixes to a frame
/// captured with an unknown delay within one imaging interval:
/// `E_max = v_f * t_i / 2`. The fix rate deliberately does not appear.
pub fn interpolation_error(v_f: f64, t_i: f64) -> Result<f64> {
    if !(v_f.is_finite() && v_f >= 0.0) {
        return Err(Error::domain(format!("flying speed must be non-negative, got {v_f}")));
    }
    ensure_positive("imaging time t_i", t_i)?;
    Ok(v_f * t_i / 2.0)
}

pub fn make_plan(params: FlightParams) -> Result<SamplingPlan> {
    params.validate()?;
    let d_f = integral_spacing(params.v_f, params.t_p)?;
    let c_f = ground_coverage(params.h, params.fov)?;
    let (o_f, gap) = overlap_factor(c_f, d_f)?;
    let n = sampling_density(c_f, params.d_i)?;
    let t_f = integration_time(c_f, params.v_f)?;
    let e_i_max = interpolation_error(params.v_f, params.t_i)?;
    Ok(SamplingPlan {
        params,
        d_f,
        c_f,
        o_f,
        n,
        t_f,
        e_i_max,
        warnings: PlanWarnings {
            gap,
            stale_integrals: d_f < params.d_i,
        },
    })
}

/// Plans for each speed in `speeds`, everything else taken from `base`.
pub fn sweep_speeds(base: FlightParams, speeds: &[f64]) -> Result<Vec<SamplingPlan>> {
    speeds
        .iter()
        .map(|&v_f| make_plan(FlightParams { v_f, ..base }))
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn operating_point(v_f: f64) -> FlightParams {
        FlightParams { v_f, fov: 43.0, ..FlightParams::default() }
    }

    #[test]
    fn spacing_examples() {
        assert_relative_eq!(integral_spacing(1.0, 0.5).unwrap(), 0.5);
        assert_relative_eq!(integral_spacing(10.0, 0.5).unwrap(), 5.0);
        assert!(integral_spacing(4.0, 1e-12).unwrap() < 1e-10);
        assert!(integral_spacing(0.0, 0.5).is_err());
        assert!(integral_spacing(4.0, -1.0).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert!((ground_coverage(35.0, 43.0).unwrap() - 27.6).abs() <= 0.1);
        assert!((ground_coverage(30.0, 43.10).unwrap() - 23.69).abs() <= 0.05);
        assert!(ground_coverage(35.0, 1e-9).unwrap() < 1e-8);
        assert!(ground_coverage(35.0, 180.0).is_err());
        assert!(ground_coverage(35.0, 0.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        assert_relative_eq!(overlap_factor(27.6, 2.0).unwrap().0, 13.8);
        assert_relative_eq!(overlap_factor(27.6, 0.5).unwrap().0, 55.2);
        assert_eq!(overlap_factor(3.0, 3.0).unwrap(), (1.0, false));
        assert!(overlap_factor(2.9, 3.0).unwrap().1);
        assert!(overlap_factor(27.6, 0.0).is_err());
    }

    #[test]
    fn density_examples() {
        assert_eq!(sampling_density(27.6, 0.92).unwrap(), 30);
        assert_eq!(sampling_density(4.2, 4.2).unwrap(), 1);
        assert_eq!(sampling_density(27.6, 1.0).unwrap(), 27);
        assert_eq!(sampling_density(0.5, 1.0).unwrap(), 1);
    }

    #[test]
    fn time_and_altitude_examples() {
        assert_relative_eq!(integration_time(27.6, 1.0).unwrap(), 27.6);
        assert_relative_eq!(integration_time(27.6, 10.0).unwrap(), 2.76);
        assert!(integration_time(27.6, 0.0).is_err());
        assert!((altitude_scaled_spacing(1.0, 35.0, 1000.0).unwrap() - 28.57).abs() < 0.01);
        assert_relative_eq!(altitude_scaled_spacing(2.0, 35.0, 35.0).unwrap(), 2.0);
        assert_relative_eq!(altitude_scaled_spacing(2.0, 35.0, 70.0).unwrap(), 4.0);
    }

    #[test]
    fn interpolation_error_examples() {
        assert!((interpolation_error(1.0, 1.0 / 30.0).unwrap() - 0.016_67).abs() < 1e-4);
        assert!((interpolation_error(10.0, 1.0 / 30.0).unwrap() - 0.166_7).abs() < 1e-4);
        assert_eq!(interpolation_error(0.0, 1.0 / 30.0).unwrap(), 0.0);
        assert!(interpolation_error(-1.0, 1.0 / 30.0).is_err());
    }

    #[test]
    fn plan_at_six_meters_per_second() {
        let plan = make_plan(FlightParams { v_f: 6.0, ..FlightParams::default() }).unwrap();
        assert_relative_eq!(plan.d_f, 3.0);
        assert!((plan.c_f - 27.6).abs() / 27.6 < 0.01);
        assert!((plan.o_f - 9.2).abs() / 9.2 < 0.01);
        assert_eq!(plan.n, 30);
        assert!((plan.t_f - 4.6).abs() / 4.6 < 0.01);
        assert_relative_eq!(plan.e_i_max, 0.1, max_relative = 1e-12);
        assert_eq!(plan.warnings, PlanWarnings::default());
    }

    #[test]
    fn gap_warning_boundary() {
        let fast = make_plan(operating_point(30.0)).unwrap();
        assert!((fast.o_f - 1.84).abs() < 0.01);
        assert!(!fast.warnings.gap);
        let faster = make_plan(operating_point(60.0)).unwrap();
        assert!((faster.o_f - 0.92).abs() < 0.01);
        assert!(faster.warnings.gap);
    }

    #[test]
    fn degenerate_single_image_integral() {
        let c_f = ground_coverage(35.0, 43.0).unwrap();
        let plan = make_plan(FlightParams { d_i: c_f, ..operating_point(4.0) }).unwrap();
        assert_eq!(plan.n, 1);
    }

    #[test]
    fn stale_integral_warning() {
        let plan = make_plan(FlightParams { v_f: 1.0, d_i: 0.92, ..FlightParams::default() }).unwrap();
        assert!(plan.warnings.stale_integrals);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = FlightParams { fov: 200.0, ..FlightParams::default() };
        assert!(matches!(make_plan(bad), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn overlap_times_spacing_closes(v in 0.1f64..40.0, tp in 0.05f64..3.0, h in 5.0f64..500.0, fov in 5.0f64..120.0) {
            let plan = make_plan(FlightParams { v_f: v, t_p: tp, h, fov, ..FlightParams::default() }).unwrap();
            prop_assert!((plan.o_f * plan.d_f - plan.c_f).abs() <= 1e-9 * plan.c_f);
        }

        #[test]
        fn faster_flight_means_less_overlap(v in 0.1f64..40.0, dv in 0.01f64..10.0, tp in 0.05f64..3.0) {
            let slow = make_plan(FlightParams { v_f: v, t_p: tp, ..FlightParams::default() }).unwrap();
            let fast = make_plan(FlightParams { v_f: v + dv, t_p: tp, ..FlightParams::default() }).unwrap();
            prop_assert!(fast.d_f > slow.d_f);
            prop_assert!(fast.o_f < slow.o_f);
        }

        #[test]
        fn overlap_and_time_are_linear_in_altitude(h in 5.0f64..500.0, k in 1.1f64..5.0) {
            let low = make_plan(FlightParams { h, ..FlightParams::default() }).unwrap();
            let high = make_plan(FlightParams { h: h * k, ..FlightParams::default() }).unwrap();
            prop_assert!((high.c_f / low.c_f - k).abs() < 1e-9);
            prop_assert!((high.o_f / low.o_f - k).abs() < 1e-9);
            prop_assert!((high.t_f / low.t_f - k).abs() < 1e-9);
        }

        #[test]
        fn altitude_scaling_round_trips(d in 0.01f64..100.0, h1 in 1.0f64..2000.0, h2 in 1.0f64..2000.0) {
            let there = altitude_scaled_spacing(d, h1, h2).unwrap();
            let back = altitude_scaled_spacing(there, h2, h1).unwrap();
            prop_assert!((back - d).abs() <= 1e-12 * d);
        }
    }
}
