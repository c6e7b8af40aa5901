//! Hitting probabilities, Green function, expected exit times and occupation
//! functionals on compact subwindows of the state space.
//!
//! Everything here is a direct evaluation of scale/speed formulas:
//!
//! ```text
//! P_x(hit b before a)  = (s(x) - s(a)) / (s(b) - s(a))
//! G_I(x, y)            = 2 (min(s(x),s(y)) - s(a)) (s(b) - max(s(x),s(y))) / (s(b) - s(a))
//! E_x[exit time of I]  = int G_I(x, y) m(dy)
//! E_x[int f(X) dt]     = int G_I(x, y) f(y) m(dy)
//! ```
//!
//! The factor 2 in the Green function belongs to the speed normalization
//! `m(dx) = dx/(s' sigma^2)`; the Brownian exit time `x(1-x)` out of `(0, 1)`
//! pins the convention.

use thiserror::Error;

use crate::model::{Interval, Mass, RealFn, Side};
use crate::quad::{self, QuadError, Tolerances};
use crate::scale_speed::ScaleSpeed;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("x = {x} lies outside the open window ({a}, {b})")]
    OutsideWindow { x: f64, a: f64, b: f64 },
    #[error("window [{a}, {b}] is not contained in the state space")]
    WindowOutsideDomain { a: f64, b: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("occupation weight is negative at y = {at}: f = {value}")]
    NegativeFunction { at: f64, value: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// A compact window `[a, b]` inside the state space `J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactWindow {
    a: f64,
    b: f64,
}

impl CompactWindow {
    pub fn new(a: f64, b: f64, domain: Interval) -> Result<Self, PotentialError> {
        if !(a < b) || !a.is_finite() || !b.is_finite() || !domain.contains(a) || !domain.contains(b) {
            return Err(PotentialError::WindowOutsideDomain { a, b });
        }
        Ok(CompactWindow { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn contains_open(&self, x: f64) -> bool {
        self.a < x && x < self.b
    }
}

/// `P_x(tau_b < tau_a)` for `x` inside the window.
pub fn hitting_probability(ss: &ScaleSpeed, x: f64, window: &CompactWindow) -> Result<f64, PotentialError> {
    if !window.contains_open(x) {
        return Err(PotentialError::OutsideWindow { x, a: window.a, b: window.b });
    }
    let sa = ss.s(window.a);
    let sb = ss.s(window.b);
    let p = (ss.s(x) - sa) / (sb - sa);
    Ok(p.clamp(0.0, 1.0))
}

/// Green function of the diffusion killed at the window edges. Symmetric in
/// `(x, y)` and zero outside the open window.
pub fn green_function(ss: &ScaleSpeed, window: &CompactWindow, x: f64, y: f64) -> f64 {
    if !window.contains_open(x) || !window.contains_open(y) {
        return 0.0;
    }
    let sa = ss.s(window.a);
    let sb = ss.s(window.b);
    let sx = ss.s(x);
    let sy = ss.s(y);
    let lo = sx.min(sy);
    let hi = sx.max(sy);
    2.0 * (lo - sa) * (sb - hi) / (sb - sa)
}

fn occupation_quadrature(
    ss: &ScaleSpeed,
    window: &CompactWindow,
    x: f64,
    weight: &dyn RealFn,
    check_sign: bool,
) -> Result<f64, PotentialError> {
    if !window.contains_open(x) {
        return Err(PotentialError::OutsideWindow { x, a: window.a, b: window.b });
    }
    let tol = Tolerances::new(1e-11, 1e-14);
    let sa = ss.s(window.a);
    let sb = ss.s(window.b);
    let sx = ss.s(x);
    let span = sb - sa;

    let neg = std::cell::Cell::new((0.0f64, 0.0f64));
    // G(x, .) has a kink at x; integrate the two smooth pieces separately.
    // On each piece the min/max in the Green function is already resolved.
    let left_piece = |y: f64| {
        let w = weight.eval(y);
        if w < neg.get().0 {
            neg.set((w, y));
        }
        2.0 * (ss.s(y) - sa) * (sb - sx) / span * w * ss.density(y)
    };
    let right_piece = |y: f64| {
        let w = weight.eval(y);
        if w < neg.get().0 {
            neg.set((w, y));
        }
        2.0 * (sx - sa) * (sb - ss.s(y)) / span * w * ss.density(y)
    };
    let left = quad::integrate_compact(&left_piece, window.a, x, tol)?;
    let right = quad::integrate_compact(&right_piece, x, window.b, tol)?;
    if check_sign {
        let (v, at) = neg.get();
        if v < -1e-12 {
            return Err(PotentialError::NegativeFunction { at, value: v });
        }
    }
    Ok((left.value + right.value).max(0.0))
}

/// `E_x[tau_a ^ tau_b]`: quadrature of the Green function against the speed
/// measure. The window edges carry no mass (the Green function vanishes
/// there), so boundary atoms never enter.
pub fn expected_exit_time(ss: &ScaleSpeed, window: &CompactWindow, x: f64) -> Result<f64, PotentialError> {
    occupation_quadrature(ss, window, x, &|_y: f64| 1.0, false)
}

/// Expected occupation functional `E_x[int_0^tau f(X_t) dt]` for `f >= 0`.
pub fn expected_occupation(
    ss: &ScaleSpeed,
    window: &CompactWindow,
    x: f64,
    f: &dyn RealFn,
) -> Result<f64, PotentialError> {
    occupation_quadrature(ss, window, x, f, true)
}

/// Expected time spent at a regular left boundary before reaching `a`,
/// started at the boundary: `2 s(a) m({0})` with the scale re-normalized to
/// vanish at the boundary. Infinite when the boundary is absorbing.
pub fn boundary_occupation(ss: &ScaleSpeed, a: f64) -> Result<f64, PotentialError> {
    let left = ss.domain.left();
    if !left.is_finite() {
        return Err(PotentialError::Precondition(format!(
            "left boundary {left} is not finite, so it cannot be regular"
        )));
    }
    if !(a > left) || !ss.domain.interior_contains(a) {
        return Err(PotentialError::Precondition(format!("a = {a} must lie in the interior above {left}")));
    }
    let opts = crate::classify::ClassifyOptions::default();
    let c = crate::classify::default_reference_point(ss)
        .map_err(|e| PotentialError::Precondition(e.to_string()))?;
    let class = crate::classify::classify_side(ss, Side::Left, c, &opts)?;
    match class.kind {
        Some(crate::model::BoundaryKind::Regular(_)) => {}
        other => {
            return Err(PotentialError::Precondition(format!(
                "left boundary must be regular, classified as {other:?}"
            )))
        }
    }
    let mass = match ss.atoms.get(Side::Left) {
        Some(m) => m,
        // Classification already defaulted a missing atom to absorbing.
        None => Mass::Infinite,
    };
    // Scale displacement s(a) - s(0+); finite at a regular boundary.
    let improper = quad::ImproperOpts::default();
    let deriv = |x: f64| ss.s_prime(x);
    let tail = quad::integrate_improper(&deriv, a, quad::Endpoint::Finite(left), &improper)?;
    let displacement = match tail {
        quad::DivergenceVerdict::Finite { value, .. } => value,
        other => {
            return Err(PotentialError::Precondition(format!(
                "scale does not converge at the regular boundary ({other:?})"
            )))
        }
    };
    Ok(match mass {
        Mass::Infinite => f64::INFINITY,
        Mass::Finite(m) => 2.0 * displacement * m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lookup, BoundaryAtoms, CoefficientSpec, DiffusionSpec};
    use crate::scale_speed::ScaleSpeed;

    fn scale_speed(name: &str, c: f64) -> ScaleSpeed {
        ScaleSpeed::from_spec(&lookup(name, None).unwrap(), Some(c)).unwrap()
    }

    #[test]
    fn bm_hitting_probability_is_linear() {
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        for x in [0.1, 0.25, 0.5, 0.9] {
            let p = hitting_probability(&bm, x, &w).unwrap();
            assert!((p - x).abs() < 1e-12, "p({x}) = {p}");
        }
        assert!(hitting_probability(&bm, 1.5, &w).is_err());
    }

    #[test]
    fn bes3_hitting_probability_from_closed_form_scale() {
        // s(x) = -1/x up to affine maps: P_1.5(hit 2 before 1) = 2/3.
        let bes3 = scale_speed("bes3", 1.0);
        let w = CompactWindow::new(1.0, 2.0, bes3.domain).unwrap();
        let p = hitting_probability(&bes3, 1.5, &w).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn hitting_probability_vanishes_toward_lower_edge() {
        let gbm = scale_speed("gbm", 1.0);
        let w = CompactWindow::new(1.0, 2.0, gbm.domain).unwrap();
        let mut last = 1.0;
        for x in [1.5, 1.25, 1.1, 1.01, 1.001] {
            let p = hitting_probability(&gbm, x, &w).unwrap();
            assert!(p < last, "not monotone at {x}");
            last = p;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn green_function_values_and_symmetry() {
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        assert!((green_function(&bm, &w, 0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!((green_function(&bm, &w, 0.25, 0.75) - 0.125).abs() < 1e-12);
        assert_eq!(green_function(&bm, &w, 0.0, 0.5), 0.0);
        assert_eq!(green_function(&bm, &w, 0.5, 1.0), 0.0);
        assert_eq!(green_function(&bm, &w, -0.3, 0.5), 0.0);
        // Exact symmetry.
        for (x, y) in [(0.2, 0.9), (0.4, 0.41), (0.15, 0.5)] {
            assert_eq!(green_function(&bm, &w, x, y), green_function(&bm, &w, y, x));
        }
    }

    #[test]
    fn bm_exit_time_matches_closed_form() {
        // Symbolic integration of the Green formula gives (x-a)(b-x) on (0,1).
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        for x in [0.1, 0.3, 0.5, 0.77] {
            let t = expected_exit_time(&bm, &w, x).unwrap();
            assert!((t - x * (1.0 - x)).abs() < 1e-10, "E[tau]({x}) = {t}");
        }
    }

    #[test]
    fn exit_time_vanishes_at_the_edge() {
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        let mut last = f64::INFINITY;
        for x in [0.5, 0.1, 0.01, 0.001] {
            let t = expected_exit_time(&bm, &w, x).unwrap();
            assert!(t < last);
            last = t;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn occupation_reduces_to_exit_time_and_zero() {
        let gbm = scale_speed("gbm", 1.0);
        let w = CompactWindow::new(1.0, 2.0, gbm.domain).unwrap();
        let x = 1.4;
        let occ_one = expected_occupation(&gbm, &w, x, &|_y: f64| 1.0).unwrap();
        let exit = expected_exit_time(&gbm, &w, x).unwrap();
        assert!((occ_one - exit).abs() <= 1e-10 * exit.max(1.0), "{occ_one} vs {exit}");
        let occ_zero = expected_occupation(&gbm, &w, x, &|_y: f64| 0.0).unwrap();
        assert_eq!(occ_zero, 0.0);
    }

    #[test]
    fn bm_weighted_occupation_piecewise_polynomial_oracle() {
        // int G(1/2, y) y dy = 1/24 + 1/12 = 1/8 by integrating the two
        // linear pieces of the Green function against y.
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        let v = expected_occupation(&bm, &w, 0.5, &|y: f64| y).unwrap();
        assert!((v - 0.125).abs() < 1e-10, "v = {v}");
    }

    #[test]
    fn occupation_rejects_negative_weights() {
        let bm = scale_speed("bm", 0.0);
        let w = CompactWindow::new(0.0, 1.0, bm.domain).unwrap();
        let err = expected_occupation(&bm, &w, 0.5, &|y: f64| 0.25 - y).unwrap_err();
        assert!(matches!(err, PotentialError::NegativeFunction { .. }));
    }

    #[test]
    fn boundary_occupation_by_atom_mass() {
        // Instantaneous reflection: zero time at the boundary.
        let reflected = ScaleSpeed::from_spec(&lookup("bm-reflected", None).unwrap(), Some(1.0)).unwrap();
        assert_eq!(boundary_occupation(&reflected, 1.0).unwrap(), 0.0);

        // Sticky boundary with mass 1/2 and a = 2: 2 * 2 * 0.5 = 2.
        let sticky = DiffusionSpec::from_coefficients(
            "sticky-bm",
            CoefficientSpec::parse("0", "1", Interval::new(0.0, f64::INFINITY, true, false).unwrap())
                .unwrap(),
            BoundaryAtoms { left: Some(Mass::Finite(0.5)), right: None },
        );
        let sticky = ScaleSpeed::from_spec(&sticky, Some(1.0)).unwrap();
        let t = boundary_occupation(&sticky, 2.0).unwrap();
        assert!((t - 2.0).abs() < 1e-9, "t = {t}");

        // Absorption: infinite expected time at the boundary.
        let absorbed = ScaleSpeed::from_spec(&lookup("bm-absorbed", None).unwrap(), Some(1.0)).unwrap();
        assert_eq!(boundary_occupation(&absorbed, 1.0).unwrap(), f64::INFINITY);

        // Natural boundary: precondition violation.
        let gbm = scale_speed("gbm", 1.0);
        assert!(matches!(boundary_occupation(&gbm, 1.0), Err(PotentialError::Precondition(_))));
    }

    #[test]
    fn window_validation() {
        let gbm = scale_speed("gbm", 1.0);
        assert!(CompactWindow::new(0.0, 1.0, gbm.domain).is_err()); // 0 not in (0, inf)
        assert!(CompactWindow::new(2.0, 1.0, gbm.domain).is_err());
        assert!(CompactWindow::new(1.0, f64::INFINITY, gbm.domain).is_err());
        assert!(CompactWindow::new(0.5, 4.0, gbm.domain).is_ok());
    }
}
