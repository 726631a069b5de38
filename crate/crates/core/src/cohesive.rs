//! Exponential cohesive law for the extrinsically inserted crack segments.
//!
//! Traction starts at the tensile strength the moment a segment is inserted
//! and decays exponentially with the normal opening; the integral of the
//! traction over a full opening equals the fracture energy. Openings are
//! resisted in mode I only; the faces carry no shear.

/// Sharpness of the contact branch at negative openings. The negative-opening
/// traction is `f_t ((1-c) e^{-x} + c (1-x))` with `x = delta f_t / Gc`: it
/// matches the softening exponential in value and slope at zero opening (C^1
/// everywhere), caps the transmissible tension near the strength (peak
/// `c ln(c/(c-1)) f_t`, about `1.07 f_t` for c = 8), and grows exponentially
/// compressive under deeper overlap, pushing the faces apart. Without the
/// cap, the raw exponential continued to negative openings transmits
/// unbounded tension across a freshly inserted segment and welds it shut.
const CONTACT_SHARPNESS: f64 = 8.0;

/// Normal traction (Pa) at a given opening (m). Positive traction resists
/// opening; overlapping faces are pushed apart.
pub fn cohesive_traction(opening: f64, strength: f64, fracture_energy: f64) -> f64 {
    let x = opening * strength / fracture_energy;
    if x >= 0.0 {
        strength * (-x).exp()
    } else {
        let c = CONTACT_SHARPNESS;
        strength * ((1.0 - c) * (-x).exp() + c * (1.0 - x))
    }
}

/// Derivative of the traction with respect to the opening (Pa/m).
pub fn cohesive_stiffness(opening: f64, strength: f64, fracture_energy: f64) -> f64 {
    let x = opening * strength / fracture_energy;
    let k = strength * strength / fracture_energy;
    if x >= 0.0 {
        -k * (-x).exp()
    } else {
        let c = CONTACT_SHARPNESS;
        k * ((c - 1.0) * (-x).exp() - c)
    }
}

/// Propagation test at a crack tip: the tip stress must strictly exceed the
/// (temperature-dependent) tensile strength.
pub fn check_propagation(normal_stress: f64, strength: f64) -> bool {
    normal_stress > strength
}

/// Characteristic process-zone length `E Gc / f_t^2`; elements along the path
/// must stay well below it for the cohesive zone to be resolved.
pub fn process_zone_length(youngs: f64, fracture_energy: f64, strength: f64) -> f64 {
    youngs * fracture_energy / (strength * strength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn traction_starts_at_strength_and_decays() {
        let (ft, gc) = (2.0e6, 10.0);
        assert_relative_eq!(cohesive_traction(0.0, ft, gc), ft, max_relative = 1e-14);
        // at the characteristic opening gc/ft the traction has dropped to 1/e
        let delta_c = gc / ft;
        assert_relative_eq!(
            cohesive_traction(delta_c, ft, gc),
            ft / std::f64::consts::E,
            max_relative = 1e-14
        );
    }

    #[test]
    fn contact_branch_is_compressive_for_overlap() {
        let (ft, gc) = (2.0e6, 10.0);
        // tension keeps rising smoothly just past zero opening...
        assert!(cohesive_traction(-1e-8, ft, gc) > ft);
        // ...but is capped at c ln(c/(c-1)) f_t everywhere
        let cap = ft * 8.0 * (8.0f64 / 7.0).ln();
        assert!(cap < 1.07 * ft);
        for i in 0..400 {
            let delta = -2.5e-8 * i as f64;
            assert!(cohesive_traction(delta, ft, gc) <= cap * (1.0 + 1e-12));
        }
        // deep overlap is strongly compressive (faces pushed apart) and
        // monotonically more so
        assert!(cohesive_traction(-1e-5, ft, gc) < -ft);
        assert!(cohesive_traction(-2e-5, ft, gc) < cohesive_traction(-1e-5, ft, gc));
    }

    #[test]
    fn stiffness_matches_finite_differences() {
        let (ft, gc) = (0.3e6, 10.0);
        let h = 1e-10;
        for &delta in &[0.0, 1e-6, 5e-5, 2e-4, -1e-7, -2e-6, -5e-5] {
            let fd = (cohesive_traction(delta + h, ft, gc) - cohesive_traction(delta - h, ft, gc))
                / (2.0 * h);
            assert_relative_eq!(
                cohesive_stiffness(delta, ft, gc),
                fd,
                max_relative = 1e-5
            );
        }
        assert_relative_eq!(
            cohesive_stiffness(0.0, ft, gc),
            -ft * ft / gc,
            max_relative = 1e-12
        );
    }

    #[test]
    fn propagation_requires_strictly_exceeding_strength() {
        assert!(!check_propagation(2.0e6, 2.0e6));
        assert!(check_propagation(2.0e6 + 1.0, 2.0e6));
        assert!(!check_propagation(-5.0e6, 2.0e6));
    }

    #[test]
    fn process_zone_examples() {
        // full-strength ice: 9 GPa, 10 J/m^2, 2 MPa
        assert_relative_eq!(
            process_zone_length(9.0e9, 10.0, 2.0e6),
            0.0225,
            max_relative = 1e-12
        );
        // degraded strength of 0.2 MPa widens the zone by 100x
        assert_relative_eq!(
            process_zone_length(9.0e9, 10.0, 0.2e6),
            2.25,
            max_relative = 1e-12
        );
    }

    proptest! {
        /// Dissipated energy up to any opening never exceeds the fracture
        /// energy and approaches it as the opening grows.
        #[test]
        fn dissipation_bounded_by_fracture_energy(
            ft in 1.0e5..5.0e6f64,
            gc in 1.0..50.0f64,
            delta_rel in 0.01..30.0f64,
        ) {
            let delta = delta_rel * gc / ft;
            // closed form of the integral of the traction from 0 to delta
            let work = gc * (1.0 - (-delta * ft / gc).exp());
            prop_assert!(work <= gc);
            // numeric quadrature agrees with the closed form
            let n = 2000;
            let h = delta / n as f64;
            let mut num = 0.0;
            for i in 0..n {
                let mid = (i as f64 + 0.5) * h;
                num += cohesive_traction(mid, ft, gc) * h;
            }
            prop_assert!((num - work).abs() < 1e-4 * gc);
            if delta_rel > 20.0 {
                prop_assert!((work - gc).abs() < 1e-8 * gc);
            }
        }
    }
}
