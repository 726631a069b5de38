//! Plane-strain elasticity, Glen's-law creep, temperature-dependent material
//! properties, and the Maxwell-time diagnostic.
//!
//! Stress and strain are stored as 4-component vectors `[xx, yy, zz, xy]`
//! under the plane-strain assumption, with engineering shear for the strain.

use nalgebra::{Matrix4, Vector4};
use std::path::Path;

use crate::error::SimError;

/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314;

/// Celsius offset of the Kelvin scale.
pub const KELVIN_OFFSET: f64 = 273.15;

/// Bulk material constants for one solid layer (ice or rock).
#[derive(Debug, Clone, Copy)]
pub struct SolidProperties {
    /// Young's modulus, Pa.
    pub youngs: f64,
    /// Poisson ratio.
    pub poisson: f64,
    /// Density, kg/m^3.
    pub density: f64,
    /// Reference creep coefficient at `t_ref`, 1/(Pa^3 s). Zero for rock.
    pub creep_a0: f64,
    /// Creep activation energy, J/mol.
    pub creep_q: f64,
    /// Glen's law exponent.
    pub creep_n: f64,
    /// Reference temperature for the creep coefficient, K.
    pub t_ref: f64,
    /// Thermal conductivity, W/(m degC).
    pub conductivity: f64,
    /// Specific heat capacity, J/(kg degC).
    pub heat_capacity: f64,
    /// Reference tensile strength at 0 degC, Pa.
    pub strength_ref: f64,
    /// Strength increase per degree of cooling, Pa/K.
    pub strength_deg: f64,
    /// Fracture release energy, J/m^2.
    pub fracture_energy: f64,
    /// Latent heat of fusion, J/kg.
    pub latent_heat: f64,
}

impl SolidProperties {
    /// Glacier ice.
    pub fn ice() -> Self {
        SolidProperties {
            youngs: 9.0e9,
            poisson: 0.33,
            density: 910.0,
            creep_a0: 5.0e-24,
            creep_q: 150.0e3,
            creep_n: 3.0,
            t_ref: 273.15,
            conductivity: 2.0,
            heat_capacity: 2115.0,
            strength_ref: 2.0e6,
            strength_deg: 6.8e4,
            fracture_energy: 10.0,
            latent_heat: 335.0e3,
        }
    }

    /// Bedrock. Linear elastic, no creep.
    pub fn rock() -> Self {
        SolidProperties {
            youngs: 20.0e9,
            poisson: 0.25,
            density: 2500.0,
            creep_a0: 0.0,
            creep_q: 0.0,
            creep_n: 1.0,
            t_ref: 273.15,
            conductivity: 2.0,
            heat_capacity: 770.0,
            strength_ref: 2.0e6,
            strength_deg: 0.0,
            fracture_energy: 10.0,
            latent_heat: 335.0e3,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.youngs <= 0.0 || !(0.0..0.5).contains(&self.poisson) || self.density <= 0.0 {
            return Err(SimError::Domain(format!(
                "invalid solid properties: E={}, nu={}, rho={}",
                self.youngs, self.poisson, self.density
            )));
        }
        if self.creep_a0 < 0.0 || self.creep_n < 1.0 {
            return Err(SimError::Domain("creep parameters out of range".into()));
        }
        Ok(())
    }
}

/// Piecewise-linear ice temperature against depth below the surface.
#[derive(Debug, Clone)]
pub struct TemperatureProfile {
    /// (depth m, temperature degC), depths strictly increasing from 0.
    rows: Vec<(f64, f64)>,
}

impl TemperatureProfile {
    pub fn constant(t_celsius: f64) -> Self {
        TemperatureProfile {
            rows: vec![(0.0, t_celsius)],
        }
    }

    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if rows.is_empty() {
            return Err(SimError::Domain("empty temperature profile".into()));
        }
        for pair in rows.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(SimError::Domain(
                    "temperature profile depths must be strictly increasing".into(),
                ));
            }
        }
        if rows.iter().any(|&(_, t)| t > 0.0) {
            return Err(SimError::Domain(
                "temperature profile must not exceed 0 degC".into(),
            ));
        }
        Ok(TemperatureProfile { rows })
    }

    /// Load from a two-column text file (depth_m, T_degC). `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64, SimError> {
                tok.and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| SimError::Config {
                        line: i + 1,
                        msg: format!("expected two numeric columns, got '{line}'"),
                    })
            };
            let depth = parse(cols.next())?;
            let temp = parse(cols.next())?;
            rows.push((depth, temp));
        }
        TemperatureProfile::new(rows)
    }

    /// Temperature in degC at a given depth below the ice surface.
    pub fn at_depth(&self, depth: f64) -> f64 {
        let rows = &self.rows;
        if depth <= rows[0].0 {
            return rows[0].1;
        }
        for pair in rows.windows(2) {
            let (d0, t0) = pair[0];
            let (d1, t1) = pair[1];
            if depth <= d1 {
                return t0 + (t1 - t0) * (depth - d0) / (d1 - d0);
            }
        }
        rows.last().unwrap().1
    }
}

/// Isotropic plane-strain stiffness matrix for the `[xx, yy, zz, xy]` vector
/// convention with engineering shear.
pub fn plane_strain_stiffness(youngs: f64, poisson: f64) -> Result<Matrix4<f64>, SimError> {
    if youngs <= 0.0 || poisson < 0.0 || poisson >= 0.5 {
        return Err(SimError::Domain(format!(
            "plane-strain stiffness needs E>0 and 0<=nu<0.5, got E={youngs}, nu={poisson}"
        )));
    }
    let c = youngs / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let d = c * (1.0 - poisson);
    let o = c * poisson;
    let g = youngs / (2.0 * (1.0 + poisson));
    Ok(Matrix4::new(
        d, o, o, 0.0, //
        o, d, o, 0.0, //
        o, o, d, 0.0, //
        0.0, 0.0, 0.0, g,
    ))
}

/// Arrhenius temperature dependence of the creep coefficient. `t_kelvin` in K.
pub fn creep_coefficient(props: &SolidProperties, t_kelvin: f64) -> f64 {
    assert!(t_kelvin > 0.0, "temperature must be positive Kelvin");
    props.creep_a0
        * (-props.creep_q / GAS_CONSTANT * (1.0 / t_kelvin - 1.0 / props.t_ref)).exp()
}

/// Tensile strength at a given ice temperature in degC. Strength increases as
/// the ice gets colder.
pub fn tensile_strength(props: &SolidProperties, t_celsius: f64) -> f64 {
    props.strength_ref - props.strength_deg * t_celsius
}

/// Stress from total strain and viscous strain history.
pub fn stress(
    stiffness: &Matrix4<f64>,
    strain_total: &Vector4<f64>,
    strain_viscous: &Vector4<f64>,
) -> Vector4<f64> {
    stiffness * (strain_total - strain_viscous)
}

/// Deviatoric projection of a `[xx, yy, zz, xy]` stress vector.
pub fn deviatoric(sigma: &Vector4<f64>) -> Vector4<f64> {
    let mean = (sigma[0] + sigma[1] + sigma[2]) / 3.0;
    Vector4::new(sigma[0] - mean, sigma[1] - mean, sigma[2] - mean, sigma[3])
}

/// Glen's-law strain rate for a given stress.
fn glen_rate(sigma: &Vector4<f64>, a: f64, n: f64) -> Vector4<f64> {
    let dev = deviatoric(sigma);
    let s2 = dev.dot(&dev);
    if s2 == 0.0 {
        return Vector4::zeros();
    }
    dev * (a * s2.powf((n - 1.0) / 2.0))
}

/// Derivative of `glen_rate` with respect to stress.
fn glen_rate_dsigma(sigma: &Vector4<f64>, a: f64, n: f64) -> Matrix4<f64> {
    // P projects onto the deviatoric subspace.
    let third = 1.0 / 3.0;
    #[rustfmt::skip]
    let proj = Matrix4::new(
        1.0 - third, -third, -third, 0.0,
        -third, 1.0 - third, -third, 0.0,
        -third, -third, 1.0 - third, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let dev = deviatoric(sigma);
    let s2 = dev.dot(&dev);
    if s2 == 0.0 {
        // rate is identically zero in a neighbourhood only for n>1; for n=1 the
        // derivative is a*P.
        if (n - 1.0).abs() < 1e-14 {
            return proj * a;
        }
        return Matrix4::zeros();
    }
    let scale = a * s2.powf((n - 1.0) / 2.0);
    let outer = dev * dev.transpose() * (a * (n - 1.0) * s2.powf((n - 3.0) / 2.0));
    (Matrix4::identity() * scale + outer) * proj
}

const RETURN_MAP_MAX_ITER: usize = 50;
const RETURN_MAP_TOL: f64 = 1e-12;

/// Implicit local update of the viscous strain over one time increment.
///
/// Solves `eps_v_new = eps_v_old + dt * glen_rate(sigma(eps_v_new))` with the
/// stress evaluated from `stiffness * (strain_total - eps_v_new)`.
pub fn update_viscous_strain(
    strain_total: &Vector4<f64>,
    eps_v_old: &Vector4<f64>,
    stiffness: &Matrix4<f64>,
    a: f64,
    n: f64,
    dt: f64,
) -> Result<Vector4<f64>, SimError> {
    assert!(dt > 0.0);
    if a == 0.0 {
        return Ok(*eps_v_old);
    }
    let mut eps_v = *eps_v_old;
    let scale = 1.0_f64.max(eps_v_old.norm());
    for _ in 0..RETURN_MAP_MAX_ITER {
        let sigma = stress(stiffness, strain_total, &eps_v);
        let residual = eps_v - eps_v_old - glen_rate(&sigma, a, n) * dt;
        if residual.norm() < RETURN_MAP_TOL * scale.max(eps_v.norm()) {
            return Ok(eps_v);
        }
        let jac = Matrix4::identity() + glen_rate_dsigma(&sigma, a, n) * stiffness * dt;
        let delta = jac.lu().solve(&residual).ok_or_else(|| {
            SimError::LinearSolve("singular Jacobian in viscous return map".into())
        })?;
        eps_v -= delta;
    }
    let sigma = stress(stiffness, strain_total, &eps_v);
    let residual = eps_v - eps_v_old - glen_rate(&sigma, a, n) * dt;
    Err(SimError::NonConvergence {
        context: "viscous return map",
        iterations: RETURN_MAP_MAX_ITER,
        residual: residual.norm(),
    })
}

/// Maxwell relaxation time for a given effective deviatoric stress.
///
/// Returns `f64::INFINITY` when the stress is non-positive.
pub fn maxwell_time(sigma_dev_eff: f64, youngs: f64, poisson: f64, a: f64, n: f64) -> f64 {
    if sigma_dev_eff <= 0.0 || a <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * (1.0 + poisson) / (youngs * a * sigma_dev_eff.powf(n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn stiffness_matches_closed_form() {
        let d = plane_strain_stiffness(9.0e9, 0.33).unwrap();
        // E(1-nu)/((1+nu)(1-2nu)) evaluated independently.
        assert_relative_eq!(d[(0, 0)], 1.3334807607253428e10, max_relative = 1e-12);
        assert_eq!(d, d.transpose());
        // decoupled case
        let d0 = plane_strain_stiffness(5.0e9, 0.0).unwrap();
        assert_relative_eq!(d0[(0, 0)], 5.0e9, max_relative = 1e-14);
        assert_eq!(d0[(0, 1)], 0.0);
    }

    #[test]
    fn stiffness_rejects_incompressible() {
        assert!(plane_strain_stiffness(1.0e9, 0.5).is_err());
        assert!(plane_strain_stiffness(-1.0, 0.3).is_err());
    }

    #[test]
    fn creep_coefficient_arrhenius() {
        let ice = SolidProperties::ice();
        assert_relative_eq!(creep_coefficient(&ice, 273.15), 5.0e-24, max_relative = 1e-14);
        // frozen from an independent high-precision evaluation
        assert_abs_diff_eq!(
            creep_coefficient(&ice, 263.15),
            4.0633429603935823e-25,
            epsilon = 1e-27
        );
        assert!(creep_coefficient(&ice, 272.0) < creep_coefficient(&ice, 273.15));
    }

    #[test]
    fn tensile_strength_in_celsius() {
        let ice = SolidProperties::ice();
        assert_relative_eq!(tensile_strength(&ice, 0.0), 2.0e6);
        assert_relative_eq!(tensile_strength(&ice, -10.0), 2.68e6);
        assert!(tensile_strength(&ice, -5.0) > tensile_strength(&ice, -1.0));
    }

    #[test]
    fn stress_limits() {
        let d = plane_strain_stiffness(9.0e9, 0.33).unwrap();
        let e = Vector4::new(1e-4, -2e-5, 0.0, 3e-5);
        assert_eq!(stress(&d, &e, &e), Vector4::zeros());
        let s = stress(&d, &e, &Vector4::zeros());
        assert_relative_eq!(s, d * e);
        let s2 = stress(&d, &(e * 2.0), &Vector4::zeros());
        assert_relative_eq!(s2, s * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn return_map_rock_is_identity() {
        let d = plane_strain_stiffness(20.0e9, 0.25).unwrap();
        let e = Vector4::new(1e-4, 2e-4, 0.0, -1e-4);
        let ev = Vector4::new(1e-6, -1e-6, 0.0, 0.0);
        let out = update_viscous_strain(&e, &ev, &d, 0.0, 1.0, 10.0).unwrap();
        assert_eq!(out, ev);
    }

    #[test]
    fn return_map_linear_maxwell_decay() {
        // n = 1, pure deviatoric uniaxial state held at constant total strain.
        // The linear Maxwell element relaxes as sigma_dev(t) = sigma0 exp(-t/tau).
        let youngs = 9.0e9;
        let nu = 0.33;
        let d = plane_strain_stiffness(youngs, nu).unwrap();
        let a = 1e-15; // 1/(Pa s) for n = 1
        // deviatoric total strain: [e, -e/2, -e/2, 0] gives a deviatoric stress
        // state under isotropic elasticity.
        let e0 = 1e-4;
        let strain = Vector4::new(e0, -e0 / 2.0, -e0 / 2.0, 0.0);
        let sigma0 = deviatoric(&stress(&d, &strain, &Vector4::zeros()));
        // With sigma = D(e - ev) and ev deviatoric, the deviatoric stress obeys
        // d(sigma_dev)/dt = -2G A sigma_dev, i.e. decay time 1/(2 G A).
        let shear = youngs / (2.0 * (1.0 + nu));
        let tau = 1.0 / (2.0 * shear * a);
        let dt = tau / 200.0;
        let steps = 400;
        let mut ev = Vector4::zeros();
        for _ in 0..steps {
            ev = update_viscous_strain(&strain, &ev, &d, a, 1.0, dt).unwrap();
        }
        let sigma = deviatoric(&stress(&d, &strain, &ev));
        let expect = sigma0 * (-(steps as f64) * dt / tau).exp();
        assert_relative_eq!(sigma[0], expect[0], max_relative = 1e-2);
        // refine dt: first-order accurate backward Euler halves the error
        let mut ev2 = Vector4::zeros();
        for _ in 0..(2 * steps) {
            ev2 = update_viscous_strain(&strain, &ev2, &d, a, 1.0, dt / 2.0).unwrap();
        }
        let sigma2 = deviatoric(&stress(&d, &strain, &ev2));
        let err1 = (sigma[0] - expect[0]).abs();
        let err2 = (sigma2[0] - expect[0]).abs();
        assert!(err2 < 0.6 * err1, "not first order: {err1} vs {err2}");
        // against the closed form, modest tolerance
        assert_relative_eq!(sigma2[0], expect[0], max_relative = 1e-2);
    }

    #[test]
    fn return_map_matches_substepped_explicit_oracle() {
        // n = 3 Glen's law at fixed total strain; reference by explicit Euler
        // with dt/1000 sub-steps.
        let ice = SolidProperties::ice();
        let d = plane_strain_stiffness(ice.youngs, ice.poisson).unwrap();
        let a = 5.0e-24;
        let strain = Vector4::new(2e-4, -1e-4, 0.0, 5e-5);
        let dt = 600.0;
        // the return map solves its own backward-Euler equation exactly
        let implicit = update_viscous_strain(&strain, &Vector4::zeros(), &d, a, 3.0, dt).unwrap();
        let sigma = stress(&d, &strain, &implicit);
        let residual = implicit - glen_rate(&sigma, a, 3.0) * dt;
        assert!(residual.norm() < 1e-11);

        // dense explicit reference for the same relaxation interval
        let nref = 400_000;
        let h = dt / nref as f64;
        let mut ev_ref = Vector4::zeros();
        for _ in 0..nref {
            let sigma = stress(&d, &strain, &ev_ref);
            ev_ref += glen_rate(&sigma, a, 3.0) * h;
        }
        // sub-stepped implicit updates converge to it at first order
        let run = |m: usize| {
            let mut ev = Vector4::zeros();
            for _ in 0..m {
                ev = update_viscous_strain(&strain, &ev, &d, a, 3.0, dt / m as f64).unwrap();
            }
            ev
        };
        let e1 = (run(200) - ev_ref).norm();
        let e2 = (run(2000) - ev_ref).norm();
        assert!(e2 < 2e-2 * ev_ref.norm());
        let ratio = e1 / e2;
        assert!((6.0..15.0).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn viscous_increment_is_deviatoric() {
        let ice = SolidProperties::ice();
        let d = plane_strain_stiffness(ice.youngs, ice.poisson).unwrap();
        let strain = Vector4::new(3e-4, 1e-4, 0.0, -2e-4);
        let mut ev = Vector4::zeros();
        for _ in 0..20 {
            let next = update_viscous_strain(&strain, &ev, &d, 5e-24, 3.0, 600.0).unwrap();
            let inc = next - ev;
            assert!((inc[0] + inc[1] + inc[2]).abs() < 1e-10);
            ev = next;
        }
    }

    #[test]
    fn maxwell_time_examples() {
        let ice = SolidProperties::ice();
        let tau = maxwell_time(0.21e6, ice.youngs, ice.poisson, ice.creep_a0, ice.creep_n);
        // frozen from independent evaluation: 2(1+nu)/(E A sigma^2)
        assert_relative_eq!(tau, 1340.388, max_relative = 1e-5);
        // doubling A halves tau
        let tau_half = maxwell_time(0.21e6, ice.youngs, ice.poisson, 2.0 * ice.creep_a0, 3.0);
        assert_relative_eq!(tau_half, tau / 2.0, max_relative = 1e-14);
        assert!(maxwell_time(0.0, ice.youngs, ice.poisson, ice.creep_a0, 3.0).is_infinite());
    }

    #[test]
    fn maxwell_range_spans_minutes_to_days() {
        // over the stress/temperature band of the time-scale figure
        let ice = SolidProperties::ice();
        let a_warm = creep_coefficient(&ice, 273.15);
        let a_cold = creep_coefficient(&ice, 273.15 - 20.0);
        let fast = maxwell_time(2.0e6, ice.youngs, ice.poisson, a_warm, 3.0);
        let slow = maxwell_time(0.05e6, ice.youngs, ice.poisson, a_cold, 3.0);
        assert!(fast < 600.0, "fast end should be minutes, got {fast} s");
        assert!(slow > 100.0 * 3600.0, "slow end should exceed 100 h, got {slow} s");
    }

    #[test]
    fn temperature_profile_interpolates() {
        let p = TemperatureProfile::new(vec![(0.0, -10.0), (100.0, -5.0), (300.0, 0.0)]).unwrap();
        assert_relative_eq!(p.at_depth(0.0), -10.0);
        assert_relative_eq!(p.at_depth(50.0), -7.5);
        assert_relative_eq!(p.at_depth(200.0), -2.5);
        assert_relative_eq!(p.at_depth(1000.0), 0.0);
        assert!(TemperatureProfile::new(vec![(0.0, 1.0)]).is_err());
        assert!(TemperatureProfile::new(vec![(0.0, -1.0), (0.0, -2.0)]).is_err());
    }
}
