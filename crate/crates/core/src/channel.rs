//! Water channel micro-model resolved at every interface integration point:
//! turbulent flow through the opened crack, frictional heating, conductive
//! losses into cold ice, and the melting/refreezing of the crack walls that
//! feeds back into the hydraulic aperture.

use crate::error::SimError;

/// Aperture floor applied inside the flux law only, so a freshly inserted
/// (still closed) segment admits a vanishing but well-defined flow.
pub const APERTURE_FLOOR: f64 = 1e-6;

/// Regularisation of the |G|^(-1/2) singularity of the turbulent flux at
/// stagnation points; keeps the pressure-gradient slope finite for Newton.
pub const GRADIENT_EPS: f64 = 1e-6;

const LOCAL_MAX_ITER: usize = 30;
const LOCAL_TOL: f64 = 1e-12;

/// Water and channel friction properties.
#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    pub rho_water: f64,
    pub bulk_modulus: f64,
    pub wall_roughness: f64,
    pub friction_f0: f64,
    pub gravity: f64,
}

impl FlowParams {
    pub fn meltwater() -> Self {
        FlowParams {
            rho_water: 1000.0,
            bulk_modulus: 1.0e9,
            wall_roughness: 1.0e-2,
            friction_f0: 0.143,
            gravity: 9.81,
        }
    }

    /// Coefficient of the turbulent flux law `q = -C h^(5/3) G / |G|^(1/2)`.
    fn flux_coefficient(&self) -> f64 {
        2.0 / (self.rho_water.sqrt() * self.wall_roughness.powf(1.0 / 6.0) * self.friction_f0.sqrt())
    }
}

/// Ice-side thermal properties and the far-field ice temperature seen by the
/// channel at this depth.
#[derive(Debug, Clone, Copy)]
pub struct ThermalParams {
    pub conductivity: f64,
    pub rho_ice: f64,
    pub heat_capacity: f64,
    pub latent_heat: f64,
    /// Far-field ice temperature, degrees Celsius (melting point is 0).
    pub far_temp: f64,
}

impl ThermalParams {
    pub fn ice(far_temp: f64) -> Self {
        ThermalParams {
            conductivity: 2.0,
            rho_ice: 910.0,
            heat_capacity: 2115.0,
            latent_heat: 335_000.0,
            far_temp,
        }
    }
}

/// Persistent per-integration-point channel state.
#[derive(Debug, Clone, Copy)]
pub struct ChannelPointState {
    /// Wall-melt contribution to the aperture, m; negative when refreezing
    /// has deposited ice beyond what was melted.
    pub h_melt: f64,
    /// Time at which this point first became part of the channel, s.
    pub t0: f64,
    /// Last converged tangential flux, m^2/s.
    pub q: f64,
    /// Last converged hydraulic aperture, m.
    pub h: f64,
}

impl ChannelPointState {
    /// State of a freshly exposed crack point.
    pub fn fresh(t0: f64) -> Self {
        ChannelPointState {
            h_melt: 0.0,
            t0,
            q: 0.0,
            h: 0.0,
        }
    }
}

/// Inputs to the pointwise channel solve for one time increment.
#[derive(Debug, Clone, Copy)]
pub struct LocalInputs {
    /// Driving gradient `G = dp/dxi - rho_w g.s`, Pa/m along the tangent.
    pub gradient: f64,
    /// Normal displacement jump across the faces, m.
    pub jump: f64,
    /// Melt aperture at the start of the increment, m.
    pub h_melt_old: f64,
    /// Time since the point joined the channel, s (end of increment).
    pub elapsed: f64,
    pub dt: f64,
}

/// Converged pointwise solution with the consistent sensitivities needed for
/// the global tangent.
#[derive(Debug, Clone, Copy)]
pub struct LocalSolution {
    /// Tangential volumetric flux per unit out-of-plane width, m^2/s.
    pub q: f64,
    /// Updated melt aperture, m.
    pub h_melt: f64,
    /// Hydraulic aperture `h = h_melt + jump`, m.
    pub h: f64,
    /// Frictional heating `-q G`, W/m^2; never negative.
    pub j_flow: f64,
    /// Conductive flux into the ice, W/m^2; non-positive for cold ice.
    pub j_ice: f64,
    pub dq_dgradient: f64,
    pub dq_djump: f64,
    pub dh_dgradient: f64,
    pub dh_djump: f64,
    pub dhmelt_dgradient: f64,
    pub dhmelt_djump: f64,
    pub iterations: usize,
}

/// Aperture-dependent Darcy-Weisbach friction factor.
pub fn friction_factor(flow: &FlowParams, h: f64) -> f64 {
    flow.friction_f0 * (flow.wall_roughness / h).powf(1.0 / 3.0)
}

/// Regularised direction factor `G / |G|^(1/2)` and its derivative.
fn smoothed_direction(g: f64) -> (f64, f64) {
    let denom = (g.abs() + GRADIENT_EPS).sqrt();
    let phi = g / denom;
    let dphi = (0.5 * g.abs() + GRADIENT_EPS) / (denom * denom * denom);
    (phi, dphi)
}

/// Turbulent channel flux for a given aperture and driving gradient.
pub fn fluid_flux(flow: &FlowParams, h: f64, gradient: f64) -> f64 {
    let he = h.max(APERTURE_FLOOR);
    let (phi, _) = smoothed_direction(gradient);
    -flow.flux_coefficient() * he.powf(5.0 / 3.0) * phi
}

/// Frictional heat released by the flow, per unit channel area.
pub fn heat_flux_flow(q: f64, gradient: f64) -> f64 {
    -q * gradient
}

/// Conductive heat flux into the surrounding ice (similarity solution of the
/// half-space conduction problem, singular at the moment of insertion).
pub fn heat_flux_ice(thermal: &ThermalParams, elapsed: f64) -> f64 {
    assert!(elapsed > 0.0, "conduction flux needs elapsed > 0");
    2.0 * thermal.conductivity.sqrt()
        * thermal.far_temp
        * (thermal.rho_ice * thermal.heat_capacity).sqrt()
        / (std::f64::consts::PI.sqrt() * elapsed.sqrt())
}

/// Ratio of frictional heating to conductive losses; above one the channel
/// melts open, below one it refreezes.
pub fn dominance_ratio(
    flow: &FlowParams,
    thermal: &ThermalParams,
    h: f64,
    gradient_abs: f64,
    elapsed: f64,
) -> f64 {
    let denom = thermal.conductivity
        * thermal.rho_ice
        * thermal.heat_capacity
        * flow.rho_water
        * flow.friction_f0
        * flow.wall_roughness.powf(1.0 / 3.0);
    (std::f64::consts::PI / denom).sqrt() * elapsed.sqrt() * h.powf(5.0 / 3.0)
        * gradient_abs.powf(1.5)
        / thermal.far_temp.abs()
}

/// Solve the coupled flux / wall-melt / aperture system at one point with a
/// backward-Euler step for the melt thickness.
pub fn local_solve(
    flow: &FlowParams,
    thermal: &ThermalParams,
    inp: &LocalInputs,
) -> Result<LocalSolution, SimError> {
    assert!(inp.dt > 0.0 && inp.elapsed > 0.0);
    let c = flow.flux_coefficient();
    let (phi, dphi) = smoothed_direction(inp.gradient);
    let j_ice = heat_flux_ice(thermal, inp.elapsed);
    let rl = thermal.rho_ice * thermal.latent_heat;

    // The point system eliminates exactly to one scalar equation in the
    // total aperture h:
    //   q(h) = -c max(h, floor)^{5/3} phi
    //   m(q) = m_old + dt (-q G + j_ice) / (rho_i L)
    //   g(h) = h - m(q(h)) - jump = 0
    // g is monotone increasing for physical parameters (phi*G >= 0), so a
    // bracketed scalar Newton is robust against the aperture-floor kink.
    let q_of = |h: f64| -c * h.max(APERTURE_FLOOR).powf(5.0 / 3.0) * phi;
    let m_of = |q: f64| inp.h_melt_old + inp.dt * (-q * inp.gradient + j_ice) / rl;
    let g_of = |h: f64| h - m_of(q_of(h)) - inp.jump;

    // below the floor the flux is constant in h and g is affine: exact root
    let mut h = m_of(q_of(0.0)) + inp.jump;
    let mut iterations = 1;
    if h > APERTURE_FLOOR {
        // bracket [floor, hb] with g(floor) < 0 <= g(hb)
        let mut lo = APERTURE_FLOOR;
        let mut hb = (2.0 * h.max(APERTURE_FLOOR)).max(2.0 * APERTURE_FLOOR);
        while g_of(hb) < 0.0 {
            hb *= 2.0;
            iterations += 1;
            if iterations >= LOCAL_MAX_ITER {
                return Err(SimError::NonConvergence {
                    context: "channel point solve",
                    iterations,
                    residual: g_of(hb).abs(),
                });
            }
        }
        h = h.clamp(lo, hb);
        let mut converged = false;
        let mut res_norm = f64::INFINITY;
        while iterations < LOCAL_MAX_ITER {
            let g = g_of(h);
            res_norm = g.abs() / h.abs().max(APERTURE_FLOOR);
            if res_norm < LOCAL_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            if g < 0.0 {
                lo = h;
            } else {
                hb = h;
            }
            let he = h.max(APERTURE_FLOOR);
            let slope =
                1.0 - inp.dt * c * (5.0 / 3.0) * he.powf(2.0 / 3.0) * phi * inp.gradient / rl;
            let mut next = if slope.abs() > 1e-300 { h - g / slope } else { h };
            if !(next > lo && next < hb) {
                next = 0.5 * (lo + hb);
            }
            h = next;
        }
        if !converged {
            return Err(SimError::NonConvergence {
                context: "channel point solve",
                iterations,
                residual: res_norm,
            });
        }
    }
    let q = q_of(h);
    let m = m_of(q);

    // consistent sensitivities: dx/dp = -J^{-1} df/dp for p in {G, jump}
    let he = h.max(APERTURE_FLOOR);
    let df1_dh = if h > APERTURE_FLOOR {
        c * (5.0 / 3.0) * he.powf(2.0 / 3.0) * phi
    } else {
        0.0
    };
    let df2_dq = inp.dt * inp.gradient / rl;
    let det = 1.0 - df2_dq * df1_dh;
    let solve = |g1: f64, g2: f64, g3: f64| {
        let dq = (g1 - df1_dh * (g2 + g3)) / det;
        let dm = g2 - df2_dq * dq;
        let dh = dm + g3;
        (-dq, -dm, -dh)
    };
    let df1_dg = c * he.powf(5.0 / 3.0) * dphi;
    let df2_dg = inp.dt * q / rl;
    let (dq_dg, dm_dg, dh_dg) = solve(df1_dg, df2_dg, 0.0);
    let (dq_dj, dm_dj, dh_dj) = solve(0.0, 0.0, -1.0);

    Ok(LocalSolution {
        q,
        h_melt: m,
        h,
        j_flow: heat_flux_flow(q, inp.gradient),
        j_ice,
        dq_dgradient: dq_dg,
        dq_djump: dq_dj,
        dh_dgradient: dh_dg,
        dh_djump: dh_dj,
        dhmelt_dgradient: dm_dg,
        dhmelt_djump: dm_dj,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn friction_factor_scales_with_relative_roughness() {
        let flow = FlowParams::meltwater();
        assert_relative_eq!(friction_factor(&flow, 0.01), 0.143, max_relative = 1e-14);
        // h = 8 k_wall halves the factor
        assert_relative_eq!(friction_factor(&flow, 0.08), 0.0715, max_relative = 1e-12);
    }

    #[test]
    fn fluid_flux_matches_frozen_oracle() {
        let flow = FlowParams::meltwater();
        // frozen from an independent high-precision evaluation at h = 0.1 m,
        // G = -1000 Pa/m
        assert_relative_eq!(
            fluid_flux(&flow, 0.1, -1000.0),
            0.24548708196864304,
            max_relative = 1e-8
        );
        assert_eq!(fluid_flux(&flow, 0.1, 0.0), 0.0);
        // flux opposes the gradient
        assert!(fluid_flux(&flow, 0.1, 500.0) < 0.0);
    }

    #[test]
    fn conduction_flux_matches_frozen_oracle() {
        let thermal = ThermalParams::ice(-10.0);
        // frozen: T = -10 C, one hour after insertion
        assert_relative_eq!(
            heat_flux_ice(&thermal, 3600.0),
            -368.97308617405589,
            max_relative = 1e-12
        );
        assert_eq!(heat_flux_ice(&ThermalParams::ice(0.0), 100.0), 0.0);
        // decays like t^(-1/2)
        let j1 = heat_flux_ice(&thermal, 900.0);
        let j2 = heat_flux_ice(&thermal, 3600.0);
        assert_relative_eq!(j1, 2.0 * j2, max_relative = 1e-12);
    }

    #[test]
    fn frictional_heating_matches_frozen_oracle() {
        let flow = FlowParams::meltwater();
        let q = fluid_flux(&flow, 0.1, -1000.0);
        assert_relative_eq!(
            heat_flux_flow(q, -1000.0),
            245.48708196864304,
            max_relative = 1e-8
        );
    }

    #[test]
    fn dominance_ratio_matches_frozen_oracle() {
        let flow = FlowParams::meltwater();
        let thermal = ThermalParams::ice(-10.0);
        // frozen: h = 0.5 m, |G| = 1000 Pa/m, one hour
        assert_relative_eq!(
            dominance_ratio(&flow, &thermal, 0.5, 1000.0, 3600.0),
            9.727113020918493,
            max_relative = 1e-12
        );
    }

    #[test]
    fn stagnant_point_refreezes_in_closed_form() {
        // with no gradient there is no flow and the melt update is linear
        let flow = FlowParams::meltwater();
        let thermal = ThermalParams::ice(-5.0);
        let inp = LocalInputs {
            gradient: 0.0,
            jump: 2e-4,
            h_melt_old: 1e-3,
            elapsed: 1800.0,
            dt: 10.0,
        };
        let sol = local_solve(&flow, &thermal, &inp).unwrap();
        assert_eq!(sol.q, 0.0);
        let expected = inp.h_melt_old
            + inp.dt * heat_flux_ice(&thermal, inp.elapsed)
                / (thermal.rho_ice * thermal.latent_heat);
        assert_relative_eq!(sol.h_melt, expected, max_relative = 1e-12);
        assert_relative_eq!(sol.h, expected + inp.jump, max_relative = 1e-12);
        assert!(sol.h_melt < inp.h_melt_old);
    }

    #[test]
    fn local_solve_converges_fast_and_balances_energy() {
        let flow = FlowParams::meltwater();
        let thermal = ThermalParams::ice(-10.0);
        let inp = LocalInputs {
            gradient: -4000.0,
            jump: 5e-3,
            h_melt_old: 2e-3,
            elapsed: 600.0,
            dt: 5.0,
        };
        let sol = local_solve(&flow, &thermal, &inp).unwrap();
        assert!(sol.iterations <= 8, "took {} iterations", sol.iterations);
        assert!(sol.q > 0.0 && sol.j_flow > 0.0);
        // phase-change energy equals the net heat input over the step
        let lhs = (sol.h_melt - inp.h_melt_old) * thermal.rho_ice * thermal.latent_heat;
        let rhs = inp.dt * (sol.j_flow + sol.j_ice);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let flow = FlowParams::meltwater();
        let thermal = ThermalParams::ice(-8.0);
        let base = LocalInputs {
            gradient: -2500.0,
            jump: 1e-3,
            h_melt_old: 5e-4,
            elapsed: 1200.0,
            dt: 2.0,
        };
        let sol = local_solve(&flow, &thermal, &base).unwrap();

        let dg = 1e-3 * base.gradient.abs();
        let mut p = base;
        p.gradient += dg;
        let up = local_solve(&flow, &thermal, &p).unwrap();
        p.gradient -= 2.0 * dg;
        let dn = local_solve(&flow, &thermal, &p).unwrap();
        assert_relative_eq!(sol.dq_dgradient, (up.q - dn.q) / (2.0 * dg), max_relative = 1e-6);
        assert_relative_eq!(sol.dh_dgradient, (up.h - dn.h) / (2.0 * dg), max_relative = 1e-6);
        assert_relative_eq!(
            sol.dhmelt_dgradient,
            (up.h_melt - dn.h_melt) / (2.0 * dg),
            max_relative = 1e-6
        );

        let dj = 1e-6;
        let mut p = base;
        p.jump += dj;
        let up = local_solve(&flow, &thermal, &p).unwrap();
        p.jump -= 2.0 * dj;
        let dn = local_solve(&flow, &thermal, &p).unwrap();
        assert_relative_eq!(sol.dq_djump, (up.q - dn.q) / (2.0 * dj), max_relative = 1e-6);
        assert_relative_eq!(sol.dh_djump, (up.h - dn.h) / (2.0 * dj), max_relative = 1e-6);
        assert_relative_eq!(
            sol.dhmelt_djump,
            (up.h_melt - dn.h_melt) / (2.0 * dj),
            max_relative = 1e-6
        );
    }

    proptest! {
        /// Flow always runs down the driving gradient, heating is never
        /// negative, and the aperture identity holds at convergence.
        #[test]
        fn channel_signs_and_aperture_identity(
            g in -1e4..1e4f64,
            jump in 0.0..5e-3f64,
            m_old in -1e-4..5e-3f64,
            far_temp in -15.0..0.0f64,
            elapsed in 1.0..7200.0f64,
        ) {
            let flow = FlowParams::meltwater();
            let thermal = ThermalParams::ice(far_temp);
            let inp = LocalInputs { gradient: g, jump, h_melt_old: m_old, elapsed, dt: 2.0 };
            let sol = local_solve(&flow, &thermal, &inp).unwrap();
            prop_assert!(sol.q * g <= 0.0);
            prop_assert!(sol.j_flow >= 0.0);
            prop_assert!(sol.j_ice <= 0.0);
            prop_assert!((sol.h - sol.h_melt - jump).abs() < 1e-9 * sol.h.abs().max(1e-6));
        }
    }
}
