//! Time integration and the coupled Newton solver: Newmark dynamics for the
//! solid, backward Euler for pressure and melt, energy-based convergence,
//! adaptive step halving, and extrinsic crack-segment insertion.

pub mod linear;
pub mod system;

use faer::sparse::Triplet;
use nalgebra::Vector4;

use crate::channel::ChannelPointState;
use crate::error::SimError;
use crate::mesh::Arm;
use linear::DirectSolver;
use system::{ChannelSolutions, InterfaceTally, IterateView, System};

/// Newmark parameters for the solid plus backward Euler for the fluid.
#[derive(Debug, Clone, Copy)]
pub struct TimeScheme {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TimeScheme {
    /// Dissipative Newmark family member used throughout.
    fn default() -> Self {
        TimeScheme {
            beta: 0.4,
            gamma: 0.75,
        }
    }
}

impl TimeScheme {
    /// d(acceleration)/d(displacement).
    pub fn accel_factor(&self, dt: f64) -> f64 {
        1.0 / (self.beta * dt * dt)
    }

    /// d(velocity)/d(displacement).
    pub fn rate_factor(&self, dt: f64) -> f64 {
        self.gamma / (self.beta * dt)
    }

    /// End-of-step acceleration and velocity from the displacement update.
    pub fn rates(&self, u: f64, u_old: f64, v_old: f64, a_old: f64, dt: f64) -> (f64, f64) {
        let a = (u - u_old - dt * v_old - dt * dt * (0.5 - self.beta) * a_old)
            / (self.beta * dt * dt);
        let v = v_old + dt * ((1.0 - self.gamma) * a_old + self.gamma * a);
        (v, a)
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative drop of the |f . du| energy norm that counts as converged.
    pub energy_rel_tol: f64,
    /// Absolute convergence floor on |f . du|, J.
    pub energy_abs_floor: f64,
    /// Maximum number of time-step halvings on non-convergence.
    pub max_bisection: usize,
    /// Cap on crack segments inserted within a single increment.
    pub max_insertions: usize,
    /// Refactorise the tangent every iteration instead of reusing it.
    pub full_newton: bool,
    /// Periodic refactorisation interval in increments.
    pub refactor_every: usize,
    /// Refactorise within an increment once this iteration count is reached.
    pub stale_iter_threshold: usize,
    /// Evaluate the propagation criterion and insert segments.
    pub propagation: bool,
    /// Print per-iteration convergence diagnostics to stderr.
    pub debug: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 30,
            energy_rel_tol: 1e-8,
            energy_abs_floor: 1e-4,
            max_bisection: 3,
            max_insertions: 200,
            full_newton: false,
            refactor_every: 25,
            stale_iter_threshold: 5,
            propagation: true,
            debug: false,
        }
    }
}

/// Full history state of the simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    pub u: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    pub a: Vec<[f64; 2]>,
    pub p: Vec<f64>,
    pub visc: Vec<[Vector4<f64>; 9]>,
    pub channel: Vec<[ChannelPointState; 3]>,
    pub time: f64,
    /// Cumulative inflow through the crevasse mouth, m^3 per metre.
    pub q_total: f64,
    /// Inlet flux over the last increment, m^2/s.
    pub q_inlet: f64,
    /// Cumulative water volume stored in the cracks, m^3 per metre.
    pub stored_total: f64,
    pub e_friction: f64,
    pub e_conduction: f64,
    pub e_phase: f64,
}

impl SimState {
    pub fn new(sys: &System) -> Self {
        let n_nodes = sys.mesh.coords.len();
        SimState {
            u: vec![[0.0; 2]; n_nodes],
            v: vec![[0.0; 2]; n_nodes],
            a: vec![[0.0; 2]; n_nodes],
            p: vec![0.0; sys.mesh.n_pressure],
            visc: vec![[Vector4::zeros(); 9]; sys.mesh.elems.len()],
            channel: vec![[ChannelPointState::fresh(0.0); 3]; sys.mesh.interfaces.len()],
            time: 0.0,
            q_total: 0.0,
            q_inlet: 0.0,
            stored_total: 0.0,
            e_friction: 0.0,
            e_conduction: 0.0,
            e_phase: 0.0,
        }
    }
}

/// Start-of-increment snapshot used by the Newmark update and for rollback
/// when the step is halved.
#[derive(Clone)]
struct Snapshot {
    u: Vec<[f64; 2]>,
    v: Vec<[f64; 2]>,
    a: Vec<[f64; 2]>,
    p: Vec<f64>,
    visc: Vec<[Vector4<f64>; 9]>,
    channel: Vec<[ChannelPointState; 3]>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IncrementStats {
    pub dt: f64,
    pub iterations: usize,
    pub insertions: usize,
}

pub struct Solver {
    pub sys: System,
    pub scheme: TimeScheme,
    pub settings: SolverSettings,
    linear: DirectSolver,
    increments_since_factor: usize,
    factored_dt: f64,
}

impl Solver {
    pub fn new(sys: System, settings: SolverSettings) -> Self {
        Solver {
            sys,
            scheme: TimeScheme::default(),
            settings,
            linear: DirectSolver::new(),
            increments_since_factor: 0,
            factored_dt: f64::NAN,
        }
    }

    fn take_snapshot(state: &SimState) -> Snapshot {
        Snapshot {
            u: state.u.clone(),
            v: state.v.clone(),
            a: state.a.clone(),
            p: state.p.clone(),
            visc: state.visc.clone(),
            channel: state.channel.clone(),
        }
    }

    /// Restore a state that may have grown (node duplications, new pressure
    /// slots, new interfaces) since the snapshot was taken. Duplicated nodes
    /// re-inherit the restored value of their source node.
    fn restore(
        state: &mut SimState,
        snap: &Snapshot,
        pairs: &[(usize, usize)],
    ) {
        state.u[..snap.u.len()].copy_from_slice(&snap.u);
        state.v[..snap.v.len()].copy_from_slice(&snap.v);
        state.a[..snap.a.len()].copy_from_slice(&snap.a);
        state.p[..snap.p.len()].copy_from_slice(&snap.p);
        for i in snap.p.len()..state.p.len() {
            state.p[i] = 0.0;
        }
        for &(src, dup) in pairs {
            state.u[dup] = state.u[src];
            state.v[dup] = state.v[src];
            state.a[dup] = state.a[src];
        }
        state.visc.copy_from_slice(&snap.visc);
        state.channel[..snap.channel.len()].copy_from_slice(&snap.channel);
        for c in state.channel.iter_mut().skip(snap.channel.len()) {
            *c = [ChannelPointState::fresh(state.time); 3];
        }
    }

    /// Newmark-consistent velocities and accelerations for the iterate `u`.
    fn rates(
        &self,
        u: &[[f64; 2]],
        snap: &Snapshot,
        dt: f64,
    ) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut v = vec![[0.0; 2]; u.len()];
        let mut a = vec![[0.0; 2]; u.len()];
        for i in 0..u.len() {
            for c in 0..2 {
                let (vi, ai) =
                    self.scheme
                        .rates(u[i][c], snap.u[i][c], snap.v[i][c], snap.a[i][c], dt);
                v[i][c] = vi;
                a[i][c] = ai;
            }
        }
        (v, a)
    }

    /// Assemble the full residual (and optionally tangent triplets) at the
    /// current iterate.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        state: &SimState,
        snap: &Snapshot,
        f_visc: &[f64],
        dt: f64,
        thermal_frozen: bool,
        v: &[[f64; 2]],
        a: &[[f64; 2]],
        trips: Option<&mut Vec<Triplet<usize, usize, f64>>>,
    ) -> Result<(Vec<f64>, ChannelSolutions, InterfaceTally), SimError> {
        let dofs = &self.sys.dofs;
        let nfu = dofs.n_free_u;
        let mut f = vec![0.0; dofs.n_total()];

        let mut u_red = vec![0.0; nfu];
        let mut a_red = vec![0.0; nfu];
        for (i, entry) in dofs.free_u.iter().enumerate() {
            for c in 0..2 {
                if let Some(r) = entry[c] {
                    u_red[r as usize] = state.u[i][c];
                    a_red[r as usize] = a[i][c];
                }
            }
        }
        self.sys.k_el.matvec_add(&u_red, &mut f[..nfu]);
        self.sys.m_mat.matvec_add(&a_red, &mut f[..nfu]);
        for i in 0..nfu {
            f[i] -= self.sys.f_grav[i] + f_visc[i];
        }

        let view = IterateView {
            u: &state.u,
            v,
            p: &state.p,
            p_old: &snap.p,
            channel_old: &snap.channel,
            dt,
            time_end: state.time + dt,
            rate_factor: self.scheme.rate_factor(dt),
            thermal_frozen,
        };
        let (sols, tally) = self.sys.assemble_interfaces(&view, &mut f, trips)?;
        Ok((f, sols, tally))
    }

    /// Newton loop at fixed topology. On success the state holds the
    /// converged iterate and the returned solutions/tally match it.
    fn newton(
        &mut self,
        state: &mut SimState,
        snap: &Snapshot,
        f_visc: &[f64],
        dt: f64,
        thermal_frozen: bool,
    ) -> Result<(ChannelSolutions, InterfaceTally, usize), SimError> {
        let dofs_total = self.sys.dofs.n_total();
        let mut e0: Option<f64> = None;
        let mut last_e = f64::NAN;
        let mut iters_since_refactor = 0usize;
        let mut line_search_struggled = false;
        for iter in 0..self.settings.max_iterations {
            let refactor = self.settings.full_newton
                || !self.linear.is_factorized()
                || (iter == 0
                    && (self.factored_dt != dt
                        || self.increments_since_factor >= self.settings.refactor_every))
                || iters_since_refactor >= self.settings.stale_iter_threshold
                || line_search_struggled;

            let (v, a) = self.rates(&state.u, snap, dt);
            let mut trips = if refactor { Some(Vec::new()) } else { None };
            let (f, sols, tally) =
                self.assemble(state, snap, f_visc, dt, thermal_frozen, &v, &a, trips.as_mut())?;

            if let Some(mut t) = trips {
                let c0 = self.scheme.accel_factor(dt);
                self.sys.k_el.triplets(1.0, &mut t);
                self.sys.m_mat.triplets(c0, &mut t);
                self.linear.factorize(dofs_total, &t)?;
                self.increments_since_factor = 0;
                self.factored_dt = dt;
                iters_since_refactor = 0;
            } else {
                iters_since_refactor += 1;
            }

            let mut delta: Vec<f64> = f.iter().map(|&x| -x).collect();
            self.linear.solve(&mut delta)?;
            let energy: f64 = f.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>().abs();
            if self.settings.debug {
                let nfu = self.sys.dofs.n_free_u;
                let max_du = delta[..nfu].iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                let max_dp = delta[nfu..].iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                let max_fu = f[..nfu].iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                let max_fp = f[nfu..].iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                eprintln!(
                    "  iter {iter}: e={energy:.3e} |du|={max_du:.3e} |dp|={max_dp:.3e} \
                     |fu|={max_fu:.3e} |fp|={max_fp:.3e} refactor={refactor}"
                );
            }
            let tol = match e0 {
                Some(first) => (self.settings.energy_rel_tol * first)
                    .max(self.settings.energy_abs_floor),
                None => {
                    e0 = Some(energy);
                    -1.0 // always iterate at least once
                }
            };
            if iter > 0 && energy < tol {
                return Ok((sols, tally, iter));
            }
            last_e = energy;

            // backtracking line search on the directional energy: the sqrt-like
            // flux law makes undamped Newton overshoot on near-closed cracks
            let u_base = state.u.clone();
            let p_base = state.p.clone();
            let nfu = self.sys.dofs.n_free_u;
            let apply = |state: &mut SimState, alpha: f64| {
                for (i, entry) in self.sys.dofs.free_u.iter().enumerate() {
                    for c in 0..2 {
                        if let Some(r) = entry[c] {
                            state.u[i][c] = u_base[i][c] + alpha * delta[r as usize];
                        }
                    }
                }
                for s in 0..state.p.len() {
                    state.p[s] = p_base[s] + alpha * delta[nfu + s];
                }
            };
            let mut alpha = 1.0;
            let mut best = (1.0, f64::INFINITY);
            for _ in 0..7 {
                apply(state, alpha);
                let (v_t, a_t) = self.rates(&state.u, snap, dt);
                let trial = self
                    .assemble(state, snap, f_visc, dt, thermal_frozen, &v_t, &a_t, None)
                    .map(|(f_t, _, _)| {
                        f_t.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>().abs()
                    });
                match trial {
                    Ok(e_t) if e_t < 0.5 * energy => {
                        best = (alpha, e_t);
                        break;
                    }
                    Ok(e_t) => {
                        if e_t < best.1 {
                            best = (alpha, e_t);
                        }
                        alpha *= 0.5;
                    }
                    Err(_) => {
                        // trial iterate outside the channel solver's domain
                        alpha *= 0.5;
                    }
                }
            }
            apply(state, best.0);
            // a damped or uphill step means the factorized tangent no longer
            // represents the local curvature: refactor before the next solve
            line_search_struggled = best.1 >= 0.5 * energy;
            if self.settings.debug && best.0 != 1.0 {
                eprintln!("    line search: alpha={} e={:.3e}", best.0, best.1);
            }
            if self.settings.debug {
                if let Some(iface) = self.sys.mesh.interfaces.last() {
                    let n = iface.normal;
                    let j = |a: usize| {
                        let up = state.u[iface.plus[a]];
                        let um = state.u[iface.minus[a]];
                        n[0] * (up[0] - um[0]) + n[1] * (up[1] - um[1])
                    };
                    eprintln!(
                        "    last iface: j=({:+.3e},{:+.3e}) p=({:+.3e},{:+.3e},{:+.3e})",
                        j(0),
                        j(1),
                        state.p[iface.pslots[0]],
                        state.p[iface.pslots[1]],
                        state.p[iface.pslots[2]]
                    );
                }
            }
        }
        Err(SimError::NonConvergence {
            context: "coupled Newton solve",
            iterations: self.settings.max_iterations,
            residual: last_e,
        })
    }

    /// Arms whose tips are currently allowed to propagate.
    fn active_arms(&self) -> Vec<Arm> {
        if self.sys.mesh.path.reached_bed() {
            vec![Arm::Left, Arm::Right]
        } else {
            vec![Arm::Vertical]
        }
    }

    /// One attempt at an increment of length `dt`: solve, then alternate
    /// single-segment insertions with re-solves until no tip exceeds its
    /// strength.
    fn try_increment(
        &mut self,
        state: &mut SimState,
        snap: &Snapshot,
        dt: f64,
        thermal_frozen: bool,
        pairs: &mut Vec<(usize, usize)>,
    ) -> Result<IncrementStats, SimError> {
        state.visc.copy_from_slice(&snap.visc);
        if self.sys.mats.rheology == system::Rheology::Viscoelastic {
            self.sys.update_viscous_states(&snap.u, &mut state.visc, dt)?;
        }
        let mut f_visc = self.sys.viscous_force(&state.visc);

        let mut stats = IncrementStats {
            dt,
            ..Default::default()
        };
        // Start-of-increment values, extended alongside the state when the
        // mesh grows mid-increment: duplicated nodes inherit their source's
        // old kinematics, fresh pressure slots and channel points start empty.
        let mut old = snap.clone();
        loop {
            let (sols, tally, iters) = self.newton(state, &old, &f_visc, dt, thermal_frozen)?;
            stats.iterations += iters;

            let mut best: Option<(Arm, usize, f64)> = None;
            if self.settings.propagation && stats.insertions < self.settings.max_insertions {
                for arm in self.active_arms() {
                    if let Some((idx, sn, ft)) =
                        self.sys.tip_normal_stress(arm, &state.u, &state.visc)
                    {
                        if self.settings.debug {
                            eprintln!("    tip {arm:?} seg {idx}: sigma_n={sn:.3e} f_t={ft:.3e}");
                        }
                        if crate::cohesive::check_propagation(sn, ft) {
                            let overshoot = sn - ft;
                            if best.map_or(true, |(_, _, o)| overshoot > o) {
                                best = Some((arm, idx, overshoot));
                            }
                        }
                    }
                }
            }

            let Some((arm, idx, _)) = best else {
                // accept: bank channel states and running tallies
                for (fi, sol) in sols.iter().enumerate() {
                    for k in 0..3 {
                        let st = &mut state.channel[fi][k];
                        st.h_melt = sol[k].h_melt;
                        st.q = sol[k].q;
                        st.h = sol[k].h;
                    }
                }
                let (v, a) = self.rates(&state.u, &old, dt);
                state.v = v;
                state.a = a;
                state.q_inlet = tally.inlet;
                state.q_total += state.q_inlet * dt;
                state.stored_total += tally.stored;
                state.e_friction += tally.friction;
                state.e_conduction += tally.conduction;
                state.e_phase += tally.phase;
                state.time += dt;
                self.increments_since_factor += 1;
                return Ok(stats);
            };

            let outcome = self.sys.mesh.insert_segment(arm, idx, false)?;
            stats.insertions += 1;
            let t_new = state.time + dt;
            for &(src, dup) in &outcome.duplicated {
                state.u.push(state.u[src]);
                state.v.push(state.v[src]);
                state.a.push(state.a[src]);
                old.u.push(old.u[src]);
                old.v.push(old.v[src]);
                old.a.push(old.a[src]);
                pairs.push((src, dup));
                debug_assert_eq!(dup, state.u.len() - 1);
            }
            for _ in &outcome.new_pslots {
                state.p.push(0.0);
                old.p.push(0.0);
            }
            state.channel.push([ChannelPointState::fresh(t_new); 3]);
            old.channel.push([ChannelPointState::fresh(t_new); 3]);
            self.sys.rebuild()?;
            self.linear.invalidate_pattern();
            f_visc = self.sys.viscous_force(&state.visc);
        }
    }

    /// Advance one increment, halving the step on non-convergence. Returns
    /// the statistics of the successful attempt.
    pub fn advance(&mut self, state: &mut SimState, dt_nominal: f64) -> Result<IncrementStats, SimError> {
        let mut snap = Self::take_snapshot(state);
        let mut dt = dt_nominal;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for attempt in 0..=self.settings.max_bisection {
            match self.try_increment(state, &snap, dt, false, &mut pairs) {
                Ok(stats) => return Ok(stats),
                Err(SimError::NonConvergence { .. }) if attempt < self.settings.max_bisection => {
                    Self::restore(state, &snap, &pairs);
                    // Segments inserted during the failed attempt stay in the
                    // mesh; grow the snapshot to match so the retry's rate and
                    // old-value lookups cover the duplicated nodes and slots.
                    for &(src, dup) in &pairs {
                        if dup >= snap.u.len() {
                            snap.u.push(snap.u[src]);
                            snap.v.push(snap.v[src]);
                            snap.a.push(snap.a[src]);
                        }
                    }
                    snap.p.resize(state.p.len(), 0.0);
                    snap.channel
                        .resize(state.channel.len(), [ChannelPointState::fresh(state.time); 3]);
                    dt /= 2.0;
                    self.linear.invalidate_pattern();
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("bisection loop always returns");
    }

    /// Static solve: a single enormous time step makes inertia and rate
    /// effects negligible while reusing the dynamic machinery.
    pub fn solve_static(&mut self, state: &mut SimState) -> Result<IncrementStats, SimError> {
        let saved_prop = self.settings.propagation;
        self.settings.propagation = false;
        let snap = Self::take_snapshot(state);
        let mut pairs = Vec::new();
        let result = self.try_increment(state, &snap, 1.0e8, true, &mut pairs);
        self.settings.propagation = saved_prop;
        let stats = result?;
        // a static solution carries no kinetic state and no history tallies
        for i in 0..state.v.len() {
            state.v[i] = [0.0; 2];
            state.a[i] = [0.0; 2];
        }
        state.time = 0.0;
        state.q_total = 0.0;
        state.q_inlet = 0.0;
        state.stored_total = 0.0;
        Ok(stats)
    }

    /// Creep initialisation: one day of settling under gravity and lake
    /// pressure with propagation and wall melting switched off, after which
    /// the clock and the thermal histories restart at zero.
    pub fn creep_initialize(&mut self, state: &mut SimState) -> Result<(), SimError> {
        let saved_prop = self.settings.propagation;
        self.settings.propagation = false;
        state.time = -86400.0;
        let dt = 600.0;
        for _ in 0..144 {
            let snap = Self::take_snapshot(state);
            let mut pairs = Vec::new();
            let mut step = dt;
            let mut done = false;
            for attempt in 0..=self.settings.max_bisection {
                match self.try_increment(state, &snap, step, true, &mut pairs) {
                    Ok(_) => {
                        done = true;
                        break;
                    }
                    Err(SimError::NonConvergence { .. })
                        if attempt < self.settings.max_bisection =>
                    {
                        Self::restore(state, &snap, &pairs);
                        step /= 2.0;
                        self.linear.invalidate_pattern();
                    }
                    Err(e) => {
                        self.settings.propagation = saved_prop;
                        return Err(e);
                    }
                }
            }
            if !done {
                self.settings.propagation = saved_prop;
                return Err(SimError::NonConvergence {
                    context: "creep initialisation",
                    iterations: self.settings.max_iterations,
                    residual: f64::NAN,
                });
            }
        }
        self.settings.propagation = saved_prop;
        // restart the clock: thermal histories and tallies begin at zero
        state.time = 0.0;
        for states in state.channel.iter_mut() {
            for s in states.iter_mut() {
                s.t0 = 0.0;
            }
        }
        state.q_total = 0.0;
        state.q_inlet = 0.0;
        state.stored_total = 0.0;
        state.e_friction = 0.0;
        state.e_conduction = 0.0;
        state.e_phase = 0.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
