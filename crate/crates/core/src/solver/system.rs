//! Spatial discretisation: degree-of-freedom bookkeeping, cached element
//! matrices, and assembly of the coupled displacement-pressure residual and
//! tangent.

use std::collections::HashMap;

use faer::sparse::Triplet;
use nalgebra::{Matrix4, Vector4};

use crate::channel::{self, ChannelPointState, FlowParams, LocalInputs, LocalSolution, ThermalParams};
use crate::cohesive;
use crate::constitutive::{
    creep_coefficient, plane_strain_stiffness, tensile_strength, SolidProperties,
    TemperatureProfile,
};
use crate::error::SimError;
use crate::mesh::basis::{line3_shape, line3_shape_deriv, quad9_basis, GAUSS3, NEWTON_COTES3};
use crate::mesh::{Arm, Layer, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rheology {
    Elastic,
    Viscoelastic,
}

/// Material and loading description of a scenario.
#[derive(Debug, Clone)]
pub struct MaterialSet {
    pub ice: SolidProperties,
    pub rock: SolidProperties,
    pub flow: FlowParams,
    pub temperature: TemperatureProfile,
    pub rheology: Rheology,
    /// Constant tensile strength override (parametric studies), Pa.
    pub override_strength: Option<f64>,
    /// Constant creep coefficient override, Pa^-3 s^-1.
    pub override_creep: Option<f64>,
    /// Lake pressure applied at the crevasse mouth, Pa.
    pub p_ext: f64,
    /// Inlet penalty coefficient, m^2/(s Pa).
    pub inlet_coefficient: f64,
}

impl MaterialSet {
    pub fn das(temperature: TemperatureProfile, rheology: Rheology) -> Self {
        MaterialSet {
            ice: SolidProperties::ice(),
            rock: SolidProperties::rock(),
            flow: FlowParams::meltwater(),
            temperature,
            rheology,
            override_strength: None,
            override_creep: None,
            p_ext: 1.0e5,
            inlet_coefficient: 1.0e6,
        }
    }
}

/// Compressed sparse row matrix for residual matvecs.
pub struct Csr {
    pub n: usize,
    rowptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    fn from_triplets(n: usize, mut trips: Vec<(u32, u32, f64)>) -> Self {
        trips.sort_unstable_by_key(|&(r, c, _)| ((r as u64) << 32) | c as u64);
        let mut rows: Vec<u32> = Vec::new();
        let mut col: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        for &(r, c, v) in &trips {
            if rows.last() == Some(&r) && col.last() == Some(&c) {
                *val.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col.push(c);
                val.push(v);
            }
        }
        let mut rowptr = vec![0usize; n + 1];
        for &r in &rows {
            rowptr[r as usize + 1] += 1;
        }
        for i in 0..n {
            rowptr[i + 1] += rowptr[i];
        }
        Csr { n, rowptr, col, val }
    }

    /// y += A x
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.rowptr[r]..self.rowptr[r + 1] {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            y[r] += acc;
        }
    }

    pub fn triplets(&self, scale: f64, out: &mut Vec<Triplet<usize, usize, f64>>) {
        for r in 0..self.n {
            for k in self.rowptr[r]..self.rowptr[r + 1] {
                out.push(Triplet::new(r, self.col[k] as usize, scale * self.val[k]));
            }
        }
    }
}

/// Reduced numbering with Dirichlet constraints eliminated: bottom of the
/// rock is fixed vertically, the lateral boundaries are horizontal rollers.
pub struct DofMap {
    /// Reduced displacement dof per node and component; None if constrained.
    pub free_u: Vec<[Option<u32>; 2]>,
    pub n_free_u: usize,
    pub n_p: usize,
}

impl DofMap {
    pub fn build(mesh: &Mesh) -> Self {
        let half = mesh.spec.domain_width / 2.0;
        let tol = 1e-6;
        let mut free_u = Vec::with_capacity(mesh.coords.len());
        let mut next = 0u32;
        for c in &mesh.coords {
            let fix_x = (c[0] - half).abs() < tol || (c[0] + half).abs() < tol;
            let fix_y = c[1].abs() < tol;
            let mut entry = [None, None];
            if !fix_x {
                entry[0] = Some(next);
                next += 1;
            }
            if !fix_y {
                entry[1] = Some(next);
                next += 1;
            }
            free_u.push(entry);
        }
        DofMap {
            free_u,
            n_free_u: next as usize,
            n_p: mesh.n_pressure,
        }
    }

    #[inline]
    pub fn u(&self, node: usize, comp: usize) -> Option<usize> {
        self.free_u[node][comp].map(|i| i as usize)
    }

    #[inline]
    pub fn p(&self, slot: usize) -> usize {
        self.n_free_u + slot
    }

    pub fn n_total(&self) -> usize {
        self.n_free_u + self.n_p
    }
}

/// Per-integration-point geometry of a prototype element.
struct IpData {
    grads: [[f64; 2]; 9],
    wdet: f64,
    /// local eta, to recover the physical height of the point
    eta: f64,
}

/// Element matrices shared by all elements with identical size and layer.
struct ElemProto {
    ke: Vec<f64>, // 18x18 row-major
    me: Vec<f64>,
    fg: [f64; 18],
    ip: Vec<IpData>,
    stiffness: Matrix4<f64>,
}

/// Assembled spatial system over the current mesh topology.
pub struct System {
    pub mesh: Mesh,
    pub mats: MaterialSet,
    pub dofs: DofMap,
    protos: Vec<ElemProto>,
    elem_proto: Vec<usize>,
    /// Creep coefficient at each bulk IP (temperature-dependent; 0 for rock
    /// and for elastic runs).
    pub creep_a: Vec<[f64; 9]>,
    /// Far-field ice temperature at each interface IP, deg C.
    pub iface_temp: Vec<[f64; 3]>,
    /// Elastic stiffness over reduced u-dofs.
    pub k_el: Csr,
    /// Consistent mass over reduced u-dofs.
    pub m_mat: Csr,
    /// Gravity load over reduced u-dofs.
    pub f_grav: Vec<f64>,
    /// Pressure slot of the crevasse mouth.
    pub mouth_slot: usize,
}

fn geom_key(dx: f64, dy: f64, layer: Layer) -> (u64, u64, bool) {
    (dx.to_bits(), dy.to_bits(), layer == Layer::Ice)
}

fn build_proto(coords: &[[f64; 2]; 9], props: &SolidProperties) -> Result<ElemProto, SimError> {
    let d = plane_strain_stiffness(props.youngs, props.poisson)?;
    let mut ke = vec![0.0; 18 * 18];
    let mut me = vec![0.0; 18 * 18];
    let mut fg = [0.0; 18];
    let mut ips = Vec::with_capacity(9);
    for &(xi, wx) in &GAUSS3 {
        for &(eta, wy) in &GAUSS3 {
            let (n, grads, det) = quad9_basis(coords, xi, eta)?;
            let wdet = wx * wy * det;
            // B^T D B with B in [xx, yy, zz, xy] engineering-shear layout
            for i in 0..9 {
                let (gxi, gyi) = (grads[i][0], grads[i][1]);
                let bi = [
                    [gxi, 0.0, 0.0, gyi], // column for u_x of node i
                    [0.0, gyi, 0.0, gxi], // column for u_y of node i
                ];
                for j in 0..9 {
                    let (gxj, gyj) = (grads[j][0], grads[j][1]);
                    let bj = [[gxj, 0.0, 0.0, gyj], [0.0, gyj, 0.0, gxj]];
                    for ci in 0..2 {
                        for cj in 0..2 {
                            let mut acc = 0.0;
                            for r in 0..4 {
                                for s in 0..4 {
                                    acc += bi[ci][r] * d[(r, s)] * bj[cj][s];
                                }
                            }
                            ke[(2 * i + ci) * 18 + 2 * j + cj] += acc * wdet;
                        }
                    }
                    let mass = props.density * n[i] * n[j] * wdet;
                    me[(2 * i) * 18 + 2 * j] += mass;
                    me[(2 * i + 1) * 18 + 2 * j + 1] += mass;
                }
                fg[2 * i + 1] += -props.density * 9.81 * n[i] * wdet;
            }
            ips.push(IpData {
                grads,
                wdet,
                eta,
            });
        }
    }
    Ok(ElemProto {
        ke,
        me,
        fg,
        ip: ips,
        stiffness: d,
    })
}

impl System {
    pub fn new(mesh: Mesh, mats: MaterialSet) -> Result<Self, SimError> {
        let mouth_slot = mesh.pressure_slots[&mesh.path.vertical[0].inner];
        let mut sys = System {
            dofs: DofMap::build(&mesh),
            protos: Vec::new(),
            elem_proto: Vec::new(),
            creep_a: Vec::new(),
            iface_temp: Vec::new(),
            k_el: Csr {
                n: 0,
                rowptr: vec![0],
                col: vec![],
                val: vec![],
            },
            m_mat: Csr {
                n: 0,
                rowptr: vec![0],
                col: vec![],
                val: vec![],
            },
            f_grav: Vec::new(),
            mouth_slot,
            mesh,
            mats,
        };
        sys.build_protos()?;
        sys.rebuild()?;
        Ok(sys)
    }

    fn props(&self, layer: Layer) -> &SolidProperties {
        match layer {
            Layer::Ice => &self.mats.ice,
            Layer::Rock => &self.mats.rock,
        }
    }

    fn build_protos(&mut self) -> Result<(), SimError> {
        let mut keys: HashMap<(u64, u64, bool), usize> = HashMap::new();
        self.elem_proto = Vec::with_capacity(self.mesh.elems.len());
        self.creep_a = Vec::with_capacity(self.mesh.elems.len());
        for el in &self.mesh.elems {
            let c = self.mesh.elem_coords(el);
            let dx = c[1][0] - c[0][0];
            let dy = c[3][1] - c[0][1];
            let key = geom_key(dx, dy, el.layer);
            let idx = match keys.get(&key) {
                Some(&i) => i,
                None => {
                    let proto = build_proto(&c, self.props(el.layer))?;
                    self.protos.push(proto);
                    keys.insert(key, self.protos.len() - 1);
                    self.protos.len() - 1
                }
            };
            self.elem_proto.push(idx);

            // temperature-dependent creep coefficient at each IP height
            let mut a = [0.0; 9];
            if el.layer == Layer::Ice && self.mats.rheology == Rheology::Viscoelastic {
                for (k, ip) in self.protos[idx].ip.iter().enumerate() {
                    let y = c[0][1] + (ip.eta + 1.0) / 2.0 * dy;
                    let depth = self.mesh.surface_y - y;
                    a[k] = match self.mats.override_creep {
                        Some(val) => val,
                        None => {
                            let t_c = self.mats.temperature.at_depth(depth);
                            creep_coefficient(&self.mats.ice, t_c + 273.15)
                        }
                    };
                }
            }
            self.creep_a.push(a);
        }
        Ok(())
    }

    /// Recompute dof numbering and the cached global matrices; called after
    /// every topology change.
    pub fn rebuild(&mut self) -> Result<(), SimError> {
        self.dofs = DofMap::build(&self.mesh);
        let n = self.dofs.n_free_u;
        let nnz_guess = self.mesh.elems.len() * 18 * 18 / 2;
        let mut kt: Vec<(u32, u32, f64)> = Vec::with_capacity(nnz_guess);
        let mut mt: Vec<(u32, u32, f64)> = Vec::with_capacity(nnz_guess / 4);
        let mut fg = vec![0.0; n];
        for (e, el) in self.mesh.elems.iter().enumerate() {
            let proto = &self.protos[self.elem_proto[e]];
            let mut dof = [None; 18];
            for (i, &node) in el.nodes.iter().enumerate() {
                dof[2 * i] = self.dofs.u(node, 0);
                dof[2 * i + 1] = self.dofs.u(node, 1);
            }
            for i in 0..18 {
                let Some(ri) = dof[i] else { continue };
                fg[ri] += proto.fg[i];
                for j in 0..18 {
                    let Some(cj) = dof[j] else { continue };
                    let kv = proto.ke[i * 18 + j];
                    if kv != 0.0 {
                        kt.push((ri as u32, cj as u32, kv));
                    }
                    let mv = proto.me[i * 18 + j];
                    if mv != 0.0 {
                        mt.push((ri as u32, cj as u32, mv));
                    }
                }
            }
        }
        self.k_el = Csr::from_triplets(n, kt);
        self.m_mat = Csr::from_triplets(n, mt);
        self.f_grav = fg;

        self.iface_temp = self
            .mesh
            .interfaces
            .iter()
            .map(|f| {
                let mut t = [0.0; 3];
                for (k, &node) in [f.plus[0], f.plus[1], f.plus[2]].iter().enumerate() {
                    let depth = self.mesh.surface_y - self.mesh.coords[node][1];
                    t[k] = self.mats.temperature.at_depth(depth.clamp(0.0, f64::MAX));
                }
                t
            })
            .collect();
        Ok(())
    }

    /// Tensile strength on a path segment at the given depth.
    pub fn strength_at_depth(&self, depth: f64) -> f64 {
        match self.mats.override_strength {
            Some(ft) => ft,
            None => tensile_strength(&self.mats.ice, self.mats.temperature.at_depth(depth)),
        }
    }

    /// Element stiffness matrix (plane strain) for its layer.
    pub fn elem_stiffness(&self, e: usize) -> &Matrix4<f64> {
        &self.protos[self.elem_proto[e]].stiffness
    }

    /// Total strain at an IP from nodal displacements.
    fn ip_strain(&self, e: usize, ip: usize, u: &[[f64; 2]]) -> Vector4<f64> {
        let proto = &self.protos[self.elem_proto[e]];
        let el = &self.mesh.elems[e];
        let g = &proto.ip[ip].grads;
        let mut eps = Vector4::zeros();
        for i in 0..9 {
            let ui = u[el.nodes[i]];
            eps[0] += g[i][0] * ui[0];
            eps[1] += g[i][1] * ui[1];
            eps[3] += g[i][1] * ui[0] + g[i][0] * ui[1];
        }
        eps
    }

    /// Stress at an IP given displacements and the viscous strain.
    pub fn ip_stress(
        &self,
        e: usize,
        ip: usize,
        u: &[[f64; 2]],
        visc: &Vector4<f64>,
    ) -> Vector4<f64> {
        let d = &self.protos[self.elem_proto[e]].stiffness;
        d * (self.ip_strain(e, ip, u) - visc)
    }

    pub fn ip_weight(&self, e: usize, ip: usize) -> f64 {
        self.protos[self.elem_proto[e]].ip[ip].wdet
    }

    pub fn n_bulk_ips(&self) -> usize {
        9
    }

    /// Implicit update of the viscous strain states from the displacements at
    /// the start of the increment; the bulk then stays linear within it.
    pub fn update_viscous_states(
        &self,
        u: &[[f64; 2]],
        visc: &mut [[Vector4<f64>; 9]],
        dt: f64,
    ) -> Result<(), SimError> {
        for (e, el) in self.mesh.elems.iter().enumerate() {
            let proto = &self.protos[self.elem_proto[e]];
            let n_creep = self.props(el.layer).creep_n;
            for ip in 0..9 {
                let a = self.creep_a[e][ip];
                if a > 0.0 {
                    let eps = self.ip_strain(e, ip, u);
                    visc[e][ip] = crate::constitutive::update_viscous_strain(
                        &eps,
                        &visc[e][ip],
                        &proto.stiffness,
                        a,
                        n_creep,
                        dt,
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Equivalent nodal force of the frozen viscous strains, `B^T D eps_v`,
    /// over reduced dofs; subtracted from the internal force by the caller.
    pub fn viscous_force(&self, visc: &[[Vector4<f64>; 9]]) -> Vec<f64> {
        let mut f = vec![0.0; self.dofs.n_free_u];
        for (e, el) in self.mesh.elems.iter().enumerate() {
            let proto = &self.protos[self.elem_proto[e]];
            for ip in 0..9 {
                let ev = &visc[e][ip];
                if ev.norm_squared() == 0.0 {
                    continue;
                }
                let s = proto.stiffness * ev;
                let g = &proto.ip[ip].grads;
                let w = proto.ip[ip].wdet;
                for i in 0..9 {
                    if let Some(ri) = self.dofs.u(el.nodes[i], 0) {
                        f[ri] += (g[i][0] * s[0] + g[i][1] * s[3]) * w;
                    }
                    if let Some(ri) = self.dofs.u(el.nodes[i], 1) {
                        f[ri] += (g[i][1] * s[1] + g[i][0] * s[3]) * w;
                    }
                }
            }
        }
        f
    }

    /// Set the crack water pressure to the hydrostatic profile of a column
    /// connected to the lake: `p_ext + rho_w g (depth)`. Starting the coupled
    /// solve from this profile instead of zero keeps the nearly singular
    /// closed-crack flow block consistent from the first iteration.
    pub fn hydrostatic_pressure(&self, p: &mut [f64]) {
        let rw_g = self.mats.flow.rho_water * self.mats.flow.gravity;
        for iface in &self.mesh.interfaces {
            for a in 0..3 {
                let depth = self.mesh.surface_y - self.mesh.coords[iface.plus[a]][1];
                p[iface.pslots[a]] = self.mats.p_ext + rw_g * depth;
            }
        }
    }

    /// Stress at the current tip node of an arm, projected on the arm normal,
    /// together with the local tensile strength. Each adjacent bulk element
    /// extrapolates its integration-point stresses to the node; the nodal
    /// values are averaged weighted by element area. None when the arm is
    /// exhausted.
    pub fn tip_normal_stress(
        &self,
        arm: Arm,
        u: &[[f64; 2]],
        visc: &[[Vector4<f64>; 9]],
    ) -> Option<(usize, f64, f64)> {
        let segs = self.mesh.path.arm(arm);
        let idx = self.mesh.path.cracked_len(arm);
        if idx >= segs.len() {
            return None;
        }
        let seg = &segs[idx];
        let normal = match arm {
            Arm::Vertical => [1.0, 0.0],
            _ => [0.0, 1.0],
        };
        // Gauss-to-node quadratic extrapolation weights in 1D: Lagrange
        // polynomials through the 3 Gauss abscissae evaluated at xi.
        let lag1d = |x: f64| -> [f64; 3] {
            let a = crate::mesh::basis::GAUSS3[2].0;
            [
                x * (x - a) / (2.0 * a * a),
                (a * a - x * x) / (a * a),
                x * (x + a) / (2.0 * a * a),
            ]
        };
        let mut sigma = Vector4::zeros();
        let mut wsum = 0.0;
        for &tip in self.mesh.copies_of(seg.inner) {
            for &e in &self.mesh.node_elems[tip] {
                let e = e as usize;
                let el = &self.mesh.elems[e];
                let loc = el.nodes.iter().position(|&n| n == tip).unwrap();
                let [xi, eta] = Mesh::local_of(loc);
                let (lx, le) = (lag1d(xi), lag1d(eta));
                // extrapolate the IP stress field to the tip node
                let mut s_node = Vector4::zeros();
                let mut area = 0.0;
                for ix in 0..3 {
                    for ie in 0..3 {
                        let ip = 3 * ix + ie;
                        s_node +=
                            self.ip_stress(e, ip, u, &visc[e][ip]) * (lx[ix] * le[ie]);
                        area += self.ip_weight(e, ip);
                    }
                }
                if std::env::var_os("CREVASSE_TIP_DEBUG").is_some() {
                    let cc: [f64; 2] = {
                        let mut c = [0.0; 2];
                        for &n in &el.nodes {
                            c[0] += self.mesh.coords[n][0] / 9.0;
                            c[1] += self.mesh.coords[n][1] / 9.0;
                        }
                        c
                    };
                    eprintln!(
                        "      elem at ({:.1},{:.1}): s_node=[{:.3e},{:.3e},{:.3e},{:.3e}]",
                        cc[0], cc[1], s_node[0], s_node[1], s_node[2], s_node[3]
                    );
                }
                sigma += s_node * area;
                wsum += area;
            }
        }
        sigma /= wsum;
        let sn = normal[0] * normal[0] * sigma[0]
            + normal[1] * normal[1] * sigma[1]
            + 2.0 * normal[0] * normal[1] * sigma[3];
        let depth = seg.depth.min(self.mesh.spec.ice_thickness);
        Some((idx, sn, self.strength_at_depth(depth)))
    }
}

/// Everything the interface assembly needs about the current Newton iterate.
pub struct IterateView<'a> {
    /// End-of-step displacements per node.
    pub u: &'a [[f64; 2]],
    /// End-of-step velocities per node (Newmark-consistent).
    pub v: &'a [[f64; 2]],
    /// End-of-step pressures per slot.
    pub p: &'a [f64],
    /// Start-of-increment pressures.
    pub p_old: &'a [f64],
    /// Start-of-increment channel states.
    pub channel_old: &'a [[ChannelPointState; 3]],
    pub dt: f64,
    /// Physical time at the end of the step.
    pub time_end: f64,
    /// d(velocity)/d(displacement) of the Newmark scheme.
    pub rate_factor: f64,
    /// Creep initialisation: no conduction, no melt evolution.
    pub thermal_frozen: bool,
}

/// Converged per-IP channel solutions, ordered (interface, ip).
pub type ChannelSolutions = Vec<[LocalSolution; 3]>;

/// Integrated interface quantities over one increment, evaluated with the
/// same quadrature as the mass residual so the water balance closes to the
/// Newton tolerance.
#[derive(Debug, Clone, Copy, Default)]
pub struct InterfaceTally {
    /// Water volume stored this increment: crack opening, compressibility,
    /// and the cavity left by melted ice (m^3 per metre out of plane).
    pub stored: f64,
    /// Frictional heat released by the flow, J/m.
    pub friction: f64,
    /// Heat conducted into the surrounding ice, J/m (negative for a loss).
    pub conduction: f64,
    /// Latent heat of the melted/refrozen wall ice, J/m.
    pub phase: f64,
    /// Inlet flux implied by the crevasse-mouth mass balance, m^2/s. The
    /// penalty form k_p (p_ext - p) saturates double precision, so the flux
    /// is recovered from the channel side of the mouth equation instead.
    pub inlet: f64,
}

/// Pressure at which the crack water cavitates, Pa. Slightly below vacuum:
/// crack water sustains a modest metastable tension before voiding.
pub const CAVITATION_PRESSURE: f64 = -1.0e5;
/// Regularisation scale of the saturation ramp near cavitation, Pa.
pub const SATURATION_SCALE: f64 = 1.0e4;

/// Residual conductivity fraction of a fully cavitated channel stretch: keeps
/// the pressure equation regular where the water has voided and lets arriving
/// water re-wet the stretch.
pub const RESIDUAL_WETTING: f64 = 1.0e-6;

/// Relaxation compliance (m/(Pa s)) anchoring the pressure of a cavitated
/// stretch at the cavitation level. A voided stretch holds vapour, not a
/// hanging water column: without the anchor the residual conductivity would
/// extend the hydrostatic gradient into the void and read deep suction there.
/// Inactive (factor `1 - s`) wherever the channel is saturated.
pub const CAVITATION_RELAX: f64 = 1.0e-9;

/// Water saturation of the crack cavity and its first two pressure
/// derivatives. Above the cavitation pressure the cavity is full (s = 1,
/// exactly in double precision once p exceeds the vapour pressure by a few
/// tens of the ramp scale); as the pressure falls towards vapour level the
/// water content decouples from the geometric aperture, letting fresh crack
/// faces part ahead of the water front (fluid lag) instead of being sealed
/// shut by an incompressibility constraint on a volume that holds no water.
pub fn saturation(p: f64) -> (f64, f64, f64) {
    let x = (p - CAVITATION_PRESSURE) / SATURATION_SCALE;
    if x > 40.0 {
        return (1.0, 0.0, 0.0);
    }
    let s = 1.0 / (1.0 + (-x).exp());
    let s1 = s * (1.0 - s) / SATURATION_SCALE;
    let s2 = s1 * (1.0 - 2.0 * s) / SATURATION_SCALE;
    (s, s1, s2)
}

fn frozen_solution(flow: &FlowParams, inp: &LocalInputs) -> LocalSolution {
    let h = inp.h_melt_old + inp.jump;
    let he = h.max(channel::APERTURE_FLOOR);
    let q = channel::fluid_flux(flow, h, inp.gradient);
    // finite-difference free derivatives of the closed-form flux
    let dg = 1e-8 * inp.gradient.abs().max(1.0);
    let dq_dg = (channel::fluid_flux(flow, h, inp.gradient + dg)
        - channel::fluid_flux(flow, h, inp.gradient - dg))
        / (2.0 * dg);
    let dq_dh = if h > channel::APERTURE_FLOOR {
        q * 5.0 / (3.0 * he)
    } else {
        0.0
    };
    LocalSolution {
        q,
        h_melt: inp.h_melt_old,
        h,
        j_flow: channel::heat_flux_flow(q, inp.gradient),
        j_ice: 0.0,
        dq_dgradient: dq_dg,
        dq_djump: dq_dh,
        dh_dgradient: 0.0,
        dh_djump: 1.0,
        dhmelt_dgradient: 0.0,
        dhmelt_djump: 0.0,
        iterations: 0,
    }
}

impl System {
    /// Assemble interface residual contributions into `f` (reduced ordering:
    /// u dofs then p dofs) and, when requested, tangent triplets. Returns the
    /// converged channel solutions for state updates and diagnostics.
    pub fn assemble_interfaces(
        &self,
        it: &IterateView<'_>,
        f: &mut [f64],
        mut trips: Option<&mut Vec<Triplet<usize, usize, f64>>>,
    ) -> Result<(ChannelSolutions, InterfaceTally), SimError> {
        let flow = &self.mats.flow;
        let rho_ratio = self.mats.ice.density / flow.rho_water;
        let kw = flow.bulk_modulus;
        let mut out: ChannelSolutions = Vec::with_capacity(self.mesh.interfaces.len());
        let mut tally = InterfaceTally::default();

        for (fi, iface) in self.mesh.interfaces.iter().enumerate() {
            let half_len = iface.length / 2.0;
            let n = iface.normal;
            let g_dot_s =
                -flow.gravity * iface.tangent[1]; // g = (0, -g): g.s = -g * s_y
            let mut sols: Vec<LocalSolution> = Vec::with_capacity(3);

            for (k, &(xi, wq)) in NEWTON_COTES3.iter().enumerate() {
                let w = wq * half_len;
                let shp = line3_shape(xi);
                let dshp = line3_shape_deriv(xi);
                // pressure, gradient, jump, jump rate at this point
                let mut p_ip = 0.0;
                let mut pold_ip = 0.0;
                let mut grad_p = 0.0;
                for a in 0..3 {
                    p_ip += shp[a] * it.p[iface.pslots[a]];
                    pold_ip += shp[a] * it.p_old[iface.pslots[a]];
                    grad_p += dshp[a] / half_len * it.p[iface.pslots[a]];
                }
                let mut jump = 0.0;
                let mut jump_rate = 0.0;
                for a in 0..3 {
                    let up = it.u[iface.plus[a]];
                    let um = it.u[iface.minus[a]];
                    let vp = it.v[iface.plus[a]];
                    let vm = it.v[iface.minus[a]];
                    jump += shp[a] * (n[0] * (up[0] - um[0]) + n[1] * (up[1] - um[1]));
                    jump_rate += shp[a] * (n[0] * (vp[0] - vm[0]) + n[1] * (vp[1] - vm[1]));
                }

                let state = &it.channel_old[fi][k];
                let inp = LocalInputs {
                    gradient: grad_p - flow.rho_water * g_dot_s,
                    jump,
                    h_melt_old: state.h_melt,
                    elapsed: (it.time_end - state.t0).max(it.dt),
                    dt: it.dt,
                };
                let sol = if it.thermal_frozen {
                    frozen_solution(flow, &inp)
                } else {
                    let thermal = ThermalParams {
                        conductivity: self.mats.ice.conductivity,
                        rho_ice: self.mats.ice.density,
                        heat_capacity: self.mats.ice.heat_capacity,
                        latent_heat: self.mats.ice.latent_heat,
                        far_temp: self.iface_temp[fi][k],
                    };
                    channel::local_solve(flow, &thermal, &inp)?
                };

                // cohesive + pressure traction on the faces
                let strength = if iface.notch {
                    0.0
                } else {
                    self.strength_at_depth(iface.depth)
                };
                let (t_coh, dt_coh) = if iface.notch {
                    (0.0, 0.0)
                } else {
                    (
                        cohesive::cohesive_traction(jump, strength, self.mats.ice.fracture_energy),
                        cohesive::cohesive_stiffness(jump, strength, self.mats.ice.fracture_energy),
                    )
                };
                let traction = t_coh - p_ip;

                // momentum residual: traction work-conjugate to the jump
                for a in 0..3 {
                    for comp in 0..2 {
                        let gun = shp[a] * n[comp];
                        if let Some(ri) = self.dofs.u(iface.plus[a], comp) {
                            f[ri] += w * traction * gun;
                        }
                        if let Some(ri) = self.dofs.u(iface.minus[a], comp) {
                            f[ri] -= w * traction * gun;
                        }
                    }
                }

                // mass residual: flux divergence, water storage, melt source,
                // and aperture rate. The stored water is s(p)·max(h,0): a
                // closed crack holds no water, and a cavitated point (p at
                // vapour level) lets the faces part ahead of the water front.
                let p_rate = (p_ip - pold_ip) / it.dt;
                let h_store = sol.h.max(0.0);
                let melt_rate = (sol.h_melt - state.h_melt) / it.dt;
                let (s, s1, _) = saturation(p_ip);
                // Cavitated stretches carry (almost) no water, so they conduct
                // (almost) none: the flux is scaled by the saturation, which
                // pins the pressure of a starved point at the cavitation level
                // instead of letting the flux law pull it into deep suction.
                let wet = s + RESIDUAL_WETTING;
                let demand = s * jump_rate
                    + (s - rho_ratio) * melt_rate
                    + (s1 + s / kw) * h_store * p_rate
                    + CAVITATION_RELAX * (1.0 - s) * (p_ip - CAVITATION_PRESSURE);
                for a in 0..3 {
                    let rp = self.dofs.p(iface.pslots[a]);
                    f[rp] += w * (dshp[a] / half_len * wet * sol.q - shp[a] * demand);
                }

                if let Some(t) = trips.as_deref_mut() {
                    self.interface_tangent(
                        it, iface, k, w, half_len, &shp, &dshp, &sol, dt_coh, p_ip, p_rate,
                        jump_rate, melt_rate, t,
                    );
                }
                let d_melt = sol.h_melt - state.h_melt;
                tally.stored += w
                    * (s * jump_rate * it.dt
                        + (s - rho_ratio) * d_melt
                        + (s1 + s / kw) * h_store * (p_ip - pold_ip)
                        + CAVITATION_RELAX
                            * (1.0 - s)
                            * (p_ip - CAVITATION_PRESSURE)
                            * it.dt);
                tally.friction += w * sol.j_flow * it.dt;
                tally.conduction += w * sol.j_ice * it.dt;
                tally.phase += w * self.mats.ice.density * self.mats.ice.latent_heat * d_melt;
                sols.push(sol);
            }
            out.push([sols[0], sols[1], sols[2]]);
        }

        // inlet penalty at the crevasse mouth
        let rp = self.dofs.p(self.mouth_slot);
        tally.inlet = -f[rp];
        f[rp] += self.mats.inlet_coefficient * (self.mats.p_ext - it.p[self.mouth_slot]);
        if let Some(t) = trips.as_deref_mut() {
            t.push(Triplet::new(rp, rp, -self.mats.inlet_coefficient));
        }
        Ok((out, tally))
    }

    /// TEMPORARY diagnostics: nodal interface state on stderr.
    pub fn debug_interfaces(
        &self,
        u: &[[f64; 2]],
        p: &[f64],
        channel: &[[ChannelPointState; 3]],
    ) {
        for (fi, iface) in self.mesh.interfaces.iter().enumerate() {
            let mut line = format!("{:?} seg {:>2} d={:>5.1}:", iface.arm, iface.seg_idx, iface.depth);
            for a in 0..3 {
                let up = u[iface.plus[a]];
                let um = u[iface.minus[a]];
                let n = iface.normal;
                let jump = n[0] * (up[0] - um[0]) + n[1] * (up[1] - um[1]);
                let pv = p[iface.pslots[a]];
                let strength = if iface.notch { 0.0 } else { self.strength_at_depth(iface.depth) };
                let t = cohesive::cohesive_traction(jump, strength, self.mats.ice.fracture_energy);
                let q = channel[fi][a].q;
                line += &format!("  [j={:+.3e} p={:+.3e} t={:+.2e} q={:+.2e}]", jump, pv, t, q);
            }
            eprintln!("{line}");
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn interface_tangent(
        &self,
        it: &IterateView<'_>,
        iface: &crate::mesh::InterfaceElement,
        _k: usize,
        w: f64,
        half_len: f64,
        shp: &[f64; 3],
        dshp: &[f64; 3],
        sol: &LocalSolution,
        dt_coh: f64,
        p_ip: f64,
        p_rate: f64,
        jump_rate: f64,
        melt_rate: f64,
        trips: &mut Vec<Triplet<usize, usize, f64>>,
    ) {
        let n = iface.normal;
        let kw = self.mats.flow.bulk_modulus;
        let rho_ratio = self.mats.ice.density / self.mats.flow.rho_water;
        let (s, s1, s2) = saturation(p_ip);

        // K_uu: cohesive softening; K_up: pressure opening force
        for a in 0..3 {
            for ca in 0..2 {
                let ga = shp[a] * n[ca];
                let rows = [
                    self.dofs.u(iface.plus[a], ca).map(|r| (r, 1.0)),
                    self.dofs.u(iface.minus[a], ca).map(|r| (r, -1.0)),
                ];
                for row in rows.into_iter().flatten() {
                    for b in 0..3 {
                        for cb in 0..2 {
                            let gb = shp[b] * n[cb];
                            let cols = [
                                self.dofs.u(iface.plus[b], cb).map(|c| (c, 1.0)),
                                self.dofs.u(iface.minus[b], cb).map(|c| (c, -1.0)),
                            ];
                            for col in cols.into_iter().flatten() {
                                let v = w * dt_coh * ga * gb * row.1 * col.1;
                                if v != 0.0 {
                                    trips.push(Triplet::new(row.0, col.0, v));
                                }
                            }
                        }
                        let cp = self.dofs.p(iface.pslots[b]);
                        trips.push(Triplet::new(row.0, cp, -w * shp[b] * ga * row.1));
                    }
                }
            }
        }

        // K_pp and K_pu rows; the storage aperture is clamped at zero for a
        // closed crack, so its sensitivities vanish there
        let h_store = sol.h.max(0.0);
        let open = if sol.h > 0.0 { 1.0 } else { 0.0 };
        let cap = s1 + s / kw;
        let wet = s + RESIDUAL_WETTING;
        for a in 0..3 {
            let rp = self.dofs.p(iface.pslots[a]);
            for b in 0..3 {
                let cp = self.dofs.p(iface.pslots[b]);
                let dg = dshp[b] / half_len;
                let v = w
                    * (dshp[a] / half_len
                        * (wet * sol.dq_dgradient * dg + s1 * shp[b] * sol.q)
                        - shp[a]
                            * (cap * open * sol.dh_dgradient * dg * p_rate
                                + cap * h_store * shp[b] / it.dt
                                + (s2 + s1 / kw) * h_store * p_rate * shp[b]
                                + s1 * shp[b] * (jump_rate + melt_rate)
                                + CAVITATION_RELAX
                                    * ((1.0 - s) - s1 * (p_ip - CAVITATION_PRESSURE))
                                    * shp[b]
                                + (s - rho_ratio) * sol.dhmelt_dgradient * dg / it.dt));
                if v != 0.0 {
                    trips.push(Triplet::new(rp, cp, v));
                }
            }
            for b in 0..3 {
                for cb in 0..2 {
                    let gb = shp[b] * n[cb];
                    let cols = [
                        self.dofs.u(iface.plus[b], cb).map(|c| (c, 1.0)),
                        self.dofs.u(iface.minus[b], cb).map(|c| (c, -1.0)),
                    ];
                    for col in cols.into_iter().flatten() {
                        let v = w
                            * col.1
                            * (dshp[a] / half_len * wet * sol.dq_djump * gb
                                - shp[a]
                                    * (cap * open * sol.dh_djump * gb * p_rate
                                        + (s - rho_ratio) * sol.dhmelt_djump * gb / it.dt
                                        + s * it.rate_factor * gb));
                        if v != 0.0 {
                            trips.push(Triplet::new(rp, col.0, v));
                        }
                    }
                }
            }
        }
    }
}
