//! Domain geometry: the graded quadratic-quad grid over ice and rock, the
//! predetermined crack path, and topology updates when cohesive interface
//! elements are inserted at a propagating tip.

pub mod basis;
mod topology;

use std::collections::HashMap;
use std::io::Write;

use crate::error::SimError;
use basis::{quad9_basis, GAUSS3, QUAD9_LOCAL};

/// Geometric growth ratio used when coarsening away from the crack path.
const GRADING_RATIO: f64 = 1.3;

/// Geometry of the idealised glacier cross-section.
#[derive(Debug, Clone, Copy)]
pub struct DomainSpec {
    /// Ice thickness, m.
    pub ice_thickness: f64,
    /// Total domain width, m; the crevasse sits at the centre.
    pub domain_width: f64,
    /// Thickness of the bedrock layer, m.
    pub rock_thickness: f64,
    /// Depth of the pre-existing surface crevasse, m.
    pub initial_notch_depth: f64,
    /// Element size near the crack path, m.
    pub fine_element_size: f64,
    /// Upper bound on the element size in the far field, m.
    pub coarse_element_size: f64,
    /// Half-width of the laterally uniform fine band around the crevasse, m.
    /// Beyond it, columns coarsen geometrically towards `coarse_element_size`.
    pub fine_halfwidth: f64,
}

impl DomainSpec {
    /// Geometry of the Das 2008 reference case.
    pub fn das() -> Self {
        DomainSpec {
            ice_thickness: 980.0,
            domain_width: 6000.0,
            rock_thickness: 200.0,
            initial_notch_depth: 30.0,
            fine_element_size: 2.5,
            coarse_element_size: 20.0,
            fine_halfwidth: 400.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.ice_thickness,
            self.domain_width,
            self.rock_thickness,
            self.initial_notch_depth,
            self.fine_element_size,
            self.coarse_element_size,
        ];
        if all.iter().any(|&v| !(v > 0.0)) {
            return Err(SimError::Domain("all dimensions must be positive".into()));
        }
        if self.initial_notch_depth >= self.ice_thickness {
            return Err(SimError::Domain(format!(
                "notch depth {} must be less than ice thickness {}",
                self.initial_notch_depth, self.ice_thickness
            )));
        }
        if self.coarse_element_size < self.fine_element_size {
            return Err(SimError::Domain(
                "coarse element size below fine element size".into(),
            ));
        }
        let tiles = |len: f64| {
            let n = (len / self.fine_element_size).round();
            n >= 1.0 && (n * self.fine_element_size - len).abs() < 1e-6 * len.max(1.0)
        };
        if !tiles(self.ice_thickness) || !tiles(self.initial_notch_depth) {
            return Err(SimError::Domain(format!(
                "fine element size {} must evenly tile the notch ({}) and the ice thickness ({})",
                self.fine_element_size, self.initial_notch_depth, self.ice_thickness
            )));
        }
        Ok(())
    }
}

/// Bulk layer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Ice,
    Rock,
}

/// 9-node Lagrangian quadrilateral.
#[derive(Debug, Clone)]
pub struct BulkElement {
    pub nodes: [usize; 9],
    pub layer: Layer,
}

/// Which branch of the predetermined crack path a segment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Vertical,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegStatus {
    Intact,
    Cohesive,
    /// Pre-split traction-free part of the initial crevasse.
    Notch,
}

/// One candidate crack segment along an element edge. Node ids refer to the
/// original (pre-duplication) grid nodes.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Corner node nearer the crevasse mouth (vertical) or the junction (arms).
    pub inner: usize,
    pub mid: usize,
    pub outer: usize,
    pub status: SegStatus,
    pub length: f64,
    /// Depth below the ice surface of the segment midpoint, m.
    pub depth: f64,
}

/// The predetermined crack path: straight down from the surface to the bed,
/// then sideways along the ice-rock interface in both directions.
#[derive(Debug, Clone)]
pub struct CrackPath {
    pub vertical: Vec<Segment>,
    pub left: Vec<Segment>,
    pub right: Vec<Segment>,
    pub n_notch: usize,
}

impl CrackPath {
    pub fn arm(&self, arm: Arm) -> &[Segment] {
        match arm {
            Arm::Vertical => &self.vertical,
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    fn arm_mut(&mut self, arm: Arm) -> &mut Vec<Segment> {
        match arm {
            Arm::Vertical => &mut self.vertical,
            Arm::Left => &mut self.left,
            Arm::Right => &mut self.right,
        }
    }

    /// Number of non-intact segments at the start of an arm.
    pub fn cracked_len(&self, arm: Arm) -> usize {
        self.arm(arm)
            .iter()
            .take_while(|s| s.status != SegStatus::Intact)
            .count()
    }

    /// True once every vertical segment carries an interface element.
    pub fn reached_bed(&self) -> bool {
        self.cracked_len(Arm::Vertical) == self.vertical.len()
    }
}

/// Cohesive interface element: two coincident quadratic faces plus three
/// pressure nodes for the channel flow.
#[derive(Debug, Clone)]
pub struct InterfaceElement {
    pub arm: Arm,
    pub seg_idx: usize,
    /// Face on the side the normal points towards, ordered along the tangent.
    pub plus: [usize; 3],
    pub minus: [usize; 3],
    /// Pressure dof slots (inner, mid, outer along the tangent).
    pub pslots: [usize; 3],
    pub normal: [f64; 2],
    /// Channel flow direction: down the crevasse, outward along the arms.
    pub tangent: [f64; 2],
    pub length: f64,
    /// Depth below the ice surface of the element midpoint, m.
    pub depth: f64,
    /// Initial-notch elements carry no cohesive traction.
    pub notch: bool,
}

/// The finite element mesh, including crack-path bookkeeping that grows as
/// interface elements are inserted.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub spec: DomainSpec,
    pub coords: Vec<[f64; 2]>,
    /// Original grid node behind each node (identity for originals).
    pub orig: Vec<usize>,
    pub elems: Vec<BulkElement>,
    /// Bulk elements incident to each node.
    pub node_elems: Vec<Vec<u32>>,
    pub interfaces: Vec<InterfaceElement>,
    pub path: CrackPath,
    /// All current copies of each original path node.
    pub(crate) copies: HashMap<usize, Vec<usize>>,
    /// Pressure dof slot per original path node, assigned on first activation.
    pub pressure_slots: HashMap<usize, usize>,
    pub n_pressure: usize,
    pub surface_y: f64,
    pub interface_y: f64,
}

/// Generate cell sizes that coarsen geometrically from `fine` towards at most
/// `coarse` and exactly tile `total`.
fn graded_steps(fine: f64, coarse: f64, total: f64) -> Vec<f64> {
    if total <= 0.0 {
        return Vec::new();
    }
    let mut steps = Vec::new();
    let mut size = fine;
    let mut sum = 0.0;
    while sum < total {
        size = (size * GRADING_RATIO).min(coarse);
        steps.push(size);
        sum += size;
    }
    // rescale to fit exactly; add coarse cells until the scale is <= 1 so no
    // cell exceeds the coarse bound
    let mut scale = total / sum;
    while scale > 1.0 {
        steps.push(coarse);
        sum += coarse;
        scale = total / sum;
    }
    for s in steps.iter_mut() {
        *s *= scale;
    }
    steps
}

/// Build the conforming graded mesh with the initial notch pre-split.
pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh, SimError> {
    spec.validate()?;
    let half = spec.domain_width / 2.0;
    let fine = spec.fine_element_size;

    // column widths for the right half; mirrored on the left
    let max_fine_cols = (half / fine + 1e-9).floor().max(1.0) as usize;
    let mut fine_cols = ((spec.fine_halfwidth.min(half)) / fine)
        .ceil()
        .max(1.0) as usize;
    fine_cols = fine_cols.min(max_fine_cols);
    let mut remaining = half - fine_cols as f64 * fine;
    if remaining < 1e-9 * half {
        remaining = 0.0;
    } else if remaining < 0.5 * fine && fine_cols > 1 {
        // avoid a sliver column between the fine band and the boundary
        fine_cols -= 1;
        remaining += fine;
    }
    let mut half_steps: Vec<f64> = vec![fine; fine_cols];
    half_steps.extend(graded_steps(fine, spec.coarse_element_size, remaining));
    debug_assert!((half_steps.iter().sum::<f64>() - half).abs() < 1e-6 * half);

    // grid lines in x, symmetric about 0
    let mut xs: Vec<f64> = Vec::with_capacity(2 * half_steps.len() + 1);
    let mut acc = 0.0;
    let mut right_lines = vec![0.0];
    for s in &half_steps {
        acc += s;
        right_lines.push(acc);
    }
    *right_lines.last_mut().unwrap() = half;
    for v in right_lines.iter().skip(1).rev() {
        xs.push(-v);
    }
    xs.extend(right_lines.iter());

    // grid lines in y, from rock bottom (0) to surface
    let mut ys: Vec<f64> = Vec::new();
    let rock_steps = graded_steps(fine, spec.coarse_element_size, spec.rock_thickness);
    let mut y = 0.0;
    ys.push(0.0);
    for s in rock_steps.iter().rev() {
        y += s;
        ys.push(y);
    }
    *ys.last_mut().unwrap() = spec.rock_thickness;
    let n_ice = (spec.ice_thickness / fine).round() as usize;
    for i in 1..=n_ice {
        ys.push(spec.rock_thickness + i as f64 * fine);
    }

    let ncol = xs.len() - 1;
    let nrow = ys.len() - 1;
    let row_interface = rock_steps.len();
    let col_zero = half_steps.len(); // grid-line index of x = 0

    // nodal coordinate lines (grid lines plus midpoints)
    let midify = |lines: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * lines.len() - 1);
        for w in lines.windows(2) {
            out.push(w[0]);
            out.push(0.5 * (w[0] + w[1]));
        }
        out.push(*lines.last().unwrap());
        out
    };
    let xn = midify(&xs);
    let yn = midify(&ys);
    let nx = xn.len();

    let node = |ix: usize, iy: usize| iy * nx + ix;
    let mut coords = Vec::with_capacity(nx * yn.len());
    for yv in &yn {
        for xv in &xn {
            coords.push([*xv, *yv]);
        }
    }

    let mut elems = Vec::with_capacity(ncol * nrow);
    for r in 0..nrow {
        for c in 0..ncol {
            let (ix, iy) = (2 * c, 2 * r);
            let nodes = [
                node(ix, iy),
                node(ix + 2, iy),
                node(ix + 2, iy + 2),
                node(ix, iy + 2),
                node(ix + 1, iy),
                node(ix + 2, iy + 1),
                node(ix + 1, iy + 2),
                node(ix, iy + 1),
                node(ix + 1, iy + 1),
            ];
            let layer = if r >= row_interface { Layer::Ice } else { Layer::Rock };
            elems.push(BulkElement { nodes, layer });
        }
    }

    let mut node_elems = vec![Vec::new(); coords.len()];
    for (e, el) in elems.iter().enumerate() {
        for &n in &el.nodes {
            node_elems[n].push(e as u32);
        }
    }

    let surface_y = ys[nrow];
    let interface_y = spec.rock_thickness;
    let ix0 = 2 * col_zero;
    let iy_top = 2 * nrow;
    let iy_int = 2 * row_interface;

    // vertical path, surface to bed
    let mut vertical = Vec::with_capacity(n_ice);
    for j in 0..n_ice {
        let iy = iy_top - 2 * j;
        vertical.push(Segment {
            inner: node(ix0, iy),
            mid: node(ix0, iy - 1),
            outer: node(ix0, iy - 2),
            status: SegStatus::Intact,
            length: fine,
            depth: (j as f64 + 0.5) * fine,
        });
    }
    // horizontal arms, junction outward
    let bed_depth = spec.ice_thickness;
    let mut right = Vec::new();
    for c in col_zero..ncol {
        let ix = 2 * c;
        right.push(Segment {
            inner: node(ix, iy_int),
            mid: node(ix + 1, iy_int),
            outer: node(ix + 2, iy_int),
            status: SegStatus::Intact,
            length: xs[c + 1] - xs[c],
            depth: bed_depth,
        });
    }
    let mut left = Vec::new();
    for c in (0..col_zero).rev() {
        let ix = 2 * c;
        left.push(Segment {
            inner: node(ix + 2, iy_int),
            mid: node(ix + 1, iy_int),
            outer: node(ix, iy_int),
            status: SegStatus::Intact,
            length: xs[c + 1] - xs[c],
            depth: bed_depth,
        });
    }

    let n_notch = (spec.initial_notch_depth / fine).round() as usize;
    let orig = (0..coords.len()).collect();
    let mut mesh = Mesh {
        spec: *spec,
        coords,
        orig,
        elems,
        node_elems,
        interfaces: Vec::new(),
        path: CrackPath {
            vertical,
            left,
            right,
            n_notch,
        },
        copies: HashMap::new(),
        pressure_slots: HashMap::new(),
        n_pressure: 0,
        surface_y,
        interface_y,
    };
    for j in 0..n_notch {
        mesh.insert_segment(Arm::Vertical, j, true)?;
    }
    Ok(mesh)
}

impl Mesh {
    /// Total dof-free measure of the bulk: the integral of 1 over all elements.
    pub fn bulk_area(&self) -> f64 {
        let mut area = 0.0;
        for el in &self.elems {
            let c = self.elem_coords(el);
            for &(xi, wx) in &GAUSS3 {
                for &(eta, wy) in &GAUSS3 {
                    let (_, _, det) = quad9_basis(&c, xi, eta).expect("valid element");
                    area += wx * wy * det;
                }
            }
        }
        area
    }

    pub fn elem_coords(&self, el: &BulkElement) -> [[f64; 2]; 9] {
        let mut c = [[0.0; 2]; 9];
        for (i, &n) in el.nodes.iter().enumerate() {
            c[i] = self.coords[n];
        }
        c
    }

    /// All current copies of an original grid node.
    pub fn copies_of(&self, orig: usize) -> &[usize] {
        self.copies
            .get(&orig)
            .map(|v| v.as_slice())
            .unwrap_or(std::slice::from_ref(&self.orig[orig]))
    }

    /// Surface node closest to the requested x offset from the crevasse.
    pub fn surface_node_near(&self, x: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, c) in self.coords.iter().enumerate() {
            if (c[1] - self.surface_y).abs() < 1e-9 {
                let d = (c[0] - x).abs();
                if d < dist {
                    dist = d;
                    best = i;
                }
            }
        }
        best
    }

    /// ASCII dump: nodes then elements, one record per line.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# nodes: id x y")?;
        for (i, c) in self.coords.iter().enumerate() {
            writeln!(w, "{} {} {}", i, c[0], c[1])?;
        }
        writeln!(w, "# elements: id n0..n8 material")?;
        for (i, el) in self.elems.iter().enumerate() {
            write!(w, "{}", i)?;
            for n in &el.nodes {
                write!(w, " {}", n)?;
            }
            writeln!(
                w,
                " {}",
                match el.layer {
                    Layer::Ice => "ice",
                    Layer::Rock => "rock",
                }
            )?;
        }
        Ok(())
    }

    /// Reference local coordinates of the element nodes (for IP placement).
    pub fn local_of(i: usize) -> [f64; 2] {
        QUAD9_LOCAL[i]
    }
}
