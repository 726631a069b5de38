//! CSV time series and VTK snapshot writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::constitutive::{deviatoric, maxwell_time};
use crate::error::SimError;
use crate::mesh::Layer;
use crate::scenario::runner::TimeSeriesRow;
use crate::solver::system::System;
use crate::solver::SimState;

/// Column header of the diagnostic time series.
pub const CSV_HEADER: &str = "time_s,crevasse_depth_m,crack_left_m,crack_right_m,\
mouth_open_def_m,mouth_open_melt_m,p_base_Pa,p_tip_Pa,q_inlet_m2_s,Q_total_m3pm,\
E_friction_Jpm,E_conduction_Jpm,E_phase_Jpm,uplift_0m,uplift_500m,uplift_1000m,uplift_2000m";

/// Format one CSV data row (no trailing newline).
pub fn format_row(r: &TimeSeriesRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.time_s,
        r.crevasse_depth_m,
        r.crack_left_m,
        r.crack_right_m,
        r.mouth_open_def_m,
        r.mouth_open_melt_m,
        r.p_base_pa,
        r.p_tip_pa,
        r.q_inlet_m2_s,
        r.q_total_m3pm,
        r.e_friction_jpm,
        r.e_conduction_jpm,
        r.e_phase_jpm,
        r.uplift_m[0],
        r.uplift_m[1],
        r.uplift_m[2],
        r.uplift_m[3],
    )
}

/// Write the full time series as CSV; an empty run yields a header-only file.
pub fn write_timeseries(path: &Path, rows: &[TimeSeriesRow]) -> Result<(), SimError> {
    let mut text = String::with_capacity(64 + rows.len() * 256);
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

/// Write a legacy-ASCII VTK unstructured-grid snapshot: nodal displacement and
/// crack pressure, plus per-element deviatoric stress norm and Maxwell time.
pub fn write_snapshot(sys: &System, state: &SimState, path: &Path) -> Result<(), SimError> {
    let mesh = &sys.mesh;
    let n_nodes = mesh.coords.len();
    let n_cells = mesh.elems.len();
    let mut s = String::with_capacity(n_nodes * 48 + n_cells * 96);

    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "glacier state at t = {} s", state.time);
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(s, "POINTS {n_nodes} double");
    for c in &mesh.coords {
        let _ = writeln!(s, "{} {} 0", c[0], c[1]);
    }

    let _ = writeln!(s, "CELLS {n_cells} {}", n_cells * 10);
    for el in &mesh.elems {
        s.push('9');
        for n in el.nodes {
            let _ = write!(s, " {n}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {n_cells}");
    for _ in 0..n_cells {
        // 28 = VTK_BIQUADRATIC_QUAD (corners, edge midpoints, centre).
        s.push_str("28\n");
    }

    let _ = writeln!(s, "POINT_DATA {n_nodes}");
    s.push_str("VECTORS displacement double\n");
    for u in &state.u {
        let _ = writeln!(s, "{} {} 0", u[0], u[1]);
    }
    // Water pressure mapped onto crack-face nodes, zero in the bulk.
    let mut p_node = vec![0.0f64; n_nodes];
    for iface in &mesh.interfaces {
        for a in 0..3 {
            p_node[iface.plus[a]] = state.p[iface.pslots[a]];
            p_node[iface.minus[a]] = state.p[iface.pslots[a]];
        }
    }
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for p in &p_node {
        let _ = writeln!(s, "{p}");
    }

    let _ = writeln!(s, "CELL_DATA {n_cells}");
    // Element averages over the 9 integration points.
    let mut dev_norm = vec![0.0f64; n_cells];
    let mut tau = vec![0.0f64; n_cells];
    for (e, el) in mesh.elems.iter().enumerate() {
        let props = match el.layer {
            Layer::Ice => &sys.mats.ice,
            Layer::Rock => &sys.mats.rock,
        };
        let mut dsum = 0.0;
        let mut asum = 0.0;
        for ip in 0..9 {
            let sig = sys.ip_stress(e, ip, &state.u, &state.visc[e][ip]);
            dsum += deviatoric(&sig).norm();
            asum += sys.creep_a[e][ip];
        }
        dev_norm[e] = dsum / 9.0;
        let t = maxwell_time(
            dev_norm[e],
            props.youngs,
            props.poisson,
            asum / 9.0,
            props.creep_n,
        );
        // Keep the file parseable where relaxation never happens.
        tau[e] = if t.is_finite() { t } else { 1.0e30 };
    }
    s.push_str("SCALARS deviatoric_stress_norm double 1\nLOOKUP_TABLE default\n");
    for v in &dev_norm {
        let _ = writeln!(s, "{v}");
    }
    s.push_str("SCALARS maxwell_time double 1\nLOOKUP_TABLE default\n");
    for v in &tau {
        let _ = writeln!(s, "{v}");
    }

    fs::write(path, s).map_err(|e| SimError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_exact() {
        assert_eq!(
            CSV_HEADER,
            "time_s,crevasse_depth_m,crack_left_m,crack_right_m,mouth_open_def_m,\
             mouth_open_melt_m,p_base_Pa,p_tip_Pa,q_inlet_m2_s,Q_total_m3pm,E_friction_Jpm,\
             E_conduction_Jpm,E_phase_Jpm,uplift_0m,uplift_500m,uplift_1000m,uplift_2000m"
        );
        assert_eq!(CSV_HEADER.split(',').count(), 17);
    }

    #[test]
    fn empty_timeseries_is_header_only() {
        let dir = std::env::temp_dir().join("crevasse_output_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        write_timeseries(&path, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }
}
