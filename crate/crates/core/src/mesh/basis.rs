//! Shape functions for 9-node Lagrangian quadrilaterals and 3-node line
//! elements, with Cartesian gradients via the isoparametric map.

use crate::error::SimError;

/// Local node coordinates of the 9-node quad: corners, mid-sides, centre.
pub const QUAD9_LOCAL: [[f64; 2]; 9] = [
    [-1.0, -1.0],
    [1.0, -1.0],
    [1.0, 1.0],
    [-1.0, 1.0],
    [0.0, -1.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [-1.0, 0.0],
    [0.0, 0.0],
];

/// Local edge connectivity of the quad: (corner, mid-side, corner), CCW.
pub const QUAD9_EDGES: [[usize; 3]; 4] = [[0, 4, 1], [1, 5, 2], [2, 6, 3], [3, 7, 0]];

/// 1D quadratic Lagrange polynomials at nodes -1, 0, +1.
#[inline]
fn lag1d(x: f64) -> [f64; 3] {
    [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)]
}

#[inline]
fn lag1d_deriv(x: f64) -> [f64; 3] {
    [x - 0.5, -2.0 * x, x + 0.5]
}

#[inline]
fn node_index_1d(c: f64) -> usize {
    if c < -0.5 {
        0
    } else if c > 0.5 {
        2
    } else {
        1
    }
}

/// Shape values of the 9-node quad at a local point.
pub fn quad9_shape(xi: f64, eta: f64) -> [f64; 9] {
    let lx = lag1d(xi);
    let ly = lag1d(eta);
    let mut n = [0.0; 9];
    for (i, loc) in QUAD9_LOCAL.iter().enumerate() {
        n[i] = lx[node_index_1d(loc[0])] * ly[node_index_1d(loc[1])];
    }
    n
}

/// Local-coordinate gradients (d/dxi, d/deta) of the 9 shape functions.
pub fn quad9_shape_deriv(xi: f64, eta: f64) -> [[f64; 2]; 9] {
    let lx = lag1d(xi);
    let ly = lag1d(eta);
    let dx = lag1d_deriv(xi);
    let dy = lag1d_deriv(eta);
    let mut d = [[0.0; 2]; 9];
    for (i, loc) in QUAD9_LOCAL.iter().enumerate() {
        let ix = node_index_1d(loc[0]);
        let iy = node_index_1d(loc[1]);
        d[i] = [dx[ix] * ly[iy], lx[ix] * dy[iy]];
    }
    d
}

/// Shape values and Cartesian gradients of a 9-node quad with the given nodal
/// coordinates, together with the Jacobian determinant.
pub fn quad9_basis(
    coords: &[[f64; 2]; 9],
    xi: f64,
    eta: f64,
) -> Result<([f64; 9], [[f64; 2]; 9], f64), SimError> {
    if !(-1.0..=1.0).contains(&xi) || !(-1.0..=1.0).contains(&eta) {
        return Err(SimError::Domain(format!(
            "local coordinates ({xi}, {eta}) outside reference square"
        )));
    }
    let n = quad9_shape(xi, eta);
    let dloc = quad9_shape_deriv(xi, eta);
    // Jacobian of the isoparametric map: J[a][b] = d x_b / d xi_a
    let mut jac = [[0.0; 2]; 2];
    for (i, c) in coords.iter().enumerate() {
        jac[0][0] += dloc[i][0] * c[0];
        jac[0][1] += dloc[i][0] * c[1];
        jac[1][0] += dloc[i][1] * c[0];
        jac[1][1] += dloc[i][1] * c[1];
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if det <= 0.0 {
        return Err(SimError::Topology(format!(
            "non-positive Jacobian determinant {det}"
        )));
    }
    let inv = [
        [jac[1][1] / det, -jac[0][1] / det],
        [-jac[1][0] / det, jac[0][0] / det],
    ];
    let mut grad = [[0.0; 2]; 9];
    for i in 0..9 {
        grad[i][0] = inv[0][0] * dloc[i][0] + inv[0][1] * dloc[i][1];
        grad[i][1] = inv[1][0] * dloc[i][0] + inv[1][1] * dloc[i][1];
    }
    Ok((n, grad, det))
}

/// Shape values of the quadratic line element at local coordinate `xi`, nodes
/// ordered (-1, 0, +1) along the element tangent.
pub fn line3_shape(xi: f64) -> [f64; 3] {
    lag1d(xi)
}

/// Tangential derivatives d/dxi of the line element shape functions.
pub fn line3_shape_deriv(xi: f64) -> [f64; 3] {
    lag1d_deriv(xi)
}

/// Gauss-Legendre 3-point rule on [-1, 1].
pub const GAUSS3: [(f64, f64); 3] = [
    (-0.774596669241483377035853079956, 0.555555555555555555555555555556),
    (0.0, 0.888888888888888888888888888889),
    (0.774596669241483377035853079956, 0.555555555555555555555555555556),
];

/// Newton-Cotes (Simpson) 3-point rule on [-1, 1] with nodal points; used on
/// interface elements to suppress traction oscillations.
pub const NEWTON_COTES3: [(f64, f64); 3] = [(-1.0, 1.0 / 3.0), (0.0, 4.0 / 3.0), (1.0, 1.0 / 3.0)];
