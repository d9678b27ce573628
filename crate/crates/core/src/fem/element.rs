//! Bilinear quadrilateral / trilinear hexahedral kernels on axis-aligned
//! squares and cubes with 2^d Gauss points.

use nalgebra::DMatrix;

use super::tensor::{voigt_len, ElasticityTensor};
use crate::error::{Error, Result};

/// Corner offsets in local node order (counter-clockwise bottom face, then
/// top face), matching VTK_QUAD / VTK_HEXAHEDRON.
pub const CORNERS: [[u32; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

pub fn nodes_per_element(dim: usize) -> usize {
    1 << dim
}

#[inline]
pub(crate) fn corner_sign(a: usize, i: usize) -> f64 {
    if CORNERS[a][i] == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Shape function values at natural coordinates `xi`.
pub fn shape_values(dim: usize, xi: &[f64; 3], out: &mut [f64; 8]) {
    for (a, o) in out.iter_mut().enumerate().take(nodes_per_element(dim)) {
        *o = (0..dim)
            .map(|i| 0.5 * (1.0 + xi[i] * corner_sign(a, i)))
            .product();
    }
}

/// Natural-coordinate gradients of the shape functions at `xi`.
pub fn shape_gradients(dim: usize, xi: &[f64; 3], out: &mut [[f64; 3]; 8]) {
    for (a, g) in out.iter_mut().enumerate().take(nodes_per_element(dim)) {
        for i in 0..dim {
            g[i] = (0..dim)
                .map(|j| {
                    let s = corner_sign(a, j);
                    if i == j {
                        0.5 * s
                    } else {
                        0.5 * (1.0 + xi[j] * s)
                    }
                })
                .product();
        }
    }
}

/// Gauss points of the 2^d rule; point q sits at `CORNERS[q] / sqrt(3)`.
pub fn gauss_points(dim: usize) -> Vec<[f64; 3]> {
    let g = 1.0 / 3f64.sqrt();
    (0..nodes_per_element(dim))
        .map(|q| {
            let mut p = [0.0; 3];
            for (i, pi) in p.iter_mut().enumerate().take(dim) {
                *pi = g * corner_sign(q, i);
            }
            p
        })
        .collect()
}

/// Strain-displacement matrix rows (Voigt, engineering shear) for physical
/// gradients `grad` of the `nen` shape functions. Layout: `b[row][a*dim + c]`.
pub(crate) fn fill_b(dim: usize, grad: &[[f64; 3]; 8], b: &mut [[f64; 24]; 6]) {
    let nen = nodes_per_element(dim);
    for row in b.iter_mut() {
        row.fill(0.0);
    }
    for (a, g) in grad.iter().enumerate().take(nen) {
        let c = a * dim;
        if dim == 2 {
            b[0][c] = g[0];
            b[1][c + 1] = g[1];
            b[2][c] = g[1];
            b[2][c + 1] = g[0];
        } else {
            b[0][c] = g[0];
            b[1][c + 1] = g[1];
            b[2][c + 2] = g[2];
            b[3][c] = g[1];
            b[3][c + 1] = g[0];
            b[4][c + 1] = g[2];
            b[4][c + 2] = g[1];
            b[5][c] = g[2];
            b[5][c + 2] = g[0];
        }
    }
}

/// Precomputed quadrature data of the reference element, scaled to an
/// element edge length on demand.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub dim: usize,
    pub nen: usize,
    pub nqp: usize,
    pub nv: usize,
    /// Shape values per quadrature point.
    pub n: Vec<[f64; 8]>,
    /// Natural gradients per quadrature point.
    pub dn: Vec<[[f64; 3]; 8]>,
}

impl Kernel {
    pub fn new(dim: usize) -> Self {
        let pts = gauss_points(dim);
        let mut n = Vec::new();
        let mut dn = Vec::new();
        for p in &pts {
            let mut v = [0.0; 8];
            let mut g = [[0.0; 3]; 8];
            shape_values(dim, p, &mut v);
            shape_gradients(dim, p, &mut g);
            n.push(v);
            dn.push(g);
        }
        Kernel {
            dim,
            nen: nodes_per_element(dim),
            nqp: pts.len(),
            nv: voigt_len(dim),
            n,
            dn,
        }
    }

    pub fn ndof(&self) -> usize {
        self.nen * self.dim
    }

    /// B matrix at quadrature point `q` for an element of edge length `h`.
    pub(crate) fn b_at(&self, q: usize, h: f64, b: &mut [[f64; 24]; 6]) {
        let mut grad = self.dn[q];
        let s = 2.0 / h;
        for g in grad.iter_mut().take(self.nen) {
            for gi in g.iter_mut().take(self.dim) {
                *gi *= s;
            }
        }
        fill_b(self.dim, &grad, b);
    }

    /// Quadrature weight times Jacobian determinant (one per point).
    pub fn qp_volume(&self, h: f64) -> f64 {
        (0.5 * h).powi(self.dim as i32)
    }

    /// Voigt strain `B u` at point `q`.
    pub fn strain(&self, q: usize, h: f64, u: &[f64], out: &mut [f64; 6]) {
        let mut b = [[0.0; 24]; 6];
        self.b_at(q, h, &mut b);
        for (i, o) in out.iter_mut().enumerate().take(self.nv) {
            *o = b[i][..self.ndof()].iter().zip(u).map(|(p, q)| p * q).sum();
        }
    }

    /// Element stiffness (row-major, `ndof x ndof`).
    pub fn stiffness(&self, h: f64, c: &[[f64; 6]; 6]) -> Vec<f64> {
        let nd = self.ndof();
        let mut k = vec![0.0; nd * nd];
        let mut b = [[0.0; 24]; 6];
        let w = self.qp_volume(h);
        for q in 0..self.nqp {
            self.b_at(q, h, &mut b);
            // cb = C B
            let mut cb = [[0.0; 24]; 6];
            for i in 0..self.nv {
                for j in 0..nd {
                    cb[i][j] = (0..self.nv).map(|m| c[i][m] * b[m][j]).sum();
                }
            }
            for r in 0..nd {
                for s in 0..nd {
                    let v: f64 = (0..self.nv).map(|m| b[m][r] * cb[m][s]).sum();
                    k[r * nd + s] += w * v;
                }
            }
        }
        k
    }
}

/// Axis-aligned square/cube element geometry in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub dim: usize,
    pub origin: [f64; 3],
    pub size: f64,
}

/// Dense element stiffness matrix (local node order, dof-interleaved).
pub fn element_stiffness(geom: &ElementGeometry, c: &ElasticityTensor) -> Result<DMatrix<f64>> {
    if !(geom.size > 0.0) || !geom.size.is_finite() {
        return Err(Error::DegenerateElement(format!("edge length {}", geom.size)));
    }
    if c.dim() != geom.dim {
        return Err(Error::InvalidArgument(format!(
            "{}d tensor for a {}d element",
            c.dim(),
            geom.dim
        )));
    }
    let kernel = Kernel::new(geom.dim);
    let k = kernel.stiffness(geom.size, &c.to_array());
    let nd = kernel.ndof();
    Ok(DMatrix::from_row_slice(nd, nd, &k))
}
