use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Minimum allowed length of a cell edge, Å.
pub const MIN_EDGE_LENGTH: f64 = 0.1;

/// Periodic cell. Rows of the matrix are the cell edge vectors in Å, so a
/// fractional row vector `f` maps to Cartesian `f · L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    rows: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl Lattice {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn from_matrix(rows: Matrix3<f64>) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("lattice contains non-finite entries"));
        }
        for r in 0..3 {
            let norm = rows.row(r).norm();
            if norm <= MIN_EDGE_LENGTH {
                return Err(Error::invariant(format!(
                    "lattice row {r} has length {norm:.4} Å (must exceed {MIN_EDGE_LENGTH})"
                )));
            }
        }
        let det = rows.determinant();
        if det <= 0.0 {
            return Err(Error::invariant(format!("lattice determinant {det:.6} is not positive")));
        }
        let inverse = rows.try_inverse().ok_or_else(|| Error::invariant("lattice matrix is singular"))?;
        Ok(Lattice { rows, inverse })
    }

    pub fn cubic(a: f64) -> Result<Self> {
        Self::new([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]])
    }

    pub fn orthorhombic(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    /// Builds a cell from edge lengths (Å) and angles (degrees) in the
    /// conventional orientation: `a` along x, `b` in the xy-plane.
    pub fn from_parameters(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let (ca, cb) = (alpha.to_radians().cos(), beta.to_radians().cos());
        let (sg, cg) = gamma.to_radians().sin_cos();
        let cx = c * cb;
        let cy = c * (ca - cb * cg) / sg;
        let cz2 = c * c - cx * cx - cy * cy;
        if cz2 <= 0.0 {
            return Err(Error::invariant("cell angles do not describe a valid cell"));
        }
        Self::new([[a, 0.0, 0.0], [b * cg, b * sg, 0.0], [cx, cy, cz2.sqrt()]])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.rows
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.rows;
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
    }

    pub fn row(&self, r: usize) -> Vector3<f64> {
        self.rows.row(r).transpose()
    }

    pub fn volume(&self) -> f64 {
        self.rows.determinant()
    }

    /// Metric tensor `L Lᵀ`; `|f·L|² = f G fᵀ`.
    pub fn metric(&self) -> Matrix3<f64> {
        self.rows * self.rows.transpose()
    }

    pub fn lengths(&self) -> [f64; 3] {
        [self.rows.row(0).norm(), self.rows.row(1).norm(), self.rows.row(2).norm()]
    }

    /// Cell angles (alpha, beta, gamma) in degrees.
    pub fn angles(&self) -> [f64; 3] {
        let angle = |i: usize, j: usize| {
            let (u, v) = (self.rows.row(i), self.rows.row(j));
            (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos().to_degrees()
        };
        [angle(1, 2), angle(0, 2), angle(0, 1)]
    }

    pub fn to_cartesian(&self, frac: [f64; 3]) -> Vector3<f64> {
        (RowVector3::from(frac) * self.rows).transpose()
    }

    pub fn to_fractional(&self, cart: &Vector3<f64>) -> [f64; 3] {
        let f = cart.transpose() * self.inverse;
        [f[0], f[1], f[2]]
    }

    /// Longest of the four body diagonals `±a ± b + c`.
    pub fn longest_body_diagonal(&self) -> f64 {
        let (a, b, c) = (self.row(0), self.row(1), self.row(2));
        [a + b + c, a + b - c, a - b + c, -a + b + c].iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Number of lattice translations needed along each axis so that every
    /// point within `radius` of the origin cell is reached.
    pub fn image_range(&self, radius: f64) -> [i32; 3] {
        let mut out = [0; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let col = self.inverse.column(k).norm();
            *slot = (radius * col).ceil() as i32 + 1;
        }
        out
    }
}

impl Serialize for Lattice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Lattice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Lattice::new(rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_left_handed_and_short_rows() {
        assert!(Lattice::new([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(Lattice::new([[0.05, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(Lattice::new([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn parameters_round_trip() {
        let l = Lattice::from_parameters(3.0, 4.0, 5.0, 80.0, 95.0, 110.0).unwrap();
        let [a, b, c] = l.lengths();
        let [al, be, ga] = l.angles();
        assert!((a - 3.0).abs() < 1e-12 && (b - 4.0).abs() < 1e-12 && (c - 5.0).abs() < 1e-12);
        assert!((al - 80.0).abs() < 1e-9 && (be - 95.0).abs() < 1e-9 && (ga - 110.0).abs() < 1e-9);
    }

    #[test]
    fn fractional_round_trip() {
        let l = Lattice::new([[2.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.0, 1.0, 2.0]]).unwrap();
        let f = [0.1, 0.7, 0.35];
        let back = l.to_fractional(&l.to_cartesian(f));
        for k in 0..3 {
            assert!((back[k] - f[k]).abs() < 1e-12);
        }
    }
}
