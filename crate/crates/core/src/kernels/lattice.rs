//! Integer lattices spanned by kernel supports and the local-CLT reference
//! density on them.

use nalgebra::{DMatrix, DVector};

use super::{KernelError, StepKernel};

/// A `d × d` integer matrix `A` whose columns generate the ℤ-span of a
/// kernel's support, in lower-triangular Hermite normal form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBasis {
    dim: usize,
    /// Row-major `A[i][j]`.
    matrix: Vec<i64>,
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    // Returns (g, s, t) with s·a + t·b = g ≥ 0.
    let (mut old_r, mut r) = (a, b);
    let (mut old_s, mut s) = (1i64, 0i64);
    let (mut old_t, mut t) = (0i64, 1i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
        (old_t, t) = (t, old_t - q * t);
    }
    if old_r < 0 {
        (-old_r, -old_s, -old_t)
    } else {
        (old_r, old_s, old_t)
    }
}

impl LatticeBasis {
    /// Echelon basis of the ℤ-span of `vectors` (each of length `dim`).
    pub fn from_generators(dim: usize, vectors: &[Vec<i64>]) -> Result<Self, KernelError> {
        // rows[c] holds the basis vector whose leading nonzero entry is in
        // column c.
        let mut rows: Vec<Option<Vec<i64>>> = vec![None; dim];
        for v in vectors {
            let mut v = v.clone();
            for col in 0..dim {
                if v[col] == 0 {
                    continue;
                }
                match rows[col].take() {
                    None => {
                        if v[col] < 0 {
                            v.iter_mut().for_each(|e| *e = -*e);
                        }
                        rows[col] = Some(v);
                        break;
                    }
                    Some(b) => {
                        let (g, s, t) = ext_gcd(b[col], v[col]);
                        let (bq, vq) = (b[col] / g, v[col] / g);
                        let new_b: Vec<i64> = b.iter().zip(&v).map(|(x, y)| s * x + t * y).collect();
                        let new_v: Vec<i64> = b.iter().zip(&v).map(|(x, y)| vq * x - bq * y).collect();
                        rows[col] = Some(new_b);
                        v = new_v;
                    }
                }
            }
        }
        let rank = rows.iter().filter(|r| r.is_some()).count();
        if rank < dim {
            return Err(KernelError::RankDeficient { rank, dim });
        }
        let mut rows: Vec<Vec<i64>> = rows.into_iter().map(Option::unwrap).collect();
        // Reduce every earlier row's entry in each pivot column into
        // [0, pivot) so the basis is canonical.
        for col in 0..dim {
            let pivot = rows[col][col];
            for other in 0..col {
                let e = rows[other][col];
                let q = e.div_euclid(pivot);
                if q != 0 {
                    let pr = rows[col].clone();
                    for (x, y) in rows[other].iter_mut().zip(&pr) {
                        *x -= q * y;
                    }
                }
            }
        }
        // Column k of A is rows[k]; rows[k] vanishes before index k, so A is
        // lower triangular.
        let mut matrix = vec![0i64; dim * dim];
        for (k, r) in rows.iter().enumerate() {
            for i in 0..dim {
                matrix[i * dim + k] = r[i];
            }
        }
        Ok(LatticeBasis { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.matrix[i * self.dim + j]
    }

    pub fn columns(&self) -> Vec<Vec<i64>> {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.entry(i, j)).collect())
            .collect()
    }

    pub fn abs_det(&self) -> i64 {
        (0..self.dim).map(|i| self.entry(i, i)).product::<i64>().abs()
    }

    /// Integer coordinates `y` with `A y = x`, if `x` lies on the lattice.
    pub fn coordinates(&self, x: &[i64]) -> Option<Vec<i64>> {
        let d = self.dim;
        let mut y = vec![0i64; d];
        for i in 0..d {
            let mut rest = x[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                rest -= self.entry(i, j) * yj;
            }
            let a = self.entry(i, i);
            if rest % a != 0 {
                return None;
            }
            y[i] = rest / a;
        }
        Some(y)
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.coordinates(x).is_some()
    }
}

/// Hermite-normal-form basis of the lattice generated by a symmetric kernel
/// whose support contains the origin.
pub fn lattice_basis(p: &StepKernel) -> Result<LatticeBasis, KernelError> {
    if !p.is_symmetric(1e-12) || !p.contains_origin() {
        return Err(KernelError::NotSymmetric);
    }
    let steps: Vec<Vec<i64>> = p.steps().map(|s| s.to_vec()).collect();
    LatticeBasis::from_generators(p.dim(), &steps)
}

/// Local-CLT reference density
/// `|det A| / √det Σ · (2πn)^{-d/2} · exp(−(x−mn)ᵀ Σ⁻¹ (x−mn) / 2n)`.
pub fn local_clt_density(
    basis: &LatticeBasis,
    sigma: &DMatrix<f64>,
    m: &[f64],
    n: u64,
    x: &[i64],
) -> Result<f64, KernelError> {
    let d = basis.dim();
    if n == 0 {
        return Err(KernelError::InvalidArgument("local CLT needs n >= 1".into()));
    }
    if !basis.contains(x) {
        return Err(KernelError::OffLattice(x.to_vec()));
    }
    let chol = sigma.clone().cholesky().ok_or(KernelError::SingularCovariance)?;
    let det_sigma: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
    if !(det_sigma > 0.0) {
        return Err(KernelError::SingularCovariance);
    }
    let nf = n as f64;
    let centered = DVector::from_iterator(d, (0..d).map(|i| x[i] as f64 - m[i] * nf));
    let solved = chol.solve(&centered);
    let quad = centered.dot(&solved);
    let norm = basis.abs_det() as f64 / det_sigma.sqrt() / (2.0 * std::f64::consts::PI * nf).powf(d as f64 / 2.0);
    Ok(norm * (-quad / (2.0 * nf)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ext_gcd_identity() {
        for (a, b) in [(12, 18), (-4, 6), (7, -3), (0, 5), (5, 0)] {
            let (g, s, t) = ext_gcd(a, b);
            assert_eq!(s * a + t * b, g);
            assert!(g >= 0);
        }
    }

    #[test]
    fn gcd_lattice_in_one_dimension() {
        let b = LatticeBasis::from_generators(1, &[vec![0], vec![2], vec![-2]]).unwrap();
        assert_eq!(b.entry(0, 0), 2);
        assert!(b.contains(&[4]));
        assert!(!b.contains(&[3]));
        let b = LatticeBasis::from_generators(1, &[vec![6], vec![-6], vec![10], vec![0]]).unwrap();
        assert_eq!(b.abs_det(), 2);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let r = LatticeBasis::from_generators(2, &[vec![1, 1], vec![-1, -1], vec![0, 0]]);
        assert!(matches!(r, Err(KernelError::RankDeficient { rank: 1, dim: 2 })));
    }

    #[test]
    fn checkerboard_lattice() {
        let gens = vec![
            vec![1, 1],
            vec![1, -1],
            vec![-1, 1],
            vec![-1, -1],
            vec![2, 0],
            vec![0, 0],
        ];
        let b = LatticeBasis::from_generators(2, &gens).unwrap();
        assert_eq!(b.abs_det(), 2);
        for g in &gens {
            assert!(b.contains(g));
        }
        assert!(!b.contains(&[1, 0]));
    }
}
