//! Dense linear-algebra helpers shared by the physics modules.
//!
//! Eigendecompositions go through `nalgebra`; large products use `ndarray`
//! (which dispatches complex products to an optimized gemm kernel).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub(crate) fn to_nalgebra(m: &Array2<C64>) -> DMatrix<C64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Only the lower triangle is trusted; callers are responsible for passing
/// a matrix that is Hermitian up to roundoff.
pub fn eigh(m: &Array2<C64>) -> (Array1<f64>, Array2<C64>) {
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors =
        Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(m: &Array2<C64>) -> Array1<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(to_nalgebra(m)).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Array1::from(vals)
}

/// Real symmetric eigen-decomposition for small matrices (ascending).
pub fn eigh_real(m: &nalgebra::DMatrix<f64>) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

#[cfg(test)]
pub(crate) fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn one_norm(m: &Array2<C64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Computes `exp(a) v` with the degree-13 Padé scaling-and-squaring method.
///
/// The scaled Padé approximant `r(a / 2^s)` is factorized once and applied
/// `2^s` times to the vector, which is algebraically the same as squaring
/// the approximant but avoids `s` dense products.
pub fn expm_apply(a: &Array2<C64>, v: &Array1<C64>) -> Array1<C64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(s as i32);
    let a = a.mapv(|z| z * scale);
    let b = PADE13.map(|x| C64::new(x, 0.0));
    let eye = Array2::<C64>::eye(n);

    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let tail_u = &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = a.dot(&(a6.dot(&inner_u) + tail_u));

    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let tail_v = &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    let v_mat = a6.dot(&inner_v) + tail_v;

    let p = &v_mat + &u;
    let q = to_nalgebra(&(&v_mat - &u)).lu();

    let mut x = v.clone();
    for _ in 0..(1u64 << s) {
        let rhs = p.dot(&x);
        let rhs = nalgebra::DVector::from_iterator(n, rhs.iter().copied());
        let sol = q.solve(&rhs).expect("Padé denominator is nonsingular");
        x = Array1::from_iter(sol.iter().copied());
    }
    x
}
