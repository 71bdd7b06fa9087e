//! Dense helpers used by the variational objective.

use nalgebra::DMatrix;

const BLOCK: usize = 48;

/// Inverse of a lower-triangular matrix with positive diagonal.
///
/// Blocked: `[A 0; B C]⁻¹ = [A⁻¹ 0; −C⁻¹ B A⁻¹  C⁻¹]`, so most of the work is
/// matrix products.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n <= BLOCK {
        return l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("triangular factor with positive diagonal");
    }
    let h = n / 2;
    let a_inv = lower_inverse(&l.view((0, 0), (h, h)).into_owned());
    let c_inv = lower_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let b = l.view((h, 0), (n - h, h));
    let off = -(&c_inv * (b * &a_inv));
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&a_inv);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&c_inv);
    out.view_mut((h, 0), (n - h, h)).copy_from(&off);
    out
}

/// Reverse-mode derivative of `L = chol(Σ)`.
///
/// Given `lbar = ∂f/∂L` (only the lower triangle is read) and `linv = L⁻¹`,
/// returns the symmetric `Σbar` with `df = tr(Σbarᵀ dΣ)` for symmetric `dΣ`.
pub fn chol_backprop(l: &DMatrix<f64>, linv: &DMatrix<f64>, lbar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut lbar_low = lbar.clone();
    lbar_low.fill_upper_triangle(0.0, 1);
    let mut p = l.transpose() * lbar_low;
    p.fill_upper_triangle(0.0, 1);
    for i in 0..n {
        p[(i, i)] *= 0.5;
    }
    let g = linv.transpose() * p * linv;
    (&g + g.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn blocked_inverse() {
        let n = 131;
        let l = spd(n).cholesky().unwrap().l();
        let err = (&l * lower_inverse(&l) - DMatrix::<f64>::identity(n, n)).amax();
        assert!(err < 1e-12, "{err}");
        let inv = lower_inverse(&l);
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(inv[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn chol_backprop_matches_finite_differences() {
        let n = 5;
        let sigma = spd(n);
        let wts = DMatrix::<f64>::from_fn(n, n, |i, j| ((i + 2 * j) % 4) as f64 - 1.3);
        let f = |s: &DMatrix<f64>| s.clone().cholesky().unwrap().l().component_mul(&wts).sum();
        let l = sigma.clone().cholesky().unwrap().l();
        let linv = lower_inverse(&l);
        let sbar = chol_backprop(&l, &linv, &wts);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..=i {
                let mut e = DMatrix::<f64>::zeros(n, n);
                e[(i, j)] = h;
                e[(j, i)] = h;
                let fd = (f(&(&sigma + &e)) - f(&(&sigma - &e))) / (2.0 * h);
                let an = if i == j { sbar[(i, i)] } else { 2.0 * sbar[(i, j)] };
                assert!((fd - an).abs() < 1e-7, "({i},{j}) fd {fd} an {an}");
            }
        }
    }
}
