//! Orthonormal bases for restricting the covariance variables.
//!
//! When every quantity a design touches is a quadratic form `u^H R v` with
//! `u, v` in a subspace `S`, replacing `R` by `P R P` (`P` the projector onto
//! `S`) changes none of them and can only lower `Tr R`. Restricting
//! `R = Q Z Q^H` with `Q` an orthonormal basis of `S` therefore loses nothing
//! for designs whose power constraint is an inequality.

use crate::{CMatrix, CVector, C64};

/// Default relative singular-value cutoff for the dominant directions.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

fn unit_columns(dim: usize, cols: &[CVector]) -> CMatrix {
    let normed: Vec<CVector> = cols
        .iter()
        .filter(|c| c.norm() > 0.0)
        .map(|c| c / C64::from(c.norm()))
        .collect();
    if normed.is_empty() {
        return CMatrix::zeros(dim, 0);
    }
    CMatrix::from_columns(&normed)
}

fn left_singular(a: &CMatrix, rel_tol: f64, abs_floor: f64) -> Vec<CVector> {
    if a.ncols() == 0 {
        return Vec::new();
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = (rel_tol * smax).max(abs_floor);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut)
        .map(|(i, _)| u.column(i).into_owned())
        .collect()
}

/// Basis of `span(exact)` plus the dominant left singular directions of
/// `extra` (columns normalized), with singular values below
/// `rel_tol * sigma_max` of the residual dropped. Returns the identity when the
/// span is the whole space.
pub fn orthonormal_basis(
    dim: usize,
    exact: &[CVector],
    extra: &[CVector],
    rel_tol: f64,
) -> CMatrix {
    let e = unit_columns(dim, exact);
    let mut basis = left_singular(&e, 1e-12, 1e-12);
    if !extra.is_empty() {
        let x = unit_columns(dim, extra);
        let mut resid = x.clone();
        if !basis.is_empty() {
            let q = CMatrix::from_columns(&basis);
            resid -= &q * (q.adjoint() * &x);
        }
        // cutoff relative to the unprojected directions so that an `extra`
        // already inside span(exact) contributes nothing
        let scale = x.clone().svd(false, false).singular_values.max();
        basis.extend(left_singular(&resid, 0.0, rel_tol * scale));
    }
    if basis.len() >= dim || basis.is_empty() {
        return CMatrix::identity(dim, dim);
    }
    // re-orthonormalize the concatenation
    let q = CMatrix::from_columns(&basis);
    q.qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;

    #[test]
    fn basis_is_orthonormal_and_spans_inputs() {
        let g = ArrayGeometry::half_wavelength(16, 3.5e9).unwrap();
        let exact = vec![g.transmit(0.3), g.transmit(-0.5)];
        let extra: Vec<CVector> = (0..20)
            .map(|i| g.transmit(0.1 + 0.005 * i as f64))
            .collect();
        let q = orthonormal_basis(16, &exact, &extra, DEFAULT_TOLERANCE);
        assert!(q.ncols() < 16);
        let gram = q.adjoint() * &q;
        assert!((gram - CMatrix::identity(q.ncols(), q.ncols())).norm() < 1e-10);
        for v in exact.iter().chain(&extra) {
            let resid = v - &q * (q.adjoint() * v);
            assert!(resid.norm() < 1e-8 * v.norm(), "residual {}", resid.norm());
        }
    }

    #[test]
    fn full_span_returns_identity() {
        let cols: Vec<CVector> = (0..4)
            .map(|i| {
                CVector::from_fn(4, |r, _| {
                    if r == i {
                        C64::from(1.0)
                    } else {
                        C64::from(0.0)
                    }
                })
            })
            .collect();
        let q = orthonormal_basis(4, &cols, &[], DEFAULT_TOLERANCE);
        assert_eq!(q, CMatrix::identity(4, 4));
    }
}
