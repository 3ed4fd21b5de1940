//! Reference computations shared by the oracle and acceptance suites.

use hilbert_da::rect_field::{covariance_eigs, sine_mode, CovarianceLaw, EigenSource, GridField, RectDomain};
use hilbert_da::rng::{standard_normal_vec, StreamRng};
use hilbert_da::{DenseOp, Vector};

pub fn random_field(dom: RectDomain, seed: u64) -> GridField {
    let mut rng = StreamRng::new(seed);
    GridField::new(dom, standard_normal_vec(&mut rng, dom.len()).as_slice().to_vec()).unwrap()
}

/// `c(x_i, x_j) = Σ λ_kl φ_kl(x_i) φ_kl(x_j)` assembled densely and applied
/// with the grid quadrature weight.
pub fn dense_kernel_apply(law: CovarianceLaw, w: &GridField) -> Vec<f64> {
    let dom = w.domain();
    let cov = covariance_eigs(law, &dom, EigenSource::Continuous).unwrap();
    let len = dom.len();
    let mut kernel = DenseOp::zeros(len, len);
    for k in 1..=dom.m() {
        for l in 1..=dom.n() {
            let lambda = cov.eigenvalues()[(k - 1) * dom.n() + (l - 1)];
            let phi = Vector::from_vec(sine_mode(k, l, &dom).unwrap().values().to_vec());
            kernel += &phi * phi.transpose() * lambda;
        }
    }
    let wv = Vector::from_vec(w.values().to_vec());
    (kernel * wv * dom.cell_area()).as_slice().to_vec()
}

/// Largest entrywise gap, relative to the largest entry of `reference`
/// (floored at 1).
pub fn max_rel_gap(values: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().map(|v| v.abs()).fold(1.0, f64::max);
    values.iter().zip(reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
