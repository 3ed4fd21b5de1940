use hilbert_da::ensemble_stats::{sample_cov, sample_mean, second_moment, Divisor, Ensemble};
use hilbert_da::filters::{
    bayes_reweight, etkf_analysis, etkf_exactness, osi_analysis, KfState, ObservationModel, ParticleSet,
};
use hilbert_da::gaussian::{moment_estimate, GaussianSpec, SampleBatch};
use hilbert_da::rect_field::{
    continuous_eigenvalue, discrete_eigenvalue, dst2_forward, dst2_inverse, trace_partial_sums, CovarianceLaw,
    GridField, RectDomain, Verdict,
};
use hilbert_da::spectral_ops::{
    apply_function, operator_norms, range_equal_diagnostic, smw_solve, tensor_product, Basis, SpectralOperator,
};
use hilbert_da::{DenseOp, Vector};
use proptest::prelude::*;

fn vector(max_len: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-10.0..10.0f64, 1..=max_len).prop_map(Vector::from_vec)
}

fn matrix(
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = DenseOp> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |v| DenseOp::from_column_slice(r, c, &v))
    })
}

fn ensemble(max_dim: usize, max_members: usize) -> impl Strategy<Value = Ensemble> {
    matrix(1..=max_dim, 2..=max_members).prop_map(|m| Ensemble::new(m).unwrap())
}

/// Random matrix with prescribed rank: `G₁ G₂ᵀ` with inner width `rank`.
fn ranked_matrix() -> impl Strategy<Value = DenseOp> {
    (1..8usize, 1..8usize, 0..8usize).prop_flat_map(|(r, c, k)| {
        let k = k.min(r).min(c);
        (matrix(r..=r, k..=k), matrix(c..=c, k..=k)).prop_map(|(a, b)| a * b.transpose())
    })
}

fn well_conditioned_spd(n: usize, seed: &[f64]) -> DenseOp {
    let g = DenseOp::from_column_slice(n, n, &seed[..n * n]);
    &g * g.transpose() / n as f64 + DenseOp::identity(n, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_norms(x in vector(12), y in vector(12)) {
        let norms = operator_norms(&tensor_product(&x, &y));
        let expected = x.norm() * y.norm();
        prop_assert!((norms.op_norm - expected).abs() <= 1e-12 * expected.max(1.0));
        let hs = operator_norms(&tensor_product(&x, &x)).hs_norm;
        prop_assert!((hs - x.norm_squared()).abs() <= 1e-12 * x.norm_squared().max(1.0));
    }

    #[test]
    fn norm_chain(a in matrix(1..=9, 1..=9)) {
        let n = operator_norms(&a);
        let slack = 1e-12 * n.trace_norm.max(1.0);
        prop_assert!(n.op_norm <= n.hs_norm + slack);
        prop_assert!(n.hs_norm <= n.trace_norm + slack);
        prop_assert!((n.hs_norm - a.norm()).abs() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn function_composition(eigs in prop::collection::vec(0.0..50.0f64, 1..20)) {
        let a = SpectralOperator::new(Basis::Abstract(eigs.len()), eigs).unwrap();
        let f = |x: f64| (x + 1.0).sqrt();
        let g = |x: f64| x.ln();
        let two_step = apply_function(g, &apply_function(f, &a).unwrap()).unwrap();
        let composed = apply_function(|x| g(f(x)), &a).unwrap();
        prop_assert_eq!(two_step.eigenvalues(), composed.eigenvalues());
    }

    #[test]
    fn smw_matches_dense_solve(
        n in 1..=50usize,
        k in 1..=6usize,
        seed in prop::collection::vec(-1.0..1.0f64, 50 * 50 + 2 * 50 * 6 + 36 + 50),
    ) {
        let k = k.min(n);
        let a = DenseOp::from_diagonal(&Vector::from_iterator(n, seed[..n].iter().map(|v| 2.0 + v)));
        let mut off = n;
        let u = DenseOp::from_column_slice(n, k, &seed[off..off + n * k]);
        off += n * k;
        let v = DenseOp::from_column_slice(k, n, &seed[off..off + n * k]);
        off += n * k;
        let c = DenseOp::identity(k, k) + DenseOp::from_column_slice(k, k, &seed[off..off + k * k]) * 0.1;
        off += k * k;
        let rhs = Vector::from_column_slice(&seed[off..off + n]);
        let c_inv = c.clone().try_inverse().unwrap();
        let a_diag = a.diagonal();
        let a_inv = move |b: &DenseOp| {
            let mut out = b.clone();
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row /= a_diag[i];
            }
            out
        };
        let full = &a + &u * &c * &v;
        // Only well-conditioned instances: skip nearly singular draws.
        let sv = full.clone().svd(false, false).singular_values;
        prop_assume!(sv.min() > 1e-3 * sv.max());
        let direct = full.lu().solve(&rhs).unwrap();
        let via_smw = smw_solve(&a_inv, &u, &c_inv, &v, &rhs).unwrap();
        prop_assert!((&direct - &via_smw).norm() <= 1e-10 * direct.norm().max(1e-300));
    }

    #[test]
    fn range_diagnostic_holds_at_every_rank(a in ranked_matrix()) {
        prop_assert!(range_equal_diagnostic(&a));
    }

    #[test]
    fn sample_cov_symmetric_psd(e in ensemble(8, 12)) {
        for divisor in [Divisor::N, Divisor::NMinusOne] {
            let c = sample_cov(&e, divisor).unwrap();
            prop_assert_eq!(&c, &c.transpose());
            let min = c.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-10 * c.norm().max(1.0));
        }
    }

    #[test]
    fn sample_cov_tensor_identity(e in ensemble(8, 12)) {
        let mean = sample_mean(&e);
        let rhs = second_moment(&e) - tensor_product(&mean, &mean);
        let lhs = sample_cov(&e, Divisor::N).unwrap();
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0) * 10.0);
    }

    #[test]
    fn sample_cov_pointwise_bounds(x in ensemble(6, 10), shift in matrix(6..=6, 10..=10)) {
        let n = x.size();
        let en_sq = |e: &Ensemble| e.matrix().column_iter().map(|c| c.norm_squared()).sum::<f64>() / n as f64;
        let cx = sample_cov(&x, Divisor::N).unwrap();
        prop_assert!(cx.norm() <= 2.0 * en_sq(&x) * (1.0 + 1e-12));

        let d = x.state_dim();
        let y = Ensemble::new(x.matrix() + shift.view((0, 0), (d, n)) * 0.1).unwrap();
        let cy = sample_cov(&y, Divisor::N).unwrap();
        let diff = Ensemble::new(x.matrix() - y.matrix()).unwrap();
        let bound_sq = 8.0 * en_sq(&diff) * (en_sq(&x) + en_sq(&y));
        prop_assert!((cx - cy).norm_squared() <= bound_sq * (1.0 + 1e-12));
    }

    #[test]
    fn dst_roundtrip(m in 1..40usize, n in 1..40usize, a in 0.1..5.0f64, b in 0.1..5.0f64, seed in any::<u64>()) {
        let dom = RectDomain::new(a, b, m, n).unwrap();
        let mut rng = hilbert_da::rng::StreamRng::new(seed);
        let values = hilbert_da::rng::standard_normal_vec(&mut rng, dom.len()).as_slice().to_vec();
        let f = GridField::new(dom, values).unwrap();
        let back = dst2_inverse(&dst2_forward(&f), &dom).unwrap();
        let err = back.values().iter().zip(f.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn discrete_below_continuous(m in 1..60usize, n in 1..60usize, a in 0.2..4.0f64, b in 0.2..4.0f64, kf in 0.0..1.0f64, lf in 0.0..1.0f64) {
        let dom = RectDomain::new(a, b, m, n).unwrap();
        let k = 1 + ((m - 1) as f64 * kf) as usize;
        let l = 1 + ((n - 1) as f64 * lf) as usize;
        prop_assert!(discrete_eigenvalue(k, l, &dom).unwrap() <= continuous_eigenvalue(k, l, &dom) * (1.0 + 1e-14));
    }

    #[test]
    fn trace_verdict_follows_alpha(alpha in 0.1..4.0f64) {
        let dom = RectDomain::new(1.0, 1.0, 4, 4).unwrap();
        let report = trace_partial_sums(CovarianceLaw::InversePower(alpha), &dom, 1024).unwrap();
        let expected = if alpha > 1.0 { Verdict::Converges } else { Verdict::Diverges };
        prop_assert_eq!(report.verdict, expected);
    }

    #[test]
    fn constant_moment_is_norm(x in vector(10), p in 1.0..8.0f64, copies in 1..20usize) {
        let batch = SampleBatch { draws: vec![x.clone(); copies], spec: GaussianSpec::standard(x.len()), seed: None };
        let m = moment_estimate(&batch, p).unwrap();
        prop_assert!((m - x.norm()).abs() <= 1e-12 * x.norm().max(1.0));
    }

    #[test]
    fn osi_forms_agree_and_shrink(n in 1..10usize, m in 1..10usize, seed in prop::collection::vec(-1.0..1.0f64, 300)) {
        let q = well_conditioned_spd(n, &seed);
        let r = well_conditioned_spd(m, &seed[100..]);
        let h = DenseOp::from_column_slice(m, n, &seed[200..200 + m * n]);
        let mean = Vector::from_column_slice(&seed[290..290 + n]);
        let d = Vector::from_column_slice(&seed[280..280 + m]);
        let out = osi_analysis(&KfState::new(mean, q.clone()).unwrap(), &ObservationModel::new(h, r, d).unwrap()).unwrap();
        prop_assert!(out.verify().is_ok());
        let eig_min = out.state.cov.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(eig_min >= -1e-12);
        prop_assert!(out.state.cov.trace() <= q.trace() * (1.0 + 1e-12));
    }

    #[test]
    fn etkf_identities(x in ensemble(10, 15), m in 1..6usize, seed in prop::collection::vec(-1.0..1.0f64, 200)) {
        let n = x.state_dim();
        let h = DenseOp::from_column_slice(m, n, &seed[..m * n]);
        let r = well_conditioned_spd(m, &seed[100..]);
        let d = Vector::from_column_slice(&seed[150..150 + m]) * 5.0;
        let obs_fn = |v: &Vector| &h * v;
        let out = etkf_analysis(&x, &obs_fn, &r, &d).unwrap();
        let ex = etkf_exactness(&x, &out).unwrap();
        prop_assert!(ex.mean_error < 1e-10 && ex.cov_error < 1e-10 && ex.deviation_sum < 1e-10, "{:?}", ex);
        prop_assert!(ex.span_residual < 1e-8, "{:?}", ex);
    }

    #[test]
    fn reweighting_normalizes(
        xs in prop::collection::vec(-3.0..3.0f64, 2..30),
        raw in prop::collection::vec(0.01..1.0f64, 30),
        d in -3.0..3.0f64,
        r in 0.1..10.0f64,
    ) {
        let k = xs.len();
        let total: f64 = raw[..k].iter().sum();
        let weights: Vec<f64> = raw[..k].iter().map(|w| w / total).collect();
        let sum: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let particles = xs.iter().map(|&v| Vector::from_element(1, v)).collect();
        let set = ParticleSet::new(particles, weights).unwrap();
        let obs = ObservationModel::new(
            DenseOp::identity(1, 1),
            DenseOp::from_element(1, 1, r),
            Vector::from_element(1, d),
        ).unwrap();
        let out = bayes_reweight(&set, &obs).unwrap();
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(out.weights().iter().all(|w| *w >= 0.0));
        let ess = out.effective_sample_size();
        prop_assert!((1.0 - 1e-12..=k as f64 * (1.0 + 1e-12)).contains(&ess));
    }
}
