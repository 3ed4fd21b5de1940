//! Statistical checks with fixed seeds: sampled moments against their exact
//! values, within a few standard errors.

use hilbert_da::ensemble_stats::{exchangeability_check, lln_experiment, sample_cov, sample_mean, Divisor, Ensemble};
use hilbert_da::experiments::{paired_members, TwinParams};
use hilbert_da::filters::{exact_gain_analysis, make_perturbed_data, osi_analysis, KfState, ObservationModel};
use hilbert_da::gaussian::{sample_seeded, whiten, Covariance, GaussianSpec};
use hilbert_da::rect_field::{covariance_eigs, dst2_forward, sample_field, CovarianceLaw, EigenSource, RectDomain};
use hilbert_da::rng::{standard_normal_vec, StreamRng};
use hilbert_da::{DenseOp, Vector};

fn correlated_spec(dim: usize, seed: u64) -> GaussianSpec {
    let mut rng = StreamRng::new(seed);
    let g = DenseOp::from_column_slice(dim, dim, standard_normal_vec(&mut rng, dim * dim).as_slice());
    let q = &g * g.transpose() / dim as f64 + DenseOp::identity(dim, dim) * 0.1;
    GaussianSpec::new(standard_normal_vec(&mut rng, dim), Covariance::Dense(q)).unwrap()
}

#[test]
fn sample_moments_shrink_at_root_n() {
    let spec = correlated_spec(4, 1);
    let q = spec.cov_matrix();
    let replicates = 20;
    let rms = |n: usize| {
        let (mut m2, mut c2) = (0.0, 0.0);
        for r in 0..replicates {
            let batch = sample_seeded(&spec, n, 100 + r);
            let e = Ensemble::from_members(&batch.draws).unwrap();
            m2 += (sample_mean(&e) - spec.mean()).norm_squared();
            c2 += (sample_cov(&e, Divisor::NMinusOne).unwrap() - &q).norm_squared();
        }
        ((m2 / replicates as f64).sqrt(), (c2 / replicates as f64).sqrt())
    };
    let errs: Vec<(f64, f64)> = [1_000, 10_000, 100_000].into_iter().map(rms).collect();
    // Exact mean rate: E|X̄ - μ|² = Tr Q / n.
    for ((m, _), n) in errs.iter().zip([1e3, 1e4, 1e5]) {
        let exact = (spec.trace() / n).sqrt();
        assert!((m / exact - 1.0).abs() < 0.35, "n={n}: {m} vs {exact}");
    }
    // A tenfold size increase shrinks the RMS error by about √10.
    for w in errs.windows(2) {
        for ratio in [w[0].0 / w[1].0, w[0].1 / w[1].1] {
            assert!((2.2..4.5).contains(&ratio), "ratio {ratio}");
        }
    }
}

#[test]
fn whitened_draws_have_identity_covariance() {
    let spec = correlated_spec(6, 2);
    let batch = sample_seeded(&spec, 20_000, 3);
    let white = whiten(&batch, &spec.cov_matrix(), 6).unwrap();
    let e = Ensemble::from_members(&white.draws).unwrap();
    let c = sample_cov(&e, Divisor::NMinusOne).unwrap();
    assert!((c - DenseOp::identity(6, 6)).amax() < 0.05);
}

#[test]
fn sampled_field_coefficients_have_law_variances() {
    let dom = RectDomain::new(1.0, 2.0, 8, 8).unwrap();
    let cov = covariance_eigs(CovarianceLaw::InversePower(2.0), &dom, EigenSource::Continuous).unwrap();
    let mut rng = StreamRng::new(4);
    let draws = 10_000;
    let mut sq = vec![0.0; dom.len()];
    for _ in 0..draws {
        let c = dst2_forward(&sample_field(&cov, &dom, &mut rng).unwrap());
        sq.iter_mut().zip(&c).for_each(|(s, v)| *s += v * v);
    }
    for (idx, (s, lambda)) in sq.iter().zip(cov.eigenvalues()).enumerate() {
        let var = s / draws as f64;
        assert!((var / lambda - 1.0).abs() < 0.05, "coefficient {idx}: {var} vs {lambda}");
    }
}

#[test]
fn exact_gain_members_follow_the_posterior() {
    let (n, m, count) = (3, 2, 40_000);
    let prior = correlated_spec(n, 5);
    let q = prior.cov_matrix();
    let h = DenseOp::from_row_slice(m, n, &[1.0, 0.0, 0.5, 0.0, 1.0, -1.0]);
    let r = DenseOp::from_diagonal(&Vector::from_vec(vec![0.3, 0.8]));
    let obs = ObservationModel::new(h, r, Vector::from_vec(vec![1.0, -0.5])).unwrap();
    let post = osi_analysis(&KfState::new(prior.mean().clone(), q.clone()).unwrap(), &obs).unwrap().state;

    let u = Ensemble::from_members(&sample_seeded(&prior, count, 6).draws).unwrap();
    let data = make_perturbed_data(&obs, count, &mut StreamRng::new(8)).unwrap();
    let ua = exact_gain_analysis(&u, &obs, &q, &data).unwrap();
    let mean = sample_mean(&ua);
    let cov = sample_cov(&ua, Divisor::NMinusOne).unwrap();
    let nf = count as f64;
    for i in 0..n {
        let se = (post.cov[(i, i)] / nf).sqrt();
        assert!((mean[i] - post.mean[i]).abs() < 3.0 * se, "mean {i}");
        for j in 0..n {
            // Var of a Gaussian sample covariance entry: (Q_ii Q_jj + Q_ij²) / n.
            let c = &post.cov;
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)] * c[(i, j)]) / nf).sqrt();
            assert!((cov[(i, j)] - c[(i, j)]).abs() < 3.0 * se, "cov ({i},{j})");
        }
    }
}

#[test]
fn fourth_moment_law_of_large_numbers() {
    let spec = correlated_spec(3, 9);
    let sizes: Vec<usize> = (4..=10).map(|k| 1 << k).collect();
    let report = lln_experiment(&spec, &sizes, 200, 4.0, 10).unwrap();
    assert!(report.slope_within(-0.5, 0.1), "slope {}", report.slope);
    assert!(report.bounds.is_none());
}

#[test]
fn sample_cov_continuity_bound_in_l2() {
    let spec = correlated_spec(4, 11);
    let (n, replicates) = (12, 2_000);
    let fourth = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let mut lhs_sq = 0.0;
    let (mut diff4, mut x4, mut y4) = (Vec::new(), Vec::new(), Vec::new());
    let mut rng = StreamRng::new(12);
    for _ in 0..replicates {
        let xs: Vec<Vector> = (0..n).map(|_| spec.draw(&mut rng)).collect();
        let ys: Vec<Vector> = xs.iter().map(|x| x * 0.9 + standard_normal_vec(&mut rng, 4) * 0.3).collect();
        let cx = sample_cov(&Ensemble::from_members(&xs).unwrap(), Divisor::N).unwrap();
        let cy = sample_cov(&Ensemble::from_members(&ys).unwrap(), Divisor::N).unwrap();
        lhs_sq += (cx - cy).norm_squared();
        // Members are identically distributed: pool fourth powers over k.
        for (x, y) in xs.iter().zip(&ys) {
            diff4.push((x - y).norm_squared());
            x4.push(x.norm_squared());
            y4.push(y.norm_squared());
        }
    }
    let lhs = (lhs_sq / replicates as f64).sqrt();
    // ‖Z‖₄² = (E|Z|⁴)^{1/2}
    let (d, x, y) = (fourth(&diff4).sqrt(), fourth(&x4), fourth(&y4));
    let rhs = 8f64.sqrt() * d * (x + y).sqrt();
    assert!(lhs <= rhs, "{lhs} > {rhs}");
}

#[test]
fn exchangeability_check_detects_a_biased_member() {
    let p = TwinParams { state_dim: 5, seed: 13, ..Default::default() };
    let mut pairs = paired_members(&p, 6, 150).unwrap();
    assert!(exchangeability_check(&pairs).unwrap().passed);
    for rep in &mut pairs {
        rep[2].0.add_scalar_mut(0.5);
    }
    let report = exchangeability_check(&pairs).unwrap();
    assert!(!report.passed);
}
