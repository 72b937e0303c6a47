//! The two stages run end to end on simulated data.

use bigmvp::hierarchical::{run_conditional_sampler, HierConfig};
use bigmvp::parallel::with_workers;
use bigmvp::simulate::{simulate, CorrDesign, SimConfig};
use bigmvp::stage1::{fit_all_marginals, fit_marginal_probit, BetaPriors};
use bigmvp::stage2::{fit_pair, run_stage2};
use bigmvp::{BetaPrior, CorrPrior, NewtonOptions, Stage2Options};

fn sim(n: usize, p: usize, q: usize, seed: u64) -> bigmvp::simulate::Simulation {
    let mut cfg = SimConfig::new(n, p, q, seed);
    cfg.corr_design = CorrDesign::Equicorrelated { rho: 0.4 };
    simulate(&cfg).unwrap()
}

#[test]
fn batch_fits_match_single_fits() {
    let s = sim(150, 3, 5, 1);
    let d = &s.dataset;
    let beta_prior = BetaPrior::isotropic(3, 0.0, 25.0).unwrap();
    let corr_prior = CorrPrior::lkj(1.0, 5).unwrap();
    let newton = NewtonOptions::default();
    let opts = Stage2Options::default();

    let marginals = fit_all_marginals(d, BetaPriors::Shared(&beta_prior), &newton).unwrap();
    for (j, post) in marginals.iter().enumerate() {
        let single = fit_marginal_probit(d.x(), d.y_column(j), &beta_prior, &newton).unwrap();
        assert_eq!(&single, post);
        assert!(post.converged);
    }
    let out = run_stage2(d, &marginals, &corr_prior, &opts).unwrap();
    assert_eq!(out.pairs.len(), 10);
    for ((j, k), post) in out.pairs.iter() {
        let single = fit_pair(d, j, k, &marginals[j], &marginals[k], &corr_prior, &opts).unwrap();
        assert_eq!(&single, post);
        assert!(post.sigma_hat.abs() < 1.0 && post.variance > 0.0);
    }
}

#[test]
fn estimates_track_the_truth() {
    let s = sim(2000, 2, 4, 7);
    let d = &s.dataset;
    let beta_prior = BetaPrior::isotropic(2, 0.0, 25.0).unwrap();
    let marginals = fit_all_marginals(
        d,
        BetaPriors::Shared(&beta_prior),
        &NewtonOptions::default(),
    )
    .unwrap();
    for (j, post) in marginals.iter().enumerate() {
        for l in 0..2 {
            let sd = post.hessian_inv[(l, l)].sqrt();
            assert!((post.beta_hat[l] - s.coefficients[(l, j)]).abs() < 5.0 * sd);
        }
    }
    let out = run_stage2(
        d,
        &marginals,
        &CorrPrior::Uniform,
        &Stage2Options::default(),
    )
    .unwrap();
    for ((j, k), post) in out.pairs.iter() {
        let truth = s.correlation[(j, k)];
        assert!(
            (post.sigma_hat - truth).abs() < 5.0 * post.variance.sqrt(),
            "pair ({j},{k})"
        );
    }
}

#[test]
fn pool_size_does_not_change_results() {
    let s = sim(120, 3, 8, 3);
    let d = &s.dataset;
    let beta_prior = BetaPrior::isotropic(3, 0.0, 25.0).unwrap();
    let opts = Stage2Options {
        adjust_variance: true,
        project_pd: true,
        ..Stage2Options::default()
    };
    let run = || {
        let m = fit_all_marginals(
            d,
            BetaPriors::Shared(&beta_prior),
            &NewtonOptions::default(),
        )
        .unwrap();
        let out = run_stage2(d, &m, &CorrPrior::Uniform, &opts).unwrap();
        (m, out)
    };
    let one = with_workers(Some(1), run).unwrap();
    let four = with_workers(Some(4), run).unwrap();
    assert_eq!(one, four);
    let projected = one.1.projected.unwrap();
    assert!(nalgebra::SymmetricEigen::new(projected).eigenvalues.min() > -1e-10);
}

#[test]
fn hierarchical_sampler_is_seeded() {
    let s = sim(80, 2, 4, 5);
    let mut cfg = HierConfig::default_for(2);
    cfg.iters = 15;
    cfg.burnin = 5;
    let a = run_conditional_sampler(&s.dataset, &cfg, 42).unwrap();
    let b = run_conditional_sampler(&s.dataset, &cfg, 42).unwrap();
    assert_eq!(a.eta_draws, b.eta_draws);
    assert_eq!(a.omega2_draws.len(), 10);
    assert!(a.estimate.omega2 > 0.0);
    let c = run_conditional_sampler(&s.dataset, &cfg, 43).unwrap();
    assert_ne!(a.omega2_draws, c.omega2_draws);
}
