mod common;

use common::{quick_sem, two_layer_system, Moments};
use dgpsi::dgp::{mix, train_sem, DgpData, DgpSiEmulator, LatentSampler};
use dgpsi::gp::{fit_gp, FitConfig, PredictiveGaussian};
use dgpsi::kernel::{GpHyperparams, KernelSpec};
use dgpsi::linked::fit_sequential_lgp;
use dgpsi::rng;
use nalgebra::{DMatrix, DVector};

fn se_hyper(ls: Vec<f64>, scale: f64, nugget: f64) -> GpHyperparams {
    GpHyperparams::new(KernelSpec::squared_exponential(ls).unwrap(), scale, nugget).unwrap()
}

#[test]
fn decoupled_output_leaves_the_conditional_prior() {
    let n = 12;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let obs: Vec<f64> = t.iter().map(|s| 1.5 + 0.3 * (4.0 * s).sin()).collect();
    let gap = 5;
    let mut col: Vec<Option<f64>> = obs.iter().copied().map(Some).collect();
    col[gap] = None;
    let y = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
    let data = DgpData::new(DMatrix::from_column_slice(n, 1, &t), vec![col], y).unwrap();
    let (ls, scale, nugget) = (0.2, 1.3, 1e-2);
    let first = se_hyper(vec![ls], scale, nugget);
    // an enormous lengthscale makes the output kernel blind to the latent
    let second = se_hyper(vec![1e6], 1.0, 0.1);

    let cov = DMatrix::from_fn(n, n, |i, j| {
        let r = (t[i] - t[j]) / ls;
        scale * ((-r * r).exp() + if i == j { nugget } else { 0.0 })
    });
    let rest: Vec<usize> = (0..n).filter(|&i| i != gap).collect();
    let s_oo = cov.select_rows(&rest).select_columns(&rest);
    let s_mo = DVector::from_iterator(rest.len(), rest.iter().map(|&j| cov[(gap, j)]));
    let w_o = DVector::from_iterator(rest.len(), rest.iter().map(|&j| obs[j]));
    let chol = s_oo.cholesky().unwrap();
    let cond_mean = s_mo.dot(&chol.solve(&w_o));
    let cond_var = cov[(gap, gap)] - s_mo.dot(&chol.solve(&s_mo));

    let init = vec![obs.clone()];
    let mut sampler = LatentSampler::new(&data, &[first], &second, init, false).unwrap();
    let mut rng = rng::stream(11, &[]);
    let mut m = Moments::default();
    for k in 0..500 + 20_000 * 2 {
        sampler.sweep(&mut rng).unwrap();
        if k >= 500 && k % 2 == 0 {
            m.push(sampler.values()[0][gap]);
        }
    }
    assert!((m.mean() - cond_mean).abs() / cond_mean.abs() < 0.03, "mean {} vs {cond_mean}", m.mean());
    assert!((m.var() - cond_var).abs() / cond_var < 0.03, "var {} vs {cond_var}", m.var());
}

#[test]
fn imputations_differ_only_in_missing_entries() {
    let sys = two_layer_system(30, 0.2, [1.5, 0.5], &mut rng::stream(1, &[]));
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(3, 20, 6)).unwrap();
    let imps = em.imputations();
    assert_eq!(imps.len(), 6);
    for (k, imp) in imps.iter().enumerate() {
        assert_eq!(imp.draw_index, k);
        for p in 0..2 {
            for i in 0..30 {
                let fixed = sys.data.latents[p][i];
                assert_eq!(imp.fixed_mask[(i, p)], fixed.is_some());
                if let Some(v) = fixed {
                    assert_eq!(imp.values[(i, p)].to_bits(), v.to_bits());
                }
            }
        }
    }
    for &(p, i, _) in &sys.hidden {
        let first = imps[0].values[(i, p)];
        assert!(imps.iter().skip(1).any(|imp| imp.values[(i, p)] != first), "entry ({i},{p}) never moved");
    }
}

#[test]
fn more_imputations_steady_the_ensemble_mean() {
    let sys = two_layer_system(25, 0.25, [1.5, 0.5], &mut rng::stream(2, &[]));
    let (p, i, _) = sys.hidden[0];
    let t = sys.data.inputs[(i, 0)];
    let spread = |n_imp: usize| {
        let mut m = Moments::default();
        for seed in 0..10 {
            let em = train_sem(&sys.data, &sys.arch, &quick_sem(100 + seed, 30, n_imp)).unwrap();
            m.push(em.impute_covariates(&[t], &sys.arch.latent_nodes[p].name).unwrap()[0].mixture.mean);
        }
        m.var()
    };
    let (few, many) = (spread(5), spread(50));
    assert!(many <= few, "variance across seeds: N_imp=50 {many}, N_imp=5 {few}");
}

#[test]
fn save_then_load_predicts_bitwise_identically() {
    let sys = two_layer_system(25, 0.2, [1.5, 0.5], &mut rng::stream(3, &[]));
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(4, 20, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    em.save(dir.path()).unwrap();
    let back = DgpSiEmulator::load(dir.path()).unwrap();
    assert_eq!(em.manifest(), back.manifest());
    for q in [0.013, 0.5, 0.77, 1.2] {
        let a = em.predict_ensemble(&[q]).unwrap();
        let b = back.predict_ensemble(&[q]).unwrap();
        assert_eq!(a.mixture.mean.to_bits(), b.mixture.mean.to_bits());
        assert_eq!(a.mixture.variance.to_bits(), b.mixture.variance.to_bits());
        let a = em.impute_covariates(&[q], "w2").unwrap();
        let b = back.impute_covariates(&[q], "w2").unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn imputing_at_an_observed_time_returns_the_observation() {
    let sys = two_layer_system(30, 0.2, [1.5, 0.5], &mut rng::stream(4, &[]));
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(5, 20, 8)).unwrap();
    for p in 0..2 {
        let h = &em.first_layer_hyper()[p];
        let tol = 3.0 * (h.scale * h.nugget).sqrt();
        let name = &sys.arch.latent_nodes[p].name;
        for i in sys.data.observed_rows(p) {
            let t = sys.data.inputs[(i, 0)];
            let got = em.impute_covariates(&[t], name).unwrap()[0].mixture.mean;
            let want = sys.data.latents[p][i].unwrap();
            assert!((got - want).abs() <= tol, "{name} row {i}: {got} vs {want}, tol {tol}");
        }
    }
}

fn hidden_mae(em: &DgpSiEmulator, sys: &common::TwoLayer, p: usize) -> f64 {
    let cells: Vec<_> = sys.hidden.iter().filter(|c| c.0 == p).collect();
    let times: Vec<f64> = cells.iter().map(|c| sys.data.inputs[(c.1, 0)]).collect();
    let preds = em.impute_covariates(&times, &sys.arch.latent_nodes[p].name).unwrap();
    cells.iter().zip(&preds).map(|(c, pr)| (pr.mixture.mean - c.2).abs()).sum::<f64>() / cells.len() as f64
}

fn single_gp_mae(sys: &common::TwoLayer, p: usize) -> f64 {
    let obs = sys.data.observed_rows(p);
    let x = sys.data.inputs.select_rows(&obs);
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| sys.data.latents[p][i].unwrap()));
    let gp = fit_gp(&x, &y, &FitConfig::default()).unwrap();
    let cells: Vec<_> = sys.hidden.iter().filter(|c| c.0 == p).collect();
    cells
        .iter()
        .map(|c| (gp.predict(&[sys.data.inputs[(c.1, 0)]]).unwrap().mean - c.2).abs())
        .sum::<f64>()
        / cells.len() as f64
}

#[test]
fn latent_unrelated_to_the_output_imputes_like_a_single_gp() {
    // the output ignores w2 entirely
    let sys = two_layer_system(40, 0.2, [1.5, 0.0], &mut rng::stream(5, &[]));
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(6, 60, 20)).unwrap();
    let dgp = hidden_mae(&em, &sys, 1);
    let gp = single_gp_mae(&sys, 1);
    assert!((dgp - gp).abs() <= 0.05 * gp, "w2 MAE: DGP-SI {dgp}, GP {gp}");
}

#[test]
fn fully_observed_training_outputs_are_covered() {
    let sys = two_layer_system(40, 0.0, [1.5, 0.5], &mut rng::stream(6, &[]));
    assert_eq!(sys.data.missing_count(), 0);
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(7, 10, 3)).unwrap();
    let inside = (0..40)
        .filter(|&i| {
            let p = em.predict_ensemble(&[sys.data.inputs[(i, 0)]]).unwrap().mixture;
            (sys.data.output[i] - p.mean).abs() <= 3.0 * p.sd()
        })
        .count();
    assert!(inside as f64 >= 0.95 * 40.0, "{inside}/40 within 3 sd");
}

#[test]
fn sem_beats_sequential_fit_on_hidden_latents() {
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 0..10 {
        let sys = two_layer_system(40, 0.2, [1.5, 0.8], &mut rng::stream(200 + seed, &[]));
        let em = train_sem(&sys.data, &sys.arch, &quick_sem(seed, 100, 20)).unwrap();
        let y: Vec<Option<f64>> = sys.data.output.iter().copied().map(Some).collect();
        let lgp = fit_sequential_lgp(&sys.data.inputs, &sys.data.latents, &y, &sys.arch, &FitConfig::default()).unwrap();
        let (mut dgp_err, mut lgp_err) = (0.0, 0.0);
        for &(p, i, v) in &sys.hidden {
            let t = sys.data.inputs[(i, 0)];
            dgp_err += (em.impute_covariates(&[t], &sys.arch.latent_nodes[p].name).unwrap()[0].mixture.mean - v).abs();
            lgp_err += (lgp.first_layer()[p].predict(&[t]).unwrap().mean - v).abs();
        }
        log.push((dgp_err, lgp_err));
        if dgp_err <= lgp_err {
            wins += 1;
        }
    }
    assert!(wins >= 7, "SEM better in {wins}/10 seeds: {log:?}");
}

#[test]
fn mixture_identities_hold() {
    let sys = two_layer_system(25, 0.2, [1.5, 0.5], &mut rng::stream(7, &[]));
    let em = train_sem(&sys.data, &sys.arch, &quick_sem(8, 20, 7)).unwrap();
    for q in [0.1, 0.45, 0.93] {
        let pred = em.predict_ensemble(&[q]).unwrap();
        let n = pred.components.len() as f64;
        let mean = pred.components.iter().map(|c| c.mean).sum::<f64>() / n;
        let var = pred.components.iter().map(|c| c.variance + c.mean * c.mean).sum::<f64>() / n - mean * mean;
        assert!((pred.mixture.mean - mean).abs() <= 1e-12);
        assert!((pred.mixture.variance - var).abs() <= 1e-12);
        for (c, e) in pred.components.iter().zip(em.emulators()) {
            assert_eq!(*c, e.link_predict(&[q]).unwrap());
        }
    }
    let one = PredictiveGaussian { mean: 0.3, variance: 0.2 };
    assert_eq!(mix(vec![one]).unwrap().mixture, one);
}
