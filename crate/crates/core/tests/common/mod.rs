#![allow(dead_code)]

use dgpsi::gp::{FittedGp, PredictiveGaussian, TrainingSet};
use dgpsi::kernel::{GpHyperparams, KernelSpec};
use dgpsi::linked::LinkedEmulator;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Physicists' Gauss–Hermite nodes and weights by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(W)]` for `W ~ N(m, v)` by Gauss–Hermite quadrature.
pub fn gh_expect(nodes: &(Vec<f64>, Vec<f64>), m: f64, v: f64, f: impl Fn(f64) -> f64) -> f64 {
    let s = (2.0 * v).sqrt();
    let total: f64 = nodes.0.iter().zip(&nodes.1).map(|(x, w)| w * f(m + s * x)).sum();
    total / std::f64::consts::PI.sqrt()
}

pub fn se(l: f64, a: f64, b: f64) -> f64 {
    let t = (a - b) / l;
    (-t * t).exp()
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Running mean and variance (Welford).
#[derive(Default, Clone, Copy)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn var(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.var() / self.n).sqrt()
    }
}

pub fn gp_with(x: DMatrix<f64>, y: DVector<f64>, ls: Vec<f64>, scale: f64, nugget: f64) -> FittedGp {
    let hyper = GpHyperparams::new(KernelSpec::squared_exponential(ls).unwrap(), scale, nugget).unwrap();
    FittedGp::new(TrainingSet::new(x, y).unwrap(), hyper).unwrap()
}

/// A random two-layer system with `n` training rows and `p` latents over
/// a 1-D input on `[0, 1]`. Hyperparameters are drawn, not fitted.
pub fn random_system<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> LinkedEmulator {
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>() * 0.5) / n as f64).collect();
    let x = DMatrix::from_column_slice(n, 1, &t);
    let mut w = DMatrix::<f64>::zeros(n, p);
    let mut first = Vec::with_capacity(p);
    for q in 0..p {
        let freq = rng.random_range(2.0..6.0);
        let phase = rng.random_range(0.0..6.0);
        for i in 0..n {
            w[(i, q)] = (freq * t[i] + phase).sin() + 0.1 * normal(rng);
        }
        first.push(gp_with(
            x.clone(),
            w.column(q).into_owned(),
            vec![rng.random_range(0.1..0.4)],
            rng.random_range(0.5..1.5),
            rng.random_range(1e-3..5e-2),
        ));
    }
    let y = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..p).map(|q| w[(i, q)] * (q as f64 + 1.0) * 0.7).sum();
        s.tanh() + 0.05 * normal(rng)
    });
    let ls: Vec<f64> = (0..p).map(|_| rng.random_range(0.6..2.0)).collect();
    let second = gp_with(w, y, ls, rng.random_range(0.5..1.5), rng.random_range(1e-3..5e-2));
    LinkedEmulator::new(first, second).unwrap()
}

/// Moments of the second layer's predictive distribution with its input
/// drawn from independent Gaussians: returns the across-draw statistics
/// of the predictive mean and the average predictive variance.
pub fn mc_propagate<R: Rng + ?Sized>(
    second: &FittedGp,
    latents: &[PredictiveGaussian],
    draws: usize,
    rng: &mut R,
) -> (Moments, f64) {
    let mut mean = Moments::default();
    let mut var_sum = 0.0;
    let mut w = vec![0.0; latents.len()];
    for _ in 0..draws {
        for (wi, g) in w.iter_mut().zip(latents) {
            *wi = g.mean + g.sd() * normal(rng);
        }
        let p = second.predict(&w).unwrap();
        mean.push(p.mean);
        var_sum += p.variance;
    }
    (mean, var_sum / draws as f64)
}

/// Total variance implied by `mc_propagate`'s output.
pub fn total_variance(mean: &Moments, avg_var: f64) -> f64 {
    avg_var + mean.var()
}

/// Two smooth latents over time on `[0, 1]` with an output that depends
/// on both, plus a fraction of each latent's cells hidden at random.
/// Returns the data and the hidden `(latent, row, value)` triples.
pub struct TwoLayer {
    pub data: dgpsi::dgp::DgpData,
    pub arch: dgpsi::linked::LayerArchitecture,
    pub hidden: Vec<(usize, usize, f64)>,
}

/// `coupling[p]` scales latent `p`'s effect on the output.
pub fn two_layer_system<R: Rng + ?Sized>(n: usize, hide: f64, coupling: [f64; 2], rng: &mut R) -> TwoLayer {
    use dgpsi::linked::{LayerArchitecture, NodeSpec};
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ph = [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)];
    let w: Vec<Vec<f64>> = vec![
        t.iter().map(|&s| (9.0 * s + ph[0]).sin() + 0.02 * normal(rng)).collect(),
        t.iter().map(|&s| (6.0 * s + ph[1]).cos() + 0.02 * normal(rng)).collect(),
    ];
    let y = DVector::from_fn(n, |i, _| {
        (coupling[0] * w[0][i]).tanh() + coupling[1] * w[1][i] + 0.01 * normal(rng)
    });
    let mut hidden = Vec::new();
    let latents = w
        .iter()
        .enumerate()
        .map(|(p, col)| {
            col.iter()
                .enumerate()
                .map(|(i, &v)| {
                    // keep the ends so every gap is an interpolation
                    if i > 0 && i + 1 < n && rng.random::<f64>() < hide {
                        hidden.push((p, i, v));
                        None
                    } else {
                        Some(v)
                    }
                })
                .collect()
        })
        .collect();
    let data = dgpsi::dgp::DgpData::new(DMatrix::from_column_slice(n, 1, &t), latents, y).unwrap();
    let arch = LayerArchitecture::new(1, vec![NodeSpec::se("w1"), NodeSpec::se("w2")], NodeSpec::se("y")).unwrap();
    TwoLayer { data, arch, hidden }
}

pub fn quick_sem(seed: u64, iterations: usize, n_imputations: usize) -> dgpsi::dgp::SemConfig {
    dgpsi::dgp::SemConfig {
        iterations,
        burn_in: iterations * 3 / 5,
        n_imputations,
        seed,
        ..Default::default()
    }
}
