//! Linked GP: closed-form predictive moments of a two-layer feed-forward
//! GP system.
//!
//! With first-layer latents `W_p(x0) ~ N(m_p, v_p)` treated as
//! conditionally independent, the second layer's predictive mean and
//! variance are
//!
//! ```text
//! mu    = I' R^{-1} y
//! var   = a' J a - mu^2 + sigma^2 (1 + eta - tr(R^{-1} J)),   a = R^{-1} y
//! I_i   = prod_p E[k_p(W_p, w_ip)]
//! J_ij  = prod_p E[k_p(W_p, w_ip) k_p(W_p, w_jp)]
//! ```
//!
//! where `R`, `sigma^2` and `eta` belong to the second-layer GP.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{clamp_variance, fit_gp, FitConfig, FittedGp, PredictiveGaussian};
use crate::kernel::{se_expect_k, se_expect_kk, KernelFamily};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub family: KernelFamily,
}

impl NodeSpec {
    pub fn se(name: &str) -> Self {
        Self {
            name: name.to_string(),
            family: KernelFamily::SquaredExponential,
        }
    }
}

/// Input -> P latent nodes -> one output node; every latent feeds the
/// output node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerArchitecture {
    pub input_dims: usize,
    pub latent_nodes: Vec<NodeSpec>,
    pub output_node: NodeSpec,
}

impl LayerArchitecture {
    pub fn new(input_dims: usize, latent_nodes: Vec<NodeSpec>, output_node: NodeSpec) -> Result<Self> {
        let arch = Self {
            input_dims,
            latent_nodes,
            output_node,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Time -> {pCO2, SID, lactate} -> pH, all squared exponential.
    pub fn acid_base() -> Self {
        Self {
            input_dims: 1,
            latent_nodes: vec![NodeSpec::se("pco2"), NodeSpec::se("sid"), NodeSpec::se("lactate")],
            output_node: NodeSpec::se("ph"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims == 0 {
            return Err(Error::InvalidParameter("architecture needs at least one input".into()));
        }
        if self.latent_nodes.is_empty() {
            return Err(Error::InvalidParameter("architecture needs at least one latent node".into()));
        }
        let mut seen = HashSet::new();
        for name in self
            .latent_nodes
            .iter()
            .chain(std::iter::once(&self.output_node))
            .map(|n| n.name.as_str())
        {
            if !seen.insert(name) {
                return Err(Error::InvalidParameter(format!("duplicate node name `{name}`")));
            }
        }
        Ok(())
    }

    pub fn latent_count(&self) -> usize {
        self.latent_nodes.len()
    }

    pub fn latent_index(&self, name: &str) -> Result<usize> {
        self.latent_nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::UnknownLatent(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeManifest {
    pub name: String,
    pub layer: u8,
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub scale: f64,
    pub nugget: f64,
    pub training_size: usize,
    pub jitter_applied: f64,
}

impl NodeManifest {
    pub(crate) fn from_gp(name: &str, layer: u8, gp: &FittedGp) -> Self {
        let h = gp.hyper();
        Self {
            name: name.to_string(),
            layer,
            family: h.kernel.family,
            lengthscales: h.kernel.lengthscales.clone(),
            scale: h.scale,
            nugget: h.nugget,
            training_size: gp.training().len(),
            jitter_applied: gp.correlation().jitter_applied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedManifest {
    pub nodes: Vec<NodeManifest>,
    pub variance_clamps: u64,
}

/// A first layer of `P` independent GPs feeding one second-layer GP whose
/// inputs are the latent values `w`.
#[derive(Debug)]
pub struct LinkedEmulator {
    first_layer: Vec<FittedGp>,
    second_layer: FittedGp,
    clamp_count: AtomicU64,
}

impl Clone for LinkedEmulator {
    fn clone(&self) -> Self {
        Self {
            first_layer: self.first_layer.clone(),
            second_layer: self.second_layer.clone(),
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

impl LinkedEmulator {
    pub fn new(first_layer: Vec<FittedGp>, second_layer: FittedGp) -> Result<Self> {
        if first_layer.is_empty() {
            return Err(Error::InvalidParameter("linked emulator needs a first layer".into()));
        }
        if second_layer.training().dims() != first_layer.len() {
            return Err(Error::DimensionMismatch {
                expected: first_layer.len(),
                got: second_layer.training().dims(),
            });
        }
        let d = first_layer[0].training().dims();
        if let Some(gp) = first_layer.iter().find(|g| g.training().dims() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: gp.training().dims(),
            });
        }
        Ok(Self {
            first_layer,
            second_layer,
            clamp_count: AtomicU64::new(0),
        })
    }

    pub fn first_layer(&self) -> &[FittedGp] {
        &self.first_layer
    }

    pub fn second_layer(&self) -> &FittedGp {
        &self.second_layer
    }

    /// The `N x P` latent matrix the second layer was trained on.
    pub fn latent_values(&self) -> &DMatrix<f64> {
        &self.second_layer.training().x
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }

    pub fn latent_predictions(&self, x0: &[f64]) -> Result<Vec<PredictiveGaussian>> {
        self.first_layer.iter().map(|gp| gp.predict(x0)).collect()
    }

    pub fn assemble_i(&self, latent_preds: &[PredictiveGaussian]) -> Result<DVector<f64>> {
        assemble_i(&self.second_layer, latent_preds)
    }

    pub fn assemble_j(&self, latent_preds: &[PredictiveGaussian]) -> Result<DMatrix<f64>> {
        assemble_j(&self.second_layer, latent_preds)
    }

    /// Linked predictive moments at the global input `x0`.
    pub fn link_predict(&self, x0: &[f64]) -> Result<PredictiveGaussian> {
        let preds = self.latent_predictions(x0)?;
        let (out, clamped) = link_moments(&self.second_layer, &preds)?;
        if clamped {
            self.clamp_count.fetch_add(1, Ordering::Relaxed);
        }
        Ok(out)
    }

    pub fn manifest(&self, arch: &LayerArchitecture) -> LinkedManifest {
        let mut nodes: Vec<NodeManifest> = self
            .first_layer
            .iter()
            .zip(&arch.latent_nodes)
            .map(|(gp, node)| NodeManifest::from_gp(&node.name, 1, gp))
            .collect();
        nodes.push(NodeManifest::from_gp(&arch.output_node.name, 2, &self.second_layer));
        LinkedManifest {
            nodes,
            variance_clamps: self.clamp_count(),
        }
    }
}

fn check_linkable(second: &FittedGp, latent_preds: &[PredictiveGaussian]) -> Result<()> {
    if second.hyper().kernel.family != KernelFamily::SquaredExponential {
        return Err(Error::NotImplemented(
            "linked prediction through a non-squared-exponential second layer",
        ));
    }
    let p = second.training().dims();
    if latent_preds.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: latent_preds.len(),
        });
    }
    if let Some(bad) = latent_preds
        .iter()
        .find(|g| !g.mean.is_finite() || !(g.variance.is_finite() && g.variance >= 0.0))
    {
        return Err(Error::InvalidParameter(format!("latent prediction {bad:?} is not usable")));
    }
    Ok(())
}

/// `I_i = prod_p E[k_p(W_p, w_ip)]`.
pub fn assemble_i(second: &FittedGp, latent_preds: &[PredictiveGaussian]) -> Result<DVector<f64>> {
    check_linkable(second, latent_preds)?;
    let w = &second.training().x;
    let ls = &second.hyper().kernel.lengthscales;
    Ok(DVector::from_fn(w.nrows(), |i, _| {
        latent_preds
            .iter()
            .enumerate()
            .map(|(p, g)| se_expect_k(ls[p], g.mean, g.variance, w[(i, p)]))
            .product()
    }))
}

/// `J_ij = prod_p E[k_p(W_p, w_ip) k_p(W_p, w_jp)]`.
pub fn assemble_j(second: &FittedGp, latent_preds: &[PredictiveGaussian]) -> Result<DMatrix<f64>> {
    check_linkable(second, latent_preds)?;
    let w = &second.training().x;
    let ls = &second.hyper().kernel.lengthscales;
    let n = w.nrows();
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v: f64 = latent_preds
                .iter()
                .enumerate()
                .map(|(p, g)| se_expect_kk(ls[p], g.mean, g.variance, w[(a, p)], w[(b, p)]))
                .product();
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(j)
}

/// Linked moments for given latent Gaussians, without assembling `J`.
/// Also used to chain linked emulators through more than two layers.
pub fn link_from_moments(second: &FittedGp, latent_preds: &[PredictiveGaussian]) -> Result<PredictiveGaussian> {
    link_moments(second, latent_preds).map(|(g, _)| g)
}

fn link_moments(second: &FittedGp, latent_preds: &[PredictiveGaussian]) -> Result<(PredictiveGaussian, bool)> {
    check_linkable(second, latent_preds)?;
    let w = &second.training().x;
    let n = w.nrows();
    let hyper = second.hyper();
    let ls = &hyper.kernel.lengthscales;
    let alpha = second.alpha();
    let rinv = second.r_inverse();

    // per-latent constants of the closed forms
    let consts: Vec<(f64, f64, f64, f64, f64)> = latent_preds
        .iter()
        .zip(ls)
        .map(|(g, l)| {
            let l2 = l * l;
            (
                g.mean,
                1.0 / (l2 + 2.0 * g.variance),
                1.0 / (2.0 * l2),
                2.0 / (l2 + 4.0 * g.variance),
                0.0,
            )
        })
        .collect();
    let i_norm: f64 = latent_preds
        .iter()
        .zip(ls)
        .map(|(g, l)| 1.0 / (1.0 + 2.0 * g.variance / (l * l)).sqrt())
        .product();
    let j_norm: f64 = latent_preds
        .iter()
        .zip(ls)
        .map(|(g, l)| 1.0 / (1.0 + 4.0 * g.variance / (l * l)).sqrt())
        .product();

    let mut mean = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for (p, c) in consts.iter().enumerate() {
            let d = c.0 - w[(i, p)];
            e -= d * d * c.1;
        }
        mean += i_norm * e.exp() * alpha[i];
    }

    let mut quad = 0.0;
    let mut trace = 0.0;
    for a in 0..n {
        for b in 0..=a {
            let mut e = 0.0;
            for (p, c) in consts.iter().enumerate() {
                let wa = w[(a, p)];
                let wb = w[(b, p)];
                let diff = wa - wb;
                let cen = c.0 - 0.5 * (wa + wb);
                e -= diff * diff * c.2 + cen * cen * c.3;
            }
            let jab = j_norm * e.exp();
            let mult = if a == b { 1.0 } else { 2.0 };
            quad += mult * alpha[a] * alpha[b] * jab;
            trace += mult * rinv[(a, b)] * jab;
        }
    }
    let mut variance = quad - mean * mean + hyper.scale * (1.0 + hyper.nugget - trace);
    let clamped = clamp_variance(&mut variance, "linked predict");
    Ok((PredictiveGaussian { mean, variance }, clamped))
}

/// Complete-case sequential fit: each first-layer GP on the rows where its
/// latent is observed, the second layer on rows where every latent and the
/// output are observed.
pub fn fit_sequential_lgp(
    x: &DMatrix<f64>,
    latents: &[Vec<Option<f64>>],
    y: &[Option<f64>],
    arch: &LayerArchitecture,
    config: &FitConfig,
) -> Result<LinkedEmulator> {
    arch.validate()?;
    let n = x.nrows();
    if x.ncols() != arch.input_dims {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dims,
            got: x.ncols(),
        });
    }
    if latents.len() != arch.latent_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.latent_count(),
            got: latents.len(),
        });
    }
    if y.len() != n || latents.iter().any(|c| c.len() != n) {
        return Err(Error::SequentialFit("column lengths differ from input rows".into()));
    }

    let mut first = Vec::with_capacity(latents.len());
    for (col, node) in latents.iter().zip(&arch.latent_nodes) {
        let rows: Vec<usize> = (0..n).filter(|&i| col[i].is_some()).collect();
        if rows.len() < 2 {
            return Err(Error::SequentialFit(format!(
                "latent `{}` has {} observed rows, need 2",
                node.name,
                rows.len()
            )));
        }
        let xs = x.select_rows(&rows);
        let ys = DVector::from_iterator(rows.len(), rows.iter().map(|&i| col[i].unwrap()));
        let cfg = FitConfig {
            family: node.family,
            ..config.clone()
        };
        first.push(fit_gp(&xs, &ys, &cfg)?);
    }

    let rows: Vec<usize> = (0..n)
        .filter(|&i| y[i].is_some() && latents.iter().all(|c| c[i].is_some()))
        .collect();
    if rows.len() < 2 {
        return Err(Error::SequentialFit(format!(
            "{} complete rows for the output layer, need 2",
            rows.len()
        )));
    }
    let w = DMatrix::from_fn(rows.len(), latents.len(), |r, p| latents[p][rows[r]].unwrap());
    let ys = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i].unwrap()));
    let cfg = FitConfig {
        family: arch.output_node.family,
        ..config.clone()
    };
    let second = fit_gp(&w, &ys, &cfg)?;
    LinkedEmulator::new(first, second)
}
