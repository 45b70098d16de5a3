//! Forward corruption, few-step training, deterministic and ancestral
//! samplers, and the closed-form Gaussian oracle that audits the sampler
//! without any training.

use std::time::Instant;

use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Graph, RandomSource, Scalar, Tensor};
use crate::schedule::{BaseSchedule, StepGrid};

/// One training batch: targets and conditions in [−1, 1].
#[derive(Debug, Clone)]
pub struct TrainBatch<T: Scalar> {
    /// [B, C, H, W]
    pub x0: Tensor<T>,
    /// [B, C', H, W]
    pub cond: Tensor<T>,
}

impl<T: Scalar> TrainBatch<T> {
    pub fn new(x0: Tensor<T>, cond: Tensor<T>) -> Result<Self> {
        let (xs, cs) = (x0.shape(), cond.shape());
        if xs.len() != 4 || cs.len() != 4 || xs[0] != cs[0] || xs[2] != cs[2] || xs[3] != cs[3] {
            return Err(Error::Shape(format!(
                "batch targets {xs:?} and conditions {cs:?} are not aligned"
            )));
        }
        let in_range = |t: &Tensor<T>| {
            t.data()
                .iter()
                .all(|v| v.as_f64() >= -1.0 - 1e-6 && v.as_f64() <= 1.0 + 1e-6)
        };
        if !in_range(&x0) || !in_range(&cond) {
            return Err(Error::Dataset(
                "batch values outside [-1, 1]".to_string(),
            ));
        }
        Ok(TrainBatch { x0, cond })
    }

    pub fn batch_size(&self) -> usize {
        self.x0.shape()[0]
    }
}

/// x(t) = α(i)·x₀ + σ(i)·ε at base index i.
pub fn forward_sample<T: Scalar>(
    x0: &Tensor<T>,
    i: usize,
    eps: &Tensor<T>,
    base: &BaseSchedule,
) -> Result<Tensor<T>> {
    let (alpha, sigma) = base.alpha_sigma(i)?;
    forward_with(x0, eps, alpha, sigma)
}

/// x = α·x₀ + σ·ε for an explicit (α, σ) pair.
pub fn forward_with<T: Scalar>(
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    alpha: f64,
    sigma: f64,
) -> Result<Tensor<T>> {
    let (a, s) = (T::of_f64(alpha), T::of_f64(sigma));
    x0.zip_map(eps, |x, e| a * x + s * e)
}

/// One deterministic reverse step from (α, σ) to the previous grid point
/// (α', σ'): x' = (α'/α)·x + (σ' − (α'/α)·σ)·ε̂.
pub fn ddim_step<T: Scalar>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    cur: (f64, f64),
    prev: (f64, f64),
) -> Result<Tensor<T>> {
    let (alpha, sigma) = cur;
    let (alpha_prev, sigma_prev) = prev;
    if alpha <= 0.0 {
        return Err(Error::Schedule(format!(
            "ddim_step needs alpha > 0, got {alpha}"
        )));
    }
    let ratio = alpha_prev / alpha;
    let eps_coef = sigma_prev - ratio * sigma;
    let (r, ec) = (T::of_f64(ratio), T::of_f64(eps_coef));
    x_t.zip_map(eps_hat, |x, e| r * x + ec * e)
}

/// Anything that predicts ε from (x(t), c, i). Implemented by the trained
/// denoiser and by the closed-form Gaussian predictor used for audits.
pub trait EpsModel<T: Scalar> {
    fn predict(&self, x_t: &Tensor<T>, cond: &Tensor<T>, index: usize) -> Result<Tensor<T>>;
}

impl<T: Scalar> EpsModel<T> for DenoiserNet<T> {
    fn predict(&self, x_t: &Tensor<T>, cond: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        self.forward(x_t, cond, index)
    }
}

/// Gaussian data model x₀ ~ N(μ, s²·I); gives the exact posterior-mean ε.
#[derive(Debug, Clone, Copy)]
pub struct GaussianDataSpec {
    pub mean: f64,
    pub scale: f64,
}

impl GaussianDataSpec {
    pub fn unit() -> Self {
        GaussianDataSpec {
            mean: 0.0,
            scale: 1.0,
        }
    }
}

/// Closed-form conditional expectation E[ε | x(t)] for Gaussian data:
/// ε* = σ·(x_t − α·μ) / (α²·s² + σ²).
pub fn analytic_eps_gaussian<T: Scalar>(
    x_t: &Tensor<T>,
    i: usize,
    spec: &GaussianDataSpec,
    base: &BaseSchedule,
) -> Result<Tensor<T>> {
    if i == 0 {
        return Err(Error::IndexRange {
            what: "analytic eps index",
            got: 0,
            lo: 1,
            hi: base.t_base(),
        });
    }
    if spec.scale <= 0.0 {
        return Err(Error::Config(format!(
            "Gaussian data scale must be positive, got {}",
            spec.scale
        )));
    }
    let (alpha, sigma) = base.alpha_sigma(i)?;
    let denom = alpha * alpha * spec.scale * spec.scale + sigma * sigma;
    let gain = T::of_f64(sigma / denom);
    let mu = T::of_f64(alpha * spec.mean);
    Ok(x_t.map(|x| gain * (x - mu)))
}

/// [`EpsModel`] wrapper around [`analytic_eps_gaussian`]; ignores the condition.
pub struct AnalyticGaussianEps<'a> {
    pub spec: GaussianDataSpec,
    pub base: &'a BaseSchedule,
}

impl<'a, T: Scalar> EpsModel<T> for AnalyticGaussianEps<'a> {
    fn predict(&self, x_t: &Tensor<T>, _cond: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        analytic_eps_gaussian(x_t, index, &self.spec, self.base)
    }
}

/// Exact output variance of the deterministic sampler driven by the analytic
/// ε* on unit Gaussian data: Π over consecutive grid pairs of
/// (α_{j−1}·α_j + σ_{j−1}·σ_j)².
pub fn analytic_final_variance(grid: &StepGrid) -> f64 {
    let mut prod = 1.0f64;
    for j in (1..=grid.s_steps()).rev() {
        let (a, s) = grid.alpha_sigma_at(j);
        let (ap, sp) = grid.alpha_sigma_at(j - 1);
        let c = ap * a + sp * s;
        prod *= c * c;
    }
    prod
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Deterministic reverse steps (no randomness after the prior draw).
    Deterministic,
    /// DDPM-style ancestral chain with posterior variance between grid points.
    Ancestral,
}

impl SampleMode {
    pub fn label(&self) -> &'static str {
        match self {
            SampleMode::Deterministic => "deterministic",
            SampleMode::Ancestral => "ancestral",
        }
    }
}

/// Sampler configuration: grid, seed, mode, and whether to keep the latent
/// trajectory.
#[derive(Debug, Clone)]
pub struct SamplerRun<'a> {
    pub grid: &'a StepGrid,
    pub seed: u64,
    pub mode: SampleMode,
    pub retain_trajectory: bool,
}

/// Output of one sampler invocation.
#[derive(Debug, Clone)]
pub struct SampleOutput<T: Scalar> {
    pub image: Tensor<T>,
    /// Number of ε̂ evaluations (always exactly S).
    pub denoiser_evals: usize,
    pub wall_seconds: f64,
    /// Latents x(t) from the prior down to x(0), when retained.
    pub trajectory: Vec<Tensor<T>>,
}

/// Run the reverse process from x(1) ~ N(0, I) down to x(0).
///
/// The target shape is `cond`'s batch/spatial extents with `target_channels`
/// channels. Exactly S denoiser evaluations are made in either mode; the
/// ancestral mode adds posterior noise at every step except the last.
pub fn sample<T: Scalar, M: EpsModel<T>>(
    model: &M,
    cond: &Tensor<T>,
    target_channels: usize,
    run: &SamplerRun<'_>,
) -> Result<SampleOutput<T>> {
    let cs = cond.shape();
    if cs.len() != 4 {
        return Err(Error::Shape(format!(
            "condition must be NCHW, got {cs:?}"
        )));
    }
    let start = Instant::now();
    let grid = run.grid;
    let mut rs = RandomSource::new(run.seed);
    let shape = [cs[0], target_channels, cs[2], cs[3]];
    let mut x: Tensor<T> = rs.gaussian(&shape);
    let mut trajectory = Vec::new();
    if run.retain_trajectory {
        trajectory.push(x.clone());
    }
    let mut evals = 0usize;

    for j in (1..=grid.s_steps()).rev() {
        let i = grid.base_index(j);
        let eps_hat = model.predict(&x, cond, i)?;
        evals += 1;
        let cur = grid.alpha_sigma_at(j);
        let prev = grid.alpha_sigma_at(j - 1);
        x = match run.mode {
            SampleMode::Deterministic => ddim_step(&x, &eps_hat, cur, prev)?,
            SampleMode::Ancestral => {
                ancestral_step(&x, &eps_hat, cur, prev, j > 1, &mut rs)?
            }
        };
        if !x.all_finite() {
            return Err(Error::NonFinite(format!(
                "latent at grid position {} (base index {i})",
                j - 1
            )));
        }
        if run.retain_trajectory {
            trajectory.push(x.clone());
        }
    }
    Ok(SampleOutput {
        image: x,
        denoiser_evals: evals,
        wall_seconds: start.elapsed().as_secs_f64(),
        trajectory,
    })
}

/// DDPM posterior step between consecutive grid points.
///
/// With ᾱ = α², the effective one-step α̃ = ᾱ_j/ᾱ_{j−1} and β̃ =
/// (1−ᾱ_{j−1})/(1−ᾱ_j)·(1−α̃); the mean combines the implied x₀ and x(t).
fn ancestral_step<T: Scalar>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    cur: (f64, f64),
    prev: (f64, f64),
    add_noise: bool,
    rs: &mut RandomSource,
) -> Result<Tensor<T>> {
    let (alpha, sigma) = cur;
    let (alpha_prev, _sigma_prev) = prev;
    if alpha <= 0.0 {
        return Err(Error::Schedule(format!(
            "ancestral step needs alpha > 0, got {alpha}"
        )));
    }
    let abar = alpha * alpha;
    let abar_prev = alpha_prev * alpha_prev;
    let step_alpha = abar / abar_prev;
    let step_beta = 1.0 - step_alpha;
    let denom = 1.0 - abar;
    // implied x0: (x - sigma * eps) / alpha
    let coef_x0 = alpha_prev * step_beta / denom;
    let coef_xt = step_alpha.sqrt() * (1.0 - abar_prev) / denom;
    let posterior_var = (1.0 - abar_prev) / denom * step_beta;

    let ca = T::of_f64(coef_x0 / alpha);
    let cs = T::of_f64(coef_x0 * sigma / alpha);
    let ct = T::of_f64(coef_xt);
    // mean = coef_x0 * x0_hat + coef_xt * x_t, with x0_hat expanded in place
    let mut out = x_t.zip_map(eps_hat, |x, e| ca * x - cs * e + ct * x)?;
    if add_noise && posterior_var > 0.0 {
        let std = T::of_f64(posterior_var.sqrt());
        let noise: Tensor<T> = rs.gaussian(x_t.shape());
        out = out.zip_map(&noise, |m, z| m + std * z)?;
    }
    Ok(out)
}

/// Diagnostics from one training step.
#[derive(Debug, Clone)]
pub struct TrainStepStats {
    pub loss: f64,
    /// Base indices queried this step (instrumentation: all lie on the grid).
    pub queried_base_indices: Vec<usize>,
}

/// One few-step training step (simple ε-prediction objective, equal weights).
///
/// Per batch element: draw a grid position j uniformly from {1..S}, draw
/// ε ~ N(0, I), form x(t) at base index i_j, predict ε̂, take the mean-squared
/// ε error over the whole batch, backpropagate and apply one Adam update.
pub fn train_step<T: Scalar>(
    net: &mut DenoiserNet<T>,
    batch: &TrainBatch<T>,
    grid: &StepGrid,
    base: &BaseSchedule,
    opt: &mut AdamState<T>,
    rs: &mut RandomSource,
) -> Result<TrainStepStats> {
    if grid.t_base() != base.t_base() {
        return Err(Error::Schedule(format!(
            "grid t_base {} does not match schedule t_base {}",
            grid.t_base(),
            base.t_base()
        )));
    }
    let b = batch.batch_size();
    let (xs, cs) = (batch.x0.shape(), batch.cond.shape());

    let mut indices = Vec::with_capacity(b);
    for _ in 0..b {
        let j = 1 + rs.uniform_usize(grid.s_steps());
        indices.push(grid.base_index(j));
    }

    let eps: Tensor<T> = rs.gaussian(xs);
    let mut x_t = Tensor::zeros(xs);
    {
        let per = xs[1] * xs[2] * xs[3];
        let xd = batch.x0.data();
        let ed = eps.data();
        let od = x_t.data_mut();
        for (bi, &i) in indices.iter().enumerate() {
            let (alpha, sigma) = base.alpha_sigma(i)?;
            let (a, s) = (T::of_f64(alpha), T::of_f64(sigma));
            for k in bi * per..(bi + 1) * per {
                od[k] = a * xd[k] + s * ed[k];
            }
        }
    }
    debug_assert_eq!(cs[0], b);

    let mut g = Graph::new();
    let (out, param_ids) = net.forward_graph(&mut g, &x_t, &batch.cond, &indices, true)?;
    let target = g.leaf(eps, false);
    let loss_id = g.mse_loss(out, target)?;
    let loss = g.value(loss_id).data()[0].as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss (seed state {}, indices {indices:?})",
            rs.seed()
        )));
    }
    g.backward(loss_id)?;

    let grads: Vec<Tensor<T>> = param_ids
        .iter()
        .map(|&id| g.grad(id).expect("parameter gradient missing").clone())
        .collect();
    opt.step(net.params_mut(), &grads)?;

    Ok(TrainStepStats {
        loss,
        queried_base_indices: indices,
    })
}
