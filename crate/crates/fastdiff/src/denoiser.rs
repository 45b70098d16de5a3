//! Conditional ε-predictor: a small encoder–decoder convolutional net with
//! sinusoidal time embedding and channel-concatenated condition images.
//!
//! Structure per level ℓ (width = base_width·2^ℓ): two residual blocks of
//! 3×3 convolutions with SiLU activations and a per-block linear projection of
//! the time embedding added as a per-sample channel bias. The encoder pools by
//! 2 between levels; the decoder mirrors with nearest upsampling and skip
//! concatenation. No normalization or attention layers.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, RandomSource, Scalar, Tensor};

/// Sinusoidal embedding of a base-step index.
///
/// Pairs (sin(i·ω_k), cos(i·ω_k)) with ω_k = 10000^(−2k/d), interleaved, so
/// ‖embed(i)‖² = d/2 for every i.
#[derive(Debug, Clone, Copy)]
pub struct TimeEmbedding {
    dim: usize,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dimension must be positive and even, got {dim}"
            )));
        }
        Ok(TimeEmbedding { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_f64(&self, index: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(d);
        for k in 0..d / 2 {
            let omega = 10000f64.powf(-2.0 * k as f64 / d as f64);
            let arg = index as f64 * omega;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out
    }

    /// Embedding matrix [N, d] for a batch of indices.
    pub fn embed_batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.embed_f64(i).into_iter().map(T::of_f64));
        }
        Tensor::from_vec(&[indices.len(), self.dim], data).expect("embed dims consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Channels of the target image x₀.
    pub target_channels: usize,
    /// Channels of the condition stack c (2 for neighbor-slice triplets, 1 otherwise).
    pub cond_channels: usize,
    pub base_width: usize,
    /// Resolution levels (full, ½, ¼, ... ).
    pub levels: usize,
    pub time_embed_dim: usize,
    pub image_size: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            target_channels: 1,
            cond_channels: 1,
            base_width: 32,
            levels: 3,
            time_embed_dim: 64,
            image_size: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_channels == 0
            || self.cond_channels == 0
            || self.base_width == 0
            || self.levels == 0
            || self.image_size == 0
        {
            return Err(Error::Config(format!("all counts must be >= 1: {self:?}")));
        }
        TimeEmbedding::new(self.time_embed_dim)?;
        let down = 1usize << (self.levels - 1);
        if self.image_size % down != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by 2^(levels-1) = {down}",
                self.image_size
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    /// Convolution kernel [F,C,kh,kw]; fan-in = C·kh·kw.
    ConvWeight,
    /// Linear map [in, out] applied as emb · W; fan-in = in.
    Linear,
    Bias,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct BlockIds {
    conv1: ConvIds,
    conv2: ConvIds,
    time_w: usize,
    time_b: usize,
    skip: Option<ConvIds>,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<ParamSpec>,
    stem: ConvIds,
    enc: Vec<Vec<BlockIds>>,
    dec: Vec<Vec<BlockIds>>,
    head: ConvIds,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.specs.push(ParamSpec { name, shape, kind });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvIds {
        let w = self.push(format!("{name}.w"), vec![cout, cin, k, k], ParamKind::ConvWeight);
        let b = self.push(format!("{name}.b"), vec![cout], ParamKind::Bias);
        ConvIds { w, b }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, d: usize) -> BlockIds {
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3);
        let time_w = self.push(format!("{name}.time.w"), vec![d, cout], ParamKind::Linear);
        let time_b = self.push(format!("{name}.time.b"), vec![cout], ParamKind::Bias);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3);
        let skip = if cin != cout {
            Some(self.conv(&format!("{name}.skip"), cin, cout, 1))
        } else {
            None
        };
        BlockIds {
            conv1,
            conv2,
            time_w,
            time_b,
            skip,
        }
    }
}

fn build_layout(config: &DenoiserConfig) -> Layout {
    let mut b = LayoutBuilder { specs: Vec::new() };
    let d = config.time_embed_dim;
    let in_ch = config.target_channels + config.cond_channels;
    let stem = b.conv("stem", in_ch, config.width(0), 3);

    let mut enc = Vec::new();
    for level in 0..config.levels {
        let w = config.width(level);
        let cin = if level == 0 {
            config.width(0)
        } else {
            config.width(level - 1)
        };
        enc.push(vec![
            b.block(&format!("enc{level}.block0"), cin, w, d),
            b.block(&format!("enc{level}.block1"), w, w, d),
        ]);
    }

    let mut dec = Vec::new();
    for level in (0..config.levels.saturating_sub(1)).rev() {
        let w = config.width(level);
        let cin = config.width(level + 1) + w;
        dec.push(vec![
            b.block(&format!("dec{level}.block0"), cin, w, d),
            b.block(&format!("dec{level}.block1"), w, w, d),
        ]);
    }

    let head = b.conv("head", config.width(0), config.target_channels, 3);
    Layout {
        specs: b.specs,
        stem,
        enc,
        dec,
        head,
    }
}

/// The conditional ε-predictor: ordered parameter tensors plus their schema.
#[derive(Debug, Clone)]
pub struct DenoiserNet<T: Scalar> {
    config: DenoiserConfig,
    layout: Layout,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> DenoiserNet<T> {
    /// Fan-in-scaled uniform init (bound √(1/fan_in)), zero biases,
    /// deterministic for a given stream.
    pub fn init(config: DenoiserConfig, rs: &mut RandomSource) -> Result<Self> {
        config.validate()?;
        let layout = build_layout(&config);
        let mut params = Vec::with_capacity(layout.specs.len());
        for spec in &layout.specs {
            let n: usize = spec.shape.iter().product();
            let t = match spec.kind {
                ParamKind::Bias => Tensor::zeros(&spec.shape),
                ParamKind::ConvWeight | ParamKind::Linear => {
                    let fan_in: usize = match spec.kind {
                        ParamKind::ConvWeight => spec.shape[1..].iter().product(),
                        _ => spec.shape[0],
                    };
                    let bound = (1.0 / fan_in as f64).sqrt();
                    let data: Vec<T> = (0..n)
                        .map(|_| T::of_f64(rs.uniform_range(-bound, bound)))
                        .collect();
                    Tensor::from_vec(&spec.shape, data)?
                }
            };
            params.push(t);
        }
        Ok(DenoiserNet {
            config,
            layout,
            params,
        })
    }

    /// Rebuild a net from its config and previously saved parameters.
    pub fn from_params(config: DenoiserConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = build_layout(&config);
        if params.len() != layout.specs.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match config ({} expected)",
                params.len(),
                layout.specs.len()
            )));
        }
        for (p, spec) in params.iter().zip(&layout.specs) {
            if p.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
        }
        Ok(DenoiserNet {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.layout.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Build the forward pass on `graph`; returns the ε̂ node and the leaf ids
    /// of the parameters (in schema order) for gradient extraction.
    ///
    /// `indices` supplies a base-step index per batch element. With
    /// `train = false`, parameters are inserted as constants and backward is
    /// unavailable.
    pub fn forward_graph(
        &self,
        graph: &mut Graph<T>,
        x_t: &Tensor<T>,
        cond: &Tensor<T>,
        indices: &[usize],
        train: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let xs = x_t.shape();
        let cs = cond.shape();
        if xs.len() != 4 || cs.len() != 4 {
            return Err(Error::Shape(format!(
                "forward expects NCHW inputs, got {xs:?} and {cs:?}"
            )));
        }
        if xs[1] != self.config.target_channels || cs[1] != self.config.cond_channels {
            return Err(Error::Shape(format!(
                "channel mismatch: x_t has {}, condition has {}, config wants {} and {}",
                xs[1], cs[1], self.config.target_channels, self.config.cond_channels
            )));
        }
        if xs[0] != cs[0] || xs[2] != cs[2] || xs[3] != cs[3] {
            return Err(Error::Shape(format!(
                "x_t {xs:?} and condition {cs:?} are not spatially aligned"
            )));
        }
        if indices.len() != xs[0] {
            return Err(Error::Shape(format!(
                "{} time indices for batch of {}",
                indices.len(),
                xs[0]
            )));
        }
        let down = 1usize << (self.config.levels - 1);
        if xs[2] % down != 0 || xs[3] % down != 0 {
            return Err(Error::Shape(format!(
                "spatial extents {}x{} not divisible by 2^(levels-1) = {down}",
                xs[2], xs[3]
            )));
        }

        let g = graph;
        let param_ids: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.clone(), train))
            .collect();

        let te = TimeEmbedding::new(self.config.time_embed_dim)?;
        let emb = g.leaf(te.embed_batch(indices), false);

        let conv =
            |g: &mut Graph<T>, ids: &ConvIds, x: NodeId, pad: usize| -> Result<NodeId> {
                let y = g.conv2d(x, param_ids[ids.w], 1, pad)?;
                g.add_channel_bias(y, param_ids[ids.b])
            };

        let block = |g: &mut Graph<T>, ids: &BlockIds, h: NodeId| -> Result<NodeId> {
            let a = g.silu(h);
            let a = conv(g, &ids.conv1, a, 1)?;
            let tb = g.matmul(emb, param_ids[ids.time_w])?;
            let tb = g.add_row_bias(tb, param_ids[ids.time_b])?;
            let a = g.add_sample_channel_bias(a, tb)?;
            let a = g.silu(a);
            let a = conv(g, &ids.conv2, a, 1)?;
            let skip = match &ids.skip {
                Some(sc) => conv(g, sc, h, 0)?,
                None => h,
            };
            g.add(skip, a)
        };

        let x_id = g.leaf(x_t.clone(), false);
        let c_id = g.leaf(cond.clone(), false);
        let x_in = g.concat_channels(x_id, c_id)?;
        let mut h = conv(g, &self.layout.stem, x_in, 1)?;

        let mut skips = Vec::new();
        for (level, blocks) in self.layout.enc.iter().enumerate() {
            for ids in blocks {
                h = block(g, ids, h)?;
            }
            if level + 1 < self.config.levels {
                skips.push(h);
                h = g.avg_pool2(h)?;
            }
        }

        for (d_idx, blocks) in self.layout.dec.iter().enumerate() {
            let level = self.config.levels - 2 - d_idx;
            h = g.upsample_nearest2(h)?;
            h = g.concat_channels(h, skips[level])?;
            for ids in blocks {
                h = block(g, ids, h)?;
            }
        }

        let out = conv(g, &self.layout.head, h, 1)?;
        Ok((out, param_ids))
    }

    /// Convenience single-index forward: ε̂ for a whole batch at one time step.
    pub fn forward(&self, x_t: &Tensor<T>, cond: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let indices = vec![index; x_t.shape()[0]];
        let (out, _) = self.forward_graph(&mut g, x_t, cond, &indices, false)?;
        Ok(g.value(out).clone())
    }

    /// Per-sample time indices variant of [`DenoiserNet::forward`].
    pub fn forward_indices(
        &self,
        x_t: &Tensor<T>,
        cond: &Tensor<T>,
        indices: &[usize],
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (out, _) = self.forward_graph(&mut g, x_t, cond, indices, false)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> DenoiserConfig {
        DenoiserConfig {
            target_channels: 1,
            cond_channels: 1,
            base_width: 4,
            levels: 2,
            time_embed_dim: 8,
            image_size: 16,
        }
    }

    #[test]
    fn time_embed_zero_index_alternates() {
        let te = TimeEmbedding::new(8).unwrap();
        let v = te.embed_f64(0);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time_embed_values_and_norm() {
        let te = TimeEmbedding::new(2).unwrap();
        let v = te.embed_f64(1000);
        assert!((v[0] - 0.826879540532).abs() < 1e-9, "sin(1000) = {}", v[0]);
        assert!((v[1] - 0.562379076291).abs() < 1e-9, "cos(1000) = {}", v[1]);

        let te = TimeEmbedding::new(64).unwrap();
        for i in [0usize, 1, 17, 699, 1000] {
            let n2: f64 = te.embed_f64(i).iter().map(|x| x * x).sum();
            assert!((n2 - 32.0).abs() < 1e-9, "i = {i}: {n2}");
        }
    }

    #[test]
    fn time_embed_rejects_odd_dim() {
        assert!(TimeEmbedding::new(7).is_err());
        assert!(TimeEmbedding::new(0).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = tiny_config();
        let a = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(5)).unwrap();
        let b = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(5)).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.to_bytes(), pb.to_bytes());
        }
        for (p, name) in a.params().iter().zip(a.param_names()) {
            if name.ends_with(".b") {
                assert!(p.data().iter().all(|&v| v == 0.0), "{name} not zero");
            }
        }
    }

    #[test]
    fn init_weight_variance_matches_uniform_moment() {
        // var of U(-b, b) is b²/3; check a large conv layer within 10%
        let cfg = DenoiserConfig {
            base_width: 32,
            levels: 2,
            ..tiny_config()
        };
        let net = DenoiserNet::<f64>::init(cfg, &mut RandomSource::new(9)).unwrap();
        let names = net.param_names();
        let idx = names
            .iter()
            .position(|n| *n == "enc1.block1.conv1.w")
            .unwrap();
        let p = &net.params()[idx];
        assert!(p.numel() > 30_000, "want a large layer, got {}", p.numel());
        let fan_in: usize = p.shape()[1..].iter().product();
        let expect = (1.0 / fan_in as f64) / 3.0;
        let mean: f64 = p.mean_f64();
        let var: f64 = p.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / p.numel() as f64;
        assert!(
            (var - expect).abs() / expect < 0.1,
            "var {var}, expect {expect}"
        );
    }

    #[test]
    fn forward_output_shape_matches_input() {
        for cfg in [
            tiny_config(),
            DenoiserConfig {
                cond_channels: 2,
                base_width: 6,
                levels: 3,
                ..tiny_config()
            },
        ] {
            let net = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(1)).unwrap();
            let mut rs = RandomSource::new(2);
            let x: Tensor<f32> =
                rs.gaussian(&[3, cfg.target_channels, cfg.image_size, cfg.image_size]);
            let c: Tensor<f32> =
                rs.gaussian(&[3, cfg.cond_channels, cfg.image_size, cfg.image_size]);
            let y = net.forward(&x, &c, 500).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.all_finite());
        }
    }

    #[test]
    fn forward_rejects_mismatched_inputs() {
        let cfg = tiny_config();
        let net = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(1)).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16]);
        let bad_c = Tensor::<f32>::zeros(&[1, 2, 16, 16]);
        assert!(net.forward(&x, &bad_c, 10).is_err());
        let misaligned = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        assert!(net.forward(&x, &misaligned, 10).is_err());
    }

    #[test]
    fn time_conditioning_is_live() {
        let net = DenoiserNet::<f32>::init(tiny_config(), &mut RandomSource::new(3)).unwrap();
        let mut rs = RandomSource::new(4);
        let x: Tensor<f32> = rs.gaussian(&[1, 1, 16, 16]);
        let c: Tensor<f32> = rs.gaussian(&[1, 1, 16, 16]);
        let y1 = net.forward(&x, &c, 100).unwrap();
        let y2 = net.forward(&x, &c, 900).unwrap();
        assert_ne!(y1.data(), y2.data());
    }

    #[test]
    fn forward_finite_on_input_sweep() {
        let net = DenoiserNet::<f32>::init(tiny_config(), &mut RandomSource::new(7)).unwrap();
        for scale in [-3.0f32, -1.0, 0.0, 1.0, 3.0] {
            let x = Tensor::full(&[2, 1, 16, 16], scale);
            let c = Tensor::full(&[2, 1, 16, 16], -scale);
            let y = net.forward(&x, &c, 700).unwrap();
            assert!(y.all_finite(), "scale {scale}");
        }
    }

    /// Closed-form parameter count, written independently of the layout code.
    fn expected_param_count(cfg: &DenoiserConfig) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let block = |cin: usize, cout: usize| {
            conv(cin, cout, 3)
                + conv(cout, cout, 3)
                + cfg.time_embed_dim * cout
                + cout
                + if cin != cout { conv(cin, cout, 1) } else { 0 }
        };
        let w = |l: usize| cfg.base_width << l;
        let mut total = conv(cfg.target_channels + cfg.cond_channels, w(0), 3);
        for l in 0..cfg.levels {
            let cin = if l == 0 { w(0) } else { w(l - 1) };
            total += block(cin, w(l)) + block(w(l), w(l));
        }
        for l in (0..cfg.levels - 1).rev() {
            total += block(w(l + 1) + w(l), w(l)) + block(w(l), w(l));
        }
        total + conv(w(0), cfg.target_channels, 3)
    }

    #[test]
    fn param_count_matches_formula_for_three_configs() {
        let configs = [
            tiny_config(),
            DenoiserConfig::default(),
            DenoiserConfig {
                target_channels: 1,
                cond_channels: 2,
                base_width: 12,
                levels: 2,
                time_embed_dim: 32,
                image_size: 32,
            },
        ];
        for cfg in configs {
            let net = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(11)).unwrap();
            assert_eq!(
                net.param_count(),
                expected_param_count(&cfg),
                "config {cfg:?}"
            );
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = DenoiserNet::<f32>::init(tiny_config(), &mut RandomSource::new(13)).unwrap();
        let mut rs = RandomSource::new(14);
        let x: Tensor<f32> = rs.gaussian(&[2, 1, 16, 16]);
        let c: Tensor<f32> = rs.gaussian(&[2, 1, 16, 16]);
        let y1 = net.forward(&x, &c, 250).unwrap();
        let y2 = net.forward(&x, &c, 250).unwrap();
        assert_eq!(y1.to_bytes(), y2.to_bytes());
    }

    #[test]
    fn end_to_end_gradcheck_on_sampled_parameters() {
        // central finite differences over ~1% of parameters of a tiny f64 net
        let cfg = tiny_config();
        let net = DenoiserNet::<f64>::init(cfg, &mut RandomSource::new(17)).unwrap();
        let mut rs = RandomSource::new(18);
        let x: Tensor<f64> = rs.gaussian(&[1, 1, 16, 16]);
        let c: Tensor<f64> = rs.gaussian(&[1, 1, 16, 16]);
        let eps: Tensor<f64> = rs.gaussian(&[1, 1, 16, 16]);
        let indices = [600usize];

        let loss_of = |net: &DenoiserNet<f64>| -> f64 {
            let mut g = Graph::new();
            let (out, _) = net.forward_graph(&mut g, &x, &c, &indices, false).unwrap();
            let t = g.leaf(eps.clone(), false);
            let l = g.mse_loss(out, t).unwrap();
            g.value(l).data()[0]
        };

        let mut g = Graph::new();
        let (out, param_ids) = net.forward_graph(&mut g, &x, &c, &indices, true).unwrap();
        let t = g.leaf(eps.clone(), false);
        let loss = g.mse_loss(out, t).unwrap();
        g.backward(loss).unwrap();

        let total = net.param_count();
        let sample_n = (total / 100).max(20);
        let mut picks = RandomSource::new(19);
        let h = 1e-5;
        let mut checked = 0;
        while checked < sample_n {
            let p_idx = picks.uniform_usize(net.params().len());
            let e_idx = picks.uniform_usize(net.params()[p_idx].numel());
            let analytic = g.grad(param_ids[p_idx]).unwrap().data()[e_idx];

            let mut plus = net.clone();
            plus.params_mut()[p_idx].data_mut()[e_idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[p_idx].data_mut()[e_idx] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);

            let denom = analytic.abs().max(numeric.abs()).max(0.01);
            assert!(
                (analytic - numeric).abs() <= 1e-3 * denom,
                "param {p_idx} elem {e_idx}: analytic {analytic}, numeric {numeric}"
            );
            checked += 1;
        }
    }
}
