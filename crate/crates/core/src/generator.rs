//! The single-encoder multiple-decoder network.
//!
//! The encoder is a stack of stride-2 3×3 convolutions followed by linear
//! layers ending at the latent vector. Each decoder maps the latent through
//! linear layers, reshapes to a small grid, upsamples with stride-2
//! transposed convolutions and finishes with a 1×1 head producing four
//! channels per owned view. Hidden layers are conv/linear → batch norm →
//! ReLU; the latent and the head have neither.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{self, ops, ArrayBundle, RunningStats, Tensor};
use crate::camera::DEFAULT_CAMERA_RADIUS;
use crate::coord_image::{CoordImage, CH_DEPTH, COORD_CHANNELS};
use crate::error::{Error, Result};

/// Number of fixed viewpoints the network predicts.
pub const NUM_VIEWS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_decoders: usize,
    pub input_size: usize,
    pub latent_dim: usize,
    pub encoder_conv_filters: Vec<usize>,
    pub encoder_linear_dims: Vec<usize>,
    pub decoder_linear_dims: Vec<usize>,
    pub decoder_deconv_filters: Vec<usize>,
    pub output_size: usize,
}

impl GeneratorConfig {
    /// 64×64 input, 512-D latent, 128×128 outputs.
    pub fn table1_64(n_decoders: usize) -> Self {
        GeneratorConfig {
            n_decoders,
            input_size: 64,
            latent_dim: 512,
            encoder_conv_filters: vec![96, 128, 192, 256],
            encoder_linear_dims: vec![2048, 1024, 512],
            decoder_linear_dims: vec![1024, 2048, 4096],
            decoder_deconv_filters: vec![192, 128, 96, 64, 48],
            output_size: 128,
        }
    }

    /// 128×128 input, 1024-D latent, 128×128 outputs.
    pub fn table1_128(n_decoders: usize) -> Self {
        GeneratorConfig {
            n_decoders,
            input_size: 128,
            latent_dim: 1024,
            encoder_conv_filters: vec![128, 192, 256, 384, 512],
            encoder_linear_dims: vec![4096, 2048, 1024],
            decoder_linear_dims: vec![2048, 4096, 12800],
            decoder_deconv_filters: vec![384, 256, 192, 128, 96],
            output_size: 128,
        }
    }

    /// The 64×64 layout with every width divided by 8, 32×32 input and
    /// 64×64 outputs. Small enough to train on a CPU.
    pub fn test_scale(n_decoders: usize) -> Self {
        GeneratorConfig {
            n_decoders,
            input_size: 32,
            latent_dim: 64,
            encoder_conv_filters: vec![12, 16, 24, 32],
            encoder_linear_dims: vec![256, 128, 64],
            decoder_linear_dims: vec![128, 256, 512],
            decoder_deconv_filters: vec![24, 16, 12, 8, 6],
            output_size: 64,
        }
    }

    pub fn preset(name: &str, n_decoders: usize) -> Result<Self> {
        match name {
            "table1-64" => Ok(Self::table1_64(n_decoders)),
            "table1-128" => Ok(Self::table1_128(n_decoders)),
            "test" => Ok(Self::test_scale(n_decoders)),
            other => Err(Error::UnknownStrategy {
                kind: "network preset",
                name: other.to_string(),
                known: "table1-64, table1-128, test".into(),
            }),
        }
    }

    pub fn views_per_decoder(&self) -> usize {
        NUM_VIEWS / self.n_decoders
    }

    /// Side of the square grid the decoder reshapes into.
    pub fn decoder_grid(&self) -> usize {
        self.output_size.checked_shr(self.decoder_deconv_filters.len() as u32).unwrap_or(0)
    }

    /// Channels of the reshaped decoder grid.
    pub fn decoder_grid_channels(&self) -> usize {
        let g = self.decoder_grid();
        self.decoder_linear_dims.last().copied().unwrap_or(0) / (g * g).max(1)
    }

    fn encoder_grid(&self) -> usize {
        self.input_size.checked_shr(self.encoder_conv_filters.len() as u32).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_decoders == 0 || !NUM_VIEWS.is_multiple_of(self.n_decoders) {
            return fail(format!("n_decoders must divide 8, got {}", self.n_decoders));
        }
        if self.encoder_conv_filters.is_empty() || self.encoder_linear_dims.is_empty() {
            return fail("encoder needs at least one conv and one linear layer".into());
        }
        if self.decoder_linear_dims.is_empty() || self.decoder_deconv_filters.is_empty() {
            return fail("decoder needs at least one linear and one deconv layer".into());
        }
        let convs = self.encoder_conv_filters.len();
        if convs >= 32 || self.input_size == 0 || !self.input_size.is_multiple_of(1 << convs) {
            return fail(format!(
                "input size {} cannot be halved {convs} times exactly",
                self.input_size
            ));
        }
        if self.encoder_linear_dims.last() != Some(&self.latent_dim) {
            return fail(format!(
                "last encoder linear width {:?} must equal latent_dim {}",
                self.encoder_linear_dims.last(),
                self.latent_dim
            ));
        }
        let deconvs = self.decoder_deconv_filters.len();
        if deconvs >= 32 || self.output_size == 0 || !self.output_size.is_multiple_of(1 << deconvs) {
            return fail(format!(
                "output size {} is not the result of {deconvs} doublings",
                self.output_size
            ));
        }
        let g = self.decoder_grid();
        let last = *self.decoder_linear_dims.last().expect("checked non-empty");
        if !last.is_multiple_of(g * g) {
            return fail(format!(
                "last decoder linear width {last} does not reshape onto a {g}x{g} grid"
            ));
        }
        let zero = |v: &[usize]| v.contains(&0);
        if zero(&self.encoder_conv_filters)
            || zero(&self.encoder_linear_dims)
            || zero(&self.decoder_linear_dims)
            || zero(&self.decoder_deconv_filters)
        {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Decoder widths scaled by `factor` (rounded, minimum 1), keeping the
    /// reshape constraint. Used to compare decoder counts at a matched
    /// parameter budget.
    pub fn with_decoder_width_scale(&self, factor: f64) -> Self {
        let mut c = self.clone();
        let s = |w: usize| ((w as f64 * factor).round() as usize).max(1);
        let g2 = {
            let g = c.decoder_grid();
            g * g
        };
        let n = c.decoder_linear_dims.len();
        for (i, w) in c.decoder_linear_dims.iter_mut().enumerate() {
            *w = if i + 1 == n { s(*w / g2) * g2 } else { s(*w) };
        }
        for w in c.decoder_deconv_filters.iter_mut() {
            *w = s(*w);
        }
        c
    }

    /// Total trainable parameter count, saturating at `usize::MAX`.
    pub fn parameter_count(&self) -> usize {
        usize::try_from(self.parameter_count_wide()).unwrap_or(usize::MAX)
    }

    fn parameter_count_wide(&self) -> u128 {
        let w = |x: usize| x as u128;
        let mut n = 0;
        let mut ch = 3;
        for &f in &self.encoder_conv_filters {
            n += w(f) * ch * 9 + 3 * w(f);
            ch = w(f);
        }
        let g = w(self.encoder_grid());
        let mut width = ch * g * g;
        let last = self.encoder_linear_dims.len().saturating_sub(1);
        for (i, &d) in self.encoder_linear_dims.iter().enumerate() {
            n += w(d) * width + w(d) + if i < last { 2 * w(d) } else { 0 };
            width = w(d);
        }
        let mut dec = 0;
        let mut width = w(self.latent_dim);
        for &d in &self.decoder_linear_dims {
            dec += w(d) * width + 3 * w(d);
            width = w(d);
        }
        let mut ch = w(self.decoder_grid_channels());
        for &f in &self.decoder_deconv_filters {
            dec += ch * w(f) * 9 + 3 * w(f);
            ch = w(f);
        }
        let out = w(self.views_per_decoder() * COORD_CHANNELS);
        dec += out * ch + out;
        n + dec * w(self.n_decoders)
    }

    fn to_array(&self) -> Vec<f64> {
        let mut v = vec![
            self.n_decoders as f64,
            self.input_size as f64,
            self.latent_dim as f64,
            self.output_size as f64,
        ];
        for list in [
            &self.encoder_conv_filters,
            &self.encoder_linear_dims,
            &self.decoder_linear_dims,
            &self.decoder_deconv_filters,
        ] {
            v.push(list.len() as f64);
            v.extend(list.iter().map(|&x| x as f64));
        }
        v
    }

    fn from_array(v: &[f64]) -> Result<Self> {
        let bad = || Error::Corrupt("malformed network config array".into());
        let mut it = v.iter().map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < 1e9 {
                Ok(x as usize)
            } else {
                Err(bad())
            }
        });
        let mut next = || it.next().ok_or_else(bad)?;
        let (n_decoders, input_size, latent_dim, output_size) = (next()?, next()?, next()?, next()?);
        let mut list = || -> Result<Vec<usize>> {
            let len = next()?;
            (0..len).map(|_| next()).collect()
        };
        let cfg = GeneratorConfig {
            n_decoders,
            input_size,
            latent_dim,
            output_size,
            encoder_conv_filters: list()?,
            encoder_linear_dims: list()?,
            decoder_linear_dims: list()?,
            decoder_deconv_filters: list()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Forward-pass mode: batch statistics and running-stat updates in
/// training, running statistics in eval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
struct Norm {
    gamma: Tensor,
    beta: Tensor,
    stats: Mutex<RunningStats>,
}

impl Norm {
    fn new(channels: usize) -> Self {
        Norm {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("shape"),
            beta: Tensor::param(&[channels], vec![0.0; channels]).expect("shape"),
            stats: Mutex::new(RunningStats::new(channels)),
        }
    }

    fn apply(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut stats = self.stats.lock().expect("running stats lock poisoned");
        autodiff::batchnorm(x, &self.gamma, &self.beta, &mut stats, mode == Mode::Train)
    }
}

#[derive(Debug)]
struct Layer {
    weight: Tensor,
    bias: Tensor,
    norm: Option<Norm>,
}

impl Layer {
    fn new(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, out: usize, norm: bool) -> Self {
        let n = shape.iter().product();
        Layer {
            weight: Tensor::param(shape, autodiff::kaiming_normal(rng, n, fan_in)).expect("shape"),
            bias: Tensor::param(&[out], vec![0.0; out]).expect("shape"),
            norm: norm.then(|| Norm::new(out)),
        }
    }

    fn finish(&self, y: Tensor, mode: Mode) -> Result<Tensor> {
        match &self.norm {
            Some(n) => Ok(ops::relu(&n.apply(&y, mode)?)),
            None => Ok(y),
        }
    }

    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
        if let Some(n) = &self.norm {
            out.push((format!("{prefix}.bn.gamma"), n.gamma.clone()));
            out.push((format!("{prefix}.bn.beta"), n.beta.clone()));
        }
    }

    fn stats<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mutex<RunningStats>)>) {
        if let Some(n) = &self.norm {
            out.push((format!("{prefix}.bn"), &n.stats));
        }
    }
}

#[derive(Debug)]
struct Encoder {
    convs: Vec<Layer>,
    linears: Vec<Layer>,
}

#[derive(Debug)]
struct Decoder {
    linears: Vec<Layer>,
    deconvs: Vec<Layer>,
    head: Layer,
}

/// Encoder parameters plus `n_decoders` disjoint decoder parameter sets.
#[derive(Debug)]
pub struct SemdNetwork {
    config: GeneratorConfig,
    encoder: Encoder,
    decoders: Vec<Decoder>,
}

fn encoder_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn decoder_rng(seed: u64, branch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(branch as u64));
    rng.set_stream(1);
    rng
}

fn build_encoder(config: &GeneratorConfig, seed: u64) -> Encoder {
    let mut rng = encoder_rng(seed);
    let mut convs = Vec::new();
    let mut ch = 3;
    for &f in &config.encoder_conv_filters {
        convs.push(Layer::new(&mut rng, &[f, ch, 3, 3], ch * 9, f, true));
        ch = f;
    }
    let g = config.encoder_grid();
    let mut width = ch * g * g;
    let mut linears = Vec::new();
    let last = config.encoder_linear_dims.len() - 1;
    for (i, &d) in config.encoder_linear_dims.iter().enumerate() {
        linears.push(Layer::new(&mut rng, &[d, width], width, d, i < last));
        width = d;
    }
    Encoder { convs, linears }
}

fn build_decoder(config: &GeneratorConfig, seed: u64, branch: usize) -> Decoder {
    let out_ch = config.views_per_decoder() * COORD_CHANNELS;
    let mut rng = decoder_rng(seed, branch);
    let mut width = config.latent_dim;
    let linears = config
        .decoder_linear_dims
        .iter()
        .map(|&d| {
            let l = Layer::new(&mut rng, &[d, width], width, d, true);
            width = d;
            l
        })
        .collect();
    let mut ch = config.decoder_grid_channels();
    let deconvs = config
        .decoder_deconv_filters
        .iter()
        .map(|&f| {
            // Each output pixel of a stride-2 3×3 transpose sees on average
            // 9/4 taps per input channel.
            let l = Layer::new(&mut rng, &[ch, f, 3, 3], (ch * 9 / 4).max(1), f, true);
            ch = f;
            l
        })
        .collect();
    let head = Layer::new(&mut rng, &[out_ch, ch, 1, 1], ch, out_ch, false);
    {
        // Depth channels start at the camera distance.
        let mut b = head.bias.data_mut();
        for v in 0..config.views_per_decoder() {
            b[v * COORD_CHANNELS + CH_DEPTH] = DEFAULT_CAMERA_RADIUS;
        }
    }
    Decoder {
        linears,
        deconvs,
        head,
    }
}

/// Builds a network with deterministic fan-in scaled initialization.
pub fn init_network(config: &GeneratorConfig, seed: u64) -> Result<SemdNetwork> {
    config.validate()?;
    Ok(SemdNetwork {
        config: config.clone(),
        encoder: build_encoder(config, seed),
        decoders: (0..config.n_decoders).map(|j| build_decoder(config, seed, j)).collect(),
    })
}

/// Eval-mode forward pass of the network `init_network(config, seed)`
/// holding the encoder and a single decoder in memory at a time, for
/// configurations too large to materialize whole.
pub fn forward_sharded(config: &GeneratorConfig, seed: u64, image: &Tensor) -> Result<Vec<Vec<CoordImage>>> {
    config.validate()?;
    let mut net = SemdNetwork {
        config: config.clone(),
        encoder: build_encoder(config, seed),
        decoders: Vec::new(),
    };
    let b = image.shape().first().copied().unwrap_or(0);
    let latent = autodiff::no_grad(|| net.encode(image, Mode::Eval))?;
    net.encoder = Encoder {
        convs: Vec::new(),
        linears: Vec::new(),
    };
    let mut out = vec![Vec::with_capacity(NUM_VIEWS); b];
    for j in 0..config.n_decoders {
        let dec = build_decoder(config, seed, j);
        let t = autodiff::no_grad(|| run_decoder(config, &dec, &latent, Mode::Eval))?;
        drop(dec);
        for (bi, views) in split_branch_output(&t, j * config.views_per_decoder()).into_iter().enumerate() {
            out[bi].extend(views);
        }
    }
    Ok(out)
}

fn run_decoder(config: &GeneratorConfig, dec: &Decoder, latent: &Tensor, mode: Mode) -> Result<Tensor> {
    let b = latent.shape()[0];
    if latent.shape() != [b, config.latent_dim] {
        return Err(Error::Dimension(format!(
            "decoder expects [B,{}], got {:?}",
            config.latent_dim,
            latent.shape()
        )));
    }
    let mut x = latent.clone();
    for layer in &dec.linears {
        x = layer.finish(autodiff::linear(&x, &layer.weight, &layer.bias)?, mode)?;
    }
    let g = config.decoder_grid();
    x = ops::reshape(&x, &[b, config.decoder_grid_channels(), g, g])?;
    for layer in &dec.deconvs {
        x = layer.finish(autodiff::deconv2d(&x, &layer.weight, &layer.bias)?, mode)?;
    }
    let y = autodiff::conv2d(&x, &dec.head.weight, &dec.head.bias, 1)?;
    ops::sigmoid_every(&y, COORD_CHANNELS)
}

impl SemdNetwork {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// `[B, 3, S, S]` image batch to `[B, latent_dim]`.
    pub fn encode(&self, image: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.config.input_size;
        match *image.shape() {
            [_, 3, h, w] if h == s && w == s => {}
            _ => {
                return Err(Error::Dimension(format!(
                    "encoder expects [B,3,{s},{s}], got {:?}",
                    image.shape()
                )))
            }
        }
        let b = image.shape()[0];
        let mut x = image.clone();
        for layer in &self.encoder.convs {
            x = layer.finish(autodiff::conv2d(&x, &layer.weight, &layer.bias, 2)?, mode)?;
        }
        let flat = x.numel() / b;
        x = ops::reshape(&x, &[b, flat])?;
        for layer in &self.encoder.linears {
            x = layer.finish(autodiff::linear(&x, &layer.weight, &layer.bias)?, mode)?;
        }
        Ok(x)
    }

    /// Raw output of one decoder: `[B, 4·(8/N), H, W]` with the mask
    /// channels already passed through a sigmoid.
    pub fn decode_branch_tensor(&self, latent: &Tensor, branch: usize, mode: Mode) -> Result<Tensor> {
        let dec = self.decoders.get(branch).ok_or(Error::Index {
            index: branch,
            len: self.decoders.len(),
        })?;
        run_decoder(&self.config, dec, latent, mode)
    }

    /// Global view indices owned by `branch`.
    pub fn branch_views(&self, branch: usize) -> std::ops::Range<usize> {
        let k = self.config.views_per_decoder();
        branch * k..(branch + 1) * k
    }

    /// Coordinate images of one decoder, outer index batch, inner index the
    /// branch's views in ascending `view_index`.
    pub fn decode_branch(&self, latent: &Tensor, branch: usize, mode: Mode) -> Result<Vec<Vec<CoordImage>>> {
        let t = self.decode_branch_tensor(latent, branch, mode)?;
        Ok(split_branch_output(&t, self.branch_views(branch).start))
    }

    /// Encodes once and runs every decoder on the shared latent. Returns the
    /// branch tensors in branch order.
    pub fn forward_tensors(&self, image: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let latent = self.encode(image, mode)?;
        (0..self.config.n_decoders)
            .map(|j| self.decode_branch_tensor(&latent, j, mode))
            .collect()
    }

    /// All eight coordinate images per batch element, sorted by view index.
    pub fn forward(&self, image: &Tensor, mode: Mode) -> Result<Vec<Vec<CoordImage>>> {
        let b = image.shape().first().copied().unwrap_or(0);
        let mut out = vec![Vec::with_capacity(NUM_VIEWS); b];
        for (j, t) in self.forward_tensors(image, mode)?.iter().enumerate() {
            for (bi, views) in split_branch_output(t, self.branch_views(j).start)
                .into_iter()
                .enumerate()
            {
                out[bi].extend(views);
            }
        }
        Ok(out)
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.convs.iter().enumerate() {
            l.tensors(&format!("encoder.conv{i}"), &mut out);
        }
        for (i, l) in self.encoder.linears.iter().enumerate() {
            l.tensors(&format!("encoder.fc{i}"), &mut out);
        }
        for j in 0..self.decoders.len() {
            out.extend(self.named_decoder_parameters(j));
        }
        out
    }

    fn named_decoder_parameters(&self, j: usize) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let d = &self.decoders[j];
        for (i, l) in d.linears.iter().enumerate() {
            l.tensors(&format!("decoder.{j}.fc{i}"), &mut out);
        }
        for (i, l) in d.deconvs.iter().enumerate() {
            l.tensors(&format!("decoder.{j}.deconv{i}"), &mut out);
        }
        d.head.tensors(&format!("decoder.{j}.head"), &mut out);
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn encoder_parameters(&self) -> Vec<Tensor> {
        self.named_parameters()
            .into_iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .map(|(_, t)| t)
            .collect()
    }

    pub fn decoder_parameters(&self, branch: usize) -> Vec<Tensor> {
        self.named_decoder_parameters(branch)
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }

    fn named_stats(&self) -> Vec<(String, &Mutex<RunningStats>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.convs.iter().enumerate() {
            l.stats(&format!("encoder.conv{i}"), &mut out);
        }
        for (i, l) in self.encoder.linears.iter().enumerate() {
            l.stats(&format!("encoder.fc{i}"), &mut out);
        }
        for (j, d) in self.decoders.iter().enumerate() {
            for (i, l) in d.linears.iter().enumerate() {
                l.stats(&format!("decoder.{j}.fc{i}"), &mut out);
            }
            for (i, l) in d.deconvs.iter().enumerate() {
                l.stats(&format!("decoder.{j}.deconv{i}"), &mut out);
            }
        }
        out
    }

    /// Parameters, running statistics and the config as named arrays.
    pub fn to_bundle(&self) -> ArrayBundle {
        let mut b = ArrayBundle::new();
        let cfg = self.config.to_array();
        b.push("config", vec![cfg.len()], cfg).expect("consistent dims");
        for (name, t) in self.named_parameters() {
            b.push(name, t.shape().to_vec(), t.to_vec()).expect("consistent dims");
        }
        for (name, st) in self.named_stats() {
            let st = st.lock().expect("running stats lock poisoned");
            let c = st.mean.len();
            b.push(format!("{name}.running_mean"), vec![c], st.mean.clone())
                .expect("consistent dims");
            b.push(format!("{name}.running_var"), vec![c], st.var.clone())
                .expect("consistent dims");
        }
        b
    }

    pub fn from_bundle(bundle: &ArrayBundle) -> Result<Self> {
        let config = GeneratorConfig::from_array(&bundle.get("config")?.data)?;
        // Refuse to allocate a network larger than the data on hand.
        let stored: u128 = bundle.arrays.iter().map(|a| a.data.len() as u128).sum();
        if config.parameter_count_wide() > stored {
            return Err(Error::Corrupt(format!(
                "config describes {} parameters but the file holds {stored} values",
                config.parameter_count_wide()
            )));
        }
        let net = init_network(&config, 0)?;
        for (name, t) in net.named_parameters() {
            let a = bundle.get(&name)?;
            if a.dims != t.shape() {
                return Err(Error::Corrupt(format!(
                    "array '{name}' has dims {:?}, network expects {:?}",
                    a.dims,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&a.data);
        }
        for (name, st) in net.named_stats() {
            let mut guard = st.lock().expect("running stats lock poisoned");
            let st = &mut *guard;
            for (suffix, dst) in [("running_mean", &mut st.mean), ("running_var", &mut st.var)] {
                let a = bundle.get(&format!("{name}.{suffix}"))?;
                if a.data.len() != dst.len() {
                    return Err(Error::Corrupt(format!("array '{name}.{suffix}' has wrong length")));
                }
                dst.copy_from_slice(&a.data);
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bundle(&ArrayBundle::load(path)?)
    }
}

/// Splits a `[B, 4k, H, W]` branch tensor into per-sample coordinate images.
pub fn split_branch_output(t: &Tensor, first_view: usize) -> Vec<Vec<CoordImage>> {
    let &[b, ch, h, w] = t.shape() else {
        panic!("branch output must be 4-D");
    };
    debug_assert_eq!(h, w);
    let k = ch / COORD_CHANNELS;
    let block = COORD_CHANNELS * h * w;
    let data = t.data();
    (0..b)
        .map(|bi| {
            (0..k)
                .map(|v| {
                    let off = (bi * ch + v * COORD_CHANNELS) * h * w;
                    CoordImage {
                        size: h,
                        view_index: first_view + v,
                        grid: data[off..off + block].to_vec(),
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_decoders: n,
            input_size: 8,
            latent_dim: 6,
            encoder_conv_filters: vec![4, 4],
            encoder_linear_dims: vec![10, 6],
            decoder_linear_dims: vec![12, 16],
            decoder_deconv_filters: vec![4, 3],
            output_size: 8,
        }
    }

    #[test]
    fn rejects_non_divisor_decoder_count() {
        assert!(matches!(init_network(&tiny(3), 0), Err(Error::Config(_))));
        assert!(matches!(init_network(&tiny(0), 0), Err(Error::Config(_))));
    }

    #[test]
    fn presets_validate() {
        for n in [1, 2, 4, 8] {
            GeneratorConfig::table1_64(n).validate().unwrap();
            GeneratorConfig::table1_128(n).validate().unwrap();
            GeneratorConfig::test_scale(n).validate().unwrap();
        }
        assert_eq!(GeneratorConfig::table1_64(1).decoder_grid(), 4);
        assert_eq!(GeneratorConfig::test_scale(1).decoder_grid(), 2);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = init_network(&tiny(2), 7).unwrap();
        let b = init_network(&tiny(2), 7).unwrap();
        let c = init_network(&tiny(2), 8).unwrap();
        assert!(a.to_bundle().bit_eq(&b.to_bundle()));
        assert!(!a.to_bundle().bit_eq(&c.to_bundle()));
    }

    #[test]
    fn decoders_do_not_share_parameters() {
        let net = init_network(&tiny(2), 1).unwrap();
        let w0 = net.decoder_parameters(0)[0].to_vec();
        let w1 = net.decoder_parameters(1)[0].to_vec();
        assert_ne!(w0, w1);
    }

    #[test]
    fn wrong_input_size_is_dimension_error() {
        let net = init_network(&tiny(1), 0).unwrap();
        let img = Tensor::zeros(&[2, 3, 16, 16]);
        assert!(matches!(net.encode(&img, Mode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn branch_out_of_range() {
        let net = init_network(&tiny(2), 0).unwrap();
        let latent = Tensor::zeros(&[1, 6]);
        assert!(matches!(
            net.decode_branch(&latent, 2, Mode::Eval),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn views_partition_for_every_decoder_count() {
        for n in [1, 2, 4, 8] {
            let net = init_network(&tiny(n), 3).unwrap();
            let img = Tensor::full(&[2, 3, 8, 8], 0.3);
            let out = net.forward(&img, Mode::Eval).unwrap();
            assert_eq!(out.len(), 2);
            for views in &out {
                let idx: Vec<usize> = views.iter().map(|v| v.view_index).collect();
                assert_eq!(idx, (0..8).collect::<Vec<_>>());
                assert!(views.iter().all(|v| v.size == 8));
            }
            let latent = net.encode(&img, Mode::Eval).unwrap();
            assert_eq!(net.decode_branch(&latent, 0, Mode::Eval).unwrap()[0].len(), 8 / n);
        }
    }

    #[test]
    fn bundle_roundtrip_restores_network() {
        let net = init_network(&tiny(4), 5).unwrap();
        let img = Tensor::full(&[2, 3, 8, 8], 0.1);
        net.forward(&img, Mode::Train).unwrap(); // moves running stats
        let back = SemdNetwork::from_bundle(&net.to_bundle()).unwrap();
        assert!(back.to_bundle().bit_eq(&net.to_bundle()));
        assert_eq!(
            back.forward(&img, Mode::Eval).unwrap(),
            net.forward(&img, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn parameter_count_matches_tensors() {
        for n in [1, 8] {
            let cfg = tiny(n);
            let net = init_network(&cfg, 0).unwrap();
            let actual: usize = net.parameters().iter().map(Tensor::numel).sum();
            assert_eq!(cfg.parameter_count(), actual);
        }
    }

    #[test]
    fn sharded_forward_matches_whole_network() {
        let img = Tensor::full(&[2, 3, 8, 8], 0.2);
        for n in [1, 4] {
            let whole = init_network(&tiny(n), 9).unwrap().forward(&img, Mode::Eval).unwrap();
            assert_eq!(forward_sharded(&tiny(n), 9, &img).unwrap(), whole);
        }
    }
}
