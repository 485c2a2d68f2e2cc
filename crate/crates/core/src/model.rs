//! The truncated-latent autoencoder, its training loop, and gradient checks.
//!
//! Training uses plain mini-batch gradient descent. The truncation between
//! encoder and decoder is non-differentiable at the spiking threshold, so the
//! backward pass uses a straight-through surrogate: identity slope on
//! `[a - ste_band, b]`, zero outside.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::{Activation, DenseNet, NetGradient};
use crate::spectrum::{truncate, SpectrumParams, Spectrum, SpikingPattern};

/// Decoder view used by certification: maps a spectrum to a data-space point.
///
/// Implementations may assume the spectrum width matches their input width
/// and panic otherwise.
pub trait Decoder {
    fn decode(&self, z: &Spectrum) -> Vec<f64>;
    fn output_dim(&self) -> usize;
}

/// Full encode/decode view used by the analysis passes.
pub trait Codec: Decoder {
    fn spectrum_params(&self) -> &SpectrumParams;
    fn encode(&self, x: &[f64]) -> Result<Spectrum>;
}

impl Decoder for DenseNet {
    fn decode(&self, z: &Spectrum) -> Vec<f64> {
        self.forward(z.values()).expect("spectrum width matches decoder input")
    }

    fn output_dim(&self) -> usize {
        DenseNet::output_dim(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sparsity_weight: f64,
    pub pattern_penalty_weight: f64,
    /// Width of the surrogate-gradient band below the spiking threshold.
    pub ste_band: f64,
}

impl TrainConfig {
    pub fn validate(&self, params: &SpectrumParams) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be >= 1".into()));
        }
        if self.sparsity_weight < 0.0 || self.pattern_penalty_weight < 0.0 {
            return Err(Error::InvalidParams("penalty weights must be >= 0".into()));
        }
        if !(0.0 <= self.ste_band && self.ste_band < params.a) {
            return Err(Error::InvalidParams(format!(
                "ste_band must lie in [0, a), got {} with a = {}",
                self.ste_band, params.a
            )));
        }
        Ok(())
    }
}

/// Encoder/decoder pair around the truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumVae {
    params: SpectrumParams,
    encoder: DenseNet,
    decoder: DenseNet,
}

impl SpectrumVae {
    pub fn new(params: SpectrumParams, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        if encoder.output_dim() != params.k {
            return Err(Error::InvalidParams(format!(
                "encoder output width {} != K = {}",
                encoder.output_dim(),
                params.k
            )));
        }
        if decoder.input_dim() != params.k {
            return Err(Error::InvalidParams(format!(
                "decoder input width {} != K = {}",
                decoder.input_dim(),
                params.k
            )));
        }
        Ok(Self {
            params,
            encoder,
            decoder,
        })
    }

    /// Seeded construction with symmetric uniform initialization.
    pub fn seeded(
        params: SpectrumParams,
        input_dim: usize,
        encoder_hidden: &[usize],
        decoder_hidden: &[usize],
        hidden_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if !hidden_activation.is_smooth() {
            return Err(Error::InvalidParams(
                "hidden activation must be a smooth nonlinearity".into(),
            ));
        }
        let mut enc_sizes = vec![input_dim];
        enc_sizes.extend_from_slice(encoder_hidden);
        enc_sizes.push(params.k);
        let mut dec_sizes = vec![params.k];
        dec_sizes.extend_from_slice(decoder_hidden);
        dec_sizes.push(input_dim);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder =
            DenseNet::seeded(&enc_sizes, hidden_activation, Activation::Identity, &mut rng)?;
        let decoder =
            DenseNet::seeded(&dec_sizes, hidden_activation, Activation::Identity, &mut rng)?;
        Self::new(params, encoder, decoder)
    }

    pub fn params(&self) -> &SpectrumParams {
        &self.params
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Encoder output before truncation.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(x)
    }

    /// Reconstruction `decode(encode(x))`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.encode(x)?;
        self.decoder.forward(z.values())
    }

    /// Squared reconstruction error of a single sample.
    fn squared_loss(&self, x: &[f64]) -> Result<f64> {
        let rec = self.reconstruct(x)?;
        Ok(x.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }
}

impl Decoder for SpectrumVae {
    fn decode(&self, z: &Spectrum) -> Vec<f64> {
        self.decoder.forward(z.values()).expect("spectrum width matches K")
    }

    fn output_dim(&self) -> usize {
        self.decoder.output_dim()
    }
}

impl Codec for SpectrumVae {
    fn spectrum_params(&self) -> &SpectrumParams {
        &self.params
    }

    fn encode(&self, x: &[f64]) -> Result<Spectrum> {
        let pre = self.encoder.forward(x)?;
        truncate(&pre, &self.params)
    }
}

/// Euclidean distance between a sample and its reconstruction.
pub fn reconstruction_error(x: &[f64], x_tilde: &[f64]) -> Result<f64> {
    if x.len() != x_tilde.len() {
        return Err(Error::ShapeMismatch {
            expected: x.len(),
            got: x_tilde.len(),
        });
    }
    Ok(x.iter()
        .zip(x_tilde)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// How the backward pass treats the truncation.
#[derive(Clone, Copy, Debug)]
enum TruncationGrad {
    /// Identity slope on `[a - band, b]`, zero outside. Used in training.
    StraightThrough { band: f64 },
    /// The true local derivative away from the jumps: identity on `[a, b]`,
    /// zero outside. Used by the gradient check.
    Exact,
}

impl TruncationGrad {
    #[inline]
    fn mask(self, v: f64, p: &SpectrumParams) -> f64 {
        let lo = match self {
            TruncationGrad::StraightThrough { band } => p.a - band,
            TruncationGrad::Exact => p.a,
        };
        if lo <= v && v <= p.b {
            1.0
        } else {
            0.0
        }
    }
}

struct SampleGrads {
    encoder: NetGradient,
    decoder: NetGradient,
    squared_error: f64,
    sparsity: f64,
    pattern: SpikingPattern,
}

/// Backward pass for one sample through decoder, truncation, and encoder.
fn sample_gradients(
    model: &SpectrumVae,
    x: &[f64],
    mode: TruncationGrad,
    sparsity_weight: f64,
) -> Result<SampleGrads> {
    let p = &model.params;
    let enc_trace = model.encoder.forward_trace(x)?;
    let z_pre = &enc_trace.output;
    let z = truncate(z_pre, p)?;
    let dec_trace = model.decoder.forward_trace(z.values())?;
    let recon = &dec_trace.output;

    let squared_error: f64 = x
        .iter()
        .zip(recon)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let out_grad: Vec<f64> = recon.iter().zip(x).map(|(r, t)| 2.0 * (r - t)).collect();
    let dec_grad = model.decoder.backward(&dec_trace, &out_grad);

    let k = p.k as f64;
    // sub-threshold magnitude: positive pre-activations that failed to spike
    let sparsity: f64 = z_pre
        .iter()
        .map(|&v| if 0.0 < v && v < p.a { v } else { 0.0 })
        .sum::<f64>()
        / k;
    let pre_grad: Vec<f64> = dec_grad
        .input
        .iter()
        .zip(z_pre)
        .map(|(g, &v)| {
            let mut gv = g * mode.mask(v, p);
            if sparsity_weight > 0.0 && 0.0 < v && v < p.a {
                gv += sparsity_weight / k;
            }
            gv
        })
        .collect();
    let enc_grad = model.encoder.backward(&enc_trace, &pre_grad);

    Ok(SampleGrads {
        encoder: enc_grad,
        decoder: dec_grad,
        squared_error,
        sparsity,
        pattern: z.pattern(),
    })
}

/// Entropy (bits) of the empirical pattern distribution in a batch. This term
/// is piecewise constant in the parameters, so it enters the reported loss
/// but carries no gradient.
fn pattern_entropy(patterns: &[SpikingPattern]) -> f64 {
    let mut counts: BTreeMap<&SpikingPattern, usize> = BTreeMap::new();
    for p in patterns {
        *counts.entry(p).or_default() += 1;
    }
    let n = patterns.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let q = c as f64 / n;
            q * q.log2()
        })
        .sum::<f64>()
}

/// Mini-batch gradient descent. Deterministic given `cfg.seed`; zero epochs
/// returns the model bit-identical.
pub fn train(model: &SpectrumVae, data: &[Vec<f64>], cfg: &TrainConfig) -> Result<SpectrumVae> {
    cfg.validate(&model.params)?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != model.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: model.input_dim(),
                got: x.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: bad,
            });
        }
    }

    let mut trained = model.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let probe_len = data.len().min(32);
    let mode = TruncationGrad::StraightThrough { band: cfg.ste_band };

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut enc_acc = NetGradient::zeros_like(&trained.encoder);
            let mut dec_acc = NetGradient::zeros_like(&trained.decoder);
            let mut recon_sum = 0.0;
            let mut sparsity_sum = 0.0;
            let mut patterns = Vec::with_capacity(batch.len());
            for &i in batch {
                let g = sample_gradients(&trained, &data[i], mode, cfg.sparsity_weight)?;
                enc_acc.add_assign(&g.encoder);
                dec_acc.add_assign(&g.decoder);
                recon_sum += g.squared_error;
                sparsity_sum += g.sparsity;
                patterns.push(g.pattern);
            }
            let inv = 1.0 / batch.len() as f64;
            enc_acc.scale(inv);
            dec_acc.scale(inv);
            let loss = recon_sum * inv
                + cfg.sparsity_weight * sparsity_sum * inv
                + cfg.pattern_penalty_weight * pattern_entropy(&patterns);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            trained.encoder.apply_gradient(&enc_acc, cfg.learning_rate);
            trained.decoder.apply_gradient(&dec_acc, cfg.learning_rate);
            if !trained.encoder.params_finite() || !trained.decoder.params_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                });
            }
        }
        // spectrum invariants re-checked on a fixed probe batch
        for x in &data[..probe_len] {
            let z = trained.encode(x)?;
            Spectrum::new(z.values().to_vec(), &trained.params)?;
        }
    }
    Ok(trained)
}

/// Compares analytic gradients of the squared reconstruction error against
/// central finite differences over every parameter; returns the maximum
/// relative deviation.
///
/// The probe must keep every encoder pre-activation at least `10 * h` away
/// from both truncation breakpoints, otherwise it is rejected.
pub fn gradient_check(model: &SpectrumVae, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParams(format!("h must be positive, got {h}")));
    }
    let p = model.params;
    let z_pre = model.pre_activation(x)?;
    for (i, &v) in z_pre.iter().enumerate() {
        if (v - p.a).abs() <= 10.0 * h || (v - p.b).abs() <= 10.0 * h {
            return Err(Error::RejectedProbe(format!(
                "pre-activation {i} = {v} is within 10h of a truncation breakpoint"
            )));
        }
    }

    let grads = sample_gradients(model, x, TruncationGrad::Exact, 0.0)?;
    let mut analytic = DenseNet::flat_gradient(&grads.encoder);
    analytic.extend(DenseNet::flat_gradient(&grads.decoder));

    let enc_count = model.encoder.param_count();
    let total = model.param_count();
    let mut max_rel: f64 = 0.0;
    for i in 0..total {
        let mut plus = model.clone();
        let mut minus = model.clone();
        {
            let (net_p, net_m, j) = if i < enc_count {
                (&mut plus.encoder, &mut minus.encoder, i)
            } else {
                (&mut plus.decoder, &mut minus.decoder, i - enc_count)
            };
            *net_p.param_mut(j) += h;
            *net_m.param_mut(j) -= h;
        }
        let fd = (plus.squared_loss(x)? - minus.squared_loss(x)?) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::BoundedSupport;

    fn small_params() -> SpectrumParams {
        SpectrumParams::new(0.2, 1.0, 3).unwrap()
    }

    fn default_cfg(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            seed,
            epochs,
            batch_size: 8,
            learning_rate: 0.05,
            sparsity_weight: 0.1,
            pattern_penalty_weight: 0.1,
            ste_band: 0.1,
        }
    }

    #[test]
    fn config_validation() {
        let p = small_params();
        let mut cfg = default_cfg(0, 1);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate(&p).is_err());
        let mut cfg = default_cfg(0, 1);
        cfg.ste_band = 0.2; // must be < a
        assert!(cfg.validate(&p).is_err());
        assert!(default_cfg(0, 1).validate(&p).is_ok());
    }

    #[test]
    fn encode_forced_dormant_and_capped() {
        let p = small_params();
        // zero weights: pre-activation equals the bias
        let mut enc = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        let dec = DenseNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();

        enc.layers_mut()[0].bias.fill(p.a - 1e-6);
        let vae = SpectrumVae::new(p, enc.clone(), dec.clone()).unwrap();
        assert!(vae.encode(&[0.3, 0.4]).unwrap().is_dormant());

        enc.layers_mut()[0].bias.fill(p.b + 1.0);
        let vae = SpectrumVae::new(p, enc, dec).unwrap();
        assert_eq!(vae.encode(&[0.3, 0.4]).unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    /// Composes the hand-evaluated affine+tanh chain with the truncation
    /// branch oracle.
    #[test]
    fn encode_matches_hand_evaluated_chain_plus_truncation() {
        let p = small_params();
        let mut enc = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        // single layer: pre-activation = W x + b directly
        enc.layers_mut()[0]
            .weight
            .copy_from_slice(&[0.4, 0.3, -0.2, 0.5, 1.1, 0.9]);
        enc.layers_mut()[0].bias.copy_from_slice(&[0.0, 0.05, -0.1]);
        let dec = DenseNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let vae = SpectrumVae::new(p, enc, dec).unwrap();

        let x = [0.6, 0.4];
        let pre = [
            0.4 * 0.6 + 0.3 * 0.4,          // 0.36: inside [a, b]
            -0.2 * 0.6 + 0.5 * 0.4 + 0.05,  // 0.13: below a -> 0
            1.1 * 0.6 + 0.9 * 0.4 - 0.1,    // 0.92: inside [a, b]
        ];
        let expect: Vec<f64> = pre
            .iter()
            .map(|&v| {
                if p.a <= v && v <= p.b {
                    v
                } else if v > p.b {
                    p.b
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(vae.encode(&x).unwrap().values(), &expect[..]);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let p = small_params();
        let vae = SpectrumVae::seeded(p, 2, &[4], &[4], Activation::Tanh, 2).unwrap();
        let data: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64, -(i as f64)]).collect();
        let mut cfg = default_cfg(3, 50);
        cfg.learning_rate = 1e12;
        match train(&vae, &data, &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_error_cases() {
        assert_eq!(reconstruction_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(reconstruction_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn reconstruction_error_matches_summed_square_oracle() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..5 {
            acc += (x[i] - y[i]) * (x[i] - y[i]);
        }
        let got = reconstruction_error(&x, &y).unwrap();
        assert!((got - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_bit_identical() {
        let p = small_params();
        let vae = SpectrumVae::seeded(p, 2, &[4], &[4], Activation::Tanh, 9).unwrap();
        let data = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let out = train(&vae, &data, &default_cfg(1, 0)).unwrap();
        assert_eq!(out, vae);
    }

    #[test]
    fn training_is_deterministic() {
        let p = small_params();
        let vae = SpectrumVae::seeded(p, 2, &[4], &[4], Activation::Tanh, 9).unwrap();
        let data: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64) / 20.0, 1.0 - (i as f64) / 20.0])
            .collect();
        let a = train(&vae, &data, &default_cfg(5, 3)).unwrap();
        let b = train(&vae, &data, &default_cfg(5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_two_circle_error() {
        let params = SpectrumParams::new(0.2, 1.0, 8).unwrap();
        let vae = SpectrumVae::seeded(params, 2, &[16], &[16], Activation::Tanh, 42).unwrap();
        let support = BoundedSupport::two_disks([[2.0, 2.0], [5.0, 2.0]], 1.2).unwrap();
        let data = support.sample_n(300, 77).unwrap();

        let mean_err = |m: &SpectrumVae| -> f64 {
            data.iter()
                .map(|x| reconstruction_error(x, &m.reconstruct(x).unwrap()).unwrap())
                .sum::<f64>()
                / data.len() as f64
        };
        let before = mean_err(&vae);
        let mut cfg = default_cfg(1, 40);
        cfg.learning_rate = 0.02;
        let trained = train(&vae, &data, &cfg).unwrap();
        let after = mean_err(&trained);
        assert!(
            after < before,
            "mean error did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn gradient_check_linear_net_is_exact() {
        // identity activations make the whole map linear; central differences
        // are exact for the resulting quadratic loss
        let p = small_params();
        let mut enc = DenseNet::zeros(&[2, 3], Activation::Identity, Activation::Identity).unwrap();
        enc.layers_mut()[0]
            .weight
            .copy_from_slice(&[0.3, 0.1, 0.2, 0.15, 0.1, 0.25]);
        enc.layers_mut()[0].bias.copy_from_slice(&[0.3, 0.35, 0.3]);
        let mut dec = DenseNet::zeros(&[3, 2], Activation::Identity, Activation::Identity).unwrap();
        dec.layers_mut()[0]
            .weight
            .copy_from_slice(&[0.5, -0.2, 0.1, 0.3, 0.4, -0.1]);
        let vae = SpectrumVae::new(p, enc, dec).unwrap();
        let rel = gradient_check(&vae, &[0.5, 0.4], 1e-5).unwrap();
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn gradient_check_smooth_probe() {
        let p = small_params();
        let vae = SpectrumVae::seeded(p, 2, &[5], &[5], Activation::Tanh, 31).unwrap();
        // bias the encoder output into the interior of [a, b]
        let mut vae = vae;
        let n_layers = vae.encoder.layers().len();
        vae.encoder.layers_mut()[n_layers - 1].bias.fill(0.6);
        let rel = gradient_check(&vae, &[0.8, -0.3], 1e-5).unwrap();
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn gradient_check_rejects_probe_near_threshold() {
        let p = small_params();
        let mut enc = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        enc.layers_mut()[0].bias.fill(p.a); // exactly on the threshold
        let dec = DenseNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let vae = SpectrumVae::new(p, enc, dec).unwrap();
        assert!(matches!(
            gradient_check(&vae, &[0.0, 0.0], 1e-5),
            Err(Error::RejectedProbe(_))
        ));
    }
}
