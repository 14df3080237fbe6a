//! Small fully-connected variational autoencoder with hand-written backprop.
//!
//! Encoder: `tanh` hidden layers, then separate affine heads for `mu` and
//! `log sigma^2`. Decoder: `tanh` hidden layers (reversed widths), then a
//! sigmoid output layer. Loss is pixel-mean squared error plus
//! `kl_coeff` times the closed-form KL against a standard normal.
//!
//! All parameters live in one flat vector; each layer stores its weights
//! row-major (`n_out x n_in`) followed by its biases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::window::splitmix64;

pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss or parameters in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported parameter file version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before the rate is multiplied by
    /// `plateau_factor`.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_learning_rate: f64,
    /// Training ramps the KL weight linearly up to `kl_coeff` over this many
    /// epochs. Evaluation always uses the full weight.
    pub kl_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 32,
            width: 32,
            latent_dim: 16,
            hidden: vec![64],
            kl_coeff: 0.1,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 30,
            plateau_patience: 3,
            plateau_factor: 0.1,
            min_learning_rate: 1e-6,
            kl_warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: &str| Err(VaeError::InvalidConfig(m.into()));
        if self.pixels() == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("all dimensions must be >= 1");
        }
        if !(self.kl_coeff > 0.0) {
            return bad("kl_coeff must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning rate must be >= 0 and momentum in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Layer {
    fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> Vec<T> {
        let w = &p[self.offset..self.offset + self.n_out * self.n_in];
        let b = &p[self.offset + self.n_out * self.n_in..self.offset + self.len()];
        (0..self.n_out)
            .map(|o| {
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                row.iter()
                    .zip(x)
                    .fold(b[o], |acc, (&wi, &xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    fn backward<T: Scalar>(&self, p: &[T], x: &[T], dy: &[T], grad: &mut [T]) -> Vec<T> {
        let w = &p[self.offset..self.offset + self.n_out * self.n_in];
        let (gw, gb) =
            grad[self.offset..self.offset + self.len()].split_at_mut(self.n_out * self.n_in);
        let mut dx = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let d = dy[o];
            if d == T::zero() {
                continue;
            }
            gb[o] = gb[o] + d;
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut gw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] = grow[i] + d * x[i];
                dx[i] = dx[i] + d * row[i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elbo<T> {
    pub total: T,
    pub reconstruction: T,
    pub kl: T,
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_divergence<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    let half = T::of(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

struct Trace<T> {
    enc: Vec<Vec<T>>,
    mu: Vec<T>,
    logvar: Vec<T>,
    dec: Vec<Vec<T>>,
    out: Vec<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Network shape plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    config: VaeConfig,
    layers: Vec<Layer>,
    params: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    config: VaeConfig,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub learning_rate: f64,
}

fn keyed(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ tag))
}

impl<T: Scalar> Vae<T> {
    fn shape(config: &VaeConfig) -> Vec<Layer> {
        let mut dims = vec![];
        let mut prev = config.pixels();
        for &h in &config.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, config.latent_dim));
        dims.push((prev, config.latent_dim));
        prev = config.latent_dim;
        for &h in config.hidden.iter().rev() {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, config.pixels()));
        let mut offset = 0;
        dims.into_iter()
            .map(|(n_in, n_out)| {
                let l = Layer {
                    n_in,
                    n_out,
                    offset,
                };
                offset += l.len();
                l
            })
            .collect()
    }

    /// Xavier-uniform weights, zero biases, seeded from `config.seed`.
    pub fn new(config: VaeConfig) -> Result<Self, VaeError> {
        config.validate()?;
        let layers = Self::shape(&config);
        let total = layers.iter().map(Layer::len).sum();
        let mut params = vec![T::zero(); total];
        let mut rng = keyed(config.seed, 0x1417);
        for l in &layers {
            let bound = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut params[l.offset..l.offset + l.n_in * l.n_out] {
                *w = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn n_hidden(&self) -> usize {
        self.config.hidden.len()
    }

    fn check_image(&self, image: &[T]) -> Result<(), VaeError> {
        let expected = self.config.pixels();
        if image.len() != expected {
            return Err(VaeError::DimensionMismatch {
                expected,
                got: image.len(),
            });
        }
        if let Some((index, v)) = image
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(VaeError::PixelRange {
                index,
                value: v.as_f64(),
            });
        }
        Ok(())
    }

    fn encode_trace(&self, image: &[T]) -> (Vec<Vec<T>>, Vec<T>, Vec<T>) {
        let h = self.n_hidden();
        let mut enc = vec![image.to_vec()];
        for l in &self.layers[..h] {
            let a = l.forward(&self.params, enc.last().unwrap());
            enc.push(a.into_iter().map(T::tanh).collect());
        }
        let top = enc.last().unwrap();
        let mu = self.layers[h].forward(&self.params, top);
        let logvar = self.layers[h + 1].forward(&self.params, top);
        (enc, mu, logvar)
    }

    fn decode_trace(&self, z: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
        let h = self.n_hidden();
        let mut dec = vec![z.to_vec()];
        for l in &self.layers[h + 2..2 * h + 2] {
            let a = l.forward(&self.params, dec.last().unwrap());
            dec.push(a.into_iter().map(T::tanh).collect());
        }
        let out = self.layers[2 * h + 2]
            .forward(&self.params, dec.last().unwrap())
            .into_iter()
            .map(sigmoid)
            .collect();
        (dec, out)
    }

    /// Posterior `(mu, log sigma^2)`.
    pub fn encode(&self, image: &[T]) -> Result<(Vec<T>, Vec<T>), VaeError> {
        self.check_image(image)?;
        let (_, mu, logvar) = self.encode_trace(image);
        Ok((mu, logvar))
    }

    /// Latent used for monitoring: the posterior mean.
    pub fn latent(&self, image: &[T]) -> Result<Vec<T>, VaeError> {
        Ok(self.encode(image)?.0)
    }

    /// Reparameterized draw `mu + sigma * eps`.
    pub fn sample_latent<R: Rng>(&self, image: &[T], rng: &mut R) -> Result<Vec<T>, VaeError> {
        let (mu, logvar) = self.encode(image)?;
        Ok(mu
            .iter()
            .zip(&logvar)
            .map(|(&m, &lv)| m + (lv * T::of(0.5)).exp() * T::of(rng.sample(StandardNormal)))
            .collect())
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>, VaeError> {
        if z.len() != self.config.latent_dim {
            return Err(VaeError::DimensionMismatch {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        Ok(self.decode_trace(z).1)
    }

    fn trace(&self, image: &[T], eps: &[T]) -> Trace<T> {
        let (enc, mu, logvar) = self.encode_trace(image);
        let z: Vec<T> = mu
            .iter()
            .zip(&logvar)
            .zip(eps)
            .map(|((&m, &lv), &e)| m + (lv * T::of(0.5)).exp() * e)
            .collect();
        let (dec, out) = self.decode_trace(&z);
        Trace {
            enc,
            mu,
            logvar,
            dec,
            out,
        }
    }

    fn loss_of(&self, image: &[T], t: &Trace<T>, beta: T) -> Elbo<T> {
        let reconstruction = t
            .out
            .iter()
            .zip(image)
            .map(|(&o, &x)| (o - x) * (o - x))
            .sum::<T>()
            / T::of_usize(image.len());
        let kl = kl_divergence(&t.mu, &t.logvar);
        Elbo {
            total: reconstruction + beta * kl,
            reconstruction,
            kl,
        }
    }

    /// ELBO-style loss for a fixed reparameterization noise `eps`.
    pub fn elbo_loss(&self, image: &[T], eps: &[T], beta: T) -> Result<Elbo<T>, VaeError> {
        self.check_image(image)?;
        if eps.len() != self.config.latent_dim {
            return Err(VaeError::DimensionMismatch {
                expected: self.config.latent_dim,
                got: eps.len(),
            });
        }
        Ok(self.loss_of(image, &self.trace(image, eps), beta))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn elbo_grad(
        &self,
        image: &[T],
        eps: &[T],
        beta: T,
    ) -> Result<(Elbo<T>, Vec<T>), VaeError> {
        let mut grad = vec![T::zero(); self.params.len()];
        let loss = self.accumulate_grad(image, eps, beta, T::one(), &mut grad)?;
        Ok((loss, grad))
    }

    fn accumulate_grad(
        &self,
        image: &[T],
        eps: &[T],
        beta: T,
        scale: T,
        grad: &mut [T],
    ) -> Result<Elbo<T>, VaeError> {
        let loss = self.elbo_loss(image, eps, beta)?;
        let t = self.trace(image, eps);
        let h = self.n_hidden();
        let p = &self.params;
        let two_over_n = T::of(2.0) / T::of_usize(image.len()) * scale;

        // output sigmoid
        let d_pre: Vec<T> = t
            .out
            .iter()
            .zip(image)
            .map(|(&o, &x)| two_over_n * (o - x) * o * (T::one() - o))
            .collect();
        let mut d = self.layers[2 * h + 2].backward(p, t.dec.last().unwrap(), &d_pre, grad);
        for k in (0..h).rev() {
            let act = &t.dec[k + 1];
            let d_pre: Vec<T> = d
                .iter()
                .zip(act)
                .map(|(&g, &a)| g * (T::one() - a * a))
                .collect();
            d = self.layers[h + 2 + k].backward(p, &t.dec[k], &d_pre, grad);
        }
        let dz = d;

        let half = T::of(0.5);
        let b = beta * scale;
        let d_mu: Vec<T> = dz.iter().zip(&t.mu).map(|(&g, &m)| g + b * m).collect();
        let d_lv: Vec<T> = dz
            .iter()
            .zip(&t.logvar)
            .zip(eps)
            .map(|((&g, &lv), &e)| {
                g * e * half * (lv * half).exp() + b * half * (lv.exp() - T::one())
            })
            .collect();
        let top = t.enc.last().unwrap();
        let mut d = self.layers[h].backward(p, top, &d_mu, grad);
        let d2 = self.layers[h + 1].backward(p, top, &d_lv, grad);
        d.iter_mut().zip(d2).for_each(|(a, b)| *a = *a + b);
        for k in (0..h).rev() {
            let act = &t.enc[k + 1];
            let d_pre: Vec<T> = d
                .iter()
                .zip(act)
                .map(|(&g, &a)| g * (T::one() - a * a))
                .collect();
            d = self.layers[k].backward(p, &t.enc[k], &d_pre, grad);
        }
        Ok(loss)
    }

    /// Largest relative error between analytic gradients and central
    /// differences with step `1e-5`, over `samples` randomly chosen
    /// parameters. The denominator is floored at `1e-8`.
    pub fn grad_check(
        &self,
        image: &[T],
        eps: &[T],
        beta: T,
        samples: usize,
        seed: u64,
    ) -> Result<f64, VaeError> {
        let (_, analytic) = self.elbo_grad(image, eps, beta)?;
        let mut rng = keyed(seed, 0x6c4);
        let mut probe = self.clone();
        let step = T::of(1e-5);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let i = rng.random_range(0..self.params.len());
            let orig = probe.params[i];
            probe.params[i] = orig + step;
            let up = probe.elbo_loss(image, eps, beta)?.total;
            probe.params[i] = orig - step;
            let down = probe.elbo_loss(image, eps, beta)?.total;
            probe.params[i] = orig;
            let numeric = ((up - down) / (step + step)).as_f64();
            let a = analytic[i].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    fn eval_noise(&self, n: usize) -> Vec<Vec<T>> {
        let mut rng = keyed(self.config.seed, 0xe7a1);
        (0..n)
            .map(|_| {
                (0..self.config.latent_dim)
                    .map(|_| T::of(rng.sample(StandardNormal)))
                    .collect()
            })
            .collect()
    }

    /// Mean loss over `images` with one fixed noise draw per image.
    pub fn evaluate(&self, images: &[Vec<T>]) -> Result<Elbo<f64>, VaeError> {
        if images.is_empty() {
            return Err(VaeError::EmptyDataset);
        }
        let noise = self.eval_noise(images.len());
        let beta = T::of(self.config.kl_coeff);
        let mut acc = Elbo {
            total: 0.0,
            reconstruction: 0.0,
            kl: 0.0,
        };
        for (img, eps) in images.iter().zip(&noise) {
            let e = self.elbo_loss(img, eps, beta)?;
            acc.total += e.total.as_f64();
            acc.reconstruction += e.reconstruction.as_f64();
            acc.kl += e.kl.as_f64();
        }
        let n = images.len() as f64;
        Ok(Elbo {
            total: acc.total / n,
            reconstruction: acc.reconstruction / n,
            kl: acc.kl / n,
        })
    }

    /// Minibatch SGD with momentum and plateau-based rate reduction. The
    /// returned history holds the evaluation loss before training (epoch
    /// 0) and after every epoch.
    pub fn train(&mut self, images: &[Vec<T>]) -> Result<Vec<EpochStats>, VaeError> {
        if images.is_empty() {
            return Err(VaeError::EmptyDataset);
        }
        for img in images {
            self.check_image(img)?;
        }
        let cfg = self.config.clone();
        let momentum = T::of(cfg.momentum);
        let mut lr = cfg.learning_rate;
        let mut velocity = vec![T::zero(); self.params.len()];
        let mut grad = vec![T::zero(); self.params.len()];
        let mut order: Vec<usize> = (0..images.len()).collect();

        let first = self.evaluate(images)?;
        let mut history = vec![EpochStats {
            epoch: 0,
            loss: first.total,
            reconstruction: first.reconstruction,
            kl: first.kl,
            learning_rate: lr,
        }];
        let mut best = first.total;
        let mut wait = 0;
        for epoch in 1..=cfg.max_epochs {
            let mut rng = keyed(cfg.seed, epoch as u64);
            order.shuffle(&mut rng);
            let ramp = if cfg.kl_warmup_epochs == 0 {
                1.0
            } else {
                (epoch as f64 / cfg.kl_warmup_epochs as f64).min(1.0)
            };
            let beta = T::of(cfg.kl_coeff * ramp);
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = T::zero());
                let scale = T::one() / T::of_usize(batch.len());
                for &i in batch {
                    let eps: Vec<T> = (0..cfg.latent_dim)
                        .map(|_| T::of(rng.sample(StandardNormal)))
                        .collect();
                    self.accumulate_grad(&images[i], &eps, beta, scale, &mut grad)?;
                }
                let step = T::of(lr);
                for ((p, v), &g) in self.params.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = momentum * *v - step * g;
                    *p = *p + *v;
                }
            }
            if self.params.iter().any(|p| !p.is_finite()) {
                return Err(VaeError::NonFinite { epoch });
            }
            let e = self.evaluate(images)?;
            if !e.total.is_finite() {
                return Err(VaeError::NonFinite { epoch });
            }
            history.push(EpochStats {
                epoch,
                loss: e.total,
                reconstruction: e.reconstruction,
                kl: e.kl,
                learning_rate: lr,
            });
            if e.total < best * (1.0 - 1e-4) {
                best = e.total;
                wait = 0;
            } else {
                wait += 1;
                if wait > cfg.plateau_patience {
                    lr = (lr * cfg.plateau_factor).max(cfg.min_learning_rate.min(lr));
                    wait = 0;
                }
            }
        }
        Ok(history)
    }

    pub fn to_json(&self) -> Result<String, VaeError> {
        let file = ParamsFile {
            version: PARAMS_VERSION,
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.as_f64()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, VaeError> {
        let file: ParamsFile = serde_json::from_str(text)?;
        if file.version != PARAMS_VERSION {
            return Err(VaeError::Version(file.version));
        }
        file.config.validate()?;
        let layers = Self::shape(&file.config);
        let expected: usize = layers.iter().map(Layer::len).sum();
        if file.params.len() != expected {
            return Err(VaeError::DimensionMismatch {
                expected,
                got: file.params.len(),
            });
        }
        Ok(Self {
            config: file.config,
            layers,
            params: file.params.into_iter().map(T::of).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny(seed: u64) -> VaeConfig {
        VaeConfig {
            height: 4,
            width: 5,
            latent_dim: 3,
            hidden: vec![6, 4],
            seed,
            ..VaeConfig::default()
        }
    }

    fn image(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = keyed(seed, 1);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[1.0; 5], &[0.0; 5]), 2.5, epsilon = 1e-15);
        assert!(kl_divergence(&[0.1f64, -0.2], &[0.3, -0.4]) > 0.0);
    }

    #[test]
    fn encode_is_deterministic_and_checks_dims() {
        let vae = Vae::<f64>::new(tiny(3)).unwrap();
        let img = image(20, 5);
        assert_eq!(vae.encode(&img).unwrap(), vae.encode(&img).unwrap());
        assert!(matches!(
            vae.encode(&img[..19]),
            Err(VaeError::DimensionMismatch { .. })
        ));
        let mut bad = img.clone();
        bad[2] = 1.5;
        assert!(matches!(
            vae.encode(&bad),
            Err(VaeError::PixelRange { index: 2, .. })
        ));
    }

    #[test]
    fn loss_decomposes() {
        let vae = Vae::<f64>::new(tiny(3)).unwrap();
        let img = image(20, 5);
        let e = vae.elbo_loss(&img, &[0.3, -0.1, 0.7], 0.25).unwrap();
        assert_abs_diff_eq!(e.total, e.reconstruction + 0.25 * e.kl, epsilon = 1e-15);
        assert!(e.kl >= 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let vae = Vae::<f64>::new(tiny(seed)).unwrap();
            let err = vae
                .grad_check(&image(20, seed), &[0.5, -1.0, 0.2], 0.1, 200, seed)
                .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_weights_give_finite_gradients() {
        let mut vae = Vae::<f64>::new(tiny(1)).unwrap();
        vae.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let (_, g) = vae.elbo_grad(&[0.0; 20], &[0.0; 3], 0.1).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn beta_zero_drops_kl_gradient() {
        // with eps = 0 the decoder path sees only mu, so logvar gradients
        // come from the KL term alone
        let vae = Vae::<f64>::new(tiny(2)).unwrap();
        let (_, g) = vae.elbo_grad(&image(20, 2), &[0.0; 3], 0.0).unwrap();
        let lv = vae.layers[vae.n_hidden() + 1];
        assert!(g[lv.offset..lv.offset + lv.len()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let cfg = VaeConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            ..tiny(4)
        };
        let mut vae = Vae::<f64>::new(cfg).unwrap();
        let before = vae.params().to_vec();
        let data: Vec<Vec<f64>> = (0..10).map(|s| image(20, s)).collect();
        let hist = vae.train(&data).unwrap();
        assert_eq!(vae.params(), &before[..]);
        assert!(hist.windows(2).all(|w| w[0].loss == w[1].loss));
    }

    #[test]
    fn json_round_trip() {
        let vae = Vae::<f64>::new(tiny(9)).unwrap();
        let back = Vae::<f64>::from_json(&vae.to_json().unwrap()).unwrap();
        assert_eq!(back, vae);
        let f32_copy = Vae::<f32>::from_json(&vae.to_json().unwrap()).unwrap();
        assert_eq!(f32_copy.params().len(), vae.params().len());
    }
}
