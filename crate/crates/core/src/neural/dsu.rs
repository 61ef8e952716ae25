//! Feature-statistics perturbation for domain generalization.
//!
//! In training, with probability `p` per batch, each instance's per-channel
//! mean and standard deviation are replaced by resampled values drawn around
//! them, with spreads estimated from the batch:
//!
//! ```text
//! mu_ic    = mean_l x[i,c,l]
//! sigma_ic = sqrt(var_l x[i,c,l] + 1e-6)
//! S_mu_c   = std_i mu_ic        (unbiased)
//! S_sig_c  = std_i sigma_ic     (unbiased)
//! beta_ic  = mu_ic    + e_mu_ic  * S_mu_c
//! gamma_ic = sigma_ic + e_sig_ic * S_sig_c      e ~ N(0, 1)
//! y        = gamma_ic * (x - mu_ic) / sigma_ic + beta_ic
//! ```
//!
//! The noise is a constant in the backward pass; the batch spreads are
//! differentiated through.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{shape_err, Ctx, Layer, NeuralError, Result, Tensor};

pub const DSU_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Noise {
    apply: bool,
    eps_mu: Vec<f64>,
    eps_sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Tape {
    shape: [usize; 3],
    norm: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    spread_mu: Vec<f64>,
    spread_sigma: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dsu {
    pub p: f64,
    /// Reuse the previous draw (apply flag and noise) on the next training
    /// pass of the same shape.
    pub freeze: bool,
    noise: Option<Noise>,
    tape: Option<Tape>,
}

impl Dsu {
    pub fn new(p: f64) -> Dsu {
        assert!((0.0..=1.0).contains(&p), "DSU probability must be in [0, 1]");
        Dsu {
            p,
            freeze: false,
            noise: None,
            tape: None,
        }
    }

    /// Whether the last training pass perturbed its input.
    pub fn last_applied(&self) -> bool {
        self.noise.as_ref().is_some_and(|n| n.apply)
    }

    /// The `beta` statistics of the last perturbed pass, indexed `i * C + c`.
    pub fn last_beta(&self) -> Option<Vec<f64>> {
        let tape = self.tape.as_ref()?;
        let noise = self.noise.as_ref()?;
        let c = tape.shape[1];
        Some(
            (0..tape.mu.len())
                .map(|ic| tape.mu[ic] + noise.eps_mu[ic] * tape.spread_mu[ic % c])
                .collect(),
        )
    }

    fn draw(&mut self, n: usize, ctx: &mut Ctx) -> &Noise {
        let reuse = self.freeze && self.noise.as_ref().is_some_and(|z| z.eps_mu.len() == n);
        if !reuse {
            let apply = self.p > 0.0 && ctx.rng.random::<f64>() < self.p;
            let (eps_mu, eps_sigma) = if apply {
                (
                    (0..n).map(|_| ctx.rng.sample(StandardNormal)).collect(),
                    (0..n).map(|_| ctx.rng.sample(StandardNormal)).collect(),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            self.noise = Some(Noise {
                apply,
                eps_mu: if apply { eps_mu } else { vec![0.0; n] },
                eps_sigma: if apply { eps_sigma } else { vec![0.0; n] },
            });
        }
        self.noise.as_ref().unwrap()
    }
}

fn unbiased_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss = values.map(|v| (v - mean) * (v - mean)).sum::<f64>();
    ((ss / (n - 1) as f64).sqrt(), mean)
}

impl Layer for Dsu {
    fn name(&self) -> &'static str {
        "dsu"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.tape = None;
        if !ctx.training() {
            if !self.freeze {
                self.noise = None;
            }
            return Ok(x.clone());
        }
        let [b, c, l] = x.shape;
        if b < 2 {
            return Err(NeuralError::BatchTooSmall(b));
        }
        if l == 0 {
            return Err(shape_err("dsu", "[B, C, L] with L >= 1", x));
        }
        let apply = self.draw(b * c, ctx).apply;
        if !apply {
            return Ok(x.clone());
        }
        let noise = self.noise.as_ref().unwrap();
        let mut mu = vec![0.0; b * c];
        let mut sigma = vec![0.0; b * c];
        for ic in 0..b * c {
            let row = &x.data[ic * l..(ic + 1) * l];
            let m = row.iter().sum::<f64>() / l as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / l as f64;
            mu[ic] = m;
            sigma[ic] = (var + DSU_EPS).sqrt();
        }
        let mut spread_mu = vec![0.0; c];
        let mut spread_sigma = vec![0.0; c];
        for ch in 0..c {
            spread_mu[ch] = unbiased_std((0..b).map(|i| mu[i * c + ch]), b).0;
            spread_sigma[ch] = unbiased_std((0..b).map(|i| sigma[i * c + ch]), b).0;
        }
        let mut y = Tensor::zeros(x.shape);
        let mut norm = vec![0.0; x.len()];
        let mut gamma = vec![0.0; b * c];
        for ic in 0..b * c {
            let ch = ic % c;
            let beta = mu[ic] + noise.eps_mu[ic] * spread_mu[ch];
            let g = sigma[ic] + noise.eps_sigma[ic] * spread_sigma[ch];
            gamma[ic] = g;
            let inv = 1.0 / sigma[ic];
            for k in ic * l..(ic + 1) * l {
                let n = (x.data[k] - mu[ic]) * inv;
                norm[k] = n;
                y.data[k] = g * n + beta;
            }
        }
        self.tape = Some(Tape {
            shape: x.shape,
            norm,
            mu,
            sigma,
            spread_mu,
            spread_sigma,
            gamma,
        });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let noise = self.noise.as_ref().ok_or(NeuralError::NoTape("dsu"))?;
        let Some(tape) = self.tape.as_ref() else {
            // identity pass
            return Ok(grad.clone());
        };
        if grad.shape != tape.shape {
            return Err(shape_err("dsu backward", format!("{:?}", tape.shape), grad));
        }
        let [b, c, l] = tape.shape;
        let lf = l as f64;
        let mut d_mu = vec![0.0; b * c];
        let mut d_sigma = vec![0.0; b * c];
        let mut d_spread_mu = vec![0.0; c];
        let mut d_spread_sigma = vec![0.0; c];
        let mut dx = Tensor::zeros(tape.shape);
        for ic in 0..b * c {
            let ch = ic % c;
            let g = &grad.data[ic * l..(ic + 1) * l];
            let n = &tape.norm[ic * l..(ic + 1) * l];
            let d_beta: f64 = g.iter().sum();
            let d_gamma: f64 = g.iter().zip(n).map(|(a, b)| a * b).sum();
            d_mu[ic] += d_beta;
            d_sigma[ic] += d_gamma;
            d_spread_mu[ch] += d_beta * noise.eps_mu[ic];
            d_spread_sigma[ch] += d_gamma * noise.eps_sigma[ic];
            // normalization path with dn = g * gamma
            let gamma = tape.gamma[ic];
            let mean_dn = gamma * d_beta / lf;
            let mean_dn_n = gamma * d_gamma / lf;
            let inv = 1.0 / tape.sigma[ic];
            for (k, (gv, nv)) in g.iter().zip(n).enumerate() {
                dx.data[ic * l + k] = inv * (gamma * gv - mean_dn - nv * mean_dn_n);
            }
        }
        let denom = (b - 1) as f64;
        for ch in 0..c {
            let mean_mu = (0..b).map(|i| tape.mu[i * c + ch]).sum::<f64>() / b as f64;
            let mean_sigma = (0..b).map(|i| tape.sigma[i * c + ch]).sum::<f64>() / b as f64;
            for i in 0..b {
                let ic = i * c + ch;
                if tape.spread_mu[ch] > 0.0 {
                    d_mu[ic] += d_spread_mu[ch] * (tape.mu[ic] - mean_mu) / (denom * tape.spread_mu[ch]);
                }
                if tape.spread_sigma[ch] > 0.0 {
                    d_sigma[ic] +=
                        d_spread_sigma[ch] * (tape.sigma[ic] - mean_sigma) / (denom * tape.spread_sigma[ch]);
                }
            }
        }
        for ic in 0..b * c {
            let n = &tape.norm[ic * l..(ic + 1) * l];
            let (dm, ds) = (d_mu[ic] / lf, d_sigma[ic] / lf);
            for (k, nv) in n.iter().enumerate() {
                dx.data[ic * l + k] += dm + ds * nv;
            }
        }
        Ok(dx)
    }

    fn clear_tape(&mut self) {
        self.tape = None;
        if !self.freeze {
            self.noise = None;
        }
    }
}
