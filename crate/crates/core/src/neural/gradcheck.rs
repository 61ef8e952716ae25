//! Central finite differences against the analytic gradients of a layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Ctx, Layer, Mode, Tensor};

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = format!("{} analytic {analytic:e} numeric {numeric:e}", what());
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Checks input and trainable-parameter gradients of `layer` in training
/// mode under the scalar loss `sum(w * layer(x))`, with `w` drawn from
/// `seed`. Stochastic layers must be frozen so repeated passes agree.
pub fn check_layer(layer: &mut dyn Layer, x: Tensor, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forward_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut run = |layer: &mut dyn Layer, x: &Tensor| {
        layer
            .forward(x, &mut Ctx::new(Mode::Train, &mut forward_rng))
            .expect("forward")
    };
    let y = run(layer, &x);
    let w = Tensor {
        shape: y.shape,
        data: (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let loss = |y: &Tensor| y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>();

    layer.visit_params(&mut |p| {
        p.grad_mut();
        p.zero_grad();
    });
    let dx = layer.backward(&w).expect("backward");

    let mut report = GradCheck::new();
    let numeric = finite_difference(
        |v| {
            let xt = Tensor {
                shape: x.shape,
                data: v.to_vec(),
            };
            loss(&run(layer, &xt))
        },
        &x.data,
        STEP,
    );
    for (i, (a, n)) in dx.data.iter().zip(&numeric).enumerate() {
        report.record(|| format!("{} input[{i}]", layer.name()), *a, *n);
    }

    let mut params = Vec::new();
    layer.visit_params(&mut |p| {
        if p.trainable {
            params.push((p.name.clone(), p.value.clone(), p.grad.clone()));
        }
    });
    for (name, value, grad) in params {
        let numeric = finite_difference(
            |v| {
                layer.visit_params(&mut |p| {
                    if p.name == name {
                        p.value.copy_from_slice(v);
                    }
                });
                loss(&run(layer, &x))
            },
            &value,
            STEP,
        );
        layer.visit_params(&mut |p| {
            if p.name == name {
                p.value.copy_from_slice(&value);
            }
        });
        for (i, (a, n)) in grad.iter().zip(&numeric).enumerate() {
            report.record(|| format!("{name}[{i}]"), *a, *n);
        }
    }
    report
}
