use super::{NeuralError, Result, Tensor};

/// Softmax over the channel axis of `[B, K, T]`.
pub(crate) fn softmax_channels(x: &Tensor) -> Tensor {
    let [b, c, l] = x.shape;
    let mut y = Tensor::zeros(x.shape);
    for n in 0..b {
        for t in 0..l {
            let idx = |ch: usize| (n * c + ch) * l + t;
            let max = (0..c).map(|ch| x.data[idx(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (x.data[idx(ch)] - max).exp();
                y.data[idx(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                y.data[idx(ch)] /= sum;
            }
        }
    }
    y
}

/// Class probabilities as rows: `rows[n * T + t][k]`.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let p = softmax_channels(logits);
    let [b, c, l] = p.shape;
    (0..b * l)
        .map(|r| {
            let (n, t) = (r / l, r % l);
            (0..c).map(|ch| p.at(n, ch, t)).collect()
        })
        .collect()
}

/// Mean negative log-likelihood over masked-in positions of `[B, K, T]`
/// logits. `labels` and `mask` are indexed `n * T + t`. Returns the loss and
/// its gradient with respect to the logits; masked-out positions get an
/// exact zero gradient.
pub fn masked_cross_entropy(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<(f64, Tensor)> {
    let [b, c, l] = logits.shape;
    if labels.len() != b * l || mask.len() != b * l {
        return Err(NeuralError::ShapeMismatch {
            layer: "masked_cross_entropy",
            expected: format!("{} labels and mask entries", b * l),
            actual: vec![labels.len(), mask.len()],
        });
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(NeuralError::EmptyMask);
    }
    let p = softmax_channels(logits);
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = 0.0;
    let scale = 1.0 / count as f64;
    for n in 0..b {
        for t in 0..l {
            let pos = n * l + t;
            if !mask[pos] {
                continue;
            }
            let label = labels[pos];
            if label >= c {
                return Err(NeuralError::LabelOutOfRange {
                    position: pos,
                    label,
                    classes: c,
                });
            }
            let idx = |ch: usize| (n * c + ch) * l + t;
            // log-sum-exp form keeps large margins finite
            let max = (0..c).map(|ch| logits.data[idx(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).map(|ch| (logits.data[idx(ch)] - max).exp()).sum::<f64>().ln();
            loss += lse - logits.data[idx(label)];
            for ch in 0..c {
                let target = if ch == label { 1.0 } else { 0.0 };
                grad.data[idx(ch)] = (p.data[idx(ch)] - target) * scale;
            }
        }
    }
    Ok((loss * scale, grad))
}
