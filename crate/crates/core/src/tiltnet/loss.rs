use super::tensor::Tensor;

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Negative log-softmax at `label` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    let log_z = m + sum_exp.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - log_z).exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean cross-entropy over a `[N, K]` batch with the matching gradient.
pub fn batch_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.batch();
    assert_eq!(n, labels.len(), "label count does not match batch");
    let k = logits.item_len();
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for (b, &label) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(logits.item(b), label);
        total += l;
        for (d, v) in grad.data_mut()[b * k..(b + 1) * k].iter_mut().zip(g) {
            *d = v * scale;
        }
    }
    (total * scale, grad)
}
