//! Label-smoothed cross-entropy and CTC, each with its gradient.

use super::tensor::{log_add, Tensor};
use crate::error::{Error, Result};

/// CTC blank label index. Real labels are `1..num_labels`.
pub const BLANK: usize = 0;

/// Mean over positions of `-Σ_v q(v) log softmax(logits)_v` with
/// `q = (1 - ε)·onehot(target) + ε / V`.
pub fn loss_xent_smoothed(logits: &Tensor, targets: &[usize], epsilon: f64) -> Result<f64> {
    xent_smoothed_with_grad(logits, targets, epsilon).map(|(l, _)| l)
}

/// Loss plus gradient with respect to the logits.
pub fn xent_smoothed_with_grad(
    logits: &Tensor,
    targets: &[usize],
    epsilon: f64,
) -> Result<(f64, Tensor)> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "label smoothing {epsilon} outside [0, 1)"
        )));
    }
    if logits.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            tensor: "logits".into(),
            expected: vec![targets.len(), logits.cols()],
            found: logits.shape().to_vec(),
        });
    }
    let v = logits.cols();
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::TokenOutOfRange { id: bad, vocab: v });
    }
    let n = targets.len().max(1) as f64;
    let logp = logits.log_softmax_rows();
    let off = epsilon / v as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), v);
    for (r, &t) in targets.iter().enumerate() {
        let lp = logp.row(r);
        let g = grad.row_mut(r);
        for c in 0..v {
            let q = off + if c == t { 1.0 - epsilon } else { 0.0 };
            if q > 0.0 {
                loss -= q * lp[c];
            }
            g[c] = (lp[c].exp() - q) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Minimum frame count needed to emit `target`: its length plus one blank
/// between each pair of repeated labels.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// `-ln Σ_alignments Π_t p_t(a_t)` given per-frame log posteriors
/// (`frames × labels`, column [`BLANK`] is the blank).
pub fn loss_ctc(log_posteriors: &Tensor, target: &[usize]) -> Result<f64> {
    ctc_with_grad(log_posteriors, target).map(|(l, _)| l)
}

/// CTC loss and its gradient with respect to the log posteriors, computed by
/// forward-backward in log space.
pub fn ctc_with_grad(log_posteriors: &Tensor, target: &[usize]) -> Result<(f64, Tensor)> {
    let frames = log_posteriors.rows();
    let k = log_posteriors.cols();
    if let Some(&bad) = target.iter().find(|&&l| l == BLANK || l >= k) {
        return Err(Error::TokenOutOfRange { id: bad, vocab: k });
    }
    if frames == 0 || frames < ctc_min_frames(target) {
        return Err(Error::Unalignable {
            frames,
            target_len: target.len(),
        });
    }
    // Extended label sequence: blank, l1, blank, l2, ..., blank.
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;
    let y = |t: usize, s: usize| log_posteriors.get(t, ext[s]);

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = y(0, 0);
    if s_len > 1 {
        alpha[1] = y(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + y(t, s) };
        }
    }
    let last = (frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::Unalignable {
            frames,
            target_len: target.len(),
        });
    }

    // beta excludes the emission at its own frame.
    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = t + 1;
            let term = |s2: usize| beta[next * s_len + s2] + y(next, s2);
            let mut b = term(s);
            if s + 1 < s_len {
                b = log_add(b, term(s + 1));
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, term(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = Tensor::zeros(frames, k);
    for t in 0..frames {
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > ninf {
                let g = grad.get(t, ext[s]) - occ.exp();
                grad.set(t, ext[s], g);
            }
        }
    }
    Ok((-log_p, grad))
}
