//! Slice-level primitives shared by the graph ops and usable on their own.

use crate::error::{Error, Result};

/// Variance epsilon added before the reciprocal square root in layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floor applied to predicted probabilities before the KL divergence.
pub const KL_FLOOR: f64 = 1e-8;

/// Sums after sorting, so the result depends only on the multiset of terms.
pub(crate) fn sum_order_free(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Max-subtracted softmax written into `out`. `valid` restricts the support;
/// entries outside it are set to zero.
pub(crate) fn softmax_into(
    x: &[f64],
    valid: Option<&[bool]>,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let is_valid = |j: usize| valid.map_or(true, |m| m[j]);
    let max = x
        .iter()
        .enumerate()
        .filter(|&(j, _)| is_valid(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("softmax", "no valid entries along axis"));
    }
    scratch.clear();
    for (j, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        if is_valid(j) {
            *o = (v - max).exp();
            scratch.push(*o);
        } else {
            *o = 0.0;
        }
    }
    let z = sum_order_free(scratch);
    out.iter_mut().for_each(|o| *o /= z);
    Ok(())
}

pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("softmax", "empty axis"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let mut out = vec![0.0; x.len()];
    softmax_into(x, None, &mut out, &mut Vec::new())?;
    Ok(out)
}

/// Log-sum-exp of a non-empty slice.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes one row; returns (normalized row, 1/sqrt(var + eps)).
pub(crate) fn normalize_row(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * rstd;
    }
    rstd
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("layer_norm", "empty input"));
    }
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "input {} vs gain {} / bias {}",
                x.len(),
                gain.len(),
                bias.len()
            ),
        ));
    }
    let mut out = vec![0.0; x.len()];
    normalize_row(x, &mut out);
    for ((o, g), b) in out.iter_mut().zip(gain).zip(bias) {
        *o = *o * g + b;
    }
    Ok(out)
}

fn check_distribution(op: &'static str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(op, "negative probability"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(op, format!("row sums to {s}, expected 1")));
    }
    Ok(())
}

/// Floors `pred` at [`KL_FLOOR`], renormalizes, and returns the floored row
/// with its normalizer.
pub(crate) fn floor_and_normalizer(pred: &[f64], floored: &mut Vec<f64>) -> f64 {
    floored.clear();
    floored.extend(pred.iter().map(|&q| q.max(KL_FLOOR)));
    floored.iter().sum()
}

/// KL(target ‖ pred) with the predicted row floored at 1e-8 and renormalized.
pub fn kl_divergence(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() || target.is_empty() {
        return Err(Error::shape(
            "kl_divergence",
            format!("target {} vs pred {}", target.len(), pred.len()),
        ));
    }
    check_distribution("kl_divergence", target)?;
    check_distribution("kl_divergence", pred)?;
    Ok(kl_row(target, pred, &mut Vec::new()))
}

pub(crate) fn kl_row(target: &[f64], pred: &[f64], floored: &mut Vec<f64>) -> f64 {
    let z = floor_and_normalizer(pred, floored);
    target
        .iter()
        .zip(floored.iter())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &r)| p * (p * z / r).ln())
        .sum::<f64>()
        .max(0.0)
}

/// −log softmax(logits)[label].
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {label} out of range for {} classes", logits.len()),
        ));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "cross_entropy",
        });
    }
    // The arg-max term contributes exactly 1 to the normalizer; summing the
    // others separately lets ln_1p keep precision for confident logits.
    let top = top_k_indices(logits, 1)[0];
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, v)| (v - max).exp())
        .sum();
    Ok((max - logits[label]) + rest.ln_1p())
}

/// ln(1 + eˣ) without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a logit, computed as softplus(z) − t·z.
pub fn binary_cross_entropy_with_logit(logit: f64, target: bool) -> f64 {
    if target {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Indices of the `k` largest entries; ties keep the lowest index.
pub fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    idx.truncate(k.min(x.len()));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        assert!(big.iter().all(|&p| close(p, 1.0 / 3.0, 1e-15)));
        // e^k / (e + e^2 + e^3)
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        let got = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!(close(*g, e, 1e-12));
        }
        assert!(close(got[0], 0.09003, 1e-5));
        assert!(close(got[1], 0.24473, 1e-5));
        assert!(close(got[2], 0.66524, 1e-5));
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0; 4];
        let zero = [0.0; 4];
        assert_eq!(layer_norm(&ones, &ones, &zero).unwrap(), vec![0.0; 4]);

        let out = layer_norm(&[-1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(close(out[0], -1.0, 1e-2) && close(out[1], 1.0, 1e-2));

        let out = layer_norm(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4], &[1.0; 4]).unwrap();
        let mean = out.iter().sum::<f64>() / 4.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(close(mean, 1.0, 1e-12));
        assert!(close(var, 4.0, 1e-3));

        assert!(layer_norm(&[], &[], &[]).is_err());
    }

    #[test]
    fn unit_gain_layer_norm_is_standardized() {
        // Input variance ≫ eps keeps the normalized variance within 1e-6 of 1.
        let x = [3.0, -20.0, 55.0, 12.5, 0.0];
        let out = layer_norm(&x, &[1.0; 5], &[0.0; 5]).unwrap();
        let mean = out.iter().sum::<f64>() / 5.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-9);
        assert!(close(var, 1.0, 1e-6));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(close(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            1e-12
        ));
        // q = [1, 0] floors to [1, 1e-8], renormalized by 1 + 1e-8.
        let z: f64 = 1.0 + 1e-8;
        let expected: f64 = 0.5 * (0.5 / (1.0 / z)).ln() + 0.5 * (0.5 / (1e-8 / z)).ln();
        let got = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(close(got, expected, 1e-12), "{got} vs {expected}");
        assert!(got.is_finite() && close(got, 8.517193, 1e-6));

        assert!(kl_divergence(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(close(
            cross_entropy(&[0.0, 0.0], 0).unwrap(),
            std::f64::consts::LN_2,
            1e-15
        ));
        // ln(1 + e^-20)
        let tiny = cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!(close(tiny, (-20f64).exp().ln_1p(), 1e-20));
        assert!(close(tiny, 2.06e-9, 1e-11));
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let ce = cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!(close(ce, -(3f64.exp() / z).ln(), 1e-12));
        assert!(close(ce, 0.40761, 1e-5));
        assert!(cross_entropy(&[0.0], 1).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!(close(
            binary_cross_entropy_with_logit(0.0, true),
            std::f64::consts::LN_2,
            1e-15
        ));
        assert!(close(
            binary_cross_entropy_with_logit(0.0, false),
            std::f64::consts::LN_2,
            1e-15
        ));
        let v = binary_cross_entropy_with_logit(10.0, true);
        assert!(close(v, (-10f64).exp().ln_1p(), 1e-18));
        assert!(close(v, 4.54e-5, 1e-7));
    }

    #[test]
    fn top_k_ties_keep_lowest_index() {
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0, 1.0], 3), vec![0, 1, 2]);
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[0.1, 0.9], 5), vec![1, 0]);
    }
}
