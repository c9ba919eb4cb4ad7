use crate::{MrdgError, Result};

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(MrdgError::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(MrdgError::non_finite(
                "finite-difference oracle",
                format!("loss is not finite around coordinate {i}"),
            ));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, with a floor of 1e-8
/// on the denominator so two vanishing gradients compare as equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8);
    diff / scale
}
