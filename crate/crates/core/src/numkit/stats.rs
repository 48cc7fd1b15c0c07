use crate::error::{Error, Result};

/// Fourth standardized moment with population moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kurtosis {
    pub value: f64,
    /// Zero variance (or fewer than two samples); `value` is then 0.
    pub degenerate: bool,
}

pub fn kurtosis_checked(v: &[f64]) -> Kurtosis {
    let n = v.len();
    if n < 2 {
        return Kurtosis { value: 0.0, degenerate: true };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d = (x - mean) * (x - mean);
        (m2 + d, m4 + d * d)
    });
    let var = m2 / n as f64;
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if var <= (f64::EPSILON * scale).powi(2) || var == 0.0 {
        return Kurtosis { value: 0.0, degenerate: true };
    }
    Kurtosis { value: (m4 / n as f64) / (var * var), degenerate: false }
}

/// Kurtosis value; 0 for degenerate inputs.
pub fn kurtosis(v: &[f64]) -> f64 {
    kurtosis_checked(v).value
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// `softmax(v / tau)` with max subtraction.
pub fn softmax(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("softmax temperature {tau} must be > 0")));
    }
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out: Vec<f64> = v.iter().map(|x| ((x - max) / tau).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "kl of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut acc = 0.0;
    for (i, (pi, qi)) in p.iter().zip(q).enumerate() {
        if *pi == 0.0 {
            continue;
        }
        if *qi == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "q[{i}] = 0 where p[{i}] = {pi}: divergence is infinite"
            )));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}
