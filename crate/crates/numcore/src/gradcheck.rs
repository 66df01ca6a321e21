//! Central finite-difference gradient oracle. Evaluates a forward-only
//! closure twice per perturbed element, so it is independent of the backward
//! implementation it is used to check.

use crate::tensor::Tensor;
use crate::Result;

pub const FD_STEP: f64 = 1e-5;

/// Numeric gradient of `f` (a scalar-valued forward evaluation) with respect
/// to every element of every input, by central differences.
pub fn finite_diff_grads<F>(mut f: F, inputs: &[Tensor], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let mut g = vec![0.0; inputs[ti].numel()];
        for ei in 0..inputs[ti].numel() {
            let orig = work[ti].data[ei];
            work[ti].data[ei] = orig + h;
            let fp = f(&work)?;
            work[ti].data[ei] = orig - h;
            let fm = f(&work)?;
            work[ti].data[ei] = orig;
            g[ei] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Worst relative error between two gradient vectors, with an absolute floor
/// in the denominator so near-zero gradients do not explode the ratio.
pub fn max_rel_err(ad: &[f64], fd: &[f64], floor: f64) -> f64 {
    assert_eq!(ad.len(), fd.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (a, f) in ad.iter().zip(fd) {
        let denom = (a.abs() + f.abs()).max(floor);
        worst = worst.max((a - f).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_recovers_quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = Tensor::from_vec(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
        let g = finite_diff_grads(
            |ts| Ok(ts[0].data.iter().map(|v| v * v).sum()),
            &[x],
            FD_STEP,
        )
        .unwrap();
        let want = [1.0, -2.5, 4.0];
        assert!(max_rel_err(&g[0], &want, 1e-6) < 1e-8);
    }
}
