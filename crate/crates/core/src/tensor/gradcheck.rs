use super::{Result, Tape, Tensor, TensorError, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares the tape gradient of a scalar function with central finite
/// differences and returns the largest per-coordinate error
/// `|g_ad - g_fd| / max(1, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = point.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * FD_STEP);
        if !numeric.is_finite() {
            return Err(TensorError::NonFiniteValue { op: "grad_check" });
        }
        let ad = analytic.data()[i];
        let err = (ad - numeric).abs() / f64::max(1.0, ad.abs() + numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let point = Tensor::vector(vec![1.0, 2.0]);
        let f = |t: &mut Tape, x: Var| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        };
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone());
        let y = f(&mut tape, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
        assert!(grad_check(f, &point).unwrap() < 1e-7);
    }

    #[test]
    fn log_of_sum() {
        let point = Tensor::vector(vec![0.3, 0.4]);
        let honest = |t: &mut Tape, x: Var| {
            let s = t.sum(x)?;
            t.ln(s)
        };
        assert!(grad_check(honest, &point).unwrap() < 1e-7);
    }

    #[test]
    fn non_finite_is_reported() {
        let point = Tensor::vector(vec![0.0]);
        let f = |t: &mut Tape, x: Var| {
            let s = t.sum(x)?;
            t.ln(s)
        };
        assert!(matches!(grad_check(f, &point), Err(TensorError::NonFiniteValue { .. })));
    }
}
