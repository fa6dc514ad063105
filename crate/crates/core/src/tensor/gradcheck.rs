use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the maximum relative error over every input
/// coordinate. The denominator is `max(1, |analytic|, |numeric|)`.
pub fn check_gradient<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::Contract(format!(
                "gradient check needs a scalar function, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut point = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..point[which].numel() {
            let orig = point[which].data()[k];
            point[which].data_mut()[k] = orig + h;
            let plus = eval(&point)?;
            point[which].data_mut()[k] = orig - h;
            let minus = eval(&point)?;
            point[which].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k];
            let denom = 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
