use alloc::vec::Vec;

use super::{NnError, Tape, Tensor, Var};

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NnError::NonFinite)
    }
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of a scalar function, over every coordinate of every input.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(NnError::NonFinite);
    }
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let x0 = input.data()[idx];
            probe[k].data_mut()[idx] = x0 + eps;
            let plus = eval(&f, &probe)?;
            probe[k].data_mut()[idx] = x0 - eps;
            let minus = eval(&f, &probe)?;
            probe[k].data_mut()[idx] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].data()[idx];
            if !a.is_finite() {
                return Err(NnError::NonFinite);
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
