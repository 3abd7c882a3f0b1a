use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences. Returns the largest `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone(), false);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at element {i}")));
        }
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
