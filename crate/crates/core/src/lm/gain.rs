use crate::error::{Error, Result};

/// Predicted reductions at or below this are treated as no prediction at all.
pub const DENOM_FLOOR: f64 = 1e-15;

/// Returned in place of a ratio when the predicted reduction is degenerate.
/// Compares below every threshold, so the step is rejected.
pub const REJECT: f64 = f64::NEG_INFINITY;

fn check(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Gain ratio of the two-solve step `s = h + ĥ`.
///
/// The numerator is the actual drop `‖F(x)‖ - ‖F(x + s)‖`. The denominator
/// sums the drops predicted by the linear model for each solve:
/// `‖F(x)‖ - ‖F(x) + J h‖` for the first, and `‖F(y)‖ - ‖F(y) + J ĥ‖` for
/// the second, whose model is anchored at `y = x + h` with the same `J`.
pub fn gain_ratio(f_x: f64, f_trial: f64, lin_h: f64, f_y: f64, lin_hhat: f64) -> Result<f64> {
    check("‖F(x)‖", f_x)?;
    check("‖F(x+s)‖", f_trial)?;
    check("‖ℓ(h)‖", lin_h)?;
    check("‖F(y)‖", f_y)?;
    check("‖ℓ̂(ĥ)‖", lin_hhat)?;
    let predicted = (f_x - lin_h) + (f_y - lin_hhat);
    if predicted <= DENOM_FLOOR {
        return Ok(REJECT);
    }
    Ok((f_x - f_trial) / predicted)
}

/// Gain ratio of a single LM step `h`.
pub fn single_gain_ratio(f_x: f64, f_trial: f64, lin_h: f64) -> Result<f64> {
    check("‖F(x)‖", f_x)?;
    check("‖F(x+h)‖", f_trial)?;
    check("‖ℓ(h)‖", lin_h)?;
    let predicted = f_x - lin_h;
    if predicted <= DENOM_FLOOR {
        return Ok(REJECT);
    }
    Ok((f_x - f_trial) / predicted)
}
