use super::FoolError;

/// Two-ReLU selector: `max(0, x - k z) + max(0, y + k z - k)`. Returns `x`
/// for `z = false` and `y` for `z = true` whenever `k >= max(x, y)`.
pub fn gate_forward(x: f64, y: f64, z: bool, k: f64) -> Result<f64, FoolError> {
    for v in [x, y] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(FoolError::GateInput(v));
        }
    }
    if !(k > 0.0 && k.is_finite()) || k < x.max(y) {
        return Err(FoolError::GateBound { k, bound: x.max(y) });
    }
    let z = if z { 1.0 } else { 0.0 };
    let b = (x - k * z).max(0.0);
    let c = (y + k * z - k).max(0.0);
    Ok(b + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selects_operand() {
        assert_eq!(gate_forward(0.3, 0.7, false, 1.0).unwrap(), 0.3);
        assert!((gate_forward(0.3, 0.7, true, 1.0).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_k() {
        assert!(matches!(gate_forward(0.9, 0.2, false, 0.5), Err(FoolError::GateBound { .. })));
        assert!(gate_forward(-0.1, 0.2, false, 1.0).is_err());
    }
}
