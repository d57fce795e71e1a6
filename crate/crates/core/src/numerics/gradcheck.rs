use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at the given point.
/// The result is `max_i |analytic_i − fd_i| / max(1, |fd_i|)`.
pub fn grad_check<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_components(f, x, h, &all)
}

/// [`grad_check`] restricted to the listed components.
pub fn grad_check_components<F>(mut f: F, x: &[f64], h: f64, components: &[usize]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let (v0, analytic) = f(x)?;
    if !v0.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    if analytic.len() != x.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in components {
        let orig = probe[i];
        probe[i] = orig + h;
        let (fp, _) = f(&probe)?;
        probe[i] = orig - h;
        let (fm, _) = f(&probe)?;
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite value while probing component {i}")));
        }
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
