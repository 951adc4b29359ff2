use super::{DiffError, Module, Tape, Var};

/// A scalar function of a module's parameters, written once and evaluated in
/// any precision.
pub trait Objective<M: Module> {
    fn eval<T: super::Real>(&self, module: &M, tape: &mut Tape<T>, params: &[Var]) -> Result<Var, DiffError>;
}

/// Compares reverse-mode gradients with central finite differences.
///
/// Both sides are evaluated on an `f64` tape so rounding noise stays far
/// below the comparison tolerance. Returns the maximum over parameters of
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn finite_diff_check<M: Module, O: Objective<M>>(module: &M, objective: &O, h: f64) -> Result<f64, DiffError> {
    finite_diff_check_sampled(module, objective, h, usize::MAX)
}

/// Like [`finite_diff_check`], but probes at most `per_tensor` evenly spaced
/// entries of each parameter tensor.
pub fn finite_diff_check_sampled<M: Module, O: Objective<M>>(
    module: &M,
    objective: &O,
    h: f64,
    per_tensor: usize,
) -> Result<f64, DiffError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DiffError::Config(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let base: Vec<Vec<f64>> = module
        .params()
        .iter()
        .map(|p| p.data().iter().map(|&v| v as f64).collect())
        .collect();
    let shapes: Vec<Vec<usize>> = module.params().iter().map(|p| p.shape().to_vec()).collect();

    let eval = |values: &[Vec<f64>], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>), DiffError> {
        let mut tape = Tape::<f64>::default();
        let vars = values
            .iter()
            .zip(&shapes)
            .map(|(v, s)| tape.variable_native(s, v.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = objective.eval(module, &mut tape, &vars)?;
        let value = tape.scalar_native(loss);
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(loss)?;
            grads = vars
                .iter()
                .zip(values)
                .map(|(&v, vals)| {
                    tape.grad(v)
                        .map(|g| g.to_vec())
                        .unwrap_or_else(|| vec![0.0; vals.len()])
                })
                .collect();
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(&base, true)?;
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for (j, tensor) in base.iter().enumerate() {
        let n = tensor.len();
        let stride = if per_tensor >= n { 1 } else { n.div_ceil(per_tensor) };
        for i in (0..n).step_by(stride.max(1)) {
            probe[j][i] = tensor[i] + h;
            let (plus, _) = eval(&probe, false)?;
            probe[j][i] = tensor[i] - h;
            let (minus, _) = eval(&probe, false)?;
            probe[j][i] = tensor[i];
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic[j][i] - numeric).abs() / (numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
