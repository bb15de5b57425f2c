use super::{Matrix, Tape, TensorError, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// `(parameter, flat entry)` where the maximum was attained.
    pub worst_entry: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives a fresh tape and one parameter leaf per entry of
/// `params`, and must return a `1 x 1` variable. The relative error of an
/// entry is `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn check_gradients<F>(
    loss_fn: F,
    params: &[Matrix],
    epsilon: f64,
) -> Result<GradientCheck, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::BadEpsilon(epsilon));
    }
    let evaluate = |values: &[Matrix]| -> Result<(Tape, Vec<Var>, Var), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = loss_fn(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite(v));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = evaluate(params)?;
    let grads = tape.backward(out)?;

    let mut perturbed = params.to_vec();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst_entry: None,
        entries_checked: 0,
    };
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every param has a gradient entry");
        for e in 0..params[p].len() {
            let original = params[p].data()[e];
            perturbed[p].data_mut()[e] = original + epsilon;
            let (t_plus, _, o_plus) = evaluate(&perturbed)?;
            perturbed[p].data_mut()[e] = original - epsilon;
            let (t_minus, _, o_minus) = evaluate(&perturbed)?;
            perturbed[p].data_mut()[e] = original;

            let numeric =
                (t_plus.value(o_plus).item() - t_minus.value(o_minus).item()) / (2.0 * epsilon);
            let err = (analytic.data()[e] - numeric).abs() / numeric.abs().max(1e-8);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst_entry.is_none() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst_entry = Some((p, e));
            }
        }
    }
    Ok(report)
}
