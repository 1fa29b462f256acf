use super::{AutodiffError, Graph, Tensor, Var};

/// Largest relative disagreement between analytic and central-difference
/// gradients of a scalar function of one tensor.
///
/// The error at each coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(mut f: F, inputs: &[Tensor], h: f64) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    let value = scalar_value(&graph, loss)?;
    if value.is_nan() {
        return Err(AutodiffError::NonFinite("function returned NaN".into()));
    }
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (slot, grad) in analytic.iter().enumerate() {
        for i in 0..probe[slot].numel() {
            let numeric = central_difference(&mut f, &mut probe, slot, i, h)?;
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for coordinate `index` of input `slot`.
/// `inputs` is restored before returning.
pub fn central_difference<F>(
    f: &mut F,
    inputs: &mut [Tensor],
    slot: usize,
    index: usize,
    h: f64,
) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let original = inputs[slot].data()[index];
    inputs[slot].data_mut()[index] = original + h;
    let plus = evaluate(f, inputs);
    inputs[slot].data_mut()[index] = original - h;
    let minus = evaluate(f, inputs);
    inputs[slot].data_mut()[index] = original;
    let (plus, minus) = (plus?, minus?);
    if plus.is_nan() || minus.is_nan() {
        return Err(AutodiffError::NonFinite(format!(
            "function returned NaN while perturbing input {slot}[{index}]"
        )));
    }
    Ok((plus - minus) / (2.0 * h))
}

fn evaluate<F>(f: &mut F, inputs: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    scalar_value(&graph, out)
}

fn scalar_value(graph: &Graph, var: Var) -> Result<f64, AutodiffError> {
    graph
        .value(var)
        .item()
        .ok_or_else(|| AutodiffError::NonScalarLoss(graph.shape(var).to_vec()))
}
