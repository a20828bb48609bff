use crate::error::Result;
use crate::models::batch::Batch;
use crate::models::loss::{compute_loss, evaluate};
use crate::models::model::DialogueModel;
use crate::numerics::relative_error;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Compares the analytic gradient of the mean batch loss against central
/// differences for every entry of every trainable tensor.
pub fn check_gradients<T: Scalar>(
    batch: &Batch,
    model: &DialogueModel<T>,
    eps: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let (_, grads) = compute_loss(batch, model, crate::models::LossScope::All)?;
    let names: Vec<String> = model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grad_tensors: Vec<Vec<T>> = grads
        .named_tensors()
        .into_iter()
        .map(|(_, m)| m.as_slice().to_vec())
        .collect();
    let skip = usize::from(!model.params.embedding.is_trainable());
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let eps_t = T::of(eps);
    for k in skip..names.len() {
        for i in 0..grad_tensors[k].len() {
            let original = probe.params.tensors_mut()[k].as_slice()[i];
            probe.params.tensors_mut()[k].as_mut_slice()[i] = original + eps_t;
            let plus = evaluate(batch, &probe)?.loss;
            probe.params.tensors_mut()[k].as_mut_slice()[i] = original - eps_t;
            let minus = evaluate(batch, &probe)?.loss;
            probe.params.tensors_mut()[k].as_mut_slice()[i] = original;
            let numeric = (plus - minus) / (eps_t + eps_t);
            let err = relative_error(grad_tensors[k][i], numeric, T::of(floor)).as_f64();
            out.checked += 1;
            if err > out.max_relative_error || out.worst.is_empty() {
                out.max_relative_error = err;
                out.worst = format!("{}[{i}]", names[k]);
            }
        }
    }
    Ok(out)
}
