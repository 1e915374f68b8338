use std::path::Path;

use crate::error::{bail, Result};
use crate::transformer::{checkpoint, Transformer};

/// Element-wise mean of the parameters of `models`.
pub fn average_models(models: &[Transformer<f32>]) -> Result<Transformer<f32>> {
    let Some(first) = models.first() else {
        bail!(Parameter, "no checkpoints to average");
    };
    for m in &models[1..] {
        if m.config() != first.config() || m.params().len() != first.params().len() {
            bail!(Format, "checkpoints have different model configurations");
        }
        for ((_, a), (_, b)) in first.params().iter().zip(m.params().iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                bail!(Format, "parameter '{}' {:?} does not match '{}' {:?}", a.name, a.value.shape(), b.name, b.value.shape());
            }
        }
    }
    // Accumulate in f64 so the mean does not depend on checkpoint order rounding.
    let mut out = first.clone();
    let n = models.len() as f64;
    for (k, p) in out.params_mut().iter_mut().enumerate() {
        let mut acc: Vec<f64> = vec![0.0; p.value.len()];
        for m in models {
            let (_, q) = m.params().iter().nth(k).expect("same length");
            for (a, &v) in acc.iter_mut().zip(q.value.data()) {
                *a += v as f64;
            }
        }
        for (w, a) in p.value.data_mut().iter_mut().zip(acc) {
            *w = (a / n) as f32;
        }
    }
    Ok(out)
}

/// Loads checkpoint files and averages the last `k` of them.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P], k: usize) -> Result<Transformer<f32>> {
    if paths.is_empty() || k == 0 {
        bail!(Parameter, "need at least one checkpoint and k >= 1");
    }
    let start = paths.len().saturating_sub(k);
    let models = paths[start..].iter().map(|p| checkpoint::load_checkpoint(p.as_ref())).collect::<Result<Vec<_>>>()?;
    average_models(&models)
}
