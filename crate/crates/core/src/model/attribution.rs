//! Class-activation style attribution over time.

use super::least::LeastModel;
use crate::downstream::heads::HeadKind;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Per-timestep relevance of each record in `x: [B, L, T]` for logit
/// `target`: the gradient of that logit with respect to the patch
/// embedding, averaged over channels, clipped at zero, repeated over each
/// patch's samples and min-max scaled. A constant map scales to 0.5.
pub fn attribution_map(model: &LeastModel, x: &Tensor, target: usize) -> Result<Vec<Vec<f64>>> {
    let head = model.head.as_ref().ok_or_else(|| Error::Usage("attribution needs a classification head".into()))?;
    let HeadKind::Classification { labels } = head.spec.kind else {
        return Err(Error::Usage(format!("attribution needs a classification head, model has {}", head.spec.kind.task_name())));
    };
    if target >= labels {
        return Err(Error::Usage(format!("target label {target} out of range for {labels} labels")));
    }
    let mut t = Tape::new();
    let p = model.store.bind(&mut t, false);
    // a gradient-carrying input makes every activation downstream traceable
    let xv = t.leaf(x.clone(), true);
    let (logits, enc) = model.forward_head(&mut t, &p, xv)?;
    let b = t.shape(logits)[0];
    let mut pick = Tensor::zeros(&[b, labels]);
    for i in 0..b {
        pick.set(&[i, target], 1.0);
    }
    let pick = t.constant(pick);
    let sel = t.mul(logits, pick)?;
    let total = t.sum(sel);
    t.backward(total)?;
    let g = t.grad(enc.embedded).unwrap_or_else(|| Tensor::zeros(t.shape(enc.embedded)));
    let [_, n, c] = g.shape()[..] else {
        return Err(Error::Dimension(format!("unexpected embedding gradient shape {:?}", g.shape())));
    };
    let span = model.cfg.patch_span();
    Ok(g.data()
        .chunks(n * c)
        .map(|sample| {
            let per_patch: Vec<f64> = sample.chunks(c).map(|row| (row.iter().sum::<f64>() / c as f64).max(0.0)).collect();
            let up: Vec<f64> = per_patch.iter().flat_map(|&v| std::iter::repeat_n(v, span)).collect();
            min_max(&up)
        })
        .collect())
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.5; v.len()];
    }
    v.iter().map(|&x| (x - lo) / range).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::heads::HeadSpec;
    use crate::model::config::ModelConfig;

    fn input() -> Tensor {
        Tensor::new(vec![2, 2, 32], (0..128).map(|i| (i as f64 * 0.17).sin()).collect()).unwrap()
    }

    #[test]
    fn scores_are_unit_range_and_span_the_input() {
        let mut model = LeastModel::new(ModelConfig::miniature(), 3).unwrap();
        model.attach_head(HeadSpec::classification(2), 4).unwrap();
        let maps = attribution_map(&model, &input(), 1).unwrap();
        assert_eq!(maps.len(), 2);
        for m in maps {
            assert_eq!(m.len(), 32);
            assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_model_gives_constant_half() {
        let mut model = LeastModel::new(ModelConfig::miniature(), 3).unwrap();
        model.attach_head(HeadSpec::classification(2), 4).unwrap();
        for p in model.store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let maps = attribution_map(&model, &input(), 0).unwrap();
        assert!(maps.iter().flatten().all(|&v| v == 0.5));
    }

    #[test]
    fn missing_head_is_a_usage_error() {
        let model = LeastModel::new(ModelConfig::miniature(), 3).unwrap();
        assert!(matches!(attribution_map(&model, &input(), 0), Err(Error::Usage(_))));
    }
}
