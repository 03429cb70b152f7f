use crate::error::{Result, TensorError};
use crate::params::{GradientMap, ParamSet};

/// AdamW hyperparameters. Defaults follow the MAR-style recipe used across
/// this workspace: beta1 = 0.9, beta2 = 0.95, decoupled weight decay 0.02.
#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub eps: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.02,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the shared step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(cfg: AdamWConfig) -> Self {
        OptimizerState {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update over a whole parameter set.
///
/// Gradient entries are matched to parameters by name and must have
/// identical shapes. The step counter increments once per call.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &GradientMap,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(TensorError::contract(format!(
            "gradient map has {} entries, parameter set has {}",
            grads.len(),
            params.len()
        )));
    }
    if state.m.is_empty() {
        for (_, t) in params.iter() {
            state.m.push(vec![0.0; t.numel()]);
            state.v.push(vec![0.0; t.numel()]);
        }
    }
    state.step += 1;
    let cfg = state.cfg;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for (idx, name) in names.iter().enumerate() {
        let (grad_name, grad) = grads.entry(idx);
        if grad_name != name {
            return Err(TensorError::contract(format!(
                "gradient order mismatch: {grad_name} vs {name}"
            )));
        }
        let id = crate::params::ParamId::from_index(idx);
        let tensor = params.get_mut(id);
        if tensor.shape() != grad.shape() {
            return Err(TensorError::shape(
                "adamw_step",
                format!("{name}: {:?} vs {:?}", tensor.shape(), grad.shape()),
            ));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * data[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn grad_map_for(params: &ParamSet, grads: &[(&str, Vec<f32>)]) -> GradientMap {
        use crate::tape::Tape;
        // Build via a throwaway tape so entry order matches the set.
        let mut tape: Tape<f32> = Tape::new();
        let ids = params.leaf_all(&mut tape).unwrap();
        // Construct a loss of sum(g .* p) so backward yields exactly `g`.
        let mut terms = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let (name, t) = params.iter().nth(i).unwrap();
            let g = grads.iter().find(|(n, _)| *n == name).unwrap().1.clone();
            let gleaf = tape
                .leaf_raw(t.shape().to_vec(), g, false)
                .unwrap();
            let prod = tape.mul(id, gleaf).unwrap();
            terms.push(tape.sum_all(prod).unwrap());
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = tape.add(loss, t).unwrap();
        }
        let back = tape.backward(loss).unwrap();
        params.gradient_map(&ids, &back).unwrap()
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        let grads = grad_map_for(&params, &[("w", vec![0.0, 0.0])]);
        let mut state = OptimizerState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        adamw_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.by_name("w").unwrap().data(), &[1.5, -2.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Bias correction makes the very first update ≈ lr * sign(g).
        let mut params = ParamSet::new();
        params.add("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        let grads = grad_map_for(&params, &[("w", vec![1.0])]);
        let mut state = OptimizerState::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        });
        adamw_step(&mut params, &grads, &mut state).unwrap();
        let w = params.by_name("w").unwrap().data()[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::new(vec![1], vec![2.0]).unwrap());
        let grads = grad_map_for(&params, &[("w", vec![0.0])]);
        let mut state = OptimizerState::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.1,
            ..Default::default()
        });
        adamw_step(&mut params, &grads, &mut state).unwrap();
        let w = params.by_name("w").unwrap().data()[0];
        // p <- p - lr * wd * p = p * (1 - 0.01)
        assert!((w - 2.0 * 0.99).abs() < 1e-6, "w = {w}");
    }
}
