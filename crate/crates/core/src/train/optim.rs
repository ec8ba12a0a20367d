use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Param;

/// AdamW moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptState {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        OptState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay. Decay applies only to
/// parameters whose `decay` flag is set.
pub fn adamw_step(
    params: &mut [Param],
    grads: &[Vec<f64>],
    state: &mut OptState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer got {} gradients and {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    if let Some(p) = params
        .iter()
        .zip(grads)
        .zip(&state.m)
        .find(|((p, g), m)| p.tensor.numel() != g.len() || m.len() != g.len())
    {
        return Err(Error::Config(format!(
            "gradient shape mismatch for parameter {}",
            p.0 .0.name
        )));
    }

    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x = *x - lr * m_hat / (v_hat.sqrt() + cfg.eps_adam) - lr * wd * *x;
        }
    }
    Ok(())
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, decay: bool) -> Vec<Param> {
        vec![Param {
            name: "p".into(),
            tensor: Tensor::scalar(v),
            decay,
        }]
    }

    #[test]
    fn pure_decay() {
        let mut p = scalar(1.0, true);
        let cfg = TrainConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut st = OptState::new(&p);
        adamw_step(&mut p, &[vec![0.0]], &mut st, 0.1, &cfg).unwrap();
        assert!((p[0].tensor.data()[0] - 0.999).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn decay_flag_respected() {
        let mut p = scalar(1.0, false);
        let cfg = TrainConfig::default();
        let mut st = OptState::new(&p);
        adamw_step(&mut p, &[vec![0.0]], &mut st, 0.1, &cfg).unwrap();
        assert_eq!(p[0].tensor.data()[0], 1.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0, true);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptState::new(&p);
        adamw_step(&mut p, &[vec![0.5]], &mut st, 0.1, &cfg).unwrap();
        assert!((p[0].tensor.data()[0] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar(0.0, true);
        let mut st = OptState::new(&p);
        let cfg = TrainConfig::default();
        assert!(adamw_step(&mut p, &[vec![0.0, 1.0]], &mut st, 0.1, &cfg).is_err());
        assert!(adamw_step(&mut p, &[], &mut st, 0.1, &cfg).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut g = vec![vec![0.3]];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0][0], 0.3);
    }
}
