use crate::config::TrainConfig;
use crate::nn::ParamSet;
use crate::tensor::Tensor;

/// Adaptive moment estimation with optional global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ParamSet<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            clip: cfg.clip.then_some(cfg.clip_norm),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from per-parameter gradients, returning the
    /// gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>]) -> f64 {
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64 * scale;
                let m_new = b1 * *mi as f64 + (1.0 - b1) * gi;
                let v_new = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                *w = (*w as f64 - step * m_new / (v_new.sqrt() + self.eps)) as f32;
            }
        }
        norm
    }
}
