use super::graph::NnError;
use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments start at zero; `t` counts completed
/// steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every parameter with a gradient. Parameters with `None`
    /// (frozen, or unused in this batch) keep their values and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<(), NnError> {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.t += 1;
        for (id, grad) in store.ids().zip(grads) {
            let Some(grad) = grad else { continue };
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(grad.rows(), grad.cols()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(grad.rows(), grad.cols()));
            adam_update(&mut p.value, grad, m, v, self.t, &self.config)?;
        }
        Ok(())
    }
}

/// The update rule on a single tensor at (already incremented) step `t`.
pub fn adam_update(
    theta: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    for other in [grad.shape(), m.shape(), v.shape()] {
        if other != theta.shape() {
            return Err(NnError::ShapeMismatch {
                op: "adam",
                left: theta.shape(),
                right: other,
            });
        }
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (md, vd) = (m.data_mut(), v.data_mut());
    for (i, (th, &g)) in theta.data_mut().iter_mut().zip(grad.data()).enumerate() {
        md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
        vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = md[i] / bc1;
        let v_hat = vd[i] / bc2;
        *th -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}
