use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

/// Adam with bias correction; moments are kept per trainable parameter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let m: Vec<Tensor<T>> = store
            .trainable_ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let ids: Vec<_> = store.trainable_ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = store.grad(id).clone();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.value_mut(id);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let mh = m.to_f64().unwrap() / bc1;
                let vh = v.to_f64().unwrap() / bc2;
                *p -= T::lit(lr * mh / (vh.sqrt() + self.eps));
            }
        }
    }

    /// Moment tensors named after their parameters, plus the step count.
    pub fn state_tensors(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<f32>)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f32))];
        for (k, id) in store.trainable_ids().enumerate() {
            let name = store.name(id);
            out.push((format!("adam.m.{name}"), self.m[k].cast()));
            out.push((format!("adam.v.{name}"), self.v[k].cast()));
        }
        out
    }

    pub fn from_state_tensors(store: &ParamStore<T>, tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::corrupt("checkpoint", format!("missing optimizer tensor {name}")))
        };
        let mut adam = Self::new(store);
        adam.step = find("adam.step")?.item() as u64;
        for (k, id) in store.trainable_ids().enumerate() {
            let name = store.name(id);
            for (prefix, dst) in [("m", &mut adam.m[k]), ("v", &mut adam.v[k])] {
                let t = find(&format!("adam.{prefix}.{name}"))?;
                if t.shape() != dst.shape() {
                    return Err(Error::corrupt("checkpoint", format!("optimizer tensor for {name} has wrong shape")));
                }
                *dst = t.cast();
            }
        }
        Ok(adam)
    }
}
