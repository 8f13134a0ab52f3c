//! Adam with explicit, checkpointable state.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
struct Slot {
    name: String,
    param: Var,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug)]
pub struct Adam {
    group: String,
    beta1: f64,
    beta2: f64,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    /// `group` prefixes the state records, e.g. `adam.g`.
    pub fn new<'a>(
        group: &str,
        params: impl IntoIterator<Item = &'a (String, Var)>,
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                Ok(Slot {
                    name: name.clone(),
                    param: var.clone(),
                    m: var.zeros_like()?,
                    v: var.zeros_like()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            group: group.to_string(),
            beta1,
            beta2,
            step: 0,
            slots,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn counter_name(&self) -> String {
        format!("{}.t", self.group)
    }

    /// One update at learning rate `lr`. Parameters absent from `grads` keep
    /// their value and moments.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.param.as_tensor()) else {
                continue;
            };
            // Gradients carry their op graph; moments built from them must not,
            // or every step would keep the previous step's graph alive.
            let g = g.detach();
            let g = &g;
            let m = ((&slot.m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((&slot.v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            if lr != 0.0 {
                let m_hat = (&m / bc1)?;
                let v_hat = (&v / bc2)?;
                let delta = (m_hat / (v_hat.sqrt()? + ADAM_EPS)?)?;
                let next = (slot.param.as_tensor() - (delta * lr)?)?;
                slot.param.set(&next)?;
            }
            slot.m = m.detach();
            slot.v = v.detach();
        }
        Ok(())
    }

    /// Moment records named `<group>.m.<param>` and `<group>.v.<param>`.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.slots
            .iter()
            .flat_map(|s| {
                [
                    (format!("{}.m.{}", self.group, s.name), s.m.clone()),
                    (format!("{}.v.{}", self.group, s.name), s.v.clone()),
                ]
            })
            .collect()
    }

    pub fn load_state(
        &mut self,
        step: u64,
        tensors: &std::collections::HashMap<String, Tensor>,
    ) -> Result<()> {
        for s in &mut self.slots {
            for (kind, dst) in [("m", &mut s.m), ("v", &mut s.v)] {
                let key = format!("{}.{kind}.{}", self.group, s.name);
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer record {key}")))?;
                if t.dims() != dst.dims() {
                    return Err(Error::shape(key, dst.dims(), t.dims()));
                }
                *dst = t.to_dtype(dst.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}
