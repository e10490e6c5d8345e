//! The three trainable networks: the colorizer stub (full-image baseline and
//! per-band variants), the gated artifact-removal U-Net, and the
//! mean-conditioned cast corrector.
//!
//! Every model enumerates its parameters once, in `visit` order; binding
//! leaves onto a graph, pulling gradients back, snapshotting, and the
//! forward pass all consume parameters in that same order.

mod cast;
mod seb;
mod stub;
mod unet;

pub use cast::{means_tensor, CastConfig, CastModel};
pub use seb::{seb_block_on, seb_gate_on, SebParams};
pub use stub::{StubConfig, StubModel};
pub use unet::{UNetConfig, UNetModel};

use std::collections::BTreeMap;
use std::path::Path;

use crate::rng::SeededRng;
use crate::tensor::{
    read_snapshot_file, write_snapshot_file, Graph, Scalar, Tensor, TensorError, TensorId,
};
use crate::{Error, Result};

/// Ordered, named access to a model's parameter tensors.
pub trait ModelParams<S: Scalar> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>));
    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<S>));

    fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |name, t| out.push((name, t)));
        out
    }

    fn param_refs(&self) -> Vec<&Tensor<S>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn named_param_clones(&self) -> Vec<(String, Tensor<S>)> {
        self.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    fn param_entry_count(&self) -> usize {
        self.param_refs().iter().map(|t| t.numel()).sum()
    }

    /// Insert every parameter as a graph leaf, in visit order. Training
    /// binds tracked leaves; frozen models bind detached ones.
    fn bind(&self, g: &mut Graph<S>, train: bool) -> Vec<TensorId> {
        let mut ids = Vec::new();
        self.visit(&mut |_, t| {
            ids.push(if train { g.leaf(t) } else { g.leaf_detached(t) });
        });
        ids
    }

    /// Copy gradients from bound leaves back into the parameter tensors.
    fn apply_grads(
        &mut self,
        g: &Graph<S>,
        ids: &[TensorId],
    ) -> std::result::Result<(), TensorError> {
        let mut i = 0;
        let mut missing = None;
        self.visit_mut(&mut |name, t| {
            match g.grad(ids[i]) {
                Some(grad) => t.set_grad(Some(grad.to_vec())),
                None => {
                    if missing.is_none() {
                        missing = Some(name);
                    }
                }
            }
            i += 1;
        });
        match missing {
            Some(name) => Err(TensorError::MissingGrad(name)),
            None => Ok(()),
        }
    }

    /// Bitwise fingerprint of all parameter values, for freeze/reuse checks.
    fn param_bits(&self) -> Vec<u32> {
        let mut bits = Vec::new();
        self.visit(&mut |_, t| {
            bits.extend(t.data().iter().map(|v| (v.to_f64() as f32).to_bits()));
        });
        bits
    }
}

/// Save a model's parameters in the snapshot format.
pub fn save_params<S: Scalar, M: ModelParams<S>>(model: &M, path: &Path) -> Result<()> {
    let named = model.named_params();
    write_snapshot_file(path, &named)?;
    Ok(())
}

/// Replace a model's parameter values from a snapshot, matching by name and
/// shape.
pub fn load_params<M: ModelParams<f32>>(model: &mut M, path: &Path) -> Result<()> {
    let entries = read_snapshot_file(path)?;
    let mut by_name: BTreeMap<String, Tensor<f32>> = entries.into_iter().collect();
    let mut problem = None;
    model.visit_mut(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match by_name.remove(&name) {
            Some(loaded) if loaded.shape() == t.shape() => {
                let requires = t.requires_grad();
                *t = if requires { loaded.with_grad() } else { loaded };
            }
            Some(loaded) => {
                problem = Some(format!(
                    "parameter '{name}': snapshot shape {:?}, model expects {:?}",
                    loaded.shape(),
                    t.shape()
                ));
            }
            None => problem = Some(format!("parameter '{name}' missing from snapshot")),
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Model(msg));
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Model(format!("snapshot carries unknown parameter '{extra}'")));
    }
    Ok(())
}

/// Convolution weights plus bias.
#[derive(Debug, Clone)]
pub struct Conv<S: Scalar = f32> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Conv<S> {
    pub fn init(c_in: usize, c_out: usize, k: usize, rng: &mut SeededRng) -> Self {
        let fan_in = c_in * k * k;
        Self {
            w: Tensor::uniform_init(vec![c_out, c_in, k, k], fan_in, rng).with_grad(),
            b: Tensor::zeros(vec![c_out]).with_grad(),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            w: Tensor::zeros(vec![c_out, c_in, k, k]).with_grad(),
            b: Tensor::zeros(vec![c_out]).with_grad(),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<S>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

/// Hands out bound parameter ids in visit order during a forward pass.
pub struct ParamCursor<'a> {
    ids: &'a [TensorId],
    next: usize,
}

impl<'a> ParamCursor<'a> {
    pub fn new(ids: &'a [TensorId]) -> Self {
        Self { ids, next: 0 }
    }

    pub fn take(&mut self) -> TensorId {
        let id = self.ids[self.next];
        self.next += 1;
        id
    }

    /// Take a conv's weight and bias and apply it at stride 1.
    pub fn conv<S: Scalar>(
        &mut self,
        g: &mut Graph<S>,
        x: TensorId,
        padding: usize,
    ) -> std::result::Result<TensorId, TensorError> {
        let w = self.take();
        let b = self.take();
        g.conv2d(x, w, b, 1, padding)
    }

    pub fn conv_relu<S: Scalar>(
        &mut self,
        g: &mut Graph<S>,
        x: TensorId,
        padding: usize,
    ) -> std::result::Result<TensorId, TensorError> {
        let y = self.conv(g, x, padding)?;
        g.relu(y)
    }

    pub fn finish(self) {
        debug_assert_eq!(self.next, self.ids.len(), "forward must consume every bound parameter");
    }
}

pub(crate) fn check_divisible(h: usize, w: usize, multiple: usize, model: &str) -> Result<()> {
    if !h.is_multiple_of(multiple) || !w.is_multiple_of(multiple) {
        return Err(Error::Model(format!(
            "{model} requires spatial extents divisible by {multiple}, got {h}x{w}"
        )));
    }
    Ok(())
}
