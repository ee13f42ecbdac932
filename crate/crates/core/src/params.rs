//! Named parameter storage and the forward-pass context that binds stored
//! tensors onto a tape.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};
use crate::nn::norm::{BatchNormState, BatchStats, DEFAULT_EPS};
use crate::nn::{Activation, Conv2dSpec, Mode};
use crate::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer and counted as a parameter.
    Learnable,
    /// State that is saved and loaded but not trained (running statistics).
    Buffer,
}

/// Name-ordered tensors of one network.
///
/// Batch-norm layers are registered by prefix; their affine parameters live
/// under `<prefix>.weight` / `<prefix>.bias` and their running statistics
/// under `<prefix>.running_mean` / `<prefix>.running_var` once present.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: BTreeMap<String, (ParamKind, Tensor<T>)>,
    bn_layers: BTreeMap<String, usize>,
}

pub fn running_mean_name(prefix: &str) -> String {
    format!("{prefix}.running_mean")
}

pub fn running_var_name(prefix: &str) -> String {
    format!("{prefix}.running_var")
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new(), bn_layers: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) -> Result<()> {
        ensure!(
            !self.entries.contains_key(name),
            Error::Contract(format!("parameter `{name}` registered twice"))
        );
        self.entries.insert(name.to_string(), (kind, value));
        Ok(())
    }

    /// Registers a batch-norm layer with γ = 1, β = 0 and no statistics.
    pub fn insert_bn(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert(&format!("{prefix}.weight"), ParamKind::Learnable, Tensor::ones(&[channels]))?;
        self.insert(&format!("{prefix}.bias"), ParamKind::Learnable, Tensor::zeros(&[channels]))?;
        self.bn_layers.insert(prefix.to_string(), channels);
        Ok(())
    }

    /// Conv weights drawn uniformly from `±1/√fan_in`, bias likewise.
    pub fn insert_conv(&mut self, prefix: &str, spec: &Conv2dSpec, transposed: bool, rng: &mut crate::Rng) -> Result<()> {
        spec.validate()?;
        let shape = if transposed { spec.transposed_weight_shape() } else { spec.weight_shape() };
        // fan_in follows dim 1 of the stored layout
        let fan_in = shape[1] * shape[2] * shape[3];
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        self.insert(&format!("{prefix}.weight"), ParamKind::Learnable, Tensor::uniform(&shape, -bound, bound, rng))?;
        if spec.has_bias {
            self.insert(
                &format!("{prefix}.bias"),
                ParamKind::Learnable,
                Tensor::uniform(&[spec.out_channels], -bound, bound, rng),
            )?;
        }
        Ok(())
    }

    /// Fully connected `[cin, cout]` weight and optional bias, `±1/√cin`.
    pub fn insert_linear(&mut self, prefix: &str, cin: usize, cout: usize, bias: bool, rng: &mut crate::Rng) -> Result<()> {
        let bound = 1.0 / libm::sqrt(cin as f64);
        self.insert(&format!("{prefix}.weight"), ParamKind::Learnable, Tensor::uniform(&[cin, cout], -bound, bound, rng))?;
        if bias {
            self.insert(&format!("{prefix}.bias"), ParamKind::Learnable, Tensor::uniform(&[cout], -bound, bound, rng))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|(_, t)| t)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|(k, _)| *k)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Mutable access; the caller must keep the shape.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|(_, t)| t)
    }

    /// Replaces a value, keeping its kind. Inserts a buffer if absent.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some((_, old)) => {
                ensure!(
                    old.shape() == value.shape(),
                    shape_err!("`{name}` has shape {:?}, new value {:?}", old.shape(), value.shape())
                );
                *old = value;
            }
            None => {
                self.entries.insert(name.to_string(), (ParamKind::Buffer, value));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.entries.iter().map(|(n, (k, t))| (n.as_str(), *k, t))
    }

    pub fn learnable_names(&self) -> Vec<String> {
        self.iter().filter(|(_, k, _)| *k == ParamKind::Learnable).map(|(n, _, _)| n.to_string()).collect()
    }

    /// Scalar count of learnable tensors; buffers are excluded.
    pub fn learnable_count(&self) -> usize {
        self.iter().filter(|(_, k, _)| *k == ParamKind::Learnable).map(|(_, _, t)| t.numel()).sum()
    }

    pub fn bn_layers(&self) -> impl Iterator<Item = (&str, usize)> {
        self.bn_layers.iter().map(|(p, c)| (p.as_str(), *c))
    }

    pub fn is_bn_layer(&self, prefix: &str) -> bool {
        self.bn_layers.contains_key(prefix)
    }

    /// Marks an existing prefix as a batch-norm layer (used when loading).
    pub fn mark_bn(&mut self, prefix: &str, channels: usize) {
        self.bn_layers.insert(prefix.to_string(), channels);
    }

    /// Running statistics of one layer as a [`BatchNormState`].
    pub fn bn_state(&self, prefix: &str) -> BatchNormState<T> {
        let mut s = BatchNormState::new();
        s.running_mean = self.get(&running_mean_name(prefix)).map(|t| t.data().to_vec());
        s.running_var = self.get(&running_var_name(prefix)).map(|t| t.data().to_vec());
        s
    }

    /// True when every batch-norm layer carries running statistics.
    pub fn has_running_stats(&self) -> bool {
        self.bn_layers
            .keys()
            .all(|p| self.contains(&running_mean_name(p)) && self.contains(&running_var_name(p)))
    }

    /// Sets every layer's running statistics to mean 0, variance 1.
    ///
    /// For timing and cost measurements on untrained weights only.
    pub fn init_identity_stats(&mut self) {
        let layers: Vec<(String, usize)> = self.bn_layers.iter().map(|(p, c)| (p.clone(), *c)).collect();
        for (p, c) in layers {
            self.entries.insert(running_mean_name(&p), (ParamKind::Buffer, Tensor::zeros(&[c])));
            self.entries.insert(running_var_name(&p), (ParamKind::Buffer, Tensor::ones(&[c])));
        }
    }

    /// Folds one forward pass worth of batch statistics into the buffers.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats<T>)], momentum: f64) -> Result<()> {
        for (prefix, st) in stats {
            ensure!(
                self.bn_layers.contains_key(prefix),
                Error::Contract(format!("`{prefix}` is not a batch-norm layer"))
            );
            let mut state = self.bn_state(prefix);
            state.momentum = momentum;
            state.update(&st.mean, &st.var);
            let c = st.mean.len();
            self.set(&running_mean_name(prefix), Tensor::from_vec(&[c], state.running_mean.unwrap())?)?;
            self.set(&running_var_name(prefix), Tensor::from_vec(&[c], state.running_var.unwrap())?)?;
        }
        Ok(())
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, (k, t))| (n.clone(), (*k, t.cast()))).collect(),
            bn_layers: self.bn_layers.clone(),
        }
    }
}

/// Forward-pass context.
///
/// Parameters are bound onto the tape lazily, once per name. In train mode
/// batch norm uses batch statistics and records them for a later
/// [`ParamStore::apply_bn_stats`]; in eval mode it reads the running buffers.
pub struct Graph<'a, T: Scalar = f32> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    mode: Mode,
    trainable: bool,
    bound: BTreeMap<String, Var>,
    used: BTreeSet<String>,
    stats: Vec<(String, BatchStats<T>)>,
    eps: f64,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            tape,
            params,
            mode,
            trainable: false,
            bound: BTreeMap::new(),
            used: BTreeSet::new(),
            stats: Vec::new(),
            eps: DEFAULT_EPS,
        }
    }

    /// Bind learnables as gradient-requiring leaves.
    pub fn trainable(mut self, on: bool) -> Self {
        self.trainable = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Uses `var` for `name` instead of the stored value.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.used.insert(name.to_string());
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let Some(value) = self.params.get(name) else {
            return Err(Error::Contract(format!("missing parameter `{name}`")));
        };
        let v = self.tape.leaf(value.clone(), self.trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv(&mut self, prefix: &str, x: Var, spec: &Conv2dSpec) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = if spec.has_bias { Some(self.param(&format!("{prefix}.bias"))?) } else { None };
        self.tape.conv2d(x, w, b, spec)
    }

    pub fn conv_transpose(&mut self, prefix: &str, x: Var, spec: &Conv2dSpec) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        self.tape.conv_transpose2d(x, w, spec)
    }

    pub fn linear(&mut self, prefix: &str, x: Var, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = if bias { Some(self.param(&format!("{prefix}.bias"))?) } else { None };
        self.tape.fully_connected(x, w, b)
    }

    pub fn bn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.weight"))?;
        let beta = self.param(&format!("{prefix}.bias"))?;
        match self.mode {
            Mode::Train => {
                let (y, st) = self.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                self.stats.push((prefix.to_string(), st));
                Ok(y)
            }
            Mode::Eval => {
                let (Some(mean), Some(var)) =
                    (self.params.get(&running_mean_name(prefix)), self.params.get(&running_var_name(prefix)))
                else {
                    return Err(Error::Contract(format!(
                        "batch norm `{prefix}` evaluated before running statistics were accumulated"
                    )));
                };
                self.tape.batch_norm_eval(x, gamma, beta, mean.data(), var.data(), self.eps)
            }
        }
    }

    /// Convolution, batch norm, then `act`, with `<prefix>` and `<bn>` names.
    pub fn conv_bn_act(&mut self, conv: &str, bn: &str, x: Var, spec: &Conv2dSpec, act: Activation) -> Result<Var> {
        let y = self.conv(conv, x, spec)?;
        let y = self.bn(bn, y)?;
        Ok(act.apply(self.tape, y))
    }

    /// Names consumed so far, in order.
    pub fn used(&self) -> &BTreeSet<String> {
        &self.used
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    /// Batch statistics recorded by train-mode batch norm.
    pub fn take_stats(&mut self) -> Vec<(String, BatchStats<T>)> {
        core::mem::take(&mut self.stats)
    }
}
