//! Value estimation and the value-function barrier `h(x) = ξ - V̂(x)`.
//!
//! Pipeline: Monte-Carlo discounted cost-to-go targets under a policy
//! (`mc_cost_to_go`, `collect_dataset`), a small tanh MLP fitted by
//! full-batch Adam (`fit_value`), and the barrier wrapper used by the
//! safety filters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{JointState, MasSystem, StateBox, UncertaintySample};
use crate::error::{Error, Result};
use crate::policy::{FeedbackPolicy, Policy};
use crate::seed;

/// Scalar state-value estimate.
pub trait ValueFunction: Sync {
    fn value(&self, x: &JointState) -> Result<f64>;
}

impl<T: ValueFunction + ?Sized> ValueFunction for &T {
    fn value(&self, x: &JointState) -> Result<f64> {
        (**self).value(x)
    }
}

/// `V(x) = c` everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn value(&self, _x: &JointState) -> Result<f64> {
        Ok(self.0)
    }
}

/// Barrier built from a value function and a sublevel threshold ξ.
#[derive(Debug, Clone)]
pub struct Barrier<V> {
    pub value: V,
    pub xi: f64,
}

impl<V: ValueFunction> Barrier<V> {
    pub fn new(value: V, xi: f64) -> Self {
        Self { value, xi }
    }

    /// `h(x) = ξ - V(x)`.
    pub fn h(&self, x: &JointState) -> Result<f64> {
        Ok(self.xi - self.value.value(x)?)
    }

    /// `V(x) <= ξ`, equivalently `h(x) >= 0`.
    pub fn in_sublevel(&self, x: &JointState) -> Result<bool> {
        Ok(self.value.value(x)? <= self.xi)
    }
}

/// Average over `n_samples` rollouts of `Σ_{k=1..H} γ^k c(x_k)`.
///
/// Rollout `r` draws θ and its noise sequence from `derive(seed, r)`, so
/// estimates for different horizons share their random prefix.
pub fn mc_cost_to_go<S, P>(
    system: &S,
    policy: &P,
    x: &JointState,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64>
where
    S: MasSystem + ?Sized,
    P: FeedbackPolicy + ?Sized,
{
    if n_samples == 0 {
        return Err(Error::contract("cost-to-go needs at least one sample"));
    }
    system.check_state(x)?;
    let gamma = system.gamma();
    let mut total = 0.0;
    for r in 0..n_samples {
        let mut rng = seed::rng(seed::derive(seed, r as u64));
        let theta = system.sample_uncertainty_with(&mut rng).theta;
        let mut state = x.clone();
        let mut discount = 1.0;
        let mut sum = 0.0;
        for _ in 0..horizon {
            let u = policy.act(&state)?;
            let s = UncertaintySample {
                theta,
                noise: system.sample_noise(&mut rng),
            };
            state = system.step(&state, &u, &s)?;
            discount *= gamma;
            sum += discount * system.cost(&state);
        }
        total += sum;
    }
    Ok(total / n_samples as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDataset {
    pub states: Vec<JointState>,
    pub targets: Vec<f64>,
}

impl ValueDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `n_states` rows of (state ~ `sampler`, Monte-Carlo cost-to-go target).
/// Row `r` depends only on `derive(seed, r)`; rows are computed in parallel.
pub fn collect_dataset<S, P>(
    system: &S,
    policy: &P,
    n_states: usize,
    horizon: usize,
    n_samples: usize,
    seed: u64,
    sampler: &StateBox,
) -> Result<ValueDataset>
where
    S: MasSystem + ?Sized,
    P: FeedbackPolicy + ?Sized,
{
    if n_states == 0 {
        return Err(Error::contract("dataset needs at least one state"));
    }
    let rows: Vec<(JointState, f64)> = (0..n_states)
        .into_par_iter()
        .map(|r| {
            let row_seed = seed::derive(seed, r as u64);
            let x = sampler.sample(system, &mut seed::rng(seed::derive(row_seed, 0)));
            let target =
                mc_cost_to_go(system, policy, &x, horizon, n_samples, seed::derive(row_seed, 1))?;
            Ok((x, target))
        })
        .collect::<Result<_>>()?;
    let (states, targets) = rows.into_iter().unzip();
    Ok(ValueDataset { states, targets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 1500,
            learning_rate: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out x in`
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Fitted value approximator: normalized inputs, tanh hidden layers,
/// linear output rescaled to target units and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    layers: Vec<Layer>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    target_mean: f64,
    target_std: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub seed: u64,
    pub train_mse: f64,
}

impl ValueModel {
    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    /// `[input, hidden..., 1]`
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.bias.len()))
            .collect()
    }

    fn forward_one(&self, input: &[f64]) -> f64 {
        let mut a: Vec<f64> = input
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let next: Vec<f64> = layer
                .weights
                .outer_iter()
                .zip(layer.bias.iter())
                .map(|(row, b)| {
                    let z = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b;
                    if k == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            a = next;
        }
        (a[0] * self.target_std + self.target_mean).max(0.0)
    }
}

impl ValueFunction for ValueModel {
    fn value(&self, x: &JointState) -> Result<f64> {
        let input = x.flatten();
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "value model expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(self.forward_one(&input))
    }
}

pub fn eval_value(model: &ValueModel, x: &JointState) -> Result<f64> {
    model.value(x)
}

pub fn barrier_value<V: ValueFunction>(barrier: &Barrier<V>, x: &JointState) -> Result<f64> {
    barrier.h(x)
}

fn column_stats(data: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = data.nrows() as f64;
    data.axis_iter(Axis(1))
        .map(|col| {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            (m, if s > 1e-12 { s } else { 1.0 })
        })
        .unzip()
}

struct Adam {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer]) -> Self {
        let zeros = || {
            layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[(Array2<f64>, Array1<f64>)], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[k];
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            ndarray::Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(gw)
                .for_each(|p, m, v, &g| {
                    *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                    *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(gb)
                .for_each(|p, m, v, &g| {
                    *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                    *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

/// Fit the approximator to `dataset` by full-batch Adam on the mean squared
/// error of normalized targets. Deterministic in (`dataset`, `cfg`, `seed`).
pub fn fit_value(dataset: &ValueDataset, cfg: &ApproxConfig, seed: u64) -> Result<ValueModel> {
    fit_value_with(dataset, cfg, seed, 0.99, 0)
}

/// As [`fit_value`], recording the discount and horizon the targets were built with.
pub fn fit_value_with(
    dataset: &ValueDataset,
    cfg: &ApproxConfig,
    seed: u64,
    gamma: f64,
    horizon: usize,
) -> Result<ValueModel> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot fit an empty dataset"));
    }
    if dataset.targets.len() != dataset.states.len() {
        return Err(Error::contract("dataset states and targets differ in length"));
    }
    if let Some(t) = dataset.targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("target {t}")));
    }
    if cfg.hidden.contains(&0) {
        return Err(Error::config("hidden layer of width 0"));
    }
    let dim = dataset.states[0].flatten().len();
    let n = dataset.len();
    let mut inputs = Array2::<f64>::zeros((n, dim));
    for (r, x) in dataset.states.iter().enumerate() {
        let flat = x.flatten();
        if flat.len() != dim {
            return Err(Error::contract("dataset states differ in dimension"));
        }
        inputs.row_mut(r).assign(&Array1::from(flat));
    }
    let (input_mean, input_std) = column_stats(&inputs);
    for mut row in inputs.rows_mut() {
        for (d, v) in row.iter_mut().enumerate() {
            *v = (*v - input_mean[d]) / input_std[d];
        }
    }
    let targets = Array1::from(dataset.targets.clone());
    let target_mean = targets.sum() / n as f64;
    let target_var = targets.iter().map(|t| (t - target_mean).powi(2)).sum::<f64>() / n as f64;
    let target_std = if target_var.sqrt() > 1e-12 {
        target_var.sqrt()
    } else {
        1.0
    };
    let y = targets.mapv(|t| (t - target_mean) / target_std);

    // Xavier-normal hidden weights, zero output layer and biases.
    let mut rng = seed::rng(seed);
    let sizes: Vec<usize> = std::iter::once(dim)
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let n_layers = sizes.len() - 1;
    let mut layers: Vec<Layer> = sizes
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let scale = if k + 1 == n_layers {
                0.0
            } else {
                (2.0 / (w[0] + w[1]) as f64).sqrt()
            };
            Layer {
                weights: Array2::from_shape_fn((w[1], w[0]), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
                bias: Array1::zeros(w[1]),
            }
        })
        .collect();

    let mut adam = Adam::new(&layers);
    let last = layers.len() - 1;
    for _ in 0..cfg.epochs {
        // forward, keeping activations
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers.len() + 1);
        acts.push(inputs.clone());
        for (k, layer) in layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.weights.t());
            z += &layer.bias;
            if k != last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        let pred = acts[layers.len()].column(0).to_owned();
        // d(mean sq err)/d(pred)
        let mut delta: Array2<f64> = ((&pred - &y) * (2.0 / n as f64)).insert_axis(Axis(1));
        let mut grads = Vec::with_capacity(layers.len());
        for k in (0..layers.len()).rev() {
            let gw = delta.t().dot(&acts[k]);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&layers[k].weights);
                ndarray::Zip::from(&mut back)
                    .and(&acts[k])
                    .for_each(|d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        adam.step(&mut layers, &grads, cfg.learning_rate);
    }

    let mut model = ValueModel {
        layers,
        input_mean,
        input_std,
        target_mean,
        target_std,
        gamma,
        horizon,
        seed,
        train_mse: 0.0,
    };
    model.train_mse = dataset
        .states
        .iter()
        .zip(&dataset.targets)
        .map(|(x, t)| model.value(x).map(|v| (v - t).powi(2)))
        .sum::<Result<f64>>()?
        / n as f64;
    Ok(model)
}

/// Magic bytes of the model container.
pub const MAGIC: &[u8; 4] = b"MSVF";
pub const FORMAT_VERSION: u32 = 1;

/// Value model plus the named policies it was trained with, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub value: ValueModel,
    pub policies: Vec<(String, Policy)>,
}

impl ModelBundle {
    pub fn policy(&self, name: &str) -> Option<&Policy> {
        self.policies.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let v = &self.value;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let sizes = v.layer_sizes();
        w.write_u32::<LittleEndian>(sizes.len() as u32)?;
        for s in &sizes {
            w.write_u32::<LittleEndian>(*s as u32)?;
        }
        w.write_f64::<LittleEndian>(v.gamma)?;
        w.write_u64::<LittleEndian>(v.horizon as u64)?;
        w.write_u64::<LittleEndian>(v.seed)?;
        w.write_f64::<LittleEndian>(v.train_mse)?;
        for x in v.input_mean.iter().chain(&v.input_std) {
            w.write_f64::<LittleEndian>(*x)?;
        }
        w.write_f64::<LittleEndian>(v.target_mean)?;
        w.write_f64::<LittleEndian>(v.target_std)?;
        for layer in &v.layers {
            for x in layer.weights.iter().chain(layer.bias.iter()) {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        w.write_u32::<LittleEndian>(self.policies.len() as u32)?;
        for (name, p) in &self.policies {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            p.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a value model file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let n_sizes = r.read_u32::<LittleEndian>()? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(Error::Format(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes)
            .map(|_| r.read_u32::<LittleEndian>().map(|s| s as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 16) || sizes[n_sizes - 1] != 1 {
            return Err(Error::Format(format!("bad layer sizes {sizes:?}")));
        }
        let gamma = r.read_f64::<LittleEndian>()?;
        let horizon = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let train_mse = r.read_f64::<LittleEndian>()?;
        let read_vec = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| r.read_f64::<LittleEndian>().map_err(Error::from))
                .collect()
        };
        let input_mean = read_vec(r, sizes[0])?;
        let input_std = read_vec(r, sizes[0])?;
        let target_mean = r.read_f64::<LittleEndian>()?;
        let target_std = r.read_f64::<LittleEndian>()?;
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for w in sizes.windows(2) {
            let weights = Array2::from_shape_vec((w[1], w[0]), read_vec(r, w[0] * w[1])?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = Array1::from(read_vec(r, w[1])?);
            layers.push(Layer { weights, bias });
        }
        let n_policies = r.read_u32::<LittleEndian>()? as usize;
        let mut policies = Vec::with_capacity(n_policies.min(16));
        for _ in 0..n_policies {
            let len = r.read_u32::<LittleEndian>()? as usize;
            if len > 1024 {
                return Err(Error::Format("policy name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            policies.push((name, Policy::read_from(r)?));
        }
        Ok(Self {
            value: ValueModel {
                layers,
                input_mean,
                input_std,
                target_mean,
                target_std,
                gamma,
                horizon,
                seed,
                train_mse,
            },
            policies,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingModel(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Format("truncated model file".into())
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_model, ActionBox, JointAction, ModelParams, Preset};
    use crate::policy::{make_proportional, Gains};
    use approx::assert_abs_diff_eq;

    /// Deterministic single agent with constant cost.
    struct ConstCost {
        cost: f64,
        gamma: f64,
    }

    impl MasSystem for ConstCost {
        fn num_agents(&self) -> usize {
            1
        }
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self, _: usize) -> usize {
            1
        }
        fn noise_scale(&self) -> f64 {
            0.0
        }
        fn action_box(&self) -> ActionBox {
            ActionBox::default()
        }
        fn gamma(&self) -> f64 {
            self.gamma
        }
        fn transition(&self, x: &JointState, _: &JointAction, _: &UncertaintySample) -> JointState {
            x.clone()
        }
        fn cost(&self, _: &JointState) -> f64 {
            self.cost
        }
        fn is_safe(&self, _: &JointState) -> bool {
            true
        }
    }

    fn zero_policy<S: MasSystem>(s: &S) -> Policy {
        let n = s.actuated_agents().len();
        make_proportional(s, &vec![Gains::new(0.0, 0.0); n]).unwrap()
    }

    #[test]
    fn cost_to_go_edge_cases() {
        let zero = ConstCost { cost: 0.0, gamma: 0.9 };
        let x = JointState::zeros(1, 2);
        let p = zero_policy(&zero);
        assert_eq!(mc_cost_to_go(&zero, &p, &x, 50, 3, 1).unwrap(), 0.0);

        let one = ConstCost { cost: 1.0, gamma: 0.5 };
        assert_abs_diff_eq!(mc_cost_to_go(&one, &p, &x, 2, 1, 1).unwrap(), 0.75, epsilon = 1e-15);
        assert_eq!(mc_cost_to_go(&one, &p, &x, 0, 4, 1).unwrap(), 0.0);
        assert!(matches!(mc_cost_to_go(&one, &p, &x, 5, 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn cost_to_go_monotone_in_horizon() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let p = make_proportional(&m, &[Gains::new(3.0, 0.1); 2]).unwrap();
        let x = JointState::new(vec![vec![1.5, 0.5], vec![1.0, 0.0], vec![0.0, 0.0]]);
        let mut last = 0.0;
        for h in 0..40 {
            let v = mc_cost_to_go(&m, &p, &x, h, 3, 17).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn dataset_bounds_and_determinism() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let p = make_proportional(&m, &[Gains::new(0.5, 1.0); 2]).unwrap();
        let sampler = StateBox::new([-2.5, 2.5], [-1.0, 1.0]).unwrap();
        let h = 50;
        let a = collect_dataset(&m, &p, 100, h, 2, 4, &sampler).unwrap();
        let b = collect_dataset(&m, &p, 100, h, 2, 4, &sampler).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let g = m.gamma;
        let bound = g * (1.0 - g.powi(h as i32)) / (1.0 - g);
        assert!(a.targets.iter().all(|&t| (0.0..=bound).contains(&t)));
        assert!(matches!(
            collect_dataset(&m, &p, 0, h, 2, 4, &sampler),
            Err(Error::Contract(_))
        ));

        let zero = ConstCost { cost: 0.0, gamma: 0.9 };
        let d = collect_dataset(&zero, &zero_policy(&zero), 10, 20, 2, 1, &sampler).unwrap();
        assert!(d.targets.iter().all(|&t| t == 0.0));
    }

    fn grid_dataset(f: impl Fn(f64) -> f64) -> ValueDataset {
        let states: Vec<JointState> = (0..41)
            .map(|k| JointState::new(vec![vec![-2.0 + 0.1 * k as f64, 0.0]]))
            .collect();
        let targets = states.iter().map(|x| f(x.position(0))).collect();
        ValueDataset { states, targets }
    }

    #[test]
    fn fits_constant_target() {
        let d = grid_dataset(|_| 2.5);
        let cfg = ApproxConfig {
            hidden: vec![16, 16],
            epochs: 300,
            learning_rate: 3e-3,
        };
        let model = fit_value(&d, &cfg, 1).unwrap();
        for x in &d.states {
            assert!((model.value(x).unwrap() - 2.5).abs() < 1e-3);
        }
    }

    #[test]
    fn fits_linear_target() {
        let d = grid_dataset(|p| 3.0 + 1.5 * p);
        let model = fit_value(&d, &ApproxConfig::default(), 2).unwrap();
        assert!(model.train_mse < 1e-3, "mse {}", model.train_mse);
    }

    #[test]
    fn fit_is_deterministic_and_checks_inputs() {
        let d = grid_dataset(|p| p * p);
        let cfg = ApproxConfig {
            hidden: vec![8],
            epochs: 50,
            learning_rate: 1e-2,
        };
        let a = fit_value(&d, &cfg, 5).unwrap();
        let b = fit_value(&d, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let x = &d.states[3];
        assert_eq!(a.value(x).unwrap().to_bits(), a.value(x).unwrap().to_bits());
        assert!(a.value(&JointState::zeros(2, 2)).is_err());

        let empty = ValueDataset {
            states: vec![],
            targets: vec![],
        };
        assert!(matches!(fit_value(&empty, &cfg, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn predictions_never_negative() {
        let d = grid_dataset(|p| if p < 0.0 { 0.0 } else { 5.0 * p });
        let cfg = ApproxConfig {
            hidden: vec![8],
            epochs: 100,
            learning_rate: 1e-2,
        };
        let model = fit_value(&d, &cfg, 3).unwrap();
        for k in 0..200 {
            let x = JointState::new(vec![vec![-10.0 + 0.1 * k as f64, 0.0]]);
            assert!(model.value(&x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn barrier_arithmetic() {
        let b = Barrier::new(ConstantValue(3.0), 5.0);
        let x = JointState::zeros(1, 2);
        assert_eq!(barrier_value(&b, &x).unwrap(), 2.0);
        let edge = Barrier::new(ConstantValue(5.0), 5.0);
        assert_eq!(edge.h(&x).unwrap(), 0.0);
        assert!(edge.in_sublevel(&x).unwrap());
    }

    #[test]
    fn bundle_round_trip() {
        let d = grid_dataset(|p| p.abs());
        let cfg = ApproxConfig {
            hidden: vec![4, 3],
            epochs: 5,
            learning_rate: 1e-2,
        };
        let model = fit_value_with(&d, &cfg, 8, 0.95, 30).unwrap();
        let sys = ConstCost { cost: 0.0, gamma: 0.9 };
        let bundle = ModelBundle {
            value: model,
            policies: vec![("safe".into(), zero_policy(&sys))],
        };
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        let back = ModelBundle::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.value.layer_sizes(), vec![2, 4, 3, 1]);

        buf[0] = b'X';
        assert!(matches!(ModelBundle::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
