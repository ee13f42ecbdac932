//! Central finite-difference gradient checker and the registry of every
//! primitive and composite block it covers.
//!
//! Checks run in f64. The scalar objective is `Σ out ⊙ R` with a random
//! projection `R`. A stencil whose evaluations take different piecewise
//! branches (a ReLU sign or max-pool argmax flips) straddles a point with no
//! derivative. Primitive cases skip such coordinates. Composite cases have
//! thousands of ReLU units, so nearly every stencil crosses one somewhere;
//! there the crossing evaluations are redone on a [`Tape::pinned`] tape that
//! keeps the unperturbed branches, which differences the smooth piece the
//! analytic gradient belongs to. Both counts are reported.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::fca::{self, FcaConfig, FcaVariant};
use crate::model::{self, CanetConfig};
use crate::nn::{depthwise_separable_conv, weighted_cross_entropy, Conv2dSpec, Mode};
use crate::params::{Graph, ParamKind, ParamStore};
use crate::{Branches, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    pub eps: f64,
    /// Pass threshold on the worst relative error.
    pub tol: f64,
    pub seeds: u64,
    pub base_seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Largest tolerated fraction of skipped (branch-straddling) coordinates.
    pub max_skip_fraction: f64,
    pub stencil: Stencil,
}

/// Central difference stencil with step `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+ε) − f(x−ε)) / 2ε`, truncation error O(ε²).
    ThreePoint,
    /// `(f(x−2ε) − 8f(x−ε) + 8f(x+ε) − f(x+2ε)) / 12ε`, truncation error O(ε⁴).
    FivePoint,
}

impl Stencil {
    fn offsets(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::ThreePoint => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (2.0, -1.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stencil::ThreePoint => "3-point",
            Stencil::FivePoint => "5-point",
        }
    }
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { eps: 1e-3, tol: 1e-4, seeds: 20, base_seed: 0, floor: 1e-6, max_skip_fraction: 0.5, stencil: Stencil::FivePoint }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Which coordinates of an input are perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coords {
    All,
    Sample(usize),
}

pub struct CheckInput {
    pub name: String,
    pub value: Tensor<f64>,
    pub coords: Coords,
}

pub type ForwardFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One concrete instance: inputs and the function of them.
pub struct GradCase {
    pub inputs: Vec<CheckInput>,
    pub forward: ForwardFn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    Primitive,
    Composite,
}

/// Registry entry; `make` builds a fresh instance from a seed.
#[derive(Clone, Copy)]
pub struct CaseSpec {
    pub name: &'static str,
    pub kind: CaseKind,
    pub make: fn(u64) -> Result<GradCase>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub kind: CaseKind,
    pub seeds: u64,
    pub checked: usize,
    pub skipped: usize,
    /// Composite coordinates whose stencil crossed a branch and was
    /// evaluated on the pinned smooth piece instead.
    pub pinned: usize,
    pub worst: f64,
    /// Where the worst error occurred.
    pub worst_at: String,
    /// Inputs none of whose sampled coordinates could be checked.
    pub unchecked: Vec<String>,
    pub passed: bool,
}

fn objective(tape: &mut Tape<f64>, out: Var, proj: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(proj.clone());
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

fn evaluate(case: &GradCase, values: &[&Tensor<f64>], proj: &Tensor<f64>, pin: Option<&Branches>) -> Result<(f64, u64)> {
    let mut tape = match pin {
        Some(b) => Tape::pinned(b.clone()),
        None => Tape::new(),
    };
    let vars: Vec<Var> = values.iter().map(|v| tape.constant((*v).clone())).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let loss = objective(&mut tape, out, proj)?;
    Ok((tape.value(loss).data()[0], tape.branch_signature()))
}

/// Checks one registered case over `cfg.seeds` seeds.
pub fn check_case(spec: &CaseSpec, cfg: &CheckConfig) -> Result<CaseResult> {
    let mut res = CaseResult {
        name: spec.name.to_string(),
        kind: spec.kind,
        seeds: cfg.seeds,
        checked: 0,
        skipped: 0,
        pinned: 0,
        worst: 0.0,
        worst_at: String::new(),
        unchecked: Vec::new(),
        passed: false,
    };
    let mut per_input: alloc::collections::BTreeMap<String, usize> = alloc::collections::BTreeMap::new();
    for s in 0..cfg.seeds {
        let seed = cfg.base_seed.wrapping_mul(1_000_003).wrapping_add(s);
        let case = (spec.make)(seed)?;
        let mut rng = crate::rng_from_seed(seed ^ 0x5eed_9a4d);

        let mut tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|i| tape.param(i.value.clone())).collect();
        let out = (case.forward)(&mut tape, &vars)?;
        let proj = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
        let loss = objective(&mut tape, out, &proj)?;
        tape.backward(loss)?;
        let grads: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v).expect("leaf grad").clone()).collect();
        let sig0 = tape.branch_signature();
        let branches0 = tape.branches();

        for (k, input) in case.inputs.iter().enumerate() {
            let n = input.value.numel();
            // A sampled input keeps drawing until `m` coordinates are checked
            // or `8m` have been tried.
            let (idx, want): (Vec<usize>, usize) = match input.coords {
                Coords::All => ((0..n).collect(), n),
                Coords::Sample(m) if m >= n => ((0..n).collect(), n),
                Coords::Sample(m) => (sample(&mut rng, n, (8 * m).min(n)).into_vec(), m),
            };
            let mut got = 0;
            per_input.entry(input.name.clone()).or_default();
            'coord: for i in idx {
                if got == want {
                    break;
                }
                let mut numeric = 0.0;
                let mut pinned = false;
                for &(step, coeff) in cfg.stencil.offsets() {
                    let mut moved = input.value.clone();
                    moved.data_mut()[i] += step * cfg.eps;
                    let vals: Vec<&Tensor<f64>> =
                        case.inputs.iter().enumerate().map(|(j, x)| if j == k { &moved } else { &x.value }).collect();
                    let (mut l, sig) = evaluate(&case, &vals, &proj, None)?;
                    if sig != sig0 {
                        match spec.kind {
                            CaseKind::Primitive => {
                                res.skipped += 1;
                                continue 'coord;
                            }
                            CaseKind::Composite => {
                                l = evaluate(&case, &vals, &proj, Some(&branches0))?.0;
                                pinned = true;
                            }
                        }
                    }
                    numeric += coeff * l;
                }
                res.pinned += pinned as usize;
                numeric /= cfg.eps;
                let analytic = grads[k].data()[i];
                let err = relative_error(analytic, numeric, cfg.floor);
                res.checked += 1;
                got += 1;
                *per_input.entry(input.name.clone()).or_default() += 1;
                if !(err <= res.worst) {
                    res.worst = err;
                    res.worst_at = format!("seed {seed}, {}[{i}]: analytic {analytic:.9e}, numeric {numeric:.9e}", input.name);
                }
            }
        }
    }
    res.unchecked = per_input.into_iter().filter(|&(_, n)| n == 0).map(|(k, _)| k).collect();
    let total = res.checked + res.skipped;
    res.passed = res.checked > 0
        && res.unchecked.is_empty()
        && res.worst < cfg.tol
        && (res.skipped as f64) <= cfg.max_skip_fraction * total as f64;
    Ok(res)
}

/// Runs every case in order.
pub fn run_suite(cases: &[CaseSpec], cfg: &CheckConfig) -> Result<Vec<CaseResult>> {
    cases.iter().map(|c| check_case(c, cfg)).collect()
}

// ---- case construction helpers ----

fn rng(seed: u64) -> crate::Rng {
    crate::rng_from_seed(seed)
}

fn input(name: &str, value: Tensor<f64>) -> CheckInput {
    CheckInput { name: name.to_string(), value, coords: Coords::All }
}

fn uniform(shape: &[usize], r: &mut crate::Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// Uniform values with magnitude in `[0.1, 1]`, kept off the ReLU kink.
fn off_kink(shape: &[usize], r: &mut crate::Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let m: f64 = r.random_range(0.1..1.0);
        *v = if r.random_bool(0.5) { m } else { -m };
    }
    t
}

fn case(inputs: Vec<CheckInput>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Result<GradCase> {
    Ok(GradCase { inputs, forward: Box::new(f) })
}

fn c_matmul(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("a", uniform(&[3, 4], &mut r)), input("b", uniform(&[4, 2], &mut r))], |t, v| t.matmul(v[0], v[1]))
}

fn c_add(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("a", uniform(&[2, 3, 2, 2], &mut r)), input("b", uniform(&[1, 3, 1, 2], &mut r))], |t, v| t.add(v[0], v[1]))
}

fn c_sub(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("a", uniform(&[2, 3, 2, 2], &mut r)), input("b", uniform(&[2, 3, 2, 2], &mut r))], |t, v| t.sub(v[0], v[1]))
}

fn c_mul(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("a", uniform(&[2, 3, 2, 2], &mut r)), input("b", uniform(&[2, 1, 2, 2], &mut r))], |t, v| t.mul(v[0], v[1]))
}

fn c_scale(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let c: f64 = r.random_range(-2.0..2.0);
    case(vec![input("x", uniform(&[2, 5], &mut r))], move |t, v| Ok(t.scale(v[0], c)))
}

fn c_reshape(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[2, 3, 4], &mut r))], |t, v| t.reshape(v[0], &[4, 6]))
}

fn c_concat(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(
        vec![input("a", uniform(&[2, 2, 2, 3], &mut r)), input("b", uniform(&[2, 3, 2, 3], &mut r))],
        |t, v| t.concat_channels(&[v[0], v[1]]),
    )
}

fn c_slice(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[2, 5, 2, 2], &mut r))], |t, v| t.slice_channels(v[0], 1, 3))
}

fn c_sum(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[3, 7], &mut r))], |t, v| Ok(t.sum(v[0])))
}

fn c_conv2d(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let spec = Conv2dSpec::new(2, 3, 3).bias(true);
    case(
        vec![
            input("x", uniform(&[1, 2, 5, 5], &mut r)),
            input("w", uniform(&spec.weight_shape(), &mut r)),
            input("b", uniform(&[3], &mut r)),
        ],
        move |t, v| t.conv2d(v[0], v[1], Some(v[2]), &spec),
    )
}

fn c_conv2d_grouped(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let spec = Conv2dSpec::new(4, 2, 3).stride(2).groups(2);
    case(
        vec![input("x", uniform(&[1, 4, 4, 4], &mut r)), input("w", uniform(&spec.weight_shape(), &mut r))],
        move |t, v| t.conv2d(v[0], v[1], None, &spec),
    )
}

fn c_depthwise_separable(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(
        vec![
            input("x", uniform(&[1, 3, 4, 4], &mut r)),
            input("dw", uniform(&[3, 1, 3, 3], &mut r)),
            input("pw", uniform(&[4, 3, 1, 1], &mut r)),
        ],
        |t, v| depthwise_separable_conv(t, v[0], v[1], v[2], 3, 2),
    )
}

fn c_conv_transpose2d(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let spec = Conv2dSpec::new(2, 3, 2).stride(2).padding(0);
    case(
        vec![input("x", uniform(&[1, 2, 3, 3], &mut r)), input("w", uniform(&spec.transposed_weight_shape(), &mut r))],
        move |t, v| t.conv_transpose2d(v[0], v[1], &spec),
    )
}

fn c_batch_norm_train(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(
        vec![
            input("x", uniform(&[2, 3, 2, 3], &mut r)),
            input("gamma", Tensor::uniform(&[3], 0.5, 1.5, &mut r)),
            input("beta", uniform(&[3], &mut r)),
        ],
        |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], crate::nn::norm::DEFAULT_EPS)?.0),
    )
}

fn c_batch_norm_eval(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let mean: Vec<f64> = (0..3).map(|_| r.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..3).map(|_| r.random_range(0.5..2.0)).collect();
    case(
        vec![
            input("x", uniform(&[2, 3, 2, 3], &mut r)),
            input("gamma", Tensor::uniform(&[3], 0.5, 1.5, &mut r)),
            input("beta", uniform(&[3], &mut r)),
        ],
        move |t, v| t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, crate::nn::norm::DEFAULT_EPS),
    )
}

fn c_relu(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", off_kink(&[2, 3, 3, 3], &mut r))], |t, v| Ok(t.relu(v[0])))
}

fn c_relu6(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let x = off_kink(&[2, 3, 3, 3], &mut r).map(|v| if v > 0.0 { v * 8.0 } else { v });
    // positive values spread over (0.8, 8) with the 6 kink avoided
    let x = x.map(|v| if (v - 6.0).abs() < 0.1 { v + 0.3 } else { v });
    case(vec![input("x", x)], |t, v| Ok(t.relu6(v[0])))
}

fn c_sigmoid(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", Tensor::uniform(&[2, 3, 3, 3], -4.0, 4.0, &mut r))], |t, v| Ok(t.sigmoid(v[0])))
}

fn c_softmax(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", Tensor::uniform(&[2, 4, 2, 3], -3.0, 3.0, &mut r))], |t, v| t.softmax_channels(v[0]))
}

fn c_global_avg_pool(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[2, 4, 3, 2], &mut r))], |t, v| t.global_avg_pool(v[0]))
}

fn c_global_max_pool(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[2, 4, 3, 2], &mut r))], |t, v| t.global_max_pool(v[0]))
}

fn c_max_pool2d(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[1, 4, 4, 4], &mut r))], |t, v| t.max_pool2d(v[0], 3, 2, 1))
}

fn c_fully_connected(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(
        vec![
            input("x", uniform(&[3, 4], &mut r)),
            input("w", uniform(&[4, 5], &mut r)),
            input("b", uniform(&[5], &mut r)),
        ],
        |t, v| t.fully_connected(v[0], v[1], Some(v[2])),
    )
}

fn c_bilinear_upsample(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    case(vec![input("x", uniform(&[1, 2, 3, 4], &mut r))], |t, v| t.bilinear_upsample(v[0], 2))
}

fn c_weighted_cross_entropy(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let labels: Vec<u8> = (0..18).map(|_| if r.random_bool(0.15) { 255 } else { r.random_range(0..3) }).collect();
    let weights: Vec<f64> = (0..3).map(|_| r.random_range(0.5..3.0)).collect();
    case(vec![input("logits", Tensor::uniform(&[2, 3, 3, 3], -2.0, 2.0, &mut r))], move |t, v| {
        weighted_cross_entropy(t, v[0], &labels, &weights, 255)
    })
}

/// Case over an image plus every learnable tensor of `store`, sampled.
fn model_case(
    store: ParamStore<f64>,
    image: Tensor<f64>,
    per_param: usize,
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var> + 'static,
    mode: Mode,
) -> Result<GradCase> {
    let names: Vec<String> = store.learnable_names();
    let mut inputs = vec![CheckInput { name: "image".into(), value: image, coords: Coords::Sample(16) }];
    for n in &names {
        inputs.push(CheckInput { name: n.clone(), value: store.get(n).unwrap().clone(), coords: Coords::Sample(per_param) });
    }
    case(inputs, move |t, v| {
        let mut g = Graph::new(t, &store, mode);
        for (n, &var) in names.iter().zip(&v[1..]) {
            g.bind(n, var);
        }
        f(&mut g, v[0])
    })
}

fn random_stats(store: &mut ParamStore<f64>, r: &mut crate::Rng) {
    let layers: Vec<(String, usize)> = store.bn_layers().map(|(p, c)| (p.to_string(), c)).collect();
    for (p, c) in layers {
        let m = Tensor::uniform(&[c], -0.2, 0.2, r);
        let v = Tensor::uniform(&[c], 0.5, 2.0, r);
        store.insert(&crate::params::running_mean_name(&p), ParamKind::Buffer, m).unwrap();
        store.insert(&crate::params::running_var_name(&p), ParamKind::Buffer, v).unwrap();
    }
}

fn small_canet() -> Result<CanetConfig> {
    let mut cfg = CanetConfig::new("tiny", 3, (32, 32))?;
    cfg.fca.fusion_channels = 8;
    cfg.deconv_channels = 8;
    Ok(cfg)
}

fn c_spatial_branch(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    for (i, l) in model::spatial_layers().iter().enumerate() {
        l.register(&mut store, &model::spatial_prefix(i), &mut r)?;
    }
    let image = uniform(&[2, 3, 16, 16], &mut r);
    model_case(store, image, 2, |g, x| model::spatial_branch_forward(g, x), Mode::Train)
}

fn c_context_branch(seed: u64) -> Result<GradCase> {
    let mut r = rng(seed);
    let cfg = small_canet()?;
    let full: ParamStore<f64> = cfg.init_params(&mut r)?;
    let mut store = ParamStore::new();
    for (n, k, t) in full.iter().filter(|(n, _, _)| n.starts_with("context.")) {
        store.insert(n, k, t.clone())?;
    }
    for (p, c) in full.bn_layers().filter(|(p, _)| p.starts_with("context.")) {
        store.mark_bn(p, c);
    }
    let image = uniform(&[2, 3, 64, 64], &mut r);
    model_case(store, image, 2, move |g, x| Ok(model::context_branch_forward(g, &cfg, x)?.out), Mode::Train)
}

fn fca_case(seed: u64, variant: FcaVariant) -> Result<GradCase> {
    let mut r = rng(seed);
    let cfg = FcaConfig { fusion_channels: 5, variant };
    let mut store = ParamStore::new();
    fca::register(&mut store, "fca", &cfg, 4, 3, &mut r)?;
    let spatial = uniform(&[2, 4, 3, 3], &mut r);
    let context = uniform(&[2, 3, 3, 3], &mut r);
    let names = store.learnable_names();
    let mut inputs = vec![input("spatial", spatial), input("context", context)];
    for n in &names {
        inputs.push(CheckInput { name: n.clone(), value: store.get(n).unwrap().clone(), coords: Coords::Sample(6) });
    }
    case(inputs, move |t, v| {
        let mut g = Graph::new(t, &store, Mode::Train);
        for (n, &var) in names.iter().zip(&v[2..]) {
            g.bind(n, var);
        }
        Ok(fca::fca_forward(&mut g, "fca", &cfg, v[0], v[1])?.out)
    })
}

fn c_fca_none(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::None)
}
fn c_fca_conv_only(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::ConvOnly)
}
fn c_fca_spatial_only(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::SpatialOnly)
}
fn c_fca_parallel(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::Parallel)
}
fn c_fca_channel_then_spatial(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::ChannelThenSpatial)
}
fn c_fca_spatial_then_channel(seed: u64) -> Result<GradCase> {
    fca_case(seed, FcaVariant::SpatialThenChannel)
}

fn canet_case(seed: u64, mode: Mode) -> Result<GradCase> {
    let mut r = rng(seed);
    let cfg = small_canet()?;
    let mut store: ParamStore<f64> = cfg.init_params(&mut r)?;
    if mode == Mode::Eval {
        random_stats(&mut store, &mut r);
    }
    let image = uniform(&[1, 3, 32, 32], &mut r);
    model_case(store, image, 1, move |g, x| Ok(model::canet_forward(g, &cfg, x)?.logits), mode)
}

fn c_canet_train(seed: u64) -> Result<GradCase> {
    canet_case(seed, Mode::Train)
}

fn c_canet_eval(seed: u64) -> Result<GradCase> {
    canet_case(seed, Mode::Eval)
}

macro_rules! cases {
    ($kind:ident: $($name:literal => $f:ident),* $(,)?) => {
        [$(CaseSpec { name: $name, kind: CaseKind::$kind, make: $f }),*]
    };
}

/// Every layer primitive, once each.
pub fn primitives() -> Vec<CaseSpec> {
    cases!(Primitive:
        "matmul" => c_matmul,
        "add" => c_add,
        "sub" => c_sub,
        "mul" => c_mul,
        "scale" => c_scale,
        "reshape" => c_reshape,
        "concat_channels" => c_concat,
        "slice_channels" => c_slice,
        "sum" => c_sum,
        "conv2d" => c_conv2d,
        "conv2d_grouped" => c_conv2d_grouped,
        "depthwise_separable_conv" => c_depthwise_separable,
        "conv_transpose2d" => c_conv_transpose2d,
        "batch_norm_train" => c_batch_norm_train,
        "batch_norm_eval" => c_batch_norm_eval,
        "relu" => c_relu,
        "relu6" => c_relu6,
        "sigmoid" => c_sigmoid,
        "softmax_channels" => c_softmax,
        "global_avg_pool" => c_global_avg_pool,
        "global_max_pool" => c_global_max_pool,
        "max_pool2d" => c_max_pool2d,
        "fully_connected" => c_fully_connected,
        "bilinear_upsample" => c_bilinear_upsample,
        "weighted_cross_entropy" => c_weighted_cross_entropy,
    )
    .to_vec()
}

/// Network blocks: both branches, every fusion variant and the full model.
pub fn composites() -> Vec<CaseSpec> {
    cases!(Composite:
        "spatial_branch" => c_spatial_branch,
        "context_branch" => c_context_branch,
        "fca_none" => c_fca_none,
        "fca_conv_only" => c_fca_conv_only,
        "fca_spatial_only" => c_fca_spatial_only,
        "fca_parallel" => c_fca_parallel,
        "fca_channel_then_spatial" => c_fca_channel_then_spatial,
        "fca_spatial_then_channel" => c_fca_spatial_then_channel,
        "canet_train" => c_canet_train,
        "canet_eval" => c_canet_eval,
    )
    .to_vec()
}

pub fn registry() -> Vec<CaseSpec> {
    let mut all = primitives();
    all.extend(composites());
    all
}

pub fn find(name: &str) -> Result<CaseSpec> {
    registry()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Config(format!("no gradient case named `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique() {
        let names: Vec<_> = registry().iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
    }
}
