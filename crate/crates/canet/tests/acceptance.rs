//! Release criteria, one line each. Runs without the libtest harness so the
//! lines always reach stdout.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use canet::bench::{bench_inference, DEFAULT_ITERS, DEFAULT_WARMUP};
use canet::cli::{Cli, Command};
use canet::config::RunConfig;
use canet::run::train_synth;
use canet_core::analysis::{count_flops, count_params, FlopConvention};
use canet_core::fca::{self, FcaConfig, FcaVariant};
use canet_core::gradcheck::{self, CaseKind, CheckConfig};
use canet_core::metrics::ConfusionMatrix;
use canet_core::model::{self, Canet, CanetConfig};
use canet_core::nn::Mode;
use canet_core::params::Graph;
use canet_core::train::{poly_lr, TrainConfig};
use canet_core::{rng_from_seed, ParamStore, Tape, Tensor};
use clap::Parser;
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const PARAM_TOL: f64 = 0.15;
const FLOP_TOL: f64 = 0.25;
const POLY_ULPS: u64 = 1;
const SYNTH_MIOU: f64 = 0.85;
const SYNTH_WINDOW: usize = 5;
const SYNTH_BUDGET: Duration = Duration::from_secs(300);
const CLOSED_FORM_TOL: f64 = 1e-5;
const BENCH_ITERS: usize = 5;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond { Ok(detail) } else { Err(detail) }
}

fn gradient_suite() -> Outcome {
    let cfg = CheckConfig { tol: GRAD_TOL, seeds: GRAD_SEEDS, ..CheckConfig::default() };
    let t0 = Instant::now();
    let res = gradcheck::run_suite(&gradcheck::registry(), &cfg).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    let failed: Vec<&str> = res.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = res.iter().map(|r| r.worst).fold(0.0, f64::max);
    let prims = res.iter().filter(|r| r.kind == CaseKind::Primitive).count();
    check(
        failed.is_empty() && took < GRAD_BUDGET && res.iter().all(|r| r.seeds >= GRAD_SEEDS),
        format!("{prims} primitives + {} composites, worst {worst:.2e} < {GRAD_TOL:e}, {:.0}s; failed {failed:?}", res.len() - prims, took.as_secs_f64()),
    )
}

fn canet(backbone: &str) -> CanetConfig {
    CanetConfig::new(backbone, 19, (512, 1024)).unwrap()
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got / want - 1.0).abs() <= tol
}

fn params_oracle() -> Outcome {
    let p1 = count_params(&canet("mobilenet_v2")).map_err(|e| e.to_string())?.total_params() as f64;
    let p2 = count_params(&canet("resnet18")).map_err(|e| e.to_string())?.total_params() as f64;
    check(
        within(p1, 4.8e6, PARAM_TOL) && within(p2, 15.8e6, PARAM_TOL) && p1 < p2,
        format!("{:.3}M vs 4.8M, {:.3}M vs 15.8M (±{}%)", p1 / 1e6, p2 / 1e6, PARAM_TOL * 100.0),
    )
}

fn flops_oracle() -> Outcome {
    let f = |b: &str| count_flops(&canet(b), (512, 1024), FlopConvention::Mac).map(|r| r.total_flops() as f64);
    let (f1, f2) = (f("mobilenet_v2").map_err(|e| e.to_string())?, f("resnet18").map_err(|e| e.to_string())?);
    check(
        within(f1, 18.5e9, FLOP_TOL) && within(f2, 38.7e9, FLOP_TOL) && f1 < f2,
        format!("mac convention: {:.2}G vs 18.5G, {:.2}G vs 38.7G (±{}%)", f1 / 1e9, f2 / 1e9, FLOP_TOL * 100.0),
    )
}

fn shape_contract() -> Outcome {
    let sizes = [(32, 32), (64, 64), (96, 96), (128, 128), (64, 96)];
    let mut bad = Vec::new();
    for &(h, w) in &sizes {
        let mut cfg = CanetConfig::new("tiny", 5, (h, w)).unwrap();
        cfg.fca.fusion_channels = 16;
        cfg.deconv_channels = 16;
        let p: ParamStore<f32> = cfg.init_params(&mut rng_from_seed(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[2, 3, h, w], -1.0, 1.0, &mut rng_from_seed(1)));
        let mut g = Graph::new(&mut tape, &p, Mode::Train);
        let t = model::canet_forward(&mut g, &cfg, x).map_err(|e| e.to_string())?;
        let ok = tape.shape(t.logits) == [2, 5, h, w]
            && tape.shape(t.spatial)[2..] == [h / 8, w / 8]
            && tape.shape(t.context.out)[2..] == [h / 8, w / 8];
        if !ok {
            bad.push((h, w));
        }
    }
    check(bad.is_empty(), format!("{} sizes; logits N×C×H×W, both branches at stride 8; wrong {bad:?}", sizes.len()))
}

fn brute_iou(pred: &[u8], gt: &[u8], c: usize, ignore: u8) -> Vec<Option<f64>> {
    (0..c as u8)
        .map(|k| {
            let p: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] != ignore && pred[i] == k).collect();
            let g: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == k).collect();
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect()
}

fn miou_oracle() -> Outcome {
    const IGNORE: u8 = 255;
    let mut r = rng_from_seed(77);
    let mut mismatches = 0;
    for _ in 0..200 {
        let c = r.random_range(2..=6);
        let n = r.random_range(1..=300);
        let pred: Vec<u8> = (0..n).map(|_| r.random_range(0..c as u8)).collect();
        let mut gt: Vec<u8> = (0..n).map(|_| if r.random_bool(0.1) { IGNORE } else { r.random_range(0..c as u8) }).collect();
        gt[0] = 0;
        let mut cm = ConfusionMatrix::new(c, IGNORE);
        cm.accumulate(&pred, &gt).map_err(|e| e.to_string())?;
        let want = brute_iou(&pred, &gt, c, IGNORE);
        let present: Vec<f64> = want.iter().flatten().copied().collect();
        let want_miou = present.iter().sum::<f64>() / present.len() as f64;
        if cm.iou().unwrap() != want || cm.miou().unwrap() != want_miou {
            mismatches += 1;
        }
    }
    let mut hand = ConfusionMatrix::new(2, IGNORE);
    hand.accumulate(&[0, 1, 1], &[0, 0, 1]).unwrap();
    let hand_miou = hand.miou().unwrap();
    check(mismatches == 0 && hand_miou == 0.5, format!("200 pairs exact, {mismatches} mismatches; hand tally {hand_miou}"))
}

fn poly_schedule() -> Outcome {
    let table = include_str!("../../core/tests/data/poly_lr_mpmath.txt");
    let (mut worst, mut rows) = (0, 0);
    for line in table.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (m, e, want): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        let cfg = TrainConfig { max_epoch: m, init_lr: 1e-4, poly_power: 0.9, ..TrainConfig::default() };
        let got = poly_lr(e, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((got.to_bits() as i64 - want.to_bits() as i64).unsigned_abs());
        rows += 1;
    }
    check(worst <= POLY_ULPS && rows == 114, format!("max_epoch 1, 10, 100: {rows} epochs, worst {worst} ulp (≤ {POLY_ULPS})"))
}

fn synthetic_learning() -> Outcome {
    let cfg = RunConfig::synthetic();
    let t0 = Instant::now();
    let a = train_synth(&cfg, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    let once = t0.elapsed();
    let b = train_synth(&cfg, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    let miou = a.report.final_val_miou();
    let smooth = a.report.smoothed_loss(SYNTH_WINDOW);
    let decreasing = !smooth.is_empty() && smooth.windows(2).all(|w| w[1] < w[0]);
    let same = a.report.epochs == b.report.epochs && a.model.params == b.model.params;
    check(
        miou >= SYNTH_MIOU && decreasing && same && once <= SYNTH_BUDGET && a.report.epochs.len() <= 30,
        format!(
            "{} epochs, val mIoU {miou:.4} (≥ {SYNTH_MIOU}), smoothed({SYNTH_WINDOW}) loss decreasing {decreasing}, rerun identical {same}, {:.0}s per run",
            a.report.epochs.len(),
            once.as_secs_f64()
        ),
    )
}

fn ablation_variants() -> Outcome {
    let cfg = CheckConfig { tol: GRAD_TOL, seeds: GRAD_SEEDS, ..CheckConfig::default() };
    let mut failed = Vec::new();
    for v in FcaVariant::ALL {
        let mut mc = CanetConfig::new("tiny", 3, (32, 32)).unwrap();
        mc.fca.variant = v;
        let built = Canet::<f32>::new(mc, 0).is_ok();
        let case = gradcheck::find(&format!("fca_{}", v.name())).map_err(|e| e.to_string())?;
        let res = gradcheck::check_case(&case, &cfg).map_err(|e| e.to_string())?;
        if !(built && res.passed) {
            failed.push(v.name());
        }
    }

    let fc = FcaConfig { fusion_channels: 6, variant: FcaVariant::SpatialThenChannel };
    let mut p: ParamStore<f32> = ParamStore::new();
    fca::register(&mut p, "fca", &fc, 4, 5, &mut rng_from_seed(9)).unwrap();
    for (name, v) in [("fca.sa.conv.weight", 0.0), ("fca.sa.bn.weight", 1.0), ("fca.sa.bn.bias", 0.0), ("fca.ca.fc.weight", 0.0), ("fca.ca.fc.bias", 0.0)] {
        let t = p.get_mut(name).ok_or(format!("missing {name}"))?;
        t.data_mut().iter_mut().for_each(|x| *x = v);
    }
    let mut r = rng_from_seed(10);
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::uniform(&[2, 4, 4, 4], -1.0, 1.0, &mut r));
    let c = tape.constant(Tensor::uniform(&[2, 5, 4, 4], -1.0, 1.0, &mut r));
    let mut g = Graph::new(&mut tape, &p, Mode::Train);
    let t = fca::fca_forward(&mut g, "fca", &fc, s, c).map_err(|e| e.to_string())?;
    let (fused, pre) = (tape.value(t.fused).data(), tape.value(t.pre_final).data());
    let dev = fused.iter().zip(pre).map(|(f, p)| (1.25 * f64::from(*f) - f64::from(*p)).abs()).fold(0.0, f64::max);
    check(
        failed.is_empty() && dev <= CLOSED_FORM_TOL,
        format!("{} variants build and gradcheck, failed {failed:?}; zero-weight pre-final vs 1.25·fused max dev {dev:.1e} (≤ {CLOSED_FORM_TOL:e})", FcaVariant::ALL.len()),
    )
}

fn bench_protocol() -> Outcome {
    let (iters, warmup) = match Cli::try_parse_from(["canet", "bench"]).map_err(|e| e.to_string())?.command {
        Command::Bench(b) => (b.iters, b.warmup),
        _ => unreachable!(),
    };
    let mut cfg = RunConfig::synthetic();
    let mut lat = Vec::new();
    for side in [64, 128, 256] {
        cfg.model.input_size = canet::config::Size { h: side, w: side };
        let m = Canet::<f32>::new(cfg.canet_config().map_err(|e| e.to_string())?, 0).map_err(|e| e.to_string())?;
        let rep = bench_inference(&m, (side, side), 1, BENCH_ITERS, 1, 0).map_err(|e| e.to_string())?;
        lat.push(rep.min * 1e3);
    }
    let monotone = lat.windows(2).all(|w| w[1] > w[0]);
    check(
        iters == 100 && DEFAULT_ITERS == 100 && warmup == DEFAULT_WARMUP && monotone,
        format!("default {iters} iterations after {warmup} warmup; min latency 64² {:.2}ms < 128² {:.2}ms < 256² {:.2}ms", lat[0], lat[1], lat[2]),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("parameter counts", params_oracle),
        ("flop counts", flops_oracle),
        ("shape contract", shape_contract),
        ("miou oracle", miou_oracle),
        ("poly schedule", poly_schedule),
        ("synthetic learning", synthetic_learning),
        ("fusion variants", ablation_variants),
        ("bench protocol", bench_protocol),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {tag}: {detail}", i + 1);
    }
    if !failed.is_empty() {
        eprintln!("failed criteria {failed:?}");
        std::process::exit(1);
    }
}
