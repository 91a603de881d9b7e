//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always shown.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 3`.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use faultdg_core::autodiff::{value_and_grad, Graph, ParamVars, Var};
use faultdg_core::experiment::{compare, ExperimentConfig};
use faultdg_core::mldg::{cross_entropy_loss, domain_avg_loss, meta_gradient, DomainBatch, MetaMode, StepConfig};
use faultdg_core::models::{encoder_forward, init_params, ModelConfig};
use faultdg_core::params::ParamVector;
use faultdg_core::rvfl::{build_design, hidden_layer, one_hot, rvfl_train, FeatureMatrix, RvflConfig};
use faultdg_core::signal::{assemble_offline, AssemblySpec, LabeledSignal, MultichannelSignal, Segmentation};
use faultdg_core::sim::{synth_signal, ConditionSpec, FaultClass, SimConfig};
use faultdg_core::stream::{PipelineKind, ScenarioKind};
use faultdg_core::tensor::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use common::{artifacts, chain, ok, s, tiny_config};

type Verdict = Result<String, String>;

fn check(cond: bool, what: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what)
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Conjugate gradients on `(EᵀE + σI) x = Eᵀy`, one column of `y` at a
/// time, restarted from the true residual until it stops shrinking.
fn cg_ridge(e: &Tensor, y: &Tensor, sigma: f64) -> Vec<f64> {
    let (n, d, v) = (e.dim(0), e.dim(1), y.dim(1));
    let ed = e.data();
    let apply = |x: &[f64]| -> Vec<f64> {
        let ex: Vec<f64> = (0..n).map(|r| (0..d).map(|k| ed[r * d + k] * x[k]).sum()).collect();
        (0..d)
            .map(|k| (0..n).map(|r| ed[r * d + k] * ex[r]).sum::<f64>() + sigma * x[k])
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut beta = vec![0.0; d * v];
    for c in 0..v {
        let b: Vec<f64> = (0..d)
            .map(|k| (0..n).map(|r| ed[r * d + k] * y.data()[r * v + c]).sum())
            .collect();
        let mut x = vec![0.0; d];
        let mut best = f64::INFINITY;
        for _ in 0..200 {
            let ax = apply(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = dot(&r, &r).sqrt();
            if rn >= best * 0.999 {
                break;
            }
            best = rn;
            let mut p = r.clone();
            let mut rr = dot(&r, &r);
            for _ in 0..4 * d {
                if rr == 0.0 {
                    break;
                }
                let ap = apply(&p);
                let a = rr / dot(&p, &ap);
                x.iter_mut().zip(&p).for_each(|(x, p)| *x += a * p);
                r.iter_mut().zip(&ap).for_each(|(r, q)| *r -= a * q);
                let next = dot(&r, &r);
                let k = next / rr;
                p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + k * *p);
                rr = next;
            }
        }
        for k in 0..d {
            beta[k * v + c] = x[k];
        }
    }
    beta
}

/// `‖(EᵀE + σI)β − EᵀY‖∞` by explicit sums.
fn normal_eq_residual(e: &Tensor, y: &Tensor, sigma: f64, beta: &[f64]) -> f64 {
    let (n, d, v) = (e.dim(0), e.dim(1), y.dim(1));
    let (ed, yd) = (e.data(), y.data());
    let mut worst: f64 = 0.0;
    for k in 0..d {
        for c in 0..v {
            let mut lhs = sigma * beta[k * v + c];
            for r in 0..n {
                let pred: f64 = (0..d).map(|m| ed[r * d + m] * beta[m * v + c]).sum();
                lhs += ed[r * d + k] * pred;
            }
            let rhs: f64 = (0..n).map(|r| ed[r * d + k] * yd[r * v + c]).sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let sigma = 1e-4;
    let (mut worst_beta, mut worst_res): (f64, f64) = (0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for inst in 0..20 {
        let n = rng.random_range(5..=50);
        let j = rng.random_range(1..=10);
        let q = rng.random_range(1..=20);
        let v = rng.random_range(2..=4);
        let z = rand_tensor(&mut rng, &[n, j], -1.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let fm = FeatureMatrix::new(z.clone(), labels.clone(), v).map_err(|e| e.to_string())?;
        let cfg = RvflConfig {
            hidden: q,
            sigma,
            seed: inst,
        };
        let model = rvfl_train(&fm, &cfg).map_err(|e| e.to_string())?;
        let e = build_design(&z, &hidden_layer(&model, &z).unwrap()).unwrap();
        let y = one_hot(&labels, v);
        let oracle = cg_ridge(&e, &y, sigma);
        let dev = model
            .beta
            .data()
            .iter()
            .zip(&oracle)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_beta = worst_beta.max(dev);
        worst_res = worst_res.max(normal_eq_residual(&e, &y, sigma, model.beta.data()));
    }
    let elapsed = t0.elapsed();
    check(
        worst_beta <= 1e-6,
        format!("max |beta - oracle| {worst_beta:.2e} > 1e-6"),
    )?;
    check(
        worst_res <= 1e-8,
        format!("normal-equation residual {worst_res:.2e} > 1e-8"),
    )?;
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "20 instances, max |beta - oracle| {worst_beta:.2e}, residual {worst_res:.2e}, {elapsed:.2?}"
    ))
}

fn small_net(g: &mut Graph, v: &ParamVars, x: Var) -> faultdg_core::Result<Var> {
    let h = g.dense(x, v.get("w1")?, v.get("b1")?)?;
    let h = g.sigmoid(h)?;
    g.dense(h, v.get("w2")?, v.get("b2")?)
}

fn batch(rng: &mut ChaCha8Rng, domain: usize, n: usize) -> DomainBatch {
    DomainBatch {
        domain,
        x: rand_tensor(rng, &[n, 3], -2.0, 2.0),
        labels: (0..n).map(|_| rng.random_range(0..2)).collect(),
    }
}

/// `L_tr(Θ) + γ L_te(Θ − α ∇L_tr(Θ))`.
fn composite(p: &ParamVector, tr: &[&DomainBatch], te: &[&DomainBatch], alpha: f64, gamma: f64) -> f64 {
    let (l_tr, g) = value_and_grad(p, |g, v| domain_avg_loss(g, v, tr, &small_net)).unwrap();
    let inner = p.axpy(-alpha, &g).unwrap();
    let (l_te, _) = value_and_grad(&inner, |g, v| domain_avg_loss(g, v, te, &small_net)).unwrap();
    l_tr + gamma * l_te
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ParamVector::new(vec![
        ("w1".into(), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)),
        ("b1".into(), rand_tensor(&mut rng, &[4], -1.0, 1.0)),
        ("w2".into(), rand_tensor(&mut rng, &[4, 2], -1.0, 1.0)),
        ("b2".into(), rand_tensor(&mut rng, &[2], -1.0, 1.0)),
    ])
    .unwrap();
    let flat = params.flatten();
    check(flat.len() <= 50, format!("{} parameters", flat.len()))?;
    let tr = [batch(&mut rng, 0, 12), batch(&mut rng, 1, 12)];
    let te = [batch(&mut rng, 2, 12)];
    let (tr_refs, te_refs): (Vec<&DomainBatch>, Vec<&DomainBatch>) = (tr.iter().collect(), te.iter().collect());
    let coords = index::sample(&mut rng, flat.len(), 20).into_vec();
    let mut worst: f64 = 0.0;
    for (alpha, gamma) in [(0.005, 1.0), (0.3, 0.7)] {
        let step = StepConfig {
            alpha,
            gamma,
            lr: 0.01,
            mode: MetaMode::ExactHvp,
            hvp_step: 1e-4,
        };
        let (g, _) = meta_gradient(&params, &tr, &te, &step, &small_net).map_err(|e| e.to_string())?;
        let g = g.flatten();
        let h = 1e-5;
        for &i in &coords {
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let f = |x: &[f64]| composite(&params.unflatten(x).unwrap(), &tr_refs, &te_refs, alpha, gamma);
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(1e-6);
            worst = worst.max(rel);
        }
    }
    let elapsed = t0.elapsed();
    check(worst <= 1e-3, format!("max relative error {worst:.2e} > 1e-3"))?;
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "{} params, 20 coordinates x 2 (alpha, gamma), max rel err {worst:.2e}, {elapsed:.2?}",
        flat.len()
    ))
}

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    for t in 2..=10usize {
        let labels: Vec<usize> = (0..5).map(|i| i % t).collect();
        let l = cross_entropy_loss(&Tensor::full(&[5, t], 0.37), &labels).map_err(|e| e.to_string())?;
        worst = worst.max((l - (t as f64).ln()).abs());
    }
    check(worst <= 1e-9, format!("uniform logits off ln T by {worst:.2e}"))?;
    let l = cross_entropy_loss(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), &[0]).unwrap();
    check((l - 1.313262).abs() <= 1e-6, format!("fixture gave {l}"))?;
    Ok(format!("uniform max dev {worst:.1e}; fixture {l:.6}"))
}

fn criterion_4() -> Verdict {
    let seg = Segmentation::new(768_000, 1024, 64).map_err(|e| e.to_string())?;
    check(seg.count == 11985, format!("{} windows", seg.count))?;
    let cfg = ExperimentConfig::default();
    let spec = AssemblySpec {
        window: cfg.window,
        stride: cfg.stride,
        per_class: cfg.per_class,
        num_classes: 4,
        num_domains: 2,
    };
    let len = Segmentation::span(cfg.per_class, cfg.window, cfg.stride);
    let entries: Vec<LabeledSignal> = (0..2)
        .flat_map(|domain| (0..4).map(move |class| (domain, class)))
        .map(|(domain, class)| LabeledSignal {
            domain,
            class,
            signal: MultichannelSignal::new(
                12_800.0,
                vec!["x".into()],
                Tensor::new(vec![1, len], (0..len).map(|i| i as f64).collect()).unwrap(),
            )
            .unwrap(),
        })
        .collect();
    let ds = assemble_offline(&entries, &spec).map_err(|e| e.to_string())?;
    check(ds.len() == 15872, format!("{} rows", ds.len()))?;
    let last = ds.windows().outer(ds.len() - 1);
    check(
        last[0] == ((cfg.per_class - 1) * cfg.stride) as f64,
        "last window does not start at the last stride".into(),
    )?;
    Ok(format!("{} windows; {} offline rows", seg.count, ds.len()))
}

fn peak_bin(x: &[f64]) -> usize {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn criterion_5() -> Verdict {
    let cfg = SimConfig {
        seed: 11,
        ..SimConfig::default()
    };
    let sig = |rpm, nm| synth_signal(&ConditionSpec::new(rpm, nm).unwrap(), FaultClass::Healthy, 1.0, &cfg).unwrap();
    let (base, slow, light) = (sig(2000.0, 20.0), sig(1500.0, 20.0), sig(2000.0, 15.0));
    let mut ratios = Vec::new();
    for ch in 0..base.channels() {
        let (b, sl, li) = (
            peak_bin(base.channel(ch)),
            peak_bin(slow.channel(ch)),
            peak_bin(light.channel(ch)),
        );
        check(b != sl, format!("channel {ch}: speed change left the peak at bin {b}"))?;
        check(
            b == li,
            format!("channel {ch}: torque change moved the peak {b} -> {li}"),
        )?;
        let ratio = rms(light.channel(ch)) / rms(base.channel(ch));
        check(
            (ratio / 0.75 - 1.0).abs() <= 0.10,
            format!("channel {ch}: rms ratio {ratio:.3}"),
        )?;
        ratios.push(ratio);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(format!(
        "peak bin {} -> {} Hz with speed, fixed with torque; rms ratio {lo:.3}..{hi:.3} over {} channels",
        peak_bin(base.channel(0)),
        peak_bin(slow.channel(0)),
        ratios.len()
    ))
}

fn criterion_6() -> Verdict {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig {
        per_class: 256,
        ..ExperimentConfig::default()
    };
    cfg.train.lr = 0.02;
    cfg.train.epochs = 12;
    let seeds: Vec<u64> = (0..5).collect();
    let report = compare(
        &cfg,
        &ScenarioKind::ALL,
        &FaultClass::FAULTS,
        &PipelineKind::ALL,
        &seeds,
        0,
        |r| {
            eprintln!(
                "  seed {} {} {} {}: {:.4}",
                r.seed, r.scenario, r.fault, r.pipeline, r.final_accuracy
            )
        },
    )
    .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let med = |p, s, f| report.median(p, s, f).expect("every cell ran");
    let mut failures = Vec::new();

    let torque = ScenarioKind::VariableTorque;
    let mut worst_torque = f64::INFINITY;
    for f in FaultClass::FAULTS {
        for p in [PipelineKind::EndToEnd, PipelineKind::TwoStage] {
            let m = med(p, torque, f);
            worst_torque = worst_torque.min(m);
            if m < 0.99 {
                failures.push(format!("(a) {torque} {f} {p} median {m:.4} < 0.99"));
            }
        }
    }

    let speed = ScenarioKind::VariableSpeed;
    let brk = FaultClass::TeethBreak;
    let gap = med(PipelineKind::TwoStage, speed, brk) - med(PipelineKind::EndToEnd, speed, brk);
    if gap < 0.05 {
        failures.push(format!(
            "(b) {speed} break: two-stage {:.4} vs e2e {:.4}, gap {gap:.4} < 0.05",
            med(PipelineKind::TwoStage, speed, brk),
            med(PipelineKind::EndToEnd, speed, brk)
        ));
    }

    for f in FaultClass::FAULTS {
        let raw = med(PipelineKind::RawRvfl, speed, f);
        for p in [PipelineKind::EndToEnd, PipelineKind::TwoStage] {
            if med(p, speed, f) <= raw {
                failures.push(format!(
                    "(c) {speed} {f}: raw-rvfl {raw:.4} not below {p} {:.4}",
                    med(p, speed, f)
                ));
            }
        }
    }
    if elapsed >= Duration::from_secs(20 * 60) {
        failures.push(format!("runtime {elapsed:.0?} over 20 min"));
    }

    let mut table = String::new();
    for (p, s, f) in report.cells() {
        table.push_str(&format!("\n    {s:<16} {f:<6} {p:<10} {:.4}", med(p, s, f)));
    }
    eprintln!("  medians over {} seeds:{table}", seeds.len());
    if failures.is_empty() {
        Ok(format!(
            "torque min median {worst_torque:.4}; speed break gap {gap:+.4}; raw-rvfl last on speed; {elapsed:.0?}"
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let configs = [
        ModelConfig::default(),
        ModelConfig {
            in_channels: 2,
            window_length: 200,
            kernel_sizes: vec![5],
            branch_channels: vec![3],
            pool_size: 2,
            ..ModelConfig::default()
        },
        ModelConfig {
            in_channels: 8,
            window_length: 128,
            kernel_sizes: vec![3, 9, 17, 33],
            branch_channels: vec![2, 5, 1, 7],
            ..ModelConfig::default()
        },
    ];
    for cfg in &configs {
        let (enc, _) = init_params(cfg, 9).map_err(|e| e.to_string())?;
        for b in [1, 3] {
            let x = rand_tensor(&mut rng, &[b, cfg.in_channels, cfg.window_length], -3.0, 3.0);
            let z = encoder_forward(cfg, &enc, &x).map_err(|e| e.to_string())?;
            check(z.shape() == [b, 64], format!("encoder output {:?}", z.shape()))?;
        }
    }
    let wrong = ModelConfig {
        feature_dim: 32,
        ..ModelConfig::default()
    };
    check(wrong.validate().is_err(), "a 32-dim encoder was accepted".into())?;

    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config(dir.path());
    let d = dir.path();
    ok(&["synth", "--config", s(&c), "--fault", "wear", "--out", s(d)]);
    let data = d.join("offline");
    ok(&["train-dge", "--config", s(&c), "--data", s(&data), "--out", s(d)]);
    ok(&[
        "export-features",
        "--config",
        s(&c),
        "--data",
        s(&data),
        "--model",
        s(&d.join("dge")),
        "--out",
        s(d),
    ]);
    let text = fs::read_to_string(d.join("features.csv")).unwrap();
    let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
    check(
        widths.iter().all(|&w| w == 66),
        "feature rows are not 66 columns wide".into(),
    )?;
    Ok(format!(
        "{} encoder configs give [B, 64]; export-features {} rows x 66",
        configs.len(),
        widths.len() - 1
    ))
}

fn criterion_8() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny_config(root.path());
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = root.path().join(name);
        chain(&dir, &cfg);
        ok(&[
            "compare",
            "--config",
            s(&cfg),
            "--seeds",
            "2",
            "--fault",
            "crack",
            "--out",
            s(&dir),
        ]);
        runs.push(artifacts(&dir));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let names = |r: &[(String, Vec<u8>)]| r.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    check(names(a) == names(b), "the two runs wrote different files".into())?;
    let differing: Vec<&str> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(differing.is_empty(), format!("differing artifacts: {differing:?}"))?;
    Ok(format!("{} artifacts byte-identical across two runs", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
    ];
    // libtest-style flags from `cargo test` are ignored
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match verdict {
            Ok(detail) => println!("criterion {id}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id}: FAIL  {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
