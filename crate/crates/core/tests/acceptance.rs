//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when a hard criterion fails. Criterion 8 is reported but never fails the run.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reverblab_core::features::{istft, stft};
use reverblab_core::harness::{
    generate_dataset, make_features, train, Dereverberator, ExperimentConfig, FeatureCache, Method, ModelKind,
};
use reverblab_core::metrics::{cepstral_distance, fw_snr_seg, llr, srmr, MetricFrameConfig, SrmrConfig};
use reverblab_core::nnet::conv::ConvGeom;
use reverblab_core::nnet::{
    grad_check, BatchNorm2d, Conv2d, ConvTranspose2d, LeakyRelu, Module, Tensor4, UNet, UNetConfig,
};
use reverblab_core::rir::{image_source_rir, measure_t60, IsmOptions, RoomSpec};
use reverblab_core::signal::{add_noise_at_snr, convolve, convolve_slices};
use reverblab_core::synth::SpeechLike;
use reverblab_core::{AudioSignal, Rir};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Tensor4::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn eval_rir(t60: f64) -> Rir {
    image_source_rir(&RoomSpec::evaluation_room(t60), &IsmOptions::default())
        .unwrap()
        .normalized_to_direct()
}

fn reverberant(x: &AudioSignal, h: &Rir, snr_db: f64, seed: u64) -> AudioSignal {
    let y = convolve(x, h).unwrap().fit_to(x.len());
    add_noise_at_snr(&y, snr_db, seed).unwrap()
}

fn metric_identities() -> Outcome {
    let t = Instant::now();
    let cfg = MetricFrameConfig::default();
    let (mut cd_max, mut llr_max, mut fw_exact) = (0.0f64, 0.0f64, true);
    for seed in 0..10 {
        let x = SpeechLike::default().generate(1000 + seed);
        cd_max = cd_max.max(cepstral_distance(&x, &x, &cfg).unwrap().abs());
        llr_max = llr_max.max(llr(&x, &x, &cfg).unwrap().abs());
        fw_exact &= fw_snr_seg(&x, &x, &cfg).unwrap() == 35.0;
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    outcome(
        cd_max <= 1e-9 && llr_max <= 1e-9 && fw_exact && fast,
        format!("max |cd| {cd_max:.1e}, max |llr| {llr_max:.1e}, fwSNRseg exactly 35: {fw_exact}; {time}"),
    )
}

fn rir_fidelity() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for target in [0.3, 0.5, 0.8] {
        let h = image_source_rir(&RoomSpec::evaluation_room(target), &IsmOptions::default()).unwrap();
        let m = measure_t60(&h).unwrap();
        let rel = (m - target) / target;
        ok &= rel.abs() <= 0.2;
        parts.push(format!("{target}->{m:.3} ({:+.0}%)", rel * 100.0));
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    outcome(ok && fast, format!("{}; {time}", parts.join(", ")))
}

fn transform_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err = 0.0f64;
    // Length-64 inputs, plus one long pair that takes the FFT path.
    for (la, lb) in [(64, 64), (64, 33), (64, 4000)] {
        let a: Vec<f64> = (0..la).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..lb).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = convolve_slices(&a, &b);
        for (n, g) in got.iter().enumerate() {
            let mut s = 0.0;
            for (i, av) in a.iter().enumerate() {
                if n >= i && n - i < b.len() {
                    s += av * b[n - i];
                }
            }
            max_err = max_err.max((g - s).abs());
        }
    }
    let x = SpeechLike::default().generate(7);
    let y = istft(&stft(&x).unwrap()).unwrap().fit_to(x.len());
    let num: f64 = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b) * (a - b)).sum();
    let rel = (num / x.energy()).sqrt();
    outcome(
        max_err <= 1e-10 && rel < 1e-6,
        format!("convolution max abs error {max_err:.1e}; ISTFT round-trip relative error {rel:.1e}"),
    )
}

fn geom(i: usize, o: usize, k: usize, s: usize, p: usize) -> ConvGeom {
    ConvGeom {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        pad: p,
    }
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    let mut check = |m: &mut dyn FnMut() -> f64| worst = worst.max(m());
    let mut conv = Conv2d::new("conv", geom(2, 3, 4, 2, 1), 0.2, &mut rng);
    check(&mut || grad_check(&mut conv, &random_tensor([2, 2, 8, 6], 1), 200, 1e-3, 2, true).unwrap().max_rel_error);
    let mut tconv = ConvTranspose2d::new("tconv", geom(3, 2, 4, 2, 1), 0.0, &mut rng);
    check(&mut || grad_check(&mut tconv, &random_tensor([2, 3, 4, 3], 3), 200, 1e-3, 4, true).unwrap().max_rel_error);
    let x = random_tensor([3, 2, 4, 4], 5);
    check(&mut || grad_check(&mut LeakyRelu::new(0.2), &x, 200, 1e-5, 6, true).unwrap().max_rel_error);
    check(&mut || grad_check(&mut LeakyRelu::relu(), &x, 200, 1e-5, 7, true).unwrap().max_rel_error);
    let mut bn = BatchNorm2d::new("bn", 2);
    bn.gamma.data = vec![1.5, -0.7];
    bn.beta.data = vec![0.1, 0.3];
    check(&mut || grad_check(&mut bn, &x, 200, 1e-5, 8, true).unwrap().max_rel_error);
    for ls in [false, true] {
        let cfg = UNetConfig {
            depth: 2,
            base_channels: 4,
            ls_skip: ls,
            ..Default::default()
        };
        let mut net = UNet::new(cfg, 11).unwrap();
        // The LS head starts at zero, which would mask every upstream gradient.
        for p in net.params_mut() {
            if p.name.starts_with("head") {
                p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let x = random_tensor([2, 1, 16, 16], 13);
        check(&mut || grad_check(&mut net, &x, 200, 1e-5, 14, true).unwrap().max_rel_error);
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(worst < 1e-3 && fast, format!("worst relative error {worst:.2e} over 7 checks; {time}"))
}

fn ls_identity() -> Outcome {
    let mut net = UNet::new(UNetConfig::ls_unet(), 5).unwrap();
    let x = random_tensor([1, 1, 128, 340], 6);
    let y = net.forward(&x, false).unwrap();
    let err = x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-6, format!("max abs deviation {err:.1e} on a 128x340 input"))
}

fn fd_ndlp_trend() -> Outcome {
    let t = Instant::now();
    let h = eval_rir(0.6);
    let mut wpe = Dereverberator::new(Method::FdNdlp, None).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..10 {
        let y = reverberant(&SpeechLike::default().generate(seed), &h, 35.0, 500 + seed);
        before += srmr(&y, &SrmrConfig::default()).unwrap() / 10.0;
        after += srmr(&wpe.process(&y).unwrap(), &SrmrConfig::default()).unwrap() / 10.0;
    }
    let (fast, time) = within(t, Duration::from_secs(300));
    outcome(
        after > before && fast,
        format!("mean SRMR reverberant {before:.3} -> fd-ndlp {after:.3}; {time}"),
    )
}

fn toy_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        corpus_dir: dir.join("corpus"),
        synthetic_utterances: 16,
        out_dir: dir.join("out"),
        t60_grid: vec![0.3, 0.5, 0.7, 0.9],
        utterances_per_condition: 16,
        test_fraction: 0.0,
        val_fraction: 0.0,
        epochs: 30,
        batch_size: 16,
        lr: 1e-3,
        seed: 0,
        ..Default::default()
    }
}

fn toy_training() -> Outcome {
    let t = Instant::now();
    let d = tempfile::tempdir().unwrap();
    let cfg = toy_config(d.path());
    let m = generate_dataset(&cfg).unwrap();
    let cache = make_features(&m, cfg.features_dir()).unwrap();
    let mut ok = cache.entries.len() == 64;
    let mut parts = vec![format!("{} pairs, lr {}", cache.entries.len(), cfg.lr)];
    for model in [ModelKind::Unet, ModelKind::LsUnet] {
        let out = train(&cfg, &cache, model).unwrap();
        let ratio = out.final_train_ratio();
        ok &= ratio <= 0.1;
        parts.push(format!(
            "{model} {:.4}->{:.4} ({:.1}%)",
            out.log[0].train_mse,
            out.log.last().unwrap().train_mse,
            ratio * 100.0
        ));
    }
    // Determinism: two short runs from the same seed must agree bit for bit.
    let short = ExperimentConfig { epochs: 2, ..cfg.clone() };
    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let c = ExperimentConfig {
            out_dir: d.path().join(sub),
            ..short.clone()
        };
        let out = train(&c, &cache, ModelKind::LsUnet).unwrap();
        runs.push((out.log, std::fs::read(out.last_checkpoint).unwrap()));
    }
    let same = runs[0] == runs[1];
    ok &= same;
    parts.push(format!("repeat run identical: {same}"));
    let (fast, time) = within(t, Duration::from_secs(30 * 60));
    parts.push(time);
    outcome(ok && fast, parts.join("; "))
}

fn trend_check() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        synthetic_utterances: 8,
        utterances_per_condition: 8,
        t60_grid: vec![0.4, 0.8],
        val_fraction: 0.25,
        epochs: 3,
        ..toy_config(d.path())
    };
    let m = generate_dataset(&base).unwrap();
    let cache: FeatureCache = make_features(&m, base.features_dir()).unwrap();
    let (mut wins, mut total) = (0, 0);
    let mut parts = Vec::new();
    for seed in [1, 2, 3] {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let u = train(&cfg, &cache, ModelKind::Unet).unwrap();
        let l = train(&cfg, &cache, ModelKind::LsUnet).unwrap();
        for (a, b) in l.log.iter().zip(&u.log) {
            total += 1;
            wins += usize::from(a.val_mse.unwrap() <= b.val_mse.unwrap());
        }
        parts.push(format!(
            "seed {seed}: final val ls-unet {:.4} vs unet {:.4}",
            l.log.last().unwrap().val_mse.unwrap(),
            u.log.last().unwrap().val_mse.unwrap()
        ));
    }
    parts.push(format!("ls-unet <= unet at {wins}/{total} epochs"));
    outcome(wins == total, parts.join("; "))
}

fn srmr_vs_t60() -> Outcome {
    let mut pass = Dereverberator::new(Method::Passthrough, None).unwrap();
    let means: Vec<f64> = [0.3, 0.6, 0.9]
        .iter()
        .map(|&t60| {
            let h = eval_rir(t60);
            (0..5)
                .map(|seed| {
                    let y = reverberant(&SpeechLike::default().generate(seed), &h, 35.0, 900 + seed);
                    srmr(&pass.process(&y).unwrap(), &SrmrConfig::default()).unwrap()
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    let ok = means.windows(2).all(|w| w[1] < w[0]);
    outcome(ok, format!("mean passthrough SRMR at T60 0.3/0.6/0.9: {:.3} / {:.3} / {:.3}", means[0], means[1], means[2]))
}

fn main() -> ExitCode {
    let criteria: [(&str, bool, fn() -> Outcome); 9] = [
        ("metric identities", true, metric_identities),
        ("RIR T60 fidelity", true, rir_fidelity),
        ("convolution and STFT oracles", true, transform_oracles),
        ("gradient checks", true, gradient_suite),
        ("LS identity at zero head", true, ls_identity),
        ("FD-NDLP raises SRMR", true, fd_ndlp_trend),
        ("toy training convergence", true, toy_training),
        ("LS vs baseline validation MSE (soft)", false, trend_check),
        ("passthrough SRMR falls with T60", true, srmr_vs_t60),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, hard, run)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = run();
        let status = match (o.pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        if !o.pass && *hard {
            failed += 1;
        }
        println!("criterion {id} {status}: {name}: {}", o.detail);
    }
    if failed > 0 {
        println!("{failed} hard criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
