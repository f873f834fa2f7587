//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line and
//! the process exits non-zero if any failed. Training criteria run the
//! real default configurations, so expect a run time of tens of minutes on
//! one core; pass criterion numbers as arguments to run a subset
//! (`cargo test --release --test acceptance -- 4 7`).

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use advlab::autodiff::Tape;
use advlab::data::{netpbm, TextureKind};
use advlab::gradsuite::{run_suite, SuiteOptions, TOLERANCE};
use advlab::harness::{
    bottleneck_sweep, geometry_demo, train, train_i2i, GeoConfig, LogRow, LossLog, Mode, TrainConfig,
};
use advlab::models::{Bottleneck, Critic, CriticSpec};
use advlab::objectives::{identity_chain_check, separable_adv_loss, wgan_loss, Batch, ChainReport};
use advlab::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fmt3(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let checks = run_suite(&SuiteOptions::default()).expect("gradient suite runs");
    let elapsed = t0.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
    let end_to_end = checks.iter().any(|c| c.op == "end_to_end" && c.checked > 0);
    outcome(
        failed.is_empty() && end_to_end && worst < TOLERANCE && elapsed < Duration::from_secs(120),
        format!(
            "{} checks over {} seeds, worst rel err {worst:.2e}, failed {failed:?}, {:.1}s",
            checks.len(),
            SuiteOptions::default().seeds,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn nested_loop_conv(
    x: &[f64],
    k: &[f64],
    (batch, cin, h, w): (usize, usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; batch * cout * oh * ow];
    for b in 0..batch {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride + u) as isize - pad as isize;
                                let q = (j * stride + v) as isize - pad as isize;
                                if r >= 0 && q >= 0 && r < h as isize && q < w as isize {
                                    acc += x[((b * cin + c) * h + r as usize) * w + q as usize]
                                        * k[((o * cin + c) * kh + u) * kw + v];
                                }
                            }
                        }
                    }
                    y[((b * cout + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

fn conv_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cases, mut mismatches) = (0, 0);
    for h in 1..=8 {
        for w in 1..=8 {
            for kh in 1..=3 {
                for kw in 1..=3 {
                    for stride in [1, 2] {
                        for pad in [0, 1] {
                            if kh > h + 2 * pad || kw > w + 2 * pad {
                                continue;
                            }
                            let (batch, cin, cout) = (2, 2, 2);
                            let mut ints =
                                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-5i32..=5) as f64).collect() };
                            let x = ints(batch * cin * h * w);
                            let k = ints(cout * cin * kh * kw);
                            let expected = nested_loop_conv(&x, &k, (batch, cin, h, w), (cout, kh, kw), stride, pad);
                            let mut tape = Tape::<f64>::new();
                            let xv = tape.constant(Tensor::new(&[batch, cin, h, w], x).unwrap());
                            let kv = tape.constant(Tensor::new(&[cout, cin, kh, kw], k).unwrap());
                            let y = tape.conv2d(xv, kv, None, stride, pad).unwrap();
                            let got = tape.value(y).data();
                            let same = got.len() == expected.len()
                                && got.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits());
                            cases += 1;
                            mismatches += usize::from(!same);
                        }
                    }
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("{cases} geometries, {mismatches} mismatches, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

fn chain_critic(seed: u64) -> Critic<f64> {
    let spec = CriticSpec {
        channels: 1,
        image_size: 8,
        base_width: 4,
        max_width: 8,
        levels: 2,
        vector_dim: 6,
        leaky_slope: 0.2,
    };
    let mut critic = Critic::<f64>::new(spec, seed).unwrap();
    let names: Vec<String> = critic.params.names().to_vec();
    for (name, t) in names.iter().zip(critic.params.tensors_mut()) {
        if name.ends_with(".w") {
            t.data_mut().iter_mut().for_each(|v| *v = v.abs());
        }
    }
    critic
}

fn identity_chain() -> Outcome {
    let (mut worst, mut applicable, mut shuffle_breaks) = (0.0f64, 0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
        let critic = chain_critic(seed);
        let m = rng.random_range(2..=8);
        let n = m * 64;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..1.0)).collect();
        let g: Vec<f64> = x.iter().map(|v| v - rng.random_range(0.0..0.6)).collect();
        let x = Tensor::new(&[m, 1, 8, 8], x).unwrap();
        let g = Tensor::new(&[m, 1, 8, 8], g).unwrap();
        let (xb, gb) = (Batch::new(x.clone()).unwrap(), Batch::new(g.clone()).unwrap());
        if let ChainReport::Applicable { paired, separable, wgan, .. } =
            identity_chain_check(&xb, &gb, &critic).unwrap()
        {
            applicable += 1;
            worst = worst.max((paired - separable).abs()).max((separable - wgan).abs());
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let samples: Vec<Tensor<f64>> = order.iter().map(|&i| g.unbatch(i)).collect();
        let gs = Batch::new(Tensor::stack(&samples.iter().collect::<Vec<_>>()).unwrap()).unwrap();
        let same = separable_adv_loss(&xb, &gb, &critic).unwrap().to_bits()
            == separable_adv_loss(&xb, &gs, &critic).unwrap().to_bits()
            && wgan_loss(&xb, &gb, &critic).unwrap().to_bits() == wgan_loss(&xb, &gs, &critic).unwrap().to_bits();
        shuffle_breaks += usize::from(!same);
    }
    outcome(
        applicable == 100 && worst <= 1e-6 && shuffle_breaks == 0,
        format!("{applicable}/100 separated, worst gap {worst:.2e}, shuffle changes {shuffle_breaks}"),
    )
}

// ---------------------------------------------------------------- 4, 5, 7

/// Per-seed autoencoder finals for the default and the narrow bottleneck,
/// shared by the convergence, gap and capacity criteria.
struct AeRuns {
    ratio_4x4: Vec<f64>,
    final_4x4: Vec<f64>,
    final_2x2: Vec<f64>,
}

fn ae_runs() -> AeRuns {
    let wide = Bottleneck::new(32, 4, 4);
    let narrow = Bottleneck::new(32, 2, 2);
    let mut runs = AeRuns { ratio_4x4: Vec::new(), final_4x4: Vec::new(), final_2x2: Vec::new() };
    for seed in SEEDS {
        let base = TrainConfig { seed, ..TrainConfig::new(Mode::Ae) };
        let rows = bottleneck_sweep(&base, &[wide, narrow], None, 1).expect("sweep runs");
        let w = rows.iter().find(|r| r.bottleneck == wide).unwrap();
        let n = rows.iter().find(|r| r.bottleneck == narrow).unwrap();
        runs.ratio_4x4.push(w.final_recon / w.first_recon);
        runs.final_4x4.push(w.final_recon);
        runs.final_2x2.push(n.final_recon);
    }
    runs
}

fn ae_convergence(ae: &AeRuns) -> Outcome {
    let m = median(ae.ratio_4x4.clone());
    outcome(m <= 0.20, format!("final/first recon {} median {m:.4} (limit 0.20)", fmt3(&ae.ratio_4x4)))
}

fn adversarial_reconstruction(ae: &AeRuns) -> Outcome {
    let (mut ratios, mut finals) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let report = train(&TrainConfig { seed, ..TrainConfig::new(Mode::Adv) }, None).expect("adv run");
        ratios.push(report.final_recon() / report.first_recon());
        finals.push(report.final_recon());
    }
    let ratio = median(ratios.clone());
    let (ae_final, adv_final) = (median(ae.final_4x4.clone()), median(finals.clone()));

    // The tracker must not influence training: the same run with it off
    // writes byte-identical checkpoints.
    let tracker_free = {
        let cfg = TrainConfig { total_images: 5000, ..TrainConfig::new(Mode::Adv) };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        train(&cfg, Some(a.path())).unwrap();
        train(&TrainConfig { track_recon: false, ..cfg }, Some(b.path())).unwrap();
        let (ca, cb) = (dir_bytes(&a.path().join("checkpoints")), dir_bytes(&b.path().join("checkpoints")));
        !ca.is_empty() && ca == cb
    };
    outcome(
        ratio <= 0.50 && ae_final <= adv_final && tracker_free,
        format!(
            "final/first recon {} median {ratio:.4} (limit 0.50); final ae {ae_final:.4} <= adv {adv_final:.4}; \
             tracker-off checkpoints identical: {tracker_free}",
            fmt3(&ratios)
        ),
    )
}

fn bottleneck_capacity(ae: &AeRuns) -> Outcome {
    let (wide, narrow) = (median(ae.final_4x4.clone()), median(ae.final_2x2.clone()));
    outcome(
        narrow > wide,
        format!(
            "final recon 2x2x32 {} median {narrow:.4} > 4x4x32 {} median {wide:.4}",
            fmt3(&ae.final_2x2),
            fmt3(&ae.final_4x4)
        ),
    )
}

// ---------------------------------------------------------------- 6

fn translation() -> Outcome {
    let (mut drift, mut flip) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = TrainConfig {
            seed,
            source_texture: TextureKind::HStripes,
            target_texture: TextureKind::Dots,
            total_images: 100_000,
            ..TrainConfig::new(Mode::I2i)
        };
        let report = train_i2i(&cfg, None).expect("translation run");
        let last = report.final_translation().expect("translation rows");
        drift.push(last.centroid_drift);
        flip.push(last.texture_flip_rate);
    }
    let (d, f) = (median(drift.clone()), median(flip.clone()));
    outcome(
        d <= 3.0 && f >= 0.7,
        format!(
            "centroid drift {} median {d:.3} px (limit 3); flip rate {} median {f:.3} (min 0.7)",
            fmt3(&drift),
            fmt3(&flip)
        ),
    )
}

// ---------------------------------------------------------------- 8

fn geometry() -> Outcome {
    let (mut ratios, mut slowest) = (Vec::new(), Duration::ZERO);
    for seed in SEEDS {
        let t0 = Instant::now();
        let trace = geometry_demo(&GeoConfig { seed, ..GeoConfig::default() }).expect("geometry demo");
        slowest = slowest.max(t0.elapsed());
        ratios.push(trace.final_distance() / trace.initial_distance());
    }
    let m = median(ratios.clone());
    outcome(
        m <= 0.25 && slowest < Duration::from_secs(120),
        format!(
            "n=256, 2000 alternations: final/initial distance {} median {m:.4} (limit 0.25), slowest {:.1}s",
            fmt3(&ratios),
            slowest.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.ends_with("manifest.json") {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn advlab(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_advlab")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

/// Logs and checkpoints only; grids and the manifest are not compared.
fn logs_and_checkpoints(dir: &Path) -> Vec<(String, Vec<u8>)> {
    dir_bytes(dir)
        .into_iter()
        .filter(|(name, _)| name.ends_with(".csv") || name.ends_with(".advt") || name.ends_with(".pgm"))
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let small = "seed = 4\ndataset_size = 32\ntotal_images = 400\neval_every = 200\n";
    let configs = [
        ("gen-data", "n = 6\ntexture = \"h-stripes\"\nseed = 2\n".to_string(), vec![]),
        ("train", format!("mode = \"ae\"\n{small}"), vec![]),
        ("train", format!("mode = \"adv\"\n{small}"), vec![]),
        ("train", format!("mode = \"adv-paired\"\n{small}"), vec![]),
        ("train", format!("mode = \"i2i\"\ntarget_texture = \"dots\"\n{small}"), vec![]),
        (
            "sweep",
            format!("mode = \"ae\"\n{small}bottlenecks = [\"4x4x32\", \"2x2x32\"]\n"),
            vec!["--axis", "bottleneck"],
        ),
        ("sweep", format!("mode = \"adv\"\n{small}dataset_sizes = [32, 48]\n"), vec!["--axis", "dataset-size"]),
        ("geo-demo", "n = 64\niterations = 200\n".to_string(), vec![]),
    ];
    let mut failures = Vec::new();
    for (i, (command, text, extra)) in configs.iter().enumerate() {
        let cfg = root.join(format!("c{i}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let (first, second) = (root.join(format!("a{i}")), root.join(format!("b{i}")));
        let mut args = vec![*command, "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()];
        args.extend(extra.iter().copied());
        let manifest = first.join("manifest.json");
        let ok = advlab(&args)
            && advlab(&["rerun", "--manifest", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
        let (a, b) = (logs_and_checkpoints(&first), logs_and_checkpoints(&second));
        if !ok || a.is_empty() || a != b {
            failures.push(format!("{command}#{i}"));
        }
    }
    let grad = (root.join("ga"), root.join("gb"));
    let grad_ok = advlab(&["grad-check", "--seeds", "2", "--out", grad.0.to_str().unwrap()])
        && advlab(&[
            "rerun",
            "--manifest",
            grad.0.join("manifest.json").to_str().unwrap(),
            "--out",
            grad.1.to_str().unwrap(),
        ])
        && logs_and_checkpoints(&grad.0) == logs_and_checkpoints(&grad.1);
    if !grad_ok {
        failures.push("grad-check".into());
    }
    outcome(
        failures.is_empty(),
        format!("{} commands rerun from manifests, differing: {failures:?}", configs.len() + 1),
    )
}

// ---------------------------------------------------------------- 10

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ppm_ok = true;
    for (c, h, w) in [(1, 7, 5), (3, 4, 9), (3, 32, 32), (1, 1, 1)] {
        let n = c * h * w;
        let img = Tensor::<f64>::new(&[c, h, w], (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap();
        let bytes = netpbm::encode(&img).unwrap();
        let back: Tensor<f64> = netpbm::decode(&bytes).unwrap();
        let requantized: Vec<u8> = back.data().iter().map(|&v| netpbm::quantize(v)).collect();
        let original: Vec<u8> = img.data().iter().map(|&v| netpbm::quantize(v)).collect();
        ppm_ok &= requantized == original && netpbm::encode(&back).unwrap() == bytes;
    }
    let mut log = LossLog::default();
    for i in 0..50u64 {
        log.push(LogRow {
            images_seen: i * 1000,
            recon_l1: rng.random::<f64>() / 3.0,
            critic_loss: rng.random_range(-1e3..1e3),
            gen_loss: rng.random_range(-1e-9..1e-9),
            wall_ms: rng.random_range(0..1 << 40),
        })
        .unwrap();
    }
    let log_ok = LossLog::parse(&log.to_csv()).map(|l| l == log).unwrap_or(false);
    outcome(ppm_ok && log_ok, format!("PPM/PGM bytes preserved: {ppm_ok}; LossLog lossless: {log_ok}"))
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {:<4} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    if run(1) {
        record(1, "gradient correctness", gradients());
    }
    if run(2) {
        record(2, "convolution oracle", conv_oracle());
    }
    if run(3) {
        record(3, "identity chain", identity_chain());
    }
    if run(4) || run(5) || run(7) {
        let ae = ae_runs();
        if run(4) {
            record(4, "autoencoder convergence", ae_convergence(&ae));
        }
        if run(5) {
            record(5, "adversarial reconstruction", adversarial_reconstruction(&ae));
        }
        if run(7) {
            record(7, "bottleneck capacity", bottleneck_capacity(&ae));
        }
    }
    if run(6) {
        record(6, "feature-preserving translation", translation());
    }
    if run(8) {
        record(8, "geometry demo", geometry());
    }
    if run(9) {
        record(9, "rerun determinism", determinism());
    }
    if run(10) {
        record(10, "format round-trips", round_trips());
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
