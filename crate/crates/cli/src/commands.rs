use std::collections::BTreeMap;
use std::path::Path;

use advlab::data::{gen_domain, netpbm, ShapeKind, SyntheticSpec, TextureKind};
use advlab::gradsuite::{run_suite, SuiteOptions, TOLERANCE};
use advlab::harness::{self, write_atomic, GeoConfig, TrainConfig};
use advlab::models::Bottleneck;
use advlab::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{list_outputs, now_ms, RunManifest};
use crate::Axis;

/// `gen-data` config: one synthetic domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    /// Number of images.
    pub n: usize,
    pub texture: TextureKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub image_size: Option<usize>,
    #[serde(default)]
    pub channels: Option<usize>,
    #[serde(default)]
    pub shape_kind: Option<ShapeKind>,
}

/// `sweep` config: a base training config plus the swept values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: Axis,
    #[serde(default)]
    pub bottlenecks: Vec<Bottleneck>,
    #[serde(default)]
    pub dataset_sizes: Vec<usize>,
    pub workers: usize,
    pub base: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub seeds: u64,
    pub seed: u64,
    pub broken_conv: bool,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_config(path: &Path) -> Result<(Vec<u8>, toml::Table), CliError> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let table = text.parse::<toml::Table>().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((bytes, table))
}

fn set_seed(table: &mut toml::Table, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| usage(format!("--seed {s} does not fit a config integer")))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(table: toml::Table, what: &str) -> Result<T, CliError> {
    toml::Value::Table(table).try_into().map_err(|e| usage(format!("{what} config: {}", e.to_string().trim())))
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialise to JSON")
}

fn from_json<T: DeserializeOwned>(v: serde_json::Value, what: &str) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| usage(format!("manifest {what} config: {e}")))
}

/// Runs `body` against `out`, echoing the config and writing the manifest
/// afterwards whatever the outcome.
fn execute(
    command: &str,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    out: &Path,
    echo: Option<&[u8]>,
    body: impl FnOnce() -> Result<(), CliError>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    let mut manifest = RunManifest::new(command, config, seeds);
    if let Some(bytes) = echo {
        write_atomic(&out.join("config.toml"), bytes)?;
    }
    let result = body();
    manifest.finished_unix_ms = now_ms();
    manifest.exit_status = result.as_ref().map_or_else(CliError::exit_code, |_| 0);
    manifest.error = result.as_ref().err().map(|e| e.to_string());
    manifest.outputs = list_outputs(out);
    manifest.write(out)?;
    result
}

pub fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (bytes, mut table) = read_config(config)?;
    set_seed(&mut table, seed)?;
    gen_data_with(typed(table, "gen-data")?, out, Some(&bytes))
}

fn gen_data_with(cfg: GenDataConfig, out: &Path, echo: Option<&[u8]>) -> Result<(), CliError> {
    let mut spec = SyntheticSpec::desk(cfg.texture);
    if let Some(size) = cfg.image_size {
        spec = spec.resized(size);
    }
    if let Some(c) = cfg.channels {
        spec.channels = c;
    }
    if let Some(k) = cfg.shape_kind {
        spec.shape_kind = k;
    }
    let seeds = BTreeMap::from([("seed".to_string(), cfg.seed)]);
    execute("gen-data", json(&cfg), seeds, out, echo, || {
        let ds = gen_domain(&spec, cfg.n, cfg.seed)?;
        ds.save_dir(out)?;
        println!("wrote {} images to {}", ds.len(), out.display());
        Ok(())
    })
}

pub fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let (bytes, mut table) = read_config(config)?;
    set_seed(&mut table, seed)?;
    train_with(typed(table, "train")?, out, Some(&bytes))
}

fn train_seeds(cfg: &TrainConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([("seed".to_string(), cfg.seed), ("data_seed".to_string(), cfg.data_seed())])
}

fn train_with(cfg: TrainConfig, out: &Path, echo: Option<&[u8]>) -> Result<(), CliError> {
    cfg.validate()?;
    execute("train", json(&cfg), train_seeds(&cfg), out, echo, || {
        let report = harness::train(&cfg, Some(out))?;
        let mut line = format!(
            "mode {}: recon_l1 {:.4} -> {:.4} over {} evaluations",
            cfg.mode.as_str(),
            report.first_recon(),
            report.final_recon(),
            report.log.rows.len()
        );
        if let Some(t) = report.final_translation() {
            line.push_str(&format!(
                ", centroid_drift {:.3}, texture_flip_rate {:.3}",
                t.centroid_drift, t.texture_flip_rate
            ));
        }
        println!("{line}");
        Ok(())
    })
}

pub fn sweep(config: &Path, out: &Path, seed: Option<u64>, axis: Axis, workers: usize) -> Result<(), CliError> {
    let (bytes, mut table) = read_config(config)?;
    set_seed(&mut table, seed)?;
    let bottlenecks: Vec<Bottleneck> = match table.remove("bottlenecks") {
        Some(v) => v.try_into().map_err(|e| usage(format!("sweep config: bottlenecks: {e}")))?,
        None => Vec::new(),
    };
    let dataset_sizes: Vec<usize> = match table.remove("dataset_sizes") {
        Some(v) => v.try_into().map_err(|e| usage(format!("sweep config: dataset_sizes: {e}")))?,
        None => Vec::new(),
    };
    // The axis fixes the modes; a base mode is only a placeholder.
    table.entry("mode").or_insert_with(|| "ae".into());
    let cfg = SweepConfig { axis, bottlenecks, dataset_sizes, workers, base: typed(table, "sweep")? };
    sweep_with(cfg, out, Some(&bytes))
}

fn sweep_with(cfg: SweepConfig, out: &Path, echo: Option<&[u8]>) -> Result<(), CliError> {
    match cfg.axis {
        Axis::Bottleneck if cfg.bottlenecks.len() < 2 => {
            return Err(usage("a bottleneck sweep needs `bottlenecks` with at least two entries"))
        }
        Axis::DatasetSize if cfg.dataset_sizes.len() < 2 => {
            return Err(usage("a dataset-size sweep needs `dataset_sizes` with at least two entries"))
        }
        _ => {}
    }
    execute("sweep", json(&cfg), train_seeds(&cfg.base), out, echo, || {
        match cfg.axis {
            Axis::Bottleneck => {
                let rows = harness::bottleneck_sweep(&cfg.base, &cfg.bottlenecks, Some(out), cfg.workers)?;
                for r in rows {
                    println!(
                        "{:>9} capacity {:>5}: recon_l1 {:.4} -> {:.4}",
                        r.bottleneck.to_string(),
                        r.capacity,
                        r.first_recon,
                        r.final_recon
                    );
                }
            }
            Axis::DatasetSize => {
                let report = harness::dataset_size_sweep(&cfg.base, &cfg.dataset_sizes, Some(out), cfg.workers)?;
                for r in &report.rows {
                    println!(
                        "{:>6} images: adv {:.4}, ae {:.4}, ratio {:.4}",
                        r.dataset_size, r.adv_recon, r.ae_recon, r.ratio
                    );
                }
                println!("{}", report.finding);
            }
        }
        Ok(())
    })
}

pub fn geo_demo(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    iters: Option<usize>,
) -> Result<(), CliError> {
    let (bytes, cfg) = match config {
        Some(path) => {
            let (bytes, file) = read_config(path)?;
            // Start from the defaults so the file only lists what it changes.
            let mut table: toml::Table = toml::Table::try_from(GeoConfig::default()).map_err(usage)?;
            for (k, v) in file {
                if !table.contains_key(&k) {
                    return Err(usage(format!("geo-demo config: unknown key `{k}`")));
                }
                table.insert(k, v);
            }
            (Some(bytes), typed::<GeoConfig>(table, "geo-demo")?)
        }
        None => (None, GeoConfig::default()),
    };
    let cfg = GeoConfig {
        seed: seed.unwrap_or(cfg.seed),
        n: n.unwrap_or(cfg.n),
        iterations: iters.unwrap_or(cfg.iterations),
        ..cfg
    };
    geo_demo_with(cfg, out, bytes.as_deref())
}

/// Maps a field onto `[-1, 1]` for display.
fn normalise(field: &Tensor<f64>) -> Result<Tensor<f64>, CliError> {
    let (lo, hi) = field.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let data = field.data().iter().map(|&v| if span > 0.0 { 2.0 * (v - lo) / span - 1.0 } else { 0.0 }).collect();
    let s = field.shape();
    Ok(Tensor::new(&[1, s[0], s[1]], data)?)
}

fn geo_demo_with(cfg: GeoConfig, out: &Path, echo: Option<&[u8]>) -> Result<(), CliError> {
    if cfg.n < 8 {
        return Err(usage(format!("geo-demo needs n >= 8, got {}", cfg.n)));
    }
    let seeds = BTreeMap::from([("seed".to_string(), cfg.seed)]);
    execute("geo-demo", json(&cfg), seeds, out, echo, || {
        let trace = harness::geometry_demo(&cfg)?;
        write_atomic(&out.join("trace.csv"), trace.to_csv().as_bytes())?;
        let mut distances = String::from("iteration,mean_distance\n");
        for (i, d) in trace.distances.iter().enumerate() {
            distances.push_str(&format!("{i},{d}\n"));
        }
        write_atomic(&out.join("distances.csv"), distances.as_bytes())?;
        let mut points = String::from("x,y\n");
        for p in trace.points.data().chunks(2) {
            points.push_str(&format!("{},{}\n", p[0], p[1]));
        }
        write_atomic(&out.join("points.csv"), points.as_bytes())?;
        let fields = out.join("fields");
        std::fs::create_dir_all(&fields).map_err(|e| usage(format!("{}: {e}", fields.display())))?;
        for s in &trace.snapshots {
            netpbm::save(&normalise(&s.field)?, &fields.join(format!("field_{:06}.pgm", s.iteration)))?;
        }
        println!(
            "mean distance {:.4} -> {:.4} ({:.1}%) over {} iterations",
            trace.initial_distance(),
            trace.final_distance(),
            100.0 * trace.final_distance() / trace.initial_distance(),
            cfg.iterations
        );
        Ok(())
    })
}

pub fn grad_check(seeds: u64, seed: u64, out: Option<&Path>, broken_conv: bool) -> Result<(), CliError> {
    grad_check_with(GradCheckConfig { seeds, seed, broken_conv }, out)
}

fn grad_check_with(cfg: GradCheckConfig, out: Option<&Path>) -> Result<(), CliError> {
    let body = || -> Result<(), CliError> {
        let checks = run_suite(&SuiteOptions { seeds: cfg.seeds, seed: cfg.seed, broken_conv: cfg.broken_conv })?;
        let mut csv = String::from("op,max_rel_error,checked,skipped_kinks,passed\n");
        println!("{:<22} {:>14} {:>9} {:>8}", "op", "max_rel_error", "checked", "skipped");
        for c in &checks {
            let status = if c.passed() { "ok" } else { "FAIL" };
            println!("{:<22} {:>14.3e} {:>9} {:>8}  {status}", c.op, c.max_rel_error, c.checked, c.skipped_kinks);
            csv.push_str(&format!("{},{},{},{},{}\n", c.op, c.max_rel_error, c.checked, c.skipped_kinks, c.passed()));
        }
        if let Some(dir) = out {
            write_atomic(&dir.join("grad_check.csv"), csv.as_bytes())?;
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
        if failed.is_empty() {
            println!("all {} ops within {TOLERANCE:e}", checks.len());
            Ok(())
        } else {
            Err(CliError::Check(format!("gradient check failed for: {}", failed.join(", "))))
        }
    };
    match out {
        Some(dir) => {
            let seeds = BTreeMap::from([("seed".to_string(), cfg.seed)]);
            execute("grad-check", json(&cfg), seeds, dir, None, body)
        }
        None => body(),
    }
}

pub fn rerun(manifest: &Path, out: &Path, workers: Option<usize>) -> Result<(), CliError> {
    let m = RunManifest::read(manifest)?;
    let echo = |v: &serde_json::Value| toml::to_string(v).ok().map(String::into_bytes);
    match m.command.as_str() {
        "gen-data" => gen_data_with(from_json(m.config.clone(), "gen-data")?, out, echo(&m.config).as_deref()),
        "train" => train_with(from_json(m.config.clone(), "train")?, out, echo(&m.config).as_deref()),
        "sweep" => {
            let mut cfg: SweepConfig = from_json(m.config.clone(), "sweep")?;
            cfg.workers = workers.unwrap_or(cfg.workers);
            sweep_with(cfg, out, echo(&m.config).as_deref())
        }
        "geo-demo" => geo_demo_with(from_json(m.config.clone(), "geo-demo")?, out, echo(&m.config).as_deref()),
        "grad-check" => grad_check_with(from_json(m.config, "grad-check")?, Some(out)),
        other => Err(usage(format!("manifest records unknown command `{other}`"))),
    }
}
