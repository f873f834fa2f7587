use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::{Mode, TrainConfig};
use crate::harness::log::write_atomic;
use crate::harness::train::{train, TrainReport};
use crate::models::Bottleneck;

/// Runs `configs` on up to `workers` threads. Results come back in input
/// order whatever the scheduling.
fn run_all(configs: Vec<(TrainConfig, Option<PathBuf>)>, workers: usize) -> Result<Vec<TrainReport>> {
    let workers = workers.max(1).min(configs.len().max(1));
    if workers == 1 {
        return configs.iter().map(|(c, o)| train(c, o.as_deref())).collect();
    }
    let mut slots: Vec<Option<Result<TrainReport>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let configs = &configs;
            handles.push(scope.spawn(move || {
                (w..configs.len())
                    .step_by(workers)
                    .map(|i| (i, train(&configs[i].0, configs[i].1.as_deref())))
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every run scheduled")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckRow {
    /// Position in the requested list.
    pub run: usize,
    pub bottleneck: Bottleneck,
    pub capacity: usize,
    pub first_recon: f64,
    pub final_recon: f64,
}

pub const BOTTLENECK_REPORT_HEADER: &str = "run,bottleneck,capacity,first_recon,final_recon";

/// Trains one autoencoder per bottleneck with otherwise identical configs
/// (shared seeds) and reports the rows ordered by decreasing capacity.
/// With `out`, run `i` writes into `out/run_{i}_{HxWxC}` and the merged
/// report goes to `out/bottleneck_report.csv`.
pub fn bottleneck_sweep(
    base: &TrainConfig,
    bottlenecks: &[Bottleneck],
    out: Option<&Path>,
    workers: usize,
) -> Result<Vec<BottleneckRow>> {
    if bottlenecks.len() < 2 {
        return Err(Error::Config("a bottleneck sweep needs at least two bottlenecks".into()));
    }
    let configs = bottlenecks
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut c = base.clone();
            c.mode = Mode::Ae;
            c.bottleneck = b;
            c.validate()?;
            Ok((c, out.map(|o| o.join(format!("run_{i}_{b}")))))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = run_all(configs, workers)?;
    let mut rows: Vec<BottleneckRow> = bottlenecks
        .iter()
        .zip(&reports)
        .enumerate()
        .map(|(run, (&bottleneck, r))| BottleneckRow {
            run,
            bottleneck,
            capacity: bottleneck.capacity(),
            first_recon: r.first_recon(),
            final_recon: r.final_recon(),
        })
        .collect();
    rows.sort_by(|a, b| b.capacity.cmp(&a.capacity).then(a.run.cmp(&b.run)));
    if let Some(dir) = out {
        let mut csv = format!("{BOTTLENECK_REPORT_HEADER}\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{},{},{}\n", r.run, r.bottleneck, r.capacity, r.first_recon, r.final_recon));
        }
        write_atomic(&dir.join("bottleneck_report.csv"), csv.as_bytes())?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeRow {
    pub dataset_size: usize,
    pub adv_recon: f64,
    pub ae_recon: f64,
    /// `adv_recon / ae_recon`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSweepReport {
    pub rows: Vec<SizeRow>,
    /// Whether the smallest dataset has the ratio closest to 1, stated as
    /// an observation rather than a check.
    pub finding: String,
}

pub const SIZE_REPORT_HEADER: &str = "dataset_size,adv_recon,ae_recon,ratio";

/// Trains an adversarial and an autoencoder run per dataset size and
/// reports their final held-out reconstruction and its ratio. With `out`,
/// runs go to `out/size_{n}_{adv|ae}` and the report to
/// `out/dataset_size_report.csv`.
pub fn dataset_size_sweep(
    base: &TrainConfig,
    sizes: &[usize],
    out: Option<&Path>,
    workers: usize,
) -> Result<SizeSweepReport> {
    if sizes.len() < 2 {
        return Err(Error::Config("a dataset-size sweep needs at least two sizes".into()));
    }
    let mut configs = Vec::new();
    for &n in sizes {
        for mode in [Mode::Adv, Mode::Ae] {
            let mut c = base.clone();
            c.mode = mode;
            c.dataset_size = n;
            c.target_texture = c.source_texture;
            c.source_dir = None;
            c.target_dir = None;
            c.validate()?;
            configs.push((c, out.map(|o| o.join(format!("size_{n}_{}", mode.as_str())))));
        }
    }
    let reports = run_all(configs, workers)?;
    let rows: Vec<SizeRow> = sizes
        .iter()
        .zip(reports.chunks(2))
        .map(|(&n, pair)| {
            let (adv, ae) = (pair[0].final_recon(), pair[1].final_recon());
            SizeRow { dataset_size: n, adv_recon: adv, ae_recon: ae, ratio: adv / ae }
        })
        .collect();
    let closest =
        rows.iter().min_by(|a, b| (a.ratio - 1.0).abs().total_cmp(&(b.ratio - 1.0).abs())).expect("at least two rows");
    let smallest = rows.iter().map(|r| r.dataset_size).min().expect("at least two rows");
    let finding = if closest.dataset_size == smallest {
        format!("smallest dataset ({smallest}) has the adv/ae ratio closest to 1 ({:.4})", closest.ratio)
    } else {
        format!(
            "dataset of {} (not the smallest, {smallest}) has the adv/ae ratio closest to 1 ({:.4})",
            closest.dataset_size, closest.ratio
        )
    };
    if let Some(dir) = out {
        let mut csv = format!("{SIZE_REPORT_HEADER}\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{},{}\n", r.dataset_size, r.adv_recon, r.ae_recon, r.ratio));
        }
        write_atomic(&dir.join("dataset_size_report.csv"), csv.as_bytes())?;
        write_atomic(&dir.join("finding.txt"), format!("{finding}\n").as_bytes())?;
    }
    Ok(SizeSweepReport { rows, finding })
}
