//! CSV logs. Floats are written with Rust's shortest round-trip formatting,
//! so parsing a log back yields exactly the values that were written.

use std::path::Path;

use crate::error::{Error, Result};

pub const LOSS_LOG_HEADER: &str = "images_seen,recon_l1,critic_loss,gen_loss,wall_ms";
pub const TRANSLATION_HEADER: &str =
    "images_seen,recon_l1,critic_loss,gen_loss,wall_ms,centroid_drift,texture_flip_rate";
pub const DIAGNOSTICS_HEADER: &str = "images_seen,recon_l1_train,separation_rate";

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub images_seen: u64,
    /// Mean per-pixel L1 on the held-out slice.
    pub recon_l1: f64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LogRow>,
}

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, name: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format(format!("line {line}: {name} `{field}` is not a number")))
}

impl LossLog {
    /// Appends a row, enforcing strictly increasing `images_seen` and
    /// finite values.
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.images_seen <= last.images_seen {
                return Err(Error::Format(format!(
                    "images_seen {} does not increase past {}",
                    row.images_seen, last.images_seen
                )));
            }
        }
        for (name, v) in [("recon_l1", row.recon_l1), ("critic_loss", row.critic_loss), ("gen_loss", row.gen_loss)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} at {} images is {v}", row.images_seen)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOSS_LOG_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.images_seen, r.recon_l1, r.critic_loss, r.gen_loss, r.wall_ms));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOSS_LOG_HEADER) {
            return Err(Error::Format(format!("loss log must start with `{LOSS_LOG_HEADER}`")));
        }
        let mut log = LossLog::default();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("line {n}: expected 5 fields, got {}", f.len())));
            }
            log.push(LogRow {
                images_seen: parse_num(f[0], n, "images_seen")?,
                recon_l1: parse_num(f[1], n, "recon_l1")?,
                critic_loss: parse_num(f[2], n, "critic_loss")?,
                gen_loss: parse_num(f[3], n, "gen_loss")?,
                wall_ms: parse_num(f[4], n, "wall_ms")?,
            })
            .map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Population variance of `recon_l1` over the last `tail` rows.
    pub fn recon_tail_variance(&self, tail: usize) -> f64 {
        let start = self.rows.len().saturating_sub(tail);
        let vals: Vec<f64> = self.rows[start..].iter().map(|r| r.recon_l1).collect();
        if vals.is_empty() {
            return 0.0;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    }
}

/// Per-evaluation translation metrics on the held-out source slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationRow {
    pub log: LogRow,
    /// Mean Euclidean distance between input and output shape centroids.
    pub centroid_drift: f64,
    /// Fraction of outputs the texture oracle assigns to the target domain.
    pub texture_flip_rate: f64,
}

pub fn translation_csv(rows: &[TranslationRow]) -> String {
    let mut out = format!("{TRANSLATION_HEADER}\n");
    for t in rows {
        let r = &t.log;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.images_seen, r.recon_l1, r.critic_loss, r.gen_loss, r.wall_ms, t.centroid_drift, t.texture_flip_rate
        ));
    }
    out
}

pub fn parse_translation_csv(text: &str) -> Result<Vec<TranslationRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRANSLATION_HEADER) {
        return Err(Error::Format(format!("translation report must start with `{TRANSLATION_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("line {n}: expected 7 fields, got {}", f.len())));
            }
            Ok(TranslationRow {
                log: LogRow {
                    images_seen: parse_num(f[0], n, "images_seen")?,
                    recon_l1: parse_num(f[1], n, "recon_l1")?,
                    critic_loss: parse_num(f[2], n, "critic_loss")?,
                    gen_loss: parse_num(f[3], n, "gen_loss")?,
                    wall_ms: parse_num(f[4], n, "wall_ms")?,
                },
                centroid_drift: parse_num(f[5], n, "centroid_drift")?,
                texture_flip_rate: parse_num(f[6], n, "texture_flip_rate")?,
            })
        })
        .collect()
}

/// Extra per-evaluation diagnostics that are not part of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub images_seen: u64,
    /// Mean per-pixel L1 on a fixed slice of the training images.
    pub recon_l1_train: f64,
    /// Fraction of held-out `(sample, feature)` pairs with
    /// `Dᵢ(x) ≥ Dᵢ(G(x))`; 0 outside adversarial modes.
    pub separation_rate: f64,
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut out = format!("{DIAGNOSTICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.images_seen, r.recon_l1_train, r.separation_rate));
    }
    out
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
