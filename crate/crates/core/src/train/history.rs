use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub selection_metric: f64,
    pub lr: f64,
    /// Epoch whose parameters produced the spuriousness table used for this
    /// epoch's episodes; `None` when training does not use one.
    pub table_epoch: Option<usize>,
    pub checkpoint: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch}")
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Epoch with the highest selection metric; the earliest wins ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.selection_metric > b.selection_metric) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,mean_loss,selection_metric,lr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.mean_loss, r.selection_metric, r.lr);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads the four exported columns back; table and checkpoint references
    /// are reconstructed from the epoch number.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("epoch,mean_loss,selection_metric,lr") => {}
            _ => return Err(Error::parse(origin, 1, "missing history header")),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(origin, i + 2, "expected 4 fields"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(origin, i + 2, e.to_string()))
            };
            let epoch = fields[0]
                .parse::<usize>()
                .map_err(|e| Error::parse(origin, i + 2, e.to_string()))?;
            records.push(EpochRecord {
                epoch,
                mean_loss: num(fields[1])?,
                selection_metric: num(fields[2])?,
                lr: num(fields[3])?,
                table_epoch: None,
                checkpoint: checkpoint_name(epoch),
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
