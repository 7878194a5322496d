use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    /// Mean loss over the triplets that contributed this epoch.
    pub loss: f64,
    pub skipped: u64,
    pub seconds: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,lr,loss,skipped,seconds";

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let expected = self.records.len() as u32;
        if record.epoch != expected {
            return Err(Error::Contract(format!(
                "log expects epoch {expected}, got {}",
                record.epoch
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn total_skipped(&self) -> u64 {
        self.records.iter().map(|r| r.skipped).sum()
    }

    pub fn csv_row(record: &EpochRecord) -> String {
        format!(
            "{},{},{},{},{}",
            record.epoch, record.lr, record.loss, record.skipped, record.seconds
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", Self::csv_row(r));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: u32) -> EpochRecord {
        EpochRecord {
            epoch,
            lr: 0.001,
            loss: 0.5,
            skipped: 2,
            seconds: 0.0,
        }
    }

    #[test]
    fn csv_layout() {
        let mut log = TrainLog::default();
        log.push(record(0)).unwrap();
        log.push(record(1)).unwrap();
        assert_eq!(log.to_csv(), "epoch,lr,loss,skipped,seconds\n0,0.001,0.5,2,0\n1,0.001,0.5,2,0\n");
        assert_eq!(log.total_skipped(), 4);
    }

    #[test]
    fn epochs_must_be_consecutive() {
        let mut log = TrainLog::default();
        assert!(log.push(record(1)).is_err());
    }
}
