use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub test_top1: Option<f64>,
}

pub fn write_metrics_line(w: &mut impl Write, m: &EpochMetrics) -> Result<()> {
    let line = serde_json::to_string(m).map_err(|e| Error::Io(e.into()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

pub fn read_metrics(r: impl BufRead) -> Result<Vec<EpochMetrics>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_roundtrip() {
        let rows = vec![
            EpochMetrics { epoch: 1, lr: 5e-4, train_loss: 2.25, train_top1: 0.5, test_top1: Some(0.3125) },
            EpochMetrics { epoch: 2, lr: 1e-5, train_loss: 0.1, train_top1: 1.0, test_top1: None },
        ];
        let mut buf = Vec::new();
        for r in &rows {
            write_metrics_line(&mut buf, r).unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"epoch\":1,"));
        assert_eq!(read_metrics(&buf[..]).unwrap(), rows);
        assert!(read_metrics(&b"{bad"[..]).is_err());
    }
}
