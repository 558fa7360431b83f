use std::io::Write;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const CSV_HEADER: [&str; 7] = [
    "step",
    "data_read",
    "train_loss",
    "test_loss",
    "test_accuracy",
    "step_length",
    "wall_ms",
];

/// One convergence sample. Missing metrics are written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub data_read: u64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub step_length: f64,
    pub wall_ms: f64,
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    writer.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        writer.serialize(r).map_err(io)?;
    }
    writer.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_empty_fields() {
        let mut buf = Vec::new();
        let rec = RunRecord {
            step: 3,
            data_read: 768,
            train_loss: 0.5,
            test_loss: None,
            test_accuracy: Some(0.75),
            step_length: 0.1,
            wall_ms: 0.0,
        };
        write_records(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,data_read,train_loss,test_loss,test_accuracy,step_length,wall_ms\n3,768,0.5,,0.75,0.1,0.0\n"
        );
    }
}
