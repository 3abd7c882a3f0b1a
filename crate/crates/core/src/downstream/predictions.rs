//! Prediction records written as JSON lines.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Classification { probabilities: Vec<f64> },
    Segmentation { peaks: Vec<usize> },
    Survival { risk: f64, horizon: f64, survival_at_horizon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub task: String,
    pub payload: Payload,
}

pub fn write_jsonl<W: Write>(mut w: W, preds: &[Prediction]) -> Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| crate::Error::io("<predictions>", e))?;
    }
    Ok(())
}
