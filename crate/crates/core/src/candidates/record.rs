use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{matrix_from_row_major, matrix_to_row_major, Point};
use crate::gripper::{GraspPose, GraspSource};
use crate::{Error, Result};

/// One line of a candidate file. Labeling fields are filled in by the
/// quality oracle and absent on freshly generated candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub position: [f64; 3],
    /// Row-major; columns are the approach, closing and minor axes.
    pub rotation: [f64; 9],
    pub width: f64,
    pub source: GraspSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_required: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision: Option<bool>,
}

impl From<&GraspPose> for CandidateRecord {
    fn from(p: &GraspPose) -> Self {
        CandidateRecord {
            position: [p.position.x, p.position.y, p.position.z],
            rotation: matrix_to_row_major(&p.rotation),
            width: p.width,
            source: p.source,
            score: p.score,
            label: None,
            mu_required: None,
            collision: None,
        }
    }
}

impl CandidateRecord {
    pub fn pose(&self) -> GraspPose {
        GraspPose {
            position: Point::from(self.position),
            rotation: matrix_from_row_major(&self.rotation),
            width: self.width,
            source: self.source,
            score: self.score,
        }
    }
}

pub fn write_candidates(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines candidate file; blank lines are skipped. Errors name the
/// offending line.
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e.to_string()))?;
        if rec.position.iter().chain(&rec.rotation).any(|v| !v.is_finite()) || !(rec.width > 0.0) {
            return Err(Error::parse(format!("{}:{}", path.display(), n + 1), "non-finite pose or non-positive width"));
        }
        out.push(rec);
    }
    Ok(out)
}
