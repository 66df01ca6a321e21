//! Closed-loop rollout logs: one JSON record per control step, written as
//! JSON Lines so long runs stream without holding everything in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{io_err, EgoState, Result, Trajectory, WorldError};

/// State and plan at one control step of a closed-loop run. `candidates` is
/// a digest of the full candidate set the plan was selected from, so reruns
/// can be compared without storing every rejected trajectory; policies that
/// emit a single plan hash just that plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub t: f64,
    pub state: EgoState,
    pub plan: Trajectory,
    #[serde(default)]
    pub candidates: u64,
}

/// FNV-1a over the little-endian bytes of the values.
pub fn candidate_hash(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub fn write_rollout(path: &Path, records: &[RolloutRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| WorldError::Json { path: path.display().to_string(), source: e })?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_rollout(path: &Path) -> Result<Vec<RolloutRecord>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| WorldError::Json {
            path: format!("{}:{}", path.display(), idx + 1),
            source: e,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Command;

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let recs: Vec<RolloutRecord> = (0..4)
            .map(|k| RolloutRecord {
                t: k as f64 * 0.5,
                state: EgoState {
                    x: k as f64,
                    y: -0.25,
                    theta: 0.01 * k as f64,
                    v: [5.0, 0.0],
                    a: [0.0, 0.0],
                    command: Command::Straight,
                },
                plan: Trajectory { poses: vec![[2.5, 0.0, 0.0]; 8] },
                candidates: candidate_hash(&[2.5, 0.0, 0.0]),
            })
            .collect();
        write_rollout(&path, &recs).unwrap();
        assert_eq!(read_rollout(&path).unwrap(), recs);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_rollout(Path::new("/nonexistent/run.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.jsonl"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        assert_eq!(candidate_hash(&[]), 0xcbf2_9ce4_8422_2325);
        let a = candidate_hash(&[1.0, 2.0, 3.0]);
        assert_eq!(a, candidate_hash(&[1.0, 2.0, 3.0]));
        assert_ne!(a, candidate_hash(&[1.0, 2.0, 3.0 + 1e-15]));
        assert_ne!(a, candidate_hash(&[1.0, 2.0]));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"t\":0.0,\"state\":{\"x\":0.0,\"y\":0.0,\"theta\":0.0,\"v\":[0.0,0.0],\"a\":[0.0,0.0],\"command\":\"straight\"},\"plan\":{\"poses\":[]}}\nnot json\n",
        )
        .unwrap();
        let err = read_rollout(&path).unwrap_err();
        assert!(err.to_string().contains("bad.jsonl:2"), "got: {err}");
    }
}
