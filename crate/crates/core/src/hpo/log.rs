use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HpoError, TrialResult};

/// First line of a trial log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub spec_hash: String,
    pub dataset: String,
    pub grid_size: usize,
}

#[derive(Serialize)]
struct Timing<'a> {
    index: usize,
    hash: &'a str,
    wall_secs: f64,
}

/// `<log>.timings.jsonl` next to the log.
pub fn timings_path(log_path: &Path) -> PathBuf {
    let mut name = log_path.file_name().unwrap_or_default().to_os_string();
    name.push(".timings.jsonl");
    log_path.with_file_name(name)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HpoError {
    HpoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Parses a log. A final line without a newline that does not parse is the
/// remnant of an interrupted write and is ignored; any other bad line is an
/// error.
pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<TrialResult>), HpoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let bad = |line: usize, e: serde_json::Error| HpoError::Log {
        line,
        message: e.to_string(),
    };
    let first = lines.first().ok_or(HpoError::Log {
        line: 1,
        message: "empty log".into(),
    })?;
    let header: LogHeader = serde_json::from_str(first).map_err(|e| bad(1, e))?;
    let mut results = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str(line) {
            Ok(r) => results.push(r),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => return Err(bad(i + 1, e)),
        }
    }
    Ok((header, results))
}

/// Append-only trial log with its companion timings file.
#[derive(Debug)]
pub struct TrialLog {
    path: PathBuf,
    file: File,
    timings: File,
    results: Vec<TrialResult>,
}

impl TrialLog {
    /// Starts a fresh log, or with `resume` continues an existing one whose
    /// header matches `header`.
    pub fn open(path: &Path, header: &LogHeader, resume: bool) -> Result<Self, HpoError> {
        let tpath = timings_path(path);
        let mut results = Vec::new();
        if resume && path.exists() {
            let (found, prior) = read_log(path)?;
            if found.spec_hash != header.spec_hash {
                return Err(HpoError::SpecMismatch {
                    expected: header.spec_hash.clone(),
                    found: found.spec_hash,
                });
            }
            results = prior;
        }
        let mut file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut text = serde_json::to_string(header).expect("header serializes") + "\n";
        for r in &results {
            text += &(serde_json::to_string(r).expect("record serializes") + "\n");
        }
        file.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
        let timings = if resume {
            OpenOptions::new().create(true).append(true).open(&tpath)
        } else {
            File::create(&tpath)
        }
        .map_err(|e| io_err(&tpath, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            timings,
            results,
        })
    }

    pub fn results(&self) -> &[TrialResult] {
        &self.results
    }

    pub fn into_results(self) -> Vec<TrialResult> {
        self.results
    }

    pub fn append(&mut self, result: TrialResult, wall_secs: f64) -> Result<(), HpoError> {
        let line = serde_json::to_string(&result).expect("record serializes") + "\n";
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| io_err(&self.path, e))?;
        let timing = Timing {
            index: result.index,
            hash: &result.hash,
            wall_secs,
        };
        let tline = serde_json::to_string(&timing).expect("timing serializes") + "\n";
        self.timings
            .write_all(tline.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        self.results.push(result);
        Ok(())
    }
}
