//! Dataset persistence.
//!
//! A dataset is a directory with `train.jsonl`, `val.jsonl`, `test.jsonl`
//! (one window per line) and `meta.json` (split seed and counts). Reals are
//! serialized with 17 significant digits, which reproduces every f64 exactly
//! on read-back.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::PlanWindow;
use crate::synthworld::{DatasetSplit, WorldError};

const SPLIT_FILES: [(&str, fn(&DatasetSplit) -> &Vec<PlanWindow>); 3] = [
    ("train.jsonl", |s| &s.train),
    ("val.jsonl", |s| &s.val),
    ("test.jsonl", |s| &s.test),
];

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    split_seed: u64,
    train_windows: usize,
    val_windows: usize,
    test_windows: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowRecord {
    video_id: String,
    task_id: Option<String>,
    horizon: usize,
    actions: Vec<usize>,
    start_obs: Vec<f64>,
    goal_obs: Vec<f64>,
    start_caption_emb: Vec<f64>,
    goal_caption_emb: Vec<f64>,
}

fn io_err(path: &Path, source: std::io::Error) -> WorldError {
    WorldError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn push_reals(line: &mut String, values: &[f64]) {
    line.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v:.16e}");
    }
    line.push(']');
}

fn push_indices(line: &mut String, values: &[usize]) {
    line.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v}");
    }
    line.push(']');
}

fn window_line(w: &PlanWindow) -> String {
    let mut line = String::with_capacity(64 + 24 * (w.start_obs.len() * 4 + w.actions.len()));
    line.push_str("{\"video_id\":");
    line.push_str(&serde_json::to_string(&w.source_video_id).expect("string"));
    line.push_str(",\"task_id\":");
    line.push_str(&serde_json::to_string(&w.task_id).expect("string"));
    let _ = write!(line, ",\"horizon\":{}", w.horizon);
    line.push_str(",\"actions\":");
    push_indices(&mut line, &w.actions);
    line.push_str(",\"start_obs\":");
    push_reals(&mut line, &w.start_obs);
    line.push_str(",\"goal_obs\":");
    push_reals(&mut line, &w.goal_obs);
    line.push_str(",\"start_caption_emb\":");
    push_reals(&mut line, &w.start_caption_emb);
    line.push_str(",\"goal_caption_emb\":");
    push_reals(&mut line, &w.goal_caption_emb);
    line.push('}');
    line
}

/// Write a dataset split to `dir` (created if missing).
pub fn write_dataset(split: &DatasetSplit, dir: &Path) -> Result<(), WorldError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, accessor) in SPLIT_FILES {
        let path = dir.join(name);
        let mut out = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut buf = String::new();
        for w in accessor(split) {
            buf.push_str(&window_line(w));
            buf.push('\n');
        }
        out.write_all(buf.as_bytes()).map_err(|e| io_err(&path, e))?;
    }
    let meta = DatasetMeta {
        split_seed: split.split_seed,
        train_windows: split.train.len(),
        val_windows: split.val.len(),
        test_windows: split.test.len(),
    };
    let meta_path = dir.join("meta.json");
    let mut body = serde_json::to_string(&meta).expect("meta serializes");
    body.push('\n');
    fs::write(&meta_path, body).map_err(|e| io_err(&meta_path, e))
}

fn read_split_file(path: &Path) -> Result<Vec<PlanWindow>, WorldError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut windows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: WindowRecord =
            serde_json::from_str(&line).map_err(|e| WorldError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if record.actions.len() != record.horizon {
            return Err(WorldError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!(
                    "field actions has length {}, horizon is {}",
                    record.actions.len(),
                    record.horizon
                ),
            });
        }
        windows.push(PlanWindow {
            start_obs: record.start_obs,
            goal_obs: record.goal_obs,
            start_caption_emb: record.start_caption_emb,
            goal_caption_emb: record.goal_caption_emb,
            actions: record.actions,
            horizon: record.horizon,
            source_video_id: record.video_id,
            task_id: record.task_id,
        });
    }
    Ok(windows)
}

/// Read a dataset split back from `dir`. A dataset with zero records overall
/// is rejected.
pub fn read_dataset(dir: &Path) -> Result<DatasetSplit, WorldError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| WorldError::Parse {
        path: meta_path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let train = read_split_file(&dir.join("train.jsonl"))?;
    let val = read_split_file(&dir.join("val.jsonl"))?;
    let test = read_split_file(&dir.join("test.jsonl"))?;
    if train.is_empty() && val.is_empty() && test.is_empty() {
        return Err(WorldError::NoRecords);
    }
    Ok(DatasetSplit {
        train,
        val,
        test,
        split_seed: meta.split_seed,
    })
}
