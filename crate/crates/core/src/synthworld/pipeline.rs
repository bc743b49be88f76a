//! End-to-end dataset generation: sample videos from a procedural world,
//! curate windows at every requested horizon, split by video, and keep the
//! world-state annotations needed for oracle lookups at evaluation time.
//!
//! Everything is a pure function of the parameters, so a dataset written to
//! disk can be re-derived later (the annotations are never serialized;
//! evaluation regenerates them and cross-checks the stored windows).

use std::collections::HashMap;

use crate::domain::PlanWindow;
use crate::seeds::{self, tag};

use super::{
    build_world, curate_windows_annotated, procedural_spec, sample_video, split_dataset,
    DatasetSplit, ProceduralWorldParams, SplitRatios, World, WorldError,
};

/// Parameters for one generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub world: ProceduralWorldParams,
    pub num_videos: usize,
    pub horizons: Vec<usize>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Global (start, goal) state ids for one curated window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowAnnotation {
    pub start_state: usize,
    pub goal_state: usize,
}

/// Lookup key for annotations: (video id, horizon, ordinal of the window
/// within that video at that horizon, in curation order).
pub type WindowKey = (String, usize, usize);

/// A generated dataset plus its oracle-side annotations.
pub struct GeneratedDataset {
    pub world: World,
    pub split: DatasetSplit,
    pub annotations: HashMap<WindowKey, WindowAnnotation>,
    /// Videos too short for some horizon (per the curation contract these
    /// yield zero windows and are counted, not errors).
    pub skipped: usize,
}

impl GeneratedDataset {
    /// Annotation for a window read back from disk. The ordinal is the count
    /// of earlier windows with the same (video, horizon) in file order,
    /// which matches curation order because writing preserves it.
    pub fn annotation(&self, key: &WindowKey) -> Option<WindowAnnotation> {
        self.annotations.get(key).copied()
    }
}

/// Generate the full dataset for `params`.
pub fn generate_dataset(params: &PipelineParams) -> Result<GeneratedDataset, WorldError> {
    let world = build_world(procedural_spec(&params.world))?;
    let mut grouped: Vec<(String, Vec<PlanWindow>)> = Vec::with_capacity(params.num_videos);
    let mut annotations = HashMap::new();
    let mut skipped = 0usize;
    for i in 0..params.num_videos {
        let video = sample_video(&world, seeds::derive(params.seed, tag::VIDEO, i as u64));
        let mut windows = Vec::new();
        for &horizon in &params.horizons {
            let (annotated, missed) = curate_windows_annotated(&video, horizon);
            skipped += missed;
            for (ordinal, aw) in annotated.into_iter().enumerate() {
                annotations.insert(
                    (video.video_id.clone(), horizon, ordinal),
                    WindowAnnotation {
                        start_state: world.global_state_id(aw.task_index, aw.start_state_local),
                        goal_state: world.global_state_id(aw.task_index, aw.goal_state_local),
                    },
                );
                windows.push(aw.window);
            }
        }
        grouped.push((video.video_id.clone(), windows));
    }
    let split = split_dataset(grouped, params.ratios, seeds::derive(params.seed, tag::SPLIT, 1))?;
    Ok(GeneratedDataset {
        world,
        split,
        annotations,
        skipped,
    })
}

/// Pair every window of a split list with its annotation key, assigning
/// ordinals by order of appearance per (video, horizon).
pub fn keyed_windows(windows: &[PlanWindow]) -> Vec<(WindowKey, &PlanWindow)> {
    let mut counters: HashMap<(String, usize), usize> = HashMap::new();
    windows
        .iter()
        .map(|w| {
            let counter = counters
                .entry((w.source_video_id.clone(), w.horizon))
                .or_insert(0);
            let ordinal = *counter;
            *counter += 1;
            ((w.source_video_id.clone(), w.horizon, ordinal), w)
        })
        .collect()
}
