//! Synthetic instructional-task world.
//!
//! Each task is an acyclic action graph; a video is one root-to-leaf walk
//! through a task graph, with one observation (and one caption embedding) per
//! inter-action state. Because branch probabilities are known, the exact plan
//! distribution between any two states is computable by enumeration, giving a
//! brute-force oracle for the distributional evaluation metrics.

mod io;
mod pipeline;

pub use io::{read_dataset, write_dataset};
pub use pipeline::{
    generate_dataset, keyed_windows, GeneratedDataset, PipelineParams, WindowAnnotation, WindowKey,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::PlanWindow;
use crate::seeds::{self, tag};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world spec: {}", problems.join("; "))]
    InvalidSpec { problems: Vec<String> },
    #[error("split requires at least 3 distinct videos, got {0}")]
    TooFewVideos(usize),
    #[error("unreachable goal: no length-{horizon} path from state {start} reaches state {goal}")]
    UnreachableGoal {
        start: usize,
        goal: usize,
        horizon: usize,
    },
    #[error("state {0} does not belong to this world")]
    UnknownState(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no records in dataset")]
    NoRecords,
}

/// One node of a task graph: the action it contributes and the successor
/// choices with their branch probabilities. A node without successors is a
/// leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub action: usize,
    pub successors: Vec<(usize, f64)>,
}

/// A rooted acyclic action graph for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub root: usize,
    pub nodes: Vec<GraphNode>,
}

impl TaskGraph {
    /// A linear chain executing the given actions in order.
    pub fn linear(actions: &[usize]) -> Self {
        let nodes = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| GraphNode {
                action: a,
                successors: if i + 1 < actions.len() {
                    vec![(i + 1, 1.0)]
                } else {
                    vec![]
                },
            })
            .collect();
        TaskGraph { root: 0, nodes }
    }

    /// Local state-id space: `0..n` is "about to execute node i", and
    /// `n + leaf` is the terminal state after executing a leaf.
    pub fn num_states(&self) -> usize {
        self.nodes.len() * 2
    }
}

/// Full description of a synthetic world. Building a world from the same spec
/// twice yields bit-identical results.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub num_tasks: usize,
    pub actions_per_task: Vec<TaskGraph>,
    pub vocab_size: usize,
    pub obs_dim: usize,
    pub obs_noise_sigma: f64,
    /// Fraction of caption-embedding coordinates that encode task identity.
    pub caption_informativeness: f64,
    /// When set, observation means depend only on the structural state, not
    /// the task; task identity is then carried only by the captions.
    pub share_observation_means: bool,
    pub seed: u64,
}

impl WorldSpec {
    fn validate(&self) -> Result<(), WorldError> {
        let mut problems = Vec::new();
        if self.num_tasks == 0 {
            problems.push("num_tasks must be positive".to_string());
        }
        if self.num_tasks != self.actions_per_task.len() {
            problems.push(format!(
                "num_tasks is {} but {} task graphs given",
                self.num_tasks,
                self.actions_per_task.len()
            ));
        }
        if self.vocab_size < 2 {
            problems.push("vocab_size must be at least 2".to_string());
        }
        if self.obs_dim == 0 {
            problems.push("obs_dim must be positive".to_string());
        }
        if self.obs_noise_sigma.is_nan() || self.obs_noise_sigma < 0.0 {
            problems.push("obs_noise_sigma must be non-negative".to_string());
        }
        if !(0.0..=1.0).contains(&self.caption_informativeness) {
            problems.push("caption_informativeness must lie in [0, 1]".to_string());
        }
        for (t, graph) in self.actions_per_task.iter().enumerate() {
            if graph.nodes.is_empty() {
                problems.push(format!("task {t}: empty graph"));
                continue;
            }
            if graph.root >= graph.nodes.len() {
                problems.push(format!("task {t}: root out of range"));
            }
            for (i, node) in graph.nodes.iter().enumerate() {
                if node.action >= self.vocab_size {
                    problems.push(format!(
                        "task {t} node {i}: action {} >= vocab size {}",
                        node.action, self.vocab_size
                    ));
                }
                if !node.successors.is_empty() {
                    let sum: f64 = node.successors.iter().map(|(_, p)| p).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        problems.push(format!(
                            "task {t} node {i}: branch probabilities sum to {sum}, expected 1"
                        ));
                    }
                    for &(succ, p) in &node.successors {
                        if succ >= graph.nodes.len() {
                            problems.push(format!("task {t} node {i}: successor {succ} out of range"));
                        }
                        if p.is_nan() || p <= 0.0 {
                            problems.push(format!(
                                "task {t} node {i}: non-positive branch probability {p}"
                            ));
                        }
                    }
                }
            }
            if has_cycle(graph) {
                problems.push(format!("task {t}: graph contains a cycle"));
            }
        }
        if self.share_observation_means {
            let counts: Vec<usize> = self.actions_per_task.iter().map(|g| g.nodes.len()).collect();
            if counts.windows(2).any(|w| w[0] != w[1]) {
                problems.push(
                    "share_observation_means requires structurally aligned tasks (equal node counts)"
                        .to_string(),
                );
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(WorldError::InvalidSpec { problems })
        }
    }
}

fn has_cycle(graph: &TaskGraph) -> bool {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(nodes: &[GraphNode], state: &mut [u8], i: usize) -> bool {
        if state[i] == 1 {
            return true;
        }
        if state[i] == 2 {
            return false;
        }
        state[i] = 1;
        for &(succ, _) in &nodes[i].successors {
            if succ < nodes.len() && visit(nodes, state, succ) {
                return true;
            }
        }
        state[i] = 2;
        false
    }
    let mut state = vec![0u8; graph.nodes.len()];
    (0..graph.nodes.len()).any(|i| visit(&graph.nodes, &mut state, i))
}

/// A realized world: task graphs plus the mean-embedding tables.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    /// Global state-id offset per task.
    state_offsets: Vec<usize>,
    /// Observation mean per mean-key.
    obs_means: Vec<Vec<f64>>,
    /// Task identity code per task (caption side).
    task_codes: Vec<Vec<f64>>,
    /// Caption state code per mean-key (fills the non-identity coordinates).
    cap_state_codes: Vec<Vec<f64>>,
}

/// Build the world deterministically from its spec.
pub fn build_world(spec: WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let mut offsets = Vec::with_capacity(spec.num_tasks);
    let mut total = 0;
    for graph in &spec.actions_per_task {
        offsets.push(total);
        total += graph.num_states();
    }
    let num_mean_keys = if spec.share_observation_means {
        spec.actions_per_task[0].num_states()
    } else {
        total
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, tag::WORLD, 0));
    let normal_vec = |rng: &mut ChaCha8Rng, dim: usize| -> Vec<f64> {
        (0..dim).map(|_| StandardNormal.sample(rng)).collect()
    };
    let task_codes: Vec<Vec<f64>> = (0..spec.num_tasks)
        .map(|_| normal_vec(&mut rng, spec.obs_dim))
        .collect();
    let obs_means: Vec<Vec<f64>> = (0..num_mean_keys)
        .map(|_| normal_vec(&mut rng, spec.obs_dim))
        .collect();
    let cap_state_codes: Vec<Vec<f64>> = (0..num_mean_keys)
        .map(|_| normal_vec(&mut rng, spec.obs_dim))
        .collect();

    Ok(World {
        spec,
        state_offsets: offsets,
        obs_means,
        task_codes,
        cap_state_codes,
    })
}

impl World {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn num_tasks(&self) -> usize {
        self.spec.num_tasks
    }

    pub fn task_graph(&self, task: usize) -> &TaskGraph {
        &self.spec.actions_per_task[task]
    }

    /// Globally unique state id for a task-local state.
    pub fn global_state_id(&self, task: usize, local_state: usize) -> usize {
        self.state_offsets[task] + local_state
    }

    fn resolve_state(&self, global: usize) -> Result<(usize, usize), WorldError> {
        for task in (0..self.spec.num_tasks).rev() {
            if global >= self.state_offsets[task] {
                let local = global - self.state_offsets[task];
                if local < self.spec.actions_per_task[task].num_states() {
                    return Ok((task, local));
                }
                return Err(WorldError::UnknownState(global));
            }
        }
        Err(WorldError::UnknownState(global))
    }

    fn mean_key(&self, task: usize, local_state: usize) -> usize {
        if self.spec.share_observation_means {
            local_state
        } else {
            self.state_offsets[task] + local_state
        }
    }

    /// Mean observation for a (task, state) pair.
    pub fn obs_mean(&self, task: usize, local_state: usize) -> &[f64] {
        &self.obs_means[self.mean_key(task, local_state)]
    }

    /// Mean caption embedding for a (task, state) pair: the first
    /// `ceil(caption_informativeness * obs_dim)` coordinates carry the task
    /// identity code, the remainder a state code.
    pub fn caption_mean(&self, task: usize, local_state: usize) -> Vec<f64> {
        let dim = self.spec.obs_dim;
        let informative = (self.spec.caption_informativeness * dim as f64).ceil() as usize;
        let informative = informative.min(dim);
        let state_code = &self.cap_state_codes[self.mean_key(task, local_state)];
        let mut mean = Vec::with_capacity(dim);
        mean.extend_from_slice(&self.task_codes[task][..informative]);
        mean.extend_from_slice(&state_code[informative..]);
        mean
    }
}

/// One sampled video: a full action sequence with per-state observations and
/// caption embeddings. `state_ids` are task-local and line up with
/// `state_obs` (length L + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub task_id: String,
    pub task_index: usize,
    pub actions: Vec<usize>,
    pub state_ids: Vec<usize>,
    pub state_obs: Vec<Vec<f64>>,
    pub state_caption_embs: Vec<Vec<f64>>,
}

/// Sample one video from the world, deterministically in `seed`.
pub fn sample_video(world: &World, seed: u64) -> VideoRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = rng.random_range(0..world.spec.num_tasks);
    let graph = &world.spec.actions_per_task[task];

    let mut node = graph.root;
    let mut actions = Vec::new();
    let mut state_ids = vec![node];
    loop {
        actions.push(graph.nodes[node].action);
        if graph.nodes[node].successors.is_empty() {
            state_ids.push(graph.nodes.len() + node);
            break;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = graph.nodes[node].successors[0].0;
        for &(succ, p) in &graph.nodes[node].successors {
            acc += p;
            next = succ;
            if u < acc {
                break;
            }
        }
        node = next;
        state_ids.push(node);
    }

    let sigma = world.spec.obs_noise_sigma;
    let dim = world.spec.obs_dim;
    let mut state_obs = Vec::with_capacity(state_ids.len());
    let mut state_caps = Vec::with_capacity(state_ids.len());
    for &state in &state_ids {
        let mut obs = world.obs_mean(task, state).to_vec();
        for v in obs.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
        state_obs.push(obs);
        let mut cap = world.caption_mean(task, state);
        for v in cap.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
        state_caps.push(cap);
    }
    debug_assert_eq!(state_obs.len(), actions.len() + 1);
    debug_assert_eq!(state_obs.iter().map(Vec::len).max(), Some(dim));

    VideoRecord {
        video_id: format!("v{seed:016x}"),
        task_id: format!("task{task:02}"),
        task_index: task,
        actions,
        state_ids,
        state_obs,
        state_caption_embs: state_caps,
    }
}

/// A curated window plus the world states it spans (for oracle lookups and
/// evaluation grouping; never an input to the model).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedWindow {
    pub window: PlanWindow,
    pub task_index: usize,
    pub start_state_local: usize,
    pub goal_state_local: usize,
}

/// Result of curating one video at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationOutput {
    pub windows: Vec<PlanWindow>,
    /// 1 when the video was too short for the horizon, else 0.
    pub skipped: usize,
}

/// Slice a video into horizon-T plan windows at stride 1.
///
/// A video of L actions yields L - T + 1 windows; window i spans actions
/// i..i+T, with the start observation taken before action i and the goal
/// observation after action i+T-1. Videos shorter than T yield no windows
/// (flagged via `skipped`, not an error).
pub fn curate_windows(video: &VideoRecord, horizon: usize) -> CurationOutput {
    let annotated = curate_windows_annotated(video, horizon);
    CurationOutput {
        windows: annotated.0.into_iter().map(|a| a.window).collect(),
        skipped: annotated.1,
    }
}

/// As [`curate_windows`], keeping the world-state annotations.
pub fn curate_windows_annotated(
    video: &VideoRecord,
    horizon: usize,
) -> (Vec<AnnotatedWindow>, usize) {
    assert!(horizon > 0, "horizon must be positive");
    let len = video.actions.len();
    if len < horizon {
        return (Vec::new(), 1);
    }
    let mut out = Vec::with_capacity(len - horizon + 1);
    for i in 0..=(len - horizon) {
        let window = PlanWindow {
            start_obs: video.state_obs[i].clone(),
            goal_obs: video.state_obs[i + horizon].clone(),
            start_caption_emb: video.state_caption_embs[i].clone(),
            goal_caption_emb: video.state_caption_embs[i + horizon].clone(),
            actions: video.actions[i..i + horizon].to_vec(),
            horizon,
            source_video_id: video.video_id.clone(),
            task_id: Some(video.task_id.clone()),
        };
        out.push(AnnotatedWindow {
            window,
            task_index: video.task_index,
            start_state_local: video.state_ids[i],
            goal_state_local: video.state_ids[i + horizon],
        });
    }
    (out, 0)
}

/// Train/val/test window lists, disjoint by source video.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PlanWindow>,
    pub val: Vec<PlanWindow>,
    pub test: Vec<PlanWindow>,
    pub split_seed: u64,
}

/// Split fractions: `test_fraction` of videos go to test, then
/// `val_fraction` of the remaining train pool goes to validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            test_fraction: 0.3,
            val_fraction: 0.2,
        }
    }
}

/// Partition videos (not windows) into train/val/test.
///
/// Counts use floor arithmetic with remainders assigned to train:
/// test = floor(V * test_fraction), val = floor((V - test) * val_fraction).
pub fn split_dataset(
    windows_by_video: Vec<(String, Vec<PlanWindow>)>,
    ratios: SplitRatios,
    split_seed: u64,
) -> Result<DatasetSplit, WorldError> {
    let num_videos = windows_by_video.len();
    if num_videos < 3 {
        return Err(WorldError::TooFewVideos(num_videos));
    }
    let mut order: Vec<usize> = (0..num_videos).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(split_seed, tag::SPLIT, 0));
    // Fisher-Yates; kept explicit so the assignment is stable across rand
    // version bumps.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let test_count = (num_videos as f64 * ratios.test_fraction).floor() as usize;
    let pool_count = num_videos - test_count;
    let val_count = (pool_count as f64 * ratios.val_fraction).floor() as usize;

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        split_seed,
    };
    for (rank, &video_idx) in order.iter().enumerate() {
        let windows = &windows_by_video[video_idx].1;
        let bucket = if rank < val_count {
            &mut split.val
        } else if rank < pool_count {
            &mut split.train
        } else {
            &mut split.test
        };
        bucket.extend(windows.iter().cloned());
    }
    Ok(split)
}

/// Exact distribution over length-T action sequences from `start_state` that
/// end in `goal_state` (both global state ids), weighted by branch
/// probabilities and renormalized over the consistent paths.
pub fn gt_plan_distribution(
    world: &World,
    start_state: usize,
    goal_state: usize,
    horizon: usize,
) -> Result<BTreeMap<Vec<usize>, f64>, WorldError> {
    let (task, start_local) = world.resolve_state(start_state)?;
    let (goal_task, goal_local) = world.resolve_state(goal_state)?;
    let graph = world.task_graph(task);
    if goal_task != task || start_local >= graph.nodes.len() {
        return Err(WorldError::UnreachableGoal {
            start: start_state,
            goal: goal_state,
            horizon,
        });
    }

    let mut plans: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut actions = Vec::with_capacity(horizon);
    walk(
        graph,
        start_local,
        goal_local,
        horizon,
        1.0,
        &mut actions,
        &mut plans,
    );
    let total: f64 = plans.values().sum();
    if plans.is_empty() || total <= 0.0 {
        return Err(WorldError::UnreachableGoal {
            start: start_state,
            goal: goal_state,
            horizon,
        });
    }
    for p in plans.values_mut() {
        *p /= total;
    }
    Ok(plans)
}

fn walk(
    graph: &TaskGraph,
    node: usize,
    goal_local: usize,
    remaining: usize,
    prob: f64,
    actions: &mut Vec<usize>,
    plans: &mut BTreeMap<Vec<usize>, f64>,
) {
    if remaining == 0 {
        if node == goal_local {
            *plans.entry(actions.clone()).or_insert(0.0) += prob;
        }
        return;
    }
    actions.push(graph.nodes[node].action);
    if graph.nodes[node].successors.is_empty() {
        // executing a leaf lands in its terminal state
        if remaining == 1 && graph.nodes.len() + node == goal_local {
            *plans.entry(actions.clone()).or_insert(0.0) += prob;
        }
    } else {
        for &(succ, p) in &graph.nodes[node].successors {
            walk(graph, succ, goal_local, remaining - 1, prob * p, actions, plans);
        }
    }
    actions.pop();
}

/// Knobs for procedurally generated worlds: every task is a chain of
/// `path_len` action slots with a two-way reconverging branch at each listed
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralWorldParams {
    pub num_tasks: usize,
    pub vocab_size: usize,
    pub obs_dim: usize,
    pub obs_noise_sigma: f64,
    pub caption_informativeness: f64,
    pub path_len: usize,
    pub branch_positions: Vec<usize>,
    /// Probability of the first arm at each branch position.
    pub branch_prob: f64,
    pub share_observation_means: bool,
    pub seed: u64,
}

/// Build a [`WorldSpec`] from procedural knobs. All tasks share the same
/// graph structure (so observation means can be shared when requested) but
/// draw their own action labels.
pub fn procedural_spec(params: &ProceduralWorldParams) -> WorldSpec {
    let mut graphs = Vec::with_capacity(params.num_tasks);
    for task in 0..params.num_tasks {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(params.seed, tag::GRAPH, task as u64));
        let mut nodes: Vec<GraphNode> = Vec::new();
        // Node ids of the previous slot (1 or 2 of them).
        let mut prev: Vec<usize> = Vec::new();
        for slot in 0..params.path_len {
            let branched = params.branch_positions.contains(&slot);
            let ids: Vec<usize> = if branched {
                let a = rng.random_range(0..params.vocab_size);
                let mut b = rng.random_range(0..params.vocab_size);
                while b == a {
                    b = rng.random_range(0..params.vocab_size);
                }
                let id0 = nodes.len();
                nodes.push(GraphNode {
                    action: a,
                    successors: vec![],
                });
                nodes.push(GraphNode {
                    action: b,
                    successors: vec![],
                });
                vec![id0, id0 + 1]
            } else {
                let a = rng.random_range(0..params.vocab_size);
                let id = nodes.len();
                nodes.push(GraphNode {
                    action: a,
                    successors: vec![],
                });
                vec![id]
            };
            for &p in &prev {
                nodes[p].successors = if ids.len() == 2 {
                    vec![
                        (ids[0], params.branch_prob),
                        (ids[1], 1.0 - params.branch_prob),
                    ]
                } else {
                    vec![(ids[0], 1.0)]
                };
            }
            prev = ids;
        }
        graphs.push(TaskGraph { root: 0, nodes });
    }
    WorldSpec {
        num_tasks: params.num_tasks,
        actions_per_task: graphs,
        vocab_size: params.vocab_size,
        obs_dim: params.obs_dim,
        obs_noise_sigma: params.obs_noise_sigma,
        caption_informativeness: params.caption_informativeness,
        share_observation_means: params.share_observation_means,
        seed: params.seed,
    }
}
