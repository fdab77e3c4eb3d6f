//! Training and evaluation loop shared by every algorithm.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::TrainConfig;
use crate::env::{apply_scales, Env, EnvConfig, EnvError, EpisodeKind, FeatureScale, RewardMode, Transition};
use crate::env::dataset::TimeSeriesDataset;
use crate::grid::NetworkModel;
use crate::learner::{actor_input, Ablation, Algorithm, Experience, Learner, LearnerError, ReplayBuffer, UpdateStats};
use crate::metrics::{evaluate, EpisodeTrace, MetricsError, MetricsRecord};
use crate::nn::Checkpoint;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
}

// Independent random streams of one run.
const STREAM_INIT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_BATCH: u64 = 3;
const STREAM_STARTS: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_RANDOM_POLICY: u64 = 6;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Evaluation start rows of one round. Depends only on the seed, the round
/// and the dataset, never on the algorithm.
pub fn eval_starts(env: &Env, seed: u64, round: usize, episodes: usize) -> Result<Vec<usize>, EnvError> {
    let candidates = env.start_candidates(EpisodeKind::Eval)?;
    let mut rng = stream(seed, STREAM_EVAL << 32 | round as u64);
    Ok((0..episodes)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect())
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub eval_round: usize,
    pub train_episodes: usize,
    pub eval_episode: usize,
    pub start_row: usize,
    pub metrics: MetricsRecord,
}

/// One line of `traces.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub update: usize,
    pub stats: UpdateStats,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub metrics: Vec<EvalRow>,
    pub traces: Vec<TraceRow>,
    pub checkpoint: Checkpoint,
}

impl RunArtifacts {
    /// Rows of the last evaluation round.
    pub fn final_round(&self) -> Vec<&EvalRow> {
        let last = self.metrics.iter().map(|r| r.eval_round).max();
        self.metrics.iter().filter(|r| Some(r.eval_round) == last).collect()
    }

    pub fn final_mean(&self) -> Option<MetricsRecord> {
        let rows: Vec<MetricsRecord> = self.final_round().iter().map(|r| r.metrics).collect();
        MetricsRecord::mean(&rows)
    }

    pub fn write_metrics_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_eval_rows(w, &self.metrics)
    }

    pub fn write_traces_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let constrained = self.algorithm == Algorithm::Madelc;
        if constrained {
            writeln!(w, "update,loss_r,loss_c,loss_chat,loss_pi,alpha")?;
        } else {
            writeln!(w, "update,loss_r,loss_pi")?;
        }
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for t in &self.traces {
            let s = &t.stats;
            if constrained {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    t.update,
                    s.loss_r,
                    opt(s.loss_c),
                    opt(s.loss_estimator),
                    s.loss_actor,
                    opt(s.alpha)
                )?;
            } else {
                writeln!(w, "{},{},{}", t.update, s.loss_r, s.loss_actor)?;
            }
        }
        Ok(())
    }
}

pub fn write_eval_rows<W: Write>(mut w: W, rows: &[EvalRow]) -> std::io::Result<()> {
    writeln!(w, "eval_round,train_episodes,eval_episode,start_row,{}", MetricsRecord::COLUMNS.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.metrics.values().iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.eval_round,
            r.train_episodes,
            r.eval_episode,
            r.start_row,
            vals.join(",")
        )?;
    }
    Ok(())
}

/// Model-input view of the environment: scaled global state and padded
/// per-agent actor inputs.
pub struct InputMap {
    state: Vec<FeatureScale>,
    obs: Vec<Vec<FeatureScale>>,
    width: usize,
}

impl InputMap {
    pub fn new(env: &Env) -> Self {
        InputMap {
            state: env.state_scales(),
            obs: (0..env.n_agents()).map(|k| env.obs_scales(k)).collect(),
            width: env.max_obs_dim(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn state(&self, raw: &[f64]) -> Vec<f64> {
        apply_scales(raw, &self.state)
    }

    pub fn actor_inputs(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = obs.len();
        obs.iter()
            .enumerate()
            .map(|(k, o)| actor_input(&apply_scales(o, &self.obs[k]), self.width, k, n))
            .collect()
    }

    pub fn experience(&self, tr: &Transition, zero_reward: bool) -> Experience {
        Experience {
            state: self.state(&tr.state),
            actor_inputs: self.actor_inputs(&tr.obs),
            action: tr.action.clone(),
            reward: if zero_reward { 0.0 } else { tr.reward },
            cost: tr.cost_norm,
            next_state: self.state(&tr.next_state),
            next_actor_inputs: self.actor_inputs(&tr.next_obs),
            terminal: tr.terminal,
        }
    }
}

/// Runs one episode from `start` with a policy mapping raw observations to
/// a joint action, and returns its metrics.
pub fn rollout<F>(env: &mut Env, start: usize, horizon: usize, mut policy: F) -> Result<MetricsRecord, TrainError>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>, TrainError>,
{
    let mut obs = env.reset_at(start, horizon)?;
    let mut trace = EpisodeTrace::default();
    loop {
        let action = policy(&obs)?;
        let tr = env.step(&action)?;
        trace.push_transition(&tr);
        if tr.done || tr.terminal {
            break;
        }
        obs = tr.next_obs;
    }
    Ok(evaluate(&trace, env.network())?)
}

/// Reference policies measured by the same harness as the learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferencePolicy {
    Zero,
    Random,
}

impl ReferencePolicy {
    pub fn name(self) -> &'static str {
        match self {
            ReferencePolicy::Zero => "zero",
            ReferencePolicy::Random => "random",
        }
    }
}

/// Evaluates a reference policy on the given start rows.
pub fn evaluate_reference(
    env: &mut Env,
    policy: ReferencePolicy,
    starts: &[usize],
    seed: u64,
) -> Result<Vec<MetricsRecord>, TrainError> {
    let n = env.n_agents();
    let horizon = env.horizon(EpisodeKind::Eval);
    let mut rng = stream(seed, STREAM_RANDOM_POLICY);
    starts
        .iter()
        .map(|&s| {
            rollout(env, s, horizon, |_| {
                Ok(match policy {
                    ReferencePolicy::Zero => vec![0.0; n],
                    ReferencePolicy::Random => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                })
            })
        })
        .collect()
}

fn evaluate_learner(
    env: &mut Env,
    learner: &Learner,
    map: &InputMap,
    starts: &[usize],
) -> Result<Vec<MetricsRecord>, TrainError> {
    let horizon = env.horizon(EpisodeKind::Eval);
    // Exploration is off, so the generator is never drawn from.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    starts
        .iter()
        .map(|&s| {
            rollout(env, s, horizon, |obs| {
                Ok(learner.select_actions(&map.actor_inputs(obs), false, &mut unused)?)
            })
        })
        .collect()
}

pub fn reward_mode(algorithm: Algorithm, beta: f64) -> RewardMode {
    match algorithm {
        Algorithm::Madelc => RewardMode::QLoss,
        Algorithm::MaddpgBaseline => RewardMode::Barrier { beta },
    }
}

/// Everything one training run needs.
pub struct RunSpec<'a> {
    pub algorithm: Algorithm,
    pub ablation: Ablation,
    pub env: &'a EnvConfig,
    pub train: &'a TrainConfig,
    pub network: Arc<NetworkModel>,
    pub dataset: Arc<TimeSeriesDataset>,
    pub seed: u64,
}

/// Training state of one run, advanced one episode at a time.
pub struct Trainer {
    algorithm: Algorithm,
    seed: u64,
    train: TrainConfig,
    env: Env,
    eval_env: Env,
    map: InputMap,
    learner: Learner,
    buffer: ReplayBuffer<Experience>,
    zero_reward: bool,
    noise_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    start_rng: ChaCha8Rng,
    env_steps: usize,
    episodes: usize,
    rounds: usize,
    metrics: Vec<EvalRow>,
    traces: Vec<TraceRow>,
}

impl Trainer {
    pub fn new(spec: &RunSpec<'_>) -> Result<Self, TrainError> {
        let tc = spec.train;
        tc.validate().map_err(|e| TrainError::Invalid(e.to_string()))?;
        let mode = reward_mode(spec.algorithm, tc.beta);
        let env = Env::new(spec.network.clone(), spec.dataset.clone(), spec.env.clone(), mode)?;
        let eval_env = Env::new(spec.network.clone(), spec.dataset.clone(), spec.env.clone(), mode)?;
        let map = InputMap::new(&env);
        let mut init_rng = stream(spec.seed, STREAM_INIT);
        let lc = tc.learner_config(spec.algorithm, spec.ablation, spec.env);
        let learner = Learner::new(lc, env.n_agents(), map.width(), env.state_dim(), &mut init_rng)?;
        Ok(Trainer {
            algorithm: spec.algorithm,
            seed: spec.seed,
            train: tc.clone(),
            zero_reward: spec.algorithm == Algorithm::Madelc && spec.ablation.no_q_loss,
            buffer: ReplayBuffer::new(tc.buffer_capacity),
            env,
            eval_env,
            map,
            learner,
            noise_rng: stream(spec.seed, STREAM_NOISE),
            batch_rng: stream(spec.seed, STREAM_BATCH),
            start_rng: stream(spec.seed, STREAM_STARTS),
            env_steps: 0,
            episodes: 0,
            rounds: 0,
            metrics: Vec::new(),
            traces: Vec::new(),
        })
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn buffer(&self) -> &ReplayBuffer<Experience> {
        &self.buffer
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn input_map(&self) -> &InputMap {
        &self.map
    }

    /// Runs one exploring training episode, with an update round every
    /// `update_every` environment steps.
    pub fn train_episode(&mut self) -> Result<(), TrainError> {
        let mut obs = self.env.reset(EpisodeKind::Train, &mut self.start_rng)?;
        loop {
            let inputs = self.map.actor_inputs(&obs);
            let action = self.learner.select_actions(&inputs, true, &mut self.noise_rng)?;
            let tr = self.env.step(&action)?;
            self.buffer.push(self.map.experience(&tr, self.zero_reward));
            self.env_steps += 1;
            if self.env_steps.is_multiple_of(self.train.update_every) {
                if let Some(stats) = self.learner.update_round(&self.buffer, &mut self.batch_rng)? {
                    self.traces.push(TraceRow {
                        update: self.traces.len() + 1,
                        stats,
                    });
                }
            }
            if tr.done || tr.terminal {
                break;
            }
            obs = tr.next_obs;
        }
        self.episodes += 1;
        Ok(())
    }

    /// Runs one evaluation round on the current policy without exploration.
    pub fn evaluate(&mut self) -> Result<&[EvalRow], TrainError> {
        let round = self.rounds;
        let starts = eval_starts(&self.eval_env, self.seed, round, self.train.eval_episodes)?;
        let recs = evaluate_learner(&mut self.eval_env, &self.learner, &self.map, &starts)?;
        log::info!(
            "{} seed {} round {round}: mean CR {:.3}",
            self.algorithm.name(),
            self.seed,
            MetricsRecord::mean(&recs).map_or(f64::NAN, |m| m.cr)
        );
        let first = self.metrics.len();
        for (k, (&start_row, m)) in starts.iter().zip(recs).enumerate() {
            self.metrics.push(EvalRow {
                eval_round: round,
                train_episodes: self.episodes,
                eval_episode: k,
                start_row,
                metrics: m,
            });
        }
        self.rounds += 1;
        Ok(&self.metrics[first..])
    }

    pub fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts {
            algorithm: self.algorithm,
            seed: self.seed,
            checkpoint: self.learner.checkpoint(),
            metrics: self.metrics,
            traces: self.traces,
        }
    }
}

/// Trains one learner: an initial evaluation, then `episodes` training
/// episodes with an evaluation round after every `eval_every` of them.
pub fn train(spec: &RunSpec<'_>) -> Result<RunArtifacts, TrainError> {
    let mut trainer = Trainer::new(spec)?;
    trainer.evaluate()?;
    for episode in 1..=spec.train.episodes {
        trainer.train_episode()?;
        if episode % spec.train.eval_every == 0 {
            trainer.evaluate()?;
        }
    }
    Ok(trainer.into_artifacts())
}
