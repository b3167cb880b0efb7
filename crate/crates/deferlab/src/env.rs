//! The constrained episode environment.
//!
//! State is (instance features, cumulative human workload, step index).
//! The transition is deterministic: workload increments by one exactly when
//! the Human action is taken. Reward is the 0/1 correctness of the final
//! prediction; cost is the 0/1 deferral indicator. Fatigue resets across
//! episodes: every reset starts at workload zero with a freshly sampled
//! expert.

use std::sync::Arc;

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::actors::{
    ai_predict, generate_synthetic_stream, HumanExpert, SyntheticTaskSpec, TaskInstance,
};
use crate::error::{Error, Result};
use crate::fatigue::{FatigueParamRanges, FatigueParams};
use crate::rng::stream_rng;

/// Who produces the final prediction this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Ai,
    Human,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Ai => "ai",
            Action::Human => "human",
        }
    }
}

/// Observation handed to the policy. The fatigue parameters and current
/// noise rate are deliberately absent: the policy only sees the observable
/// workload, which is what allows zero-shot transfer to unseen experts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub features: Vec<f64>,
    pub workload: u32,
    pub step: u32,
    /// `workload / horizon_l`, the scale-free form fed to the network.
    pub workload_fraction: f64,
}

/// Result of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub cost: f64,
    pub final_prediction: usize,
    pub acting_agent: Action,
    /// `None` once the episode is exhausted.
    pub next_state: Option<EnvState>,
}

/// Where each episode's instances come from.
#[derive(Debug, Clone)]
pub enum InstanceSource {
    /// Fresh instances generated per episode.
    Synthetic(SyntheticTaskSpec),
    /// Sampled without replacement per episode from a fixed stream.
    Stream {
        instances: Arc<Vec<TaskInstance>>,
        class_count: usize,
    },
}

impl InstanceSource {
    pub fn class_count(&self) -> usize {
        match self {
            InstanceSource::Synthetic(spec) => spec.class_count,
            InstanceSource::Stream { class_count, .. } => *class_count,
        }
    }
}

/// Expert population for the episode: fixed parameters or ranges resampled
/// per episode.
#[derive(Debug, Clone)]
pub enum FatigueSource {
    Fixed(FatigueParams),
    Ranges(FatigueParamRanges),
}

impl FatigueSource {
    pub fn horizon_l(&self) -> u32 {
        match self {
            FatigueSource::Fixed(p) => p.horizon_l,
            FatigueSource::Ranges(r) => r.horizon_l,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub length: u32,
    pub fatigue: FatigueSource,
    pub source: InstanceSource,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 1 {
            return Err(Error::Config("episode length must be >= 1".into()));
        }
        match &self.fatigue {
            FatigueSource::Fixed(p) => p.validate()?,
            FatigueSource::Ranges(r) => r.validate()?,
        }
        if let InstanceSource::Synthetic(spec) = &self.source {
            spec.validate()?;
        }
        Ok(())
    }
}

struct Episode {
    instances: Vec<TaskInstance>,
    expert: HumanExpert,
    fatigue: FatigueParams,
    workload: u32,
    step: u32,
}

/// One environment per worker. Episode indices select the derived random
/// streams, so resetting episode `i` always reproduces the same instances,
/// expert, and human outcomes no matter which worker runs it.
pub struct Environment {
    config: EpisodeConfig,
    next_episode: u64,
    episode: Option<Episode>,
}

impl Environment {
    pub fn new(config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Environment {
            config,
            next_episode: 0,
            episode: None,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    /// Select the episode index the next `reset` will use.
    pub fn set_next_episode(&mut self, index: u64) {
        self.next_episode = index;
    }

    /// Start the episode: workload zero, step one, fresh expert parameters.
    pub fn reset(&mut self) -> Result<EnvState> {
        let idx = self.next_episode;
        self.next_episode += 1;
        let seed = self.config.seed;
        let t = self.config.length;

        let instances = match &self.config.source {
            InstanceSource::Synthetic(spec) => {
                let mut rng = stream_rng(seed, "instances", idx);
                generate_synthetic_stream(spec, t, &mut rng)?
            }
            InstanceSource::Stream { instances, .. } => {
                if (instances.len() as u64) < u64::from(t) {
                    return Err(Error::Config(format!(
                        "instance source exhausted: episode length {t} exceeds stream of {}",
                        instances.len()
                    )));
                }
                let mut rng = stream_rng(seed, "instances", idx);
                index_sample(&mut rng, instances.len(), t as usize)
                    .into_iter()
                    .map(|i| instances[i].clone())
                    .collect()
            }
        };

        let fatigue = match &self.config.fatigue {
            FatigueSource::Fixed(p) => *p,
            FatigueSource::Ranges(r) => {
                let mut rng = stream_rng(seed, "fatigue", idx);
                r.sample(&mut rng)
            }
        };
        let expert = HumanExpert::new(
            fatigue,
            self.config.source.class_count(),
            stream_rng(seed, "human", idx),
        )?;

        self.episode = Some(Episode {
            instances,
            expert,
            fatigue,
            workload: 0,
            step: 1,
        });
        Ok(self.state().expect("fresh episode has a state"))
    }

    /// Observation for the step about to be decided, or `None` when terminal.
    pub fn state(&self) -> Option<EnvState> {
        let ep = self.episode.as_ref()?;
        if ep.step > self.config.length {
            return None;
        }
        let instance = &ep.instances[(ep.step - 1) as usize];
        Some(EnvState {
            features: instance.features.clone(),
            workload: ep.workload,
            step: ep.step,
            workload_fraction: f64::from(ep.workload) / f64::from(self.config.fatigue.horizon_l()),
        })
    }

    /// The instance about to be decided (for confidence-based baselines).
    pub fn current_instance(&self) -> Option<&TaskInstance> {
        let ep = self.episode.as_ref()?;
        if ep.step > self.config.length {
            return None;
        }
        Some(&ep.instances[(ep.step - 1) as usize])
    }

    pub fn is_terminal(&self) -> bool {
        self.episode
            .as_ref()
            .map_or(true, |ep| ep.step > self.config.length)
    }

    /// Fatigue parameters sampled for the current episode.
    pub fn fatigue_params(&self) -> Option<FatigueParams> {
        self.episode.as_ref().map(|ep| ep.fatigue)
    }

    /// Noise rate the human would face if deferred to right now.
    pub fn current_eta(&self) -> Option<f64> {
        let ep = self.episode.as_ref()?;
        Some(1.0 - ep.expert.performance(f64::from(ep.workload) + 1.0))
    }

    /// Apply one action. A Human action increments the workload first and the
    /// expert predicts at the updated workload; an AI action leaves the
    /// workload untouched and looks up the stored prediction.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let length = self.config.length;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Lifecycle("step before reset".into()))?;
        if ep.step > length {
            return Err(Error::Lifecycle("step after terminal state".into()));
        }
        let instance = &ep.instances[(ep.step - 1) as usize];
        let (final_prediction, cost) = match action {
            Action::Human => {
                ep.workload += 1;
                let pred = ep.expert.predict(instance, f64::from(ep.workload));
                (pred, 1.0)
            }
            Action::Ai => (ai_predict(instance), 0.0),
        };
        let reward = if final_prediction == instance.label {
            1.0
        } else {
            0.0
        };
        ep.step += 1;
        Ok(StepOutcome {
            reward,
            cost,
            final_prediction,
            acting_agent: action,
            next_state: self.state(),
        })
    }
}

/// Coverage of a completed episode: `1 - (sum of costs) / T`.
pub fn coverage(costs: &[f64]) -> f64 {
    if costs.is_empty() {
        return 1.0;
    }
    1.0 - costs.iter().sum::<f64>() / costs.len() as f64
}

/// One row of the optional per-step audit log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLogRow {
    pub episode: u64,
    pub t: u32,
    pub action: String,
    pub reward: f64,
    pub cost: f64,
    pub workload: u32,
    pub eta: f64,
}

pub fn write_trajectory_log(path: &std::path::Path, rows: &[TrajectoryLogRow]) -> Result<()> {
    let mut text = String::from("episode,t,action,reward,cost,workload,eta\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode, r.t, r.action, r.reward, r.cost, r.workload, r.eta
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::AiAccuracyProfile;
    use crate::fatigue::presets;

    pub(crate) fn synthetic_config(length: u32, accuracy: f64, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            length,
            fatigue: FatigueSource::Ranges(presets::by_name("normal_fatigue").unwrap()),
            source: InstanceSource::Synthetic(SyntheticTaskSpec {
                class_count: 10,
                feature_dim: 8,
                profile: AiAccuracyProfile::Constant { accuracy },
                episode_length: length,
                difficulty_noise: 0.1,
                cluster_spread: 1.0,
            }),
            seed,
        }
    }

    #[test]
    fn reset_contract() {
        let mut env = Environment::new(synthetic_config(10, 0.65, 1)).unwrap();
        let s = env.reset().unwrap();
        assert_eq!(s.workload, 0);
        assert_eq!(s.step, 1);
        assert_eq!(s.workload_fraction, 0.0);
    }

    #[test]
    fn reset_deterministic() {
        let mut a = Environment::new(synthetic_config(10, 0.65, 1)).unwrap();
        let mut b = Environment::new(synthetic_config(10, 0.65, 1)).unwrap();
        assert_eq!(a.reset().unwrap(), b.reset().unwrap());
        assert_eq!(a.fatigue_params(), b.fatigue_params());
    }

    #[test]
    fn single_step_episode_terminates() {
        let mut env = Environment::new(synthetic_config(1, 0.65, 1)).unwrap();
        env.reset().unwrap();
        let out = env.step(Action::Ai).unwrap();
        assert!(out.next_state.is_none());
        assert!(env.is_terminal());
        assert!(matches!(env.step(Action::Ai), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn all_ai_episode() {
        let mut env = Environment::new(synthetic_config(50, 0.65, 2)).unwrap();
        env.reset().unwrap();
        let mut costs = Vec::new();
        let mut workload = 0;
        while !env.is_terminal() {
            let out = env.step(Action::Ai).unwrap();
            costs.push(out.cost);
            workload = out.next_state.map_or(workload, |s| s.workload);
        }
        assert_eq!(costs.iter().sum::<f64>(), 0.0);
        assert_eq!(workload, 0);
        assert_eq!(coverage(&costs), 1.0);
    }

    #[test]
    fn all_human_episode() {
        let mut env = Environment::new(synthetic_config(50, 0.65, 2)).unwrap();
        let mut state = env.reset().unwrap();
        let mut costs = Vec::new();
        loop {
            assert_eq!(u32::from(state.step - 1), state.workload);
            let out = env.step(Action::Human).unwrap();
            costs.push(out.cost);
            match out.next_state {
                Some(s) => state = s,
                None => break,
            }
        }
        assert_eq!(costs.iter().sum::<f64>(), 50.0);
        assert_eq!(coverage(&costs), 0.0);
    }

    #[test]
    fn perfect_human_all_reward() {
        let perfect = FatigueParams::new(1.0, 1.0, 1.0, 0.1, 0.5, 1.0, 100).unwrap();
        let mut config = synthetic_config(30, 0.5, 3);
        config.fatigue = FatigueSource::Fixed(perfect);
        let mut env = Environment::new(config).unwrap();
        env.reset().unwrap();
        let mut total = 0.0;
        while !env.is_terminal() {
            total += env.step(Action::Human).unwrap().reward;
        }
        assert_eq!(total, 30.0);
    }

    #[test]
    fn long_ai_episode_binomial_band() {
        let mut env = Environment::new(synthetic_config(10_000, 0.65, 4)).unwrap();
        env.reset().unwrap();
        let mut total = 0.0;
        while !env.is_terminal() {
            total += env.step(Action::Ai).unwrap().reward;
        }
        assert!((6350.0..=6650.0).contains(&total), "total {total}");
    }

    #[test]
    fn coverage_formula() {
        let mut costs = vec![0.0; 100];
        for c in costs.iter_mut().take(40) {
            *c = 1.0;
        }
        assert_eq!(coverage(&costs), 0.6);
    }

    #[test]
    fn replay_reproduces_rewards() {
        let actions = [
            Action::Ai,
            Action::Human,
            Action::Human,
            Action::Ai,
            Action::Human,
            Action::Ai,
        ];
        let run = |episode: u64| {
            let mut env = Environment::new(synthetic_config(6, 0.65, 5)).unwrap();
            env.set_next_episode(episode);
            env.reset().unwrap();
            actions
                .iter()
                .map(|&a| env.step(a).unwrap().reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        // Fatigue resets across episodes.
        let mut env = Environment::new(synthetic_config(6, 0.65, 5)).unwrap();
        env.reset().unwrap();
        env.step(Action::Human).unwrap();
        let s = env.reset().unwrap();
        assert_eq!(s.workload, 0);
    }

    #[test]
    fn stream_source_exhaustion_is_config_error() {
        let spec = SyntheticTaskSpec {
            class_count: 4,
            feature_dim: 4,
            profile: AiAccuracyProfile::Constant { accuracy: 0.8 },
            episode_length: 10,
            difficulty_noise: 0.1,
            cluster_spread: 1.0,
        };
        let mut rng = stream_rng(1, "stream", 0);
        let instances = generate_synthetic_stream(&spec, 5, &mut rng).unwrap();
        let config = EpisodeConfig {
            length: 10,
            fatigue: FatigueSource::Ranges(presets::by_name("normal_fatigue").unwrap()),
            source: InstanceSource::Stream {
                instances: Arc::new(instances),
                class_count: 4,
            },
            seed: 1,
        };
        let mut env = Environment::new(config).unwrap();
        assert!(matches!(env.reset(), Err(Error::Config(_))));
    }
}
