//! Policy evaluation: rollouts, coverage–accuracy curves and regime suites.
//!
//! Evaluation is deterministic: each (seed, episode index) pair fixes the
//! instances, the expert and the human outcomes, so two policies evaluated
//! on the same seeds face identical conditions and sequential human draws
//! pair up at matched deferral counts.

use std::io::BufRead;
use std::path::Path;

use crate::baselines::{DeferralPolicy, PolicyObs};
use crate::env::{Environment, EpisodeConfig, FatigueSource};
use crate::error::{Error, Result};
use crate::fatigue::presets;

/// Run one episode with the policy acting greedily; returns the accuracy
/// (mean reward) and coverage (fraction not deferred).
pub fn run_episode(
    policy: &mut dyn DeferralPolicy,
    env: &mut Environment,
    episode_index: u64,
) -> Result<(f64, f64)> {
    env.set_next_episode(episode_index);
    policy.begin_episode(episode_index);
    let mut state = env.reset()?;
    let mut reward_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut steps = 0u32;
    loop {
        let instance = env
            .current_instance()
            .ok_or_else(|| Error::Lifecycle("no current instance mid-episode".into()))?
            .clone();
        let action = policy.decide(&PolicyObs { state: &state, instance: &instance })?;
        let outcome = env.step(action)?;
        reward_sum += outcome.reward;
        cost_sum += outcome.cost;
        steps += 1;
        match outcome.next_state {
            Some(s) => state = s,
            None => break,
        }
    }
    let t = f64::from(steps);
    Ok((reward_sum / t, 1.0 - cost_sum / t))
}

/// Mean and standard error over evaluation seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub policy: String,
    pub accuracy: f64,
    pub accuracy_stderr: f64,
    pub coverage: f64,
    pub coverage_stderr: f64,
    pub seeds: usize,
    pub episodes_per_seed: u64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluate a policy over several seeds; each seed reruns the same episode
/// indices under its own derived streams. Statistics are across seed means.
pub fn evaluate_policy(
    policy: &mut dyn DeferralPolicy,
    base_cfg: &EpisodeConfig,
    seeds: &[u64],
    episodes_per_seed: u64,
) -> Result<EvalSummary> {
    if seeds.is_empty() || episodes_per_seed == 0 {
        return Err(Error::Config("evaluation needs at least one seed and episode".into()));
    }
    let mut acc = Vec::with_capacity(seeds.len());
    let mut cov = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base_cfg.clone();
        cfg.seed = seed;
        let mut env = Environment::new(cfg)?;
        let mut a_sum = 0.0;
        let mut c_sum = 0.0;
        for ep in 0..episodes_per_seed {
            let (a, c) = run_episode(policy, &mut env, ep)?;
            a_sum += a;
            c_sum += c;
        }
        acc.push(a_sum / episodes_per_seed as f64);
        cov.push(c_sum / episodes_per_seed as f64);
    }
    let (accuracy, accuracy_stderr) = mean_and_stderr(&acc);
    let (coverage, coverage_stderr) = mean_and_stderr(&cov);
    Ok(EvalSummary {
        policy: policy.name().to_string(),
        accuracy,
        accuracy_stderr,
        coverage,
        coverage_stderr,
        seeds: seeds.len(),
        episodes_per_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub coverage: f64,
    pub accuracy: f64,
    /// Standard error of the accuracy across evaluation seeds (0 when the
    /// point is analytic or single-seed).
    pub std_error: f64,
}

/// System accuracy as a function of coverage, sorted strictly increasing in
/// coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub policy: String,
    pub regime: String,
    pub points: Vec<CurvePoint>,
}

impl CoverageCurve {
    /// Sort by coverage and collapse points closer than 1e-9 in coverage
    /// (keeping the first), then check strict monotonicity and bounds.
    pub fn new(policy: String, regime: String, mut points: Vec<CurvePoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Data("a coverage curve needs at least two points".into()));
        }
        points.sort_by(|a, b| a.coverage.partial_cmp(&b.coverage).unwrap());
        points.dedup_by(|b, a| (b.coverage - a.coverage).abs() < 1e-9);
        for p in &points {
            if !(0.0..=1.0).contains(&p.coverage) || !(0.0..=1.0).contains(&p.accuracy) {
                return Err(Error::Data(format!(
                    "curve point ({}, {}) outside the unit square",
                    p.coverage, p.accuracy
                )));
            }
        }
        for w in points.windows(2) {
            if w[1].coverage <= w[0].coverage {
                return Err(Error::Data("curve coverages must be strictly increasing".into()));
            }
        }
        Ok(CoverageCurve { policy, regime, points })
    }

    /// Area under the coverage–accuracy curve by the trapezoid rule.
    /// Requires the curve to span the full coverage axis.
    pub fn auacc(&self) -> Result<f64> {
        let first = self.points.first().unwrap();
        let last = self.points.last().unwrap();
        if first.coverage.abs() > 1e-9 || (last.coverage - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "area needs curve endpoints at coverage 0 and 1, got {} and {}",
                first.coverage, last.coverage
            )));
        }
        let mut area = 0.0;
        for w in self.points.windows(2) {
            area += 0.5 * (w[1].coverage - w[0].coverage) * (w[0].accuracy + w[1].accuracy);
        }
        Ok(area)
    }
}

/// Sweep a policy family over coverage targets and anchor the curve with the
/// always-human and always-AI endpoints. Points are placed at measured, not
/// requested, coverage.
pub fn build_curve<F>(
    name: &str,
    regime: &str,
    base_cfg: &EpisodeConfig,
    seeds: &[u64],
    episodes_per_seed: u64,
    targets: &[f64],
    mut make: F,
) -> Result<CoverageCurve>
where
    F: FnMut(f64) -> Result<Box<dyn DeferralPolicy>>,
{
    let mut points = Vec::with_capacity(targets.len() + 2);
    let mut human = crate::baselines::HumanOnlyPolicy;
    let s = evaluate_policy(&mut human, base_cfg, seeds, episodes_per_seed)?;
    points.push(CurvePoint { coverage: 0.0, accuracy: s.accuracy, std_error: s.accuracy_stderr });
    for &target in targets {
        let mut policy = make(target)?;
        let s = evaluate_policy(policy.as_mut(), base_cfg, seeds, episodes_per_seed)?;
        points.push(CurvePoint {
            coverage: s.coverage,
            accuracy: s.accuracy,
            std_error: s.accuracy_stderr,
        });
    }
    let mut ai = crate::baselines::AiOnlyPolicy;
    let s = evaluate_policy(&mut ai, base_cfg, seeds, episodes_per_seed)?;
    points.push(CurvePoint { coverage: 1.0, accuracy: s.accuracy, std_error: s.accuracy_stderr });
    CoverageCurve::new(name.to_string(), regime.to_string(), points)
}

/// The four expert regimes used for transfer evaluation.
pub fn regime_names() -> &'static [&'static str] {
    &["sustained_high", "normal_fatigue", "rapid_fatigue", "real_human_recall"]
}

/// A named evaluation regime: the base episode config with its expert
/// population swapped for the preset's.
pub fn regime_config(base_cfg: &EpisodeConfig, regime: &str) -> Result<EpisodeConfig> {
    if !regime_names().contains(&regime) {
        return Err(Error::Config(format!(
            "unknown regime '{regime}'; expected one of {:?}",
            regime_names()
        )));
    }
    let ranges = presets::by_name(regime)?;
    let mut cfg = base_cfg.clone();
    cfg.fatigue = FatigueSource::Ranges(ranges);
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeResult {
    pub regime: String,
    pub summary: EvalSummary,
    /// The policy's operating point anchored by the human-only and AI-only
    /// endpoints in the same regime.
    pub curve: CoverageCurve,
    pub auacc: f64,
}

/// Evaluate one fixed policy across every regime with the same seeds and
/// episode count (the zero-shot protocol: no retraining, no parameter
/// mutation between regimes). Each regime also gets an endpoint-anchored
/// curve and its area.
pub fn run_regime_suite(
    policy: &mut dyn DeferralPolicy,
    base_cfg: &EpisodeConfig,
    seeds: &[u64],
    episodes_per_seed: u64,
) -> Result<Vec<RegimeResult>> {
    let mut out = Vec::new();
    for &regime in regime_names() {
        let cfg = regime_config(base_cfg, regime)?;
        let summary = evaluate_policy(policy, &cfg, seeds, episodes_per_seed)?;
        let mut human = crate::baselines::HumanOnlyPolicy;
        let h = evaluate_policy(&mut human, &cfg, seeds, episodes_per_seed)?;
        let mut ai = crate::baselines::AiOnlyPolicy;
        let a = evaluate_policy(&mut ai, &cfg, seeds, episodes_per_seed)?;
        let curve = CoverageCurve::new(
            summary.policy.clone(),
            regime.to_string(),
            vec![
                CurvePoint { coverage: 0.0, accuracy: h.accuracy, std_error: h.accuracy_stderr },
                CurvePoint {
                    coverage: summary.coverage,
                    accuracy: summary.accuracy,
                    std_error: summary.accuracy_stderr,
                },
                CurvePoint { coverage: 1.0, accuracy: a.accuracy, std_error: a.accuracy_stderr },
            ],
        )?;
        let auacc = curve.auacc()?;
        out.push(RegimeResult { regime: regime.to_string(), summary, curve, auacc });
    }
    Ok(out)
}

pub const CURVE_HEADER: &str = "method,regime,coverage,accuracy,std_error";

pub fn write_curve_csv(path: &Path, curve: &CoverageCurve) -> Result<()> {
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for p in &curve.points {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            curve.policy, curve.regime, p.coverage, p.accuracy, p.std_error
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_curve_csv(path: &Path) -> Result<CoverageCurve> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header != CURVE_HEADER {
        return Err(Error::Data(format!(
            "{}: expected header {CURVE_HEADER}",
            path.display()
        )));
    }
    let mut policy = String::new();
    let mut regime = String::new();
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::ParseRow { path: path.to_path_buf(), row, message: msg };
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", fields.len())));
        }
        if policy.is_empty() {
            policy = fields[0].to_string();
            regime = fields[1].to_string();
        } else if policy != fields[0] || regime != fields[1] {
            return Err(bad(format!(
                "mixed series: '{policy}/{regime}' and '{}/{}'",
                fields[0], fields[1]
            )));
        }
        let coverage: f64 =
            fields[2].parse().map_err(|_| bad(format!("bad coverage '{}'", fields[2])))?;
        let accuracy: f64 =
            fields[3].parse().map_err(|_| bad(format!("bad accuracy '{}'", fields[3])))?;
        let std_error: f64 =
            fields[4].parse().map_err(|_| bad(format!("bad std_error '{}'", fields[4])))?;
        points.push(CurvePoint { coverage, accuracy, std_error });
    }
    CoverageCurve::new(policy, regime, points)
}

/// One row per regime: the curve's area summary for plotting tables.
pub fn write_auacc_summary(path: &Path, rows: &[RegimeResult]) -> Result<()> {
    let mut text = String::from("method,regime,auacc\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.summary.policy, r.regime, r.auacc));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per (policy, regime) evaluation result.
pub fn write_eval_csv(path: &Path, rows: &[RegimeResult]) -> Result<()> {
    let mut text = String::from(
        "policy,regime,accuracy,accuracy_stderr,coverage,coverage_stderr,seeds,episodes_per_seed\n",
    );
    for r in rows {
        let s = &r.summary;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.policy,
            r.regime,
            s.accuracy,
            s.accuracy_stderr,
            s.coverage,
            s.coverage_stderr,
            s.seeds,
            s.episodes_per_seed
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
