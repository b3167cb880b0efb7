//! The two predictive agents and their task streams.
//!
//! The human expert predicts the true label with probability equal to the
//! current fatigue-curve performance and otherwise errs uniformly over the
//! remaining classes. The AI classifier is frozen: its prediction (and a
//! calibrated confidence) is stamped on every instance, either by the
//! synthetic generator or by a precomputed prediction file.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fatigue::FatigueParams;
use crate::rng::stream_rng;

/// One classification task: embedding features, ground truth, and the frozen
/// AI classifier's output for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub instance_id: String,
    pub label: usize,
    pub ai_prediction: usize,
    pub ai_confidence: Option<f64>,
    pub features: Vec<f64>,
}

/// Simulated expert: noise rate `eta = 1 - w(rho)` at the workload handed in
/// by the caller. Owns its random stream, so outcomes are deterministic given
/// the stream seed and the sequence of calls.
#[derive(Debug, Clone)]
pub struct HumanExpert {
    pub params: FatigueParams,
    pub class_count: usize,
    rng: ChaCha8Rng,
}

impl HumanExpert {
    pub fn new(params: FatigueParams, class_count: usize, rng: ChaCha8Rng) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        Ok(HumanExpert {
            params,
            class_count,
            rng,
        })
    }

    /// Predicted class at cumulative workload `rho`: the true label with
    /// probability `1 - eta`, otherwise one of the `K - 1` wrong classes
    /// uniformly (`eta / (K - 1)` each).
    pub fn predict(&mut self, instance: &TaskInstance, rho: f64) -> usize {
        let eta = 1.0 - self.params.performance(rho);
        let u: f64 = self.rng.gen();
        if u >= eta {
            instance.label
        } else {
            let wrong = self.rng.gen_range(0..self.class_count - 1);
            if wrong >= instance.label {
                wrong + 1
            } else {
                wrong
            }
        }
    }

    /// Current correctness probability at workload `rho`.
    pub fn performance(&self, rho: f64) -> f64 {
        self.params.performance(rho)
    }
}

/// The frozen classifier's stored prediction. Pure lookup; nothing is
/// executed at decision time.
pub fn ai_predict(instance: &TaskInstance) -> usize {
    instance.ai_prediction
}

/// AI accuracy profile for synthetic streams: either a constant rate, or a
/// linear function of a latent per-instance difficulty in `[0, 1]` (easy
/// instances at difficulty 0). Per-difficulty profiles give the policy a
/// learnable signal of where the classifier fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AiAccuracyProfile {
    Constant { accuracy: f64 },
    DifficultyLinear { easy: f64, hard: f64 },
}

impl AiAccuracyProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AiAccuracyProfile::Constant { accuracy } => (0.0..=1.0).contains(&accuracy),
            AiAccuracyProfile::DifficultyLinear { easy, hard } => {
                (0.0..=1.0).contains(&easy) && (0.0..=1.0).contains(&hard)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("ai accuracy values must lie in [0, 1]".into()))
        }
    }

    /// Correctness probability at difficulty `z` in `[0, 1]`.
    pub fn accuracy_at(&self, z: f64) -> f64 {
        match *self {
            AiAccuracyProfile::Constant { accuracy } => accuracy,
            AiAccuracyProfile::DifficultyLinear { easy, hard } => {
                (easy + (hard - easy) * z).clamp(0.0, 1.0)
            }
        }
    }

    /// Mean accuracy over uniform difficulty.
    pub fn mean_accuracy(&self) -> f64 {
        match *self {
            AiAccuracyProfile::Constant { accuracy } => accuracy,
            AiAccuracyProfile::DifficultyLinear { easy, hard } => 0.5 * (easy + hard),
        }
    }
}

/// Generator settings for a synthetic feature stream standing in for backbone
/// embeddings of an image dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub class_count: usize,
    /// Total feature width; the last column is a noisy difficulty channel,
    /// the rest are class-conditioned Gaussian cluster coordinates.
    pub feature_dim: usize,
    pub profile: AiAccuracyProfile,
    pub episode_length: u32,
    /// Noise added to the difficulty channel (signal is difficulty in [0, 1]).
    pub difficulty_noise: f64,
    /// Standard deviation of the cluster coordinates around class centers.
    pub cluster_spread: f64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be >= 2".into()));
        }
        if self.episode_length < 1 {
            return Err(Error::Config("episode_length must be >= 1".into()));
        }
        if self.difficulty_noise < 0.0 || self.cluster_spread < 0.0 {
            return Err(Error::Config("noise scales must be nonnegative".into()));
        }
        self.profile.validate()
    }

    /// Fixed class centers, derived from class index alone so streams from
    /// the same spec are comparable across episodes and runs.
    fn class_center(&self, class: usize, out: &mut [f64]) {
        let mut rng = stream_rng(0x636c7573, "class-center", class as u64);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for v in out.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
}

/// Generate `count` instances from the spec. Labels are uniform over K, the
/// AI prediction is correct with the profile's per-instance probability
/// (uniform wrong class otherwise), and `ai_confidence` carries that
/// probability, so confidences are calibrated by construction.
pub fn generate_synthetic_stream(
    spec: &SyntheticTaskSpec,
    count: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TaskInstance>> {
    spec.validate()?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let cluster_dims = spec.feature_dim - 1;
    let mut center = vec![0.0; cluster_dims];
    let mut out = Vec::with_capacity(count as usize);
    for t in 0..count {
        let label = rng.gen_range(0..spec.class_count);
        let difficulty: f64 = rng.gen();
        let p = spec.profile.accuracy_at(difficulty);
        let correct = rng.gen::<f64>() < p;
        let ai_prediction = if correct {
            label
        } else {
            let wrong = rng.gen_range(0..spec.class_count - 1);
            if wrong >= label {
                wrong + 1
            } else {
                wrong
            }
        };
        spec.class_center(label, &mut center);
        let mut features = Vec::with_capacity(spec.feature_dim);
        for c in center.iter() {
            features.push(c + spec.cluster_spread * normal.sample(rng));
        }
        features.push(difficulty + spec.difficulty_noise * normal.sample(rng));
        out.push(TaskInstance {
            instance_id: format!("s{t}"),
            label,
            ai_prediction,
            ai_confidence: Some(p),
            features,
        });
    }
    Ok(out)
}

/// Column order of the instance record file. The header row is mandatory and
/// part of the contract: `instance_id,label,ai_prediction,ai_confidence`
/// followed by `f0..f{d-1}`. `ai_confidence` may be empty.
pub fn instance_header(feature_dim: usize) -> String {
    let mut h = String::from("instance_id,label,ai_prediction,ai_confidence");
    for j in 0..feature_dim {
        h.push_str(&format!(",f{j}"));
    }
    h
}

/// Load an instance stream, preserving file order. Class indices are checked
/// against `class_count` and every row must carry the same feature width as
/// the header.
pub fn load_instance_stream(path: &Path, class_count: usize) -> Result<Vec<TaskInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Data(format!("{}: missing header row", path.display()))),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..4] != ["instance_id", "label", "ai_prediction", "ai_confidence"] {
        return Err(Error::Data(format!(
            "{}: header must start with instance_id,label,ai_prediction,ai_confidence,f0,...",
            path.display()
        )));
    }
    let feature_dim = cols.len() - 4;
    for (j, c) in cols[4..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Data(format!(
                "{}: feature columns must be named f0..f{}",
                path.display(),
                feature_dim - 1
            )));
        }
    }

    let parse_row = |path: &Path, row: usize, msg: String| Error::ParseRow {
        path: path.to_path_buf(),
        row,
        message: msg,
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2; // 1-based, after header
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_row(
                path,
                row,
                format!("expected {} columns, found {}", cols.len(), fields.len()),
            ));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| parse_row(path, row, format!("bad label '{}'", fields[1])))?;
        let ai_prediction: usize = fields[2]
            .parse()
            .map_err(|_| parse_row(path, row, format!("bad ai_prediction '{}'", fields[2])))?;
        if label >= class_count {
            return Err(parse_row(
                path,
                row,
                format!("label {label} out of range for {class_count} classes"),
            ));
        }
        if ai_prediction >= class_count {
            return Err(parse_row(
                path,
                row,
                format!("ai_prediction {ai_prediction} out of range for {class_count} classes"),
            ));
        }
        let ai_confidence = if fields[3].is_empty() {
            None
        } else {
            let c: f64 = fields[3]
                .parse()
                .map_err(|_| parse_row(path, row, format!("bad ai_confidence '{}'", fields[3])))?;
            if !(0.0..=1.0).contains(&c) {
                return Err(parse_row(path, row, format!("ai_confidence {c} outside [0, 1]")));
            }
            Some(c)
        };
        let mut features = Vec::with_capacity(feature_dim);
        for f in &fields[4..] {
            features.push(
                f.parse()
                    .map_err(|_| parse_row(path, row, format!("bad feature value '{f}'")))?,
            );
        }
        out.push(TaskInstance {
            instance_id: fields[0].to_string(),
            label,
            ai_prediction,
            ai_confidence,
            features,
        });
    }
    Ok(out)
}

/// Write an instance stream in the documented column order. Floats use the
/// shortest round-tripping decimal form, so load/write is bit-identical.
pub fn write_instance_stream(path: &Path, instances: &[TaskInstance]) -> Result<()> {
    let feature_dim = instances.first().map_or(0, |i| i.features.len());
    for (i, inst) in instances.iter().enumerate() {
        if inst.features.len() != feature_dim {
            return Err(Error::Data(format!(
                "inconsistent feature width at instance {i}: {} vs {feature_dim}",
                inst.features.len()
            )));
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = instance_header(feature_dim);
    text.push('\n');
    for inst in instances {
        text.push_str(&inst.instance_id);
        text.push_str(&format!(",{},{}", inst.label, inst.ai_prediction));
        match inst.ai_confidence {
            Some(c) => text.push_str(&format!(",{c}")),
            None => text.push(','),
        }
        for f in &inst.features {
            text.push_str(&format!(",{f}"));
        }
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
