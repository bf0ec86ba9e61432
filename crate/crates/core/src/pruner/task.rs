//! Seeded desk-scale task: dataset, trained MLP, and a per-stage gradient
//! source with optional calibrated noise.

use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{GradientSource, StageEval};
use crate::error::{Error, Result};
use crate::ewr::{GradientMatrix, WeightVector};
use crate::model::{
    evaluate, forward_loss, inject_noise, per_sample_gradients, read_csv_dataset, read_idx_dataset, synth_dataset,
    train, Activation, BlobSpec, Dataset, NoiseSpec, TinyMlp, TrainConfig,
};
use crate::rng::{derive_seed, seeded, stream};

/// Offset separating per-stage sub-streams from the top-level stream tags.
const STAGE_STREAM_BASE: u64 = 0x100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSpec {
    Blobs {
        samples: usize,
        dim: usize,
        classes: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DataSpec {
    /// Blob data is drawn from `seed`; file data ignores it.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSpec::Blobs {
                samples,
                dim,
                classes,
                spread,
            } => synth_dataset(&BlobSpec {
                seed,
                samples: *samples,
                dim: *dim,
                classes: *classes,
                spread: *spread,
            }),
            DataSpec::Csv { path } => read_csv_dataset(path),
            DataSpec::Idx { images, labels } => read_idx_dataset(images, labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub data: DataSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Rows of each stage's gradient matrix.
    pub fisher_samples: usize,
    pub noise_fraction: f64,
    pub noise_level: f64,
    /// Keep biases out of hard thresholding.
    pub protect_biases: bool,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            data: DataSpec::Blobs {
                samples: 1000,
                dim: 40,
                classes: 5,
                spread: 0.3,
            },
            hidden: vec![64],
            activation: Activation::Relu,
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 32,
            fisher_samples: 100,
            noise_fraction: 0.0,
            noise_level: 1.0,
            protect_biases: false,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fisher_samples == 0 {
            return Err(Error::InvalidArgument("fisher_samples must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer sizes must be >= 1".into()));
        }
        self.noise(0).validate()
    }

    pub fn noise(&self, cal_seed: u64) -> NoiseSpec {
        NoiseSpec {
            fraction: self.noise_fraction,
            level: self.noise_level,
            cal_seed,
        }
    }

    pub fn dims(&self, input: usize, classes: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect()
    }
}

/// Independent seeds for every random stream of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub batch: u64,
    pub noise: u64,
}

impl SeedPlan {
    pub fn from_run(seed: u64) -> Self {
        Self {
            data: derive_seed(seed, stream::DATA),
            init: derive_seed(seed, stream::INIT),
            train: derive_seed(seed, stream::TRAIN),
            batch: derive_seed(seed, stream::BATCH),
            noise: derive_seed(seed, stream::NOISE),
        }
    }
}

/// Seed of sub-stream `stage` under `base`.
pub fn stage_seed(base: u64, stage: usize) -> u64 {
    derive_seed(base, STAGE_STREAM_BASE + stage as u64)
}

/// Dataset and trained model for one run seed.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub spec: TaskSpec,
    pub seeds: SeedPlan,
    pub data: Dataset,
    pub model: TinyMlp,
}

impl PreparedTask {
    pub fn prepare(spec: &TaskSpec, seed: u64) -> Result<Self> {
        Self::prepare_with(spec, SeedPlan::from_run(seed))
    }

    pub fn prepare_with(spec: &TaskSpec, seeds: SeedPlan) -> Result<Self> {
        spec.validate()?;
        let data = spec.data.load(seeds.data)?;
        let dims = spec.dims(data.dim(), data.num_classes);
        let init = TinyMlp::init(dims, spec.activation, seeds.init)?;
        let cfg = TrainConfig {
            epochs: spec.epochs,
            learning_rate: spec.learning_rate,
            batch_size: spec.batch_size,
            seed: seeds.train,
        };
        let model = train(&init, &data.train, &cfg)?;
        Ok(Self {
            spec: spec.clone(),
            seeds,
            data,
            model,
        })
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    pub fn gradient_source(&self) -> MlpGradientSource<'_> {
        MlpGradientSource::new(self, self.seeds.batch, self.seeds.noise)
    }

    pub fn eval(&self, weights: &WeightVector) -> Result<StageEval> {
        let model = self.model.with_weights(weights.clone())?;
        let test = evaluate(&model, &self.data.test)?;
        let train_loss = forward_loss(&model, self.data.train.features.view(), &self.data.train.labels)?;
        Ok(StageEval {
            train_loss,
            test_loss: test.loss,
            accuracy: test.accuracy,
            top5_accuracy: test.top5_accuracy,
        })
    }
}

/// Per-stage gradients of a prepared task: a fresh batch drawn with
/// replacement from the training split, evaluated at the stage reference, then
/// perturbed by the task's noise spec.
pub struct MlpGradientSource<'a> {
    task: &'a PreparedTask,
    batch_seed: u64,
    noise_seed: u64,
}

impl<'a> MlpGradientSource<'a> {
    pub fn new(task: &'a PreparedTask, batch_seed: u64, noise_seed: u64) -> Self {
        Self {
            task,
            batch_seed,
            noise_seed,
        }
    }

    /// Training-row indices of the stage batch.
    pub fn batch_indices(&self, stage: usize) -> Vec<usize> {
        let mut rng = seeded(stage_seed(self.batch_seed, stage));
        let n_train = self.task.data.train.len();
        (0..self.task.spec.fisher_samples)
            .map(|_| rng.random_range(0..n_train))
            .collect()
    }

    pub fn clean_gradients(&self, stage: usize, reference: &WeightVector) -> Result<GradientMatrix> {
        let batch = self.task.data.train.select(&self.batch_indices(stage));
        let model = self.task.model.with_weights(reference.clone())?;
        per_sample_gradients(&model, batch.features.view(), &batch.labels)
    }
}

impl GradientSource for MlpGradientSource<'_> {
    fn num_params(&self) -> usize {
        self.task.num_params()
    }

    fn gradients(&mut self, stage: usize, reference: &WeightVector) -> Result<GradientMatrix> {
        let g = self.clean_gradients(stage, reference)?;
        let noise = self.task.spec.noise(stage_seed(self.noise_seed, stage));
        inject_noise(&g, &noise)
    }

    fn evaluate(&self, weights: &WeightVector) -> Result<Option<StageEval>> {
        self.task.eval(weights).map(Some)
    }

    fn protected(&self) -> Option<Vec<bool>> {
        self.task.spec.protect_biases.then(|| self.task.model.bias_mask())
    }
}
