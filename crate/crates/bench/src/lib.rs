//! Shared fixtures for the benchmarks: a toy dataset, model and short run.

use retrac_core::data::{make_synthetic, Generator};
use retrac_core::diffusion::make_schedule;
use retrac_core::model::Activation;
use retrac_core::trainer::{train, TrainOutput};
use retrac_core::{Dataset, Denoiser, DenoiserSpec, NoiseSchedule, SyntheticDatasetSpec, TrainConfig};

pub struct Fixture {
    pub data: Dataset,
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub run: TrainOutput,
}

/// 520-sample planted-outlier dataset, a `[96, 96]` denoiser and two epochs
/// of training.
pub fn toy_fixture() -> Fixture {
    let data = make_synthetic(&SyntheticDatasetSpec {
        majority_count: 500,
        minority_count: 20,
        dim: 16,
        generator: Generator::GaussianMixture,
        seed: 7,
    })
    .expect("valid dataset spec");
    let model = Denoiser::new(DenoiserSpec {
        input_dim: 16,
        hidden_dims: vec![96, 96],
        time_embed_dim: 16,
        activation: Activation::Silu,
    })
    .expect("valid model spec");
    let schedule = make_schedule(1000, 1e-4, 0.02).expect("valid schedule");
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 0.01,
        seed: 1,
        checkpoint_every: 65,
    };
    let run = train(&data, &model, &schedule, &cfg).expect("training succeeds");
    Fixture {
        data,
        model,
        schedule,
        run,
    }
}
