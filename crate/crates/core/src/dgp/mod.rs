//! Deep GP training by stochastic EM with elliptical-slice-sampled latent
//! layers, and prediction by mixing an ensemble of linked emulators.

pub mod emulator;
pub mod ess;
pub mod sampler;
pub mod sem;

pub use emulator::{mix, DgpSiEmulator, EmulatorManifest, EnsemblePrediction};
pub use ess::{ess_step, ess_update, EssOutcome};
pub use sampler::{DgpData, LatentSampler, LayerImputation};
pub use sem::{node_fit_configs, train_sem, train_sem_traced, SemConfig, SemTrace};
