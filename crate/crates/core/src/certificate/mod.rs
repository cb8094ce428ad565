//! Neural reach-while-avoid certificates: sampling, training, and sound
//! checking of the certificate conditions.

mod loss;
mod retrain;
mod task;
mod train;
mod verify;

pub use loss::{rwa_loss, LossEval, LossHyper, Prepared};
pub use retrain::{
    check_lemma1, dent, retrain_loop, Lemma1Report, Lemma1Violation, RetrainResult, RetrainSettings, RetrainStatus,
    RoundRecord,
};
pub use task::{
    affine_controller, sample_sets, toy_plant, Batch, RwaTask, SampleCounts, SampleSets, UnsafeFeature, Witness,
};
pub use train::{train, Optimizer, Schedule, TrainReport};
pub use verify::{
    check_tiling, gamma_linear_search, gamma_search, verify_certificate, CellOutcome, CertReport, ConditionReport,
    GammaResult, Overall, PartitionPlan,
};
