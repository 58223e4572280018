//! Staged training of converter and model, the baselines, and the experiment grid.
//!
//! Every stage is optional: converter pre-training toward a target transform,
//! correspondence training, and fine-tuning in one of several modes.

mod batch;
mod coral;
mod experiment;
mod train;

pub use batch::{class_of, maneuver_of, Domain, Predictions};
pub use coral::{coral_align, covariance, CoralMap};
pub use experiment::{
    build_references, grid, method_plan, prepare_data, run_experiment, run_grid_point, ConvertedSample,
    ExperimentConfig, ExperimentContext, ExperimentData, ExperimentReport, ImageDataConfig, Method, ResultRow,
    SequenceDataConfig, Task,
};
pub use train::{
    build_correspondences, convert_domain, execute_plan, fine_tune, predict, pretrain_converter, pretrain_targets,
    train_correspondence, train_model, StageLog, Trained,
};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Fine-tuning regime and baseline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Head only, task loss; the converter stays frozen.
    Mode0,
    /// Head and converter, task loss plus weighted correspondence loss.
    Mode1,
    /// Head and converter, task loss only.
    Mode2,
    /// Head only, no converter.
    FinetuneOnly,
    /// Direct-sample converter trained like mode 1, never pre-trained.
    Imp,
    /// Covariance alignment of the inputs, then head-only fine-tuning.
    Coral,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mode0 => "0",
            Mode::Mode1 => "1",
            Mode::Mode2 => "2",
            Mode::FinetuneOnly => "finetune-only",
            Mode::Imp => "imp",
            Mode::Coral => "coral",
        }
    }

    pub fn uses_converter(self) -> bool {
        matches!(self, Mode::Mode0 | Mode::Mode1 | Mode::Mode2 | Mode::Imp)
    }

    /// Whether fine-tuning updates the converter.
    pub fn trains_converter(self) -> bool {
        matches!(self, Mode::Mode1 | Mode::Mode2 | Mode::Imp)
    }

    /// Whether fine-tuning adds the correspondence loss.
    pub fn uses_correspondence_loss(self) -> bool {
        matches!(self, Mode::Mode1 | Mode::Imp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Pretrain,
    Correspondence,
    Finetune,
}

/// Pre-training target: the identity (T1) or the task's domain-knowledge guess (T2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainTarget {
    Identity,
    DomainKnowledge,
}

impl PretrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            PretrainTarget::Identity => "T1",
            PretrainTarget::DomainKnowledge => "T2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T1" | "t1" | "identity" => Some(PretrainTarget::Identity),
            "T2" | "t2" | "domain-knowledge" => Some(PretrainTarget::DomainKnowledge),
            _ => None,
        }
    }
}

/// Optimization settings of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without held-out improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Share of the stage's training samples held out for early stopping.
    pub validation_fraction: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 16,
            patience: 5,
            validation_fraction: 0.2,
            clip_norm: None,
        }
    }
}

impl StageConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        StageConfig { learning_rate, ..Self::default() }
    }

    pub fn validate(&self, stage: &str) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "{stage}: learning rate and batch size must be positive, validation fraction in [0, 1)"
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("{stage}: clip norm must be positive")));
            }
        }
        Ok(())
    }
}

/// Which steps run, in which mode, with which settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub steps: Vec<Step>,
    pub mode: Mode,
    pub pretrain_target: PretrainTarget,
    pub lambda_corr: f64,
    /// Source partners per target sample.
    pub n_corr: usize,
    /// Squared instead of plain L2 norms in the pre-training and correspondence losses.
    pub squared_loss: bool,
    pub pretrain: StageConfig,
    pub correspondence: StageConfig,
    pub finetune: StageConfig,
    /// Learning rate of the converter while fine-tuning with it.
    pub converter_learning_rate: f64,
    /// CORAL ridge added to both covariances.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            steps: alloc::vec![Step::Pretrain, Step::Correspondence, Step::Finetune],
            mode: Mode::Mode1,
            pretrain_target: PretrainTarget::Identity,
            lambda_corr: 1.0,
            n_corr: 5,
            squared_loss: false,
            pretrain: StageConfig::with_lr(1e-2),
            correspondence: StageConfig::with_lr(1e-3),
            finetune: StageConfig::with_lr(1e-2),
            converter_learning_rate: 1e-3,
            ridge: 1.0,
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn has(&self, step: Step) -> bool {
        self.steps.contains(&step)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::ModeMismatch(s.into()));
        if self.mode == Mode::Imp && self.has(Step::Pretrain) {
            return bad("imp has no matrices to pre-train");
        }
        if matches!(self.mode, Mode::Mode0 | Mode::Mode2) && self.has(Step::Correspondence) {
            return bad("modes 0 and 2 run without correspondence training");
        }
        if !self.mode.uses_converter() && (self.has(Step::Pretrain) || self.has(Step::Correspondence)) {
            return bad("converter steps need a converter mode");
        }
        if !(self.converter_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("converter learning rate must be positive".into()));
        }
        if !(self.lambda_corr >= 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("lambda_corr and ridge must be non-negative".into()));
        }
        if self.n_corr == 0 {
            return Err(Error::InvalidConfig("n_corr must be positive".into()));
        }
        self.pretrain.validate("pretrain")?;
        self.correspondence.validate("correspondence")?;
        self.finetune.validate("finetune")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn plan_invariants() {
        assert!(TrainPlan::default().validate().is_ok());
        let imp = TrainPlan { mode: Mode::Imp, ..TrainPlan::default() };
        assert!(matches!(imp.validate(), Err(Error::ModeMismatch(_))));
        let imp = TrainPlan { mode: Mode::Imp, steps: vec![Step::Correspondence, Step::Finetune], ..TrainPlan::default() };
        assert!(imp.validate().is_ok());
        for mode in [Mode::Mode0, Mode::Mode2] {
            let p = TrainPlan { mode, ..TrainPlan::default() };
            assert!(p.validate().is_err());
            let p = TrainPlan { mode, steps: vec![Step::Pretrain, Step::Finetune], ..TrainPlan::default() };
            assert!(p.validate().is_ok());
        }
        let ft = TrainPlan { mode: Mode::FinetuneOnly, steps: vec![Step::Pretrain], ..TrainPlan::default() };
        assert!(ft.validate().is_err());
    }
}
