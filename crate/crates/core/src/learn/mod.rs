//! Contour-image classification: features, oversampling, augmentation, the
//! network, training, evaluation and model files.

pub mod augment;
pub mod checkpoint;
pub mod eval;
pub mod features;
pub mod hierarchy;
pub mod network;
pub mod smote;
pub mod study;
pub mod train;

pub use augment::AugmentParams;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};
pub use eval::{evaluate, Classifier, EvalReport};
pub use features::{grid_features, FeatureVector};
pub use hierarchy::{seven_class_groups, train_hierarchical, HierarchicalModel};
pub use network::{ArchConfig, ConvNet};
pub use smote::{smote_balance, SmoteOutcome};
pub use study::{run_mode, subset_study, LabeledPlot, RunConfig, RunResult, SubsetRow};
pub use train::{train, train_network, FlatModel, HyperParams, TrainingCurve};
