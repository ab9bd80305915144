//! Front-door stage: reasoning paths as a mediator, path and graph encoders,
//! their fusion, and the dataset-bias estimate used at prediction time.

pub mod beam;
pub mod classify;
pub mod dictionary;
pub mod encode;
pub mod fusion;
pub mod kmeans;
pub mod transition;

pub use beam::{beam_search_paths, enumerate_paths, ReasoningPath};
pub use dictionary::{build_confusion_dictionary, expected_bias, ConfusionDictionary};
pub use fusion::FusionConfig;
pub use kmeans::{kmeans, KMeansResult};
pub use transition::{transition_matrix, TransitionWeight};
