//! Counterfactual, aspect-based explanations for a top-K recommender.
//!
//! The pipeline: build user/item aspect matrices from reviews ([`corpus`]),
//! train a scoring network ([`recsys`]), search for minimal aspect changes
//! that push a recommended item out of the list ([`counterfactual`]) and
//! score the explanations ([`metrics`]). [`synth`] produces corpora with
//! planted ground truth.

pub mod corpus;
pub mod counterfactual;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod recsys;
pub mod synth;

pub use corpus::{AspectCatalog, AspectMatrices, Corpus, HoldoutSplit};
pub use counterfactual::{CfHyper, Explanation, Variant};
pub use error::{CoreError, Result};
pub use matrix::{DenseMatrix, InteractionMatrix};
pub use metrics::{EvalOptions, EvalReport, GroundTruth};
pub use recsys::{RankedList, RecommenderModel, Scorer, TrainHyper};
pub use synth::{PlantedTruth, SynthSpec};
