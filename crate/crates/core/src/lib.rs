//! Particle effects as searchable objects.
//!
//! Each effect gets a structured representation with two halves. The
//! semantic half is a normalized description and its embedding. The
//! kinematic half is an emission shape, a trail of per-step spherical
//! displacements, and a duration. Kinematics are extracted from simulated
//! particle trajectories, or drawn by a user as a shape plus strokes.
//!
//! Retrieval compares a query against every indexed effect. It aligns the
//! two kinematic halves over a grid of reorientations and scales, then
//! blends the semantic and kinematic scores with a user weight. On top of
//! retrieval sits an exploration loop. It alternates local rounds, which
//! find neighbours of the last pick, with directional rounds, which
//! extrapolate from the last two picks.
//!
//! ```
//! use kinetrail::corpus::{generate_synthetic_corpus, Family};
//! use kinetrail::effect::validate_effect;
//!
//! let defs = generate_synthetic_corpus(&Family::ALL, 12, 7);
//! assert_eq!(defs.len(), 12);
//! assert!(defs.iter().all(|d| validate_effect(d).is_empty()));
//! ```

pub mod config;
pub mod corpus;
pub mod effect;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod search;
pub mod semantics;
pub mod session;
pub mod simulator;

/// Version stamped into indexes and exports.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use corpus::{build_index, BuildOptions, CorpusIndex};
pub use effect::{EffectDefinition, EmitterSpec};
pub use kinematics::{EmissionShape, Kinematics, Trail, TrailStep};
pub use metrics::{kinematic_distance, MetricParams, StructuredRepresentation};
pub use search::{search_topk, RankedResult, SearchConfig, SearchConstraint, SearchIndex, Transformation};
pub use semantics::{EmbeddingProvider, HashEmbedder, LlmProvider, MockLlm, SemanticDescriptor};
pub use session::{Engine, ExplorationSession, IntentPayload, SessionEvent};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/distance.md")]
    mod distance {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/exploration.md")]
    mod exploration {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
