//! The exploration loop: intent, alternating local and directional rounds,
//! and the artwork assembled from what was found.
//!
//! Round 1 searches from the user's intent and round 2 from the first
//! selection. From then on rounds alternate directional (along the last two
//! selections) and local (around the last selection). No effect is shown
//! twice in one session. A session is a pure function of its event log and
//! the engine it runs against, so replaying the log reproduces it exactly.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effect::{ArtworkComposition, ArtworkExport, ArtworkItem, Placement, Violation};
use crate::kinematics::{kinematics_from_graphical_input, GraphicalIntent, Kinematics};
use crate::search::{
    directional_explore, local_explore, search_topk, RankedResult, SearchConstraint, SearchError,
    SearchIndex, Transformation, DEFAULT_WEIGHT,
};
use crate::semantics::{EmbeddingProvider, LlmProvider, SemanticDescriptor, SemanticsError};
use crate::simulator::{downsample, simulate, SimulationError, TrajectorySample};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("unknown effect {0:?}")]
    NotFound(String),
    #[error("effect {0:?} was not presented in the current round")]
    InvalidSelection(String),
    #[error("event log must start with a create event")]
    BadLog,
    #[error("artwork is invalid")]
    InvalidArtwork(Vec<Violation>),
    #[error(transparent)]
    Search(SearchError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

fn validation(field: &str, message: impl Into<String>) -> SessionError {
    SessionError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

impl From<SearchError> for SessionError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::NotFound(id) => SessionError::NotFound(id),
            SearchError::EmptyConstraint => validation("intent", "needs text or graphical input"),
            SearchError::BadWeight(m) => validation("weight", m),
            other => SessionError::Search(other),
        }
    }
}

/// Shared, read-only services a session runs against.
#[derive(Clone)]
pub struct Engine {
    pub index: Arc<SearchIndex>,
    pub llm: Arc<dyn LlmProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("entries", &self.index.len()).finish()
    }
}

/// What the user asked for before exploring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentPayload {
    #[serde(default)]
    pub text: Option<String>,
    /// Shape control, trail strokes and duration slider.
    #[serde(default)]
    pub graphical: Option<GraphicalIntent>,
    /// Kinematics given directly instead of graphically.
    #[serde(default)]
    pub kinematics: Option<Kinematics>,
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionEvent {
    Create {
        intent: IntentPayload,
    },
    Select {
        effect_id: String,
        #[serde(default)]
        weight: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Local,
    Directional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub mode: Mode,
    pub weight: f64,
    pub candidates: Vec<RankedResult>,
    pub selected: Option<String>,
}

impl Round {
    pub fn presented(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.effect_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSession {
    pub id: String,
    pub intent: SearchConstraint,
    pub intent_text: Option<String>,
    pub rounds: Vec<Round>,
    pub presented_all: BTreeSet<String>,
    /// Weight used by the next round unless a selection overrides it.
    pub weight: f64,
    pub events: Vec<SessionEvent>,
}

/// Mode of 1-based round `n`: local, local, then directional and local in
/// turn.
pub fn mode_for_round(n: usize) -> Mode {
    if n >= 3 && n % 2 == 1 {
        Mode::Directional
    } else {
        Mode::Local
    }
}

/// Turns an intent payload into a search constraint.
pub fn constraint_from_intent(
    intent: &IntentPayload,
    engine: &Engine,
) -> Result<SearchConstraint, SessionError> {
    let semantic = match intent.text.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(text) => Some(
            SemanticDescriptor::from_user_text(text, engine.llm.as_ref(), engine.embedder.as_ref())
                .map_err(|e: SemanticsError| validation("text", e.to_string()))?,
        ),
    };
    let steps = engine.index.corpus().params.trail_steps;
    let kinematics = match (&intent.graphical, &intent.kinematics) {
        (Some(_), Some(_)) => {
            return Err(validation("graphical", "give graphical input or kinematics, not both"))
        }
        (Some(g), None) => Some(kinematics_from_graphical_input(g, steps).map_err(|e| match e {
            crate::kinematics::KinematicsError::Input { field, message } => {
                validation(&format!("graphical.{field}"), message)
            }
            other => validation("graphical", other.to_string()),
        })?),
        (None, Some(k)) => {
            k.check().map_err(|e| validation("kinematics", e.to_string()))?;
            Some(k.clone())
        }
        (None, None) => None,
    };
    Ok(SearchConstraint::new(semantic, kinematics, intent.weight)?)
}

fn check_weight(w: f64) -> Result<f64, SessionError> {
    if w.is_finite() && (0.0..=1.0).contains(&w) {
        Ok(w)
    } else {
        Err(validation("weight", format!("must lie in [0, 1], got {w}")))
    }
}

impl ExplorationSession {
    /// Starts a session and runs round 1.
    pub fn create(id: impl Into<String>, intent: IntentPayload, engine: &Engine) -> Result<Self, SessionError> {
        let constraint = constraint_from_intent(&intent, engine)?;
        let k = engine.index.config().top_k;
        let candidates = search_topk(&constraint, &engine.index, k, &Default::default())?;
        let both = constraint.semantic.is_some() && constraint.kinematics.is_some();
        let weight = if both { constraint.weight } else { DEFAULT_WEIGHT };
        let mut session = Self {
            id: id.into(),
            intent_text: intent.text.clone(),
            intent: constraint.clone(),
            rounds: Vec::new(),
            presented_all: BTreeSet::new(),
            weight,
            events: vec![SessionEvent::Create { intent }],
        };
        session.push_round(Mode::Local, constraint.weight, candidates);
        Ok(session)
    }

    fn push_round(&mut self, mode: Mode, weight: f64, candidates: Vec<RankedResult>) {
        self.presented_all
            .extend(candidates.iter().map(|c| c.effect_id.clone()));
        self.rounds.push(Round {
            mode,
            weight,
            candidates,
            selected: None,
        });
    }

    pub fn current_round(&self) -> &Round {
        // a session always has its first round
        &self.rounds[self.rounds.len() - 1]
    }

    pub fn selections(&self) -> Vec<&str> {
        self.rounds.iter().filter_map(|r| r.selected.as_deref()).collect()
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.rounds.iter().map(|r| r.mode).collect()
    }

    /// Records a selection from the current round and runs the next round.
    /// On error the session is left unchanged.
    pub fn select(
        &mut self,
        effect_id: &str,
        weight: Option<f64>,
        engine: &Engine,
    ) -> Result<&Round, SessionError> {
        if !self.current_round().presented().any(|p| p == effect_id) {
            return Err(SessionError::InvalidSelection(effect_id.to_string()));
        }
        let w = check_weight(weight.unwrap_or(self.weight))?;
        let exclude: HashSet<String> = self.presented_all.iter().cloned().collect();
        let next = self.rounds.len() + 1;
        let mode = mode_for_round(next);
        let candidates = match mode {
            Mode::Local => local_explore(effect_id, &engine.index, w, &exclude)?,
            Mode::Directional => {
                let prev = self
                    .selections()
                    .last()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| effect_id.to_string());
                directional_explore(
                    &prev,
                    effect_id,
                    self.intent_text.as_deref().unwrap_or(""),
                    &engine.index,
                    engine.llm.as_ref(),
                    engine.embedder.as_ref(),
                    w,
                    &exclude,
                )?
            }
        };
        let last = self.rounds.len() - 1;
        self.rounds[last].selected = Some(effect_id.to_string());
        self.weight = w;
        self.events.push(SessionEvent::Select {
            effect_id: effect_id.to_string(),
            weight,
        });
        self.push_round(mode, w, candidates);
        Ok(self.current_round())
    }

    /// Rebuilds a session from its event log.
    pub fn replay(id: impl Into<String>, events: &[SessionEvent], engine: &Engine) -> Result<Self, SessionError> {
        let Some((SessionEvent::Create { intent }, rest)) = events.split_first() else {
            return Err(SessionError::BadLog);
        };
        let mut session = Self::create(id, intent.clone(), engine)?;
        for e in rest {
            match e {
                SessionEvent::Select { effect_id, weight } => {
                    session.select(effect_id, *weight, engine)?;
                }
                SessionEvent::Create { .. } => return Err(SessionError::BadLog),
            }
        }
        Ok(session)
    }

    /// Placement suggested for an effect: the transformation that aligned
    /// it with the query of the latest round that showed it.
    pub fn default_placement(&self, effect_id: &str) -> Placement {
        let transformation = self
            .rounds
            .iter()
            .rev()
            .flat_map(|r| r.candidates.iter())
            .find(|c| c.effect_id == effect_id)
            .map(|c| c.best_transformation)
            .unwrap_or_else(Transformation::identity);
        Placement {
            translation: [0.0; 3],
            transformation,
        }
    }
}

/// One artwork item as submitted; a missing placement is filled in from
/// the session's retrieval results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkItemRequest {
    pub effect_id: String,
    #[serde(default)]
    pub placement: Option<Placement>,
    #[serde(default)]
    pub start_delay: f64,
    #[serde(default = "one")]
    pub playback_speed: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkRequest {
    pub name: String,
    #[serde(default)]
    pub session_id: Option<String>,
    pub items: Vec<ArtworkItemRequest>,
}

/// Validates an artwork against the corpus and builds its export document.
pub fn compose(
    request: &ArtworkRequest,
    session: Option<&ExplorationSession>,
    index: &SearchIndex,
) -> Result<ArtworkExport, SessionError> {
    let items = request
        .items
        .iter()
        .map(|item| ArtworkItem {
            effect_id: item.effect_id.clone(),
            placement: item.placement.clone().unwrap_or_else(|| {
                session.map_or_else(Placement::default, |s| s.default_placement(&item.effect_id))
            }),
            start_delay: item.start_delay,
            playback_speed: item.playback_speed,
        })
        .collect();
    let artwork = ArtworkComposition {
        name: request.name.clone(),
        items,
    };
    let violations = artwork.validate(|id| {
        index.representation(id).is_some()
            || session.is_some_and(|s| s.presented_all.contains(id))
    });
    if !violations.is_empty() {
        return Err(SessionError::InvalidArtwork(violations));
    }
    Ok(ArtworkExport::new(artwork))
}

/// Simulated trajectories of a corpus effect, thinned to at most
/// `max_particles` particles.
pub fn preview_trajectories(
    index: &SearchIndex,
    effect_id: &str,
    max_particles: usize,
) -> Result<Vec<TrajectorySample>, SessionError> {
    let entry = index
        .corpus()
        .entries
        .get(effect_id)
        .ok_or_else(|| SessionError::NotFound(effect_id.to_string()))?;
    let params = &index.corpus().params;
    let samples = simulate(&entry.definition, params.particle_count, params.samples_per_lifetime)?;
    Ok(downsample(&samples, max_particles))
}
