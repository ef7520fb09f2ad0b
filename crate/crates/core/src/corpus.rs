//! Corpus files, the synthetic corpus generator, and the offline index.
//!
//! A corpus file holds one [`EffectDefinition`] per line as JSON. Building
//! an index simulates every effect, extracts its kinematics, embeds its
//! description, and fixes the similarity scale `sigma` as the median
//! pairwise kinematic distance. The index is a single JSON document whose
//! bytes depend only on its inputs.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::effect::{
    classify_emission_shape, validate_effect, DirectionMode, EffectDefinition, EmissionKind,
    EmitterSpec, TrajectoryKind,
};
use crate::kinematics::{extract_kinematics, DEFAULT_TRAIL_STEPS};
use crate::metrics::{
    evolution_distance, pair_consistency, ConsistencyDistances, ConsistencyItem, Evolution,
    MetricParams, StructuredRepresentation,
};
use crate::semantics::{embed_all, EmbeddingProvider, HashEmbedder, SemanticDescriptor};
use crate::simulator::{simulate, DEFAULT_PARTICLE_COUNT, DEFAULT_SAMPLES_PER_LIFETIME};

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Pairs sampled when estimating sigma on large corpora.
pub const SIGMA_SAMPLE_PAIRS: usize = 10_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    Empty,
    #[error("duplicate effect id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("every effect failed to index")]
    NothingIndexed(Vec<EntryFailure>),
    #[error("index format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("{0}")]
    BadParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Reads a corpus file: one JSON definition per nonblank line.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<EffectDefinition>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let def = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(def);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(defs: &[EffectDefinition], mut out: W) -> Result<(), CorpusError> {
    for def in defs {
        serde_json::to_writer(&mut out, def)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Effect families produced by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ExpandingRing,
    RisingColumn,
    SphericalBurst,
    Spiral,
    GroundCircle,
    Cone,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::ExpandingRing,
        Family::RisingColumn,
        Family::SphericalBurst,
        Family::Spiral,
        Family::GroundCircle,
        Family::Cone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ExpandingRing => "expanding_ring",
            Family::RisingColumn => "rising_column",
            Family::SphericalBurst => "spherical_burst",
            Family::Spiral => "spiral",
            Family::GroundCircle => "ground_circle",
            Family::Cone => "cone",
        }
    }

    fn nouns(self) -> &'static [&'static str] {
        match self {
            Family::ExpandingRing => &["ring", "shockwave", "halo", "pulse"],
            Family::RisingColumn => &["column", "pillar", "beam", "fountain"],
            Family::SphericalBurst => &["burst", "explosion", "blast", "nova"],
            Family::Spiral => &["spiral", "vortex", "swirl", "helix"],
            Family::GroundCircle => &["aura", "rune circle", "floor glow", "ground circle"],
            Family::Cone => &["cone", "spray", "jet", "plume"],
        }
    }

    fn motions(self) -> &'static [&'static str] {
        match self {
            Family::ExpandingRing => &["expanding outward", "spreading wide", "rippling out"],
            Family::RisingColumn => &["rising upward", "climbing high", "streaming up"],
            Family::SphericalBurst => &["bursting everywhere", "exploding outward", "scattering around"],
            Family::Spiral => &["twisting upward", "spinning skyward", "coiling up"],
            Family::GroundCircle => &["drifting slowly", "creeping along the floor", "hovering low"],
            Family::Cone => &["fanning upward", "spraying up", "jetting out"],
        }
    }

    /// Samples an emitter. Shape class, direction mode and trajectory kind
    /// are fixed per family; durations fall in disjoint family bands.
    fn emitter(self, rng: &mut ChaCha8Rng) -> EmitterSpec {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let base = |kind, radius, direction_mode, speed, trajectory| EmitterSpec {
            emission_kind: kind,
            emission_radius: radius,
            emission_height: None,
            direction_mode,
            cone_axis_angle: None,
            speed,
            trajectory,
            curvature: None,
            spiral_rate: 0.0,
            particle_lifetime: 1.0,
            emission_window: 0.0,
            particle_size: 0.05,
            emission_rate: 50.0,
        };
        let mut e = match self {
            Family::ExpandingRing => {
                let mut e = base(EmissionKind::Circle, u(0.3, 1.5), DirectionMode::Spherical, u(0.5, 3.0), TrajectoryKind::Linear);
                e.particle_lifetime = u(0.8, 1.3);
                e.emission_window = u(0.1, 0.3);
                e
            }
            Family::RisingColumn => {
                let mut e = base(EmissionKind::Cylinder, u(0.15, 0.6), DirectionMode::Conical, u(1.0, 4.0), TrajectoryKind::Linear);
                e.emission_height = Some(u(0.5, 2.0));
                e.cone_axis_angle = Some(0.0);
                e.spiral_rate = u(0.0, 0.5);
                e.particle_lifetime = u(2.5, 3.2);
                e.emission_window = u(1.0, 1.4);
                e
            }
            Family::SphericalBurst => {
                let mut e = base(EmissionKind::Sphere, u(0.1, 0.5), DirectionMode::Spherical, u(2.0, 6.0), TrajectoryKind::Curved);
                e.curvature = Some(u(0.2, 1.0));
                e.particle_lifetime = u(0.3, 0.7);
                e.emission_window = u(0.0, 0.1);
                e
            }
            Family::Spiral => {
                let mut e = base(EmissionKind::Circle, u(0.02, 0.08), DirectionMode::Conical, u(0.5, 2.0), TrajectoryKind::Linear);
                e.cone_axis_angle = Some(u(0.05, 0.3));
                e.spiral_rate = u(PI, 4.0 * PI);
                e.particle_lifetime = u(2.0, 3.0);
                e.emission_window = u(2.7, 3.0);
                e
            }
            Family::GroundCircle => {
                let mut e = base(EmissionKind::Circle, u(0.8, 2.0), DirectionMode::Conical, u(0.1, 0.5), TrajectoryKind::Curved);
                e.cone_axis_angle = Some(u(1.2, 1.5));
                e.curvature = Some(u(0.3, 1.0));
                e.spiral_rate = u(0.2, 1.0);
                e.particle_lifetime = u(2.0, 2.6);
                e.emission_window = u(0.5, 0.8);
                e
            }
            Family::Cone => {
                let mut e = base(EmissionKind::Circle, u(0.1, 0.4), DirectionMode::Conical, u(1.0, 3.0), TrajectoryKind::Linear);
                e.cone_axis_angle = Some(u(0.3, 0.8));
                e.particle_lifetime = u(1.4, 1.8);
                e.emission_window = u(0.3, 0.6);
                e
            }
        };
        e.particle_size = u(0.02, 0.08);
        e.emission_rate = u(20.0, 200.0);
        e
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family {s:?}"))
    }
}

const ADJECTIVES: &[&str] = &[
    "bright", "soft", "glowing", "fiery", "icy", "magic", "electric", "smoky", "sparkling",
    "gentle", "fierce", "ghostly", "golden", "shimmering", "dark", "radiant", "misty",
    "crackling", "faint", "vivid", "wild", "calm", "arcane", "toxic", "frosty", "blazing",
    "dreamy", "stormy", "royal", "celestial",
];

const COLORS: &[&str] = &[
    "red", "blue", "green", "purple", "orange", "white", "pink", "cyan", "yellow", "teal",
    "silver", "crimson", "violet", "amber", "emerald",
];

/// Generates `size` effects spread round-robin over `families`.
///
/// Parameters and descriptions are drawn from one seeded stream, so equal
/// inputs give equal corpora. Descriptions are unique, and no two effects
/// get the same mock embedding.
pub fn generate_synthetic_corpus(families: &[Family], size: usize, seed: u64) -> Vec<EffectDefinition> {
    if families.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedder = HashEmbedder::default();
    let mut seen_embeddings: HashSet<Vec<u64>> = HashSet::new();
    let mut counters = vec![0usize; families.len()];
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let slot = i % families.len();
        let family = families[slot];
        counters[slot] += 1;
        let emitter = family.emitter(&mut rng);
        let theme = family.name().to_string();
        let mut description = String::new();
        for attempt in 0..64 {
            let adj: Vec<&str> = ADJECTIVES.choose_multiple(&mut rng, 2).copied().collect();
            let color = COLORS.choose(&mut rng).copied().unwrap_or("white");
            let noun = family.nouns().choose(&mut rng).copied().unwrap_or("effect");
            let motion = family.motions().choose(&mut rng).copied().unwrap_or("moving");
            description = format!("{} {} {color} {noun} {motion}", adj[0], adj[1]);
            if attempt == 63 {
                description = format!("{description} variant {}", counters[slot]);
            }
            let key = embedding_key(&embedder, &description, &theme);
            if seen_embeddings.insert(key) {
                break;
            }
        }
        out.push(EffectDefinition {
            id: format!("{}-{:04}", family.name(), counters[slot]),
            description,
            theme,
            emitter,
            seed: rng.gen(),
        });
    }
    out
}

fn embedding_key(embedder: &HashEmbedder, description: &str, theme: &str) -> Vec<u64> {
    use crate::semantics::EmbeddingProvider as _;
    embedder
        .embed(&format!("{description}\n{theme}"))
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .unwrap_or_default()
}

/// How sigma is chosen at build time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Median pairwise kinematic distance (1.0 if that is zero).
    Auto,
    Fixed(f64),
}

/// Everything that shapes an index besides the definitions themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexParams {
    pub metric: MetricParams,
    pub trail_steps: usize,
    pub particle_count: usize,
    pub samples_per_lifetime: usize,
    pub embedding_dim: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            metric: MetricParams::default(),
            trail_steps: DEFAULT_TRAIL_STEPS,
            particle_count: DEFAULT_PARTICLE_COUNT,
            samples_per_lifetime: DEFAULT_SAMPLES_PER_LIFETIME,
            embedding_dim: crate::semantics::MOCK_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub params: IndexParams,
    pub sigma: SigmaMode,
    /// Seed for the pair sample used by [`SigmaMode::Auto`].
    pub sigma_seed: u64,
    /// Upper bound on concurrent embedding requests.
    pub max_in_flight: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            params: IndexParams::default(),
            sigma: SigmaMode::Auto,
            sigma_seed: 0,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub definition: EffectDefinition,
    pub representation: StructuredRepresentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusIndex {
    pub format_version: u32,
    pub engine_version: String,
    /// SHA-256 of the canonical JSON of `params`.
    pub params_hash: String,
    pub sigma: f64,
    pub params: IndexParams,
    pub entries: BTreeMap<String, IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug)]
pub struct BuildReport {
    pub index: CorpusIndex,
    pub failures: Vec<EntryFailure>,
}

pub fn params_hash(params: &IndexParams) -> String {
    // serializing plain numbers and enums cannot fail
    let json = serde_json::to_vec(params).unwrap_or_default();
    hex::encode(Sha256::digest(&json))
}

/// Builds an index. Definitions that fail validation, simulation,
/// extraction or embedding are reported and left out; the build fails
/// only on empty input, duplicate ids, or when nothing survives.
pub fn build_index(
    defs: &[EffectDefinition],
    embedder: &dyn EmbeddingProvider,
    options: &BuildOptions,
) -> Result<BuildReport, CorpusError> {
    if defs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut ids = HashSet::new();
    for d in defs {
        if !ids.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateId(d.id.clone()));
        }
    }
    let params = options.params;
    params
        .metric
        .check()
        .map_err(|e| CorpusError::BadParameter(e.to_string()))?;
    if params.trail_steps == 0 {
        return Err(CorpusError::BadParameter("trail_steps must be >= 1".into()));
    }
    if let SigmaMode::Fixed(s) = options.sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(CorpusError::BadParameter("sigma must be > 0".into()));
        }
    }

    let kinematics: Vec<Result<_, String>> = defs
        .par_iter()
        .map(|d| {
            let violations = validate_effect(d);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                return Err(list.join("; "));
            }
            let samples = simulate(d, params.particle_count, params.samples_per_lifetime)
                .map_err(|e| e.to_string())?;
            extract_kinematics(&samples, params.trail_steps).map_err(|e| e.to_string())
        })
        .collect();
    let texts: Vec<String> = defs
        .iter()
        .map(|d| format!("{}\n{}", d.description, d.theme))
        .collect();
    let embeddings = embed_all(&texts, embedder, options.max_in_flight);

    let mut entries = BTreeMap::new();
    let mut failures = Vec::new();
    for ((def, kin), (text, emb)) in defs.iter().zip(kinematics).zip(texts.into_iter().zip(embeddings)) {
        let fail = |error: String| EntryFailure {
            id: def.id.clone(),
            error,
        };
        let kin = match kin {
            Ok(k) => k,
            Err(e) => {
                failures.push(fail(e));
                continue;
            }
        };
        let embedding = match emb {
            Ok(v) if v.len() == params.embedding_dim => v,
            Ok(v) => {
                failures.push(fail(format!(
                    "embedding has dimension {}, expected {}",
                    v.len(),
                    params.embedding_dim
                )));
                continue;
            }
            Err(e) => {
                failures.push(fail(e.to_string()));
                continue;
            }
        };
        let semantic = SemanticDescriptor {
            normalized_text: crate::semantics::whitespace_normalize(&text),
            raw_text: text,
            embedding,
        };
        entries.insert(
            def.id.clone(),
            IndexEntry {
                definition: def.clone(),
                representation: StructuredRepresentation {
                    semantic,
                    kinematics: kin,
                },
            },
        );
    }
    if entries.is_empty() {
        return Err(CorpusError::NothingIndexed(failures));
    }

    let sigma = match options.sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Auto => median_pairwise_distance(&entries, &params.metric, options.sigma_seed)
            .map_err(|e| CorpusError::BadParameter(e.to_string()))?,
    };
    let mut metric = params.metric;
    metric.sigma = sigma;
    let params = IndexParams { metric, ..params };
    Ok(BuildReport {
        index: CorpusIndex {
            format_version: INDEX_FORMAT_VERSION,
            engine_version: crate::ENGINE_VERSION.to_string(),
            params_hash: params_hash(&params),
            sigma,
            params,
            entries,
        },
        failures,
    })
}

/// Median kinematic distance over all pairs, or over a seeded sample of
/// [`SIGMA_SAMPLE_PAIRS`] pairs on larger corpora. Falls back to 1.0 when
/// the median is zero or there are fewer than two entries.
fn median_pairwise_distance(
    entries: &BTreeMap<String, IndexEntry>,
    metric: &MetricParams,
    seed: u64,
) -> Result<f64, crate::metrics::MetricError> {
    let n = entries.len();
    if n < 2 {
        return Ok(1.0);
    }
    let evolutions: Vec<Evolution> = entries
        .values()
        .map(|e| Evolution::new(&e.representation.kinematics, metric.m_boundary))
        .collect::<Result<_, _>>()?;
    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= SIGMA_SAMPLE_PAIRS {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..SIGMA_SAMPLE_PAIRS)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let j = (i + rng.gen_range(1..n)) % n;
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let mut d: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| evolution_distance(&evolutions[i], &evolutions[j], metric))
        .collect();
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    Ok(if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    })
}

impl CorpusIndex {
    pub fn to_json(&self) -> Result<String, CorpusError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(json)?;
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(CorpusError::UnsupportedVersion(header.format_version));
        }
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut json = self.to_json()?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn consistency_item(def: &EffectDefinition) -> ConsistencyItem {
    ConsistencyItem {
        duration: def.emitter.total_duration(),
        shape: classify_emission_shape(def),
        direction: def.emitter.direction_mode,
        trajectory: def.emitter.trajectory,
    }
}

/// Pooled mean consistency distances over pairs inside a group and over
/// pairs across groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupConsistency {
    pub within: ConsistencyDistances,
    pub between: ConsistencyDistances,
    pub within_pairs: usize,
    pub between_pairs: usize,
}

/// Consistency statistics with effects grouped by theme.
pub fn theme_consistency(defs: &[EffectDefinition]) -> Result<GroupConsistency, CorpusError> {
    let items: Vec<(&str, ConsistencyItem)> = defs
        .iter()
        .map(|d| (d.theme.as_str(), consistency_item(d)))
        .collect();
    let mut within = [0.0; 3];
    let mut between = [0.0; 3];
    let (mut nw, mut nb) = (0usize, 0usize);
    for (i, (ga, a)) in items.iter().enumerate() {
        for (gb, b) in &items[i + 1..] {
            let d = pair_consistency(a, b);
            let (acc, n) = if ga == gb {
                (&mut within, &mut nw)
            } else {
                (&mut between, &mut nb)
            };
            acc[0] += d.duration;
            acc[1] += d.shape;
            acc[2] += d.trail;
            *n += 1;
        }
    }
    if nw == 0 || nb == 0 {
        return Err(CorpusError::BadParameter(
            "need at least two groups and a group with two effects".into(),
        ));
    }
    let mean = |acc: [f64; 3], n: usize| ConsistencyDistances {
        duration: acc[0] / n as f64,
        shape: acc[1] / n as f64,
        trail: acc[2] / n as f64,
    };
    Ok(GroupConsistency {
        within: mean(within, nw),
        between: mean(between, nb),
        within_pairs: nw,
        between_pairs: nb,
    })
}
