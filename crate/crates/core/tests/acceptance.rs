//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kinetrail::config::EngineConfig;
use kinetrail::corpus::{build_index, generate_synthetic_corpus, theme_consistency, BuildOptions, Family};
use kinetrail::effect::{
    DirectionMode, EffectDefinition, EmissionKind, EmitterSpec, TrajectoryKind,
};
use kinetrail::kinematics::{boundary_points, extract_kinematics, EmissionShape, Kinematics, Trail, TrailStep};
use kinetrail::metrics::{duration_factor, hausdorff, kinematic_distance, Evolution};
use kinetrail::search::{
    align_evolutions, alignment_objective, extrapolate, search_topk, SearchConfig, SearchConstraint,
    SearchIndex, DEFAULT_TOP_K,
};
use kinetrail::semantics::{HashEmbedder, MockLlm};
use kinetrail::session::{Engine, ExplorationSession, IntentPayload, Mode, SessionEvent};
use kinetrail::simulator::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_SIZE: usize = 839;
const CORPUS_SEED: u64 = 839;

type Outcome = Result<String, String>;

struct Fixture {
    defs: Vec<EffectDefinition>,
    index: Arc<SearchIndex>,
}

fn fixture() -> Fixture {
    let defs = generate_synthetic_corpus(&Family::ALL, CORPUS_SIZE, CORPUS_SEED);
    let embedder = HashEmbedder::new(256);
    let report = build_index(&defs, &embedder, &BuildOptions::default()).expect("index builds");
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let index = SearchIndex::new(report.index, SearchConfig::default()).expect("valid config");
    Fixture {
        defs,
        index: Arc::new(index),
    }
}

fn within(elapsed: Duration, limit_secs: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_secs {
        Ok(())
    } else {
        Err(format!("{what} took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64()))
    }
}

fn metric_axioms(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let reps: Vec<&Kinematics> = fx
        .index
        .corpus()
        .entries
        .values()
        .map(|e| &e.representation.kinematics)
        .collect();
    let params = *fx.index.params();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = 1000;
    for _ in 0..pairs {
        let a = reps[rng.gen_range(0..reps.len())];
        let b = reps[rng.gen_range(0..reps.len())];
        let ab = kinematic_distance(a, b, &params).map_err(|e| e.to_string())?;
        let ba = kinematic_distance(b, a, &params).map_err(|e| e.to_string())?;
        if ab.to_bits() != ba.to_bits() {
            return Err(format!("asymmetric: {ab} vs {ba}"));
        }
        if !(ab >= 0.0) {
            return Err(format!("negative or NaN distance {ab}"));
        }
        let aa = kinematic_distance(a, a, &params).map_err(|e| e.to_string())?;
        if aa > 1e-9 {
            return Err(format!("self distance {aa}"));
        }
    }
    within(start.elapsed(), 30.0, "axioms")?;
    Ok(format!("{pairs} pairs in {:.2}s", start.elapsed().as_secs_f64()))
}

fn brute_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d = |p: &[f64; 3], q: &[f64; 3]| {
        let (x, y, z) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
        (x * x + y * y + z * z).sqrt()
    };
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

fn random_shape(rng: &mut ChaCha8Rng) -> EmissionShape {
    let kind = [EmissionKind::Circle, EmissionKind::Cylinder, EmissionKind::Sphere][rng.gen_range(0..3)];
    let h = if kind == EmissionKind::Cylinder { rng.gen_range(0.1..3.0) } else { 0.0 };
    EmissionShape::new(kind, rng.gen_range(0.05..3.0), h)
}

fn hausdorff_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..100 {
        let m = rng.gen_range(8..=96);
        let a = boundary_points(&random_shape(&mut rng), m).map_err(|e| e.to_string())?;
        let b = boundary_points(&random_shape(&mut rng), m).map_err(|e| e.to_string())?;
        let mut pa = a.to_cartesian();
        let pb = b.to_cartesian();
        // shift one set so pairs are not always concentric
        let off = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        for p in &mut pa {
            for (c, o) in p.iter_mut().zip(off) {
                *c += o;
            }
        }
        let got = hausdorff(&pa, &pb).map_err(|e| e.to_string())?;
        let want = brute_hausdorff(&pa, &pb);
        if got.to_bits() != want.to_bits() {
            return Err(format!("pair {i}: {got} vs oracle {want}"));
        }
    }
    let s1 = boundary_points(&EmissionShape::new(EmissionKind::Sphere, 1.0, 0.0), 256).map_err(|e| e.to_string())?;
    let s2 = boundary_points(&EmissionShape::new(EmissionKind::Sphere, 2.0, 0.0), 256).map_err(|e| e.to_string())?;
    let h = hausdorff(&s1.to_cartesian(), &s2.to_cartesian()).map_err(|e| e.to_string())?;
    if (h - 1.0).abs() > 0.02 {
        return Err(format!("concentric spheres gave {h}"));
    }
    within(start.elapsed(), 10.0, "hausdorff")?;
    Ok(format!("100 pairs bit-identical, spheres {h:.4}"))
}

fn duration_factor_points() -> Outcome {
    let f = |a, b| duration_factor(a, b, 0.5).map_err(|e| e.to_string());
    if f(2.0, 1.0)? != 1.5 || f(1.0, 3.0)? != 3.0 {
        return Err(format!("f(2,1)={}, f(1,3)={}", f(2.0, 1.0)?, f(1.0, 3.0)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let d = rng.gen_range(0.01..100.0);
        let alpha = rng.gen_range(0.0..5.0);
        let v = duration_factor(d, d, alpha).map_err(|e| e.to_string())?;
        if v != 1.0 {
            return Err(format!("f({d},{d},{alpha}) = {v}"));
        }
    }
    Ok("f(2,1)=1.5, f(1,3)=3.0, f(d,d)=1".into())
}

fn bare_effect(kind: EmissionKind, radius: f64) -> EffectDefinition {
    EffectDefinition {
        id: "probe".into(),
        description: "probe".into(),
        theme: "probe".into(),
        emitter: EmitterSpec {
            emission_kind: kind,
            emission_radius: radius,
            emission_height: None,
            direction_mode: DirectionMode::Spherical,
            cone_axis_angle: None,
            speed: 1.0,
            trajectory: TrajectoryKind::Linear,
            curvature: None,
            spiral_rate: 0.0,
            particle_lifetime: 1.0,
            emission_window: 0.0,
            particle_size: 0.0,
            emission_rate: 100.0,
        },
        seed: 5,
    }
}

fn extraction_fidelity() -> Outcome {
    let start = Instant::now();
    let ring = bare_effect(EmissionKind::Circle, 0.5);
    let k = extract_kinematics(&simulate(&ring, 1024, 16).map_err(|e| e.to_string())?, 8)
        .map_err(|e| e.to_string())?;
    // equatorial growth of the boundary per step
    let mut worst_ring: f64 = 0.0;
    let mut r = 0.5;
    let mut theta = PI / 2.0;
    for s in &k.trail.steps {
        let before = r * theta.sin();
        r += s.delta_r;
        theta += s.delta_theta;
        let growth = r * theta.sin() - before;
        worst_ring = worst_ring.max((growth - 0.125).abs() / 0.125);
    }
    if worst_ring > 0.05 {
        return Err(format!("ring growth off by {:.2}%", 100.0 * worst_ring));
    }

    let mut column = bare_effect(EmissionKind::Circle, 0.05);
    column.emitter.direction_mode = DirectionMode::Conical;
    column.emitter.cone_axis_angle = Some(0.0);
    column.emitter.spiral_rate = TAU;
    let k = extract_kinematics(&simulate(&column, 1024, 16).map_err(|e| e.to_string())?, 8)
        .map_err(|e| e.to_string())?;
    let worst_col = k
        .trail
        .steps
        .iter()
        .map(|s| (s.delta_phi - FRAC_PI_4).abs() / FRAC_PI_4)
        .fold(0.0, f64::max);
    if worst_col > 0.05 {
        return Err(format!("spiral dphi off by {:.2}%", 100.0 * worst_col));
    }
    within(start.elapsed(), 5.0, "extraction")?;
    Ok(format!(
        "ring max err {:.3}%, spiral max err {:.3}%",
        100.0 * worst_ring,
        100.0 * worst_col
    ))
}

/// Random kinematics whose equator point keeps `r > 0` and `theta` inside
/// `(0, pi)`, where the spherical encoding of a path is unique.
fn random_kinematics(rng: &mut ChaCha8Rng) -> Kinematics {
    let shape = random_shape(rng);
    let (mut r, mut theta) = (shape.r, PI / 2.0);
    let steps = (0..8)
        .map(|_| {
            let dr = rng.gen_range(-0.4..0.6f64).max(0.05 - r);
            let dt = rng.gen_range(-0.3..0.3f64).clamp(0.05 - theta, PI - 0.05 - theta);
            r += dr;
            theta += dt;
            TrailStep::new(dr, dt, rng.gen_range(-1.0..1.0))
        })
        .collect();
    Kinematics {
        shape,
        trail: Trail { steps },
        duration: rng.gen_range(0.2..6.0),
    }
}

fn close_kinematics(a: &Kinematics, b: &Kinematics) -> Result<(), String> {
    let mut pairs = vec![(a.shape.r, b.shape.r), (a.shape.h, b.shape.h), (a.duration, b.duration)];
    for (x, y) in a.trail.steps.iter().zip(&b.trail.steps) {
        pairs.extend([(x.delta_r, y.delta_r), (x.delta_theta, y.delta_theta), (x.delta_phi, y.delta_phi)]);
    }
    if a.shape.kind != b.shape.kind || a.trail.len() != b.trail.len() {
        return Err("shape kind or step count differs".into());
    }
    match pairs.iter().find(|(x, y)| (x - y).abs() > 1e-9) {
        Some((x, y)) => Err(format!("{x} vs {y}")),
        None => Ok(()),
    }
}

fn extrapolation_boundaries() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let a = random_kinematics(&mut rng);
        let b = random_kinematics(&mut rng);
        let at0 = extrapolate(&a, &b, 0.0).map_err(|e| e.to_string())?;
        let at1 = extrapolate(&a, &b, 1.0).map_err(|e| e.to_string())?;
        close_kinematics(&at0, &a).map_err(|e| format!("pair {i}, c=0: {e}"))?;
        close_kinematics(&at1, &b).map_err(|e| format!("pair {i}, c=1: {e}"))?;
    }
    Ok("100 pairs reproduce both endpoints".into())
}

fn self_retrieval(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let none = HashSet::new();
    let mut queries = 0;
    for w in [0.0, 0.5, 1.0] {
        for (id, entry) in &fx.index.corpus().entries {
            let c = SearchConstraint::from_representation(&entry.representation, w).map_err(|e| e.to_string())?;
            let top = search_topk(&c, &fx.index, DEFAULT_TOP_K, &none).map_err(|e| e.to_string())?;
            if top.first().map(|r| r.effect_id.as_str()) != Some(id.as_str()) {
                return Err(format!("w={w}: {id} ranked {:?} first", top.first().map(|r| &r.effect_id)));
            }
            queries += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    within(start.elapsed(), 120.0, "self-retrieval sweep")?;
    Ok(format!(
        "{queries} queries, all self-first, {secs:.1}s on {} thread(s)",
        rayon::current_num_threads()
    ))
}

fn alignment_recovery(fx: &Fixture) -> Outcome {
    let params = *fx.index.params();
    let config = fx.index.config();
    let grid = config.grid.points();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let entries: Vec<_> = fx.index.corpus().entries.values().collect();
    let (mut exact, mut geometric) = (0, 0);
    for i in 0..100 {
        let e = entries[rng.gen_range(0..entries.len())];
        let t = grid[rng.gen_range(0..grid.len())];
        let original = Evolution::new(&e.representation.kinematics, params.m_boundary).map_err(|e| e.to_string())?;
        let moved = original.transformed(&t);
        let (found, objective) = align_evolutions(&original, &moved, &params, config);
        let truth = config.grid.nearest(&t.inverse());
        let at_truth = alignment_objective(&original, &moved, &truth, &params, config);
        if objective > at_truth {
            return Err(format!("case {i}: aligned {objective} ({found}) above inverse {at_truth} ({truth})"));
        }
        if found == truth {
            exact += 1;
        }
        if found.axis_reorientation == truth.axis_reorientation && found.scale == truth.scale {
            geometric += 1;
        }
    }
    // with a zero trail distance the duration scale only meets the regularizer
    Ok(format!(
        "100 cases optimal; orientation and scale recovered in {geometric}, duration scale too in {exact}"
    ))
}

fn shipped_defaults() -> Outcome {
    let c = EngineConfig::default();
    let index_steps = kinetrail::corpus::IndexParams::default().trail_steps;
    if c.trail_steps != 8 || index_steps != 8 || kinetrail::kinematics::DEFAULT_TRAIL_STEPS != 8 {
        return Err(format!("trail steps {} / {index_steps}", c.trail_steps));
    }
    if c.search.top_k != 4 || DEFAULT_TOP_K != 4 {
        return Err(format!("top_k {}", c.search.top_k));
    }
    Ok("N = 8, K = 4".into())
}

fn session_replay(fx: &Fixture) -> Outcome {
    let engine = Engine {
        index: fx.index.clone(),
        llm: Arc::new(MockLlm::new()),
        embedder: Arc::new(HashEmbedder::new(256)),
    };
    let intent = IntentPayload {
        text: Some("a bright blue ring of sparks spreading outward".into()),
        ..Default::default()
    };
    let mut session = ExplorationSession::create("s", intent, &engine).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    while session.rounds.len() < 6 {
        let round = session.current_round();
        let pick = round.candidates[rng.gen_range(0..round.candidates.len())].effect_id.clone();
        let weight = (session.rounds.len() == 3).then_some(0.7);
        session.select(&pick, weight, &engine).map_err(|e| e.to_string())?;
    }
    let log = serde_json::to_string(&session.events).map_err(|e| e.to_string())?;
    let events: Vec<SessionEvent> = serde_json::from_str(&log).map_err(|e| e.to_string())?;
    let replayed = ExplorationSession::replay("s", &events, &engine).map_err(|e| e.to_string())?;
    let bytes = |s: &ExplorationSession| {
        s.rounds
            .iter()
            .map(|r| serde_json::to_string(&r.candidates).unwrap_or_default())
            .collect::<Vec<_>>()
    };
    if bytes(&session) != bytes(&replayed) {
        return Err("replayed candidate lists differ".into());
    }
    use Mode::*;
    let want = vec![Local, Local, Directional, Local, Directional, Local];
    if replayed.modes() != want {
        return Err(format!("modes {:?}", replayed.modes()));
    }
    Ok("6 rounds byte-identical, modes L L D L D L".into())
}

fn generator_sanity(fx: &Fixture) -> Outcome {
    let g = theme_consistency(&fx.defs).map_err(|e| e.to_string())?;
    let (w, b) = (g.within, g.between);
    let ok = w.duration < b.duration && w.shape < b.shape && w.trail < b.trail;
    let detail = format!(
        "within/between duration {:.3}/{:.3}, shape {:.3}/{:.3}, trail {:.3}/{:.3}",
        w.duration, b.duration, w.shape, b.shape, w.trail, b.trail
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn query_latency(fx: &Fixture) -> Outcome {
    let none = HashSet::new();
    let entries: Vec<_> = fx.index.corpus().entries.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut times = Vec::new();
    for _ in 0..21 {
        // perturbed corpus kinematics so the query is not an indexed effect
        let e = entries[rng.gen_range(0..entries.len())];
        let mut k = e.representation.kinematics.clone();
        k.duration *= rng.gen_range(0.7..1.4);
        k.shape.r *= rng.gen_range(0.7..1.4);
        for s in &mut k.trail.steps {
            s.delta_r *= rng.gen_range(0.8..1.2);
        }
        let c = SearchConstraint::new(Some(e.representation.semantic.clone()), Some(k), Some(0.5))
            .map_err(|e| e.to_string())?;
        let start = Instant::now();
        search_topk(&c, &fx.index, DEFAULT_TOP_K, &none).map_err(|e| e.to_string())?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    if median < 1.0 {
        Ok(format!("median {:.1} ms, max {:.1} ms", 1e3 * median, 1e3 * times[times.len() - 1]))
    } else {
        Err(format!("median {median:.3}s"))
    }
}

fn main() {
    let build = Instant::now();
    let fx = fixture();
    println!(
        "fixture: {} effects indexed in {:.1}s, sigma {:.4}",
        fx.index.len(),
        build.elapsed().as_secs_f64(),
        fx.index.params().sigma
    );
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 metric axioms", Box::new(|| metric_axioms(&fx))),
        ("2 hausdorff oracle", Box::new(hausdorff_oracle)),
        ("3 duration factor", Box::new(duration_factor_points)),
        ("4 extraction fidelity", Box::new(extraction_fidelity)),
        ("5 extrapolation boundaries", Box::new(extrapolation_boundaries)),
        ("6 self-retrieval", Box::new(|| self_retrieval(&fx))),
        ("7 alignment recovery", Box::new(|| alignment_recovery(&fx))),
        ("8 shipped defaults", Box::new(shipped_defaults)),
        ("9 session replay", Box::new(|| session_replay(&fx))),
        ("10 generator sanity", Box::new(|| generator_sanity(&fx))),
        ("11 query latency", Box::new(|| query_latency(&fx))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
