use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{OptimiseError, OptimiserResult, TrajectorySample};
use crate::evaluation::{check_all, is_feasible, Objective, Platform};
use crate::hdgraph::{
    folding_domains, propagate_matching, resource_minimal_init, DesignPoint, FoldVar, HdGraph,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingConfig {
    pub k_start: f64,
    pub k_min: f64,
    /// Temperature multiplier applied after every cooling iteration.
    pub cooling_rate: f64,
    pub seed: u64,
    /// Iterations run at `k_min` once cooling has finished.
    pub min_temp_iterations: u64,
    /// Optional wall-clock budget for the run; the minimum-temperature phase
    /// continues until it is spent. Runs using it are not reproducible.
    pub time_budget_s: Option<f64>,
    /// Objectives are compared as `energy_scale * O / |O(initial)|`, so the
    /// temperature range is independent of the objective's units.
    pub energy_scale: f64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        AnnealingConfig {
            k_start: 1000.0,
            k_min: 1.0,
            cooling_rate: 0.98,
            seed: 0,
            min_temp_iterations: 2000,
            time_budget_s: None,
            energy_scale: 1000.0,
        }
    }
}

impl AnnealingConfig {
    pub fn validate(&self) -> Result<(), OptimiseError> {
        let bad = |m: &str| Err(OptimiseError::InvalidConfig(m.to_string()));
        if !(self.k_min > 0.0 && self.k_min.is_finite()) {
            return bad("k_min must be positive");
        }
        if !(self.k_start >= self.k_min && self.k_start.is_finite()) {
            return bad("k_start must be at least k_min");
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return bad("cooling_rate must lie in (0, 1)");
        }
        if !(self.energy_scale > 0.0 && self.energy_scale.is_finite()) {
            return bad("energy_scale must be positive");
        }
        if let Some(t) = self.time_budget_s {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("time_budget_s must be non-negative");
            }
        }
        Ok(())
    }
}

/// Temperatures of the cooling phase: `k_start * rate^t` while above `k_min`.
pub fn temperature_schedule(config: &AnnealingConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = config.k_start;
    while k > config.k_min {
        out.push(k);
        k *= config.cooling_rate;
    }
    out
}

/// Acceptance probability `exp(min(0, (prev - new) / K))`.
pub fn annealing_decision(obj_prev: f64, obj_new: f64, temperature: f64) -> f64 {
    ((obj_prev - obj_new) / temperature).min(0.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mutation {
    /// Folding `var` of `node` set to `value` (both channel foldings when the
    /// node is intra-matched).
    Fold { node: usize, var: FoldVar, value: u32 },
    /// Cut after node `edge` (1-based) added or removed.
    ToggleCut { edge: usize },
    /// Nothing in the design can change.
    Nothing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Point(DesignPoint, Mutation),
    /// Matching could not be restored after the mutation.
    Rejected(Mutation),
}

/// Tunable folding slots `(node, var, domain)`. Intra-matched nodes expose
/// one channel slot holding the common domain.
fn folding_slots(graph: &HdGraph) -> Vec<(usize, FoldVar, Vec<u32>)> {
    let mut slots = Vec::new();
    for node in &graph.nodes {
        let d = folding_domains(node, &graph.backend);
        if node.requires_intra_match {
            let common: Vec<u32> = d.s_in.iter().copied().filter(|v| d.s_out.contains(v)).collect();
            slots.push((node.index, FoldVar::SIn, common));
        } else {
            slots.push((node.index, FoldVar::SIn, d.s_in));
            slots.push((node.index, FoldVar::SOut, d.s_out));
        }
        slots.push((node.index, FoldVar::K, d.k));
    }
    slots.retain(|(_, _, d)| d.len() > 1);
    slots
}

/// Apply one primitive mutation: set one folding variable to a uniformly drawn
/// domain value, or toggle one uniformly drawn cut. Folding and cut moves are
/// equally likely when both exist.
pub fn random_transform<R: Rng + ?Sized>(point: &DesignPoint, rng: &mut R) -> Candidate {
    let slots = folding_slots(&point.graph);
    let edges = point.graph.edge_count();
    let use_cut = match (slots.is_empty(), edges == 0) {
        (true, true) => return Candidate::Point(point.clone(), Mutation::Nothing),
        (true, false) => true,
        (false, true) => false,
        (false, false) => rng.gen_bool(0.5),
    };
    if use_cut {
        let edge = rng.gen_range(1..=edges);
        let mutation = Mutation::ToggleCut { edge };
        let mut next = point.clone();
        next.cutset.toggle(edge);
        // a removed cut joins node edge-1 and node edge into one stream
        match propagate_matching(&next, edge - 1) {
            Ok(p) => Candidate::Point(p, mutation),
            Err(_) => Candidate::Rejected(mutation),
        }
    } else {
        let (node, var, domain) = &slots[rng.gen_range(0..slots.len())];
        let value = domain[rng.gen_range(0..domain.len())];
        let mutation = Mutation::Fold {
            node: *node,
            var: *var,
            value,
        };
        match point.with_folding(*node, *var, value) {
            Ok(p) => Candidate::Point(p, mutation),
            Err(_) => Candidate::Rejected(mutation),
        }
    }
}

/// Anneal from the resource-minimal design and return the best feasible
/// design seen.
pub fn simulated_annealing(
    graph: &HdGraph,
    platform: &Platform,
    objective: Objective,
    config: &AnnealingConfig,
) -> Result<OptimiserResult, OptimiseError> {
    config.validate()?;
    let start = Instant::now();
    let init = resource_minimal_init(graph);
    let violations = check_all(&init, platform);
    if !violations.is_empty() {
        return Err(OptimiseError::InitialInfeasible(violations));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current_obj = objective.value(&init, platform);
    let norm = if current_obj != 0.0 { current_obj.abs() } else { 1.0 };
    let energy = |o: f64| config.energy_scale * o / norm;

    let mut current = init;
    let mut best = current.clone();
    let mut best_obj = current_obj;
    let mut evaluations = 1u64;
    let mut trajectory = Vec::new();
    let mut iteration = 0u64;

    let mut step = |temperature: f64,
                    current: &mut DesignPoint,
                    current_obj: &mut f64,
                    rng: &mut ChaCha8Rng| {
        iteration += 1;
        if let Candidate::Point(candidate, _) = random_transform(current, rng) {
            // constraint violations are always reverted
            if is_feasible(&candidate, platform) {
                evaluations += 1;
                let obj = objective.value(&candidate, platform);
                let psi = annealing_decision(energy(*current_obj), energy(obj), temperature);
                let x: f64 = rng.gen();
                if psi >= x {
                    *current = candidate;
                    *current_obj = obj;
                    if obj < best_obj {
                        best_obj = obj;
                        best = current.clone();
                    }
                }
            }
        }
        trajectory.push(TrajectorySample {
            iteration,
            objective: *current_obj,
            best: best_obj,
        });
    };

    for temperature in temperature_schedule(config) {
        step(temperature, &mut current, &mut current_obj, &mut rng);
    }
    let mut at_min = 0u64;
    loop {
        let iterations_left = at_min < config.min_temp_iterations;
        let time_left = config
            .time_budget_s
            .is_some_and(|t| start.elapsed().as_secs_f64() < t);
        if !(iterations_left || time_left) {
            break;
        }
        step(config.k_min, &mut current, &mut current_obj, &mut rng);
        at_min += 1;
    }

    Ok(OptimiserResult {
        best_point: best,
        best_objective: best_obj,
        trajectory,
        wall_time_s: start.elapsed().as_secs_f64(),
        evaluations,
    })
}

#[derive(Debug, Clone)]
pub struct RestartSummary {
    pub best: OptimiserResult,
    /// Seed used for the best run.
    pub best_seed: u64,
    /// Best objective of every restart, in seed order.
    pub objectives: Vec<f64>,
}

/// Independent runs with seeds `seed, seed+1, ...`, executed in parallel.
/// The lowest objective wins; ties go to the earliest seed.
pub fn anneal_restarts(
    graph: &HdGraph,
    platform: &Platform,
    objective: Objective,
    config: &AnnealingConfig,
    restarts: usize,
) -> Result<RestartSummary, OptimiseError> {
    if restarts == 0 {
        return Err(OptimiseError::InvalidConfig("restarts must be at least 1".into()));
    }
    let runs = (0..restarts as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = AnnealingConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            simulated_annealing(graph, platform, objective, &cfg).map(|r| (cfg.seed, r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let objectives = runs.iter().map(|(_, r)| r.best_objective).collect();
    let (best_seed, best) = runs
        .into_iter()
        .reduce(|a, b| if b.1.best_objective < a.1.best_objective { b } else { a })
        .expect("at least one restart");
    Ok(RestartSummary {
        best,
        best_seed,
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendKind, ResourceVector};
    use crate::evaluation::objective_latency;
    use crate::hdgraph::{build_hdgraph, Folding};
    use crate::network::parse_network;

    fn platform() -> Platform {
        Platform {
            name: "p".into(),
            resources: ResourceVector::new(64, 10_000, 1_000_000, 1_000_000),
            mem_bandwidth_bytes_per_s: 1e15,
            reconfig_time_s: 0.001,
            clock_hz: 100e6,
        }
    }

    fn graph(doc: &str, kind: BackendKind) -> HdGraph {
        build_hdgraph(&parse_network(doc).unwrap(), kind.descriptor()).unwrap()
    }

    const CONV_1X1_TO_4: &str = r#"{"name": "c", "defaults": {"weight_bits": 8, "activation_bits": 8},
        "layers": [{"name": "conv", "kind": "Convolution", "channels_in": 1, "channels_out": 4,
          "rows_in": 4, "cols_in": 4}]}"#;

    const TWO_NODE: &str = r#"{"name": "t", "defaults": {"weight_bits": 8, "activation_bits": 8},
        "layers": [
          {"name": "conv", "kind": "Convolution", "channels_in": 2, "channels_out": 4,
           "rows_in": 5, "cols_in": 5, "kernel": [3, 3]},
          {"name": "relu", "kind": "ReLU", "channels_in": 4, "channels_out": 4,
           "rows_in": 3, "cols_in": 3}
        ]}"#;

    #[test]
    fn decision_function() {
        assert_eq!(annealing_decision(10.0, 5.0, 3.0), 1.0);
        assert_eq!(annealing_decision(10.0, 10.0, 3.0), 1.0);
        let p = annealing_decision(10.0, 12.0, 1.0);
        assert!((p - 0.135_335_283_236_612_7).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_geometric() {
        let s = temperature_schedule(&AnnealingConfig::default());
        assert_eq!(s[0], 1000.0);
        assert_eq!(s[1], 1000.0 * 0.98);
        // 1000 * 0.98^t > 1  <=>  t <= 341
        assert_eq!(s.len(), 342);
        assert!(*s.last().unwrap() > 1.0 && s.last().unwrap() * 0.98 <= 1.0);
        let flat = AnnealingConfig {
            k_start: 5.0,
            k_min: 5.0,
            ..Default::default()
        };
        assert!(temperature_schedule(&flat).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(AnnealingConfig::default().validate().is_ok());
        for bad in [
            AnnealingConfig { k_min: 0.0, ..Default::default() },
            AnnealingConfig { k_start: 0.5, ..Default::default() },
            AnnealingConfig { cooling_rate: 1.0, ..Default::default() },
            AnnealingConfig { cooling_rate: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn folding_draws_are_uniform() {
        let g = graph(CONV_1X1_TO_4, BackendKind::FpgaConvNetLike);
        let point = resource_minimal_init(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u32; 3];
        let draws = 10_000;
        for _ in 0..draws {
            match random_transform(&point, &mut rng) {
                Candidate::Point(p, Mutation::Fold { var: FoldVar::SOut, .. }) => {
                    let idx = [1, 2, 4].iter().position(|&v| v == p.foldings()[0].s_out).unwrap();
                    counts[idx] += 1;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.816, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn single_node_never_toggles_cuts() {
        let g = graph(CONV_1X1_TO_4, BackendKind::FinnLike);
        let point = resource_minimal_init(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            match random_transform(&point, &mut rng) {
                Candidate::Point(_, Mutation::Fold { .. }) | Candidate::Rejected(Mutation::Fold { .. }) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn same_seed_same_mutations() {
        let g = graph(TWO_NODE, BackendKind::FinnLike);
        let point = resource_minimal_init(&g);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| match random_transform(&point, &mut rng) {
                    Candidate::Point(_, m) | Candidate::Rejected(m) => m,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn nothing_to_mutate() {
        let g = graph(
            r#"{"name": "r", "defaults": {"weight_bits": 8, "activation_bits": 8},
                "layers": [{"name": "relu", "kind": "ReLU", "channels_in": 1, "channels_out": 1}]}"#,
            BackendKind::FinnLike,
        );
        let point = resource_minimal_init(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            random_transform(&point, &mut rng),
            Candidate::Point(point.clone(), Mutation::Nothing)
        );
    }

    #[test]
    fn deterministic_runs() {
        let g = graph(TWO_NODE, BackendKind::FinnLike);
        let cfg = AnnealingConfig {
            seed: 11,
            min_temp_iterations: 300,
            ..Default::default()
        };
        let a = simulated_annealing(&g, &platform(), Objective::Latency, &cfg).unwrap();
        let b = simulated_annealing(&g, &platform(), Objective::Latency, &cfg).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.trajectory.len(), 342 + 300);
    }

    #[test]
    fn flat_schedule_without_budget_returns_initial_point() {
        let g = graph(TWO_NODE, BackendKind::FinnLike);
        let cfg = AnnealingConfig {
            k_start: 1.0,
            k_min: 1.0,
            min_temp_iterations: 0,
            ..Default::default()
        };
        let r = simulated_annealing(&g, &platform(), Objective::Latency, &cfg).unwrap();
        assert_eq!(r.best_point, resource_minimal_init(&g));
        assert!(r.trajectory.is_empty());
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn result_is_best_seen_and_reevaluates() {
        let g = graph(TWO_NODE, BackendKind::FpgaConvNetLike);
        let cfg = AnnealingConfig {
            seed: 5,
            min_temp_iterations: 500,
            ..Default::default()
        };
        let r = simulated_annealing(&g, &platform(), Objective::Latency, &cfg).unwrap();
        assert!(is_feasible(&r.best_point, &platform()));
        assert_eq!(r.best_objective, objective_latency(&r.best_point, &platform()));
        let mut best = f64::INFINITY;
        for s in &r.trajectory {
            assert!(s.best <= best);
            assert!(s.best <= s.objective);
            best = s.best;
        }
        assert!(r.best_point.foldings()[0] != Folding::MINIMAL);
    }

    #[test]
    fn initial_infeasibility_is_an_error() {
        let g = graph(TWO_NODE, BackendKind::FinnLike);
        let mut plat = platform();
        plat.resources.dsp = 0;
        let err = simulated_annealing(&g, &plat, Objective::Latency, &AnnealingConfig::default())
            .unwrap_err();
        assert!(matches!(err, OptimiseError::InitialInfeasible(_)));
    }

    #[test]
    fn restarts_pick_best_seed() {
        let g = graph(TWO_NODE, BackendKind::Hls4mlLike);
        let cfg = AnnealingConfig {
            min_temp_iterations: 100,
            ..Default::default()
        };
        let s = anneal_restarts(&g, &platform(), Objective::Latency, &cfg, 6).unwrap();
        assert_eq!(s.objectives.len(), 6);
        let min = s.objectives.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(s.best.best_objective, min);
        assert_eq!(s.objectives[s.best_seed as usize], min);
    }
}
