use std::time::Instant;

use num_bigint::BigUint;
use rayon::prelude::*;

use super::{OptimiseError, OptimiserResult, TrajectorySample};
use crate::evaluation::{design_space_size, is_feasible, Objective, Platform};
use crate::hdgraph::{folding_domains, CutSet, DesignPoint, Folding, HdGraph, HdNode};

pub const DEFAULT_SPACE_CAP: u64 = 10_000_000;

/// Every folding a node may take, intra-matched channel foldings moving together.
pub fn enumerate_node_foldings(node: &HdNode, graph: &HdGraph) -> Vec<Folding> {
    let d = folding_domains(node, &graph.backend);
    let mut out = Vec::new();
    for &s_in in &d.s_in {
        for &s_out in &d.s_out {
            if node.requires_intra_match && s_in != s_out {
                continue;
            }
            for &k in &d.k {
                out.push(Folding { s_in, s_out, k });
            }
        }
    }
    out
}

struct MaskBest {
    objective: f64,
    index: u64,
    point: Option<DesignPoint>,
}

/// Exhaustively evaluate every cut set and folding, discarding infeasible
/// points, and return the global optimum. Ties go to the first point in
/// enumeration order.
pub fn brute_force(
    graph: &HdGraph,
    platform: &Platform,
    objective: Objective,
    cap: u64,
) -> Result<OptimiserResult, OptimiseError> {
    let start = Instant::now();
    let size: BigUint = design_space_size(graph);
    let total = match u64::try_from(&size) {
        Ok(n) if n <= cap => n,
        _ => return Err(OptimiseError::SpaceTooLarge { size, cap }),
    };
    let n = graph.len();
    let choices: Vec<Vec<Folding>> = graph
        .nodes
        .iter()
        .map(|node| enumerate_node_foldings(node, graph))
        .collect();
    let per_mask: u64 = choices.iter().map(|c| c.len() as u64).product();
    let masks = 1u64 << graph.edge_count();

    let results: Vec<MaskBest> = (0..masks)
        .into_par_iter()
        .map(|mask| {
            let mut scratch = DesignPoint {
                graph: graph.clone(),
                cutset: CutSet::from_mask(mask, n),
            };
            let mut best = MaskBest {
                objective: f64::INFINITY,
                index: u64::MAX,
                point: None,
            };
            let mut digits = vec![0usize; n];
            for offset in 0..per_mask {
                for (node, (digit, options)) in
                    scratch.graph.nodes.iter_mut().zip(digits.iter().zip(&choices))
                {
                    node.folding = options[*digit];
                }
                if is_feasible(&scratch, platform) {
                    let value = objective.value(&scratch, platform);
                    if value < best.objective {
                        best = MaskBest {
                            objective: value,
                            index: mask * per_mask + offset,
                            point: Some(scratch.clone()),
                        };
                    }
                }
                // mixed-radix increment, last node fastest
                for i in (0..n).rev() {
                    digits[i] += 1;
                    if digits[i] < choices[i].len() {
                        break;
                    }
                    digits[i] = 0;
                }
            }
            best
        })
        .collect();

    let mut trajectory = Vec::new();
    let mut best: Option<MaskBest> = None;
    for (mask, r) in results.into_iter().enumerate() {
        if r.point.is_some()
            && best
                .as_ref()
                .is_none_or(|b| (r.objective, r.index) < (b.objective, b.index))
        {
            best = Some(r);
        }
        if let Some(b) = &best {
            trajectory.push(TrajectorySample {
                iteration: (mask as u64 + 1) * per_mask,
                objective: b.objective,
                best: b.objective,
            });
        }
    }
    let best = best.ok_or(OptimiseError::NoFeasiblePoint)?;
    Ok(OptimiserResult {
        best_point: best.point.expect("filtered above"),
        best_objective: best.objective,
        trajectory,
        wall_time_s: start.elapsed().as_secs_f64(),
        evaluations: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendKind, ResourceVector};
    use crate::evaluation::objective_latency;
    use crate::hdgraph::build_hdgraph;
    use crate::network::parse_network;

    fn platform(dsp: u64) -> Platform {
        Platform {
            name: "p".into(),
            resources: ResourceVector::new(dsp, 100_000, 10_000_000, 10_000_000),
            mem_bandwidth_bytes_per_s: 1e15,
            reconfig_time_s: 0.001,
            clock_hz: 100e6,
        }
    }

    fn graph(doc: &str, kind: BackendKind) -> HdGraph {
        build_hdgraph(&parse_network(doc).unwrap(), kind.descriptor()).unwrap()
    }

    const DENSE_2X2: &str = r#"{"name": "d", "defaults": {"weight_bits": 8, "activation_bits": 8},
        "layers": [{"name": "fc", "kind": "Dense", "channels_in": 2, "channels_out": 2}]}"#;

    #[test]
    fn dense_optimum_is_full_unroll() {
        let g = graph(DENSE_2X2, BackendKind::FpgaConvNetLike);
        let r = brute_force(&g, &platform(100), Objective::Latency, DEFAULT_SPACE_CAP).unwrap();
        assert_eq!(r.evaluations, 4);
        assert_eq!(r.foldings()[0], Folding { s_in: 2, s_out: 2, k: 1 });
        assert_eq!(r.best_objective, 1.0 / 100e6);
        assert_eq!(r.best_objective, objective_latency(&r.best_point, &platform(100)));
    }

    #[test]
    fn zero_dsp_has_no_feasible_point() {
        let g = graph(
            r#"{"name": "c", "defaults": {"weight_bits": 8, "activation_bits": 8},
                "layers": [{"name": "conv", "kind": "Convolution", "channels_in": 2, "channels_out": 2,
                  "rows_in": 4, "cols_in": 4, "kernel": [3, 3]}]}"#,
            BackendKind::FpgaConvNetLike,
        );
        let err = brute_force(&g, &platform(0), Objective::Latency, DEFAULT_SPACE_CAP).unwrap_err();
        assert!(matches!(err, OptimiseError::NoFeasiblePoint));
    }

    #[test]
    fn refuses_large_space() {
        let g = graph(DENSE_2X2, BackendKind::FpgaConvNetLike);
        let err = brute_force(&g, &platform(100), Objective::Latency, 3).unwrap_err();
        match err {
            OptimiseError::SpaceTooLarge { size, cap } => {
                assert_eq!(size, BigUint::from(4u32));
                assert_eq!(cap, 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn enumeration_respects_intra_ties() {
        let g = graph(
            r#"{"name": "r", "defaults": {"weight_bits": 8, "activation_bits": 8},
                "layers": [{"name": "relu", "kind": "ReLU", "channels_in": 4, "channels_out": 4}]}"#,
            BackendKind::FinnLike,
        );
        let f = enumerate_node_foldings(&g.nodes[0], &g);
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|x| x.s_in == x.s_out));
    }
}
