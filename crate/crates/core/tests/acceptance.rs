//! End-to-end acceptance gate: every test verifies one headline guarantee of
//! the crate — solver optimality against exhaustive oracles, algebraic
//! identities of the fusion rules, filter sanity on a clean scenario,
//! qualitative orderings of the consensus protocols at Monte-Carlo scale, and
//! exact communication-cost accounting. Each test prints one PASS line.

use std::collections::BTreeMap;
use std::time::Instant;

use dgmphd::assignment::hungarian;
use dgmphd::experiment::derive_seed;
use dgmphd::filter::{
    estimate, position_of, predict, update, DetectionProfile, Fov, SensorKind, SensorModel,
};
use dgmphd::fusion::{
    cardinality_consensus_step, ccf_step, cgma_step, cgmm_step, flood_mean, gci_fuse,
    metropolis_weights, FloodEntry, FusionWeights, TgmMessage,
};
use dgmphd::gaussian::{
    omr_merge, reduce, smr_merge, GaussianComponent, GaussianMixture, MergeScheme,
    ReductionConfig, TgmRule,
};
use dgmphd::metrics::{ospa, OspaConfig};
use dgmphd::network::{
    generate_network, run_consensus, ConsensusProtocol, EvalContext, NetworkGraph, NodeInfo,
    NodeState,
};
use dgmphd::scenario::{
    default_birth, default_motion, default_region, generate_measurements, scripted_truth,
    sensor_for, GroundTruth, ScenarioKind, SensorFrames, TargetTrack,
};
use dgmphd::unscented::UtParams;
use itertools::Itertools;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// One-sided Student-t critical value at the 5% level for 49 degrees of
// freedom (50 paired samples).
const T_CRIT_5PCT_DF49: f64 = 1.6766;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// One-sided paired t statistic for the hypothesis mean(a - b) > 0.
fn paired_t(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    mean(&d) / (sample_var(&d) / n).sqrt()
}

fn random_psd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
}

fn random_component(dim: usize, rng: &mut ChaCha8Rng) -> GaussianComponent {
    let w = rng.gen_range(0.05..2.0);
    let m = DVector::from_fn(dim, |_, _| rng.gen_range(-10.0..10.0));
    GaussianComponent::new(w, m, random_psd(dim, rng)).unwrap()
}

/// Spanning tree plus random extra edges: always connected.
fn random_connected_graph(n: usize, rng: &mut ChaCha8Rng) -> NetworkGraph {
    let nodes: Vec<NodeInfo> = (0..n)
        .map(|id| NodeInfo {
            id,
            position: Vector2::new(rng.gen_range(-900.0..900.0), rng.gen_range(-900.0..900.0)),
            kind: if id % 2 == 0 { SensorKind::Linear } else { SensorKind::RangeBearing },
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen_bool(0.25) {
                edges.push((a, b));
            }
        }
    }
    NetworkGraph::new(nodes, &edges).unwrap()
}

#[test]
fn a01_assignment_cost_equals_exhaustive_minimum() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..1000 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        // Integer-valued entries keep both routes' sums exact, so equality
        // is checked without a tolerance.
        let cost = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0..1000) as f64);
        let solved = hungarian(&cost).unwrap();
        let brute = if rows <= cols {
            (0..cols)
                .permutations(rows)
                .map(|p| p.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        } else {
            (0..rows)
                .permutations(cols)
                .map(|p| p.iter().enumerate().map(|(c, &r)| cost[(r, c)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        };
        assert_eq!(
            solved.total_cost, brute,
            "trial {trial}: solver found {} but the exhaustive minimum is {brute} for {cost}",
            solved.total_cost
        );
        assert_eq!(solved.pairs.len(), rows.min(cols));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 s");
    println!("PASS assignment: optimal cost equals the exhaustive minimum on 1000 matrices up to 6x6 ({elapsed:?})");
}

fn ospa_brute(x: &[DVector<f64>], y: &[DVector<f64>], c: f64, p: f64) -> f64 {
    if x.is_empty() && y.is_empty() {
        return 0.0;
    }
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let (m, n) = (small.len(), large.len());
    if m == 0 {
        return c;
    }
    let best = (0..n)
        .permutations(m)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (&small[i] - &large[j]).norm().min(c).powf(p))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    ((best + c.powf(p) * (n - m) as f64) / n as f64).powf(1.0 / p)
}

#[test]
fn a02_ospa_matches_exhaustive_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cfg2 = OspaConfig::new(1000.0, 2.0).unwrap();
    let cfg1 = OspaConfig::new(200.0, 1.0).unwrap();
    for trial in 0..10_000 {
        let nx = rng.gen_range(0..=5);
        let ny = rng.gen_range(0..=5);
        let x: Vec<DVector<f64>> = (0..nx)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1200.0..1200.0)))
            .collect();
        let y: Vec<DVector<f64>> = (0..ny)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1200.0..1200.0)))
            .collect();
        let cfg = if trial % 2 == 0 { &cfg2 } else { &cfg1 };
        let got = ospa(&x, &y, cfg).unwrap();
        let want = ospa_brute(&x, &y, cfg.cutoff(), cfg.order());
        assert!(
            (got - want).abs() <= 1e-9,
            "trial {trial}: ospa {got} vs exhaustive {want} on sets of sizes {nx}/{ny}"
        );
    }
    let point = |px: f64, py: f64| DVector::from_vec(vec![px, py]);
    assert_eq!(ospa(&[point(0.0, 0.0)], &[point(0.0, 0.0)], &cfg2).unwrap(), 0.0);
    assert_eq!(ospa(&[point(0.0, 0.0)], &[], &cfg2).unwrap(), 1000.0);
    assert_eq!(ospa(&[point(0.0, 0.0)], &[point(3.0, 4.0)], &cfg2).unwrap(), 5.0);
    println!("PASS ospa: matches exhaustive assignment on 10000 random set pairs (tolerance 1e-9) and the hand cases exactly");
}

#[test]
fn a03_merge_moment_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for trial in 0..1000 {
        let dim = if trial % 2 == 0 { 2 } else { 4 };
        let group: Vec<GaussianComponent> =
            (0..rng.gen_range(2..=6)).map(|_| random_component(dim, &mut rng)).collect();

        // Independent moment computation.
        let total: f64 = group.iter().map(|c| c.weight()).sum();
        let mut want_mean = DVector::zeros(dim);
        for c in &group {
            want_mean += c.mean() * c.weight();
        }
        want_mean /= total;
        let adjusted: Vec<DMatrix<f64>> = group
            .iter()
            .map(|c| {
                let d = c.mean() - &want_mean;
                c.covariance() + &d * d.transpose()
            })
            .collect();
        let mut want_cov = DMatrix::zeros(dim, dim);
        for (c, adj) in group.iter().zip(&adjusted) {
            want_cov += adj * c.weight();
        }
        want_cov /= total;

        let smr = smr_merge(&group).unwrap();
        assert!((smr.weight() - total).abs() <= 1e-10 * total);
        assert!(
            (smr.mean() - &want_mean).amax() <= 1e-10 * want_mean.amax().max(1.0),
            "trial {trial}: merged mean deviates"
        );
        assert!(
            (smr.covariance() - &want_cov).amax() <= 1e-10 * want_cov.amax(),
            "trial {trial}: merged covariance deviates"
        );

        let omr = omr_merge(&group).unwrap();
        let min_trace = adjusted.iter().map(|m| m.trace()).fold(f64::INFINITY, f64::min);
        assert!(
            (omr.covariance().trace() - min_trace).abs() <= 1e-10 * min_trace,
            "trial {trial}: trace-minimal adjusted covariance not picked"
        );
        let best = adjusted
            .iter()
            .find(|adj| (adj.trace() - min_trace).abs() <= 1e-12 * min_trace)
            .unwrap();
        assert!((omr.covariance() - best).amax() <= 1e-10 * best.amax());
        assert!(
            omr.covariance().trace() <= smr.covariance().trace() + 1e-12 * smr.covariance().trace(),
            "trial {trial}: trace-minimal output exceeds the moment-matched trace"
        );
    }
    println!("PASS merging: moment-preserving merge reproduces group moments to 1e-10 and the trace-minimal variant is never wider, 1000 groups");
}

#[test]
fn a04_consensus_weight_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..100 {
        let n = rng.gen_range(2..=12);
        let graph = random_connected_graph(n, &mut rng);
        let weights: Vec<FusionWeights> =
            (0..n).map(|a| metropolis_weights(&graph, a).unwrap()).collect();

        // Doubly stochastic with symmetric cross terms.
        for a in 0..n {
            let row: f64 = weights[a].self_weight()
                + graph.neighbors(a).iter().map(|&b| weights[a].weight_of(b)).sum::<f64>();
            let col: f64 = weights[a].self_weight()
                + graph.neighbors(a).iter().map(|&b| weights[b].weight_of(a)).sum::<f64>();
            assert!((row - 1.0).abs() <= 1e-12, "trial {trial}: row sum {row}");
            assert!((col - 1.0).abs() <= 1e-12, "trial {trial}: column sum {col}");
            for &b in graph.neighbors(a) {
                assert_eq!(weights[a].weight_of(b), weights[b].weight_of(a));
            }
        }

        // Averaging conserves the total count and contracts the spread.
        let mut counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..6.0)).collect();
        let total: f64 = counts.iter().sum();
        let mut spread = counts.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
            - counts.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        for _ in 0..5 {
            let next: Vec<f64> = (0..n)
                .map(|a| {
                    let neighbor_values: BTreeMap<usize, f64> =
                        graph.neighbors(a).iter().map(|&b| (b, counts[b])).collect();
                    cardinality_consensus_step(counts[a], &neighbor_values, &weights[a])
                })
                .collect();
            counts = next;
            let new_total: f64 = counts.iter().sum();
            assert!((new_total - total).abs() <= 1e-9, "trial {trial}: count sum drifted");
            let new_spread = counts.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
                - counts.iter().fold(f64::INFINITY, |m, &x| m.min(x));
            assert!(new_spread <= spread + 1e-12, "trial {trial}: spread grew");
            spread = new_spread;
        }

        // Flooding reaches the exact global mean at the diameter.
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..6.0)).collect();
        let mut tables: Vec<BTreeMap<usize, FloodEntry>> = (0..n)
            .map(|a| BTreeMap::from([(a, FloodEntry { value: values[a], age: 0 })]))
            .collect();
        for _ in 0..graph.diameter() {
            let snapshot = tables.clone();
            tables = (0..n)
                .map(|a| {
                    let received: Vec<&BTreeMap<usize, FloodEntry>> =
                        graph.neighbors(a).iter().map(|&b| &snapshot[b]).collect();
                    ccf_step(&snapshot[a], &received)
                })
                .collect();
        }
        let exact = values.iter().sum::<f64>() / n as f64;
        for (a, table) in tables.iter().enumerate() {
            assert_eq!(table.len(), n, "trial {trial}: node {a} missing entries");
            assert_eq!(flood_mean(table), exact, "trial {trial}: node {a} off the global mean");
        }
    }
    println!("PASS consensus algebra: doubly stochastic weights (1e-12), conserved averaging sums (1e-9), flooding exact at the diameter, 100 graphs");
}

#[test]
fn a05_pooling_and_averaging_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = ReductionConfig::new(1e-4, 5.0, 100).unwrap();

    // Dyadic weights (multiples of 1/64) make every partial sum exact, so
    // the pooled pre-rescale weight sum is checked bitwise.
    let dyadic_mix = |rng: &mut ChaCha8Rng, n: usize| {
        let comps: Vec<GaussianComponent> = (0..n)
            .map(|_| {
                let w = rng.gen_range(1..=64) as f64 / 64.0;
                let m = DVector::from_fn(4, |_, _| rng.gen_range(-500.0..500.0));
                GaussianComponent::new(w, m, DMatrix::identity(4, 4) * 50.0).unwrap()
            })
            .collect();
        GaussianMixture::new(4, comps).unwrap()
    };
    for _ in 0..50 {
        let local_n = rng.gen_range(1..=6);
        let local = dyadic_mix(&mut rng, local_n);
        let msgs: Vec<TgmMessage> = (1..=2)
            .map(|origin| {
                let n = rng.gen_range(1..=3);
                let gm = dyadic_mix(&mut rng, n);
                let w = gm.weight_sum();
                TgmMessage { origin, components: gm, cardinality: Some(w), flood_table: None }
            })
            .collect();
        let weights = FusionWeights::new(
            0,
            BTreeMap::from([(0, 0.5), (1, 0.25), (2, 0.25)]),
        )
        .unwrap();
        let expected_pool =
            local.weight_sum() + msgs.iter().map(|m| m.components.weight_sum()).sum::<f64>();
        let out = cgmm_step(&local, &msgs, &weights, &cfg, MergeScheme::Smr).unwrap();
        assert_eq!(out.pooled_weight, expected_pool, "pooled pre-rescale weight sum must be exact");
        assert!(
            (out.mixture.weight_sum() - out.cardinality).abs() <= 1e-12 * out.cardinality.abs().max(1.0),
            "post-rescale weight sum must equal the consensus count"
        );
    }

    // Averaging never changes the component count, over every round.
    let nodes: Vec<NodeInfo> = (0..4)
        .map(|id| NodeInfo {
            id,
            position: Vector2::new(0.0, 0.0),
            kind: SensorKind::Linear,
        })
        .collect();
    let graph = NetworkGraph::new(nodes, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let mut states: Vec<NodeState> = (0..4)
        .map(|i| {
            let comps: Vec<GaussianComponent> = (0..=i + 1)
                .map(|j| {
                    let m = DVector::from_vec(vec![100.0 * j as f64, 0.0, 50.0 * i as f64, 0.0]);
                    GaussianComponent::new(0.9, m, DMatrix::identity(4, 4) * 40.0).unwrap()
                })
                .collect();
            NodeState::from_mixture(GaussianMixture::new(4, comps).unwrap())
        })
        .collect();
    let sizes: Vec<usize> = states.iter().map(|s| s.mixture.len()).collect();
    let ospa_cfg = OspaConfig::new(1000.0, 2.0).unwrap();
    let eval = EvalContext { truth_positions: &[], ospa: &ospa_cfg, step: 0 };
    let protocol =
        ConsensusProtocol::Cgma { tgm: TgmRule::Rank { fixed: None }, gate: 5.0 };
    let reports = run_consensus(&graph, &mut states, &protocol, 4, &eval, None).unwrap();
    assert_eq!(reports.len(), 5);
    for report in &reports {
        for node in &report.nodes {
            assert_eq!(
                node.gm_size, sizes[node.node],
                "component count changed at node {} iteration {}",
                node.node, report.iteration
            );
        }
    }

    // Hand-checkable single-pair average.
    let local = GaussianMixture::new(
        1,
        vec![GaussianComponent::new(0.8, DVector::from_vec(vec![0.0]), DMatrix::from_vec(1, 1, vec![1.0])).unwrap()],
    )
    .unwrap();
    let msg = TgmMessage {
        origin: 1,
        components: GaussianMixture::new(
            1,
            vec![GaussianComponent::new(0.6, DVector::from_vec(vec![1.0]), DMatrix::from_vec(1, 1, vec![1.0])).unwrap()],
        )
        .unwrap(),
        cardinality: Some(0.6),
        flood_table: None,
    };
    let weights =
        FusionWeights::new(0, BTreeMap::from([(0, 0.5), (1, 0.5)])).unwrap();
    let out = cgma_step(&local, &[0], &[msg], &weights, 5.0).unwrap();
    let fused = &out.mixture.components()[0];
    assert!((fused.weight() - 0.7).abs() <= 1e-4);
    assert!((fused.mean()[0] - 0.4286).abs() <= 1e-4);
    assert!((fused.covariance()[(0, 0)] - 1.1837).abs() <= 1e-4);
    println!("PASS pooling/averaging: exact pooled sums, post-rescale identity (1e-12), size invariance over rounds, hand example to 1e-4");
}

#[test]
fn a06_geometric_fusion_closed_forms() {
    let cfg = ReductionConfig::new(0.0, 4.0, 50).unwrap();
    let weights = FusionWeights::new(0, BTreeMap::from([(0, 0.5), (1, 0.5)])).unwrap();
    let comp1 = |w: f64, m: f64, p: f64| {
        GaussianComponent::new(w, DVector::from_vec(vec![m]), DMatrix::from_vec(1, 1, vec![p]))
            .unwrap()
    };

    // Two single-Gaussian sources: the fused moments follow the classic
    // information-weighted form P = (w1/P1 + w2/P2)^-1, m = P (w1 m1/P1 + w2 m2/P2).
    let local = GaussianMixture::new(1, vec![comp1(1.0, 0.0, 2.0)]).unwrap();
    let msg = TgmMessage {
        origin: 1,
        components: GaussianMixture::new(1, vec![comp1(1.0, 3.0, 4.0)]).unwrap(),
        cardinality: None,
        flood_table: None,
    };
    let out = gci_fuse(&local, &[msg], &weights, 0.005, &cfg, MergeScheme::Smr).unwrap();
    assert_eq!(out.len(), 1);
    let fused = &out.components()[0];
    assert!((fused.covariance()[(0, 0)] - 8.0 / 3.0).abs() <= 1e-9 * (8.0 / 3.0));
    assert!((fused.mean()[0] - 1.0).abs() <= 1e-9);

    // Self-fusion reproduces each matched component.
    let comps = vec![comp1(0.8, -500.0, 1.0), comp1(0.6, 500.0, 2.0)];
    let local = GaussianMixture::new(1, comps.clone()).unwrap();
    let msg = TgmMessage {
        origin: 1,
        components: local.clone(),
        cardinality: None,
        flood_table: None,
    };
    let cfg = ReductionConfig::new(1e-4, 4.0, 50).unwrap();
    let out = gci_fuse(&local, &[msg], &weights, 0.005, &cfg, MergeScheme::Smr).unwrap();
    for original in &comps {
        let matched = out
            .components()
            .iter()
            .find(|c| (c.mean()[0] - original.mean()[0]).abs() < 1.0)
            .expect("self-fusion keeps every component");
        assert!((matched.mean()[0] - original.mean()[0]).abs() <= 1e-9 * original.mean()[0].abs());
        assert!(
            (matched.covariance()[(0, 0)] - original.covariance()[(0, 0)]).abs()
                <= 1e-9 * original.covariance()[(0, 0)]
        );
    }
    println!("PASS geometric fusion: two-source closed form (P=8/3, m=1) and self-fusion identity to 1e-9");
}

#[test]
fn a07_filter_tracks_a_clean_target() {
    let start = Instant::now();
    let steps = 100;
    let state0 = DVector::from_vec(vec![-500.0, 8.0, -500.0, 7.0]);
    let motion = default_motion();
    let mut states_list = Vec::with_capacity(steps);
    let mut s = state0.clone();
    for _ in 0..steps {
        states_list.push(s.clone());
        s = motion.transition() * s;
    }
    let truth = GroundTruth::new(
        steps,
        vec![TargetTrack { id: 0, parent: None, birth_step: 0, states: states_list }],
    )
    .unwrap();

    let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let sensor = SensorModel::linear(
        Vector2::new(0.0, 0.0),
        h,
        DMatrix::identity(2, 2) * 100.0,
        DetectionProfile::Constant(0.98),
        1.0,
        Fov::Rectangle { x_min: -1000.0, x_max: 1000.0, y_min: -1000.0, y_max: 1000.0 },
    )
    .unwrap();

    let birth = default_birth(0.03).unwrap();
    let cfg = ReductionConfig::new(1e-4, 5.0, 50).unwrap();
    let ut = UtParams::for_dim(4);
    let ospa_cfg = OspaConfig::new(1000.0, 2.0).unwrap();

    let mut card_sum = 0.0;
    let mut ospa_sum = 0.0;
    let mut samples = 0usize;
    let runs = 25;
    for run in 0..runs {
        let frames = generate_measurements(&truth, &sensor, derive_seed(707, run, 1)).unwrap();
        let mut prior = GaussianMixture::empty(4);
        for step in 0..steps {
            let predicted = predict(&prior, &motion, &birth).unwrap();
            let posterior = update(&predicted, &sensor, frames.frame(step), &ut).unwrap();
            let reduced = reduce(&posterior, &cfg, MergeScheme::Smr).unwrap();
            if step >= steps / 2 {
                let est = estimate(&reduced);
                let est_positions: Vec<DVector<f64>> =
                    est.states.iter().map(position_of).collect();
                card_sum += est.cardinality;
                ospa_sum += ospa(&est_positions, &truth.live_positions(step), &ospa_cfg).unwrap();
                samples += 1;
            }
            prior = reduced;
        }
    }
    let mean_card = card_sum / samples as f64;
    let mean_ospa = ospa_sum / samples as f64;
    assert!(
        (0.85..=1.15).contains(&mean_card),
        "mean expected count {mean_card} outside [0.85, 1.15] over the final 50 steps"
    );
    assert!(mean_ospa < 50.0, "mean position error {mean_ospa} not below 50 m");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
    println!("PASS filter sanity: mean count {mean_card:.3} in [0.85, 1.15], mean position error {mean_ospa:.1} m < 50 ({elapsed:?})");
}

/// Runs one Monte-Carlo trajectory and returns (time-average network OSPA,
/// mean tuples per step). Every node filters its own frames each step, the
/// network runs `t` consensus iterations, and the fused posteriors feed the
/// next step.
#[allow(clippy::too_many_arguments)]
fn trajectory_stats(
    graph: &NetworkGraph,
    sensors: &[SensorModel],
    truth: &GroundTruth,
    frames: &[SensorFrames],
    protocol: &ConsensusProtocol,
    t: usize,
    filter_cfg: &ReductionConfig,
    ospa_cfg: &OspaConfig,
) -> (f64, f64) {
    let motion = default_motion();
    let birth = default_birth(0.03).unwrap();
    let ut = UtParams::for_dim(4);
    let n = graph.len();
    let mut priors = vec![GaussianMixture::empty(4); n];
    let mut ospa_total = 0.0;
    let mut tuples_total = 0usize;
    for step in 0..truth.steps() {
        let mut states = Vec::with_capacity(n);
        for (node, prior) in priors.iter().enumerate() {
            let predicted = predict(prior, &motion, &birth).unwrap();
            let posterior = update(&predicted, &sensors[node], frames[node].frame(step), &ut).unwrap();
            let reduced = reduce(&posterior, filter_cfg, MergeScheme::Smr).unwrap();
            states.push(NodeState::from_mixture(reduced));
        }
        let truth_positions = truth.live_positions(step);
        let eval = EvalContext { truth_positions: &truth_positions, ospa: ospa_cfg, step };
        let reports = run_consensus(graph, &mut states, protocol, t, &eval, None).unwrap();
        ospa_total += reports.last().unwrap().network_ospa();
        tuples_total += reports.iter().map(|r| r.total_tuples()).sum::<usize>();
        priors = states.into_iter().map(|s| s.mixture).collect();
    }
    (ospa_total / truth.steps() as f64, tuples_total as f64 / truth.steps() as f64)
}

#[test]
fn a08_single_target_accuracy_improves_with_iterations() {
    let start = Instant::now();
    let nodes: Vec<NodeInfo> = [(-600.0, -600.0), (600.0, -600.0), (600.0, 600.0), (-600.0, 600.0)]
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| NodeInfo {
            id,
            position: Vector2::new(x, y),
            kind: if id < 2 { SensorKind::Linear } else { SensorKind::RangeBearing },
        })
        .collect();
    let ring = NetworkGraph::new(nodes, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let sensors: Vec<SensorModel> =
        ring.nodes().iter().map(|n| sensor_for(n, 5.0).unwrap()).collect();
    let truth = scripted_truth(ScenarioKind::SingleTarget, 100).unwrap();
    let filter_cfg = ReductionConfig::new(1e-4, 5.0, 50).unwrap();
    let ospa_cfg = OspaConfig::new(1000.0, 2.0).unwrap();
    let protocols: Vec<(&str, ConsensusProtocol)> = vec![
        (
            "merge",
            ConsensusProtocol::Cgmm {
                tgm: TgmRule::Rank { fixed: None },
                reduction: filter_cfg,
                scheme: MergeScheme::Smr,
            },
        ),
        ("average", ConsensusProtocol::Cgma { tgm: TgmRule::Rank { fixed: None }, gate: 5.0 }),
        (
            "geometric",
            ConsensusProtocol::Gci {
                share_threshold: 0.005,
                reduction: filter_cfg,
                scheme: MergeScheme::Smr,
            },
        ),
    ];

    let runs = 50;
    let master = 808;
    // per_protocol[p][t] -> per-run time-average network OSPA.
    let mut per_protocol = vec![vec![Vec::new(); 3]; protocols.len()];
    for run in 0..runs {
        let frames: Vec<SensorFrames> = sensors
            .iter()
            .enumerate()
            .map(|(s, sensor)| {
                generate_measurements(&truth, sensor, derive_seed(master, run as u64, 1 + s as u64))
                    .unwrap()
            })
            .collect();
        let (baseline, _) = trajectory_stats(
            &ring,
            &sensors,
            &truth,
            &frames,
            &ConsensusProtocol::None,
            0,
            &filter_cfg,
            &ospa_cfg,
        );
        for (p, (_, protocol)) in protocols.iter().enumerate() {
            per_protocol[p][0].push(baseline);
            for (t, bucket) in per_protocol[p].iter_mut().enumerate().skip(1) {
                let (ta, _) = trajectory_stats(
                    &ring, &sensors, &truth, &frames, protocol, t, &filter_cfg, &ospa_cfg,
                );
                bucket.push(ta);
            }
        }
    }

    for (p, (name, _)) in protocols.iter().enumerate() {
        let m: Vec<f64> = (0..3).map(|t| mean(&per_protocol[p][t])).collect();
        assert!(
            m[0] > m[1] && m[1] > m[2],
            "{name}: time-average error not strictly decreasing: {m:?}"
        );
        let t_stat = paired_t(&per_protocol[p][0], &per_protocol[p][2]);
        assert!(
            t_stat > T_CRIT_5PCT_DF49,
            "{name}: improvement from no communication to two iterations not significant (t = {t_stat:.2})"
        );
    }
    let merge_t2 = &per_protocol[0][2];
    let geo_t2 = &per_protocol[2][2];
    let pooled_se =
        (sample_var(merge_t2) / runs as f64 + sample_var(geo_t2) / runs as f64).sqrt();
    assert!(
        mean(merge_t2) <= mean(geo_t2) + pooled_se,
        "merging ({:.2}) should not trail geometric fusion ({:.2}) by more than one pooled standard error ({pooled_se:.2})",
        mean(merge_t2),
        mean(geo_t2)
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 min");
    println!(
        "PASS iteration trend: strict decrease and 5% significance for all three fusion rules; merge t=2 ({:.2}) <= geometric t=2 ({:.2}) + {pooled_se:.2} ({elapsed:?})",
        mean(merge_t2),
        mean(geo_t2)
    );
}

#[test]
fn a09_multi_target_orderings_at_one_iteration() {
    let start = Instant::now();
    let graph = generate_network(6, 1500.0, &default_region(), None, 909).unwrap();
    let sensors: Vec<SensorModel> =
        graph.nodes().iter().map(|n| sensor_for(n, 5.0).unwrap()).collect();
    let truth = scripted_truth(ScenarioKind::MultiTarget, 100).unwrap();
    let filter_cfg = ReductionConfig::new(1e-4, 5.0, 100).unwrap();
    let ospa_cfg = OspaConfig::new(1000.0, 2.0).unwrap();
    let protocols: Vec<(&str, ConsensusProtocol)> = vec![
        (
            "merge",
            ConsensusProtocol::Cgmm {
                tgm: TgmRule::Rank { fixed: None },
                reduction: filter_cfg,
                scheme: MergeScheme::Smr,
            },
        ),
        ("average", ConsensusProtocol::Cgma { tgm: TgmRule::Rank { fixed: None }, gate: 5.0 }),
        (
            "geometric",
            ConsensusProtocol::Gci {
                share_threshold: 0.005,
                reduction: filter_cfg,
                scheme: MergeScheme::Smr,
            },
        ),
    ];

    let runs = 50;
    let master = 909;
    let mut ta = vec![Vec::with_capacity(runs); protocols.len()];
    let mut tuples = vec![Vec::with_capacity(runs); protocols.len()];
    for run in 0..runs {
        let frames: Vec<SensorFrames> = sensors
            .iter()
            .enumerate()
            .map(|(s, sensor)| {
                generate_measurements(&truth, sensor, derive_seed(master, run as u64, 1 + s as u64))
                    .unwrap()
            })
            .collect();
        for (p, (_, protocol)) in protocols.iter().enumerate() {
            let (avg, per_step) = trajectory_stats(
                &graph, &sensors, &truth, &frames, protocol, 1, &filter_cfg, &ospa_cfg,
            );
            ta[p].push(avg);
            tuples[p].push(per_step);
        }
    }
    let (merge_ospa, geo_ospa) = (mean(&ta[0]), mean(&ta[2]));
    assert!(
        merge_ospa < geo_ospa,
        "merging ({merge_ospa:.2}) should beat geometric fusion ({geo_ospa:.2}) at one iteration"
    );
    let (avg_cost, merge_cost, geo_cost) =
        (mean(&tuples[1]), mean(&tuples[0]), mean(&tuples[2]));
    assert!(
        avg_cost < merge_cost && merge_cost < geo_cost,
        "tuple costs not ordered: averaging {avg_cost:.1}, merging {merge_cost:.1}, geometric {geo_cost:.1}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget 10 min");
    println!(
        "PASS multi-target orderings: merge error {merge_ospa:.2} < geometric {geo_ospa:.2}; tuples {avg_cost:.1} < {merge_cost:.1} < {geo_cost:.1} ({elapsed:?})"
    );
}

#[test]
fn a10_tuple_accounting_matches_message_log_replay() {
    let nodes: Vec<NodeInfo> = (0..3)
        .map(|id| NodeInfo {
            id,
            position: Vector2::new(-500.0 + 500.0 * id as f64, 0.0),
            kind: SensorKind::Linear,
        })
        .collect();
    let graph = NetworkGraph::new(nodes, &[(0, 1), (1, 2)]).unwrap();
    let cfg = ReductionConfig::new(1e-4, 5.0, 100).unwrap();
    let protocols = vec![
        ConsensusProtocol::Cgmm {
            tgm: TgmRule::Rank { fixed: None },
            reduction: cfg,
            scheme: MergeScheme::Smr,
        },
        ConsensusProtocol::Cgma { tgm: TgmRule::Rank { fixed: None }, gate: 5.0 },
        ConsensusProtocol::Gci { share_threshold: 0.005, reduction: cfg, scheme: MergeScheme::Smr },
        ConsensusProtocol::Cca,
        ConsensusProtocol::Ccf,
    ];
    let ospa_cfg = OspaConfig::new(1000.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for protocol in &protocols {
        let mut states: Vec<NodeState> = (0..3)
            .map(|_| {
                let comps: Vec<GaussianComponent> = (0..rng.gen_range(1..=4))
                    .map(|_| {
                        let m = DVector::from_fn(4, |r, _| {
                            if r % 2 == 0 { rng.gen_range(-800.0..800.0) } else { rng.gen_range(-10.0..10.0) }
                        });
                        GaussianComponent::new(
                            rng.gen_range(0.1..1.2),
                            m,
                            DMatrix::identity(4, 4) * 60.0,
                        )
                        .unwrap()
                    })
                    .collect();
                NodeState::from_mixture(GaussianMixture::new(4, comps).unwrap())
            })
            .collect();
        let eval = EvalContext { truth_positions: &[], ospa: &ospa_cfg, step: 0 };
        let mut log = Vec::new();
        let reports =
            run_consensus(&graph, &mut states, protocol, 2, &eval, Some(&mut log)).unwrap();
        let reported: usize = reports.iter().map(|r| r.total_tuples()).sum();
        let replayed: usize = log
            .iter()
            .map(|e| e.gc_count * 15 + usize::from(e.has_cardinality) + e.flood_entries)
            .sum();
        assert_eq!(
            reported, replayed,
            "{}: reported tuples diverge from the delivery log",
            protocol.name()
        );
        assert!(log.iter().all(|e| e.dim == 4 || e.gc_count == 0));
    }
    println!("PASS cost accounting: reported tuples equal 15 per shared component plus scalars, replayed from the delivery log, all five protocols");
}
