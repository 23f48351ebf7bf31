//! Invariants checked over generated inputs.

mod common;

use std::collections::BTreeSet;

use common::{auc_pairs, dist};
use evmscan::cfg::{build_cfg, partition_blocks, DEFAULT_STACK_CAP};
use evmscan::disasm::{disassemble, reassemble, RawBytecode};
use evmscan::metrics::{self, auc, ConfusionMatrix};
use evmscan::nn::{RngStream, Tensor};
use evmscan::par::{self, Execution};
use evmscan::pipeline::split_dataset;
use evmscan::sc2v::{sort_pool, Aggregation, NormalizedAdjacency, Sc2vConfig, Sc2vWeights};
use evmscan::sibling::{band_threshold, sibling_lookup, IndexEntry, Outcome, SiblingConfig, TrainingIndex};
use proptest::prelude::*;

/// Programs rich in jumps: short snippets with small push targets so many
/// jumps land on real instructions, some on JUMPDESTs.
fn jumpy_program() -> impl Strategy<Value = Vec<u8>> {
    let snippet = prop_oneof![
        any::<u8>().prop_map(|t| vec![0x60, t % 64, 0x56]),
        any::<u8>().prop_map(|t| vec![0x60, 0x01, 0x60, t % 64, 0x57]),
        Just(vec![0x5b]),
        Just(vec![0x5b, 0x5b]),
        Just(vec![0x01]),
        Just(vec![0x50]),
        Just(vec![0x80]),
        Just(vec![0x90]),
        Just(vec![0x00]),
        Just(vec![0xf3]),
        Just(vec![0x35, 0x56]),
        any::<u8>().prop_map(|b| vec![b]),
    ];
    prop::collection::vec(snippet, 0..40).prop_map(|parts| parts.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn disassembly_round_trips(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let listing = disassemble(&RawBytecode::new(bytes.clone()));
        prop_assert_eq!(reassemble(&listing).unwrap().bytes, bytes.clone());
        // Instructions tile the byte string.
        let mut at = 0;
        for ins in &listing.instructions {
            prop_assert_eq!(ins.offset, at);
            prop_assert!(ins.len >= 1);
            at += ins.len;
        }
        prop_assert_eq!(at, bytes.len());
    }

    #[test]
    fn blocks_tile_the_listing(code in jumpy_program()) {
        let listing = disassemble(&RawBytecode::new(code));
        let blocks = partition_blocks(&listing);
        let flat: Vec<_> = blocks.iter().flat_map(|b| b.instructions.iter().cloned()).collect();
        prop_assert_eq!(flat, listing.instructions.clone());
        for b in &blocks {
            prop_assert!(!b.instructions.is_empty());
            prop_assert_eq!(b.id, b.instructions[0].offset);
            // JUMPDEST only ever opens a block.
            prop_assert!(b.instructions.iter().skip(1).all(|i| !i.is_jumpdest()));
        }
    }

    #[test]
    fn cfg_is_sound_bounded_and_deterministic(code in jumpy_program()) {
        let listing = disassemble(&RawBytecode::new(code));
        let cfg = build_cfg(&listing);
        let ids: BTreeSet<usize> = cfg.nodes.iter().map(|b| b.id).collect();
        for &(a, b) in &cfg.edges {
            prop_assert!(ids.contains(&a) && ids.contains(&b));
            let from = &cfg.nodes[cfg.index_of(a).unwrap()];
            let to = &cfg.nodes[cfg.index_of(b).unwrap()];
            let fall = from.terminator.falls_through() && to.id == from.end();
            prop_assert!(fall || to.starts_with_jumpdest(), "edge {a}->{b} neither falls through nor hits a JUMPDEST");
        }
        prop_assert!(cfg.iterations <= cfg.node_count() * (DEFAULT_STACK_CAP + 1));
        prop_assert_eq!(build_cfg(&listing), cfg);
    }

    #[test]
    fn sort_pool_matches_brute_force(n in 0usize..25, k in 1usize..20, seed in any::<u64>(), ties in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let d = 3;
        let data: Vec<f64> = (0..n * d)
            .map(|_| if ties { rng.index(3) as f64 } else { rng.uniform(-1.0, 1.0) })
            .collect();
        let h = Tensor::from_vec(&[n, d], data).unwrap();
        let (pooled, source) = sort_pool(&h, k);
        // Brute force: stable sort of row indices by last column, keep the top k.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| h.row(a)[d - 1].partial_cmp(&h.row(b)[d - 1]).unwrap());
        let kept: Vec<usize> = order[n.saturating_sub(k)..].to_vec();
        let pad = k - kept.len();
        prop_assert_eq!(pooled.shape(), &[k, d]);
        for r in 0..k {
            if r < pad {
                prop_assert!(pooled.row(r).iter().all(|&v| v == 0.0));
                prop_assert_eq!(source[r], None);
            } else {
                prop_assert_eq!(source[r], Some(kept[r - pad]));
                prop_assert_eq!(pooled.row(r), h.row(kept[r - pad]));
            }
        }
    }

    #[test]
    fn embedding_ignores_node_order(n in 1usize..30, seed in any::<u64>(), agg in 0usize..3) {
        let mut rng = RngStream::new(seed);
        let aggregation = [Aggregation::SortTopK, Aggregation::Mean, Aggregation::Sum][agg];
        let config = Sc2vConfig { gcn_sizes: vec![6, 4, 1], sortpool_k: 12, conv_channels: 5, conv2_kernel: 3, aggregation, ..Sc2vConfig::small() };
        let weights = Sc2vWeights::<f32>::new(config, 5, &mut rng).unwrap().cast::<f64>();
        let edges = common::random_edges(&mut rng, n, n);
        let h0 = common::random_tensor(&mut rng, &[n, 5], 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let permuted_edges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut ph = Tensor::zeros(&[n, 5]);
        for i in 0..n {
            ph.row_mut(perm[i]).copy_from_slice(h0.row(i));
        }
        let a = weights.embed(&NormalizedAdjacency::from_edges(n, edges), &h0).unwrap();
        let b = weights.embed(&NormalizedAdjacency::from_edges(n, permuted_edges), &ph).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_degree_eigenvector(n in 1usize..40, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let extra = rng.index(2 * n + 1);
        let edges: Vec<(usize, usize)> = (0..extra).map(|_| (rng.index(n), rng.index(n))).collect();
        let a = NormalizedAdjacency::from_edges(n, edges).to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a[i][j], a[j][i]);
                prop_assert!(a[i][j] >= 0.0 && a[i][j] <= 1.0);
            }
        }
        // Â = D^-1/2 (A+I) D^-1/2 maps D^1/2·1 to itself.
        let v: Vec<f64> = (0..n).map(|i| (a[i].iter().filter(|&&w| w > 0.0).count() as f64).sqrt()).collect();
        for i in 0..n {
            let av: f64 = (0..n).map(|j| a[i][j] * v[j]).sum();
            prop_assert!((av - v[i]).abs() < 1e-12 * (1.0 + v[i]));
        }
    }

    #[test]
    fn metric_identities(tp in 0u64..5000, fp in 0u64..5000, tn in 0u64..5000, fn_ in 0u64..5000) {
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
        let one = metrics::Rate { num: 1, den: 1 };
        if cm.positives() > 0 {
            let (t, f) = (metrics::tpr(&cm).unwrap(), metrics::fnr(&cm).unwrap());
            prop_assert_eq!(t.add(&f), one);
        }
        if cm.negatives() > 0 {
            let (t, f) = (metrics::tnr(&cm).unwrap(), metrics::fpr(&cm).unwrap());
            prop_assert_eq!(t.add(&f), one);
        }
        if cm.positives() > 0 && cm.negatives() > 0 {
            let half_sum = metrics::tpr(&cm).unwrap().add(&metrics::tnr(&cm).unwrap());
            let bal = metrics::balanced_accuracy_rate(&cm).unwrap();
            let half = metrics::Rate { num: half_sum.num, den: half_sum.den * 2 };
            prop_assert!(bal.same_value(&half));
        }
        if cm.total() > 0 {
            let acc = metrics::accuracy(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
        } else {
            prop_assert!(metrics::accuracy(&cm).is_err());
        }
    }

    #[test]
    fn confusion_counts_every_prediction(pairs in prop::collection::vec(any::<(bool, bool)>(), 0..300)) {
        let (p, t): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let cm = metrics::confusion(&p, &t).unwrap();
        prop_assert_eq!(cm.total() as usize, pairs.len());
        prop_assert_eq!(cm.tp as usize, pairs.iter().filter(|&&(a, b)| a && b).count());
        prop_assert_eq!(cm.positives() as usize, t.iter().filter(|&&x| x).count());
    }

    #[test]
    fn auc_matches_pairs_and_respects_monotone_maps(
        rows in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 20.0).collect();
        let truth: Vec<bool> = rows.iter().map(|r| r.1).collect();
        match auc_pairs(&scores, &truth) {
            None => prop_assert!(auc(&scores, &truth).is_err()),
            Some(want) => {
                let got = auc(&scores, &truth).unwrap();
                prop_assert!((got - want).abs() < 1e-12);
                let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert_eq!(auc(&mapped, &truth).unwrap(), got);
                let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((auc(&flipped, &truth).unwrap() - (1.0 - got)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_partitions_in_order(n in 0usize..500) {
        let items: Vec<usize> = (0..n).collect();
        let s = split_dataset(&items);
        prop_assert_eq!(s.train.len(), n * 6 / 10);
        prop_assert_eq!(s.valid.len(), n * 2 / 10);
        let joined: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        prop_assert_eq!(joined, items);
    }

    #[test]
    fn band_threshold_is_the_first_grid_point_at_or_above(d in 0.0f64..0.1, step_exp in 3i32..7) {
        let step = 10f64.powi(-step_exp);
        let t = band_threshold(d, step);
        prop_assert!(t >= d);
        prop_assert!(t - step < d);
        let k = (t / step).round();
        prop_assert!((t - k * step).abs() < 1e-18);
    }

    #[test]
    fn far_entries_never_change_a_verdict(seed in any::<u64>(), near in 1usize..12) {
        let mut rng = RngStream::new(seed);
        let dim = 4;
        let q: Vec<f32> = (0..dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let mut entries: Vec<IndexEntry> = (0..near)
            .map(|i| IndexEntry {
                id: format!("n{i}"),
                label: rng.index(2) as u8,
                vector: q.iter().map(|&v| v + rng.uniform(-0.02, 0.02) as f32).collect(),
            })
            .collect();
        let config = SiblingConfig::default();
        let before = sibling_lookup(&q, &TrainingIndex::from_entries("v", dim, entries.clone()).unwrap(), &config).unwrap();
        entries.extend((0..20).map(|i| IndexEntry {
            id: format!("f{i}"),
            label: rng.index(2) as u8,
            vector: q.iter().map(|&v| v + 1.0 + rng.uniform(0.0, 1.0) as f32).collect(),
        }));
        let after = sibling_lookup(&q, &TrainingIndex::from_entries("v", dim, entries.clone()).unwrap(), &config).unwrap();
        prop_assert_eq!(&before, &after);
        if before.outcome != Outcome::Unknown {
            let nearest = entries.iter().map(|e| dist(&q, &e.vector)).fold(f64::INFINITY, f64::min);
            prop_assert!(before.band_threshold.unwrap() >= nearest);
        }
    }

    #[test]
    fn parallel_map_preserves_order(len in 0usize..2000) {
        let seq = par::map_range(Execution::Sequential, len, |i| i * i);
        let parl = par::map_range(Execution::Parallel, len, |i| i * i);
        prop_assert_eq!(seq, parl);
    }
}
