//! Cross-module invariants: future-blindness of embeddings, structural
//! staleness mitigation, and leakage independence of the scoring memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tgn::{memory_independence_check, Hyperparams, TgnModel, VariantConfig};
use tgstore::{EventLog, EventLogBuilder, SamplingStrategy, TemporalAdjacency};

fn hp(batch: usize) -> Hyperparams {
    Hyperparams {
        memory_dim: 4,
        time_dim: 4,
        embedding_dim: 4,
        heads: 2,
        dropout: 0.1,
        learning_rate: 1e-3,
        batch_size: batch,
        patience: 5,
    }
}

/// Interactions among a fixed node set; `extra` appends later events.
fn log_with_suffix(events: usize, extra: usize, seed: u64) -> EventLog {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut b = EventLogBuilder::new();
    // Touch the extreme ids up front so both logs share a node universe.
    b.interaction(0, 11, 0.5, vec![0.1], 0).unwrap();
    let mut t = 1.0;
    for _ in 0..events + extra - 1 {
        t += rng.gen_range(0.1..1.0);
        let src = rng.gen_range(0..6);
        let dst = 6 + rng.gen_range(0..6);
        b.interaction(src, dst, t, vec![rng.gen_range(-1.0..1.0)], 0)
            .unwrap();
    }
    b.finish()
}

fn truncated(log: &EventLog, keep: usize) -> EventLog {
    let mut b = EventLogBuilder::new();
    for e in &log.events()[..keep] {
        b.interaction(
            e.source,
            e.target.unwrap(),
            e.timestamp,
            e.features.clone(),
            e.state_label,
        )
        .unwrap();
    }
    b.finish()
}

#[test]
fn embeddings_are_blind_to_future_events() {
    let full = log_with_suffix(20, 10, 3);
    let prefix = truncated(&full, 20);
    assert_eq!(full.num_nodes(), prefix.num_nodes());
    let adj_full = TemporalAdjacency::from_log(&full).unwrap();
    let adj_prefix = TemporalAdjacency::from_log(&prefix).unwrap();

    for preset in ["tgn-attn", "tgn-sum", "tgn-id", "jodie"] {
        let variant = VariantConfig::preset(preset).unwrap();
        let mut with_future = TgnModel::new(&full, variant.clone(), hp(5), 7).unwrap();
        let mut without = TgnModel::new(&prefix, variant, hp(5), 7).unwrap();
        with_future.replay_memory(&full, &adj_full, 0..20).unwrap();
        without.replay_memory(&prefix, &adj_prefix, 0..20).unwrap();

        let t = full.event(19).timestamp + 1e-6; // before any suffix event
        for node in 0..full.num_nodes() {
            let a = with_future.embed_at(&full, &adj_full, node, t).unwrap();
            let b = without.embed_at(&prefix, &adj_prefix, node, t).unwrap();
            assert!(
                a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{preset}: node {node} embedding depends on future events"
            );
        }
    }
}

#[test]
fn graph_embeddings_feel_neighbor_memory_but_identity_does_not() {
    let log = log_with_suffix(30, 0, 5);
    let adj = TemporalAdjacency::from_log(&log).unwrap();
    let horizon = log.event(log.len() - 1).timestamp + 1.0;

    // The most recent neighbor of the probe node is certainly sampled.
    let probe = log.event(log.len() - 1).source;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let sample = adj
        .neighbors_before(probe, horizon, 1, SamplingStrategy::MostRecent, None, &mut rng)
        .unwrap();
    let neighbor = sample.neighbors[0];
    assert_ne!(probe, neighbor);

    for (preset, expect_sensitive) in [("tgn-attn", true), ("tgn-sum", true), ("tgn-id", false)] {
        let variant = VariantConfig::preset(preset).unwrap();
        let mut model = TgnModel::new(&log, variant, hp(5), 11).unwrap();
        model.replay_memory(&log, &adj, 0..log.len()).unwrap();
        let before = model.embed_at(&log, &adj, probe, horizon).unwrap();
        let t_last = model
            .memory()
            .unwrap()
            .store
            .last_update(neighbor);
        model
            .memory_mut()
            .unwrap()
            .store
            .set(neighbor, &[0.9, -0.9, 0.9, -0.9], t_last)
            .unwrap();
        let after = model.embed_at(&log, &adj, probe, horizon).unwrap();
        let changed = before
            .iter()
            .zip(&after)
            .any(|(a, b)| (a - b).abs() > 1e-12);
        assert_eq!(
            changed, expect_sensitive,
            "{preset}: sensitivity to a sampled neighbor's memory"
        );
    }
}

#[test]
fn scoring_memory_is_independent_of_the_scored_interaction() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let mut b = EventLogBuilder::new();
    for i in 0..30 {
        let src = rng.gen_range(0..5usize);
        let dst = 5 + rng.gen_range(0..5usize);
        b.interaction(src, dst, i as f64 + 1.0, vec![rng.gen_range(-1.0..1.0)], 0)
            .unwrap();
    }
    let log = b.finish();
    let adj = TemporalAdjacency::from_log(&log).unwrap();
    for preset in ["tgn-attn", "tgn-mean", "dyrep"] {
        let checked = memory_independence_check(
            &log,
            &adj,
            &VariantConfig::preset(preset).unwrap(),
            &hp(6),
            13,
        )
        .unwrap();
        assert_eq!(checked, 30, "{preset}: every event must be probed");
    }
}
