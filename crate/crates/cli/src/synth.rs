use std::collections::BTreeMap;
use std::path::Path;

use diffnum::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tgstore::{EventLog, EventLogBuilder, NodeId};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Every source rotates through a fixed small cycle of destinations;
    /// the next destination is a deterministic function of how many
    /// interactions the source has had.
    Periodic,
    /// Every second interaction of a source returns to its first-ever
    /// partner; the others go to fresh random destinations. Only models that
    /// remember the first partner can beat chance on the returning half.
    LongMemory,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Periodic => "periodic",
            SyntheticKind::LongMemory => "long-memory",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub kind: SyntheticKind,
    /// Total nodes; half become sources, half destinations.
    pub nodes: usize,
    pub events: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Cycle length for the periodic rule.
    pub cycle_len: usize,
}

impl GeneratorSpec {
    pub fn new(kind: SyntheticKind, nodes: usize, events: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind,
            nodes,
            events,
            seed,
            feature_dim: 8,
            cycle_len: 2,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{}(nodes={},events={},seed={},features={},cycle={})",
            self.kind.name(),
            self.nodes,
            self.events,
            self.seed,
            self.feature_dim,
            self.cycle_len
        )
    }

    fn validate(&self) -> Result<()> {
        if self.nodes < 4 {
            return Err(CliError::Invalid(format!(
                "generator needs at least 4 nodes, got {}",
                self.nodes
            )));
        }
        if self.events < 100 {
            return Err(CliError::Invalid(format!(
                "generator needs at least 100 events, got {}",
                self.events
            )));
        }
        if self.cycle_len == 0 || self.cycle_len > self.nodes / 2 {
            return Err(CliError::Invalid(format!(
                "cycle length {} must be in 1..={}",
                self.cycle_len,
                self.nodes / 2
            )));
        }
        Ok(())
    }
}

/// Generate the event log directly (sources 0..S, destinations S..S+D, as
/// CSV ingestion would re-index them).
pub fn generate(spec: &GeneratorSpec) -> Result<EventLog> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let sources = spec.nodes / 2;
    let dests = spec.nodes - sources;
    let mut builder = EventLogBuilder::new()
        .with_edge_feature_dim(spec.feature_dim)
        .with_source_space(sources);

    // Periodic: per-source destination cycles, drawn once.
    let mut cycles: Vec<Vec<NodeId>> = Vec::new();
    if spec.kind == SyntheticKind::Periodic {
        for _ in 0..sources {
            let mut cycle = Vec::with_capacity(spec.cycle_len);
            while cycle.len() < spec.cycle_len {
                let d = rng.gen_range(0..dests);
                if !cycle.contains(&d) {
                    cycle.push(d);
                }
            }
            cycles.push(cycle);
        }
    }

    // Long-memory: first partners are assigned on first contact.
    let mut first_partner: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut counts: Vec<usize> = vec![0; sources];

    for event_index in 0..spec.events {
        let src = rng.gen_range(0..sources);
        let k = counts[src];
        counts[src] += 1;
        let raw_dst = match spec.kind {
            SyntheticKind::Periodic => cycles[src][k % spec.cycle_len],
            SyntheticKind::LongMemory => {
                if k == 0 {
                    let p = rng.gen_range(0..dests);
                    first_partner.insert(src, p);
                    p
                } else if k.is_multiple_of(2) {
                    first_partner[&src]
                } else {
                    rng.gen_range(0..dests)
                }
            }
        };
        let features: Vec<Real> = (0..spec.feature_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        // Every tenth interaction of a source flags a state change.
        let label = u8::from(k % 10 == 9);
        let t = (event_index + 1) as f64;
        builder.interaction(src, sources + raw_dst, t, features, label)?;
    }
    Ok(builder.finish())
}

/// Generate and write in the ingestion schema (raw destination ids, so the
/// file round-trips through CSV ingestion).
pub fn generate_csv(spec: &GeneratorSpec, path: &Path) -> Result<()> {
    let log = generate(spec)?;
    tgstore::write_csv(&log, path)?;
    Ok(())
}
