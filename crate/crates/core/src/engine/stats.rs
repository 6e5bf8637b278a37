use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::arch::{self, BlockLibrary, NetworkFrame};
use crate::fitness::key_digest;
use crate::genome::{BlockId, Individual};

/// Five-number summary with Tukey hinges as the quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Values beyond 1.5 IQR from the hinges, ascending.
    pub outliers: Vec<f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

impl BoxSummary {
    /// Hinges are medians of the lower and upper halves; for odd counts the
    /// median belongs to both halves.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let half = n.div_ceil(2);
        let q1 = median(&sorted[..half]);
        let q3 = median(&sorted[n - half..]);
        let fence = 1.5 * (q3 - q1);
        let outliers = sorted.iter().copied().filter(|&v| v < q1 - fence || v > q3 + fence).collect();
        Some(BoxSummary { min: sorted[0], q1, median: median(&sorted), q3, max: sorted[n - 1], outliers })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualRow {
    /// Position in the population as stored.
    pub individual_index: usize,
    /// Hex digest of the canonical s-expression.
    pub key_hash: String,
    pub fitness: f64,
    pub node_count: usize,
    pub depth: usize,
    /// `None` when the genome does not compile.
    pub param_count: Option<u64>,
    /// One entry per library block id, 0 for absent blocks.
    pub block_ratios: BTreeMap<BlockId, f64>,
    pub stride_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub fitness: BoxSummary,
    pub node_count: BoxSummary,
    /// Sorted by ascending fitness; ties keep population order.
    pub rows: Vec<IndividualRow>,
}

pub fn stats_snapshot(
    pop: &[Individual],
    generation: u32,
    library: &BlockLibrary,
    frame: &NetworkFrame,
) -> GenerationStats {
    let fitness = |i: &Individual| i.fitness().expect("statistics need an evaluated population");
    let mut rows: Vec<IndividualRow> = pop
        .iter()
        .enumerate()
        .map(|(index, ind)| {
            let mut block_ratios: BTreeMap<BlockId, f64> = library.ids().map(|id| (id.clone(), 0.0)).collect();
            block_ratios.extend(arch::block_ratios(&ind.genome));
            IndividualRow {
                individual_index: index,
                key_hash: format!("{:016x}", key_digest(ind.key())),
                fitness: fitness(ind),
                node_count: ind.node_count(),
                depth: ind.genome.depth(),
                param_count: arch::compile(&ind.genome, library, frame)
                    .ok()
                    .map(|d| arch::param_count(&d, library)),
                block_ratios,
                stride_count: ind.genome.stride_count(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    let fitnesses: Vec<f64> = pop.iter().map(fitness).collect();
    let nodes: Vec<f64> = pop.iter().map(|i| i.node_count() as f64).collect();
    GenerationStats {
        generation,
        fitness: BoxSummary::from_values(&fitnesses).expect("population is non-empty"),
        node_count: BoxSummary::from_values(&nodes).expect("population is non-empty"),
        rows,
    }
}

/// Per-individual CSV over all generations: `generation, individual_index,
/// key_hash, fitness, node_count, depth, param_count, ratio_<id>...,
/// stride_count`.
pub fn write_stats_csv<W: io::Write>(
    out: W,
    stats: &[GenerationStats],
    library: &BlockLibrary,
) -> Result<(), csv::Error> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = ["generation", "individual_index", "key_hash", "fitness", "node_count", "depth", "param_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(library.ids().map(|id| format!("ratio_{id}")));
    header.push("stride_count".into());
    writer.write_record(&header)?;
    for generation in stats {
        for row in &generation.rows {
            let mut record = vec![
                generation.generation.to_string(),
                row.individual_index.to_string(),
                row.key_hash.clone(),
                row.fitness.to_string(),
                row.node_count.to_string(),
                row.depth.to_string(),
                row.param_count.map(|p| p.to_string()).unwrap_or_default(),
            ];
            record.extend(library.ids().map(|id| row.block_ratios.get(id).copied().unwrap_or(0.0).to_string()));
            record.push(row.stride_count.to_string());
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}
