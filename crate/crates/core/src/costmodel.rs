//! Analytical per-frame operation counts.
//!
//! Convention: one operation per weight-matrix element touched in a dense
//! product (multiplies only). Biases, peepholes, nonlinearities and
//! elementwise products are excluded; the output layer is included. A
//! factorized gate costs `2k·(in + rec)` in place of `cell_dim·(in + rec)`.

use std::fmt::Write as _;

use crate::cells::{factor_side, GateKind};
use crate::error::{Error, Result};
use crate::network::{FactorizedGates, Lane, NetworkConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub total_ops: u64,
    pub time_lane_ops: u64,
    /// Layer cells plus the output layer; zero unless layer-trajectory.
    pub layer_lane_ops: u64,
    /// Slowest lane for layer-trajectory, otherwise the total.
    pub parallel_per_lane_ops: u64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str =
        "name,total_ops,time_lane_ops,layer_lane_ops,parallel_per_lane_ops,total_m,parallel_m";

    pub fn total_millions(&self) -> f64 {
        self.total_ops as f64 / 1e6
    }

    pub fn parallel_millions(&self) -> f64 {
        self.parallel_per_lane_ops as f64 / 1e6
    }

    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{},{},{:.1},{:.1}",
            self.total_ops,
            self.time_lane_ops,
            self.layer_lane_ops,
            self.parallel_per_lane_ops,
            self.total_millions(),
            self.parallel_millions()
        )
    }
}

/// One cell's multiplies: four gate-sized products (three gates plus the
/// candidate) and the projection.
fn cell_ops(config: &NetworkConfig, lane: Lane, input: usize, recurrent: usize) -> u64 {
    let cell = config.cell_dim as u64;
    let fan_in = (input + recurrent) as u64;
    let mut ops = cell * fan_in + config.proj_dim as u64 * cell;
    for gate in GateKind::ALL {
        ops += if config.factorized_gates.contains(lane, gate) {
            // validate() guarantees a perfect square here.
            2 * factor_side(config.cell_dim).map_or(0, |k| k as u64) * fan_in
        } else {
            cell * fan_in
        };
    }
    ops
}

/// Per-frame multiply count for `config`.
pub fn count_ops(config: &NetworkConfig) -> Result<CostReport> {
    config.validate()?;
    let proj = config.proj_dim;
    let output = (config.output_dim * proj) as u64;
    let mut time: u64 = (0..config.num_layers)
        .map(|l| {
            let input = if l == 0 { config.input_dim } else { proj };
            cell_ops(config, Lane::Time, input, proj)
        })
        .sum();
    let layer = if config.variant == Variant::LayerTrajectory {
        let cells: u64 = (0..config.num_layers)
            .map(|l| cell_ops(config, Lane::Layer, proj, if l == 0 { 0 } else { proj }))
            .sum();
        cells + output
    } else {
        time += output;
        0
    };
    let total = time + layer;
    Ok(CostReport {
        total_ops: total,
        time_lane_ops: time,
        layer_lane_ops: layer,
        parallel_per_lane_ops: if config.variant == Variant::LayerTrajectory {
            time.max(layer)
        } else {
            total
        },
    })
}

/// Factorized over dense multiplies for one gate: `2k / cell_dim`.
pub fn factorization_ratio(cell_dim: usize, in_dim: usize, rec_dim: usize, k: usize) -> Result<f64> {
    if k == 0 || k * k != cell_dim {
        return Err(Error::Config(format!("factor side {k} does not square to cell_dim {cell_dim}")));
    }
    let dense = (cell_dim * (in_dim + rec_dim)) as f64;
    let factorized = (2 * k * (in_dim + rec_dim)) as f64;
    if dense == 0.0 {
        return Ok(2.0 * k as f64 / cell_dim as f64);
    }
    Ok(factorized / dense)
}

/// The production-size comparison set: stacked and residual baselines, the
/// layer-trajectory model and its forget-gate-factorized form.
pub fn production_rows() -> Result<Vec<(String, CostReport)>> {
    let mut configs = Vec::new();
    for layers in [4, 6, 10] {
        configs.push((format!("stacked-{layers}"), NetworkConfig::production(Variant::Stacked, layers)));
    }
    for layers in [6, 10] {
        configs.push((format!("residual-{layers}"), NetworkConfig::production(Variant::Residual, layers)));
    }
    configs.push(("ltlstm-6".to_string(), NetworkConfig::production(Variant::LayerTrajectory, 6)));
    let mut factorized = NetworkConfig::production(Variant::LayerTrajectory, 6);
    factorized.factorized_gates = FactorizedGates::NONE
        .with(Lane::Time, GateKind::Forget)
        .with(Lane::Layer, GateKind::Forget);
    configs.push(("ltlstm-6-factorized-forget".to_string(), factorized));
    configs
        .into_iter()
        .map(|(name, cfg)| Ok((name, count_ops(&cfg)?)))
        .collect()
}

/// Fixed-width text table, one row per named config.
pub fn render_table(rows: &[(String, CostReport)]) -> String {
    let mut out = String::from("# multiplies per frame: weight-matrix elements touched, output layer included\n");
    let _ = writeln!(
        out,
        "{:<28} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8}",
        "config", "total", "time_lane", "layer_lane", "parallel", "total_M", "par_M"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<28} {:>12} {:>12} {:>12} {:>12} {:>8.1} {:>8.1}",
            name,
            r.total_ops,
            r.time_lane_ops,
            r.layer_lane_ops,
            r.parallel_per_lane_ops,
            r.total_millions(),
            r.parallel_millions()
        );
    }
    out
}

pub fn render_csv(rows: &[(String, CostReport)]) -> String {
    let mut out = format!("{}\n", CostReport::CSV_HEADER);
    for (name, r) in rows {
        out.push_str(&r.csv_row(name));
        out.push('\n');
    }
    out
}
