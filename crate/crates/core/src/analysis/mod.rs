//! Cost accounting, throughput timing, selection baselines and
//! representation diagnostics.

mod bench;
mod flops;
mod report;
mod similarity;
mod strategies;

pub use bench::{percentile, throughput_bench, BenchResult, MIN_REPEATS, MIN_WARMUP};
pub use flops::{evo_layer_macs, ffn_macs, flop_report, msa_macs, FlopReport, LayerFlops};
pub use report::{write_curve_csv, write_pcc_csv, write_strategy_csv};
pub use similarity::{cka_curve, linear_cka, pairwise_pcc, pcc_curve, token_query_pcc, PccSummary};
pub use strategies::{
    column_mean_scores, compare_strategies, random_selection, strategy_forward, BaselineSelector,
    StrategyKind, StrategyScore,
};
