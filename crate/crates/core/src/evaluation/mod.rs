//! Rate-distortion evaluation, robustness checks, and result export.

mod export;
mod metrics;
mod plot;
mod rd;

pub use export::{
    export_results, read_results, results_from_csv, results_to_csv, ExportedFiles, RESULTS_HEADER,
};
pub use metrics::{confidence_band, psnr, psnr_image, psnr_per_image, Band, PSNR_CAP_DB};
pub use plot::{heatmap_svg, rd_plot_svg};
pub use rd::{psnr_curves, rd_eval, robustness_eval, EvalOptions, RDCurveSet, RDPoint};

use std::fmt::Write;

use crate::error::Result;
use crate::training::Regime;

/// Fraction of curves whose values never decrease from one step to the next.
pub fn monotone_fraction(curves: &[Vec<f64>]) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    let ok = curves
        .iter()
        .filter(|c| c.windows(2).all(|w| w[1] >= w[0]))
        .count();
    ok as f64 / curves.len() as f64
}

/// Final-iteration statistics of one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub final_mean_db: f64,
    /// Across-source sample standard deviation; `None` with one source.
    pub final_sd_db: Option<f64>,
    pub final_bpp: f64,
}

/// Final-iteration statistics for every regime in `set`.
pub fn summarize(set: &RDCurveSet) -> Result<Vec<RegimeSummary>> {
    set.regimes()
        .into_iter()
        .map(|regime| {
            Ok(RegimeSummary {
                regime,
                final_mean_db: set.final_mean(regime)?,
                final_sd_db: set.final_sd(regime)?,
                final_bpp: set.bpp_axis(regime).last().copied().unwrap_or(0.0),
            })
        })
        .collect()
}

/// Difference in final mean PSNR, `a - b`, when both regimes are present.
pub fn final_gap(set: &RDCurveSet, a: Regime, b: Regime) -> Option<f64> {
    let regimes = set.regimes();
    if !regimes.contains(&a) || !regimes.contains(&b) {
        return None;
    }
    Some(set.final_mean(a).ok()? - set.final_mean(b).ok()?)
}

/// Plain-text report of [`summarize`] plus the pairwise regime gaps.
pub fn summary_text(set: &RDCurveSet) -> Result<String> {
    let mut s = String::new();
    for r in summarize(set)? {
        let sd = r
            .final_sd_db
            .map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "{:<12} final PSNR {:.3} dB (sd {sd}) at {:.4} bpp",
            r.regime.as_str(),
            r.final_mean_db,
            r.final_bpp
        );
    }
    for (a, b) in [
        (Regime::Joint, Regime::Distributed),
        (Regime::Distributed, Regime::Separate),
        (Regime::Joint, Regime::Separate),
    ] {
        if let Some(g) = final_gap(set, a, b) {
            let _ = writeln!(s, "{a} - {b}: {g:+.3} dB");
        }
    }
    Ok(s)
}
