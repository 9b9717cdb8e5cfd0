use std::fs;
use std::path::{Path, PathBuf};

use super::plot::rd_plot_svg;
use super::rd::{RDCurveSet, RDPoint};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 10] = [
    "regime",
    "M",
    "strategy",
    "seed",
    "source_id",
    "t",
    "bpp",
    "psnr_db",
    "psnr_domain",
    "bpp_denominator",
];

/// Files written by [`export_results`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportedFiles {
    pub csv: PathBuf,
    pub plot: PathBuf,
}

/// Serializes points in canonical order. Floats use the shortest
/// representation that parses back to the same value.
pub fn results_to_csv(set: &RDCurveSet) -> Result<Vec<u8>> {
    let mut sorted = set.clone();
    sorted.sort();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for p in &sorted.points {
        w.write_record([
            p.regime.as_str().to_string(),
            p.m.to_string(),
            p.strategy.as_str().to_string(),
            p.seed.to_string(),
            p.source_id.map_or_else(String::new, |s| s.to_string()),
            p.t.to_string(),
            p.bpp.to_string(),
            p.psnr_db.to_string(),
            p.psnr_domain.clone(),
            p.bpp_denominator.as_str().to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv buffer: {e}")))
}

pub fn results_from_csv(bytes: &[u8]) -> Result<RDCurveSet> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Format(format!(
            "unexpected results header {header:?}"
        )));
    }
    let mut points = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::Format(format!("results row {}: bad {col}", row + 1));
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(RESULTS_HEADER[i]));
        points.push(RDPoint {
            regime: field(0)?.parse().map_err(|_| bad("regime"))?,
            m: field(1)?.parse().map_err(|_| bad("M"))?,
            strategy: field(2)?.parse().map_err(|_| bad("strategy"))?,
            seed: field(3)?.parse().map_err(|_| bad("seed"))?,
            source_id: match field(4)? {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("source_id"))?),
            },
            t: field(5)?.parse().map_err(|_| bad("t"))?,
            bpp: field(6)?.parse().map_err(|_| bad("bpp"))?,
            psnr_db: field(7)?.parse().map_err(|_| bad("psnr_db"))?,
            psnr_domain: field(8)?.to_string(),
            bpp_denominator: field(9)?.parse().map_err(|_| bad("bpp_denominator"))?,
        });
    }
    Ok(RDCurveSet { points })
}

/// Writes `results.csv` and `rd.svg` into `dir`. Re-exporting the same set
/// produces byte-identical files.
pub fn export_results(set: &RDCurveSet, dir: &Path) -> Result<ExportedFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ExportedFiles {
        csv: dir.join("results.csv"),
        plot: dir.join("rd.svg"),
    };
    fs::write(&files.csv, results_to_csv(set)?).map_err(|e| Error::io(&files.csv, e))?;
    fs::write(&files.plot, rd_plot_svg(set)?).map_err(|e| Error::io(&files.plot, e))?;
    Ok(files)
}

pub fn read_results(path: &Path) -> Result<RDCurveSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    results_from_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::BppDenominator;
    use crate::data::SplitStrategy;
    use crate::training::Regime;

    fn sample() -> RDCurveSet {
        let mut points = Vec::new();
        for (regime, sources) in [
            (Regime::Separate, vec![Some(1), Some(0)]),
            (Regime::Joint, vec![None, Some(0)]),
        ] {
            for s in sources {
                for t in [2, 1] {
                    points.push(RDPoint {
                        regime,
                        m: 2,
                        strategy: SplitStrategy::ByLabel,
                        seed: 7,
                        source_id: s,
                        t,
                        bpp: 0.1 * t as f64,
                        psnr_db: 10.0 + t as f64 / 3.0 + s.unwrap_or(5) as f64,
                        psnr_domain: "padded_32x32".into(),
                        bpp_denominator: BppDenominator::Padded,
                    });
                }
            }
        }
        RDCurveSet { points }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let set = sample();
        let bytes = results_to_csv(&set).unwrap();
        let back = results_from_csv(&bytes).unwrap();
        let mut sorted = set.clone();
        sorted.sort();
        assert_eq!(back, sorted);
        assert_eq!(results_to_csv(&back).unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(
            "regime,M,strategy,seed,source_id,t,bpp,psnr_db,psnr_domain,bpp_denominator\n"
        ));
        assert!(text.contains("joint,2,by_label,7,,1,"));
    }

    #[test]
    fn export_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample();
        let a = export_results(&set, dir.path()).unwrap();
        let csv1 = fs::read(&a.csv).unwrap();
        let svg1 = fs::read(&a.plot).unwrap();
        let mut shuffled = set.clone();
        shuffled.points.reverse();
        export_results(&shuffled, dir.path()).unwrap();
        assert_eq!(fs::read(&a.csv).unwrap(), csv1);
        assert_eq!(fs::read(&a.plot).unwrap(), svg1);
        let mut sorted = set;
        sorted.sort();
        assert_eq!(read_results(&a.csv).unwrap(), sorted);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(results_from_csv(b"a,b\n1,2\n").is_err());
        let mut text = String::from_utf8(results_to_csv(&sample()).unwrap()).unwrap();
        text.push_str("joint,2,by_label,7,,x,0.1,1,padded_32x32,padded\n");
        assert!(results_from_csv(text.as_bytes()).is_err());
    }
}
