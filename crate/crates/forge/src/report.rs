//! Verdict grids over cell artifacts: one 3 x 4 table per opponent, zones
//! down and buyer/seller rates across.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::harness::CellReport;

pub const ZONES: [&str; 3] = ["narrow", "medium", "wide"];
pub const RATES: [&str; 4] = ["0.1/0.1", "0.1/0.4", "0.4/0.1", "0.4/0.4"];

/// A directory holding `cell.json`, or the file itself.
pub fn load_cell(path: &Path) -> Result<CellReport> {
    let file: PathBuf = if path.is_dir() { path.join("cell.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).with_context(|| format!("missing cell artifact {}", file.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a cell report", file.display()))
}

pub fn load_cells(paths: &[PathBuf]) -> Result<Vec<CellReport>> {
    if paths.is_empty() {
        bail!("no cell artifacts given");
    }
    paths.iter().map(|p| load_cell(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictGrid {
    pub opponent: String,
    /// `cells[zone][rate]`: "P", "other", "?" or "-" when not run.
    pub cells: [[String; 4]; 3],
}

/// Opponents in first-seen order; a later cell for the same zone and rates
/// replaces an earlier one.
pub fn verdict_grids(cells: &[CellReport]) -> Vec<VerdictGrid> {
    let mut grids: Vec<VerdictGrid> = Vec::new();
    for cell in cells {
        let (Some(z), Some(r)) =
            (ZONES.iter().position(|&z| z == cell.zone), RATES.iter().position(|&r| r == cell.rates))
        else {
            continue;
        };
        for m in &cell.majority {
            let idx = match grids.iter().position(|g| g.opponent == m.opponent) {
                Some(i) => i,
                None => {
                    grids.push(VerdictGrid { opponent: m.opponent.clone(), cells: Default::default() });
                    grids.len() - 1
                }
            };
            grids[idx].cells[z][r] = m.winner.symbol().to_string();
        }
    }
    for g in &mut grids {
        for c in g.cells.iter_mut().flatten() {
            if c.is_empty() {
                *c = "-".into();
            }
        }
    }
    grids
}

pub fn grids_csv(grids: &[VerdictGrid]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["opponent", "zone"];
    header.extend(RATES);
    w.write_record(&header)?;
    for g in grids {
        for (z, row) in ZONES.iter().zip(&g.cells) {
            let mut rec = vec![g.opponent.as_str(), z];
            rec.extend(row.iter().map(String::as_str));
            w.write_record(&rec)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn grids_text(grids: &[VerdictGrid]) -> String {
    let mut s = String::new();
    for g in grids {
        let _ = writeln!(s, "P vs {}", g.opponent);
        let _ = write!(s, "{:<8}", "b/s");
        for r in RATES {
            let _ = write!(s, " {r:>8}");
        }
        s.push('\n');
        for (z, row) in ZONES.iter().zip(&g.cells) {
            let _ = write!(s, "{z:<8}");
            for c in row {
                let _ = write!(s, " {c:>8}");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
