//! Tidy `x,series,value` tables derived from a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::experiments::{COMPARE_FILE, SWEEP_LAMBDA_FILE, SWEEP_STEPS_FILE};
use super::train::METRICS_FILE;

pub const PLOT_DIR: &str = "plots";
const HEADER: &str = "x,series,value\n";

fn read_table(path: &Path) -> Result<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    if let Some(bad) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(Error::invalid("plot_data", format!("{}: row {:?} does not match header", path.display(), bad)));
    }
    Ok(Some((header, rows)))
}

/// Long-format rows for the columns `series` of a wide table keyed by `x_col`.
fn melt(header: &[String], rows: &[Vec<String>], x_col: &str, series: &[&str]) -> Result<String> {
    let xi = header.iter().position(|h| h == x_col).ok_or_else(|| Error::invalid("plot_data", format!("no {x_col} column")))?;
    let mut out = String::from(HEADER);
    for row in rows {
        for s in series {
            let si = header.iter().position(|h| h == s).expect("series taken from header");
            out.push_str(&format!("{},{},{}\n", row[xi], s, row[si]));
        }
    }
    Ok(out)
}

/// Writes every figure table the run directory has data for and returns
/// their paths. Re-running yields identical bytes.
pub fn emit_plotdata(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut outputs: Vec<(String, String)> = Vec::new();

    if let Some((header, rows)) = read_table(&run_dir.join(METRICS_FILE))? {
        for q in ["l_vae", "l_flow", "lambda"] {
            outputs.push((format!("loss_{q}.csv"), melt(&header, &rows, "step", &[q])?));
        }
    }
    if let Some((header, rows)) = read_table(&run_dir.join(SWEEP_STEPS_FILE))? {
        let quality: Vec<&str> = header.iter().map(String::as_str).filter(|h| !matches!(*h, "steps" | "wall_ms")).collect();
        outputs.push(("steps_vs_quality.csv".into(), melt(&header, &rows, "steps", &quality)?));
        outputs.push(("steps_vs_wall_ms.csv".into(), melt(&header, &rows, "steps", &["wall_ms"])?));
    }
    if let Some((header, rows)) = read_table(&run_dir.join(SWEEP_LAMBDA_FILE))? {
        let metrics: Vec<&str> = header.iter().map(String::as_str).filter(|h| *h != "mode").collect();
        outputs.push(("lambda_mode_vs_metrics.csv".into(), melt(&header, &rows, "mode", &metrics)?));
    }
    if let Some((header, rows)) = read_table(&run_dir.join(COMPARE_FILE))? {
        let metrics: Vec<&str> = header.iter().map(String::as_str).filter(|h| *h != "arm").collect();
        outputs.push(("training_mode_vs_metrics.csv".into(), melt(&header, &rows, "arm", &metrics)?));
    }
    if outputs.is_empty() {
        return Err(Error::invalid("plot_data", format!("no metrics CSVs in {}", run_dir.display())));
    }

    let dir = run_dir.join(PLOT_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    outputs
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plotdata(dir.path()).is_err());
        assert!(!dir.path().join(PLOT_DIR).exists());
    }

    #[test]
    fn shapes_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(METRICS_FILE), "step,l_vae,l_flow,lambda,wall_ms\n0,1,2,0.5,1.0\n1,1,1.5,0.25,2.0\n").unwrap();
        fs::write(dir.path().join(SWEEP_STEPS_FILE), "steps,wall_ms,a,b\n1,0.1,3,4\n10,1.0,5,6\n100,9.0,7,8\n").unwrap();
        let paths = emit_plotdata(dir.path()).unwrap();
        let first: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(emit_plotdata(dir.path()).unwrap(), paths);
        let second: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);

        let lines = |name: &str| fs::read_to_string(dir.path().join(PLOT_DIR).join(name)).unwrap().lines().count() - 1;
        assert_eq!(lines("loss_l_flow.csv"), 2);
        assert_eq!(lines("steps_vs_quality.csv"), 3 * 2);
        assert_eq!(lines("steps_vs_wall_ms.csv"), 3);
    }
}
