//! Text reports. Lines starting with `#` carry metadata, the rest are
//! tab-separated tables with a header row. Floats are printed with a fixed
//! number of digits so reruns are byte-identical.

use std::fmt::Write;

use super::CellOutcome;

pub const EVAL_FORMAT: &str = "# mind-eval-report v1";
pub const SWEEP_FORMAT: &str = "# mind-sweep-report v1";

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

/// Per-cutoff mean and standard deviation over finished seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub diverged: usize,
}

fn summarize(cells: &[CellOutcome], cutoffs: usize) -> MethodSummary {
    let finished: Vec<&[f64]> = cells.iter().filter_map(CellOutcome::hit_rates).collect();
    let (mean, std) = (0..cutoffs)
        .map(|c| mean_std(&finished.iter().map(|h| h[c]).collect::<Vec<_>>()))
        .unzip();
    MethodSummary {
        mean,
        std,
        diverged: cells.len() - finished.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(method label, one outcome per seed)`.
    pub methods: Vec<(String, Vec<CellOutcome>)>,
    pub seeds: Vec<u64>,
    pub cutoffs: Vec<usize>,
    pub instances: usize,
    pub config_digest: String,
    pub split_digest: String,
    /// Label of the method relative improvements are measured against.
    pub reference: String,
}

impl EvalReport {
    pub fn new(
        methods: Vec<(String, Vec<CellOutcome>)>,
        seeds: Vec<u64>,
        cutoffs: Vec<usize>,
        instances: usize,
        config_digest: String,
        split_digest: String,
        reference: String,
    ) -> Self {
        Self {
            methods,
            seeds,
            cutoffs,
            instances,
            config_digest,
            split_digest,
            reference,
        }
    }

    pub fn summary(&self, label: &str) -> Option<MethodSummary> {
        self.methods
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, cells)| summarize(cells, self.cutoffs.len()))
    }

    /// `(mean_m - mean_ref) / mean_ref` per cutoff.
    pub fn relative_improvement(&self, label: &str) -> Option<Vec<f64>> {
        let m = self.summary(label)?;
        let r = self.summary(&self.reference)?;
        Some(m.mean.iter().zip(&r.mean).map(|(a, b)| (a - b) / b).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{EVAL_FORMAT}\n");
        let _ = writeln!(out, "# config_digest\t{}", self.config_digest);
        let _ = writeln!(out, "# split_digest\t{}", self.split_digest);
        let _ = writeln!(out, "# seeds\t{}", join_seeds(&self.seeds));
        let _ = writeln!(out, "# instances\t{}", self.instances);
        let _ = writeln!(out, "# reference\t{}", self.reference);
        let heads: Vec<String> = self.cutoffs.iter().map(|n| format!("HR@{n}")).collect();
        let _ = writeln!(out, "method\trow\t{}", heads.join("\t"));
        for (label, cells) in &self.methods {
            for (seed, cell) in self.seeds.iter().zip(cells) {
                let values = match cell.hit_rates() {
                    Some(h) => h.iter().map(|&v| fmt(v)).collect::<Vec<_>>(),
                    None => vec!["diverged".to_string(); self.cutoffs.len()],
                };
                let _ = writeln!(out, "{label}\tseed={seed}\t{}", values.join("\t"));
            }
            let s = summarize(cells, self.cutoffs.len());
            let row = |v: &[f64]| v.iter().map(|&x| fmt(x)).collect::<Vec<_>>().join("\t");
            let _ = writeln!(out, "{label}\tmean\t{}", row(&s.mean));
            let _ = writeln!(out, "{label}\tstd\t{}", row(&s.std));
            if let Some(rel) = self.relative_improvement(label) {
                let _ = writeln!(out, "{label}\trel_vs_{}\t{}", self.reference, row(&rel));
            }
            if s.diverged > 0 {
                let _ = writeln!(out, "{label}\tdiverged\t{}", s.diverged);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: String,
    /// `(grid value, one outcome per seed)`.
    pub cells: Vec<(String, Vec<CellOutcome>)>,
    pub seeds: Vec<u64>,
    pub cutoffs: Vec<usize>,
    pub config_digest: String,
    pub split_digest: String,
}

impl SweepReport {
    pub fn new(
        axis: String,
        cells: Vec<(String, Vec<CellOutcome>)>,
        seeds: Vec<u64>,
        cutoffs: Vec<usize>,
        config_digest: String,
        split_digest: String,
    ) -> Self {
        Self {
            axis,
            cells,
            seeds,
            cutoffs,
            config_digest,
            split_digest,
        }
    }

    pub fn summary(&self, value: &str) -> Option<MethodSummary> {
        self.cells
            .iter()
            .find(|(v, _)| v == value)
            .map(|(_, cells)| summarize(cells, self.cutoffs.len()))
    }

    /// Grid values in order.
    pub fn values(&self) -> Vec<&str> {
        self.cells.iter().map(|(v, _)| v.as_str()).collect()
    }

    /// Two tables: HitRate at the first cutoff after every epoch, then final
    /// per-cutoff means and standard deviations per grid value.
    pub fn to_text(&self) -> String {
        let mut out = format!("{SWEEP_FORMAT}\n");
        let _ = writeln!(out, "# axis\t{}", self.axis);
        let _ = writeln!(out, "# config_digest\t{}", self.config_digest);
        let _ = writeln!(out, "# split_digest\t{}", self.split_digest);
        let _ = writeln!(out, "# seeds\t{}", join_seeds(&self.seeds));
        let _ = writeln!(out, "value\tseed\tepoch\tHR@{}", self.cutoffs[0]);
        for (value, cells) in &self.cells {
            for (seed, cell) in self.seeds.iter().zip(cells) {
                match cell {
                    CellOutcome::Finished { curve, .. } => {
                        for (e, hr) in curve.iter().enumerate() {
                            let _ = writeln!(out, "{value}\t{seed}\t{}\t{}", e + 1, fmt(*hr));
                        }
                    }
                    CellOutcome::Diverged(_) => {
                        let _ = writeln!(out, "{value}\t{seed}\t-\tdiverged");
                    }
                }
            }
        }
        out.push('\n');
        let heads: Vec<String> = self
            .cutoffs
            .iter()
            .flat_map(|n| [format!("HR@{n}_mean"), format!("HR@{n}_std")])
            .collect();
        let _ = writeln!(out, "value\t{}", heads.join("\t"));
        for (value, cells) in &self.cells {
            let s = summarize(cells, self.cutoffs.len());
            let cols: Vec<String> = s.mean.iter().zip(&s.std).flat_map(|(m, d)| [fmt(*m), fmt(*d)]).collect();
            let _ = writeln!(out, "{value}\t{}", cols.join("\t"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn done(h: &[f64]) -> CellOutcome {
        CellOutcome::Finished {
            hit_rates: h.to_vec(),
            curve: vec![h[0] / 2.0, h[0]],
            epoch_losses: vec![1.0, 0.5],
        }
    }

    fn report() -> EvalReport {
        EvalReport::new(
            vec![
                ("MIND-1".into(), vec![done(&[0.2, 0.4]), done(&[0.4, 0.6])]),
                ("MIND-4".into(), vec![done(&[0.3, 0.5]), CellOutcome::Diverged("x".into())]),
            ],
            vec![1, 2],
            vec![10, 50],
            100,
            "abc".into(),
            "def".into(),
            "MIND-1".into(),
        )
    }

    #[test]
    fn stats() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn reference_has_zero_improvement() {
        let r = report();
        assert_eq!(r.relative_improvement("MIND-1").unwrap(), vec![0.0, 0.0]);
        let rel = r.relative_improvement("MIND-4").unwrap();
        assert!((rel[0] - 0.0).abs() < 1e-12);
        assert_eq!(r.summary("MIND-4").unwrap().diverged, 1);
    }

    #[test]
    fn eval_text_layout() {
        let text = report().to_text();
        assert!(text.starts_with(EVAL_FORMAT));
        assert!(text.contains("# config_digest\tabc\n"));
        assert!(text.contains("MIND-1\tseed=2\t0.400000\t0.600000\n"));
        assert!(text.contains("MIND-4\tseed=2\tdiverged\tdiverged\n"));
        assert!(text.contains("MIND-4\tdiverged\t1\n"));
    }

    #[test]
    fn sweep_text_layout() {
        let s = SweepReport::new(
            "sigma".into(),
            vec![("0.1".into(), vec![done(&[0.2, 0.4])])],
            vec![7],
            vec![10, 50],
            "abc".into(),
            "def".into(),
        );
        let text = s.to_text();
        assert!(text.contains("0.1\t7\t2\t0.200000\n"));
        assert!(text.contains("value\tHR@10_mean\tHR@10_std\tHR@50_mean\tHR@50_std\n"));
        assert!(text.contains("0.1\t0.200000\t0.000000\t0.400000\t0.000000\n"));
        assert_eq!(s.values(), vec!["0.1"]);
    }
}
