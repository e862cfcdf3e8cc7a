//! Named reproduction recipes with expected values and tolerances.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::harness::{mnist_available, run_experiment, DataSource, ExperimentConfig, Method, ResultsBundle};
use crate::linear::{monte_carlo_risks, LinearRiskReport};
use crate::synthgen::LinearPIConfig;
use crate::{Error, Result};

/// Directory holding the MNIST IDX files for recipes that need them.
pub const MNIST_DIR_ENV: &str = "LUPILAB_MNIST_DIR";

const EMBEDDED: &[(&str, &str)] = &[
    ("table1", include_str!("../../../recipes/table1.json")),
    ("table3", include_str!("../../../recipes/table3.json")),
    ("fig1-mnist", include_str!("../../../recipes/fig1-mnist.json")),
    ("fig2", include_str!("../../../recipes/fig2.json")),
    ("fig3", include_str!("../../../recipes/fig3.json")),
    ("fig5", include_str!("../../../recipes/fig5.json")),
    ("appendixA", include_str!("../../../recipes/appendixA.json")),
];

pub fn recipe_names() -> Vec<&'static str> {
    EMBEDDED.iter().map(|(n, _)| *n).collect()
}

/// A recipe check. `run` indexes the recipe's experiment list and `epoch`
/// defaults to the last recorded epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    /// Cell mean within `tolerance` of `expected`.
    Cell {
        #[serde(default)]
        run: usize,
        method: Method,
        sample_size: usize,
        #[serde(default)]
        epoch: Option<usize>,
        expected: f64,
        tolerance: f64,
        /// Tolerance in reduced mode; defaults to `tolerance`.
        #[serde(default)]
        reduced_tolerance: Option<f64>,
    },
    /// Cell mean inside `[low, high]`.
    Range {
        #[serde(default)]
        run: usize,
        method: Method,
        sample_size: usize,
        #[serde(default)]
        epoch: Option<usize>,
        low: f64,
        high: f64,
    },
    /// `|mean(a) - mean(b)| <= max`.
    Gap {
        #[serde(default)]
        run: usize,
        a: Method,
        b: Method,
        sample_size: usize,
        #[serde(default)]
        epoch: Option<usize>,
        max: f64,
    },
    /// `mean(a) - mean(b) >= min`.
    Lead {
        #[serde(default)]
        run: usize,
        a: Method,
        b: Method,
        sample_size: usize,
        #[serde(default)]
        epoch: Option<usize>,
        min: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecipeBody {
    Experiment {
        runs: Vec<ExperimentConfig>,
        checks: Vec<Check>,
    },
    Linear {
        config: LinearPIConfig,
        trials: usize,
        relative_tolerance: f64,
        /// Minimum `empirical_pri - empirical_reg` in combined standard errors.
        min_sigma_gap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    /// What the recipe reproduces.
    pub anchor: String,
    /// Seeds `0..full_seeds` with `--full`.
    pub full_seeds: usize,
    /// Seeds `0..reduced_seeds` by default.
    pub reduced_seeds: usize,
    pub body: RecipeBody,
}

/// Looks up an embedded recipe.
pub fn recipe(name: &str) -> Result<Recipe> {
    let (_, text) = EMBEDDED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownRecipe {
            name: name.into(),
            available: recipe_names().join(", "),
        })?;
    let r: Recipe = serde_json::from_str(text)?;
    Ok(r)
}

impl Recipe {
    pub fn seeds(&self, full: bool) -> Vec<u64> {
        let k = if full { self.full_seeds } else { self.reduced_seeds };
        (0..k as u64).collect()
    }

    /// Experiment configs with seeds filled in and MNIST paths taken from
    /// the environment.
    pub fn runs(&self, full: bool) -> Vec<ExperimentConfig> {
        let RecipeBody::Experiment { runs, .. } = &self.body else {
            return Vec::new();
        };
        runs.iter()
            .cloned()
            .map(|mut c| {
                c.seeds = self.seeds(full);
                if let DataSource::Mnist { dir } = &mut c.data {
                    if let Ok(env) = std::env::var(MNIST_DIR_ENV) {
                        *dir = PathBuf::from(env);
                    }
                }
                c
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub observed: f64,
    pub target: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub name: String,
    pub anchor: String,
    pub full: bool,
    pub config_hashes: Vec<String>,
    pub verdicts: Vec<Verdict>,
    /// Set when the recipe could not run (missing data files).
    pub skipped: Option<String>,
    #[serde(skip)]
    pub bundles: Vec<ResultsBundle>,
    #[serde(skip)]
    pub linear: Option<LinearRiskReport>,
}

impl RecipeReport {
    /// All checks passed (a skipped recipe does not pass).
    pub fn passed(&self) -> bool {
        self.skipped.is_none() && !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mode = if self.full { "full" } else { "reduced" };
        let _ = writeln!(s, "recipe {} ({mode}): {}", self.name, self.anchor);
        for h in &self.config_hashes {
            let _ = writeln!(s, "config sha256 {h}");
        }
        if let Some(why) = &self.skipped {
            let _ = writeln!(s, "SKIPPED: {why}");
            return s;
        }
        let width = self.verdicts.iter().map(|v| v.label.len()).max().unwrap_or(0);
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.5}  {:<22}  {}",
                v.label,
                v.observed,
                v.target,
                if v.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "{}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

impl Check {
    pub fn run(&self) -> usize {
        match *self {
            Check::Cell { run, .. } | Check::Range { run, .. } | Check::Gap { run, .. } | Check::Lead { run, .. } => run,
        }
    }
}

fn mean_of(bundles: &[ResultsBundle], run: usize, m: Method, n: usize, epoch: Option<usize>) -> Result<f64> {
    let b = bundles
        .get(run)
        .ok_or_else(|| Error::InvalidConfig(format!("check refers to missing run {run}")))?;
    b.cell(m, n, epoch).map(|c| c.mean).ok_or_else(|| {
        Error::InvalidConfig(format!("no results for {} at n={n} epoch {epoch:?}", m.name()))
    })
}

fn at(epoch: Option<usize>) -> String {
    epoch.map(|e| format!(" @{e}")).unwrap_or_default()
}

fn judge(check: &Check, bundles: &[ResultsBundle], full: bool) -> Result<Verdict> {
    Ok(match *check {
        Check::Cell {
            run,
            method,
            sample_size,
            epoch,
            expected,
            tolerance,
            reduced_tolerance,
        } => {
            let tol = if full { tolerance } else { reduced_tolerance.unwrap_or(tolerance) };
            let v = mean_of(bundles, run, method, sample_size, epoch)?;
            Verdict {
                label: format!("{} n={sample_size}{}", method.name(), at(epoch)),
                observed: v,
                target: format!("{expected} +/- {tol}"),
                pass: (v - expected).abs() <= tol + 1e-12,
            }
        }
        Check::Range {
            run,
            method,
            sample_size,
            epoch,
            low,
            high,
        } => {
            let v = mean_of(bundles, run, method, sample_size, epoch)?;
            Verdict {
                label: format!("{} n={sample_size}{}", method.name(), at(epoch)),
                observed: v,
                target: format!("in [{low}, {high}]"),
                pass: (low..=high).contains(&v),
            }
        }
        Check::Gap {
            run,
            a,
            b,
            sample_size,
            epoch,
            max,
        } => {
            let d = mean_of(bundles, run, a, sample_size, epoch)? - mean_of(bundles, run, b, sample_size, epoch)?;
            Verdict {
                label: format!("|{} - {}| n={sample_size}{}", a.name(), b.name(), at(epoch)),
                observed: d.abs(),
                target: format!("<= {max}"),
                pass: d.abs() <= max,
            }
        }
        Check::Lead {
            run,
            a,
            b,
            sample_size,
            epoch,
            min,
        } => {
            let d = mean_of(bundles, run, a, sample_size, epoch)? - mean_of(bundles, run, b, sample_size, epoch)?;
            Verdict {
                label: format!("{} - {} n={sample_size}{}", a.name(), b.name(), at(epoch)),
                observed: d,
                target: format!(">= {min}"),
                pass: d >= min,
            }
        }
    })
}

/// Runs a recipe end to end and judges every check.
pub fn run_recipe(r: &Recipe, full: bool) -> Result<RecipeReport> {
    let mut report = RecipeReport {
        name: r.name.clone(),
        anchor: r.anchor.clone(),
        full,
        config_hashes: Vec::new(),
        verdicts: Vec::new(),
        skipped: None,
        bundles: Vec::new(),
        linear: None,
    };
    match &r.body {
        RecipeBody::Experiment { checks, .. } => {
            let runs = r.runs(full);
            for c in &runs {
                report.config_hashes.push(c.hash());
                if let DataSource::Mnist { dir } = &c.data {
                    if !mnist_available(dir) {
                        report.skipped = Some(format!(
                            "MNIST IDX files not found in {} (set {MNIST_DIR_ENV})",
                            dir.display()
                        ));
                        return Ok(report);
                    }
                }
            }
            for c in &runs {
                report.bundles.push(run_experiment(c)?);
            }
            for check in checks {
                let mut v = judge(check, &report.bundles, full)?;
                if runs.len() > 1 {
                    v.label = format!("{}: {}", runs[check.run()].name, v.label);
                }
                report.verdicts.push(v);
            }
        }
        RecipeBody::Linear {
            config,
            trials,
            relative_tolerance,
            min_sigma_gap,
        } => {
            let json = serde_json::to_vec(&(config, trials)).expect("config serializes");
            report.config_hashes.push(hex::encode(<sha2::Sha256 as sha2::Digest>::digest(json)));
            let lin = monte_carlo_risks(config, *trials)?;
            let tol = *relative_tolerance;
            report.verdicts.push(Verdict {
                label: "reg risk relative error".into(),
                observed: lin.reg_relative_error(),
                target: format!("<= {tol}"),
                pass: lin.reg_relative_error() <= tol,
            });
            report.verdicts.push(Verdict {
                label: "pri risk relative error".into(),
                observed: lin.pri_relative_error(),
                target: format!("<= {tol}"),
                pass: lin.pri_relative_error() <= tol,
            });
            let z = (lin.empirical_pri - lin.empirical_reg) / lin.combined_se();
            report.verdicts.push(Verdict {
                label: "(pri - reg) / combined se".into(),
                observed: z,
                target: format!(">= {min_sigma_gap}"),
                pass: z >= *min_sigma_gap,
            });
            report.linear = Some(lin);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_recipe_parses_and_validates() {
        for name in recipe_names() {
            let r = recipe(name).unwrap();
            assert_eq!(r.name, name);
            assert!(!r.anchor.is_empty());
            assert!(r.reduced_seeds >= 1 && r.reduced_seeds <= r.full_seeds);
            match &r.body {
                RecipeBody::Experiment { checks, .. } => {
                    assert!(!checks.is_empty());
                    for c in r.runs(true) {
                        c.validate().unwrap();
                    }
                }
                RecipeBody::Linear { config, .. } => config.validate().unwrap(),
            }
        }
    }

    #[test]
    fn unknown_recipe_lists_names() {
        match recipe("table9") {
            Err(Error::UnknownRecipe { available, .. }) => {
                assert!(available.contains("table1") && available.contains("appendixA"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reduced_mode_uses_wider_tolerance() {
        let r = recipe("table1").unwrap();
        assert_eq!(r.seeds(false).len(), 20);
        assert_eq!(r.seeds(true).len(), 100);
        let RecipeBody::Experiment { checks, .. } = &r.body else { panic!() };
        assert!(checks.iter().all(|c| matches!(
            c,
            Check::Cell { tolerance, reduced_tolerance: Some(w), .. } if *tolerance == 0.02 && *w == 0.03
        )));
    }
}
