//! Exhaustive hyperparameter and training-length search on a trailing holdout.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::compute_metrics;
use crate::baselines::regression::{predict_regressor, train_regressor, training_pairs, FeatureVector, Hyperparams, RegressorFamily};
use crate::error::{Error, Result};
use crate::fit::slice_window;
use crate::preprocess::TelemetryRecord;

/// Validation errors this close (relative) count as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchSpec {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Candidate training lengths in days, ascending.
    pub training_days: Vec<u32>,
    pub holdout_days: u32,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            gammas: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            training_days: vec![3, 7, 14, 30, 60, 90],
            holdout_days: 1,
        }
    }
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.gammas.is_empty() || self.training_days.is_empty() {
            return Err(Error::Config("grid search needs nonempty lambda, gamma and training-length grids".into()));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("lambda grid must be finite and >= 0".into()));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Config("gamma grid must be finite and positive".into()));
        }
        if self.training_days.windows(2).any(|w| w[1] <= w[0]) || self.training_days[0] == 0 {
            return Err(Error::Config("training lengths must be positive and strictly ascending".into()));
        }
        if self.holdout_days == 0 {
            return Err(Error::Config("holdout must be at least one day".into()));
        }
        Ok(())
    }

    fn sorted(values: &[f64]) -> Vec<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// One evaluated grid cell. `nmae` is absent when the cell could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub training_days: u32,
    pub hyperparams: Hyperparams,
    pub nmae: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: RegressorFamily,
    pub best_hyperparams: Hyperparams,
    pub best_training_days: u32,
    pub best_nmae: f64,
    pub table: Vec<GridCell>,
}

/// Searches every (training length, lambda, gamma) cell using only data
/// before `end`. The last `holdout_days` before `end` are the validation set;
/// training uses the `training_days` before that. Ties go to the shorter
/// training length, then the smaller lambda, then the smaller gamma.
pub fn grid_search(
    spec: &GridSearchSpec,
    family: RegressorFamily,
    series: &[TelemetryRecord],
    end: DateTime<Utc>,
    p_nominal: f64,
    g_min: f64,
) -> Result<GridSearchResult> {
    spec.validate()?;
    let Some(first) = series.first() else {
        return Err(Error::InsufficientData("empty series".into()));
    };
    let holdout_start = end - Duration::days(i64::from(spec.holdout_days));
    let holdout = slice_window(series, holdout_start, end);
    let (hold_x, hold_y) = training_pairs(holdout, g_min);
    let hold_g: Vec<f64> = hold_x.iter().map(|f| f.g_poa).collect();

    let lambdas = GridSearchSpec::sorted(&spec.lambdas);
    let gammas = match family {
        RegressorFamily::Linear => vec![0.0],
        RegressorFamily::KernelRidge => GridSearchSpec::sorted(&spec.gammas),
    };
    let mut table = Vec::new();
    for &days in &spec.training_days {
        let train_start = holdout_start - Duration::days(i64::from(days));
        let invalid = |note: String| -> Vec<GridCell> {
            gammas
                .iter()
                .flat_map(|&gamma| lambdas.iter().map(move |&lambda| (lambda, gamma)))
                .map(|(lambda, gamma)| GridCell {
                    training_days: days,
                    hyperparams: Hyperparams { lambda, gamma },
                    nmae: None,
                    note: Some(note.clone()),
                })
                .collect()
        };
        if train_start < first.timestamp {
            table.extend(invalid(format!("needs data from {train_start}, series starts {}", first.timestamp)));
            continue;
        }
        if hold_x.is_empty() {
            table.extend(invalid("no daylight samples in the holdout".into()));
            continue;
        }
        let (x, y): (Vec<FeatureVector>, Vec<f64>) = training_pairs(slice_window(series, train_start, holdout_start), g_min);
        for &lambda in &lambdas {
            for &gamma in &gammas {
                let hp = Hyperparams { lambda, gamma };
                let cell = match train_regressor(family, &x, &y, hp) {
                    Ok(model) => {
                        let pred = predict_regressor(&model, &hold_x);
                        let m = compute_metrics(&pred, &hold_y, &hold_g, p_nominal, None)?;
                        GridCell { training_days: days, hyperparams: hp, nmae: Some(m.nmae), note: None }
                    }
                    Err(e) => GridCell { training_days: days, hyperparams: hp, nmae: None, note: Some(e.to_string()) },
                };
                table.push(cell);
            }
        }
    }
    // Sorted (length, lambda, gamma) ascending, so the first minimum wins ties.
    let mut table_sorted = table.clone();
    table_sorted.sort_by(|a, b| {
        a.training_days
            .cmp(&b.training_days)
            .then(a.hyperparams.lambda.total_cmp(&b.hyperparams.lambda))
            .then(a.hyperparams.gamma.total_cmp(&b.hyperparams.gamma))
    });
    let best = table_sorted
        .iter()
        .filter_map(|c| c.nmae.map(|e| (c, e)))
        .fold(None::<(&GridCell, f64)>, |acc, (c, e)| match acc {
            Some((_, be)) if e >= be - TIE_TOLERANCE * be.abs() => acc,
            _ => Some((c, e)),
        });
    let Some((cell, nmae)) = best else {
        return Err(Error::InsufficientData(format!("no {} grid cell could be evaluated", family.name())));
    };
    Ok(GridSearchResult {
        family,
        best_hyperparams: cell.hyperparams,
        best_training_days: cell.training_days,
        best_nmae: nmae,
        table: table_sorted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdm::{ArrayTopology, SdmParamsRef};
    use crate::synth::{generate_dataset, DegradationScenario, WeatherProfile};

    fn series(days: usize) -> Vec<TelemetryRecord> {
        let truth = SdmParamsRef::new(9.5, 5e-10, 0.35, 400.0, 1.1).unwrap();
        let topo = ArrayTopology::new(72, 12, 8).unwrap();
        let profile = WeatherProfile { days, seed: 4, cloud_days: vec![1, 4], ..Default::default() };
        generate_dataset(&truth, &topo, &profile, &DegradationScenario::constant(), 0.005, 0.005).unwrap().records
    }

    fn end_of(s: &[TelemetryRecord]) -> DateTime<Utc> {
        crate::fit::series_end(s).unwrap()
    }

    #[test]
    fn single_cell_is_selected() {
        let s = series(5);
        let spec = GridSearchSpec { lambdas: vec![0.1], gammas: vec![1.0], training_days: vec![3], holdout_days: 1 };
        let r = grid_search(&spec, RegressorFamily::KernelRidge, &s, end_of(&s), 33_000.0, 50.0).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.best_training_days, 3);
        assert_eq!(r.best_hyperparams, Hyperparams { lambda: 0.1, gamma: 1.0 });
    }

    #[test]
    fn too_long_lengths_are_marked_invalid() {
        let s = series(5);
        let spec = GridSearchSpec { lambdas: vec![0.1], gammas: vec![1.0], training_days: vec![3, 30], holdout_days: 1 };
        let r = grid_search(&spec, RegressorFamily::Linear, &s, end_of(&s), 33_000.0, 50.0).unwrap();
        assert!(r.table[1].nmae.is_none() && r.table[1].note.is_some());
        assert_eq!(r.best_training_days, 3);
    }

    #[test]
    fn ties_prefer_shorter_training() {
        // A ridge strength this large flattens the model to the training mean,
        // which is identical for both lengths on a repeated clear day.
        let profile = WeatherProfile { days: 5, seed: 1, ..Default::default() };
        let truth = SdmParamsRef::new(9.5, 5e-10, 0.35, 400.0, 1.1).unwrap();
        let topo = ArrayTopology::new(72, 12, 8).unwrap();
        let s = generate_dataset(&truth, &topo, &profile, &DegradationScenario::constant(), 0.0, 0.0).unwrap().records;
        let spec = GridSearchSpec { lambdas: vec![1e30], gammas: vec![1.0], training_days: vec![2, 3], holdout_days: 1 };
        let r = grid_search(&spec, RegressorFamily::Linear, &s, end_of(&s), 33_000.0, 50.0).unwrap();
        let (a, b) = (r.table[0].nmae.unwrap(), r.table[1].nmae.unwrap());
        assert!((a - b).abs() <= TIE_TOLERANCE * a);
        assert_eq!(r.best_training_days, 2);
    }

    #[test]
    fn deterministic() {
        let s = series(6);
        let spec = GridSearchSpec { lambdas: vec![1e-2, 1.0], gammas: vec![0.5, 2.0], training_days: vec![2, 4], holdout_days: 1 };
        let a = grid_search(&spec, RegressorFamily::KernelRidge, &s, end_of(&s), 33_000.0, 50.0).unwrap();
        let b = grid_search(&spec, RegressorFamily::KernelRidge, &s, end_of(&s), 33_000.0, 50.0).unwrap();
        assert_eq!(a, b);
    }
}
