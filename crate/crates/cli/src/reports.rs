use std::collections::BTreeMap;

use anyhow::Result;
use serde::Serialize;
use tracing::warn;

use crate::config::{ExperimentConfig, TaskKind};
use crate::method::{Method, MethodKind};
use crate::records::{RunRecord, RunStatus};

/// How each method's runs are matched with the Langevin baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Pairing {
    /// Same step count.
    EqualSteps,
    /// Each method at its default step count against Langevin at its default.
    EquivalentTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub m: usize,
    pub method: String,
    pub cells: usize,
    pub nfe_ratio_mean: f64,
    pub nfe_ratio_std: f64,
    pub wall_ratio_mean: f64,
    pub wall_ratio_std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SpeedupReport {
    pub rows: Vec<SpeedupRow>,
    pub missing: usize,
}

/// Mean and sample standard deviation; the deviation is zero for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

const BASELINE: Method = Method::new(MethodKind::Fnpse, false);

/// Ratios of NFE and wall time against unclipped Langevin over matched cells.
pub fn report_speedup(records: &[RunRecord], pairing: Pairing) -> SpeedupReport {
    let base_name = BASELINE.to_string();
    type Cell = (String, usize, usize, u64, u64, usize);
    let cell = |r: &RunRecord, steps: usize| -> Cell { (r.task.clone(), r.m, r.n, r.eps.to_bits(), r.seed, steps) };
    let baseline: BTreeMap<Cell, &RunRecord> = records
        .iter()
        .filter(|r| r.method == base_name)
        .filter(|r| pairing == Pairing::EqualSteps || r.steps == BASELINE.default_steps())
        .map(|r| (cell(r, if pairing == Pairing::EqualSteps { r.steps } else { 0 }), r))
        .collect();

    let mut ratios: BTreeMap<(usize, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut missing = 0;
    for r in records {
        let steps = match pairing {
            Pairing::EqualSteps => r.steps,
            Pairing::EquivalentTime => {
                match r.method.parse::<Method>() {
                    Ok(m) if m.default_steps() == r.steps => {}
                    _ => continue,
                }
                0
            }
        };
        let Some(b) = baseline.get(&cell(r, steps)) else {
            missing += 1;
            continue;
        };
        let e = ratios.entry((r.m, r.method.clone())).or_default();
        e.0.push(r.nfe as f64 / b.nfe as f64);
        e.1.push(r.wall_time_s / b.wall_time_s);
    }
    if missing > 0 {
        warn!("{missing} runs have no matching {base_name} cell");
    }
    let rows = ratios
        .into_iter()
        .map(|((m, method), (nfe, wall))| {
            let (nm, ns) = mean_std(&nfe);
            let (wm, ws) = mean_std(&wall);
            SpeedupRow {
                m,
                method,
                cells: nfe.len(),
                nfe_ratio_mean: nm,
                nfe_ratio_std: ns,
                wall_ratio_mean: wm,
                wall_ratio_std: ws,
            }
        })
        .collect();
    SpeedupReport { rows, missing }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessPoint {
    pub method: String,
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seed: u64,
    pub sw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessSummary {
    pub method: String,
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seeds: usize,
    /// Seeds without a finite distance.
    pub failed: usize,
    pub sw_mean: f64,
    pub sw_std: f64,
}

pub const ROBUSTNESS_COLUMNS: &[&str] = &["method", "m", "n", "eps", "T", "seed", "sw"];
pub const ROBUSTNESS_SUMMARY_COLUMNS: &[&str] = &["method", "m", "n", "eps", "T", "seeds", "failed", "sw_mean", "sw_std"];

/// Long-format distances and per-curve summaries over seeds.
pub fn report_robustness(records: &[RunRecord]) -> (Vec<RobustnessPoint>, Vec<RobustnessSummary>) {
    let mut long: Vec<_> = records
        .iter()
        .map(|r| RobustnessPoint {
            method: r.method.clone(),
            m: r.m,
            n: r.n,
            eps: r.eps,
            steps: r.steps,
            seed: r.seed,
            sw: r.sw,
        })
        .collect();
    long.sort_by(|a, b| {
        (a.method.as_str(), a.m, a.n)
            .cmp(&(b.method.as_str(), b.m, b.n))
            .then(a.eps.total_cmp(&b.eps))
            .then(a.steps.cmp(&b.steps))
            .then(a.seed.cmp(&b.seed))
    });
    let mut curves: Vec<RobustnessSummary> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let flush = |curves: &mut Vec<RobustnessSummary>, values: &mut Vec<f64>| {
        if let Some(last) = curves.last_mut() {
            let (mean, std) = mean_std(values);
            last.failed = last.seeds - values.len();
            last.sw_mean = mean;
            last.sw_std = std;
        }
        values.clear();
    };
    for p in &long {
        let same = curves
            .last()
            .is_some_and(|c| c.method == p.method && c.m == p.m && c.n == p.n && c.eps == p.eps && c.steps == p.steps);
        if !same {
            flush(&mut curves, &mut values);
            curves.push(RobustnessSummary {
                method: p.method.clone(),
                m: p.m,
                n: p.n,
                eps: p.eps,
                steps: p.steps,
                seeds: 0,
                failed: 0,
                sw_mean: f64::NAN,
                sw_std: f64::NAN,
            });
        }
        curves.last_mut().expect("pushed").seeds += 1;
        if let Some(v) = p.sw.filter(|v| v.is_finite()) {
            values.push(v);
        }
    }
    flush(&mut curves, &mut values);
    (long, curves)
}

/// CSV with a header row even when `rows` is empty.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub const SPEEDUP_COLUMNS: &[&str] = &[
    "m",
    "method",
    "cells",
    "nfe_ratio_mean",
    "nfe_ratio_std",
    "wall_ratio_mean",
    "wall_ratio_std",
];

/// Step counts swept per method in the runtime and accuracy table.
pub const TABLE1_GRID: &[(&str, &[usize])] = &[
    ("GAUSS", &[50, 150, 400, 1000]),
    ("JAC", &[50, 150, 400]),
    ("FNPSE", &[50, 150, 400, 1000]),
];

/// Configs of the runtime and accuracy table: Gaussian task, m = 10, n = 32, ε = 0.01.
pub fn table1_configs(base_seed: u64, seeds: usize, n_samples: usize) -> Vec<ExperimentConfig> {
    TABLE1_GRID
        .iter()
        .map(|(method, steps)| ExperimentConfig {
            task: TaskKind::Gaussian,
            m: vec![10],
            rho: 0.8,
            n_list: vec![32],
            eps_list: vec![1e-2],
            t_list: Some(steps.to_vec()),
            methods: vec![method.parse().expect("table methods parse")],
            seeds: (0..seeds as u64).map(|i| base_seed + i).collect(),
            n_samples,
            output_dir: None,
            write_samples: false,
            schedule: Default::default(),
            estimation: Default::default(),
            metrics: Default::default(),
            reference: Default::default(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub method: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub seeds: usize,
    /// Seeds with any diverged chain.
    pub diverged: usize,
    /// Mean and deviation over all seeds; NaN once any seed diverged.
    pub sw_mean: f64,
    pub sw_std: f64,
    /// Mean and deviation over seeds without divergence.
    pub sw_ok_mean: f64,
    pub sw_ok_std: f64,
    pub nfe: u64,
    pub wall_time_s: f64,
}

pub const TABLE1_COLUMNS: &[&str] = &[
    "method",
    "T",
    "seeds",
    "diverged",
    "sw_mean",
    "sw_std",
    "sw_ok_mean",
    "sw_ok_std",
    "nfe",
    "wall_time_s",
];

pub fn report_table1(records: &[RunRecord]) -> Vec<Table1Row> {
    let mut cells: BTreeMap<(String, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.method.clone(), r.steps)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, steps), rs)| {
            let diverged = rs.iter().filter(|r| r.status != RunStatus::Ok || r.sw.is_none()).count();
            let all: Vec<f64> = rs.iter().map(|r| r.sw.unwrap_or(f64::NAN)).collect();
            let ok: Vec<f64> = rs
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .filter_map(|r| r.sw)
                .collect();
            let (sw_mean, sw_std) = if diverged > 0 { (f64::NAN, f64::NAN) } else { mean_std(&all) };
            let (sw_ok_mean, sw_ok_std) = mean_std(&ok);
            let wall: Vec<f64> = rs.iter().map(|r| r.wall_time_s).collect();
            Table1Row {
                method,
                steps,
                seeds: rs.len(),
                diverged,
                sw_mean,
                sw_std,
                sw_ok_mean,
                sw_ok_std,
                nfe: rs[0].nfe,
                wall_time_s: mean_std(&wall).0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, steps: usize, seed: u64, nfe: u64, wall: f64, sw: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: format!("{method}{steps}{seed}"),
            config_hash: "h".into(),
            task: "gaussian".into(),
            method: method.into(),
            clip: false,
            m: 10,
            n: 32,
            eps: 0.01,
            steps,
            eta: None,
            seed,
            status: if sw.is_some() { RunStatus::Ok } else { RunStatus::Diverged },
            sw,
            mmd: None,
            n_proj: 1000,
            proj_seed: 0,
            nfe,
            setup_nfe: 0,
            jacobian_evals: 0,
            flagged_steps: 0,
            lambda_violations: 0,
            diverged_chains: 0,
            dropped_rows: 0,
            n_draws: 10,
            wall_time_s: wall,
        }
    }

    #[test]
    fn speedup_equal_steps() {
        let recs = vec![
            rec("FNPSE", 400, 0, 64000, 2.0, Some(0.5)),
            rec("GAUSS", 400, 0, 12800, 0.8, Some(0.2)),
            rec("GAUSS", 1000, 0, 32000, 2.0, Some(0.2)),
        ];
        let rep = report_speedup(&recs, Pairing::EqualSteps);
        assert_eq!(rep.missing, 1);
        let g = rep.rows.iter().find(|r| r.method == "GAUSS").unwrap();
        assert_eq!(g.nfe_ratio_mean, 0.2);
        assert!((g.wall_ratio_mean - 0.4).abs() < 1e-12);
        let f = rep.rows.iter().find(|r| r.method == "FNPSE").unwrap();
        assert_eq!((f.nfe_ratio_mean, f.wall_ratio_mean), (1.0, 1.0));
    }

    #[test]
    fn speedup_equivalent_time() {
        let recs = vec![
            rec("FNPSE", 400, 0, 64000, 2.0, Some(0.5)),
            rec("GAUSS", 1000, 0, 32000, 1.0, Some(0.2)),
            rec("GAUSS", 400, 0, 12800, 0.8, Some(0.2)),
        ];
        let rep = report_speedup(&recs, Pairing::EquivalentTime);
        let g = rep.rows.iter().find(|r| r.method == "GAUSS").unwrap();
        assert_eq!((g.cells, g.nfe_ratio_mean), (1, 0.5));
        assert_eq!(rep.missing, 0);
    }

    #[test]
    fn robustness_groups_curves() {
        let recs = vec![
            rec("GAUSS", 1000, 1, 1, 1.0, Some(0.3)),
            rec("GAUSS", 1000, 0, 1, 1.0, Some(0.1)),
            rec("FNPSE", 400, 0, 1, 1.0, None),
        ];
        let (long, summary) = report_robustness(&recs);
        assert_eq!(long.len(), 3);
        let mut two_grids = recs.clone();
        two_grids.push(rec("GAUSS", 50, 0, 1, 1.0, Some(0.5)));
        assert_eq!(report_robustness(&two_grids).1.len(), 3);
        assert_eq!(long[1].seed, 0);
        assert_eq!(summary.len(), 2);
        let g = &summary[1];
        assert_eq!((g.seeds, g.failed), (2, 0));
        assert!((g.sw_mean - 0.2).abs() < 1e-12);
        assert_eq!((summary[0].seeds, summary[0].failed), (1, 1));
        assert!(summary[0].sw_mean.is_nan());
    }

    #[test]
    fn empty_robustness_has_header_only() {
        let (long, summary) = report_robustness(&[]);
        let text = String::from_utf8(to_csv(&long, ROBUSTNESS_COLUMNS).unwrap()).unwrap();
        assert_eq!(text, "method,m,n,eps,T,seed,sw\n");
        assert!(summary.is_empty());
    }

    #[test]
    fn table1_marks_divergence() {
        let recs = vec![
            rec("FNPSE", 50, 0, 1, 1.0, None),
            rec("FNPSE", 50, 1, 1, 1.0, Some(2.0)),
            rec("GAUSS", 1000, 0, 1, 1.0, Some(0.2)),
        ];
        let rows = report_table1(&recs);
        assert!(rows[0].sw_mean.is_nan());
        assert_eq!(rows[0].diverged, 1);
        assert_eq!(rows[0].sw_ok_mean, 2.0);
        assert_eq!(rows[1].sw_mean, 0.2);
    }

    #[test]
    fn table1_config_shape() {
        let cfgs = table1_configs(7, 5, 100);
        assert_eq!(cfgs.len(), 3);
        assert_eq!(cfgs[0].seeds, vec![7, 8, 9, 10, 11]);
        for c in &cfgs {
            c.validate().unwrap();
        }
    }
}
