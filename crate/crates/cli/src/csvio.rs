//! CSV writers for pipeline artifacts. Floats use the shortest round-trip
//! representation, so identical runs produce byte-identical files and
//! downstream consumers recover exact values.

use std::fmt::Write as _;

use deforma::registration::{DisplacementField, EnergyRecord};
use deforma::regression::{LoocvRecord, SubsetResult, SweepPoint, SweepTrial};
use deforma::sdm::MotionDynamics;
use nalgebra::Vector3;

pub fn displacement_csv(field: &DisplacementField) -> String {
    let mut out = String::from("vertex_id,ux,uy,uz\n");
    for (i, v) in field.vectors.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", v.x, v.y, v.z);
    }
    out
}

pub fn parse_displacement_csv(text: &str) -> Result<Vec<Vector3<f64>>, String> {
    let mut out = Vec::new();
    for (lno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let _id = parts.next();
        let mut v = [0.0f64; 3];
        for c in &mut v {
            *c = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| format!("line {}: bad displacement row", lno + 1))?;
        }
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn energy_log_csv(log: &[EnergyRecord]) -> String {
    let mut out =
        String::from("iteration,e_shape,e_deform,e_pos,total,mean_distance_mm,delta_effective\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.e_shape,
            r.e_deform,
            r.e_pos,
            r.total,
            r.mean_distance,
            r.delta_effective
        );
    }
    out
}

pub fn loocv_csv(records: &[LoocvRecord]) -> String {
    let mut out = String::from("patient,phase,MD_mm,HD_mm,DSC\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.patient, r.phase, r.md_mm, r.hd_mm, r.dice
        );
    }
    out
}

pub fn loocv_grid_csv(rows: &[(String, f64, LoocvRecord)]) -> String {
    let mut out = String::from("mode,beta,patient,phase,MD_mm,HD_mm,DSC\n");
    for (mode, beta, r) in rows {
        let _ = writeln!(
            out,
            "{mode},{beta},{},{},{},{},{}",
            r.patient, r.phase, r.md_mm, r.hd_mm, r.dice
        );
    }
    out
}

pub fn sweep_trials_csv(trials: &[SweepTrial]) -> String {
    let mut out = String::from("points_per_organ,trial,mean_MD_mm,mean_HD_mm\n");
    for t in trials {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.points_per_organ, t.trial, t.mean_md_mm, t.mean_hd_mm
        );
    }
    out
}

pub fn sweep_curve_csv(curve: &[SweepPoint]) -> String {
    let mut out = String::from("points_per_organ,trials,mean_MD_mm,mean_HD_mm\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.points_per_organ, p.trials, p.mean_md_mm, p.mean_hd_mm
        );
    }
    out
}

pub fn subset_csv(table: &[SubsetResult]) -> String {
    let mut out = String::from("rank,organs,median_HD_mm,median_MD_mm\n");
    for (rank, row) in table.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            rank + 1,
            row.label(),
            row.median_hd_mm,
            row.median_md_mm
        );
    }
    out
}

pub fn motion_stats_csv(stats: &[MotionDynamics]) -> String {
    let mut out = String::from("organ,phase,mean_mm,std_mm\n");
    for organ in stats {
        for p in &organ.phases {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                organ.organ, p.phase, p.mean_mm, p.std_mm
            );
        }
    }
    out
}

/// Fig-13(b)-style per-phase aggregation of LOOCV records.
pub fn phase_error_csv(records: &[LoocvRecord]) -> String {
    let mut phases: Vec<usize> = records.iter().map(|r| r.phase).collect();
    phases.sort_unstable();
    phases.dedup();
    let mut out = String::from("phase,mean_MD_mm,std_MD_mm,mean_HD_mm,std_HD_mm,n\n");
    for phase in phases {
        let vals: Vec<&LoocvRecord> = records.iter().filter(|r| r.phase == phase).collect();
        let n = vals.len() as f64;
        let mean_md = vals.iter().map(|r| r.md_mm).sum::<f64>() / n;
        let mean_hd = vals.iter().map(|r| r.hd_mm).sum::<f64>() / n;
        let std_md = (vals
            .iter()
            .map(|r| (r.md_mm - mean_md).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let std_hd = (vals
            .iter()
            .map(|r| (r.hd_mm - mean_hd).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let _ = writeln!(
            out,
            "{phase},{mean_md},{std_md},{mean_hd},{std_hd},{}",
            vals.len()
        );
    }
    out
}

/// Fixed metric report schema: case,phase,metric,value_mm_or_frac.
pub fn metric_report_csv(rows: &[(String, usize, &'static str, f64)]) -> String {
    let mut out = String::from("case,phase,metric,value_mm_or_frac\n");
    for (case, phase, metric, value) in rows {
        let _ = writeln!(out, "{case},{phase},{metric},{value}");
    }
    out
}
