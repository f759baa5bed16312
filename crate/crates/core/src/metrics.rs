//! Angular error measures and their summary statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross_norm(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    dot(c, c).sqrt()
}

/// Angle between two vectors in degrees.
///
/// Evaluated as `atan2(|a×b|, a·b)`, which equals the arccosine of the
/// normalized dot product but stays exact for (anti)parallel inputs.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("angular error of a non-finite vector".into()));
    }
    if dot(a, a) == 0.0 || dot(b, b) == 0.0 {
        return Err(Error::InvalidInput("angular error of a zero-norm vector".into()));
    }
    Ok(cross_norm(a, b).atan2(dot(a, b)).to_degrees())
}

/// Recovery angular error between ground truth and estimate, in degrees.
pub fn recovery_angular_error(gt: [f64; 3], est: [f64; 3]) -> Result<f64> {
    angle_deg(gt, est)
}

/// Angle between `gt ⊘ est` and the achromatic axis, in degrees.
pub fn reproduction_angular_error(gt: [f64; 3], est: [f64; 3]) -> Result<f64> {
    if est.iter().any(|&v| v == 0.0) {
        return Err(Error::InvalidInput(format!(
            "reproduction error undefined for estimate with a zero component: {est:?}"
        )));
    }
    angle_deg([gt[0] / est[0], gt[1] / est[1], gt[2] / est[2]], [1.0; 3])
}

/// Differentiable recovery error in radians between a constant `gt` and
/// the 3-element node `est`. The arccosine uses the graph's clamping rule.
pub fn recovery_loss_node(g: &mut Graph, gt: [f64; 3], est: Var) -> Result<Var> {
    let gt_norm = dot(gt, gt).sqrt();
    if gt_norm == 0.0 {
        return Err(Error::InvalidInput("zero-norm ground truth".into()));
    }
    let unit = g.constant(Tensor::from_vec(gt.map(|v| v / gt_norm).to_vec()));
    let d = g.dot(unit, est)?;
    let n = g.norm(est);
    let cos = g.div(d, n)?;
    g.acos(cos)
}

/// Summary of a list of angular errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub mean: f64,
    /// Lower-middle element for even `n`.
    pub median: f64,
    /// Mean of the smallest `⌈n/4⌉` errors.
    pub best25: f64,
    /// Mean of the largest `⌈n/4⌉` errors.
    pub worst25: f64,
}

pub fn aggregate(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate an empty error list".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidInput("NaN in error list".into()));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let q = n.div_ceil(4);
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let median = s[(n - 1) / 2];
    // Rounding in a sum can land one ulp outside the true bounds; clamp back.
    let best25 = mean_of(&s[..q]).min(median);
    let worst25 = mean_of(&s[n - q..]).max(median);
    Ok(ErrorStats {
        n,
        mean: mean_of(&s).clamp(best25, worst25),
        median,
        best25,
        worst25,
    })
}

/// Which error an [`ErrorStats`] summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recovery,
    Reproduction,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Recovery => "recovery",
            Metric::Reproduction => "reproduction",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "recovery" => Ok(Metric::Recovery),
            "reproduction" => Ok(Metric::Reproduction),
            _ => Err(Error::InvalidArgument(format!(
                "unknown metric `{s}` (expected recovery or reproduction)"
            ))),
        }
    }

    pub fn compute(self, gt: [f64; 3], est: [f64; 3]) -> Result<f64> {
        match self {
            Metric::Recovery => recovery_angular_error(gt, est),
            Metric::Reproduction => reproduction_angular_error(gt, est),
        }
    }
}

pub const STATS_HEADER: &str = "camera_id,n,mean,median,best25,worst25,metric_name";

/// One row of a stats CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub camera_id: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub best25: f64,
    pub worst25: f64,
    pub metric_name: String,
}

impl StatsRow {
    pub fn new(camera_id: impl Into<String>, stats: &ErrorStats, metric: Metric) -> Self {
        StatsRow {
            camera_id: camera_id.into(),
            n: stats.n,
            mean: stats.mean,
            median: stats.median,
            best25: stats.best25,
            worst25: stats.worst25,
            metric_name: metric.name().into(),
        }
    }

    pub fn stats(&self) -> ErrorStats {
        ErrorStats {
            n: self.n,
            mean: self.mean,
            median: self.median,
            best25: self.best25,
            worst25: self.worst25,
        }
    }
}

/// Write stats rows with a header. Floats use shortest round-trip formatting.
pub fn write_stats_csv(rows: &[StatsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(STATS_HEADER.split(','))?;
    }
    w.flush().map_err(|e| Error::io("<stats csv>", e))?;
    Ok(())
}

pub fn read_stats_csv(input: impl std::io::Read) -> Result<Vec<StatsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != STATS_HEADER {
        return Err(Error::Format(format!("unexpected stats header `{}`", header.join(","))));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovery_identities() {
        let a = [0.4, 0.8, 0.3];
        assert_eq!(recovery_angular_error(a, a).unwrap(), 0.0);
        assert!((recovery_angular_error([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((recovery_angular_error([1.0, 1.0, 0.0], [1.0, 0.0, 0.0]).unwrap() - 45.0).abs() < 1e-12);
        assert!(recovery_angular_error([0.0; 3], a).is_err());
    }

    #[test]
    fn reproduction_hand_value() {
        let got = reproduction_angular_error([1.0, 1.0, 1.0], [1.0, 1.0, 2.0]).unwrap();
        let want = (2.5 / (2.25f64.sqrt() * 3f64.sqrt())).acos().to_degrees();
        assert!((got - want).abs() < 1e-12);
        assert_eq!(reproduction_angular_error([0.2, 0.5, 0.9], [0.2, 0.5, 0.9]).unwrap(), 0.0);
        assert!(reproduction_angular_error([1.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn loss_node_matches_metric() {
        let mut g = Graph::new();
        let est = g.variable(Tensor::from_vec(vec![0.3, 0.5, 0.2]));
        let l = recovery_loss_node(&mut g, [0.5, 0.5, 0.3], est).unwrap();
        let want = recovery_angular_error([0.5, 0.5, 0.3], [0.3, 0.5, 0.2]).unwrap();
        assert!((g.value(l).item().to_degrees() - want).abs() < 1e-9);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[2.0; 4]).unwrap();
        assert_eq!((s.mean, s.median, s.best25, s.worst25), (2.0, 2.0, 2.0, 2.0));
        let s = aggregate(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.median, s.best25, s.worst25), (2.5, 2.0, 1.0, 4.0));
        let s = aggregate(&[0.1; 3]).unwrap();
        assert!(s.mean <= s.worst25);
        let s = aggregate(&[5.0]).unwrap();
        assert_eq!((s.n, s.mean, s.median, s.best25, s.worst25), (1, 5.0, 5.0, 5.0, 5.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn stats_csv_round_trip() {
        let stats = aggregate(&[0.1, 0.7, 1.0 / 3.0]).unwrap();
        let rows = vec![
            StatsRow::new("synth_0", &stats, Metric::Recovery),
            StatsRow::new("all", &stats, Metric::Reproduction),
        ];
        let mut buf = Vec::new();
        write_stats_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(STATS_HEADER));
        assert_eq!(read_stats_csv(buf.as_slice()).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn recovery_is_symmetric_and_scale_free(
            a in prop::array::uniform3(0.01f64..1.0),
            b in prop::array::uniform3(0.01f64..1.0),
            k in 0.01f64..100.0,
        ) {
            let e = recovery_angular_error(a, b).unwrap();
            prop_assert!((e - recovery_angular_error(b, a).unwrap()).abs() < 1e-12);
            prop_assert!((e - recovery_angular_error(a, b.map(|v| v * k)).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&e));
        }

        #[test]
        fn reproduction_ignores_estimate_scale(
            a in prop::array::uniform3(0.01f64..1.0),
            b in prop::array::uniform3(0.01f64..1.0),
            k in 0.01f64..100.0,
        ) {
            let e = reproduction_angular_error(a, b).unwrap();
            prop_assert!((e - reproduction_angular_error(a, b.map(|v| v * k)).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn aggregate_orders_and_ignores_permutation(
            mut xs in prop::collection::vec(0.0f64..180.0, 1..40),
            seed in any::<u64>(),
        ) {
            let s = aggregate(&xs).unwrap();
            prop_assert!(s.best25 <= s.median && s.median <= s.worst25);
            prop_assert!(s.best25 <= s.mean && s.mean <= s.worst25);
            use rand::{seq::SliceRandom, SeedableRng};
            xs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&xs).unwrap(), s);
        }
    }
}
