//! Per-iteration measurements, trace aggregation, transient-time estimation
//! and the CSV trace format.
//!
//! # CSV layout
//!
//! ```text
//! # cedas-trace v1
//! # label=<free text>
//! # config_hash=<hex>
//! # seed=<u64>
//! # repetition=<index | mean | sd>
//! # agents=<n>
//! k,eta,residual,mean_err,consensus_err,compression_err,grad_norm_sq,bits_cum
//! 0,5.05e-2,1.3e0,...
//! ```
//!
//! One row per recorded iteration. Reals use Rust's shortest round-trip
//! exponent form, so a trace read back is bit-identical. Metrics that do not
//! apply to a run are left empty. `eta` is the stepsize that produced the
//! iterate of that row (`η_{-1}` for `k = 0`); `bits_cum` is the mean number
//! of bits each agent has sent so far.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::algo::Stack;
use crate::objective::Problem;
use crate::vecops::dist_sq;

pub const CSV_COLUMNS: [&str; 8] =
    ["k", "eta", "residual", "mean_err", "consensus_err", "compression_err", "grad_norm_sq", "bits_cum"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("residual requested without a reference optimum")]
    MissingOptimum,
    #[error("traces differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("traces record different iterations at position {0}")]
    IterationMismatch(usize),
    #[error("no traces to aggregate")]
    Empty,
    #[error("trace lacks the `{0}` metric")]
    MissingMetric(&'static str),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("CSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Metrics of one iterate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    pub k: usize,
    pub eta: f64,
    /// `(1/n) Σ_i ‖x_i − x*‖²`
    pub residual: Option<f64>,
    /// `‖x̄ − x*‖²`
    pub mean_err: Option<f64>,
    /// `(1/n) Σ_i ‖x_i − x̄‖²`
    pub consensus_err: f64,
    /// `‖Y − H‖²_F`
    pub compression_err: Option<f64>,
    /// `‖∇f(x̄)‖²`
    pub grad_norm_sq: Option<f64>,
    pub bits_cum: f64,
}

/// What [`measure`] should compute.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeasureSpec<'a> {
    pub optimum: Option<&'a [f64]>,
    pub residual: bool,
    pub grad_norm: bool,
}

/// Error metrics of the iterate stack `x`. Iteration, stepsize, compression
/// error and bit count are left for the caller to fill in.
pub fn measure(x: &Stack, problem: &Problem, spec: MeasureSpec<'_>) -> Result<Record> {
    let n = x.rows() as f64;
    let mean = x.mean_row();
    let consensus_err = x.iter_rows().map(|r| dist_sq(r, &mean)).sum::<f64>() / n;
    let (residual, mean_err) = if spec.residual {
        let opt = spec.optimum.ok_or(MetricsError::MissingOptimum)?;
        let residual = x.iter_rows().map(|r| dist_sq(r, opt)).sum::<f64>() / n;
        (Some(residual), Some(dist_sq(&mean, opt)))
    } else {
        (None, None)
    };
    let grad_norm_sq = spec.grad_norm.then(|| crate::vecops::norm_sq(&problem.full_grad(&mean)));
    Ok(Record { residual, mean_err, consensus_err, grad_norm_sq, ..Record::default() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repetition {
    Single(usize),
    Mean,
    StdDev,
}

impl std::fmt::Display for Repetition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Repetition::Single(r) => write!(f, "{r}"),
            Repetition::Mean => f.write_str("mean"),
            Repetition::StdDev => f.write_str("sd"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceMeta {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub repetition: Repetition,
    pub agents: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<Record>,
}

impl Trace {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn residuals(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.residual).collect()
    }

    /// Writes the CSV layout described in the module docs.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "# cedas-trace v1");
        let _ = writeln!(s, "# label={}", m.label.replace('\n', " "));
        let _ = writeln!(s, "# config_hash={}", m.config_hash);
        let _ = writeln!(s, "# seed={}", m.seed);
        let _ = writeln!(s, "# repetition={}", m.repetition);
        let _ = writeln!(s, "# agents={}", m.agents);
        s.push_str(&CSV_COLUMNS.join(","));
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{},{},{:e},{},{},{:e}",
                r.k,
                r.eta,
                opt(r.residual),
                opt(r.mean_err),
                r.consensus_err,
                opt(r.compression_err),
                opt(r.grad_norm_sq),
                r.bits_cum
            );
        }
        s
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Trace> {
        let mut meta = TraceMeta {
            label: String::new(),
            config_hash: String::new(),
            seed: 0,
            repetition: Repetition::Single(0),
            agents: 0,
        };
        let mut records = Vec::new();
        let mut header_seen = false;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let err = |msg: String| MetricsError::Parse { line: lineno, msg };
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.trim_start().split_once('=') {
                    match key {
                        "label" => meta.label = value.to_string(),
                        "config_hash" => meta.config_hash = value.to_string(),
                        "seed" => meta.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                        "agents" => meta.agents = value.parse().map_err(|e| err(format!("agents: {e}")))?,
                        "repetition" => {
                            meta.repetition = match value {
                                "mean" => Repetition::Mean,
                                "sd" => Repetition::StdDev,
                                r => Repetition::Single(r.parse().map_err(|e| err(format!("repetition: {e}")))?),
                            }
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != CSV_COLUMNS.join(",") {
                    return Err(err(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != CSV_COLUMNS.len() {
                return Err(err(format!("{} cells, expected {}", cells.len(), CSV_COLUMNS.len())));
            }
            let real = |i: usize| -> Result<f64> {
                cells[i].parse().map_err(|e| err(format!("{}: {e}", CSV_COLUMNS[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>> {
                if cells[i].is_empty() {
                    Ok(None)
                } else {
                    real(i).map(Some)
                }
            };
            records.push(Record {
                k: cells[0].parse().map_err(|e| err(format!("k: {e}")))?,
                eta: real(1)?,
                residual: opt(2)?,
                mean_err: opt(3)?,
                consensus_err: real(4)?,
                compression_err: opt(5)?,
                grad_norm_sq: opt(6)?,
                bits_cum: real(7)?,
            });
        }
        if !header_seen {
            return Err(MetricsError::Parse { line: 0, msg: "missing header".into() });
        }
        Ok(Trace { meta, records })
    }
}

/// Pointwise mean and sample standard deviation of a set of traces.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: Trace,
    pub sd: Trace,
}

/// Averages traces pointwise. Values are summed in sorted order, so the
/// result does not depend on the order of `traces`.
pub fn aggregate(traces: &[Trace]) -> Result<Aggregate> {
    let first = traces.first().ok_or(MetricsError::Empty)?;
    let len = first.records.len();
    for t in traces {
        if t.records.len() != len {
            return Err(MetricsError::LengthMismatch(len, t.records.len()));
        }
    }
    let count = traces.len() as f64;
    let stats = |values: &mut Vec<f64>| -> (f64, f64) {
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / count;
        if values.len() < 2 {
            return (mean, 0.0);
        }
        let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        dev.sort_by(f64::total_cmp);
        (mean, (dev.iter().sum::<f64>() / (count - 1.0)).sqrt())
    };
    let mut mean_records = Vec::with_capacity(len);
    let mut sd_records = Vec::with_capacity(len);
    for idx in 0..len {
        let k = first.records[idx].k;
        if traces.iter().any(|t| t.records[idx].k != k) {
            return Err(MetricsError::IterationMismatch(idx));
        }
        let field = |get: &dyn Fn(&Record) -> f64| {
            let mut v: Vec<f64> = traces.iter().map(|t| get(&t.records[idx])).collect();
            stats(&mut v)
        };
        let opt_field = |get: &dyn Fn(&Record) -> Option<f64>| -> (Option<f64>, Option<f64>) {
            let vals: Option<Vec<f64>> = traces.iter().map(|t| get(&t.records[idx])).collect();
            match vals {
                Some(mut v) => {
                    let (m, s) = stats(&mut v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            }
        };
        let eta = field(&|r| r.eta);
        let residual = opt_field(&|r| r.residual);
        let mean_err = opt_field(&|r| r.mean_err);
        let consensus = field(&|r| r.consensus_err);
        let compression = opt_field(&|r| r.compression_err);
        let grad = opt_field(&|r| r.grad_norm_sq);
        let bits = field(&|r| r.bits_cum);
        mean_records.push(Record {
            k,
            eta: eta.0,
            residual: residual.0,
            mean_err: mean_err.0,
            consensus_err: consensus.0,
            compression_err: compression.0,
            grad_norm_sq: grad.0,
            bits_cum: bits.0,
        });
        sd_records.push(Record {
            k,
            eta: eta.1,
            residual: residual.1,
            mean_err: mean_err.1,
            consensus_err: consensus.1,
            compression_err: compression.1,
            grad_norm_sq: grad.1,
            bits_cum: bits.1,
        });
    }
    let meta = |repetition| TraceMeta { repetition, ..first.meta.clone() };
    Ok(Aggregate {
        mean: Trace { meta: meta(Repetition::Mean), records: mean_records },
        sd: Trace { meta: meta(Repetition::StdDev), records: sd_records },
    })
}

/// Settings for [`transient_time`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransientOptions {
    /// Trailing moving-average window applied to both curves.
    pub window: usize,
    /// Multiplier on the centralized reference, `ρ_tol`.
    pub tolerance: f64,
}

impl Default for TransientOptions {
    fn default() -> Self {
        TransientOptions { window: 25, tolerance: 1.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransientTime {
    Reached(usize),
    NotReached,
}

impl TransientTime {
    pub fn iteration(self) -> Option<usize> {
        match self {
            TransientTime::Reached(k) => Some(k),
            TransientTime::NotReached => None,
        }
    }

    /// Orders "not reached" after every finite transient.
    pub fn sort_key(self) -> usize {
        self.iteration().unwrap_or(usize::MAX)
    }
}

impl std::fmt::Display for TransientTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransientTime::Reached(k) => write!(f, "{k}"),
            TransientTime::NotReached => f.write_str("not reached"),
        }
    }
}

fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// First iteration after which the decentralized error stays within the
/// centralized rate.
///
/// Strongly convex traces compare residuals against the envelope
/// `ρ_tol · max{c/(n k), r_cen(k)}`, where `c` is the largest value of
/// `n · k · r_cen(k)` over the tail half of the centralized run. Traces
/// without residuals compare running averages of `‖∇f(x̄)‖²` against
/// `ρ_tol · max{c/√(nK), A_cen(K)}` in the same way. Both curves are
/// smoothed with a trailing window first.
pub fn transient_time(dec: &Trace, cen: &Trace, opts: TransientOptions) -> Result<TransientTime> {
    if opts.window == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    if dec.records.len() != cen.records.len() {
        return Err(MetricsError::LengthMismatch(dec.records.len(), cen.records.len()));
    }
    if let Some(idx) = dec.records.iter().zip(&cen.records).position(|(a, b)| a.k != b.k) {
        return Err(MetricsError::IterationMismatch(idx));
    }
    let n = dec.meta.agents.max(1) as f64;
    let ks: Vec<f64> = dec.records.iter().map(|r| r.k as f64).collect();
    let (dec_curve, cen_curve, rate): (Vec<f64>, Vec<f64>, fn(f64, f64) -> f64) =
        match (dec.residuals(), cen.residuals()) {
            (Some(d), Some(c)) => (smooth(&d, opts.window), smooth(&c, opts.window), |n, k| 1.0 / (n * k)),
            _ => {
                let grab = |t: &Trace| -> Result<Vec<f64>> {
                    t.records.iter().map(|r| r.grad_norm_sq.ok_or(MetricsError::MissingMetric("grad_norm_sq"))).collect()
                };
                let running = |v: Vec<f64>| -> Vec<f64> {
                    let mut acc = 0.0;
                    v.iter()
                        .enumerate()
                        .map(|(i, x)| {
                            acc += x;
                            acc / (i + 1) as f64
                        })
                        .collect()
                };
                let d = running(smooth(&grab(dec)?, opts.window));
                let c = running(smooth(&grab(cen)?, opts.window));
                (d, c, |n, k| 1.0 / (n * (k + 1.0)).sqrt())
            }
        };
    let checked: Vec<usize> = (0..ks.len()).filter(|&i| ks[i] > 0.0).collect();
    if checked.is_empty() {
        return Ok(TransientTime::Reached(0));
    }
    let tail = &checked[checked.len() / 2..];
    let constant = tail.iter().map(|&i| cen_curve[i] / rate(n, ks[i])).fold(0.0, f64::max);
    let last_violation = checked.iter().rposition(|&i| {
        let bound = opts.tolerance * (constant * rate(n, ks[i])).max(cen_curve[i]);
        dec_curve[i] > bound
    });
    Ok(match last_violation {
        None => TransientTime::Reached(dec.records[checked[0]].k),
        Some(pos) if pos + 1 < checked.len() => TransientTime::Reached(dec.records[checked[pos + 1]].k),
        Some(_) => TransientTime::NotReached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ProblemKind, ProblemParams};

    fn problem() -> Problem {
        Problem::synthesize(ProblemParams {
            kind: ProblemKind::Quadratic,
            n: 2,
            p: 3,
            samples_per_agent: 5,
            heterogeneity: 0.0,
            rho: 0.1,
            noise_sigma: 0.0,
            seed: 0,
        })
        .unwrap()
    }

    fn spec(opt: &[f64]) -> MeasureSpec<'_> {
        MeasureSpec { optimum: Some(opt), residual: true, grad_norm: false }
    }

    fn meta(rep: usize) -> TraceMeta {
        TraceMeta { label: "t".into(), config_hash: "abc".into(), seed: 1, repetition: Repetition::Single(rep), agents: 4 }
    }

    fn trace(values: &[f64]) -> Trace {
        Trace {
            meta: meta(0),
            records: values
                .iter()
                .enumerate()
                .map(|(k, &v)| Record { k, residual: Some(v), consensus_err: v / 2.0, bits_cum: k as f64, ..Record::default() })
                .collect(),
        }
    }

    #[test]
    fn all_at_optimum() {
        let opt = [1.0, -2.0, 0.5];
        let x = Stack::from_rows(vec![opt.to_vec(), opt.to_vec()]);
        let r = measure(&x, &problem(), spec(&opt)).unwrap();
        assert_eq!(r.residual, Some(0.0));
        assert_eq!(r.consensus_err, 0.0);
    }

    #[test]
    fn symmetric_pair() {
        let opt = [1.0, -2.0, 0.5];
        let e = [0.3, 0.4, -1.2];
        let plus: Vec<f64> = opt.iter().zip(&e).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = opt.iter().zip(&e).map(|(a, b)| a - b).collect();
        let r = measure(&Stack::from_rows(vec![plus, minus]), &problem(), spec(&opt)).unwrap();
        let e_sq: f64 = e.iter().map(|v| v * v).sum();
        assert!(r.mean_err.unwrap() < 1e-30);
        assert!((r.consensus_err - e_sq).abs() < 1e-14);
        assert!((r.residual.unwrap() - e_sq).abs() < 1e-14);
    }

    #[test]
    fn residual_needs_optimum() {
        let x = Stack::zeros(2, 3);
        let err = measure(&x, &problem(), MeasureSpec { optimum: None, residual: true, grad_norm: false });
        assert!(matches!(err, Err(MetricsError::MissingOptimum)));
    }

    #[test]
    fn aggregate_single_and_pair() {
        let a = trace(&[1.0, 2.0, 3.0]);
        let agg = aggregate(std::slice::from_ref(&a)).unwrap();
        assert_eq!(agg.mean.records, a.records);
        assert!(agg.sd.records.iter().all(|r| r.residual == Some(0.0)));

        let b = trace(&[3.0, 4.0, 9.0]);
        let agg = aggregate(&[a, b]).unwrap();
        let means: Vec<f64> = agg.mean.residuals().unwrap();
        assert_eq!(means, vec![2.0, 3.0, 6.0]);
        // two samples: sd = |a − b| / √2
        let sds = agg.sd.residuals().unwrap();
        for (sd, diff) in sds.iter().zip([2.0f64, 2.0, 6.0]) {
            assert!((sd - diff / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
        let err = aggregate(&[trace(&[1.0, 2.0]), trace(&[1.0])]);
        assert!(matches!(err, Err(MetricsError::LengthMismatch(2, 1))));
    }

    #[test]
    fn identical_curves_have_short_transient() {
        let values: Vec<f64> = (0..400).map(|k| 5.0 / (k as f64 + 1.0) + 0.3 * ((k * 7 % 11) as f64) / (k as f64 + 1.0)).collect();
        let t = trace(&values);
        let opts = TransientOptions::default();
        let tt = transient_time(&t, &t, opts).unwrap();
        assert!(tt.iteration().unwrap() <= opts.window);
    }

    #[test]
    fn curve_above_bound_never_reaches() {
        let cen: Vec<f64> = (0..300).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let dec: Vec<f64> = vec![1.0; 300];
        let tt = transient_time(&trace(&dec), &trace(&cen), TransientOptions::default()).unwrap();
        assert_eq!(tt, TransientTime::NotReached);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = trace(&[1.5e-3, 2.0, 3.25e-17]);
        t.records[1].compression_err = Some(0.1);
        t.records[2].residual = None;
        let text = t.to_csv_string();
        let back = Trace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let err = Trace::read_csv("k,eta\n0,1\n".as_bytes());
        assert!(matches!(err, Err(MetricsError::Parse { line: 1, .. })));
    }
}
