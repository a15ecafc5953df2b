//! Fitting the combination weights of the similarity indicators and picking
//! the source combination with the highest combined score.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{merge_domains, Domain};
use crate::error::{Error, Result};
use crate::similarity::{LabelPolicy, Scorer, SimilarityTriple};

/// Separator between domain names in a serialized combination.
pub const COMBINATION_SEPARATOR: char = '+';

/// Upper bound on the number of sources for exhaustive subset enumeration.
pub const MAX_ENUMERATED_SOURCES: usize = 20;

/// Minimum number of sweep records per target for a fit.
pub const MIN_RECORDS_PER_TARGET: usize = 4;

pub fn combination_key(names: &[String]) -> String {
    names.join(&COMBINATION_SEPARATOR.to_string())
}

pub fn parse_combination(key: &str) -> Result<Vec<String>> {
    let names: Vec<String> = key.split(COMBINATION_SEPARATOR).map(str::to_owned).collect();
    if names.iter().any(String::is_empty) {
        return Err(Error::Parse(format!("empty domain name in combination {key:?}")));
    }
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != names.len() {
        return Err(Error::Parse(format!("duplicate domain in combination {key:?}")));
    }
    Ok(names)
}

/// One trained combination: its similarity to the target and the observed F1.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub target: String,
    pub combination: Vec<String>,
    pub triple: SimilarityTriple,
    pub performance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    target: String,
    combination: String,
    tvc: f64,
    tis: f64,
    lo: f64,
    f1: f64,
}

impl SweepRecord {
    fn validate(&self) -> Result<()> {
        let t = &self.triple;
        for (name, v) in [("tvc", t.tvc), ("tis", t.tis), ("lo", t.lo), ("f1", self.performance)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} of {}/{}", self.target, combination_key(&self.combination))));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name}={v} outside [0, 1]")));
            }
        }
        if self.combination.is_empty() {
            return Err(Error::Invalid("empty combination".into()));
        }
        Ok(())
    }
}

/// Reads `target,combination,tvc,tis,lo,f1` rows.
pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SweepRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedLine {
            line: i + 2,
            message: e.to_string(),
        })?;
        let combination = parse_combination(&row.combination)?;
        let record = SweepRecord {
            triple: SimilarityTriple {
                tvc: row.tvc,
                tis: row.tis,
                lo: row.lo,
                source_name: row.combination,
                target_name: row.target.clone(),
            },
            target: row.target,
            combination,
            performance: row.f1,
        };
        record.validate().map_err(|e| Error::MalformedLine {
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(writer: W, records: &[SweepRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(SweepRow {
            target: r.target.clone(),
            combination: combination_key(&r.combination),
            tvc: r.triple.tvc,
            tis: r.triple.tis,
            lo: r.triple.lo,
            f1: r.performance,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub w: f64,
    pub b: f64,
}

/// Simplex weights of the three indicators plus the per-target linear map
/// from combined score to performance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub theta: [f64; 3],
    pub fits: BTreeMap<String, LinearFit>,
    pub residual: f64,
}

impl CombinationWeights {
    pub fn from_theta(theta: [f64; 3]) -> Self {
        CombinationWeights {
            theta,
            fits: BTreeMap::new(),
            residual: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: CombinationWeights =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Invalid(format!("theta {:?} has a negative or non-finite entry", self.theta)));
        }
        let sum: f64 = self.theta.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("theta sums to {sum}, not 1")));
        }
        for (target, fit) in &self.fits {
            if !(fit.w > 0.0 && fit.b >= 0.0 && fit.w.is_finite() && fit.b.is_finite()) {
                return Err(Error::Invalid(format!("fit for {target:?} violates w>0, b>=0")));
            }
        }
        Ok(())
    }
}

pub fn combined_score(weights: &CombinationWeights, triple: &SimilarityTriple) -> f64 {
    theta_score(&weights.theta, triple)
}

/// Performance predicted for `target` by its fitted linear map.
pub fn predicted_performance(weights: &CombinationWeights, target: &str, triple: &SimilarityTriple) -> Result<f64> {
    let fit = weights
        .fits
        .get(target)
        .ok_or_else(|| Error::Invalid(format!("no linear fit for target {target:?}")))?;
    Ok(fit.w * combined_score(weights, triple) + fit.b)
}

fn theta_score(theta: &[f64; 3], triple: &SimilarityTriple) -> f64 {
    theta[0] * triple.tvc + theta[1] * triple.tis + theta[2] * triple.lo
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub step: f64,
    pub iterations: usize,
    /// Lower bound enforced on every `w`.
    pub min_w: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            step: 0.05,
            iterations: 5000,
            min_w: 1e-6,
        }
    }
}

/// Weights plus the objective value after every accepted iteration.
#[derive(Clone, Debug)]
pub struct FitTrace {
    pub weights: CombinationWeights,
    pub loss_log: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: [f64; 3]) -> [f64; 3] {
    let mut u = v;
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            shift = candidate;
        }
    }
    let mut out = v.map(|x| (x - shift).max(0.0));
    // Re-normalize the rounding drift so the sum is 1 to machine precision.
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

struct Problem<'a> {
    features: Vec<[f64; 3]>,
    targets: Vec<usize>,
    performance: Vec<f64>,
    names: Vec<&'a str>,
}

impl Problem<'_> {
    fn objective(&self, theta: &[f64; 3], lin: &[(f64, f64)]) -> f64 {
        let n = self.features.len() as f64;
        self.features
            .iter()
            .zip(&self.targets)
            .zip(&self.performance)
            .map(|((x, &t), p)| {
                let c = theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2];
                let r = lin[t].0 * c + lin[t].1 - p;
                r * r
            })
            .sum::<f64>()
            / n
    }

    fn gradient(&self, theta: &[f64; 3], lin: &[(f64, f64)]) -> ([f64; 3], Vec<(f64, f64)>) {
        let scale = 2.0 / self.features.len() as f64;
        let mut g_theta = [0.0; 3];
        let mut g_lin = vec![(0.0, 0.0); lin.len()];
        for ((x, &t), p) in self.features.iter().zip(&self.targets).zip(&self.performance) {
            let c = theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2];
            let (w, b) = lin[t];
            let r = scale * (w * c + b - p);
            for k in 0..3 {
                g_theta[k] += r * w * x[k];
            }
            g_lin[t].0 += r * c;
            g_lin[t].1 += r;
        }
        (g_theta, g_lin)
    }
}

/// Factor applied to the step after an accepted iteration.
const STEP_GROWTH: f64 = 1.5;

pub fn fit_weights(records: &[SweepRecord], config: &FitConfig) -> Result<CombinationWeights> {
    fit_weights_traced(records, config).map(|t| t.weights)
}

/// Full-batch projected gradient descent on the mean squared error between
/// `w_t * (theta . triple) + b_t` and the observed performance, with `theta`
/// shared across targets. Each iteration starts from the previous step grown
/// by [`STEP_GROWTH`] and halves it until the objective does not increase, so
/// the recorded objective is monotone.
pub fn fit_weights_traced(records: &[SweepRecord], config: &FitConfig) -> Result<FitTrace> {
    if !(config.step > 0.0 && config.min_w > 0.0) {
        return Err(Error::Invalid("fit step and min_w must be positive".into()));
    }
    let mut by_target: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        r.validate()?;
        *by_target.entry(r.target.as_str()).or_insert(0) += 1;
    }
    if by_target.is_empty() {
        return Err(Error::Invalid("no sweep records to fit".into()));
    }
    if let Some((target, &count)) = by_target.iter().find(|(_, &c)| c < MIN_RECORDS_PER_TARGET) {
        return Err(Error::Underdetermined {
            target: target.to_string(),
            count,
            required: MIN_RECORDS_PER_TARGET,
        });
    }
    let names: Vec<&str> = by_target.keys().copied().collect();
    let problem = Problem {
        features: records.iter().map(|r| r.triple.as_array()).collect(),
        targets: records
            .iter()
            .map(|r| names.binary_search(&r.target.as_str()).expect("target indexed"))
            .collect(),
        performance: records.iter().map(|r| r.performance).collect(),
        names,
    };

    let mut theta = [1.0 / 3.0; 3];
    let mut lin = vec![(1.0, 0.0); problem.names.len()];
    let mut loss = problem.objective(&theta, &lin);
    let mut loss_log = vec![loss];
    let mut step = config.step;
    for _ in 0..config.iterations {
        let (g_theta, g_lin) = problem.gradient(&theta, &lin);
        let mut accepted = false;
        while step > 1e-12 {
            let cand_theta = project_simplex([
                theta[0] - step * g_theta[0],
                theta[1] - step * g_theta[1],
                theta[2] - step * g_theta[2],
            ]);
            let cand_lin: Vec<(f64, f64)> = lin
                .iter()
                .zip(&g_lin)
                .map(|(&(w, b), &(gw, gb))| {
                    ((w - step * gw).max(config.min_w), (b - step * gb).max(0.0))
                })
                .collect();
            let cand_loss = problem.objective(&cand_theta, &cand_lin);
            if cand_loss <= loss {
                theta = cand_theta;
                lin = cand_lin;
                loss = cand_loss;
                accepted = true;
                step *= STEP_GROWTH;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        loss_log.push(loss);
    }

    let fits = problem
        .names
        .iter()
        .zip(&lin)
        .map(|(name, &(w, b))| (name.to_string(), LinearFit { w, b }))
        .collect();
    Ok(FitTrace {
        weights: CombinationWeights {
            theta,
            fits,
            residual: loss,
        },
        loss_log,
    })
}

/// Fits one weight set per target, each from the records of every other
/// target only, so no target's own results inform its selection.
pub fn fit_weights_held_out(
    records: &[SweepRecord],
    config: &FitConfig,
) -> Result<BTreeMap<String, CombinationWeights>> {
    let targets: std::collections::BTreeSet<&str> =
        records.iter().map(|r| r.target.as_str()).collect();
    if targets.len() < 2 {
        return Err(Error::Invalid(
            "held-out fitting needs records for at least 2 targets".into(),
        ));
    }
    targets
        .iter()
        .map(|&t| {
            let rest: Vec<SweepRecord> =
                records.iter().filter(|r| r.target != t).cloned().collect();
            fit_weights(&rest, config).map(|w| (t.to_string(), w))
        })
        .collect()
}

/// A candidate source combination and its similarity to the target.
pub type Candidate = (Vec<String>, SimilarityTriple);

/// Ordering of candidates by a score: higher score first, then fewer
/// domains, then lexicographic names.
pub fn rank_candidates<F>(candidates: &[Candidate], score: F) -> Result<&Candidate>
where
    F: Fn(&SimilarityTriple) -> f64,
{
    candidates
        .iter()
        .map(|c| (score(&c.1), c))
        .min_by(|(sa, a), (sb, b)| {
            sb.partial_cmp(sa)
                .unwrap_or(Ordering::Equal)
                .then(a.0.len().cmp(&b.0.len()))
                .then_with(|| a.0.cmp(&b.0))
        })
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Invalid("no candidate combinations".into()))
}

pub fn select_combination(candidates: &[Candidate], weights: &CombinationWeights) -> Result<Vec<String>> {
    rank_candidates(candidates, |t| combined_score(weights, t)).map(|c| c.0.clone())
}

/// Every non-empty subset of `sources`, merged and scored against `target`.
/// Subsets are listed by size, then in source order.
pub fn enumerate_candidates(sources: &[&Domain], target: &Domain, universe: &[&Domain]) -> Result<Vec<Candidate>> {
    let scorer = Scorer::new(universe, LabelPolicy::Slots)?;
    enumerate_candidates_with(sources, target, &scorer)
}

pub fn enumerate_candidates_with(sources: &[&Domain], target: &Domain, scorer: &Scorer) -> Result<Vec<Candidate>> {
    subsets(sources.len())?
        .into_iter()
        .map(|subset| {
            let parts: Vec<&Domain> = subset.iter().map(|&i| sources[i]).collect();
            let names: Vec<String> = parts.iter().map(|d| d.name.clone()).collect();
            let merged = merge_domains(&parts, &combination_key(&names))?;
            Ok((names, scorer.triple(&merged, target)?))
        })
        .collect()
}

/// Index subsets of `0..m`, ordered by size and then lexicographically.
pub fn subsets(m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > MAX_ENUMERATED_SOURCES {
        return Err(Error::Invalid(format!(
            "need between 1 and {MAX_ENUMERATED_SOURCES} sources, got {m}"
        )));
    }
    let mut all: Vec<Vec<usize>> = (1u32..(1u32 << m))
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple(tvc: f64, tis: f64, lo: f64) -> SimilarityTriple {
        SimilarityTriple {
            tvc,
            tis,
            lo,
            source_name: "s".into(),
            target_name: "t".into(),
        }
    }

    fn record(target: &str, i: usize, t: SimilarityTriple, p: f64) -> SweepRecord {
        SweepRecord {
            target: target.into(),
            combination: vec![format!("d{i}")],
            triple: t,
            performance: p,
        }
    }

    #[test]
    fn combined_score_examples() {
        let w = CombinationWeights::from_theta([1.0, 0.0, 0.0]);
        assert_eq!(combined_score(&w, &triple(0.7, 0.2, 0.9)), 0.7);
        let w = CombinationWeights::from_theta([1.0 / 3.0; 3]);
        assert_abs_diff_eq!(combined_score(&w, &triple(0.3, 0.3, 0.3)), 0.3, epsilon = 1e-15);
        let w = CombinationWeights::from_theta([0.2, 0.3, 0.5]);
        assert_abs_diff_eq!(combined_score(&w, &triple(0.5, 0.5, 0.5)), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        assert_eq!(project_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        let p = project_simplex([0.5, 0.5, 0.5]);
        for x in p {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = project_simplex([0.9, 0.3, -2.0]);
        assert_abs_diff_eq!(p[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.2, epsilon = 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn single_feature_plant_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records: Vec<SweepRecord> = (0..31)
            .map(|i| {
                let t = triple(rng.gen(), rng.gen(), rng.gen());
                let p = 0.5 * t.tvc + 0.25;
                record("t", i, t, p)
            })
            .collect();
        let w = fit_weights(&records, &FitConfig::default()).unwrap();
        assert_abs_diff_eq!(w.theta[0], 1.0, epsilon = 1e-6);
        let fit = w.fits["t"];
        assert_abs_diff_eq!(fit.w, 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.b, 0.25, epsilon = 1e-4);
        assert!(w.residual < 1e-8, "residual {}", w.residual);
    }

    #[test]
    fn identical_triples_fit_the_mean() {
        let ps = [0.2, 0.4, 0.5, 0.7, 0.9];
        let records: Vec<SweepRecord> = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| record("t", i, triple(0.4, 0.6, 0.8), p))
            .collect();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        let variance = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / ps.len() as f64;
        let w = fit_weights(&records, &FitConfig::default()).unwrap();
        assert_abs_diff_eq!(w.residual, variance, epsilon = 1e-9);
    }

    #[test]
    fn too_few_records_is_underdetermined() {
        let records: Vec<SweepRecord> = (0..3).map(|i| record("t", i, triple(0.1, 0.2, 0.3), 0.5)).collect();
        assert!(matches!(
            fit_weights(&records, &FitConfig::default()),
            Err(Error::Underdetermined { count: 3, .. })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut records: Vec<SweepRecord> = (0..5).map(|i| record("t", i, triple(0.1, 0.2, 0.3), 0.5)).collect();
        records[2].triple.tis = f64::NAN;
        assert!(matches!(fit_weights(&records, &FitConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn loss_log_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<SweepRecord> = (0..40)
            .map(|i| {
                let t = triple(rng.gen(), rng.gen(), rng.gen());
                let p: f64 = rng.gen();
                record(if i % 2 == 0 { "a" } else { "b" }, i, t, p)
            })
            .collect();
        let trace = fit_weights_traced(&records, &FitConfig::default()).unwrap();
        for pair in trace.loss_log.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        trace.weights.validate().unwrap();
    }

    #[test]
    fn held_out_fit_excludes_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<SweepRecord> = (0..24)
            .map(|i| {
                let t = triple(rng.gen(), rng.gen(), rng.gen());
                let p = 0.5 * t.lo + 0.1;
                record(["a", "b", "c"][i % 3], i, t, p)
            })
            .collect();
        let per = fit_weights_held_out(&records, &FitConfig::default()).unwrap();
        assert_eq!(per.len(), 3);
        for (target, w) in &per {
            assert!(!w.fits.contains_key(target));
            assert!(w.theta[2] > 0.99);
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let w = CombinationWeights::from_theta([1.0, 0.0, 0.0]);
        let single = vec![(vec!["a".to_string()], triple(0.1, 0.0, 0.0))];
        assert_eq!(select_combination(&single, &w).unwrap(), ["a"]);
        let tied = vec![
            (vec!["a".into(), "b".into(), "c".into()], triple(0.5, 0.1, 0.1)),
            (vec!["c".into(), "d".into()], triple(0.5, 0.9, 0.9)),
            (vec!["b".into(), "d".into()], triple(0.5, 0.9, 0.9)),
        ];
        assert_eq!(select_combination(&tied, &w).unwrap(), ["b", "d"]);
        assert!(select_combination(&[], &w).is_err());
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subsets(2).unwrap(), vec![vec![0], vec![1], vec![0, 1]]);
        assert_eq!(subsets(5).unwrap().len(), 31);
        assert!(subsets(0).is_err());
        assert!(subsets(21).is_err());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let records = vec![SweepRecord {
            target: "t".into(),
            combination: vec!["a".into(), "b".into()],
            triple: SimilarityTriple {
                tvc: 0.5,
                tis: 0.25,
                lo: 1.0,
                source_name: "a+b".into(),
                target_name: "t".into(),
            },
            performance: 0.75,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "target,combination,tvc,tis,lo,f1\nt,a+b,0.5,0.25,1.0,0.75\n");
        assert_eq!(read_sweep_csv(text.as_bytes()).unwrap(), records);
    }

    #[test]
    fn sweep_csv_rejects_bad_rows() {
        assert!(read_sweep_csv("target,combination,tvc,tis,lo,f1\nt,a+a,0.5,0.2,1,0.7\n".as_bytes()).is_err());
        assert!(read_sweep_csv("target,combination,tvc,tis,lo,f1\nt,a,1.5,0.2,1,0.7\n".as_bytes()).is_err());
        assert!(read_sweep_csv("target,combination,tvc,tis,lo,f1\nt,a,x,0.2,1,0.7\n".as_bytes()).is_err());
    }

    #[test]
    fn weights_json_shape() {
        let mut w = CombinationWeights::from_theta([0.2, 0.3, 0.5]);
        w.fits.insert("t".into(), LinearFit { w: 0.6, b: 0.1 });
        let value: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        assert_eq!(value["theta"][2], 0.5);
        assert_eq!(value["fits"]["t"]["w"], 0.6);
        assert!(value["residual"].is_number());
        assert_eq!(CombinationWeights::from_json(&w.to_json()).unwrap(), w);
        assert!(CombinationWeights::from_json(r#"{"theta":[0.5,0.5,0.5],"fits":{},"residual":0}"#).is_err());
    }
}
