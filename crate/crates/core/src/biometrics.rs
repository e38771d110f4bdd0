//! Genuine/imposter score sets and verification metrics: EER, FMR100,
//! FMR1000, FDR, and score-distribution statistics.
//!
//! Conventions: scores are similarities (higher = more alike); a comparison
//! at threshold tau declares a match when `score >= tau`. So
//! `FMR(tau)` is the fraction of imposter scores `>= tau` and `FNMR(tau)`
//! the fraction of genuine scores `< tau`. Sweeps evaluate every distinct
//! regime: the sorted union of observed scores plus one threshold above the
//! maximum.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::numerics::{Tensor, TensorError};
use crate::textnum;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("score set is empty")]
    EmptySet,
    #[error("need at least two distinct labels with a repeated label among them")]
    NoGenuinePairs,
    #[error("a single label admits no imposter pairs")]
    SingleClass,
    #[error("both score distributions are degenerate (zero variance)")]
    DegenerateScores,
    #[error("need at least two scores per set, got {genuine} genuine / {imposter} imposter")]
    TooFewScores { genuine: usize, imposter: usize },
    #[error("cosine similarity of a (near-)zero vector")]
    ZeroVector,
    #[error("FMR cap {0} outside (0, 1)")]
    BadCap(f64),
    #[error("{context}: lengths differ ({a} vs {b})")]
    LengthMismatch {
        context: &'static str,
        a: usize,
        b: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Similarity score collections for genuine (same identity) and imposter
/// (different identity) comparisons.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

/// The eight metrics reported per evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub fmr100: f64,
    pub fmr1000: f64,
    pub genuine_mean: f64,
    pub genuine_std: f64,
    pub imposter_mean: f64,
    pub imposter_std: f64,
    pub fdr: f64,
}

/// `(a . b) / (||a|| ||b||)`, clamped into [-1, 1].
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Tensor(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }));
    }
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(MetricError::ZeroVector);
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Build score sets from labeled embeddings: genuine scores are all
/// intra-label pairs; imposter scores are inter-label pairs sampled
/// uniformly without replacement to match the genuine count (or all of
/// them, when fewer exist).
pub fn build_score_sets<R: Rng>(
    embeddings: &Tensor,
    labels: &[usize],
    rng: &mut R,
) -> Result<ScoreSet, MetricError> {
    if embeddings.rank() != 2 || embeddings.shape()[0] != labels.len() {
        return Err(MetricError::LengthMismatch {
            context: "embeddings vs labels",
            a: embeddings.shape().first().copied().unwrap_or(0),
            b: labels.len(),
        });
    }
    let n = labels.len();
    let rows: Vec<Tensor> = (0..n)
        .map(|i| Tensor::from_vec(embeddings.row(i).unwrap().to_vec()).unwrap())
        .collect();

    let mut genuine = Vec::new();
    let mut imposter_pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                genuine.push(cosine_similarity(&rows[i], &rows[j])?);
            } else {
                imposter_pairs.push((i, j));
            }
        }
    }
    if genuine.is_empty() {
        return Err(MetricError::NoGenuinePairs);
    }
    if imposter_pairs.is_empty() {
        return Err(MetricError::SingleClass);
    }

    let k = genuine.len().min(imposter_pairs.len());
    // partial Fisher-Yates: the first k entries become the sample
    for i in 0..k {
        let j = rng.random_range(i..imposter_pairs.len());
        imposter_pairs.swap(i, j);
    }
    let mut imposter = Vec::with_capacity(k);
    for &(i, j) in &imposter_pairs[..k] {
        imposter.push(cosine_similarity(&rows[i], &rows[j])?);
    }
    Ok(ScoreSet { genuine, imposter })
}

/// Sweep thresholds (every distinct operating regime) with the shared
/// FMR/FNMR convention.
struct Sweep {
    genuine_sorted: Vec<f64>,
    imposter_sorted: Vec<f64>,
    candidates: Vec<f64>,
}

impl Sweep {
    fn new(s: &ScoreSet) -> Result<Self, MetricError> {
        if s.genuine.is_empty() || s.imposter.is_empty() {
            return Err(MetricError::EmptySet);
        }
        let mut genuine_sorted = s.genuine.clone();
        let mut imposter_sorted = s.imposter.clone();
        genuine_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        imposter_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut candidates: Vec<f64> = genuine_sorted
            .iter()
            .chain(imposter_sorted.iter())
            .copied()
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let above_max = candidates.last().unwrap() + 1.0;
        candidates.push(above_max);
        Ok(Sweep {
            genuine_sorted,
            imposter_sorted,
            candidates,
        })
    }

    fn fmr(&self, tau: f64) -> f64 {
        let below = self.imposter_sorted.partition_point(|&x| x < tau);
        (self.imposter_sorted.len() - below) as f64 / self.imposter_sorted.len() as f64
    }

    fn fnmr(&self, tau: f64) -> f64 {
        let below = self.genuine_sorted.partition_point(|&x| x < tau);
        below as f64 / self.genuine_sorted.len() as f64
    }
}

/// Equal error rate: at the threshold minimizing |FMR - FNMR| (ties broken
/// toward the smaller threshold), return the midpoint (FMR + FNMR) / 2.
pub fn eer(s: &ScoreSet) -> Result<f64, MetricError> {
    let sweep = Sweep::new(s)?;
    let mut best_gap = f64::INFINITY;
    let mut best = 0.0;
    for &tau in &sweep.candidates {
        let fmr = sweep.fmr(tau);
        let fnmr = sweep.fnmr(tau);
        let gap = (fmr - fnmr).abs();
        if gap < best_gap {
            best_gap = gap;
            best = 0.5 * (fmr + fnmr);
        }
    }
    Ok(best)
}

/// Lowest FNMR subject to FMR <= `fmr_cap` (FMR100 at 1%, FMR1000 at 0.1%).
pub fn fnmr_at_fmr(s: &ScoreSet, fmr_cap: f64) -> Result<f64, MetricError> {
    if !(0.0 < fmr_cap && fmr_cap < 1.0) {
        return Err(MetricError::BadCap(fmr_cap));
    }
    let sweep = Sweep::new(s)?;
    let mut best = f64::INFINITY;
    for &tau in &sweep.candidates {
        if sweep.fmr(tau) <= fmr_cap {
            best = best.min(sweep.fnmr(tau));
        }
    }
    // the above-max threshold always satisfies the cap (FMR = 0)
    Ok(best)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/N) standard deviation.
fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Fisher discriminant ratio:
/// `(mu_gen - mu_imp)^2 / (var_gen + var_imp)` with population variances.
pub fn fdr(s: &ScoreSet) -> Result<f64, MetricError> {
    if s.genuine.len() < 2 || s.imposter.len() < 2 {
        return Err(MetricError::TooFewScores {
            genuine: s.genuine.len(),
            imposter: s.imposter.len(),
        });
    }
    let (sg, si) = (pop_std(&s.genuine), pop_std(&s.imposter));
    if sg == 0.0 && si == 0.0 {
        return Err(MetricError::DegenerateScores);
    }
    let dm = mean(&s.genuine) - mean(&s.imposter);
    Ok(dm * dm / (sg * sg + si * si))
}

/// Build score sets from labeled embeddings and compute every metric.
pub fn eval_report<R: Rng>(
    embeddings: &Tensor,
    labels: &[usize],
    rng: &mut R,
) -> Result<EvalReport, MetricError> {
    let scores = build_score_sets(embeddings, labels, rng)?;
    report_from_scores(&scores)
}

pub fn report_from_scores(scores: &ScoreSet) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        eer: eer(scores)?,
        fmr100: fnmr_at_fmr(scores, 0.01)?,
        fmr1000: fnmr_at_fmr(scores, 0.001)?,
        genuine_mean: mean(&scores.genuine),
        genuine_std: pop_std(&scores.genuine),
        imposter_mean: mean(&scores.imposter),
        imposter_std: pop_std(&scores.imposter),
        fdr: fdr(scores)?,
    })
}

/// Histogram of both score sets over `bins` uniform bins spanning [-1, 1];
/// values on the top edge land in the last bin.
pub fn score_histogram(s: &ScoreSet, bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let width = 2.0 / bins as f64;
    let mut rows: Vec<(f64, f64, usize, usize)> = (0..bins)
        .map(|i| (-1.0 + i as f64 * width, -1.0 + (i + 1) as f64 * width, 0, 0))
        .collect();
    let index = |x: f64| (((x + 1.0) / width) as usize).min(bins - 1);
    for &g in &s.genuine {
        rows[index(g)].2 += 1;
    }
    for &i in &s.imposter {
        rows[index(i)].3 += 1;
    }
    rows
}

impl ScoreSet {
    /// Two-column CSV `set,score` with `set` in {genuine, imposter}.
    pub fn save_csv(&self, path: &Path) -> Result<(), MetricError> {
        let io_err = |source| MetricError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = String::from("set,score\n");
        for &g in &self.genuine {
            out.push_str(&format!("genuine,{}\n", textnum::fmt_f64(g)));
        }
        for &i in &self.imposter {
            out.push_str(&format!("imposter,{}\n", textnum::fmt_f64(i)));
        }
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        f.write_all(out.as_bytes()).map_err(io_err)
    }

    pub fn load_csv(path: &Path) -> Result<ScoreSet, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |line: usize, reason: String| MetricError::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "set,score" => {}
            Some((_, header)) => {
                return Err(parse_err(1, format!("bad header {header:?}")));
            }
            None => return Err(parse_err(1, "no header".into())),
        }
        let mut set = ScoreSet::default();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (kind, value) = line
                .split_once(',')
                .ok_or_else(|| parse_err(line_no, "expected two columns".into()))?;
            let score = textnum::parse_f64(value.trim())
                .map_err(|e| parse_err(line_no, e))?;
            match kind.trim() {
                "genuine" => set.genuine.push(score),
                "imposter" => set.imposter.push(score),
                other => return Err(parse_err(line_no, format!("unknown set {other:?}"))),
            }
        }
        Ok(set)
    }
}

impl EvalReport {
    pub const FIELDS: [&'static str; 8] = [
        "eer",
        "fmr100",
        "fmr1000",
        "genuine_mean",
        "genuine_std",
        "imposter_mean",
        "imposter_std",
        "fdr",
    ];

    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "eer" => Some(self.eer),
            "fmr100" => Some(self.fmr100),
            "fmr1000" => Some(self.fmr1000),
            "genuine_mean" => Some(self.genuine_mean),
            "genuine_std" => Some(self.genuine_std),
            "imposter_mean" => Some(self.imposter_mean),
            "imposter_std" => Some(self.imposter_std),
            "fdr" => Some(self.fdr),
            _ => None,
        }
    }

    /// Flat JSON object, one key per metric.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, name) in Self::FIELDS.iter().enumerate() {
            let sep = if i + 1 == Self::FIELDS.len() { "" } else { "," };
            out.push_str(&format!(
                "  \"{}\": {}{}\n",
                name,
                textnum::fmt_f64(self.field(name).unwrap()),
                sep
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, self.to_json()).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<EvalReport, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetricError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |line: usize, reason: String| MetricError::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        let mut values = std::collections::BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim().trim_end_matches(',');
            if line.is_empty() || line == "{" || line == "}" {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| parse_err(idx + 1, "expected \"key\": value".into()))?;
            let key = key.trim().trim_matches('"').to_string();
            let value = textnum::parse_f64(value.trim()).map_err(|e| parse_err(idx + 1, e))?;
            values.insert(key, value);
        }
        let get = |name: &str| {
            values
                .get(name)
                .copied()
                .ok_or_else(|| parse_err(0, format!("missing field {name:?}")))
        };
        Ok(EvalReport {
            eer: get("eer")?,
            fmr100: get("fmr100")?,
            fmr1000: get("fmr1000")?,
            genuine_mean: get("genuine_mean")?,
            genuine_std: get("genuine_std")?,
            imposter_mean: get("imposter_mean")?,
            imposter_std: get("imposter_std")?,
            fdr: get("fdr")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn scores(genuine: &[f64], imposter: &[f64]) -> ScoreSet {
        ScoreSet {
            genuine: genuine.to_vec(),
            imposter: imposter.to_vec(),
        }
    }

    #[test]
    fn cosine_examples() {
        let a = Tensor::from_vec(vec![0.3, -0.4, 1.0]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let e1 = Tensor::from_vec(vec![1.0, 0.0]).unwrap();
        let e2 = Tensor::from_vec(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);

        let d = Tensor::from_vec(vec![1.0, 1.0]).unwrap();
        assert!((cosine_similarity(&e1, &d).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-12);

        let z = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&e1, &z),
            Err(MetricError::ZeroVector)
        ));
    }

    #[test]
    fn eer_examples() {
        // fully separated
        let s = scores(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(eer(&s).unwrap(), 0.0);

        // crossing at tau = 0.65: FMR = FNMR = 0.25
        let s = scores(&[0.9, 0.8, 0.7, 0.6], &[0.1, 0.2, 0.3, 0.65]);
        assert!((eer(&s).unwrap() - 0.25).abs() < 1e-12);

        // identical multisets are pure chance
        let s = scores(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]);
        assert!((eer(&s).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fnmr_at_fmr_examples() {
        let s = scores(&[0.9, 0.8, 0.2], &[0.3, 0.25, 0.1]);
        // cap 1%: only thresholds above 0.3 qualify, losing the 0.2 genuine
        assert!((fnmr_at_fmr(&s, 0.01).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let sep = scores(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(fnmr_at_fmr(&sep, 0.01).unwrap(), 0.0);
        assert_eq!(fnmr_at_fmr(&sep, 0.5).unwrap(), 0.0);

        // a nearly-unconstrained cap can only do at least as well as the
        // EER operating point
        let e = eer(&s).unwrap();
        assert!(fnmr_at_fmr(&s, 0.999).unwrap() <= e + 1e-12);

        assert!(fnmr_at_fmr(&s, 0.0).is_err());
        assert!(fnmr_at_fmr(&s, 1.0).is_err());
    }

    #[test]
    fn fmr1000_at_least_fmr100() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g: Vec<f64> = (0..40).map(|_| rng.random_range(-0.2..1.0)).collect();
            let i: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..0.6)).collect();
            let s = scores(&g, &i);
            assert!(fnmr_at_fmr(&s, 0.001).unwrap() >= fnmr_at_fmr(&s, 0.01).unwrap() - 1e-15);
        }
    }

    #[test]
    fn fdr_published_moment_anchors() {
        // moments quoted to three decimals reproduce the published FDRs
        // within +/- 0.6
        let synth = |mg: f64, sg: f64, mi: f64, si: f64| {
            // two-point distributions with exactly the requested moments
            scores(&[mg - sg, mg + sg], &[mi - si, mi + si])
        };
        let s = synth(0.621, 0.102, 0.024, 0.075);
        assert!((fdr(&s).unwrap() - 22.172).abs() <= 0.6, "{}", fdr(&s).unwrap());
        let s = synth(0.708, 0.099, 0.003, 0.070);
        assert!((fdr(&s).unwrap() - 33.301).abs() <= 0.6, "{}", fdr(&s).unwrap());
    }

    #[test]
    fn fdr_edge_cases() {
        let s = scores(&[0.5, 0.7], &[0.5, 0.7]);
        assert_eq!(fdr(&s).unwrap(), 0.0);
        let s = scores(&[0.5, 0.5], &[0.5, 0.5]);
        assert!(matches!(fdr(&s), Err(MetricError::DegenerateScores)));
        let s = scores(&[0.5], &[0.1, 0.2]);
        assert!(matches!(fdr(&s), Err(MetricError::TooFewScores { .. })));
    }

    #[test]
    fn eer_invariant_under_strictly_increasing_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let i: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = scores(&g, &i);
            let cube = scores(
                &g.iter().map(|x| x.powi(3)).collect::<Vec<_>>(),
                &i.iter().map(|x| x.powi(3)).collect::<Vec<_>>(),
            );
            let atan = scores(
                &g.iter().map(|x| x.atan()).collect::<Vec<_>>(),
                &i.iter().map(|x| x.atan()).collect::<Vec<_>>(),
            );
            assert_eq!(eer(&s).unwrap(), eer(&cube).unwrap());
            assert_eq!(eer(&s).unwrap(), eer(&atan).unwrap());
        }
    }

    #[test]
    fn fdr_invariant_under_affine_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let g: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let i: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..0.3)).collect();
        let base = fdr(&scores(&g, &i)).unwrap();
        for &(a, b) in &[(2.0, 0.0), (1.0, 5.0), (-3.0, 1.0), (0.25, -2.0)] {
            let mapped = scores(
                &g.iter().map(|x| a * x + b).collect::<Vec<_>>(),
                &i.iter().map(|x| a * x + b).collect::<Vec<_>>(),
            );
            let f = fdr(&mapped).unwrap();
            assert!((f - base).abs() < 1e-9 * base.max(1.0), "a={a} b={b}: {f} vs {base}");
        }
    }

    #[test]
    fn build_score_sets_counts() {
        // 50 identities x 16 images: 50 * C(16,2) = 6000 genuine pairs
        let (k, m, d) = (50usize, 16usize, 3usize);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for id in 0..k {
            for _ in 0..m {
                let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                v[0] += id as f64;
                rows.push(v);
                labels.push(id);
            }
        }
        let emb = Tensor::from_rows(&rows).unwrap();
        let s = build_score_sets(&emb, &labels, &mut rng).unwrap();
        assert_eq!(s.genuine.len(), 6000);
        assert_eq!(s.imposter.len(), 6000);

        // 2 ids x 2 images: 2 genuine pairs, imposters capped at the 4
        // available cross pairs
        let emb = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 0.9],
        ])
        .unwrap();
        let s = build_score_sets(&emb, &[0, 0, 1, 1], &mut rng).unwrap();
        assert_eq!(s.genuine.len(), 2);
        assert_eq!(s.imposter.len(), 2); // min(genuine, pool=4) = 2

        // single label: no imposters possible
        let s = build_score_sets(&emb, &[0, 0, 0, 0], &mut rng);
        assert!(matches!(s, Err(MetricError::SingleClass)));

        // all labels distinct: no genuine pairs
        let s = build_score_sets(&emb, &[0, 1, 2, 3], &mut rng);
        assert!(matches!(s, Err(MetricError::NoGenuinePairs)));
    }

    #[test]
    fn report_fields_finite_and_in_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for id in 0..6 {
            for _ in 0..5 {
                let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
                v[id % 4] += 1.0;
                rows.push(v);
                labels.push(id);
            }
        }
        let emb = Tensor::from_rows(&rows).unwrap();
        let r = eval_report(&emb, &labels, &mut rng).unwrap();
        for f in EvalReport::FIELDS {
            assert!(r.field(f).unwrap().is_finite(), "{f}");
        }
        for f in ["eer", "fmr100", "fmr1000"] {
            let v = r.field(f).unwrap();
            assert!((0.0..=1.0).contains(&v), "{f} = {v}");
        }
        assert!(r.fdr >= 0.0);
    }

    #[test]
    fn histogram_covers_unit_interval_with_edge_clamp() {
        let s = scores(&[1.0, 0.999, -1.0], &[0.0]);
        let h = score_histogram(&s, 100);
        assert_eq!(h.len(), 100);
        assert_eq!(h[99].2, 2); // 1.0 and 0.999 share the top bin
        assert_eq!(h[0].2, 1);
        assert_eq!(h[50].3, 1);
        let total_g: usize = h.iter().map(|r| r.2).sum();
        assert_eq!(total_g, 3);
    }

    #[test]
    fn score_set_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let s = scores(&[0.25, 1.0 / 3.0], &[-0.125]);
        s.save_csv(&path).unwrap();
        let loaded = ScoreSet::load_csv(&path).unwrap();
        assert_eq!(loaded, s);

        std::fs::write(&path, "set,score\ngenuine,not_a_number\n").unwrap();
        let err = ScoreSet::load_csv(&path).unwrap_err();
        assert!(matches!(err, MetricError::Parse { line: 2, .. }));

        std::fs::write(&path, "").unwrap();
        let err = ScoreSet::load_csv(&path).unwrap_err();
        assert!(matches!(err, MetricError::Parse { line: 1, .. }));
    }

    #[test]
    fn report_json_roundtrip() {
        let r = EvalReport {
            eer: 0.003,
            fmr100: 0.001,
            fmr1000: 0.009,
            genuine_mean: 0.621,
            genuine_std: 0.102,
            imposter_mean: 0.024,
            imposter_std: 0.075,
            fdr: 22.172,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        r.save_json(&path).unwrap();
        let loaded = EvalReport::load_json(&path).unwrap();
        assert_eq!(loaded, r);
    }
}
