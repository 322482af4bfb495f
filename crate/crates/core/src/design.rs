//! Simple random sampling of plots, complete randomization of treatments and
//! plot-level measurement error.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::population::{baseline_design, fmt_full, parse_field, Population};
use crate::seed::{self, Rng};

/// Largest study size accepted by [`assignment_enumeration`].
pub const ENUMERATION_LIMIT: usize = 12;

/// Number of soil samples composited per plot measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplesPerPlot {
    Finite(u32),
    Infinite,
}

impl SamplesPerPlot {
    /// `sd_within_plot / sqrt(m)`, or 0 for an infinite number of samples.
    pub fn measurement_sd(self, sd_within_plot: f64) -> f64 {
        match self {
            SamplesPerPlot::Finite(m) => sd_within_plot / f64::from(m).sqrt(),
            SamplesPerPlot::Infinite => 0.0,
        }
    }

    pub fn key(self) -> u64 {
        match self {
            SamplesPerPlot::Finite(m) => u64::from(m),
            SamplesPerPlot::Infinite => u64::MAX,
        }
    }
}

impl fmt::Display for SamplesPerPlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplesPerPlot::Finite(m) => write!(f, "{m}"),
            SamplesPerPlot::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for SamplesPerPlot {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SamplesPerPlot::Finite(m) => s.serialize_u32(*m),
            SamplesPerPlot::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SamplesPerPlot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = SamplesPerPlot;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                match u32::try_from(v) {
                    Ok(m) if m > 0 => Ok(SamplesPerPlot::Finite(m)),
                    _ => Err(E::custom(format!("samples per plot must be in 1..=u32::MAX, got {v}"))),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                u64::try_from(v)
                    .map_err(|_| E::custom(format!("samples per plot must be positive, got {v}")))
                    .and_then(|v| self.visit_u64(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                match v {
                    "inf" | "infinite" => Ok(SamplesPerPlot::Infinite),
                    other => other
                        .parse::<u64>()
                        .map_err(|_| E::custom(format!("expected integer or \"inf\", got `{other}`")))
                        .and_then(|m| self.visit_u64(m)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// A completely randomized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n_enrolled: usize,
    pub arm_sizes: Vec<usize>,
    pub samples_per_plot: SamplesPerPlot,
    pub sd_within_plot: f64,
}

impl DesignSpec {
    /// Two-arm design with `n / 2` treated plots and the rest on control.
    pub fn balanced(n: usize, samples_per_plot: SamplesPerPlot, sd_within_plot: f64) -> Self {
        let treated = n / 2;
        Self {
            n_enrolled: n,
            arm_sizes: vec![n - treated, treated],
            samples_per_plot,
            sd_within_plot,
        }
    }

    pub fn measurement_sd(&self) -> f64 {
        self.samples_per_plot.measurement_sd(self.sd_within_plot)
    }

    pub fn validate(&self, pop: &Population) -> Result<()> {
        if self.n_enrolled > pop.n_plots() {
            return Err(Error::Enrollment {
                requested: self.n_enrolled,
                available: pop.n_plots(),
            });
        }
        if self.arm_sizes.len() != pop.n_arms() {
            return Err(Error::Design(format!(
                "{} arm sizes for a population with {} arms",
                self.arm_sizes.len(),
                pop.n_arms()
            )));
        }
        if self.arm_sizes.iter().any(|&k| k == 0) {
            return Err(Error::Design(format!(
                "every arm needs at least one plot, got {:?}",
                self.arm_sizes
            )));
        }
        if self.arm_sizes.iter().sum::<usize>() != self.n_enrolled {
            return Err(Error::Design(format!(
                "arm sizes {:?} do not sum to {}",
                self.arm_sizes, self.n_enrolled
            )));
        }
        if !(self.sd_within_plot.is_finite() && self.sd_within_plot >= 0.0) {
            return Err(Error::Design(format!(
                "sd_within_plot must be finite and >= 0, got {}",
                self.sd_within_plot
            )));
        }
        Ok(())
    }
}

/// Data observed from an enrolled study.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedStudy {
    baseline_obs: Vec<f64>,
    outcome_obs: Vec<f64>,
    arm: Vec<usize>,
    source_index: Vec<usize>,
    covariates_obs: DMatrix<f64>,
}

impl ObservedStudy {
    /// Study with covariates `[1, B_i]`.
    pub fn new(
        baseline_obs: Vec<f64>,
        outcome_obs: Vec<f64>,
        arm: Vec<usize>,
        source_index: Vec<usize>,
    ) -> Result<Self> {
        let covariates = baseline_design(&baseline_obs);
        Self::with_covariates(baseline_obs, outcome_obs, arm, source_index, covariates)
    }

    pub fn with_covariates(
        baseline_obs: Vec<f64>,
        outcome_obs: Vec<f64>,
        arm: Vec<usize>,
        source_index: Vec<usize>,
        covariates_obs: DMatrix<f64>,
    ) -> Result<Self> {
        let n = outcome_obs.len();
        if baseline_obs.len() != n || arm.len() != n || source_index.len() != n {
            return Err(Error::Dimension(format!(
                "study columns disagree: {} baseline, {n} outcome, {} arm, {} source",
                baseline_obs.len(),
                arm.len(),
                source_index.len()
            )));
        }
        if covariates_obs.nrows() != n || covariates_obs.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "covariate matrix is {}x{} for {n} plots",
                covariates_obs.nrows(),
                covariates_obs.ncols()
            )));
        }
        if covariates_obs.column(0).iter().any(|&x| x != 1.0) {
            return Err(Error::Dimension(
                "first covariate column must be identically 1".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = source_index.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Design(format!("source index {dup} enrolled twice")));
        }
        Ok(Self {
            baseline_obs,
            outcome_obs,
            arm,
            source_index,
            covariates_obs,
        })
    }

    /// Study on `source_index` with exact (noise-free) measurements.
    pub fn noise_free(pop: &Population, source_index: &[usize], arm: &[usize]) -> Result<Self> {
        if source_index.len() != arm.len() {
            return Err(Error::Dimension("source and arm lengths differ".into()));
        }
        let mut baseline = Vec::with_capacity(arm.len());
        let mut outcome = Vec::with_capacity(arm.len());
        for (&s, &z) in source_index.iter().zip(arm) {
            if s >= pop.n_plots() || z >= pop.n_arms() {
                return Err(Error::Dimension(format!("plot {s} / arm {z} out of range")));
            }
            baseline.push(pop.baseline()[s]);
            outcome.push(pop.po()[(s, z)]);
        }
        Self::new(baseline, outcome, arm.to_vec(), source_index.to_vec())
    }

    pub fn n(&self) -> usize {
        self.outcome_obs.len()
    }

    pub fn baseline_obs(&self) -> &[f64] {
        &self.baseline_obs
    }

    pub fn outcome_obs(&self) -> &[f64] {
        &self.outcome_obs
    }

    pub fn arm(&self) -> &[usize] {
        &self.arm
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn covariates_obs(&self) -> &DMatrix<f64> {
        &self.covariates_obs
    }

    /// Number of arms implied by the largest arm label.
    pub fn n_arms(&self) -> usize {
        self.arm.iter().max().map_or(0, |m| m + 1)
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_arms()];
        for &z in &self.arm {
            counts[z] += 1;
        }
        counts
    }

    /// `D_i = Y_i - B_i`.
    pub fn differences(&self) -> Vec<f64> {
        self.outcome_obs
            .iter()
            .zip(&self.baseline_obs)
            .map(|(y, b)| y - b)
            .collect()
    }

    /// Same study with the outcome column replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::Dimension("replacement outcome has wrong length".into()));
        }
        Ok(Self {
            outcome_obs: outcome,
            ..self.clone()
        })
    }

    /// Outcomes of plots assigned to `arm`.
    pub fn outcomes_in(&self, arm: usize) -> Vec<f64> {
        self.select(arm, &self.outcome_obs)
    }

    pub(crate) fn select(&self, arm: usize, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.arm)
            .filter(|(_, &z)| z == arm)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Rows of the covariate matrix for plots in `arm`, with the matching outcomes.
    pub fn arm_data(&self, arm: usize) -> (DMatrix<f64>, DVector<f64>) {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| self.arm[i] == arm).collect();
        let x = self.covariates_obs.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.outcome_obs[i]));
        (x, y)
    }

    /// Writes `plot_id,source_index,arm,baseline_obs,outcome_obs`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["plot_id", "source_index", "arm", "baseline_obs", "outcome_obs"])?;
        for i in 0..self.n() {
            w.write_record([
                i.to_string(),
                self.source_index[i].to_string(),
                self.arm[i].to_string(),
                fmt_full(self.baseline_obs[i]),
                fmt_full(self.outcome_obs[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let expected = ["plot_id", "source_index", "arm", "baseline_obs", "outcome_obs"];
        if headers.iter().ne(expected) {
            return Err(Error::Schema(format!(
                "study header must be {}, got {}",
                expected.join(","),
                headers.iter().join(",")
            )));
        }
        let (mut src, mut arm, mut base, mut out) = (vec![], vec![], vec![], vec![]);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != expected.len() {
                return Err(Error::Schema(format!("row {}: expected 5 fields", line + 2)));
            }
            let _: usize = parse_field(&rec, 0, line)?;
            src.push(parse_field(&rec, 1, line)?);
            arm.push(parse_field(&rec, 2, line)?);
            let b: f64 = parse_field(&rec, 3, line)?;
            let y: f64 = parse_field(&rec, 4, line)?;
            if !(b.is_finite() && y.is_finite()) {
                return Err(Error::Schema(format!("row {}: non-finite measurement", line + 2)));
            }
            base.push(b);
            out.push(y);
        }
        if out.is_empty() {
            return Err(Error::Schema("study file has no rows".into()));
        }
        Self::new(base, out, arm, src).map_err(|e| match e {
            Error::Design(m) | Error::Dimension(m) => Error::Schema(m),
            other => other,
        })
    }
}

/// Enrolls `n` plots by simple random sampling, assigns arms by complete
/// randomization and adds independent `N(0, sd^2)` measurement error to the
/// observed baseline and follow-up.
pub fn enroll_and_assign(pop: &Population, spec: &DesignSpec, seed: u64) -> Result<ObservedStudy> {
    enroll_and_assign_with(pop, spec, &mut seed::rng(seed))
}

pub fn enroll_and_assign_with(
    pop: &Population,
    spec: &DesignSpec,
    rng: &mut Rng,
) -> Result<ObservedStudy> {
    spec.validate(pop)?;
    let n = spec.n_enrolled;
    let source = rand::seq::index::sample(rng, pop.n_plots(), n).into_vec();
    let mut arm: Vec<usize> = spec
        .arm_sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &nk)| std::iter::repeat_n(k, nk))
        .collect();
    arm.shuffle(rng);

    let sd = spec.measurement_sd();
    let mut baseline: Vec<f64> = source.iter().map(|&s| pop.baseline()[s]).collect();
    let mut outcome: Vec<f64> = source
        .iter()
        .zip(&arm)
        .map(|(&s, &z)| pop.po()[(s, z)])
        .collect();
    if sd > 0.0 {
        for b in baseline.iter_mut() {
            let d: f64 = StandardNormal.sample(rng);
            *b += sd * d;
        }
        for y in outcome.iter_mut() {
            let d: f64 = StandardNormal.sample(rng);
            *y += sd * d;
        }
    }
    ObservedStudy::new(baseline, outcome, arm, source)
}

/// Every binary assignment of `n` plots with exactly `n1` treated, each once.
pub fn assignment_enumeration(n: usize, n1: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    if n > ENUMERATION_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if n1 > n {
        return Err(Error::Design(format!("cannot treat {n1} of {n} plots")));
    }
    Ok((0..n).combinations(n1).map(move |treated| {
        let mut z = vec![0; n];
        for i in treated {
            z[i] = 1;
        }
        z
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_population, PopulationParams};

    fn pop(n: usize) -> Population {
        generate_population(
            &PopulationParams {
                mu_b: 2.34,
                sd_b_across: 0.47,
                mean_control_change: 0.16,
                sd_control_change: 0.14,
                tau: 0.2,
                beta_mod: -0.5,
                sd_eps1: 0.1,
                n_plots: n,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn census_without_noise_permutes_baseline() {
        let p = pop(40);
        let spec = DesignSpec::balanced(40, SamplesPerPlot::Infinite, 1.02);
        let s = enroll_and_assign(&p, &spec, 1).unwrap();
        let mut got: Vec<f64> = s.baseline_obs().to_vec();
        let mut want: Vec<f64> = p.baseline().to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
        for i in 0..s.n() {
            let src = s.source_index()[i];
            assert_eq!(s.baseline_obs()[i].to_bits(), p.baseline()[src].to_bits());
            assert_eq!(s.outcome_obs()[i], p.po()[(src, s.arm()[i])]);
        }
    }

    #[test]
    fn arm_sizes_are_fixed() {
        let p = pop(100);
        let spec = DesignSpec::balanced(10, SamplesPerPlot::Finite(5), 1.02);
        for seed in 0..50 {
            let s = enroll_and_assign(&p, &spec, seed).unwrap();
            assert_eq!(s.arm_counts(), vec![5, 5]);
            let distinct: HashSet<_> = s.source_index().iter().collect();
            assert_eq!(distinct.len(), 10);
        }
    }

    #[test]
    fn inclusion_probability_is_n_over_big_n() {
        let p = pop(4);
        let spec = DesignSpec::balanced(2, SamplesPerPlot::Infinite, 1.02);
        let mut hits = [0usize; 4];
        let draws = 10_000;
        for seed in 0..draws {
            for &s in enroll_and_assign(&p, &spec, seed).unwrap().source_index() {
                hits[s] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.5).abs() < 0.02, "{hits:?}");
        }
    }

    #[test]
    fn marginal_treatment_probability() {
        let p = pop(20);
        let spec = DesignSpec::balanced(20, SamplesPerPlot::Infinite, 1.02);
        let mut treated = vec![0usize; 20];
        let draws = 4000;
        for seed in 0..draws {
            let s = enroll_and_assign(&p, &spec, seed).unwrap();
            for (i, &src) in s.source_index().iter().enumerate() {
                treated[src] += s.arm()[i];
            }
        }
        for t in treated {
            // binomial(4000, 0.5): 4 SE = 0.032
            assert!((t as f64 / draws as f64 - 0.5).abs() < 0.032);
        }
    }

    #[test]
    fn design_errors() {
        let p = pop(10);
        let spec = DesignSpec::balanced(11, SamplesPerPlot::Infinite, 1.0);
        assert!(matches!(enroll_and_assign(&p, &spec, 0), Err(Error::Enrollment { .. })));
        let spec = DesignSpec {
            n_enrolled: 6,
            arm_sizes: vec![2, 3],
            samples_per_plot: SamplesPerPlot::Infinite,
            sd_within_plot: 1.0,
        };
        assert!(matches!(enroll_and_assign(&p, &spec, 0), Err(Error::Design(_))));
        let spec = DesignSpec {
            n_enrolled: 6,
            arm_sizes: vec![6, 0],
            samples_per_plot: SamplesPerPlot::Infinite,
            sd_within_plot: 1.0,
        };
        assert!(matches!(enroll_and_assign(&p, &spec, 0), Err(Error::Design(_))));
    }

    #[test]
    fn measurement_sd() {
        assert_eq!(SamplesPerPlot::Infinite.measurement_sd(1.02), 0.0);
        assert!((SamplesPerPlot::Finite(5).measurement_sd(1.02) - 1.02 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn enumeration() {
        let all: Vec<_> = assignment_enumeration(2, 1).unwrap().collect();
        assert_eq!(all.len(), 2);
        assert!(all.contains(&vec![1, 0]) && all.contains(&vec![0, 1]));
        assert_eq!(assignment_enumeration(4, 2).unwrap().count(), 6);
        let all: Vec<_> = assignment_enumeration(3, 3).unwrap().collect();
        assert_eq!(all, vec![vec![1, 1, 1]]);
        let distinct: HashSet<_> = assignment_enumeration(10, 4).unwrap().collect();
        assert_eq!(distinct.len(), 210);
        assert!(matches!(
            assignment_enumeration(13, 2).err(),
            Some(Error::SizeLimit { n: 13, limit: 12 })
        ));
    }

    #[test]
    fn samples_per_plot_serde() {
        let v: Vec<SamplesPerPlot> = serde_json::from_str(r#"[5, "inf", 30]"#).unwrap();
        assert_eq!(
            v,
            vec![SamplesPerPlot::Finite(5), SamplesPerPlot::Infinite, SamplesPerPlot::Finite(30)]
        );
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[5,"inf",30]"#);
        assert!(serde_json::from_str::<SamplesPerPlot>("0").is_err());
    }

    #[test]
    fn study_csv_round_trip() {
        let p = pop(200);
        let spec = DesignSpec::balanced(20, SamplesPerPlot::Finite(5), 1.02);
        let s = enroll_and_assign(&p, &spec, 3).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(ObservedStudy::read_csv(buf.as_slice()).unwrap(), s);
        let bad = "plot_id,arm,baseline_obs,outcome_obs\n0,1,2.0,3.0\n";
        assert!(matches!(ObservedStudy::read_csv(bad.as_bytes()), Err(Error::Schema(_))));
    }
}
