//! Parameter counting and AIC / BIC / ICL model comparison, with the ELBO in
//! place of the log-likelihood. Higher is better for every criterion.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::elbo::entropy;
use crate::error::{Result, ZiplnError};
use crate::model::{CountDataset, ZiVariant};
use crate::optim::FitResult;

/// `K = p(p+1)/2 + p d + c`, with `c = 1` (ND), `p d0` (CD), `n d0` (RD), `0` (plain).
pub fn param_count(zi: ZiVariant, n: usize, p: usize, d: usize, d0: usize) -> usize {
    let c = match zi {
        ZiVariant::None => 0,
        ZiVariant::Nd => 1,
        ZiVariant::Cd => p * d0,
        ZiVariant::Rd => n * d0,
    };
    p * (p + 1) / 2 + p * d + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRow {
    pub name: String,
    pub zi: ZiVariant,
    pub elbo_variant: String,
    pub n: usize,
    pub p: usize,
    pub elbo: f64,
    pub k: usize,
    pub entropy: f64,
    pub aic: f64,
    pub bic: f64,
    pub icl: f64,
    pub converged: bool,
    /// RD models have a parameter count growing with `n`.
    pub nonparametric_warning: bool,
}

impl CriteriaRow {
    /// Rows from raw values: `AIC = J - K`, `BIC = J - K log(n) / 2`, `ICL = BIC - H`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(name: &str, zi: ZiVariant, elbo_variant: &str, n: usize, p: usize, elbo: f64, k: usize, entropy: f64, converged: bool) -> Self {
        let bic = elbo - 0.5 * k as f64 * (n as f64).ln();
        Self {
            name: name.to_string(),
            zi,
            elbo_variant: elbo_variant.to_string(),
            n,
            p,
            elbo,
            k,
            entropy,
            aic: elbo - k as f64,
            bic,
            icl: bic - entropy,
            converged,
            nonparametric_warning: zi == ZiVariant::Rd,
        }
    }
}

/// Criteria of one fit; the entropy is that of the fitted variational law.
pub fn criteria(fit: &FitResult, data: &CountDataset, name: &str) -> Result<CriteriaRow> {
    let cfg = &fit.config;
    let k = param_count(cfg.zi_variant, data.n(), data.p(), data.d(), data.d0());
    let h = entropy(cfg.elbo_variant, data, &fit.theta, &fit.psi)?;
    Ok(CriteriaRow::from_parts(
        name,
        cfg.zi_variant,
        cfg.elbo_variant.name(),
        data.n(),
        data.p(),
        fit.final_elbo(),
        k,
        h,
        fit.converged,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub rows: Vec<CriteriaRow>,
    /// Index of the best row per criterion.
    pub best_aic: usize,
    pub best_bic: usize,
    pub best_icl: usize,
}

/// Tabulate fits of one dataset and mark the best row per criterion. Ties
/// go to the fewest parameters, then the lexically smallest name.
pub fn compare_models(rows: Vec<CriteriaRow>) -> Result<CriteriaReport> {
    let first = rows
        .first()
        .ok_or_else(|| ZiplnError::Report("no models to compare".into()))?;
    if rows.iter().any(|r| r.n != first.n || r.p != first.p) {
        return Err(ZiplnError::Report("models were fitted on different datasets".into()));
    }
    let best = |key: fn(&CriteriaRow) -> f64| -> usize {
        let mut idx = 0;
        for (i, r) in rows.iter().enumerate().skip(1) {
            let b = &rows[idx];
            let better = key(r) > key(b)
                || (key(r) == key(b) && (r.k < b.k || (r.k == b.k && r.name < b.name)));
            if better {
                idx = i;
            }
        }
        idx
    };
    Ok(CriteriaReport {
        best_aic: best(|r| r.aic),
        best_bic: best(|r| r.bic),
        best_icl: best(|r| r.icl),
        rows,
    })
}

impl CriteriaReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "name", "zi", "elbo_variant", "n", "p", "elbo", "k", "aic", "bic", "icl", "entropy", "converged", "best",
    ];

    fn best_tags(&self, i: usize) -> String {
        let mut tags = Vec::new();
        if i == self.best_aic {
            tags.push("aic");
        }
        if i == self.best_bic {
            tags.push("bic");
        }
        if i == self.best_icl {
            tags.push("icl");
        }
        tags.join(";")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                r.name.clone(),
                r.zi.to_string(),
                r.elbo_variant.clone(),
                r.n.to_string(),
                r.p.to_string(),
                format!("{:.16e}", r.elbo),
                r.k.to_string(),
                format!("{:.16e}", r.aic),
                format!("{:.16e}", r.bic),
                format!("{:.16e}", r.icl),
                format!("{:.16e}", r.entropy),
                r.converged.to_string(),
                self.best_tags(i),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table; the best value per criterion is starred.
    pub fn pretty(&self) -> String {
        let star = |i: usize, best: usize| if i == best { "*" } else { " " };
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>16}  {:>8}  {:>16}  {:>16}  {:>16}",
            "name", "zi", "elbo", "K", "AIC", "BIC", "ICL"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<width$}  {:>4}  {:>16.4}  {:>8}  {:>15.4}{}  {:>15.4}{}  {:>15.4}{}",
                r.name,
                r.zi.as_str(),
                r.elbo,
                r.k,
                r.aic,
                star(i, self.best_aic),
                r.bic,
                star(i, self.best_bic),
                r.icl,
                star(i, self.best_icl),
            );
        }
        if self.rows.iter().any(|r| r.nonparametric_warning) {
            let _ = writeln!(s, "warning: RD models have a parameter count that grows with n");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Design, ModelParams, ZiCovariates, ZiParams};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(ZiVariant::Nd, 10, 2, 1, 0), 6);
        assert_eq!(param_count(ZiVariant::None, 880, 259, 1, 0), 33_929);
        assert_eq!(param_count(ZiVariant::Cd, 880, 259, 1, 1), 34_188);
        assert_eq!(param_count(ZiVariant::Rd, 7, 3, 2, 2), 6 + 6 + 14);
    }

    /// Free scalars of a parameter set: upper triangle of Omega, B, ZI coefficients.
    fn brute_force(params: &ModelParams) -> usize {
        let p = params.p();
        let upper = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).count();
        upper + params.b().len() + params.zi().coef().map_or(0, |c| c.len())
    }

    #[test]
    fn parameter_count_matches_brute_force() {
        let (n, p, d, d0) = (6, 4, 3, 2);
        let x = DMatrix::from_element(n, d, 1.0);
        for (variant, zi_cov) in [
            (ZiVariant::None, ZiCovariates::None),
            (ZiVariant::Nd, ZiCovariates::None),
            (ZiVariant::Cd, ZiCovariates::Rows(DMatrix::from_element(n, d0, 1.0))),
            (ZiVariant::Rd, ZiCovariates::Columns(DMatrix::from_element(d0, p, 1.0))),
        ] {
            let design = Design::without_offsets(p, x.clone(), zi_cov).unwrap();
            let zi = ZiParams::neutral(variant, &design);
            let params = ModelParams::from_omega(DMatrix::identity(p, p), DMatrix::zeros(d, p), zi).unwrap();
            assert_eq!(param_count(variant, n, p, d, d0), brute_force(&params), "{variant}");
        }
    }

    fn row(name: &str, elbo: f64, k: usize) -> CriteriaRow {
        CriteriaRow::from_parts(name, ZiVariant::Nd, "Standard", 100, 3, elbo, k, 12.5, true)
    }

    #[test]
    fn criteria_arithmetic() {
        let r = row("a", -1000.0, 6);
        assert_relative_eq!(r.aic, -1006.0);
        assert_relative_eq!(r.bic, -1000.0 - 3.0 * 100f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(r.bic, -1013.816, epsilon = 1e-3);
        assert!(r.bic <= r.aic);
        assert_relative_eq!(r.aic - r.bic, 6.0 * (0.5 * 100f64.ln() - 1.0), epsilon = 1e-10);
        assert_relative_eq!(r.icl, r.bic - 12.5);
    }

    #[test]
    fn comparison_and_ties() {
        let single = compare_models(vec![row("only", -5.0, 3)]).unwrap();
        assert_eq!((single.best_aic, single.best_bic, single.best_icl), (0, 0, 0));

        let report = compare_models(vec![row("big", -100.0, 9), row("small", -100.0, 6)]).unwrap();
        assert_eq!(report.best_bic, 1);
        assert_eq!(report.best_aic, 1);

        // Exact tie on every criterion and K: lexical order decides.
        let report = compare_models(vec![row("b", -10.0, 4), row("a", -10.0, 4)]).unwrap();
        assert_eq!(report.best_bic, 1);

        let mut other = row("x", -1.0, 2);
        other.n = 50;
        assert!(compare_models(vec![row("a", -1.0, 2), other]).is_err());
        assert!(compare_models(vec![]).is_err());
    }

    #[test]
    fn report_serializations() {
        let mut rd = row("rd", -50.0, 20);
        rd.nonparametric_warning = true;
        let report = compare_models(vec![row("nd", -40.0, 4), rd]).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with("aic;bic;icl"));
        let pretty = report.pretty();
        assert!(pretty.contains("warning"));
        assert!(pretty.lines().nth(1).unwrap().contains('*'));
    }
}
