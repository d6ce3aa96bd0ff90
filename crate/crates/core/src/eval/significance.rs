use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::TaskSchema;
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Mcnemar,
    Bowker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub test: TestKind,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    /// Chi-square upper tail probability of `statistic`.
    pub p_value: f64,
    /// Two-sided exact binomial p-value, reported for McNemar when fewer than
    /// 25 discordant pairs make the chi-square approximation rough.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_p_value: Option<f64>,
}

impl SignificanceResult {
    pub fn is_significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 || statistic <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df > 0");
    dist.sf(statistic).clamp(0.0, 1.0)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("prediction sets differ in length ({a} vs {b})")));
    }
    if a == 0 {
        return Err(Error::invalid("empty prediction set"));
    }
    Ok(())
}

fn exact_binomial_two_sided(b: usize, c: usize) -> f64 {
    let n = b + c;
    let k = b.min(c);
    // P(X <= k) for X ~ Binomial(n, 1/2), accumulated in f64 (n is small here).
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            coef *= (n - i + 1) as f64 / i as f64;
        }
        tail += coef;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

/// McNemar's test with continuity correction on the discordant pairs of two
/// binary classifiers.
pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], gold: &[usize]) -> Result<SignificanceResult> {
    check_lengths(preds_a.len(), preds_b.len())?;
    check_lengths(preds_a.len(), gold.len())?;
    if preds_a.iter().chain(preds_b).chain(gold).any(|&c| c > 1) {
        return Err(Error::invalid(
            "McNemar's test needs binary labels; use Bowker's test for multiclass tasks",
        ));
    }
    let mut b = 0usize;
    let mut c = 0usize;
    for ((&pa, &pb), &g) in preds_a.iter().zip(preds_b).zip(gold) {
        match (pa == g, pb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c))
}

/// McNemar's test from the discordant counts: `b` pairs only A got right,
/// `c` pairs only B got right.
pub fn mcnemar_counts(b: usize, c: usize) -> SignificanceResult {
    let (statistic, p_value) = if b + c == 0 {
        (0.0, 1.0)
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let stat = diff.max(0.0).powi(2) / (b + c) as f64;
        (stat, chi_square_sf(stat, 1))
    };
    SignificanceResult {
        test: TestKind::Mcnemar,
        statistic,
        degrees_of_freedom: 1,
        p_value,
        exact_p_value: (b + c < 25).then(|| exact_binomial_two_sided(b, c)),
    }
}

/// Bowker's test of symmetry on the k×k table of (A's prediction, B's
/// prediction). Cell pairs with no disagreements are left out of both the
/// statistic and the degrees of freedom.
pub fn bowker(preds_a: &[usize], preds_b: &[usize], num_classes: usize) -> Result<SignificanceResult> {
    if num_classes < 2 {
        return Err(Error::invalid("Bowker's test needs at least two classes"));
    }
    check_lengths(preds_a.len(), preds_b.len())?;
    let mut table = vec![vec![0usize; num_classes]; num_classes];
    for (&a, &b) in preds_a.iter().zip(preds_b) {
        if a >= num_classes || b >= num_classes {
            return Err(Error::invalid(format!("class index outside 0..{num_classes}")));
        }
        table[a][b] += 1;
    }
    Ok(bowker_table(&table))
}

/// Bowker's test on a square contingency table.
pub fn bowker_table(table: &[Vec<usize>]) -> SignificanceResult {
    let k = table.len();
    let mut statistic = 0.0;
    let mut df = 0;
    for i in 0..k {
        for j in i + 1..k {
            let (nij, nji) = (table[i][j] as f64, table[j][i] as f64);
            if nij + nji > 0.0 {
                statistic += (nij - nji).powi(2) / (nij + nji);
                df += 1;
            }
        }
    }
    SignificanceResult {
        test: TestKind::Bowker,
        statistic,
        degrees_of_freedom: df,
        p_value: chi_square_sf(statistic, df),
        exact_p_value: None,
    }
}

/// Pairwise tests between every pair of models (McNemar for binary tasks,
/// Bowker otherwise).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub models: Vec<String>,
    /// `cells[i][j]`, `None` on the diagonal.
    pub cells: Vec<Vec<Option<SignificanceResult>>>,
}

pub fn significance_matrix(
    models: &[(String, Vec<usize>)],
    gold: &[usize],
    schema: &TaskSchema,
) -> Result<SignificanceMatrix> {
    if models.len() < 2 {
        return Err(Error::invalid("need at least two models to compare"));
    }
    let n = models.len();
    let mut cells = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&models[i].1, &models[j].1);
            let result = if schema.num_classes() == 2 {
                mcnemar(a, b, gold)?
            } else {
                check_lengths(a.len(), gold.len())?;
                bowker(a, b, schema.num_classes())?
            };
            cells[j][i] = Some(result.clone());
            cells[i][j] = Some(result);
        }
    }
    Ok(SignificanceMatrix {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    })
}

impl SignificanceMatrix {
    pub fn p_value(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j].as_ref().map(|r| r.p_value)
    }

    /// Unordered pairs with p below the significance level.
    pub fn significant_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.models.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.cells[i][j].as_ref().is_some_and(|r| r.is_significant()))
            .collect()
    }
}

impl fmt::Display for SignificanceMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.models.iter().map(String::len).max().unwrap_or(4).max(8) + 2;
        write!(f, "{:<w$}", "")?;
        for m in &self.models {
            write!(f, "{m:>w$}")?;
        }
        writeln!(f)?;
        for (i, row) in self.cells.iter().enumerate() {
            write!(f, "{:<w$}", self.models[i])?;
            for cell in row {
                let s = match cell {
                    None => "-".to_string(),
                    Some(r) if r.is_significant() => format!("{:.4}*", r.p_value),
                    Some(r) => format!("{:.4}", r.p_value),
                };
                write!(f, "{s:>w$}")?;
            }
            writeln!(f)?;
        }
        write!(f, "* p < {SIGNIFICANCE_LEVEL}")
    }
}
