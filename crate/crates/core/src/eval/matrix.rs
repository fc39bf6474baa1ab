//! Source × target transfer matrix of Hit@5 values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{mean, sig6, EvalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainMatrix {
    pub domains: Vec<String>,
    /// `(source, target)` → Hit@5; no diagonal.
    pub cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl CrossDomainMatrix {
    /// Every ordered pair of distinct domains must be present in `cells`.
    pub fn new(domains: Vec<String>, cells: BTreeMap<(String, String), f64>) -> Result<Self, EvalError> {
        let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for src in &domains {
            for tgt in &domains {
                if src == tgt {
                    continue;
                }
                let v = cells
                    .get(&(src.clone(), tgt.clone()))
                    .ok_or_else(|| EvalError::MissingModel(format!("{src}→{tgt}")))?;
                out.entry(src.clone()).or_default().insert(tgt.clone(), *v);
            }
        }
        Ok(CrossDomainMatrix { domains, cells: out })
    }

    pub fn get(&self, src: &str, tgt: &str) -> Option<f64> {
        self.cells.get(src)?.get(tgt).copied()
    }

    pub fn row_mean(&self, src: &str) -> f64 {
        let v: Vec<f64> = self.cells.get(src).map(|r| r.values().copied().collect()).unwrap_or_default();
        mean(&v)
    }

    pub fn col_mean(&self, tgt: &str) -> f64 {
        let v: Vec<f64> = self.cells.values().filter_map(|r| r.get(tgt).copied()).collect();
        mean(&v)
    }

    /// Mean over all off-diagonal cells.
    pub fn global_mean(&self) -> f64 {
        let v: Vec<f64> = self.cells.values().flat_map(|r| r.values().copied()).collect();
        mean(&v)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    /// Rows are training domains, columns test domains, with a trailing mean
    /// column and mean row. The diagonal is blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for d in &self.domains {
            out.push(',');
            out.push_str(d);
        }
        out.push_str(",mean\n");
        for src in &self.domains {
            out.push_str(src);
            for tgt in &self.domains {
                out.push(',');
                if let Some(v) = self.get(src, tgt) {
                    out.push_str(&sig6(v).to_string());
                }
            }
            out.push_str(&format!(",{}\n", sig6(self.row_mean(src))));
        }
        out.push_str("mean");
        for tgt in &self.domains {
            out.push_str(&format!(",{}", sig6(self.col_mean(tgt))));
        }
        out.push_str(&format!(",{}\n", sig6(self.global_mean())));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_domain_toy() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let cells = BTreeMap::from([
            (("a".to_string(), "b".to_string()), 10.0),
            (("b".to_string(), "a".to_string()), 20.0),
        ]);
        let m = CrossDomainMatrix::new(domains.clone(), cells).unwrap();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.global_mean(), 15.0);
        assert_eq!(m.row_mean("a"), 10.0);
        assert_eq!(m.col_mean("a"), 20.0);
        assert_eq!(m.to_csv(), "train\\test,a,b,mean\na,,10,10\nb,20,,20\nmean,20,10,15\n");
        assert!(matches!(
            CrossDomainMatrix::new(domains, BTreeMap::new()),
            Err(EvalError::MissingModel(_))
        ));
    }
}
