//! Accuracy tables, paired t-tests between approaches, and per-cohort summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::student_t_two_tailed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Approach {
    GlobalGrid,
    LocalGrid,
    GlobalBayes,
    LocalBayes,
    Individual,
    Central,
    Federated,
}

impl Approach {
    pub const ALL: [Approach; 7] = [
        Approach::GlobalGrid,
        Approach::LocalGrid,
        Approach::GlobalBayes,
        Approach::LocalBayes,
        Approach::Individual,
        Approach::Central,
        Approach::Federated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::GlobalGrid => "globalGrid",
            Approach::LocalGrid => "localGrid",
            Approach::GlobalBayes => "globalBayes",
            Approach::LocalBayes => "localBayes",
            Approach::Individual => "individual",
            Approach::Central => "central",
            Approach::Federated => "federated",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown approach `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultRow {
    pub client_id: usize,
    pub cohort_id: usize,
    pub approach: Approach,
    pub accuracy: f64,
}

pub const RESULTS_HEADER: &str = "clientId,cohortId,approach,accuracy";

/// Test accuracy per (client, approach).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = ResultRow>) -> Result<Self> {
        let mut table = Self::new();
        for row in rows {
            table.push(row)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(Error::InvalidDataset(format!(
                "accuracy {} for client {} / {} outside [0, 1]",
                row.accuracy, row.client_id, row.approach
            )));
        }
        if self.get(row.client_id, row.approach).is_some() {
            return Err(Error::InvalidDataset(format!(
                "duplicate result for client {} / {}",
                row.client_id, row.approach
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: ResultTable) -> Result<()> {
        for row in other.rows {
            self.push(row)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, client: usize, approach: Approach) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.client_id == client && r.approach == approach)
    }

    pub fn read_csv<R: Read>(reader: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.join(",") != RESULTS_HEADER {
            return Err(Error::parse(name, "line 1", format!("header must be `{RESULTS_HEADER}`")));
        }
        let mut table = Self::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = format!("line {}", i + 2);
            let bad = |what: &str| Error::parse(name, line.clone(), format!("invalid {what}"));
            if rec.len() != 4 {
                return Err(Error::parse(name, line, format!("expected 4 fields, found {}", rec.len())));
            }
            let row = ResultRow {
                client_id: rec[0].trim().parse().map_err(|_| bad("clientId"))?,
                cohort_id: rec[1].trim().parse().map_err(|_| bad("cohortId"))?,
                approach: rec[2].trim().parse().map_err(|_| bad("approach"))?,
                accuracy: rec[3].trim().parse().map_err(|_| bad("accuracy"))?,
            };
            table.push(row).map_err(|e| Error::parse(name, line, e.to_string()))?;
        }
        Ok(table)
    }

    /// `clientId,cohortId,approach,accuracy` with LF line endings, rows in insertion order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{RESULTS_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.client_id, r.cohort_id, r.approach, r.accuracy)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TTestResult {
    pub t: f64,
    pub degrees_of_freedom: usize,
    /// Two-tailed.
    pub p_value: f64,
    /// Differences had zero variance; `p` was set by rule rather than computed.
    pub degenerate: bool,
    pub excluded_clients: Vec<usize>,
}

/// Paired t-test on `a - b` with the sample (n−1) standard deviation.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("paired t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(mean), 0.0) };
        return Ok(TTestResult { t, degrees_of_freedom: df, p_value: p, degenerate: true, excluded_clients: Vec::new() });
    }
    let t = mean / (var / n).sqrt();
    Ok(TTestResult {
        t,
        degrees_of_freedom: df,
        p_value: student_t_two_tailed(t, df as f64),
        degenerate: false,
        excluded_clients: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub a: Approach,
    pub b: Approach,
    pub clients: Vec<usize>,
    pub result: TTestResult,
}

/// One paired t-test per approach pair over the clients not in `exclude`.
pub fn compare_approaches(
    table: &ResultTable,
    pairs: &[(Approach, Approach)],
    exclude: &[usize],
) -> Result<Vec<Comparison>> {
    let excluded: BTreeSet<usize> = exclude.iter().copied().collect();
    let clients_with = |approach: Approach| -> BTreeSet<usize> {
        table
            .rows()
            .iter()
            .filter(|r| r.approach == approach && !excluded.contains(&r.client_id))
            .map(|r| r.client_id)
            .collect()
    };
    pairs
        .iter()
        .map(|&(a, b)| {
            let (ca, cb) = (clients_with(a), clients_with(b));
            if ca != cb || ca.is_empty() {
                let only_a: Vec<_> = ca.difference(&cb).collect();
                let only_b: Vec<_> = cb.difference(&ca).collect();
                return Err(Error::MissingResults(format!(
                    "{a} vs {b}: clients missing {b}: {only_a:?}; clients missing {a}: {only_b:?}"
                )));
            }
            let clients: Vec<usize> = ca.into_iter().collect();
            let va: Vec<f64> = clients.iter().map(|&k| table.get(k, a).unwrap().accuracy).collect();
            let vb: Vec<f64> = clients.iter().map(|&k| table.get(k, b).unwrap().accuracy).collect();
            let mut result = paired_t_test(&va, &vb)?;
            result.excluded_clients = excluded.iter().copied().collect();
            Ok(Comparison { a, b, clients, result })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CohortSummary {
    pub cohort_id: usize,
    pub approach: Approach,
    pub clients: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean/min/max accuracy per (cohort, approach), ordered by cohort then approach.
pub fn cohort_summary(table: &ResultTable) -> Vec<CohortSummary> {
    let mut groups: BTreeMap<(usize, Approach), Vec<f64>> = BTreeMap::new();
    for r in table.rows() {
        groups.entry((r.cohort_id, r.approach)).or_default().push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|((cohort_id, approach), v)| CohortSummary {
            cohort_id,
            approach,
            clients: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn render_comparisons(comparisons: &[Comparison]) -> String {
    let mut out = format!("{:<12} {:<12} {:>3} {:>10} {:>8}  excluded\n", "a", "b", "df", "t", "p");
    for c in comparisons {
        out.push_str(&format!(
            "{:<12} {:<12} {:>3} {:>10.4} {:>8.4}  {:?}{}\n",
            c.a.as_str(),
            c.b.as_str(),
            c.result.degrees_of_freedom,
            c.result.t,
            c.result.p_value,
            c.result.excluded_clients,
            if c.result.degenerate { "  (zero variance)" } else { "" }
        ));
    }
    out
}

/// Test accuracies of the federated models for the four optimization
/// approaches on the industrial task. Clients 1–4 and 9 form cohort 0,
/// 5–7 cohort 1, and client 8 alone is cohort 2.
pub const TABLE2_CSV: &str = "\
clientId,cohortId,approach,accuracy
1,0,globalGrid,0.7756
1,0,localGrid,0.772
1,0,globalBayes,0.7659
1,0,localBayes,0.6897
2,0,globalGrid,0.7756
2,0,localGrid,0.772
2,0,globalBayes,0.7659
2,0,localBayes,0.6897
3,0,globalGrid,0.7756
3,0,localGrid,0.772
3,0,globalBayes,0.7659
3,0,localBayes,0.6897
4,0,globalGrid,0.7756
4,0,localGrid,0.772
4,0,globalBayes,0.7659
4,0,localBayes,0.6897
5,1,globalGrid,0.823
5,1,localGrid,0.7921
5,1,globalBayes,0.7882
5,1,localBayes,0.7889
6,1,globalGrid,0.823
6,1,localGrid,0.7921
6,1,globalBayes,0.7882
6,1,localBayes,0.7889
7,1,globalGrid,0.823
7,1,localGrid,0.7921
7,1,globalBayes,0.7882
7,1,localBayes,0.7889
8,2,globalGrid,0.974
8,2,localGrid,0.9749
8,2,globalBayes,0.3867
8,2,localBayes,0.9736
9,0,globalGrid,0.7756
9,0,localGrid,0.772
9,0,globalBayes,0.7659
9,0,localBayes,0.6897
";

pub fn table2_fixture() -> ResultTable {
    ResultTable::read_csv(TABLE2_CSV.as_bytes(), "table2").expect("embedded fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors() {
        let r = paired_t_test(&[0.5, 0.6, 0.7], &[0.5, 0.6, 0.7]).unwrap();
        assert_eq!((r.t, r.p_value, r.degenerate), (0.0, 1.0, true));
        let shifted = paired_t_test(&[0.6, 0.7, 0.8], &[0.5, 0.6, 0.7]);
        // 0.1 differences are not bit-identical in binary, so this is not degenerate
        assert!(shifted.unwrap().p_value < 1e-6);
        let exact = paired_t_test(&[1.0, 2.0], &[0.5, 1.5]).unwrap();
        assert_eq!((exact.p_value, exact.degenerate), (0.0, true));
    }

    #[test]
    fn input_validation() {
        assert!(paired_t_test(&[0.1], &[0.2]).is_err());
        assert!(paired_t_test(&[0.1, 0.2], &[0.2]).is_err());
    }

    #[test]
    fn table_rejects_duplicates_and_range() {
        let row = ResultRow { client_id: 1, cohort_id: 0, approach: Approach::Central, accuracy: 0.5 };
        let mut t = ResultTable::from_rows([row.clone()]).unwrap();
        assert!(t.push(row.clone()).is_err());
        assert!(t.push(ResultRow { accuracy: 1.5, approach: Approach::Federated, ..row }).is_err());
    }

    #[test]
    fn fixture_roundtrips_bit_exact() {
        let t = table2_fixture();
        assert_eq!(t.rows().len(), 36);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), TABLE2_CSV);
    }

    #[test]
    fn summaries() {
        let one = ResultTable::from_rows([ResultRow { client_id: 3, cohort_id: 1, approach: Approach::LocalGrid, accuracy: 0.42 }]).unwrap();
        let s = cohort_summary(&one);
        assert_eq!((s[0].mean, s[0].min, s[0].max), (0.42, 0.42, 0.42));
        let t = table2_fixture();
        let s = cohort_summary(&t);
        let find = |c, a| s.iter().find(|x| x.cohort_id == c && x.approach == a).unwrap().clone();
        assert!((find(1, Approach::GlobalGrid).mean - 0.8230).abs() < 1e-12);
        assert_eq!(find(2, Approach::GlobalBayes).mean, 0.3867);
        assert_eq!(find(0, Approach::LocalBayes).clients, 5);
    }

    #[test]
    fn missing_cells_named() {
        let mut t = table2_fixture();
        t.push(ResultRow { client_id: 10, cohort_id: 3, approach: Approach::GlobalGrid, accuracy: 0.5 }).unwrap();
        let err = compare_approaches(&t, &[(Approach::GlobalGrid, Approach::LocalGrid)], &[]).unwrap_err();
        assert!(err.to_string().contains("[10]"), "{err}");
        let ok = compare_approaches(&t, &[(Approach::GlobalGrid, Approach::LocalGrid)], &[10]).unwrap();
        assert_eq!(ok[0].result.degrees_of_freedom, 8);
    }

    #[test]
    fn two_remaining_clients_give_one_df() {
        let t = table2_fixture();
        let r = compare_approaches(&t, &[(Approach::GlobalGrid, Approach::LocalBayes)], &[1, 2, 3, 4, 6, 7, 9]).unwrap();
        assert_eq!(r[0].clients, vec![5, 8]);
        assert_eq!(r[0].result.degrees_of_freedom, 1);
    }

    #[test]
    fn fixture_p_values() {
        use Approach::*;
        let t = table2_fixture();
        let pairs = [(GlobalGrid, LocalGrid), (GlobalBayes, LocalBayes), (GlobalGrid, GlobalBayes), (LocalGrid, LocalBayes)];
        let without = compare_approaches(&t, &pairs, &[8]).unwrap();
        let with = compare_approaches(&t, &pairs, &[]).unwrap();
        let expect_without = [0.02769, 0.01199, 0.00423, 0.00832];
        let expect_with = [0.03183, 0.75500, 0.22978, 0.00998];
        for i in 0..4 {
            assert!((without[i].result.p_value - expect_without[i]).abs() < 1e-4, "{:?}", without[i]);
            assert!((with[i].result.p_value - expect_with[i]).abs() < 1e-4, "{:?}", with[i]);
        }
    }
}
