//! Entry-rate tables and proportion tests over simulated records.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::model::{SenderType, Treatment};
use crate::simulator::{Condition, EntryRecord, Gender};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("unknown grouping key {0:?} (expected gender, treatment, condition or latent_type)")]
    UnknownKey(String),
    #[error("no prosocial entrants")]
    NoProsocialEntrants,
    #[error("sample sizes must be at least 1")]
    EmptySample,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column a rate table can be grouped by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Gender,
    Treatment,
    Condition,
    LatentType,
}

impl GroupKey {
    pub fn parse(name: &str) -> Result<Self, AnalysisError> {
        match name {
            "gender" => Ok(GroupKey::Gender),
            "treatment" => Ok(GroupKey::Treatment),
            "condition" => Ok(GroupKey::Condition),
            "latent_type" => Ok(GroupKey::LatentType),
            _ => Err(AnalysisError::UnknownKey(name.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Gender => "gender",
            GroupKey::Treatment => "treatment",
            GroupKey::Condition => "condition",
            GroupKey::LatentType => "latent_type",
        }
    }

    fn domain(self) -> Vec<&'static str> {
        match self {
            GroupKey::Gender => vec![Gender::Female.as_str(), Gender::Male.as_str()],
            GroupKey::Treatment => Treatment::ALL.iter().map(|t| t.as_str()).collect(),
            GroupKey::Condition => Condition::BOTH.iter().map(|c| c.as_str()).collect(),
            GroupKey::LatentType => SenderType::BOTH.iter().map(|t| t.as_str()).collect(),
        }
    }

    fn value(self, r: &EntryRecord) -> &'static str {
        match self {
            GroupKey::Gender => r.gender.as_str(),
            GroupKey::Treatment => r.treatment().map(|t| t.as_str()).unwrap_or(""),
            GroupKey::Condition => r.condition.as_str(),
            GroupKey::LatentType => r.latent_type.as_str(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub group: Vec<&'static str>,
    pub n: usize,
    pub entrants: usize,
    /// `None` for an empty subgroup.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTable {
    pub keys: Vec<GroupKey>,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn find(&self, group: &[&str]) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.keys.iter().map(|k| k.as_str()).collect();
        header.extend(["n", "entrants", "rate"]);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut fields: Vec<String> = row.group.iter().map(|s| s.to_string()).collect();
            fields.push(row.n.to_string());
            fields.push(row.entrants.to_string());
            fields.push(row.rate.map(|r| format!("{r:.6}")).unwrap_or_default());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Entry rates over treatment rounds (3 to 5), one row per combination of key
/// values, including empty combinations.
pub fn entry_rates(records: &[EntryRecord], keys: &[GroupKey]) -> RateTable {
    let mut counts: BTreeMap<Vec<&'static str>, (usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.treatment().is_some()) {
        let group: Vec<&'static str> = keys.iter().map(|k| k.value(r)).collect();
        let slot = counts.entry(group).or_default();
        slot.0 += 1;
        slot.1 += usize::from(r.entered);
    }
    let mut groups: Vec<Vec<&'static str>> = vec![vec![]];
    for key in keys {
        groups = groups
            .into_iter()
            .flat_map(|prefix| {
                key.domain().into_iter().map(move |v| {
                    let mut g = prefix.clone();
                    g.push(v);
                    g
                })
            })
            .collect();
    }
    let rows = groups
        .into_iter()
        .map(|group| {
            let (n, entrants) = counts.get(&group).copied().unwrap_or((0, 0));
            RateRow { group, n, entrants, rate: (n > 0).then(|| entrants as f64 / n as f64) }
        })
        .collect();
    RateTable { keys: keys.to_vec(), rows }
}

/// Parses grouping key names.
pub fn parse_keys(names: &[&str]) -> Result<Vec<GroupKey>, AnalysisError> {
    names.iter().map(|n| GroupKey::parse(n)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProportionTest {
    pub rate_a: f64,
    pub rate_b: f64,
    pub z: f64,
    pub p: f64,
    /// Pooled variance was zero; `z` is 0 and `p` is 1.
    pub degenerate: bool,
}

/// Pooled two-proportion z-test with a two-sided normal p-value.
pub fn two_proportion_test(x1: usize, n1: usize, x2: usize, n2: usize) -> Result<ProportionTest, AnalysisError> {
    if n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2 {
        return Err(AnalysisError::EmptySample);
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let (p1, p2) = (x1 as f64 / n1f, x2 as f64 / n2f);
    let pooled = (x1 + x2) as f64 / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if var <= 0.0 {
        return Ok(ProportionTest { rate_a: p1, rate_b: p2, z: 0.0, p: 1.0, degenerate: true });
    }
    let z = (p1 - p2) / var.sqrt();
    let p = erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(ProportionTest { rate_a: p1, rate_b: p2, z, p, degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DonationRow {
    pub condition: Condition,
    pub latent_type: SenderType,
    pub n: usize,
    pub mean: Option<f64>,
}

/// Mean donation share by condition and latent type among women who entered
/// the prosocial round and won. A losing entrant's donation choice never pays
/// out, so it is not part of the record.
pub fn donation_summary(records: &[EntryRecord]) -> Result<Vec<DonationRow>, AnalysisError> {
    let pool: Vec<&EntryRecord> = records
        .iter()
        .filter(|r| r.gender == Gender::Female && r.treatment() == Some(Treatment::Prosocial) && r.entered)
        .collect();
    if pool.is_empty() {
        return Err(AnalysisError::NoProsocialEntrants);
    }
    let mut rows = Vec::new();
    for condition in Condition::BOTH {
        for latent_type in SenderType::BOTH {
            let shares: Vec<f64> = pool
                .iter()
                .filter(|r| r.condition == condition && r.latent_type == latent_type && r.won)
                .map(|r| r.donation_share)
                .collect();
            let n = shares.len();
            let mean = (n > 0).then(|| shares.iter().sum::<f64>() / n as f64);
            rows.push(DonationRow { condition, latent_type, n, mean });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestRow {
    pub group_a: String,
    pub group_b: String,
    pub test: Option<ProportionTest>,
}

/// Public vs private within each gender and treatment, and each incentive
/// treatment vs baseline within each gender and condition.
pub fn headline_tests(records: &[EntryRecord]) -> Vec<TestRow> {
    let table = entry_rates(records, &[GroupKey::Gender, GroupKey::Treatment, GroupKey::Condition]);
    let label = |g: &[&str]| g.join("/");
    let run = |a: &[&str], b: &[&str]| {
        let (ra, rb) = (table.find(a).expect("in domain"), table.find(b).expect("in domain"));
        TestRow {
            group_a: label(a),
            group_b: label(b),
            test: two_proportion_test(ra.entrants, ra.n, rb.entrants, rb.n).ok(),
        }
    };
    let mut rows = Vec::new();
    for gender in ["female", "male"] {
        for t in Treatment::ALL {
            rows.push(run(&[gender, t.as_str(), "public"], &[gender, t.as_str(), "private"]));
        }
        for condition in ["public", "private"] {
            for t in [Treatment::Preferential, Treatment::Prosocial] {
                rows.push(run(&[gender, t.as_str(), condition], &[gender, "baseline", condition]));
            }
        }
    }
    rows
}

pub fn write_tests_csv<W: Write>(rows: &[TestRow], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group_a", "group_b", "rate_a", "rate_b", "z", "p"])?;
    for row in rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let t = row.test.as_ref();
        w.write_record([
            row.group_a.clone(),
            row.group_b.clone(),
            f(t.map(|t| t.rate_a)),
            f(t.map(|t| t.rate_b)),
            f(t.map(|t| t.z)),
            f(t.map(|t| t.p)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
