//! Report rows and their byte-stable CSV and JSON encodings.
//!
//! Numbers carry 9 significant digits in both formats. JSON values are
//! rounded the same way before serialization, so a parsed report compares
//! equal to the one that was emitted. Missing or non-finite values are empty
//! CSV fields and JSON `null`.

use serde::{Deserialize, Serialize};

/// Fixed 9-significant-digit rendering; magnitudes below `1e-12` print as `0`.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v.abs() < 1e-12 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.8e}")
    }
}

/// `v` as it reads back from [`fmt_num`]; `None` for non-finite values.
pub fn round9(v: f64) -> Option<f64> {
    if v.is_finite() {
        fmt_num(v).parse().ok()
    } else {
        None
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_num)
}

pub trait Row {
    const HEADER: &'static [&'static str];
    fn cells(&self) -> Vec<String>;
}

/// Header row, data rows, then `# key=value` trailer lines; LF endings.
pub fn to_csv<R: Row>(rows: &[R], trailer: &[(String, String)]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(R::HEADER).expect("writing to memory");
    for r in rows {
        w.write_record(r.cells()).expect("writing to memory");
    }
    let mut out = w.into_inner().expect("writing to memory");
    for (k, v) in trailer {
        out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    out
}

pub fn to_json<T: Serialize>(report: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Node,
    Producer,
}

impl Scope {
    fn as_str(self) -> &'static str {
        match self {
            Scope::Node => "node",
            Scope::Producer => "producer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRow {
    pub scope: Scope,
    pub id: usize,
    pub node: usize,
    pub quantity: Option<f64>,
    pub price: Option<f64>,
    pub cost: Option<f64>,
}

impl Row for DispatchRow {
    const HEADER: &'static [&'static str] = &["scope", "id", "node", "quantity", "price", "cost"];
    fn cells(&self) -> Vec<String> {
        vec![
            self.scope.as_str().to_string(),
            self.id.to_string(),
            self.node.to_string(),
            opt(self.quantity),
            opt(self.price),
            opt(self.cost),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSummary {
    pub kind: String,
    pub objective: Option<f64>,
    pub production_cost: Option<f64>,
    pub status: String,
    pub kkt_residual: Option<f64>,
    pub negative_production: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub rows: Vec<DispatchRow>,
    pub summary: DispatchSummary,
}

/// Node rows carry nodal supply and price; producer rows carry output, the
/// price at their node and the rest of the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub scope: Scope,
    pub id: usize,
    pub quantity: Option<f64>,
    pub price: Option<f64>,
    pub theta: Option<f64>,
    pub payoff: Option<f64>,
    pub lerner: Option<f64>,
    pub ms: Option<f64>,
    pub rsi: Option<f64>,
}

impl Row for EquilibriumRow {
    const HEADER: &'static [&'static str] = &["scope", "id", "quantity", "price", "theta", "payoff", "lerner", "ms", "rsi"];
    fn cells(&self) -> Vec<String> {
        vec![
            self.scope.as_str().to_string(),
            self.id.to_string(),
            opt(self.quantity),
            opt(self.price),
            opt(self.theta),
            opt(self.payoff),
            opt(self.lerner),
            opt(self.ms),
            opt(self.rsi),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub kind: String,
    pub verified: bool,
    pub max_deviation_gain: Option<f64>,
    pub iso_optimal: bool,
    pub iso_payoff: Option<f64>,
    pub production_cost: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub notes: Vec<String>,
}

impl EquilibriumSummary {
    pub fn trailer(&self) -> Vec<(String, String)> {
        let mut t = vec![
            ("kind".to_string(), self.kind.clone()),
            ("verified".to_string(), self.verified.to_string()),
            ("max_deviation_gain".to_string(), opt(self.max_deviation_gain)),
            ("iso_optimal".to_string(), self.iso_optimal.to_string()),
            ("iso_payoff".to_string(), opt(self.iso_payoff)),
            ("production_cost".to_string(), opt(self.production_cost)),
            ("kkt_residual".to_string(), opt(self.kkt_residual)),
        ];
        t.extend(self.notes.iter().map(|n| ("note".to_string(), n.clone())));
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub rows: Vec<EquilibriumRow>,
    pub summary: EquilibriumSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub producer: usize,
    pub node: usize,
    pub ms: Option<f64>,
    pub rsi: Option<f64>,
    pub pivotal: bool,
    pub lerner: Option<f64>,
    pub lerner_bound: Option<f64>,
    pub markup_bound: Option<f64>,
}

impl Row for IndexRow {
    const HEADER: &'static [&'static str] =
        &["producer", "node", "ms", "rsi", "pivotal", "lerner", "lerner_bound", "markup_bound"];
    fn cells(&self) -> Vec<String> {
        vec![
            self.producer.to_string(),
            self.node.to_string(),
            opt(self.ms),
            opt(self.rsi),
            self.pivotal.to_string(),
            opt(self.lerner),
            opt(self.lerner_bound),
            opt(self.markup_bound),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub producers: Vec<IndexRow>,
    pub q_max: Vec<Option<f64>>,
    pub poa: Option<f64>,
    pub poa_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub cost_ne: Option<f64>,
    pub cost_eff: Option<f64>,
    pub braess: bool,
}

impl Row for SweepRow {
    const HEADER: &'static [&'static str] = &["c", "q1", "q2", "p1", "p2", "cost_ne", "cost_eff", "braess"];
    fn cells(&self) -> Vec<String> {
        vec![
            opt(self.c),
            opt(self.q1),
            opt(self.q2),
            opt(self.p1),
            opt(self.p2),
            opt(self.cost_ne),
            opt(self.cost_eff),
            self.braess.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSegment {
    pub trend: String,
    pub from: Option<f64>,
    pub to: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub segments: Vec<SweepSegment>,
    pub switch_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub rsi: Option<f64>,
    pub price: Option<f64>,
    pub mc: Option<f64>,
    pub ms: Option<f64>,
    pub bound: Option<f64>,
    pub flag: bool,
    pub exceedance: Option<f64>,
}

impl Row for EnvelopeRow {
    const HEADER: &'static [&'static str] = &["rsi", "price", "mc", "ms", "bound", "flag", "exceedance"];
    fn cells(&self) -> Vec<String> {
        vec![
            opt(self.rsi),
            opt(self.price),
            opt(self.mc),
            opt(self.ms),
            opt(self.bound),
            self.flag.to_string(),
            opt(self.exceedance),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub producer: usize,
    pub gain: Option<f64>,
}

impl Row for VerifyRow {
    const HEADER: &'static [&'static str] = &["producer", "gain"];
    fn cells(&self) -> Vec<String> {
        vec![self.producer.to_string(), opt(self.gain)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub verified: bool,
    pub max_deviation_gain: Option<f64>,
    pub iso_optimal: bool,
    pub iso_gap: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(1.320_512_820_5), "1.32051282");
        assert_eq!(fmt_num(1234.5), "1234.50000");
        assert_eq!(fmt_num(-0.000_123_456_789_01), "-0.000123456789");
        assert_eq!(fmt_num(1e-13), "0");
        assert_eq!(fmt_num(2.5e20), "2.50000000e20");
        assert_eq!(fmt_num(f64::NAN), "");
    }

    #[test]
    fn empty_report_is_header_only() {
        let bytes = to_csv::<EquilibriumRow>(&[], &[]);
        assert_eq!(String::from_utf8(bytes).unwrap(), "scope,id,quantity,price,theta,payoff,lerner,ms,rsi\n");
    }

    fn value() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), (-1e6..1e6f64).prop_map(round9), (-1e-3..1e-3f64).prop_map(round9)]
    }

    fn row() -> impl Strategy<Value = EquilibriumRow> {
        (any::<bool>(), 0usize..50, prop::collection::vec(value(), 7)).prop_map(|(node, id, v)| EquilibriumRow {
            scope: if node { Scope::Node } else { Scope::Producer },
            id,
            quantity: v[0],
            price: v[1],
            theta: v[2],
            payoff: v[3],
            lerner: v[4],
            ms: v[5],
            rsi: v[6],
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(rows in prop::collection::vec(row(), 0..8), gain in value(), verified in any::<bool>()) {
            let report = EquilibriumReport {
                rows,
                summary: EquilibriumSummary {
                    kind: "nash".into(),
                    verified,
                    max_deviation_gain: gain,
                    iso_optimal: !verified,
                    iso_payoff: gain,
                    production_cost: None,
                    kkt_residual: gain,
                    notes: vec!["a note".into()],
                },
            };
            let bytes = to_json(&report);
            let back: EquilibriumReport = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(&back, &report);
            prop_assert_eq!(to_json(&back), bytes);
        }

        #[test]
        fn csv_reads_back(rows in prop::collection::vec(row(), 0..8)) {
            let bytes = to_csv(&rows, &[("verified".into(), "true".into())]);
            let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
            let back: Vec<EquilibriumRow> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
            prop_assert_eq!(back, rows);
        }
    }
}
