//! One function per subcommand; each returns the encoded report.

use std::path::Path;

use clap::Args;
use serde::Serialize;
use sfgame::dispatch::{efficient_dispatch, reported_dispatch, DispatchOutcome};
use sfgame::engine::{KktResiduals, STATIONARITY_TOL};
use sfgame::equilibrium::{
    competitive_equilibrium_with, nash_equilibrium_with, producer_payoff, unbounded_poa_instance, verify_nash_with,
    Tolerances,
};
use sfgame::indices::{envelope_check, index_report, lerner_index, market_share, rsi, EnvelopeRecord};
use sfgame::scenario::Scenario;
use sfgame::two_node::{capacity_sweep, Trend, TwoNodeScenario};
use sfgame::{BidProfile, Market};

use crate::report::{
    round9, to_csv, to_json, DispatchReport, DispatchRow, DispatchSummary, EnvelopeRow, EquilibriumReport,
    EquilibriumRow, EquilibriumSummary, IndexReport, IndexRow, Row, Scope, SweepReport, SweepRow, SweepSegment,
    VerifyReport, VerifyRow,
};
use crate::{Common, Failure, Format, Output};

struct Loaded {
    market: Market,
    tol: Tolerances,
    tol_kkt: f64,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(path: &Path, c: &Common) -> Result<Loaded, Failure> {
    let text = read(path)?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let market = scenario.market()?;
    let defaults = Tolerances::default();
    let o = scenario.options;
    let tol = Tolerances {
        eps_nash: c.eps_nash.or(o.eps_nash).unwrap_or(defaults.eps_nash),
        tol_feas: c.tol_feas.or(o.tol_feas).unwrap_or(defaults.tol_feas),
    };
    let tol_kkt = c.tol_kkt.or(o.tol_kkt).unwrap_or(STATIONARITY_TOL);
    for (name, v) in [("eps-nash", tol.eps_nash), ("tol-feas", tol.tol_feas), ("tol-kkt", tol_kkt)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::Input(format!("--{name} must be positive, got {v}")));
        }
    }
    Ok(Loaded { market, tol, tol_kkt })
}

fn kkt(r: &KktResiduals) -> f64 {
    r.primal.max(r.stationarity).max(r.complementarity)
}

/// Warns on stderr when a solve stopped short of the KKT tolerance.
fn check_kkt(residual: f64, tol_kkt: f64) {
    if residual > tol_kkt {
        eprintln!("warning: KKT residual {residual:.3e} exceeds --tol-kkt {tol_kkt:.3e}");
    }
}

fn encode<R: Row, T: Serialize>(format: Format, rows: &[R], trailer: &[(String, String)], json: &T) -> Vec<u8> {
    match format {
        Format::Csv => to_csv(rows, trailer),
        Format::Json => to_json(json),
    }
}

fn bool_field(name: &str, v: bool) -> (String, String) {
    (name.to_string(), v.to_string())
}

fn num_field(name: &str, v: Option<f64>) -> (String, String) {
    (name.to_string(), v.map_or_else(String::new, crate::report::fmt_num))
}

pub fn dispatch(path: &Path, bids: Option<Vec<f64>>, c: &Common) -> Result<Output, Failure> {
    let l = load(path, c)?;
    let m = &l.market;
    let (kind, out) = match bids {
        Some(b) => ("reported", reported_dispatch(m, &BidProfile::new(b)?)?),
        None => ("efficient", efficient_dispatch(m)?),
    };
    let mut rows: Vec<DispatchRow> = (0..m.node_count())
        .map(|i| DispatchRow {
            scope: Scope::Node,
            id: i,
            node: i,
            quantity: round9(out.q[i]),
            price: round9(out.p[i]),
            cost: None,
        })
        .collect();
    for (j, p) in m.producers().iter().enumerate() {
        rows.push(DispatchRow {
            scope: Scope::Producer,
            id: j,
            node: p.node,
            quantity: round9(out.x[j]),
            price: round9(out.p[p.node]),
            cost: round9(p.cost.value(out.x[j])),
        });
    }
    let residual = kkt(&out.residuals);
    check_kkt(residual, l.tol_kkt);
    let summary = DispatchSummary {
        kind: kind.to_string(),
        objective: round9(out.objective_value),
        production_cost: round9(out.production_cost(m)),
        status: format!("{:?}", out.status).to_lowercase(),
        kkt_residual: round9(residual),
        negative_production: out.negative_production,
    };
    let trailer = vec![
        ("kind".to_string(), summary.kind.clone()),
        num_field("objective", summary.objective),
        num_field("production_cost", summary.production_cost),
        ("status".to_string(), summary.status.clone()),
        num_field("kkt_residual", summary.kkt_residual),
        bool_field("negative_production", summary.negative_production),
    ];
    let bytes = encode(c.format, &rows, &trailer, &DispatchReport { rows: rows.clone(), summary });
    Ok(Output { bytes, ok: true })
}

fn equilibrium_rows(m: &Market, q: &[f64], p: &[f64], x: &[f64], theta: &[f64]) -> Vec<EquilibriumRow> {
    let mut rows: Vec<EquilibriumRow> = (0..m.node_count())
        .map(|i| EquilibriumRow {
            scope: Scope::Node,
            id: i,
            quantity: round9(q[i]),
            price: round9(p[i]),
            theta: None,
            payoff: None,
            lerner: None,
            ms: None,
            rsi: None,
        })
        .collect();
    for (j, prod) in m.producers().iter().enumerate() {
        let price = p[prod.node];
        rows.push(EquilibriumRow {
            scope: Scope::Producer,
            id: j,
            quantity: round9(x[j]),
            price: round9(price),
            theta: round9(theta[j]),
            payoff: round9(producer_payoff(price, x[j], &prod.cost)),
            lerner: lerner_index(price, prod.cost.derivatives(x[j]).1).ok().and_then(round9),
            ms: market_share(m, j).ok().and_then(round9),
            rsi: rsi(m, j).ok().and_then(round9),
        });
    }
    rows
}

fn emit_equilibrium(format: Format, rows: Vec<EquilibriumRow>, summary: EquilibriumSummary) -> Vec<u8> {
    let trailer = summary.trailer();
    encode(format, &rows, &trailer, &EquilibriumReport { rows: rows.clone(), summary })
}

pub fn equilibrium(path: &Path, nash: bool, c: &Common) -> Result<Output, Failure> {
    let l = load(path, c)?;
    let m = &l.market;
    let out = if nash { nash_equilibrium_with(m, &l.tol)? } else { competitive_equilibrium_with(m, &l.tol)? };
    let d = &out.dispatch;
    let rows = equilibrium_rows(m, &d.q, &d.p, &d.x, out.bids.as_slice());
    let residual = kkt(&d.residuals);
    check_kkt(residual, l.tol_kkt);
    let summary = EquilibriumSummary {
        kind: if nash { "nash" } else { "competitive" }.to_string(),
        verified: out.verified,
        max_deviation_gain: round9(out.max_deviation_gain),
        iso_optimal: out.iso_optimal,
        iso_payoff: round9(out.iso_payoff),
        production_cost: round9(d.production_cost(m)),
        kkt_residual: round9(residual),
        notes: out.notes.clone(),
    };
    Ok(Output { bytes: emit_equilibrium(c.format, rows, summary), ok: true })
}

pub fn indices(path: &Path, with_nash: bool, c: &Common) -> Result<Output, Failure> {
    let l = load(path, c)?;
    let m = &l.market;
    let ne: Option<(DispatchOutcome, f64)> = if with_nash {
        let ne = nash_equilibrium_with(m, &l.tol)?;
        let eff = efficient_dispatch(m)?;
        Some((ne.dispatch, eff.production_cost(m)))
    } else {
        None
    };
    let r = index_report(m, ne.as_ref().map(|(d, e)| (d, *e)))?;
    let rows: Vec<IndexRow> = r
        .producers
        .iter()
        .map(|p| IndexRow {
            producer: p.producer,
            node: p.node,
            ms: p.ms.and_then(round9),
            rsi: p.rsi.and_then(round9),
            pivotal: p.pivotal,
            lerner: p.lerner.and_then(round9),
            lerner_bound: p.lerner_bound.and_then(round9),
            markup_bound: p.markup_bound.and_then(round9),
        })
        .collect();
    let report = IndexReport {
        producers: rows.clone(),
        q_max: r.q_max.iter().map(|&v| round9(v)).collect(),
        poa: r.poa.and_then(round9),
        poa_bound: r.poa_bound.and_then(round9),
    };
    let q_max: Vec<String> = report.q_max.iter().map(|v| v.map_or_else(String::new, crate::report::fmt_num)).collect();
    let trailer =
        vec![("q_max".to_string(), q_max.join(";")), num_field("poa", report.poa), num_field("poa_bound", report.poa_bound)];
    Ok(Output { bytes: encode(c.format, &rows, &trailer, &report), ok: true })
}

#[derive(Args)]
pub struct BraessArgs {
    #[arg(long, default_value_t = 1.0)]
    d1: f64,
    #[arg(long, default_value_t = 1.0)]
    d2: f64,
    #[arg(long, default_value_t = 3)]
    n1: usize,
    #[arg(long, default_value_t = 10)]
    n2: usize,
    #[arg(long, default_value_t = 1.02)]
    k1: f64,
    #[arg(long, default_value_t = 1.02)]
    k2: f64,
    #[arg(long, default_value_t = 1.0)]
    beta1: f64,
    #[arg(long, default_value_t = 1.15)]
    beta2: f64,
    #[arg(long, default_value_t = 0.0)]
    c_min: f64,
    #[arg(long, default_value_t = 0.8)]
    c_max: f64,
    #[arg(long, default_value_t = 0.01)]
    c_step: f64,
}

fn trend_name(t: Trend) -> &'static str {
    match t {
        Trend::Increasing => "increasing",
        Trend::Constant => "constant",
        Trend::Decreasing => "decreasing",
    }
}

pub fn braess(a: &BraessArgs, c: &Common) -> Result<Output, Failure> {
    if !(a.c_step > 0.0) || !(a.c_min >= 0.0) || !(a.c_max >= a.c_min) {
        return Err(Failure::Input("need 0 <= c-min <= c-max and c-step > 0".into()));
    }
    // Grid points are multiples of the step so rounding does not accumulate.
    let count = ((a.c_max - a.c_min) / a.c_step * (1.0 + 1e-12)).floor() as usize;
    let grid: Vec<f64> = (0..=count).map(|k| a.c_min + k as f64 * a.c_step).collect();
    let s = TwoNodeScenario::new([a.d1, a.d2], [a.n1, a.n2], [a.k1, a.k2], [a.beta1, a.beta2], a.c_min)
        .map_err(|e| Failure::Input(e.to_string()))?;
    let sweep = capacity_sweep(&s, &grid)?;
    let rows: Vec<SweepRow> = sweep
        .rows
        .iter()
        .map(|r| SweepRow {
            c: round9(r.c),
            q1: round9(r.q1),
            q2: round9(r.q2),
            p1: round9(r.p1),
            p2: round9(r.p2),
            cost_ne: round9(r.cost_ne),
            cost_eff: round9(r.cost_eff),
            braess: r.braess,
        })
        .collect();
    let segments: Vec<SweepSegment> = sweep
        .segments
        .iter()
        .map(|g| SweepSegment { trend: trend_name(g.trend).to_string(), from: round9(g.from), to: round9(g.to) })
        .collect();
    let report = SweepReport { rows: rows.clone(), segments: segments.clone(), switch_point: sweep.switch_point.and_then(round9) };
    let mut trailer = vec![num_field("switch_point", report.switch_point)];
    for g in &segments {
        let span = |v: Option<f64>| v.map_or_else(String::new, crate::report::fmt_num);
        trailer.push(("segment".to_string(), format!("{}:{}:{}", g.trend, span(g.from), span(g.to))));
    }
    Ok(Output { bytes: encode(c.format, &rows, &trailer, &report), ok: true })
}

pub fn envelope(path: &Path, c: &Common) -> Result<Output, Failure> {
    let text = read(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?.clone();
    for h in &headers {
        if !["rsi", "price", "mc", "ms"].contains(&h) {
            return Err(Failure::Input(format!("{}: unknown column {h:?}", path.display())));
        }
    }
    let mut records = Vec::new();
    for r in rdr.deserialize::<EnvelopeRecord>() {
        records.push(r.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?);
    }
    let rows: Vec<EnvelopeRow> = envelope_check(&records)
        .iter()
        .map(|r| EnvelopeRow {
            rsi: round9(r.record.rsi),
            price: round9(r.record.price),
            mc: r.record.mc.and_then(round9),
            ms: r.record.ms.and_then(round9),
            bound: r.bound.and_then(round9),
            flag: r.flagged,
            exceedance: round9(r.exceedance),
        })
        .collect();
    let flagged = rows.iter().filter(|r| r.flag).count();
    let trailer = vec![("flagged".to_string(), flagged.to_string())];
    Ok(Output { bytes: encode(c.format, &rows, &trailer, &rows), ok: true })
}

#[derive(Args)]
pub struct PoaArgs {
    #[arg(long, default_value_t = 2.0)]
    d: f64,
    #[arg(long, default_value_t = 2)]
    n1: usize,
    #[arg(long, default_value_t = 2)]
    n2: usize,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 4.0)]
    k2: f64,
    /// Supply at node 1; the regime requires it strictly inside an interval set by the other flags.
    #[arg(long, default_value_t = 1.2)]
    t: f64,
}

#[derive(Serialize)]
struct PoaReport {
    rows: Vec<EquilibriumRow>,
    summary: EquilibriumSummary,
    beta: Option<f64>,
    efficient_cost: Option<f64>,
    equilibrium_cost: Option<f64>,
    poa_lower_bound: Option<f64>,
}

pub fn poa_example(a: &PoaArgs, c: &Common) -> Result<Output, Failure> {
    let ex = unbounded_poa_instance([a.n1, a.n2], [a.k1, a.k2], a.d, a.t)?;
    let m = &ex.market;
    let defaults = Tolerances::default();
    let tol = Tolerances {
        eps_nash: c.eps_nash.unwrap_or(defaults.eps_nash),
        tol_feas: c.tol_feas.unwrap_or(defaults.tol_feas),
    };
    let check = verify_nash_with(m, &ex.q, &ex.bids, &tol)?;
    let prices = vec![ex.price; m.node_count()];
    let rows = equilibrium_rows(m, &ex.q, &prices, &ex.x, ex.bids.as_slice());
    let summary = EquilibriumSummary {
        kind: "nash".to_string(),
        verified: check.verified,
        max_deviation_gain: round9(check.max_deviation_gain),
        iso_optimal: check.iso_optimal,
        iso_payoff: None,
        production_cost: round9(ex.equilibrium_cost),
        kkt_residual: None,
        notes: Vec::new(),
    };
    let mut trailer = summary.trailer();
    trailer.extend([
        num_field("beta", round9(ex.beta)),
        num_field("efficient_cost", round9(ex.efficient_cost)),
        num_field("equilibrium_cost", round9(ex.equilibrium_cost)),
        num_field("poa_lower_bound", round9(ex.poa_lower_bound)),
    ]);
    let report = PoaReport {
        rows: rows.clone(),
        summary,
        beta: round9(ex.beta),
        efficient_cost: round9(ex.efficient_cost),
        equilibrium_cost: round9(ex.equilibrium_cost),
        poa_lower_bound: round9(ex.poa_lower_bound),
    };
    Ok(Output { bytes: encode(c.format, &rows, &trailer, &report), ok: true })
}

fn read_equilibrium(path: &Path) -> Result<Vec<EquilibriumRow>, Failure> {
    let text = read(path)?;
    let bad = |e: String| Failure::Input(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('{') {
        let r: EquilibriumReport = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        Ok(r.rows)
    } else {
        // Trailer lines are dropped here: the csv reader misreads a final comment without a newline.
        let body: String = text.lines().filter(|l| !l.starts_with('#')).flat_map(|l| [l, "\n"]).collect();
        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        rdr.deserialize().collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))
    }
}

pub fn verify(scenario: &Path, equilibrium: &Path, c: &Common) -> Result<Output, Failure> {
    let l = load(scenario, c)?;
    let m = &l.market;
    let rows = read_equilibrium(equilibrium)?;
    let mut q = vec![None; m.node_count()];
    let mut theta = vec![None; m.producer_count()];
    for r in &rows {
        let slot = match r.scope {
            Scope::Node => (q.get_mut(r.id), r.quantity),
            Scope::Producer => (theta.get_mut(r.id), r.theta),
        };
        match slot {
            (Some(s), Some(v)) => *s = Some(v),
            _ => return Err(Failure::Input(format!("{}: row {:?} {} does not fit the scenario", equilibrium.display(), r.scope, r.id))),
        }
    }
    let missing = |what: &str| Failure::Input(format!("{}: missing {what}", equilibrium.display()));
    let q: Vec<f64> = q.into_iter().collect::<Option<_>>().ok_or_else(|| missing("node supply"))?;
    let theta: Vec<f64> = theta.into_iter().collect::<Option<_>>().ok_or_else(|| missing("producer bids"))?;
    let check = verify_nash_with(m, &q, &BidProfile::new(theta)?, &l.tol)?;
    let out_rows: Vec<VerifyRow> =
        check.gains.iter().enumerate().map(|(j, &g)| VerifyRow { producer: j, gain: round9(g) }).collect();
    let report = VerifyReport {
        rows: out_rows.clone(),
        verified: check.verified,
        max_deviation_gain: round9(check.max_deviation_gain),
        iso_optimal: check.iso_optimal,
        iso_gap: round9(check.iso_gap),
    };
    let trailer = vec![
        bool_field("verified", report.verified),
        num_field("max_deviation_gain", report.max_deviation_gain),
        bool_field("iso_optimal", report.iso_optimal),
        num_field("iso_gap", report.iso_gap),
    ];
    Ok(Output { bytes: encode(c.format, &out_rows, &trailer, &report), ok: check.verified })
}
