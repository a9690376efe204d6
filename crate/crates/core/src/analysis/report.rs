//! Responses CSV ingestion and the per-item comparison table.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::Serialize;

use super::{compare_groups, quantile, sorted, stars, tpa_score, LikertResponse, TestResult, ITEMS};
use crate::error::{invalid, Error, Result};
use crate::patterns::PatternKind;

pub const RESPONSES_HEADER: &str = "participant,condition,i1,i2,i3,i4,i5,i6,i7,i8,i9,i10,i11,i12,coins";

/// Column order of the table.
const CONDITION_ORDER: [PatternKind; 4] =
    [PatternKind::Simple, PatternKind::Random, PatternKind::Synchronized, PatternKind::Replay];

fn short(kind: PatternKind) -> &'static str {
    match kind {
        PatternKind::Simple => "simp",
        PatternKind::Random => "rand",
        PatternKind::Synchronized => "sync",
        PatternKind::Replay => "repl",
    }
}

pub fn read_responses<R: Read>(reader: R) -> Result<Vec<LikertResponse>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != RESPONSES_HEADER {
        return Err(invalid(format!("responses header mismatch: {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let mut items = [0u8; ITEMS];
        for (k, item) in items.iter_mut().enumerate() {
            *item = field(2 + k)
                .parse()
                .map_err(|_| invalid(format!("row {row}: item {} is not an integer", k + 1)))?;
        }
        let coins = match field(2 + ITEMS) {
            "" => None,
            s => Some(s.parse().map_err(|_| invalid(format!("row {row}: bad coin count '{s}'")))?),
        };
        let resp = LikertResponse { participant: field(0).to_owned(), condition: field(1).parse()?, items, coins };
        resp.validate()?;
        out.push(resp);
    }
    Ok(out)
}

pub fn write_responses<W: Write>(writer: W, responses: &[LikertResponse]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(RESPONSES_HEADER.split(','))?;
    for r in responses {
        let mut rec = vec![r.participant.clone(), r.condition.to_string()];
        rec.extend(r.items.iter().map(u8::to_string));
        rec.push(r.coins.map(|c| c.to_string()).unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub test: TestResult,
}

impl ReportRow {
    /// Stars for a pair, shown only when the omnibus test is significant.
    pub fn pair_stars(&self, pair: usize) -> &'static str {
        if self.test.degenerate || self.test.p_value >= 0.05 {
            return "";
        }
        self.test.pairwise.get(pair).map_or("", |p| stars(p.p_adjusted))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub conditions: Vec<PatternKind>,
    pub rows: Vec<ReportRow>,
}

fn row(label: &str, groups: Vec<Vec<f64>>, tie_correction: bool) -> Result<ReportRow> {
    let mut medians = Vec::with_capacity(groups.len());
    let mut iqrs = Vec::with_capacity(groups.len());
    for g in &groups {
        let s = sorted(g);
        medians.push(quantile(&s, 0.5));
        iqrs.push(quantile(&s, 0.75) - quantile(&s, 0.25));
    }
    Ok(ReportRow { label: label.to_owned(), medians, iqrs, test: compare_groups(&groups, tie_correction)? })
}

/// One row per questionnaire item, then the combined trust score and the
/// coin count (when every condition has players).
pub fn report_table(responses: &[LikertResponse], tie_correction: bool) -> Result<Report> {
    let conditions: Vec<PatternKind> = CONDITION_ORDER
        .into_iter()
        .filter(|c| responses.iter().any(|r| r.condition == *c))
        .collect();
    if conditions.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least two conditions, got {}", conditions.len())));
    }
    let by_cond = |f: &dyn Fn(&LikertResponse) -> Option<f64>| -> Vec<Vec<f64>> {
        conditions
            .iter()
            .map(|c| responses.iter().filter(|r| r.condition == *c).filter_map(f).collect())
            .collect()
    };
    let mut rows = Vec::with_capacity(ITEMS + 2);
    for k in 0..ITEMS {
        rows.push(row(&format!("i{}", k + 1), by_cond(&|r| Some(f64::from(r.items[k]))), tie_correction)?);
    }
    for r in responses {
        r.validate()?;
    }
    rows.push(row("tpa", by_cond(&|r| tpa_score(r).ok()), tie_correction)?);
    let coins = by_cond(&|r| r.coins.map(f64::from));
    if coins.iter().all(|g| !g.is_empty()) {
        rows.push(row("coins", coins, tie_correction)?);
    }
    Ok(Report { conditions, rows })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn p_band(p: f64) -> &'static str {
    if p < 0.001 {
        "<.001"
    } else if p < 0.01 {
        "<.01"
    } else if p < 0.05 {
        "<.05"
    } else {
        ">.05"
    }
}

impl Report {
    pub fn pair_labels(&self) -> Vec<String> {
        let k = self.conditions.len();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                out.push(format!("{}-{}", short(self.conditions[i]), short(self.conditions[j])));
            }
        }
        out
    }

    pub fn degenerate_rows(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| r.test.degenerate).map(|r| r.label.as_str()).collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["item".to_owned()];
        for c in &self.conditions {
            h.push(format!("{}_median", short(*c)));
            h.push(format!("{}_iqr", short(*c)));
        }
        h.push("chi2".into());
        h.push("df".into());
        h.push("p".into());
        h.push("eta2".into());
        h.extend(self.pair_labels().into_iter().map(|l| format!("z_{l}")));
        h.extend(self.pair_labels().into_iter().map(|l| format!("p_adj_{l}")));
        h
    }

    /// Full-precision CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        wtr.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            for (m, q) in r.medians.iter().zip(&r.iqrs) {
                rec.push(m.to_string());
                rec.push(q.to_string());
            }
            rec.push(r.test.statistic.to_string());
            rec.push(r.test.df.to_string());
            rec.push(r.test.p_value.to_string());
            rec.push(r.test.eta_squared.to_string());
            rec.extend(r.test.pairwise.iter().map(|p| p.z.to_string()));
            rec.extend(r.test.pairwise.iter().map(|p| p.p_adjusted.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Aligned text table: medians and IQRs, the omnibus triple (η² only when
    /// significant) and stars per pair.
    pub fn to_text(&self) -> String {
        let df = self.conditions.len() - 1;
        let mut head = vec!["item".to_owned()];
        for c in &self.conditions {
            head.push(format!("{} x~", short(*c)));
            head.push("IQR".into());
        }
        head.push(format!("chi2({df})"));
        head.push("p".into());
        head.push("eta2".into());
        head.extend(self.pair_labels());
        let mut table = vec![head];
        for r in &self.rows {
            let mut line = vec![r.label.clone()];
            for (m, q) in r.medians.iter().zip(&r.iqrs) {
                line.push(num(*m));
                line.push(num(*q));
            }
            let significant = !r.test.degenerate && r.test.p_value < 0.05;
            line.push(format!("{:.2}", r.test.statistic));
            line.push(p_band(r.test.p_value).into());
            line.push(if significant { format!("{:.2}", r.test.eta_squared) } else { String::new() });
            line.extend((0..r.test.pairwise.len()).map(|i| r.pair_stars(i).to_owned()));
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(id: usize, condition: PatternKind, items: [u8; ITEMS]) -> LikertResponse {
        LikertResponse { participant: format!("p{id:02}"), condition, items, coins: Some((id % 6) as u32) }
    }

    fn shifted_study() -> Vec<LikertResponse> {
        let mut out = Vec::new();
        for (c, kind) in [PatternKind::Simple, PatternKind::Random, PatternKind::Synchronized].into_iter().enumerate() {
            for n in 0..17 {
                let mut items = [1 + (n % 3) as u8; ITEMS];
                if kind == PatternKind::Synchronized {
                    items[11] += 4;
                }
                out.push(response(c * 17 + n, kind, items));
            }
        }
        out
    }

    #[test]
    fn shifted_item_gets_stars_on_shifted_pairs() {
        let report = report_table(&shifted_study(), true).unwrap();
        assert_eq!(report.pair_labels(), vec!["simp-rand", "simp-sync", "rand-sync"]);
        let last = report.rows.iter().find(|r| r.label == "i12").unwrap();
        assert_eq!(last.pair_stars(0), "");
        assert_eq!(last.pair_stars(1), "***");
        assert_eq!(last.pair_stars(2), "***");
        let first = &report.rows[0];
        assert!((0..3).all(|i| first.pair_stars(i).is_empty()));
    }

    #[test]
    fn constant_data_has_no_stars() {
        let mut study = shifted_study();
        for r in &mut study {
            r.items = [4; ITEMS];
        }
        let report = report_table(&study, true).unwrap();
        for r in report.rows.iter().take(ITEMS) {
            assert!(r.medians.iter().all(|&m| m == 4.0));
            assert!((0..3).all(|i| r.pair_stars(i).is_empty()));
            assert!(r.test.degenerate);
        }
        assert_eq!(report.degenerate_rows().len(), ITEMS + 1);
    }

    #[test]
    fn text_layout_follows_condition_order() {
        let text = report_table(&shifted_study(), true).unwrap().to_text();
        let head = text.lines().next().unwrap();
        let pos = |s: &str| head.find(s).unwrap();
        assert!(pos("simp") < pos("rand x~") && pos("rand x~") < pos("sync x~"));
        assert!(pos("chi2(2)") < pos("eta2") && pos("eta2") < pos("simp-rand"));
        assert_eq!(text.lines().count(), 1 + ITEMS + 2);
    }

    #[test]
    fn responses_round_trip() {
        let mut study = shifted_study();
        study[3].coins = None;
        let mut buf = Vec::new();
        write_responses(&mut buf, &study).unwrap();
        assert_eq!(read_responses(buf.as_slice()).unwrap(), study);
    }

    #[test]
    fn single_condition_is_rejected() {
        let study: Vec<_> = shifted_study().into_iter().filter(|r| r.condition == PatternKind::Simple).collect();
        assert!(report_table(&study, true).is_err());
    }

    #[test]
    fn bad_rows_are_reported() {
        let csv = format!("{RESPONSES_HEADER}\np1,simple,1,2,3,4,5,6,7,1,2,3,4,9,2\n");
        assert!(read_responses(csv.as_bytes()).is_err());
        let csv = format!("{RESPONSES_HEADER}\np1,human,1,2,3,4,5,6,7,1,2,3,4,5,2\n");
        assert!(read_responses(csv.as_bytes()).is_err());
    }
}
