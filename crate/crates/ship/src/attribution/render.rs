//! Heatmap rendering of attribution reports.
//!
//! Tokens are colored on a symmetric scale normalized by the largest
//! absolute attribution, with the numeric value printed beneath each token.
//! A side-by-side mode lays two reports over the same tokens out in one
//! table, rows aligned one to one.

use super::AttributionReport;
use crate::ShipError;

/// Color for a normalized score in [-1, 1]: warm for positive, cool for
/// negative, neutral near zero.
fn cell_color(normalized: f64) -> String {
    let a = normalized.abs().clamp(0.0, 1.0);
    if normalized >= 0.0 {
        format!("rgba(220, 80, 60, {a:.3})")
    } else {
        format!("rgba(60, 110, 220, {a:.3})")
    }
}

fn max_abs_score(report: &AttributionReport) -> f64 {
    report
        .tokens
        .iter()
        .map(|t| t.score.abs())
        .fold(0.0, f64::max)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(report: &AttributionReport) -> String {
    format!(
        "<p class=\"meta\">example <code>{}</code> &middot; task {} &middot; target output {} \
         &middot; m = {} &middot; &Delta; = {:.6} &middot; residual = {:.2e}</p>",
        escape(&report.example_id),
        escape(&report.target.task),
        report.target.output_index,
        report.steps,
        report.delta,
        report.completeness_residual,
    )
}

fn flow_view(report: &AttributionReport) -> String {
    let scale = max_abs_score(report).max(1e-300);
    let mut cells = String::new();
    for t in &report.tokens {
        let color = cell_color(t.score / scale);
        cells.push_str(&format!(
            "<span class=\"tok\" style=\"background:{color}\"><span class=\"w\">{}</span>\
             <span class=\"v\">{:+.4}</span></span>\n",
            escape(&t.token),
            t.score
        ));
    }
    format!("{}<div class=\"flow\">{cells}</div>", header(report))
}

const STYLE: &str = r#"
body { font-family: system-ui, sans-serif; margin: 2em; }
.meta { color: #444; }
.flow { line-height: 2.6; max-width: 70em; }
.tok { display: inline-block; margin: 1px; padding: 2px 4px; border-radius: 3px; text-align: center; }
.tok .w { display: block; }
.tok .v { display: block; font-size: 0.62em; color: #333; }
table { border-collapse: collapse; }
td, th { border: 1px solid #ccc; padding: 2px 8px; font-size: 0.9em; }
.notice { color: #666; font-style: italic; }
"#;

fn document(body: &str) -> String {
    format!(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\">\
         <title>token attributions</title><style>{STYLE}</style></head>\n\
         <body>{body}</body></html>\n"
    )
}

/// Render one report, or two side by side when `compare` is given. Returns
/// `(json, html)`. Side-by-side requires identical token streams; rows align
/// one to one by position.
pub fn render_heatmap(
    report: &AttributionReport,
    compare: Option<&AttributionReport>,
) -> Result<(String, String), ShipError> {
    let json = match compare {
        None => serde_json::to_string_pretty(report),
        Some(other) => serde_json::to_string_pretty(&serde_json::json!({
            "left": report,
            "right": other,
        })),
    }
    .map_err(|e| ShipError::Internal(e.to_string()))?;

    if report.tokens.is_empty() {
        let html = document(
            "<p class=\"notice\">empty report: the example has no note tokens</p>",
        );
        return Ok((json, html));
    }

    let html = match compare {
        None => document(&flow_view(report)),
        Some(other) => {
            if report.tokens.len() != other.tokens.len()
                || report
                    .tokens
                    .iter()
                    .zip(&other.tokens)
                    .any(|(a, b)| a.token != b.token)
            {
                return Err(ShipError::Config(
                    "side-by-side reports must cover the same token stream".to_string(),
                ));
            }
            let scale_l = max_abs_score(report).max(1e-300);
            let scale_r = max_abs_score(other).max(1e-300);
            let mut rows = String::new();
            for (a, b) in report.tokens.iter().zip(&other.tokens) {
                rows.push_str(&format!(
                    "<tr><td>{}</td><td><code>{}</code></td>\
                     <td style=\"background:{}\">{:+.4}</td>\
                     <td style=\"background:{}\">{:+.4}</td></tr>\n",
                    a.position,
                    escape(&a.token),
                    cell_color(a.score / scale_l),
                    a.score,
                    cell_color(b.score / scale_r),
                    b.score,
                ));
            }
            let body = format!(
                "{}{}<table><tr><th>#</th><th>token</th><th>left</th><th>right</th></tr>{rows}</table>",
                header(report),
                header(other)
            );
            document(&body)
        }
    };
    Ok((json, html))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{AttributionTarget, TokenAttribution};

    fn report(scores: &[f64]) -> AttributionReport {
        AttributionReport {
            example_id: "p/0".into(),
            target: AttributionTarget {
                task: "ccs".into(),
                output_index: 1,
                label: Some(4),
            },
            steps: 20,
            tokens: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| TokenAttribution {
                    token: format!("tok{i}"),
                    note_id: 0,
                    position: i,
                    score: s,
                })
                .collect(),
            delta: scores.iter().sum(),
            completeness_residual: 0.0,
        }
    }

    #[test]
    fn empty_report_renders_notice() {
        let (json, html) = render_heatmap(&report(&[]), None).unwrap();
        assert!(html.contains("empty report"));
        assert!(json.contains("\"tokens\": []"));
    }

    #[test]
    fn all_zero_scores_render_neutral_cells() {
        let (_, html) = render_heatmap(&report(&[0.0, 0.0, 0.0]), None).unwrap();
        // Alpha 0 on every cell.
        assert_eq!(html.matches("0.000)").count(), 3);
    }

    #[test]
    fn single_nonzero_token_saturates_its_cell() {
        let (_, html) = render_heatmap(&report(&[0.0, -0.8, 0.0]), None).unwrap();
        assert!(html.contains("rgba(60, 110, 220, 1.000)"));
        assert!(html.contains("-0.8000"));
    }

    #[test]
    fn side_by_side_aligns_rows_and_validates_tokens() {
        let left = report(&[0.1, 0.2]);
        let right = report(&[-0.3, 0.4]);
        let (_, html) = render_heatmap(&left, Some(&right)).unwrap();
        assert_eq!(html.matches("<tr><td>").count(), 2);
        assert!(html.contains("<th>left</th><th>right</th>"));

        let mismatched = report(&[0.1, 0.2, 0.3]);
        assert!(render_heatmap(&left, Some(&mismatched)).is_err());
    }

    #[test]
    fn html_escapes_tokens() {
        let mut r = report(&[1.0]);
        r.tokens[0].token = "<script>".into();
        let (_, html) = render_heatmap(&r, None).unwrap();
        assert!(!html.contains("<script>"));
        assert!(html.contains("&lt;script&gt;"));
    }
}
