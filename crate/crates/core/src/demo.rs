//! Greenshields traffic-flow fit: the worked example for the code tool.
//!
//! Speed falls linearly with density, `v = vf * (1 - k / kj)`. A straight-line
//! least-squares fit `v = a + b k` gives `vf = a` and `kj = -a / b`.

use std::sync::LazyLock;

use regex::Regex;

use crate::agent::{BenchmarkItem, Difficulty};
use crate::model::ReplyRule;
use crate::model::ScriptedReply;

/// `n` evenly spaced noiseless samples with density in `(0, kj)`.
pub fn greenshields_samples(vf: f64, kj: f64, n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let k = kj * i as f64 / (n + 1) as f64;
            (k, vf * (1.0 - k / kj))
        })
        .collect()
}

/// Closed-form ordinary least squares, returning `(vf, kj)`.
pub fn fit_greenshields(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return None;
    }
    let mk = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mv = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mk).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mk) * (s.1 - mv)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = mv - b * mk;
    (b != 0.0).then(|| (a, -a / b))
}

/// Self-contained Python that fits the samples and prints `vf=<x> kj=<y>`.
pub fn fit_source(samples: &[(f64, f64)]) -> String {
    let ks: Vec<String> = samples.iter().map(|s| format!("{:?}", s.0)).collect();
    let vs: Vec<String> = samples.iter().map(|s| format!("{:?}", s.1)).collect();
    format!(
        "k = [{}]\nv = [{}]\nn = len(k)\nmk = sum(k) / n\nmv = sum(v) / n\n\
sxx = sum((x - mk) ** 2 for x in k)\nsxy = sum((x - mk) * (y - mv) for x, y in zip(k, v))\n\
b = sxy / sxx\na = mv - b * mk\nprint(f\"vf={{a!r}} kj={{-a / b!r}}\")\n",
        ks.join(", "),
        vs.join(", ")
    )
}

static FIT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"vf=(-?[\d.eE+-]+)\s+kj=(-?[\d.eE+-]+)").unwrap());

pub fn parse_fit(output: &str) -> Option<(f64, f64)> {
    let c = FIT_LINE.captures(output)?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?))
}

pub fn demo_item() -> BenchmarkItem {
    BenchmarkItem {
        id: "greenshields".into(),
        dataset: "demo".into(),
        question: "The plot shows speed against density on a freeway. Estimate the free-flow speed.".into(),
        image_ref: "greenshields.png".into(),
        choices: None,
        gold_answer: "60".into(),
        difficulty: Difficulty::Medium,
    }
}

/// Reasoning script: run the fit once, then answer once a code result is in.
pub fn demo_rules(samples: &[(f64, f64)], answer: &str) -> Vec<ReplyRule> {
    let args = serde_json::json!({ "source": fit_source(samples), "timeout_s": 10 });
    vec![
        ReplyRule {
            when: Some("[code result]".into()),
            unless: None,
            reply: ScriptedReply::with_tokens(format!("The fit gives the free-flow speed.\nFINAL ANSWER: {answer}"), 40),
        },
        ReplyRule {
            when: None,
            unless: None,
            reply: ScriptedReply::with_tokens(format!("Fit a line to the samples.\nTOOL: code {args}"), 120),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_recovers_parameters() {
        let (vf, kj) = fit_greenshields(&greenshields_samples(60.0, 150.0, 12)).unwrap();
        assert!((vf - 60.0).abs() < 1e-9 && (kj - 150.0).abs() < 1e-9);
        assert!(fit_greenshields(&[(1.0, 2.0)]).is_none());
        assert!(fit_greenshields(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn source_embeds_exact_samples() {
        let s = greenshields_samples(60.0, 150.0, 3);
        let src = fit_source(&s);
        assert!(src.contains(&format!("{:?}", s[0].0)));
        assert!(src.ends_with("print(f\"vf={a!r} kj={-a / b!r}\")\n"));
    }

    #[test]
    fn parses_fit_line() {
        assert_eq!(parse_fit("vf=60.00000000000001 kj=149.99999999999997\n"), Some((60.00000000000001, 149.99999999999997)));
        assert_eq!(parse_fit("nothing"), None);
    }
}
