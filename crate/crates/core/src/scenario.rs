//! Scenario files: named optimization setups with expected outcomes.
//!
//! A scenario file is TOML tagged `format = "eiou-scenario/1"` holding one
//! or more `[[scenario]]` tables. See `docs/scenario-format.md` for the
//! grammar. The bundled file reproduces the convergence experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{anchor_scale, BBox};
use crate::losses::LossSpec;
use crate::optimizer::{run, OptimConfig, Trace, UpdateMode};

pub const FORMAT_TAG: &str = "eiou-scenario/1";

/// The bundled convergence scenarios.
pub const BUNDLED: &str = include_str!("../scenarios/convergence.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    format: String,
    #[serde(default)]
    scenario: Vec<RawScenario>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    target: String,
    init: String,
    anchor: Option<String>,
    #[serde(default)]
    optim: RawOptim,
    #[serde(default)]
    expect: Expectations,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptim {
    alpha: Option<f64>,
    max_iters: Option<usize>,
    loss_tol: Option<f64>,
    mode: Option<UpdateMode>,
    loss: Option<String>,
}

/// Assertions checked against a finished trace. Unset fields are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Whether the final loss should be at or below `loss_tol`.
    pub converged: Option<bool>,
    pub final_loss_below: Option<f64>,
    /// Window for `tail_range_above`, default 100 iterations.
    pub tail_window: Option<usize>,
    /// The loss range over the final window must exceed this (oscillation).
    pub tail_range_above: Option<f64>,
    /// EIoU must stay at or below this value for the whole run.
    pub eiou_never_above: Option<f64>,
    /// EIoU must exceed this value at some iteration.
    pub eiou_reaches: Option<f64>,
    /// Loss must be non-increasing at every step (slack 1e-12).
    pub monotone_loss: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub target: BBox,
    pub init: BBox,
    /// When set, target and init are divided by the anchor's sqrt-area
    /// before optimizing.
    pub anchor: Option<BBox>,
    pub cfg: OptimConfig,
    pub expect: Expectations,
}

fn parse_box(field: &str, name: &str, s: &str) -> Result<BBox> {
    s.parse::<BBox>().map_err(|e| {
        Error::Config(format!("scenario {name:?}: bad {field} {s:?}: {e}"))
    })
}

/// Parses and validates a scenario file.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| text[..s.start].lines().count().max(1)),
        msg: e.message().to_string(),
    })?;
    if raw.format != FORMAT_TAG {
        return Err(Error::Config(format!(
            "unsupported scenario format {:?}, expected {FORMAT_TAG:?}",
            raw.format
        )));
    }
    let mut out: Vec<Scenario> = Vec::with_capacity(raw.scenario.len());
    for r in raw.scenario {
        if out.iter().any(|s| s.name == r.name) {
            return Err(Error::Config(format!("duplicate scenario name {:?}", r.name)));
        }
        let d = OptimConfig::default();
        let loss = match &r.optim.loss {
            Some(s) => s.parse::<LossSpec>()?,
            None => d.loss,
        };
        let cfg = OptimConfig {
            alpha: r.optim.alpha.unwrap_or(d.alpha),
            max_iters: r.optim.max_iters.unwrap_or(d.max_iters),
            loss_tol: r.optim.loss_tol.unwrap_or(d.loss_tol),
            mode: r.optim.mode.unwrap_or(d.mode),
            loss,
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("scenario {:?}: {e}", r.name)))?;
        let anchor = match &r.anchor {
            Some(a) => Some(parse_box("anchor", &r.name, a)?),
            None => None,
        };
        out.push(Scenario {
            target: parse_box("target", &r.name, &r.target)?,
            init: parse_box("init", &r.name, &r.init)?,
            name: r.name,
            description: r.description,
            anchor,
            cfg,
            expect: r.expect,
        });
    }
    Ok(out)
}

pub fn bundled() -> Vec<Scenario> {
    parse_scenarios(BUNDLED).expect("bundled scenarios are valid")
}

pub fn find<'a>(scenarios: &'a [Scenario], name: &str) -> Option<&'a Scenario> {
    scenarios.iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub name: String,
    pub trace: Trace,
    /// Set when the run halted on an invalid update.
    pub error: Option<Error>,
    pub checks: Vec<Check>,
}

impl ScenarioOutcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl Scenario {
    /// Target and init in the coordinates the optimizer sees.
    pub fn working_boxes(&self) -> Result<(BBox, BBox)> {
        match &self.anchor {
            Some(a) => {
                let s = 1.0 / anchor_scale(a);
                Ok((self.target.scaled(s)?, self.init.scaled(s)?))
            }
            None => Ok((self.target, self.init)),
        }
    }

    pub fn run(&self) -> Result<ScenarioOutcome> {
        let (t, p) = self.working_boxes()?;
        let (trace, error) = match run(&t, &p, &self.cfg) {
            Ok(tr) => (tr, None),
            Err(f) => (f.trace, Some(f.error)),
        };
        let checks = evaluate(&self.expect, &self.cfg, &trace, error.as_ref());
        Ok(ScenarioOutcome {
            name: self.name.clone(),
            trace,
            error,
            checks,
        })
    }
}

/// Evaluates every set expectation against `trace`. A run that halted on an
/// error always gets a failing `completed` check.
pub fn evaluate(
    e: &Expectations,
    cfg: &OptimConfig,
    trace: &Trace,
    error: Option<&Error>,
) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| {
        checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        })
    };
    if let Some(err) = error {
        push("completed", false, err.to_string());
    }
    let last = trace.last().expect("traces hold at least the initial state");
    let iters = last.iter;
    if let Some(want) = e.converged {
        let got = last.loss <= cfg.loss_tol;
        push(
            "converged",
            got == want,
            format!("final loss {:e} after {iters} iterations, tolerance {:e}", last.loss, cfg.loss_tol),
        );
    }
    if let Some(bound) = e.final_loss_below {
        push(
            "final_loss_below",
            last.loss < bound,
            format!("final loss {:e}, bound {bound:e}", last.loss),
        );
    }
    if let Some(bound) = e.tail_range_above {
        let window = e.tail_window.unwrap_or(100);
        let range = trace.tail_loss_range(window);
        push(
            "tail_range_above",
            trace.len() > window && range > bound,
            format!("loss range {range:e} over last {window} iterations, bound {bound:e}"),
        );
    }
    if let Some(bound) = e.eiou_never_above {
        let max = trace.eious().into_iter().fold(f64::NEG_INFINITY, f64::max);
        push(
            "eiou_never_above",
            max <= bound,
            format!("max eiou {max} over {iters} iterations, bound {bound}"),
        );
    }
    if let Some(th) = e.eiou_reaches {
        let first = trace.first_iter_above(th);
        push(
            "eiou_reaches",
            first.is_some(),
            match first {
                Some(k) => format!("eiou > {th} first at iteration {k}"),
                None => format!("eiou never exceeded {th} in {iters} iterations"),
            },
        );
    }
    if let Some(want) = e.monotone_loss {
        let v = trace.monotonicity_violations(1e-12);
        push(
            "monotone_loss",
            v.is_empty() == want,
            match v.first() {
                Some(k) => format!("{} increases, first after iteration {k}", v.len()),
                None => "loss non-increasing".to_string(),
            },
        );
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parses() {
        let all = bundled();
        for name in [
            "fig-convergence-smooth",
            "fig-convergence-raw",
            "fig-sot-trapped",
            "scale-1-sot",
            "scale-2-sot",
            "scale-4-sot",
            "scale-1-plain",
            "scale-2-plain",
            "scale-4-plain",
        ] {
            assert!(find(&all, name).is_some(), "{name}");
        }
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = parse_scenarios(
            r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,0.5,0.5"
"#,
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].cfg, OptimConfig::default());
        assert_eq!(s[0].expect, Expectations::default());
    }

    #[test]
    fn rejects_bad_files() {
        let dup = r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,1,1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,1,1"
"#;
        assert!(matches!(parse_scenarios(dup), Err(Error::Config(_))));
        let tag = "format = \"eiou-scenario/9\"\n";
        assert!(matches!(parse_scenarios(tag), Err(Error::Config(_))));
        let bad_box = r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1"
init = "0,0,1,1"
"#;
        assert!(parse_scenarios(bad_box).is_err());
        let unknown = r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,1,1"
colour = "red"
"#;
        assert!(matches!(parse_scenarios(unknown), Err(Error::Parse { line: Some(_), .. })));
        let alpha = r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,1,1"
[scenario.optim]
alpha = -1.0
"#;
        assert!(matches!(parse_scenarios(alpha), Err(Error::Config(_))));
    }

    #[test]
    fn anchor_normalizes_boxes() {
        let s = parse_scenarios(
            r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,4,4"
init = "0,0,2,2"
anchor = "0,0,4,4"
"#,
        )
        .unwrap();
        let (t, p) = s[0].working_boxes().unwrap();
        assert_eq!(t.coords(), [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(p.coords(), [0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn identity_scenario_converges_at_once() {
        let s = parse_scenarios(
            r#"
format = "eiou-scenario/1"
[[scenario]]
name = "a"
target = "0,0,1,1"
init = "0,0,1,1"
[scenario.expect]
converged = true
monotone_loss = true
eiou_reaches = 0.99
"#,
        )
        .unwrap();
        let out = s[0].run().unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.pass(), "{:?}", out.checks);
    }

    #[test]
    fn halted_run_fails_completed_check() {
        let s = parse_scenarios(
            r#"
format = "eiou-scenario/1"
[[scenario]]
name = "blowup"
target = "0,0,1,1"
init = "-1,-1,2,2"
[scenario.optim]
alpha = 1000.0
mode = "plain"
"#,
        )
        .unwrap();
        let out = s[0].run().unwrap();
        assert!(out.error.is_some());
        assert!(!out.pass());
        assert_eq!(out.checks[0].name, "completed");
    }
}
