//! Run configuration: a sectioned TOML file with documented defaults.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]
//! d_u = 1.0
//! sigma = 1.0
//! # a_override = 2.0
//!
//! [grid]
//! extent = [1.0]
//! n = [512]
//!
//! [time]
//! t_final = 0.5
//! dt = 2.5e-5
//!
//! [sweep]
//! eps_list = [0.1, 0.01, 0.001, 0.0001]
//!
//! [run]
//! eps = 0.01
//!
//! [output]
//! dir = "output"
//! ```
//!
//! Every key is optional. Parsing reports all problems at once, each with
//! the dotted key and its line.

use std::fmt;
use std::path::PathBuf;

use toml::de::{DeTable, DeValue};
use toml::Spanned;

use crate::experiments::{Profile, SweepPlan};
use crate::grid::{Grid, MAX_DERIVATIVE_ORDER};
use crate::linsolve::LinearSolver;
use crate::model::SktParams;

pub const SCHEMA_VERSION: i64 = 1;

/// Default sweep: five log-spaced values from `10^-1.5` to `10^-3.5`.
pub fn default_eps_list() -> Vec<f64> {
    (0..5).map(|k| 10f64.powf(-1.5 - 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schema_version: i64,
    /// Model, grid, time stepping and sweep settings.
    pub plan: SweepPlan,
    /// `eps` used by `run-micro`.
    pub run_eps: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = Grid::line(1.0, 512).expect("default grid");
        RunConfig {
            schema_version: SCHEMA_VERSION,
            plan: SweepPlan::new(grid, 0.5, 2.5e-5, default_eps_list()),
            run_eps: 1e-2,
            output_dir: PathBuf::from("output"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key, e.g. `model.sigma`; empty for whole-file problems.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if !self.key.is_empty() {
            write!(f, "{}: ", self.key)?;
        }
        f.write_str(&self.message)
    }
}

struct Reader<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

type Entry<'i> = (&'i Spanned<std::borrow::Cow<'i, str>>, &'i Spanned<DeValue<'i>>);

impl<'a> Reader<'a> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn push(&mut self, key: &str, offset: Option<usize>, message: impl Into<String>) {
        let line = offset.map(|o| self.line(o));
        self.errors.push(ConfigError {
            key: key.to_string(),
            line,
            message: message.into(),
        });
    }

    fn mismatch(&mut self, key: &str, v: &Spanned<DeValue>, want: &str) {
        let msg = format!("expected {want}, found {}", v.get_ref().type_str());
        self.push(key, Some(v.span().start), msg);
    }

    fn float(&mut self, key: &str, v: &Spanned<DeValue>) -> Option<f64> {
        let parsed = match v.get_ref() {
            DeValue::Float(x) => x.as_str().parse::<f64>().ok(),
            DeValue::Integer(i) => i64::from_str_radix(i.as_str(), i.radix()).ok().map(|i| i as f64),
            _ => {
                self.mismatch(key, v, "a number");
                return None;
            }
        };
        match parsed {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.push(key, Some(v.span().start), "number is not finite");
                None
            }
        }
    }

    fn int(&mut self, key: &str, v: &Spanned<DeValue>) -> Option<i64> {
        match v.get_ref() {
            DeValue::Integer(i) => match i64::from_str_radix(i.as_str(), i.radix()) {
                Ok(x) => Some(x),
                Err(_) => {
                    self.push(key, Some(v.span().start), "integer out of range");
                    None
                }
            },
            _ => {
                self.mismatch(key, v, "an integer");
                None
            }
        }
    }

    fn count(&mut self, key: &str, v: &Spanned<DeValue>, min: usize) -> Option<usize> {
        let x = self.int(key, v)?;
        if x < min as i64 {
            self.push(key, Some(v.span().start), format!("must be >= {min}, got {x}"));
            return None;
        }
        Some(x as usize)
    }

    fn boolean(&mut self, key: &str, v: &Spanned<DeValue>) -> Option<bool> {
        match v.get_ref() {
            DeValue::Boolean(b) => Some(*b),
            _ => {
                self.mismatch(key, v, "a boolean");
                None
            }
        }
    }

    fn string(&mut self, key: &str, v: &Spanned<DeValue>) -> Option<String> {
        match v.get_ref() {
            DeValue::String(s) => Some(s.to_string()),
            _ => {
                self.mismatch(key, v, "a string");
                None
            }
        }
    }

    fn array<T>(
        &mut self,
        key: &str,
        v: &Spanned<DeValue>,
        mut item: impl FnMut(&mut Self, &str, &Spanned<DeValue>) -> Option<T>,
    ) -> Option<Vec<T>> {
        let DeValue::Array(a) = v.get_ref() else {
            self.mismatch(key, v, "an array");
            return None;
        };
        let mut out = Vec::with_capacity(a.len());
        let mut ok = true;
        for (i, x) in a.iter().enumerate() {
            match item(self, &format!("{key}[{i}]"), x) {
                Some(y) => out.push(y),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// Float checked against `rule`, which is named in the error.
    fn checked(
        &mut self,
        key: &str,
        v: &Spanned<DeValue>,
        rule: &str,
        ok: impl Fn(f64) -> bool,
    ) -> Option<f64> {
        let x = self.float(key, v)?;
        if !ok(x) {
            let name = key.rsplit('.').next().unwrap_or(key);
            self.push(key, Some(v.span().start), format!("must satisfy {name} {rule}, got {x}"));
            return None;
        }
        Some(x)
    }

    fn unknown(&mut self, key: &str, at: usize) {
        self.push(key, Some(at), "unknown key");
    }

    fn table<'t, 'i>(&mut self, key: &str, v: &'t Spanned<DeValue<'i>>) -> Option<Vec<Entry<'t>>> {
        match v.get_ref() {
            DeValue::Table(t) => Some(t.iter().collect()),
            _ => {
                self.mismatch(key, v, "a table");
                None
            }
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn nonnegative(x: f64) -> bool {
    x >= 0.0
}

/// Parses and validates a configuration, collecting every error.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let doc = match DeTable::parse(text) {
        Ok(d) => d,
        Err(e) => {
            let r = Reader { text, errors: Vec::new() };
            let line = e.span().map(|s| r.line(s.start));
            return Err(vec![ConfigError {
                key: String::new(),
                line,
                message: format!("syntax error: {}", e.message().trim()),
            }]);
        }
    };
    let mut r = Reader { text, errors: Vec::new() };
    let mut cfg = RunConfig::default();
    let mut extent: Option<(Vec<f64>, usize)> = None;
    let mut nodes: Option<(Vec<usize>, usize)> = None;
    let mut eps_at: Option<usize> = None;

    for (k, v) in doc.get_ref().iter() {
        let name = k.get_ref().as_ref();
        match name {
            "schema_version" => {
                if let Some(x) = r.int(name, v) {
                    if x != SCHEMA_VERSION {
                        r.push(name, Some(v.span().start), format!("unsupported version {x}, expected {SCHEMA_VERSION}"));
                    }
                    cfg.schema_version = x;
                }
            }
            "model" => {
                let Some(entries) = r.table(name, v) else { continue };
                read_model(&mut r, &entries, &mut cfg);
            }
            "grid" => {
                let Some(entries) = r.table(name, v) else { continue };
                for (k, v) in entries {
                    let key = format!("grid.{}", k.get_ref());
                    match k.get_ref().as_ref() {
                        "extent" => {
                            let xs = r.array(&key, v, |r, key, v| r.checked(key, v, "> 0", positive));
                            extent = xs.map(|x| (x, v.span().start));
                        }
                        "n" => {
                            let ns = r.array(&key, v, |r, key, v| r.count(key, v, 3));
                            nodes = ns.map(|x| (x, v.span().start));
                        }
                        _ => r.unknown(&key, k.span().start),
                    }
                }
            }
            "time" => {
                let Some(entries) = r.table(name, v) else { continue };
                read_time(&mut r, &entries, &mut cfg);
            }
            "sweep" => {
                let Some(entries) = r.table(name, v) else { continue };
                if let Some(at) = read_sweep(&mut r, &entries, &mut cfg) {
                    eps_at = Some(at);
                }
            }
            "run" => {
                let Some(entries) = r.table(name, v) else { continue };
                for (k, v) in entries {
                    let key = format!("run.{}", k.get_ref());
                    match k.get_ref().as_ref() {
                        "eps" => {
                            if let Some(x) = r.checked(&key, v, "> 0", positive) {
                                cfg.run_eps = x;
                            }
                        }
                        _ => r.unknown(&key, k.span().start),
                    }
                }
            }
            "output" => {
                let Some(entries) = r.table(name, v) else { continue };
                for (k, v) in entries {
                    let key = format!("output.{}", k.get_ref());
                    match k.get_ref().as_ref() {
                        "dir" => match r.string(&key, v) {
                            Some(s) if s.is_empty() => r.push(&key, Some(v.span().start), "must not be empty"),
                            Some(s) => cfg.output_dir = PathBuf::from(s),
                            None => {}
                        },
                        _ => r.unknown(&key, k.span().start),
                    }
                }
            }
            _ => r.unknown(name, k.span().start),
        }
    }

    let ext = extent.clone().map(|e| e.0).unwrap_or_else(|| {
        (0..cfg.plan.grid.dim()).map(|a| cfg.plan.grid.extent(a)).collect()
    });
    let ns = nodes.clone().map(|n| n.0).unwrap_or_else(|| {
        (0..cfg.plan.grid.dim()).map(|a| cfg.plan.grid.nodes(a)).collect()
    });
    let grid_at = nodes.map(|n| n.1).or(extent.map(|e| e.1));
    if ext.len() != ns.len() || !(1..=2).contains(&ext.len()) {
        r.push("grid", grid_at, format!(
            "extent and n must both have 1 or 2 entries, got {} and {}",
            ext.len(),
            ns.len()
        ));
    } else if r.errors.is_empty() {
        match Grid::new(&ext, &ns) {
            Ok(g) => cfg.plan.grid = g,
            Err(e) => r.push("grid", grid_at, e.to_string()),
        }
    }

    if r.errors.is_empty() {
        let p = &cfg.plan;
        if p.step.dt > p.t_final {
            r.push("time.dt", None, format!("must satisfy dt <= t_final, got {} > {}", p.step.dt, p.t_final));
        }
        for axis in 0..p.grid.dim() {
            if p.grid.nodes(axis) < 2 * p.l_max.max(2) + 1 {
                r.push("grid.n", grid_at, format!(
                    "need at least {} nodes per axis for l_max = {}",
                    2 * p.l_max.max(2) + 1,
                    p.l_max
                ));
                break;
            }
        }
        if p.eps_list.is_empty() {
            r.push("sweep.eps_list", eps_at, "must not be empty");
        }
    }
    if r.errors.is_empty() {
        if let Err(e) = cfg.plan.validate() {
            r.push("", None, e.to_string());
        }
    }
    if r.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(r.errors)
    }
}

fn read_model(r: &mut Reader, entries: &[Entry], cfg: &mut RunConfig) {
    let p: &mut SktParams = &mut cfg.plan.params;
    for (k, v) in entries {
        let key = format!("model.{}", k.get_ref());
        let (slot, rule, ok): (&mut f64, &str, fn(f64) -> bool) = match k.get_ref().as_ref() {
            "d_u" => (&mut p.d_u, "> 0", positive),
            "d_v" => (&mut p.d_v, "> 0", positive),
            "sigma" => (&mut p.sigma, "> 0", positive),
            "r_u" => (&mut p.r_u, ">= 0", nonnegative),
            "r_v" => (&mut p.r_v, ">= 0", nonnegative),
            "d11" => (&mut p.d11, "> 0", positive),
            "d12" => (&mut p.d12, "> 0", positive),
            "d21" => (&mut p.d21, "> 0", positive),
            "d22" => (&mut p.d22, "> 0", positive),
            "a_override" => {
                if let Some(x) = r.checked(&key, v, "> 0", positive) {
                    cfg.plan.a_override = Some(x);
                }
                continue;
            }
            _ => {
                r.unknown(&key, k.span().start);
                continue;
            }
        };
        if let Some(x) = r.checked(&key, v, rule, ok) {
            *slot = x;
        }
    }
}

fn read_time(r: &mut Reader, entries: &[Entry], cfg: &mut RunConfig) {
    let plan = &mut cfg.plan;
    for (k, v) in entries {
        let key = format!("time.{}", k.get_ref());
        match k.get_ref().as_ref() {
            "t_final" => {
                if let Some(x) = r.checked(&key, v, "> 0", positive) {
                    plan.t_final = x;
                }
            }
            "dt" => {
                if let Some(x) = r.checked(&key, v, "> 0", positive) {
                    plan.step.dt = x;
                }
            }
            "tol_lin" => {
                if let Some(x) = r.checked(&key, v, "in (0, 1e-4]", |x| x > 0.0 && x <= 1e-4) {
                    plan.step.tol_lin = x;
                }
            }
            "max_iter" => {
                if let Some(x) = r.count(&key, v, 1) {
                    plan.step.max_iter = Some(x);
                }
            }
            "clip_negative" => {
                if let Some(b) = r.boolean(&key, v) {
                    plan.step.clip_negative = b;
                }
            }
            "solver" => match r.string(&key, v).as_deref() {
                Some("auto") => plan.step.solver = LinearSolver::Auto,
                Some("direct-tridiagonal") => plan.step.solver = LinearSolver::DirectTridiagonal,
                Some("iterative-symmetric") => plan.step.solver = LinearSolver::IterativeSymmetric,
                Some(other) => r.push(&key, Some(v.span().start), format!(
                    "unknown solver {other:?} (auto, direct-tridiagonal, iterative-symmetric)"
                )),
                None => {}
            },
            _ => r.unknown(&key, k.span().start),
        }
    }
}

/// Returns the offset of `eps_list` when present.
fn read_sweep(r: &mut Reader, entries: &[Entry], cfg: &mut RunConfig) -> Option<usize> {
    let plan = &mut cfg.plan;
    let mut eps_at = None;
    for (k, v) in entries {
        let key = format!("sweep.{}", k.get_ref());
        match k.get_ref().as_ref() {
            "eps_list" => {
                eps_at = Some(v.span().start);
                let Some(xs) = r.array(&key, v, |r, key, v| r.checked(key, v, "> 0", positive)) else {
                    continue;
                };
                if xs.windows(2).any(|w| w[1] >= w[0]) {
                    r.push(&key, Some(v.span().start), "eps_list must be strictly decreasing");
                } else {
                    plan.eps_list = xs;
                }
            }
            "well_prepared" => {
                if let Some(b) = r.boolean(&key, v) {
                    plan.well_prepared = b;
                }
            }
            "ill_amplitude" => {
                if let Some(x) = r.checked(&key, v, "in [0, 0.5]", |x| (0.0..=0.5).contains(&x)) {
                    plan.ill_amplitude = x;
                }
            }
            "profile" => match r.string(&key, v).as_deref() {
                Some("cosine") => plan.profile = Profile::Cosine,
                Some("flat") => plan.profile = Profile::Flat,
                Some(other) => r.push(&key, Some(v.span().start), format!("unknown profile {other:?} (cosine, flat)")),
                None => {}
            },
            "margin" => {
                if let Some(x) = r.checked(&key, v, "in [0, 0.5)", |x| (0.0..0.5).contains(&x)) {
                    plan.margin = x;
                }
            }
            "l_max" => {
                if let Some(x) = r.count(&key, v, 0) {
                    if x > MAX_DERIVATIVE_ORDER {
                        r.push(&key, Some(v.span().start), format!("must be <= {MAX_DERIVATIVE_ORDER}, got {x}"));
                    } else {
                        plan.l_max = x;
                    }
                }
            }
            "samples" => {
                if let Some(x) = r.count(&key, v, 1) {
                    plan.samples = x;
                }
            }
            "layer_steps" => {
                if let Some(x) = r.count(&key, v, 1) {
                    plan.layer_steps = x;
                }
            }
            _ => r.unknown(&key, k.span().start),
        }
    }
    eps_at
}

fn list(xs: impl IntoIterator<Item = String>) -> String {
    format!("[{}]", xs.into_iter().collect::<Vec<_>>().join(", "))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

impl RunConfig {
    /// The effective configuration, every default written out. Parsing the
    /// result gives back an equal configuration.
    pub fn to_toml(&self) -> String {
        let p = &self.plan;
        let m = &p.params;
        let g = &p.grid;
        let mut s = format!("schema_version = {}\n\n[model]\n", self.schema_version);
        for (k, x) in [
            ("d_u", m.d_u),
            ("d_v", m.d_v),
            ("sigma", m.sigma),
            ("r_u", m.r_u),
            ("r_v", m.r_v),
            ("d11", m.d11),
            ("d12", m.d12),
            ("d21", m.d21),
            ("d22", m.d22),
        ] {
            s += &format!("{k} = {}\n", num(x));
        }
        if let Some(a) = p.a_override {
            s += &format!("a_override = {}\n", num(a));
        }
        s += &format!(
            "\n[grid]\nextent = {}\nn = {}\n",
            list((0..g.dim()).map(|a| num(g.extent(a)))),
            list((0..g.dim()).map(|a| g.nodes(a).to_string()))
        );
        let solver = match p.step.solver {
            LinearSolver::Auto => "auto",
            LinearSolver::DirectTridiagonal => "direct-tridiagonal",
            LinearSolver::IterativeSymmetric => "iterative-symmetric",
        };
        s += &format!(
            "\n[time]\nt_final = {}\ndt = {}\nsolver = \"{solver}\"\ntol_lin = {}\nclip_negative = {}\n",
            num(p.t_final),
            num(p.step.dt),
            num(p.step.tol_lin),
            p.step.clip_negative
        );
        if let Some(n) = p.step.max_iter {
            s += &format!("max_iter = {n}\n");
        }
        let profile = match p.profile {
            Profile::Cosine => "cosine",
            Profile::Flat => "flat",
        };
        s += &format!(
            "\n[sweep]\neps_list = {}\nwell_prepared = {}\nill_amplitude = {}\nprofile = \"{profile}\"\nmargin = {}\nl_max = {}\nsamples = {}\nlayer_steps = {}\n",
            list(p.eps_list.iter().map(|&x| num(x))),
            p.well_prepared,
            num(p.ill_amplitude),
            num(p.margin),
            p.l_max,
            p.samples,
            p.layer_steps
        );
        s += &format!("\n[run]\neps = {}\n", num(self.run_eps));
        s += &format!("\n[output]\ndir = {:?}\n", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> Vec<ConfigError> {
        parse_config(text).expect_err("config should be rejected")
    }

    #[test]
    fn empty_config_gives_documented_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.plan.params, SktParams::default());
        assert_eq!(c.plan.grid.nodes(0), 512);
        assert_eq!(c.plan.eps_list.len(), 5);
    }

    #[test]
    fn negative_sigma_names_the_rule() {
        let e = errors("[model]\nsigma = -1\n");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].key, "model.sigma");
        assert_eq!(e[0].line, Some(2));
        assert!(e[0].message.contains("sigma > 0"), "{}", e[0]);
    }

    #[test]
    fn increasing_eps_list_is_rejected() {
        let e = errors("[sweep]\neps_list = [0.1, 0.2]\n");
        assert_eq!(e[0].key, "sweep.eps_list");
        assert!(e[0].message.contains("strictly decreasing"));
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "schema_version = 1\n[model]\nsigma = -1\nd_u = \"x\"\nbogus = 3\n[time]\ndt = 0\n[extra]\n";
        let e = errors(text);
        let keys: Vec<&str> = e.iter().map(|e| e.key.as_str()).collect();
        for k in ["model.sigma", "model.d_u", "model.bogus", "time.dt", "extra"] {
            assert!(keys.contains(&k), "missing {k} in {keys:?}");
        }
        let bogus = e.iter().find(|e| e.key == "model.bogus").unwrap();
        assert_eq!(bogus.line, Some(5));
        assert!(e.iter().find(|e| e.key == "model.d_u").unwrap().message.contains("expected a number"));
    }

    #[test]
    fn integers_are_accepted_for_floats() {
        let c = parse_config("[model]\nsigma = 2\n[time]\nt_final = 1\n").unwrap();
        assert_eq!(c.plan.params.sigma, 2.0);
        assert_eq!(c.plan.t_final, 1.0);
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = errors("[model]\nsigma = = 1\n");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].line, Some(2));
    }

    #[test]
    fn cross_field_constraints() {
        let e = errors("[grid]\nextent = [1.0]\nn = [4]\n");
        assert_eq!(e[0].key, "grid.n");
        let e = errors("[time]\nt_final = 0.1\ndt = 0.2\n");
        assert_eq!(e[0].key, "time.dt");
        let e = errors("[grid]\nextent = [1.0, 2.0]\nn = [9]\n");
        assert_eq!(e[0].key, "grid");
        let e = errors("schema_version = 2\n");
        assert_eq!(e[0].key, "schema_version");
    }

    #[test]
    fn effective_config_round_trips() {
        let text = "[model]\nsigma = 0.3\na_override = 2.5\n[grid]\nextent = [1.0, 0.5]\nn = [17, 9]\n[time]\nmax_iter = 50\nsolver = \"iterative-symmetric\"\n[sweep]\nprofile = \"flat\"\nwell_prepared = true\nl_max = 1\n[output]\ndir = \"out dir\"\n";
        let c = parse_config(text).unwrap();
        let echoed = c.to_toml();
        assert_eq!(parse_config(&echoed).unwrap(), c);
        assert_eq!(parse_config(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }
}
