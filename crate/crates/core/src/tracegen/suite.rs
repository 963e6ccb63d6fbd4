//! Whole benchmark suites with a prescribed census.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::case::{expression_tasks, generate_case, CaseSpec, GeneratedCase, InjectionPoint, Outcome};
use super::expr::{parse_expression, random_expression, ExpressionNode};
use super::nl::SNIPPETS;
use crate::analytics::{FailureRecord, SummaryRow};
use crate::bench::CandidateOutput;
use crate::error::{Error, Result};
use crate::flow::TaskFlowGraph;
use crate::model::FailureCategory;
use crate::par::{self, Execution};

/// Case counts a suite must hit exactly. Natural-language cases are
/// `cases - numerical`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub cases: usize,
    pub numerical: usize,
    pub distributed: usize,
    pub syntax_errors: usize,
    /// Cases whose final output differs from the expected one (syntax-error
    /// cases included).
    pub incorrect: usize,
    pub happy_paths: usize,
    /// Cases with at least one validator failure; all are natural-language.
    pub validator_cases: usize,
    /// Seeds the suite with five hand-written cases when their slots exist.
    pub include_reference_cases: bool,
    pub decomposition_depth: usize,
    pub min_ops: usize,
    pub max_ops: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            cases: 30,
            numerical: 14,
            distributed: 13,
            syntax_errors: 3,
            incorrect: 9,
            happy_paths: 7,
            validator_cases: 9,
            include_reference_cases: true,
            decomposition_depth: 3,
            min_ops: 3,
            max_ops: 7,
        }
    }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SuiteConfig = toml::from_str(text).map_err(|e| Error::InvalidSpec(format!("suite config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    pub fn natural_language(&self) -> usize {
        self.cases.saturating_sub(self.numerical)
    }

    fn faulty(&self) -> usize {
        self.cases - self.happy_paths - self.syntax_errors - self.validator_cases
    }

    /// Rejects count combinations no suite can satisfy.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InfeasibleConfig(m));
        let n = self.cases;
        if n == 0 {
            return fail("a suite needs at least one case".into());
        }
        for (name, v) in [("numerical", self.numerical), ("distributed", self.distributed), ("incorrect", self.incorrect)] {
            if v > n {
                return fail(format!("{name} = {v} exceeds cases = {n}"));
            }
        }
        if self.happy_paths + self.syntax_errors + self.validator_cases > n {
            return fail(format!(
                "happy_paths + syntax_errors + validator_cases = {} exceeds cases = {n}",
                self.happy_paths + self.syntax_errors + self.validator_cases
            ));
        }
        if self.syntax_errors > self.incorrect {
            return fail(format!(
                "syntax_errors = {} but every syntax error is incorrect and incorrect = {}",
                self.syntax_errors, self.incorrect
            ));
        }
        if self.happy_paths > n - self.incorrect {
            return fail(format!(
                "happy_paths = {} but only {} cases are correct",
                self.happy_paths,
                n - self.incorrect
            ));
        }
        if self.incorrect - self.syntax_errors > self.faulty() + self.validator_cases {
            return fail("too many incorrect cases for the faulty and validator cases available".into());
        }
        if self.validator_cases > self.natural_language() {
            return fail(format!(
                "validator_cases = {} exceeds the {} natural-language cases",
                self.validator_cases,
                self.natural_language()
            ));
        }
        if self.decomposition_depth == 0 || self.min_ops == 0 || self.min_ops > self.max_ops {
            return fail("need decomposition_depth >= 1 and 1 <= min_ops <= max_ops".into());
        }
        Ok(())
    }

    /// Incorrect non-syntax cases split between validator and other faulty
    /// cases, roughly in proportion to their sizes.
    fn incorrect_split(&self) -> (usize, usize) {
        let rest = self.incorrect - self.syntax_errors;
        let (f, v) = (self.faulty(), self.validator_cases);
        if rest == 0 || f + v == 0 {
            return (0, 0);
        }
        let share = ((rest * v) as f64 / (f + v) as f64).round() as usize;
        let v_inc = share.clamp(rest.saturating_sub(f), v.min(rest));
        (rest - v_inc, v_inc)
    }
}

/// Counts realised by a generated suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub cases: usize,
    pub numerical: usize,
    pub natural_language: usize,
    pub distributed: usize,
    pub syntax_errors: usize,
    pub incorrect: usize,
    pub happy_paths: usize,
    pub validator_cases: usize,
}

impl Census {
    pub fn of(cases: &[GeneratedCase]) -> Self {
        let count = |f: &dyn Fn(&GeneratedCase) -> bool| cases.iter().filter(|c| f(c)).count();
        Census {
            cases: cases.len(),
            numerical: count(&|c| c.has_tag("numerical")),
            natural_language: count(&|c| c.has_tag("nl")),
            distributed: count(&|c| c.has_tag("distributed")),
            syntax_errors: count(&|c| c.has_tag("syntax_error")),
            incorrect: count(&|c| !c.is_correct()),
            happy_paths: count(&|c| c.gt_summary.happy_path),
            validator_cases: count(&|c| c.gt_failures.iter().any(|f| f.category == FailureCategory::Validator)),
        }
    }

    pub fn expected(cfg: &SuiteConfig) -> Self {
        Census {
            cases: cfg.cases,
            numerical: cfg.numerical,
            natural_language: cfg.natural_language(),
            distributed: cfg.distributed,
            syntax_errors: cfg.syntax_errors,
            incorrect: cfg.incorrect,
            happy_paths: cfg.happy_paths,
            validator_cases: cfg.validator_cases,
        }
    }
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cases: {}", self.cases)?;
        writeln!(f, "numerical: {}", self.numerical)?;
        writeln!(f, "natural_language: {}", self.natural_language)?;
        writeln!(f, "distributed: {}", self.distributed)?;
        writeln!(f, "syntax_errors: {}", self.syntax_errors)?;
        writeln!(f, "correct: {}", self.cases - self.incorrect)?;
        writeln!(f, "incorrect: {}", self.incorrect)?;
        writeln!(f, "happy_paths: {}", self.happy_paths)?;
        write!(f, "validator_cases: {}", self.validator_cases)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Happy,
    Syntax,
    Validator,
    Faulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    role: Role,
    nl: bool,
    incorrect: bool,
}

/// The five hand-written cases and the slot each occupies.
fn reference_specs() -> Vec<(Slot, CaseSpec)> {
    use FailureCategory::*;
    use InjectionPoint::*;
    let slot = |role, nl, incorrect| Slot { role, nl, incorrect };
    // Deep enough that the braced product (-36) is a task of its own.
    let mut row3 = CaseSpec::new(
        "",
        "2+{6*[12-({Multiply the sum of three, seven, and five by two. Then, subtract fifteen.}+3)]}/3+4*(7-5)-2/1",
    )
    .fault(InstructionViolation, Plan, 1)
    .fault(Validation, Task(6), 3);
    row3.decomposition_depth = 5;
    row3.outcome = Some(Outcome::NoOutput);
    let mut recovered = CaseSpec::new("", "14-{If you subtract 3 from 43 and then divide by 5, what is the result?}")
        .fault(Validation, Task(2), 1)
        .fault(Validator, Task(2), 1);
    recovered.outcome = Some(Outcome::Correct);
    vec![
        (slot(Role::Happy, false, false), CaseSpec::new("", "{(8-2)*3}-(5+(11/2))/5")),
        (
            slot(Role::Faulty, false, false),
            CaseSpec::new("", "[4+8*(5-3)/2]-15+(7-(9/3))").fault(InstructionViolation, Plan, 1),
        ),
        (slot(Role::Faulty, true, true), row3),
        (slot(Role::Validator, true, false), recovered),
        (
            slot(Role::Validator, true, true),
            CaseSpec::new("", format!("{{{}}}", super::nl::SNIPPETS[4].0))
                .fault(IncorrectInput, Task(0), 6)
                .fault(Validator, Task(0), 3),
        ),
    ]
}

fn replace_leaf(node: &mut ExpressionNode, mut k: usize, with: ExpressionNode) -> usize {
    fn go(node: &mut ExpressionNode, k: &mut usize, with: &mut Option<ExpressionNode>) {
        match node {
            ExpressionNode::Number { .. } => {
                if *k == 0 {
                    if let Some(w) = with.take() {
                        *node = w;
                    }
                }
                *k = k.wrapping_sub(1);
            }
            ExpressionNode::Snippet { .. } => {}
            ExpressionNode::Group { inner, .. } => go(inner, k, with),
            ExpressionNode::Binary { lhs, rhs, .. } => {
                go(lhs, k, with);
                go(rhs, k, with);
            }
        }
    }
    let mut with = Some(with);
    go(node, &mut k, &mut with);
    k
}

fn random_input(rng: &mut ChaCha8Rng, cfg: &SuiteConfig, nl: bool) -> String {
    loop {
        let ops = rng.random_range(cfg.min_ops..=cfg.max_ops);
        let mut e = random_expression(rng, ops);
        if nl {
            let (text, _) = SNIPPETS[rng.random_range(0..SNIPPETS.len())];
            let snippet = ExpressionNode::Snippet {
                text: text.to_string(),
                value: super::nl::lookup(text).expect("table entry"),
            };
            if rng.random_bool(0.2) {
                e = snippet;
            } else {
                let leaves = ops + 1;
                replace_leaf(&mut e, rng.random_range(0..leaves), snippet);
            }
        }
        let text = e.render();
        if parse_expression(&text).and_then(|n| n.eval()).is_ok() {
            return text;
        }
    }
}

fn corrupt(rng: &mut ChaCha8Rng, text: &str) -> String {
    loop {
        let broken = match rng.random_range(0..3) {
            // Drop a closing bracket.
            0 => match text.rfind([')', ']']) {
                Some(i) => format!("{}{}", &text[..i], &text[i + 1..]),
                None => format!("({text}"),
            },
            1 => format!("{text}{}", ['+', '-', '*', '/'][rng.random_range(0..4)]),
            _ => match text.find(['+', '-', '*', '/']) {
                Some(i) => format!("{}*{}", &text[..=i], &text[i + 1..]),
                None => format!("{text}*"),
            },
        };
        if matches!(parse_expression(&broken), Err(Error::Syntax { .. })) {
            return broken;
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, items: &[usize]) -> usize {
    items[rng.random_range(0..items.len())]
}

/// Input and faults for one non-reference slot.
fn fill_slot(rng: &mut ChaCha8Rng, cfg: &SuiteConfig, slot: Slot) -> Result<CaseSpec> {
    use FailureCategory::*;
    let input = random_input(rng, cfg, slot.nl);
    if slot.role == Role::Syntax {
        let broken = corrupt(rng, &input);
        return Ok(CaseSpec::new("", broken).fault(IncorrectInput, InjectionPoint::Plan, rng.random_range(1..=3)));
    }
    let shapes = expression_tasks(&input, cfg.decomposition_depth)?.expect("generated inputs parse");
    let all: Vec<usize> = (0..shapes.len()).collect();
    let leaves: Vec<usize> = all.iter().copied().filter(|&i| shapes[i].leaf).collect();
    let nl_leaves: Vec<usize> = all.iter().copied().filter(|&i| shapes[i].natural_language).collect();
    let mut spec = CaseSpec::new("", input);
    let task = |i| InjectionPoint::Task(i);
    match (slot.role, slot.incorrect) {
        (Role::Happy, _) => {}
        (Role::Faulty, false) => match rng.random_range(0..3) {
            0 => spec = spec.fault(InstructionViolation, InjectionPoint::Plan, rng.random_range(1..=2)),
            1 => {
                spec = spec.fault(Validation, task(pick(rng, &all)), 1);
                spec.outcome = Some(Outcome::Correct);
            }
            _ => {
                spec = spec.fault(IncorrectInput, task(pick(rng, &leaves)), rng.random_range(1..=2));
                spec.outcome = Some(Outcome::Correct);
            }
        },
        (Role::Faulty, true) => match rng.random_range(0..3) {
            0 => spec = spec.fault(Validation, task(pick(rng, &all)), rng.random_range(1..=3)),
            1 => spec = spec.fault(IncorrectInput, task(pick(rng, &leaves)), rng.random_range(1..=3)),
            _ => {
                spec = spec
                    .fault(InstructionViolation, InjectionPoint::Plan, 1)
                    .fault(Validation, task(pick(rng, &all)), rng.random_range(1..=2));
                spec.outcome = Some(Outcome::NoOutput);
            }
        },
        (Role::Validator, incorrect) => {
            let targets = if nl_leaves.is_empty() { &leaves } else { &nl_leaves };
            spec = spec.fault(Validator, task(pick(rng, targets)), rng.random_range(1..=3));
            if incorrect {
                spec = if rng.random_bool(0.5) {
                    spec.fault(IncorrectInput, task(pick(rng, &leaves)), rng.random_range(1..=2))
                } else {
                    spec.fault(Validation, task(pick(rng, &all)), 1)
                };
            }
        }
        (Role::Syntax, _) => unreachable!(),
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub config: SuiteConfig,
    pub seed: u64,
    pub cases: Vec<GeneratedCase>,
}

impl Suite {
    pub fn census(&self) -> Census {
        Census::of(&self.cases)
    }

    /// A candidate that misses every validator failure and reports nothing
    /// for unparsable inputs.
    pub fn tamas_like(&self) -> Vec<CandidateOutput> {
        self.cases
            .iter()
            .map(|c| {
                if c.has_tag("syntax_error") {
                    return CandidateOutput {
                        case_id: c.case_id.clone(),
                        summary: Some(SummaryRow::empty(&c.case_id)),
                        flow: Some(TaskFlowGraph::default()),
                        failures: Some(Vec::new()),
                    };
                }
                let failures: Vec<FailureRecord> = c
                    .gt_failures
                    .iter()
                    .filter(|f| f.category != FailureCategory::Validator)
                    .cloned()
                    .collect();
                let mut summary = c.gt_summary.clone();
                summary.set_failures(&failures);
                CandidateOutput {
                    case_id: c.case_id.clone(),
                    summary: Some(summary),
                    flow: Some(c.gt_flow.clone()),
                    failures: Some(failures),
                }
            })
            .collect()
    }
}

/// Generates a suite whose census equals the configured counts.
pub fn generate_suite(cfg: &SuiteConfig, seed: u64, exec: Execution) -> Result<Suite> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (f_inc, v_inc) = cfg.incorrect_split();
    // Remaining (role, incorrect) counts.
    let mut need = vec![
        ((Role::Happy, false), cfg.happy_paths),
        ((Role::Syntax, true), cfg.syntax_errors),
        ((Role::Validator, true), v_inc),
        ((Role::Validator, false), cfg.validator_cases - v_inc),
        ((Role::Faulty, true), f_inc),
        ((Role::Faulty, false), cfg.faulty() - f_inc),
    ];
    // Numerical cases never carry validator failures.
    let mut numerical_left = cfg.numerical;
    let mut nl_left = cfg.natural_language() - cfg.validator_cases;

    let mut planned: Vec<(Slot, Option<CaseSpec>)> = Vec::new();
    if cfg.include_reference_cases {
        for (slot, spec) in reference_specs() {
            let entry = need.iter_mut().find(|(k, _)| *k == (slot.role, slot.incorrect)).expect("known role");
            let modality_ok = match (slot.role, slot.nl) {
                (Role::Validator, _) => true,
                (_, true) => nl_left > 0,
                (_, false) => numerical_left > 0,
            };
            if entry.1 == 0 || !modality_ok {
                continue;
            }
            entry.1 -= 1;
            if slot.role != Role::Validator {
                if slot.nl {
                    nl_left -= 1;
                } else {
                    numerical_left -= 1;
                }
            }
            planned.push((slot, Some(spec)));
        }
    }
    let mut open: Vec<(Role, bool)> = need
        .iter()
        .flat_map(|&(k, n)| std::iter::repeat_n(k, n))
        .collect();
    open.shuffle(&mut rng);
    // Validators are natural-language; the others share the remaining budget.
    let mut modality: Vec<bool> = std::iter::repeat_n(false, numerical_left)
        .chain(std::iter::repeat_n(true, nl_left))
        .collect();
    modality.shuffle(&mut rng);
    let mut modality = modality.into_iter();
    for (role, incorrect) in open {
        let nl = role == Role::Validator || modality.next().expect("modality budget matches open slots");
        planned.push((Slot { role, nl, incorrect }, None));
    }
    planned.shuffle(&mut rng);

    let mut distributed = vec![false; planned.len()];
    for d in distributed.iter_mut().take(cfg.distributed) {
        *d = true;
    }
    distributed.shuffle(&mut rng);

    let width = cfg.cases.to_string().len().max(3);
    let mut specs = Vec::with_capacity(planned.len());
    for (i, (slot, reference)) in planned.into_iter().enumerate() {
        // Reference cases keep their own depth: their fault targets are
        // task indices at that depth.
        let mut spec = match reference {
            Some(s) => s,
            None => CaseSpec {
                decomposition_depth: cfg.decomposition_depth,
                ..fill_slot(&mut rng, cfg, slot)?
            },
        };
        spec.case_id = format!("case-{:0width$}", i + 1);
        spec.distributed = distributed[i];
        spec.parallel = rng.random_bool(0.5);
        spec.seed = rng.random();
        specs.push(spec);
    }

    let cases: Vec<GeneratedCase> = par::map(exec, &specs, generate_case).into_iter().collect::<Result<_>>()?;
    let suite = Suite {
        config: cfg.clone(),
        seed,
        cases,
    };
    let got = suite.census();
    let want = Census::expected(cfg);
    if got != want {
        return Err(Error::InfeasibleConfig(format!("generated census\n{got}\ndiffers from\n{want}")));
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_matches_census() {
        let cfg = SuiteConfig::default();
        let suite = generate_suite(&cfg, 42, Execution::default()).unwrap();
        assert_eq!(suite.census(), Census::expected(&cfg));
        let refs = suite
            .cases
            .iter()
            .filter(|c| c.input == "{(8-2)*3}-(5+(11/2))/5")
            .count();
        assert_eq!(refs, 1);
    }

    #[test]
    fn many_seeds_and_shapes() {
        for seed in 0..20 {
            let cfg = SuiteConfig {
                cases: 12,
                numerical: 5,
                distributed: 4,
                syntax_errors: 1,
                incorrect: 4,
                happy_paths: 3,
                validator_cases: 3,
                include_reference_cases: seed % 2 == 0,
                ..SuiteConfig::default()
            };
            let suite = generate_suite(&cfg, seed, Execution::Sequential).unwrap();
            assert_eq!(suite.census(), Census::expected(&cfg));
        }
    }

    #[test]
    fn same_seed_same_suite() {
        let cfg = SuiteConfig::default();
        let a = generate_suite(&cfg, 9, Execution::Sequential).unwrap();
        let b = generate_suite(&cfg, 9, Execution::Parallel).unwrap();
        let logs = |s: &Suite| s.cases.iter().map(|c| c.log_text()).collect::<Vec<_>>();
        assert_eq!(logs(&a), logs(&b));
    }

    #[test]
    fn infeasible_configs() {
        let bad = [
            SuiteConfig { cases: 0, ..SuiteConfig::default() },
            SuiteConfig { syntax_errors: 10, ..SuiteConfig::default() },
            SuiteConfig { happy_paths: 25, ..SuiteConfig::default() },
            SuiteConfig { validator_cases: 17, ..SuiteConfig::default() },
            SuiteConfig { numerical: 31, ..SuiteConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.check(), Err(Error::InfeasibleConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = SuiteConfig::from_toml("cases = 10\nnumerical = 4\ndistributed = 2\nsyntax_errors = 1\nincorrect = 3\nhappy_paths = 2\nvalidator_cases = 2\n").unwrap();
        assert_eq!(cfg.cases, 10);
        assert_eq!(SuiteConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(SuiteConfig::from_toml("cases = 10\nbogus = 1\n").is_err());
    }
}
