//! Seeded case specs and raw log sums shared by the generator tests.

use ata_core::model::FailureCategory;
use ata_core::tracegen::{expression_tasks, random_expression, CaseSpec, InjectionPoint, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random valid spec drawn from `seed`.
pub fn spec_from(seed: u64) -> CaseSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = rng.random_range(0..6);
    let mut input = random_expression(&mut rng, ops).render();
    if rng.random_bool(0.3) {
        input = format!("{input}+{{Average of 3, 7, and five?}}");
    }
    let mut spec = CaseSpec::new(format!("p{seed}"), input.clone());
    spec.seed = seed;
    spec.distributed = rng.random_bool(0.5);
    spec.parallel = rng.random_bool(0.5);
    spec.decomposition_depth = rng.random_range(1..=4);
    let shapes = expression_tasks(&input, spec.decomposition_depth).unwrap().unwrap();
    let leaves: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].leaf).collect();
    for _ in 0..rng.random_range(0..4) {
        let repeats = rng.random_range(1..=3);
        let any = InjectionPoint::Task(rng.random_range(0..shapes.len()));
        let leaf = InjectionPoint::Task(leaves[rng.random_range(0..leaves.len())]);
        spec = match rng.random_range(0..4) {
            0 => spec.fault(FailureCategory::InstructionViolation, InjectionPoint::Plan, repeats),
            1 => spec.fault(FailureCategory::IncorrectInput, leaf, repeats),
            2 => spec.fault(FailureCategory::Validation, any, repeats),
            _ => spec.fault(FailureCategory::Validator, any, repeats),
        };
    }
    if rng.random_bool(0.3) && !spec.faults.is_empty() {
        spec.outcome = Some(Outcome::Correct);
    }
    spec
}

/// Usage totals read straight from the JSON lines.
pub fn raw_usage(log: &str) -> (u64, u64, u64, u64, f64) {
    let mut t = (0, 0, 0, 0, 0.0);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let a = &v["attributes"];
        t.0 += a["usage.input_tokens"].as_u64().unwrap_or(0);
        t.1 += a["usage.output_tokens"].as_u64().unwrap_or(0);
        t.2 += a["llm.call"].as_bool().unwrap_or(false) as u64;
        t.3 += a["tool.call"].as_bool().unwrap_or(false) as u64;
        t.4 += a["cost.usd"].as_f64().unwrap_or(0.0);
    }
    t
}
