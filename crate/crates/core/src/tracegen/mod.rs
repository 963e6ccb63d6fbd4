//! Synthetic traces of a multi-agent calculator, with ground truth.

mod case;
mod suite;
pub mod expr;
pub mod nl;

pub use case::{expression_tasks, generate_case, CaseSpec, Fault, GeneratedCase, InjectionPoint, Outcome, TaskShape};
pub use expr::{eval_expression, parse_expression, random_expression, Exact, ExpressionNode};
pub use suite::{generate_suite, Census, Suite, SuiteConfig};
