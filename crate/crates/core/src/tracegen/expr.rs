//! Bracketed arithmetic with scripted natural-language operands.
//!
//! Values are exact rationals, so `(8-2)*3-(5+(11/2))/5` is exactly 15.9.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;

use super::nl;
use crate::error::{Error, Result};

/// An exact rational value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub BigRational);

impl Exact {
    pub fn from_int(n: i64) -> Self {
        Exact(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Whether the value has a finite decimal expansion.
    pub fn is_terminating(&self) -> bool {
        let mut d = self.0.denom().clone();
        for p in [2u32, 5] {
            let p = BigInt::from(p);
            while (&d % &p).is_zero() {
                d /= &p;
            }
        }
        d == BigInt::from(1)
    }
}

impl FromStr for Exact {
    type Err = Error;

    /// Parses `12`, `-3`, `15.9`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Syntax {
            position: 0,
            message: format!("not a decimal number: `{s}`"),
        };
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty()
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let numer: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
        let denom = num_traits::pow(BigInt::from(10), frac.len());
        let v = BigRational::new(numer, denom);
        Ok(Exact(if neg { -v } else { v }))
    }
}

impl fmt::Display for Exact {
    /// Terminating values print exactly (at least one decimal place);
    /// others print to 15 places.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.0;
        let neg = v.is_negative();
        let abs = v.abs();
        let int = abs.trunc().to_integer();
        let mut frac = abs.fract();
        let mut digits = String::new();
        let limit = if self.is_terminating() { usize::MAX } else { 15 };
        let ten = BigRational::from_integer(BigInt::from(10));
        while !frac.is_zero() && digits.len() < limit {
            frac *= &ten;
            let d = frac.trunc().to_integer();
            digits.push_str(&d.to_string());
            frac = frac.fract();
        }
        if digits.is_empty() {
            digits.push('0');
        }
        write!(f, "{}{}.{}", if neg { "-" } else { "" }, int, digits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
            Op::Div => '/',
        }
    }

    /// Task label used for this operation.
    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Div => "divide",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            Op::Add | Op::Sub => 1,
            Op::Mul | Op::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bracket {
    Round,
    Square,
    Curly,
}

impl Bracket {
    pub fn open(self) -> char {
        match self {
            Bracket::Round => '(',
            Bracket::Square => '[',
            Bracket::Curly => '{',
        }
    }

    pub fn close(self) -> char {
        match self {
            Bracket::Round => ')',
            Bracket::Square => ']',
            Bracket::Curly => '}',
        }
    }

    fn from_open(c: char) -> Option<Self> {
        match c {
            '(' => Some(Bracket::Round),
            '[' => Some(Bracket::Square),
            '{' => Some(Bracket::Curly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpressionNode {
    Number {
        value: Exact,
        text: String,
    },
    Binary {
        op: Op,
        lhs: Box<ExpressionNode>,
        rhs: Box<ExpressionNode>,
        /// Source position of the operator.
        position: usize,
    },
    Group {
        bracket: Bracket,
        inner: Box<ExpressionNode>,
    },
    /// Natural-language operand resolved through the scripted table.
    Snippet {
        text: String,
        value: Exact,
    },
}

impl ExpressionNode {
    pub fn number(n: i64) -> Self {
        ExpressionNode::Number {
            value: Exact::from_int(n),
            text: n.to_string(),
        }
    }

    pub fn binary(op: Op, lhs: ExpressionNode, rhs: ExpressionNode) -> Self {
        ExpressionNode::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            position: 0,
        }
    }

    pub fn group(bracket: Bracket, inner: ExpressionNode) -> Self {
        ExpressionNode::Group {
            bracket,
            inner: Box::new(inner),
        }
    }

    pub fn eval(&self) -> Result<Exact> {
        match self {
            ExpressionNode::Number { value, .. } | ExpressionNode::Snippet { value, .. } => Ok(value.clone()),
            ExpressionNode::Group { inner, .. } => inner.eval(),
            ExpressionNode::Binary { op, lhs, rhs, position } => {
                let (a, b) = (lhs.eval()?.0, rhs.eval()?.0);
                Ok(Exact(match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => {
                        if b.is_zero() {
                            return Err(Error::DivisionByZero { position: *position });
                        }
                        a / b
                    }
                }))
            }
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ExpressionNode::Number { .. } | ExpressionNode::Snippet { .. })
    }

    pub fn contains_snippet(&self) -> bool {
        match self {
            ExpressionNode::Snippet { .. } => true,
            ExpressionNode::Number { .. } => false,
            ExpressionNode::Group { inner, .. } => inner.contains_snippet(),
            ExpressionNode::Binary { lhs, rhs, .. } => lhs.contains_snippet() || rhs.contains_snippet(),
        }
    }

    pub fn op_count(&self) -> usize {
        match self {
            ExpressionNode::Number { .. } | ExpressionNode::Snippet { .. } => 0,
            ExpressionNode::Group { inner, .. } => inner.op_count(),
            ExpressionNode::Binary { lhs, rhs, .. } => 1 + lhs.op_count() + rhs.op_count(),
        }
    }

    /// Canonical text; parsing it yields an equal tree up to operator positions.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0, false);
        out
    }

    fn render_into(&self, out: &mut String, parent_prec: u8, right: bool) {
        match self {
            ExpressionNode::Number { text, .. } => out.push_str(text),
            ExpressionNode::Snippet { text, .. } => {
                out.push('{');
                out.push_str(text);
                out.push('}');
            }
            ExpressionNode::Group { bracket, inner } => {
                out.push(bracket.open());
                inner.render_into(out, 0, false);
                out.push(bracket.close());
            }
            ExpressionNode::Binary { op, lhs, rhs, .. } => {
                // Unbracketed trees from the generator may need implicit parens.
                let prec = op.precedence();
                let wrap = prec < parent_prec || (right && prec == parent_prec);
                if wrap {
                    out.push('(');
                }
                lhs.render_into(out, prec, false);
                out.push(op.symbol());
                rhs.render_into(out, prec, true);
                if wrap {
                    out.push(')');
                }
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
        }
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.src.len(), |c| c.0)
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.1.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: self.offset(),
            message: message.into(),
        }
    }

    fn op(c: char) -> Option<Op> {
        match c {
            '+' => Some(Op::Add),
            '-' | '\u{2212}' => Some(Op::Sub),
            '*' | '\u{d7}' => Some(Op::Mul),
            '/' | '\u{f7}' => Some(Op::Div),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<ExpressionNode> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek().and_then(Self::op).filter(|o| o.precedence() == 1) {
            let position = self.offset();
            self.pos += 1;
            let rhs = self.term()?;
            lhs = ExpressionNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), position };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExpressionNode> {
        let mut lhs = self.factor()?;
        while let Some(op) = self.peek().and_then(Self::op).filter(|o| o.precedence() == 2) {
            let position = self.offset();
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = ExpressionNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), position };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<ExpressionNode> {
        match self.peek() {
            None => Err(self.err("expected a number or bracket, found end of input")),
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => {
                let Some(bracket) = Bracket::from_open(c) else {
                    if Self::op(c).is_some() {
                        return Err(self.err(format!("dangling operator `{c}`")));
                    }
                    return Err(self.err(format!("unexpected `{c}`")));
                };
                let open_at = self.offset();
                self.pos += 1;
                if bracket == Bracket::Curly && self.peek().is_some_and(char::is_alphabetic) {
                    return self.snippet(open_at);
                }
                if matches!(self.peek(), Some(c) if Self::op(c).is_none() && ")]}".contains(c)) {
                    return Err(self.err("empty bracket group"));
                }
                let inner = self.expr()?;
                match self.peek() {
                    Some(c) if c == bracket.close() => {
                        self.pos += 1;
                        Ok(ExpressionNode::group(bracket, inner))
                    }
                    Some(c) if ")]}".contains(c) => Err(self.err(format!(
                        "`{c}` does not close `{}` opened at {open_at}",
                        bracket.open()
                    ))),
                    Some(c) => Err(self.err(format!("expected `{}`, found `{c}`", bracket.close()))),
                    None => Err(self.err(format!("unbalanced `{}` opened at {open_at}", bracket.open()))),
                }
            }
        }
    }

    fn number(&mut self) -> Result<ExpressionNode> {
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.1.is_ascii_digit() || c.1 == '.')
        {
            self.pos += 1;
        }
        let begin = self.chars[start].0;
        let end = self.offset();
        let text = &self.src[begin..end];
        let value = text.parse::<Exact>().map_err(|_| Error::Syntax {
            position: begin,
            message: format!("bad number `{text}`"),
        })?;
        Ok(ExpressionNode::Number { value, text: text.to_string() })
    }

    fn snippet(&mut self, open_at: usize) -> Result<ExpressionNode> {
        let start = self.offset();
        while self.chars.get(self.pos).is_some_and(|c| c.1 != '}') {
            self.pos += 1;
        }
        if self.pos >= self.chars.len() {
            return Err(Error::Syntax {
                position: open_at,
                message: "unbalanced `{` around natural-language text".into(),
            });
        }
        let text = self.src[start..self.offset()].trim().to_string();
        self.pos += 1;
        let value = nl::lookup(&text).ok_or_else(|| Error::UnknownSnippet(text.clone()))?;
        Ok(ExpressionNode::Snippet { text, value })
    }
}

pub fn parse_expression(text: &str) -> Result<ExpressionNode> {
    let mut p = Parser::new(text);
    let node = p.expr()?;
    match p.peek() {
        None => Ok(node),
        Some(c) if ")]}".contains(c) => Err(p.err(format!("unbalanced `{c}`"))),
        Some(c) => Err(p.err(format!("unexpected `{c}` after expression"))),
    }
}

/// Evaluates bracketed arithmetic: `*` and `/` bind tighter than `+` and `-`,
/// operators associate left, and `()`, `[]`, `{}` all group the same way.
pub fn eval_expression(text: &str) -> Result<Exact> {
    parse_expression(text)?.eval()
}

fn random_bracket<R: Rng>(rng: &mut R) -> Bracket {
    match rng.random_range(0..3) {
        0 => Bracket::Round,
        1 => Bracket::Square,
        _ => Bracket::Curly,
    }
}

/// Random bracketed expression with exactly `ops` operators over integers
/// 1..=12. Division by zero cannot occur since every operand of `/` is
/// re-drawn until non-zero.
pub fn random_expression<R: Rng>(rng: &mut R, ops: usize) -> ExpressionNode {
    fn build<R: Rng>(rng: &mut R, ops: usize, top: bool) -> ExpressionNode {
        if ops == 0 {
            return ExpressionNode::number(rng.random_range(1..=12));
        }
        let left = rng.random_range(0..ops);
        let op = [Op::Add, Op::Sub, Op::Mul, Op::Div][rng.random_range(0..4)];
        let lhs = build(rng, left, false);
        let mut rhs = build(rng, ops - 1 - left, false);
        if op == Op::Div {
            let mut guard = 0;
            while rhs.eval().map(|v| v.is_zero()).unwrap_or(true) && guard < 32 {
                rhs = build(rng, ops - 1 - left, false);
                guard += 1;
            }
            if rhs.eval().map(|v| v.is_zero()).unwrap_or(true) {
                rhs = ExpressionNode::number(rng.random_range(1..=12));
                return maybe_group(rng, ExpressionNode::binary(op, lhs, rhs), top);
            }
        }
        maybe_group(rng, ExpressionNode::binary(op, lhs, rhs), top)
    }
    fn maybe_group<R: Rng>(rng: &mut R, node: ExpressionNode, top: bool) -> ExpressionNode {
        if !top && rng.random_bool(0.6) {
            ExpressionNode::group(random_bracket(rng), node)
        } else {
            node
        }
    }
    build(rng, ops, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(s: &str) -> Exact {
        s.parse().unwrap()
    }

    #[test]
    fn reference_rows() {
        assert_eq!(eval_expression("(8-2)*3-(5+(11/2))/5").unwrap(), ex("15.9"));
        assert_eq!(eval_expression("{(8-2)*3}-(5+(11/2))/5").unwrap(), ex("15.9"));
        assert_eq!(eval_expression("[4+8*(5-3)/2]-15+(7-(9/3))").unwrap(), ex("1.0"));
    }

    #[test]
    fn scripted_snippets() {
        assert_eq!(eval_expression("{Average of 3, 7, and five?}").unwrap(), ex("5"));
        assert_eq!(
            eval_expression("((6 + 2) * [8 - 3 * 2]) + {Average of 3, 7, and five?}").unwrap(),
            ex("21")
        );
        let row3 = "2+{6*[12-({Multiply the sum of three, seven, and five by two. Then, subtract fifteen.}+3)]}/3+4*(7-5)-2/1";
        assert_eq!(eval_expression(row3).unwrap(), ex("-4"));
        assert_eq!(
            eval_expression("6*[12-({Multiply the sum of three, seven, and five by two. Then, subtract fifteen.}+3)]").unwrap(),
            ex("-36")
        );
        assert_eq!(
            eval_expression("14-{If you subtract 3 from 43 and then divide by 5, what is the result?}").unwrap(),
            ex("6")
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_expression("2+3*4").unwrap(), ex("14"));
        assert_eq!(eval_expression("8-3-2").unwrap(), ex("3"));
        assert_eq!(eval_expression("8/4/2").unwrap(), ex("1"));
        assert_eq!(eval_expression(" 10 / ( [9*(6-5)] + 8 ) - (3+7) ").unwrap(), Exact(BigRational::new((-160).into(), 17.into())));
    }

    #[test]
    fn syntax_errors_have_positions() {
        for (src, pos) in [("(8-2*3", 6), ("4+*5", 2), ("3+", 2), ("(1+2]", 4), ("1+2)", 3), ("()", 1), ("2 x 3", 2)] {
            match eval_expression(src) {
                Err(Error::Syntax { position, .. }) => assert_eq!(position, pos, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn division_by_zero() {
        assert!(matches!(eval_expression("1/(2-2)"), Err(Error::DivisionByZero { position: 1 })));
    }

    #[test]
    fn unknown_snippet() {
        assert!(matches!(eval_expression("{What is love?}"), Err(Error::UnknownSnippet(_))));
    }

    #[test]
    fn display() {
        assert_eq!(ex("15.9").to_string(), "15.9");
        assert_eq!(ex("-4").to_string(), "-4.0");
        assert_eq!(ex("0.05").to_string(), "0.05");
        let third = Exact(BigRational::new(1.into(), 3.into()));
        assert_eq!(third.to_string(), "0.333333333333333");
        assert_eq!(ex("15.9").to_f64(), 15.9);
    }

    #[test]
    fn render_roundtrip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let ops = rng.random_range(0..8);
            let e = random_expression(&mut rng, ops);
            assert_eq!(e.op_count(), ops);
            let text = e.render();
            let back = parse_expression(&text).unwrap();
            assert_eq!(back.render(), text);
            assert_eq!(back.eval().unwrap(), e.eval().unwrap(), "{text}");
        }
    }
}
