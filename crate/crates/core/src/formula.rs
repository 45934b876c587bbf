//! A small model-formula language:
//! `resp ~ term + term ...` with `name`, `I(name^p)`, `a:b`, `s(name[, k=K])`,
//! `te(a, b[, k=K])`, `1` and `-1`.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Linear(String),
    /// Raw power with exponent at least 2.
    Power(String, u32),
    /// Elementwise product of linear or power factors.
    Interaction(Vec<Term>),
    Smooth { var: String, k: Option<usize> },
    TensorSmooth { a: String, b: String, k: Option<usize> },
}

impl Term {
    /// Variables the term reads.
    pub fn vars(&self) -> Vec<&str> {
        match self {
            Term::Linear(v) | Term::Power(v, _) | Term::Smooth { var: v, .. } => vec![v],
            Term::Interaction(ts) => ts.iter().flat_map(|t| t.vars()).collect(),
            Term::TensorSmooth { a, b, .. } => vec![a, b],
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Term::Smooth { .. } | Term::TensorSmooth { .. })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Linear(v) => f.write_str(v),
            Term::Power(v, p) => write!(f, "I({v}^{p})"),
            Term::Interaction(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(":")?;
                    }
                    write!(f, "{t}")?;
                }
                Ok(())
            }
            Term::Smooth { var, k: None } => write!(f, "s({var})"),
            Term::Smooth { var, k: Some(k) } => write!(f, "s({var}, k={k})"),
            Term::TensorSmooth { a, b, k: None } => write!(f, "te({a}, {b})"),
            Term::TensorSmooth { a, b, k: Some(k) } => write!(f, "te({a}, {b}, k={k})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Formula {
    pub response: Option<String>,
    pub intercept: bool,
    pub terms: Vec<Term>,
    response_span: Option<Range<usize>>,
    spans: Vec<Range<usize>>,
}

impl PartialEq for Formula {
    fn eq(&self, other: &Self) -> bool {
        self.response == other.response && self.intercept == other.intercept && self.terms == other.terms
    }
}

impl Formula {
    pub fn new(response: Option<String>, intercept: bool, terms: Vec<Term>) -> Result<Formula, FormulaError> {
        let text = Formula {
            response,
            intercept,
            terms,
            response_span: None,
            spans: Vec::new(),
        }
        .to_string();
        parse_formula(&text)
    }

    /// Byte range of term `i` in the source text, when parsed.
    pub fn span(&self, i: usize) -> Option<Range<usize>> {
        self.spans.get(i).cloned()
    }

    pub fn has_linear(&self, var: &str) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Linear(v) if v == var))
    }

    /// Every variable read by the right-hand side, in first-use order.
    pub fn covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for v in t.vars() {
                if !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }

    pub fn mentions(&self, var: &str) -> bool {
        self.terms.iter().any(|t| t.vars().contains(&var))
    }

    pub fn is_intercept_only(&self) -> bool {
        self.terms.is_empty()
    }

    /// Checks every name against a variable table.
    pub fn resolve(&self, vars: &[String]) -> Result<(), FormulaError> {
        let known = |v: &str| vars.iter().any(|x| x == v);
        if let Some(r) = &self.response {
            if !known(r) {
                return Err(FormulaError::new(
                    self.response_span.as_ref().map_or(0, |s| s.start),
                    format!("unknown variable {r}"),
                    vars,
                ));
            }
        }
        for (i, t) in self.terms.iter().enumerate() {
            if let Some(v) = t.vars().into_iter().find(|v| !known(v)) {
                let at = self.spans.get(i).map_or(0, |s| s.start);
                return Err(FormulaError::new(at, format!("unknown variable {v}"), vars));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = &self.response {
            write!(f, "{r} ")?;
        }
        f.write_str("~ ")?;
        if self.terms.is_empty() {
            return f.write_str(if self.intercept { "1" } else { "-1" });
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{t}")?;
        }
        if !self.intercept {
            f.write_str(" - 1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {message}; expected one of: {}", expected.join(", "))]
pub struct FormulaError {
    pub offset: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl FormulaError {
    fn new(offset: usize, message: impl Into<String>, expected: &[impl AsRef<str>]) -> Self {
        Self {
            offset,
            message: message.into(),
            expected: expected.iter().map(|e| e.as_ref().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Int(u64),
    Tilde,
    Plus,
    Minus,
    Colon,
    Caret,
    Comma,
    Equals,
    Open,
    Close,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("name {n}"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::End => "end of input".into(),
            other => format!("'{}'", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::Tilde => "~",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Colon => ":",
            Tok::Caret => "^",
            Tok::Comma => ",",
            Tok::Equals => "=",
            Tok::Open => "(",
            Tok::Close => ")",
            _ => "",
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'~' => Tok::Tilde,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b':' => Tok::Colon,
            b'^' => Tok::Caret,
            b',' => Tok::Comma,
            b'=' => Tok::Equals,
            b'(' => Tok::Open,
            b')' => Tok::Close,
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = text[start..i]
                    .parse()
                    .map_err(|_| FormulaError::new(start, "integer out of range", &["integer"]))?;
                out.push((Tok::Int(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c == b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                    i += 1;
                }
                out.push((Tok::Name(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(FormulaError::new(
                    start,
                    format!("unknown token '{ch}'"),
                    &["name", "integer", "~", "+", "-", ":", "^", ",", "=", "(", ")"],
                ));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    /// Offsets of currently open parentheses.
    open: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            return 0;
        }
        let (tok, at) = &self.toks[self.pos - 1];
        at + match tok {
            Tok::Name(n) => n.len(),
            Tok::Int(i) => i.to_string().len(),
            _ => 1,
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> FormulaError {
        if *self.peek() == Tok::End {
            if let Some(&at) = self.open.last() {
                return FormulaError::new(at, "unbalanced parenthesis", &[")"]);
            }
        }
        if *self.peek() == Tok::Close && self.open.is_empty() {
            return FormulaError::new(self.offset(), "unbalanced parenthesis", expected);
        }
        FormulaError::new(self.offset(), format!("unexpected {}", self.peek().describe()), expected)
    }

    fn expect(&mut self, tok: Tok) -> Result<(), FormulaError> {
        if *self.peek() == tok {
            match tok {
                Tok::Open => self.open.push(self.offset()),
                Tok::Close => {
                    self.open.pop();
                }
                _ => {}
            }
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[tok.symbol()]))
        }
    }

    fn name(&mut self) -> Result<String, FormulaError> {
        match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.error(&["name"])),
        }
    }

    fn int(&mut self) -> Result<u64, FormulaError> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            _ => Err(self.error(&["integer"])),
        }
    }

    fn optional_k(&mut self) -> Result<Option<usize>, FormulaError> {
        if *self.peek() != Tok::Comma {
            return Ok(None);
        }
        self.bump();
        let at = self.offset();
        match self.name()?.as_str() {
            "k" => {}
            other => return Err(FormulaError::new(at, format!("unknown argument {other}"), &["k"])),
        }
        self.expect(Tok::Equals)?;
        let at = self.offset();
        let k = self.int()?;
        usize::try_from(k)
            .map(Some)
            .map_err(|_| FormulaError::new(at, "basis size out of range", &["integer"]))
    }

    /// `name` or `I(name^p)`.
    fn factor(&mut self) -> Result<Term, FormulaError> {
        let name = self.name()?;
        if name != "I" || *self.peek() != Tok::Open {
            return Ok(Term::Linear(name));
        }
        self.expect(Tok::Open)?;
        let var = self.name()?;
        self.expect(Tok::Caret)?;
        let p_at = self.offset();
        let p = self.int()?;
        if p < 2 || p > u64::from(u32::MAX) {
            return Err(FormulaError::new(p_at, "power must be an integer of at least 2", &["integer >= 2"]));
        }
        self.expect(Tok::Close)?;
        Ok(Term::Power(var, p as u32))
    }

    fn term(&mut self) -> Result<Term, FormulaError> {
        if let Tok::Name(n) = self.peek().clone() {
            if (n == "s" || n == "te") && self.toks[self.pos + 1].0 == Tok::Open {
                self.bump();
                self.expect(Tok::Open)?;
                let a = self.name()?;
                let term = if n == "s" {
                    let k = self.optional_k()?;
                    Term::Smooth { var: a, k }
                } else {
                    self.expect(Tok::Comma)?;
                    let b = self.name()?;
                    let k = self.optional_k()?;
                    Term::TensorSmooth { a, b, k }
                };
                self.expect(Tok::Close)?;
                return Ok(term);
            }
        }
        let first = self.factor()?;
        if *self.peek() != Tok::Colon {
            return Ok(first);
        }
        let mut parts = vec![first];
        while *self.peek() == Tok::Colon {
            self.bump();
            parts.push(self.factor()?);
        }
        Ok(Term::Interaction(parts))
    }
}

const TERM_START: [&str; 6] = ["name", "I(", "s(", "te(", "1", "-1"];

/// Parses `resp ~ rhs` or a one-sided `~ rhs`.
pub fn parse_formula(text: &str) -> Result<Formula, FormulaError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        open: Vec::new(),
    };
    let mut response = None;
    let mut response_span = None;
    if let Tok::Name(_) = p.peek() {
        let at = p.offset();
        response = Some(p.name()?);
        response_span = Some(at..p.prev_end());
    }
    p.expect(Tok::Tilde).map_err(|e| if response.is_none() { p.error(&["name", "~"]) } else { e })?;

    let mut intercept = true;
    let mut explicit_one = false;
    let mut terms: Vec<Term> = Vec::new();
    let mut spans = Vec::new();
    let mut first = true;
    loop {
        let negated = match p.peek() {
            Tok::Minus => {
                p.bump();
                true
            }
            Tok::Plus if !first => {
                p.bump();
                if *p.peek() == Tok::Minus {
                    p.bump();
                    true
                } else {
                    false
                }
            }
            _ if first => false,
            _ => return Err(p.error(&["+", "-", "end of input"])),
        };
        let at = p.offset();
        if let Tok::Int(v) = *p.peek() {
            match (v, negated) {
                (1, true) => intercept = false,
                (1, false) => explicit_one = true,
                (0, false) => intercept = false,
                _ => return Err(p.error(&TERM_START)),
            }
            p.bump();
        } else if negated {
            return Err(p.error(&["1"]));
        } else {
            let term = p.term().map_err(|e| if p.offset() == at { p.error(&TERM_START) } else { e })?;
            if terms.contains(&term) {
                return Err(FormulaError::new(at, format!("duplicate term {term}"), &["a new term"]));
            }
            terms.push(term);
            spans.push(at..p.prev_end());
        }
        first = false;
        if *p.peek() == Tok::End {
            break;
        }
    }
    if explicit_one && !intercept {
        return Err(FormulaError::new(0, "intercept both added and removed", &["1", "-1"]));
    }
    if terms.is_empty() && !intercept {
        return Err(FormulaError::new(text.len(), "model has no terms", &TERM_START));
    }
    Ok(Formula {
        response,
        intercept,
        terms,
        response_span,
        spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(v: &str) -> Term {
        Term::Linear(v.into())
    }

    #[test]
    fn polynomial_mean() {
        let f = parse_formula("Y ~ X1 + I(X2^2) + I(X1^3) + I(X2^4)").unwrap();
        assert_eq!(f.response.as_deref(), Some("Y"));
        assert!(f.intercept);
        assert_eq!(
            f.terms,
            vec![lin("X1"), Term::Power("X2".into(), 2), Term::Power("X1".into(), 3), Term::Power("X2".into(), 4)]
        );
    }

    #[test]
    fn smooth_mean_and_dispersion() {
        let f = parse_formula("Y~X1+s(X1)+s( X2 , k = 12 )").unwrap();
        assert_eq!(
            f.terms,
            vec![lin("X1"), Term::Smooth { var: "X1".into(), k: None }, Term::Smooth { var: "X2".into(), k: Some(12) }]
        );
        let d = parse_formula("~ 1").unwrap();
        assert!(d.response.is_none() && d.intercept && d.is_intercept_only());
        let d = parse_formula("~ X2 + I(X2^2)").unwrap();
        assert_eq!(d.covariates(), vec!["X2".to_string()]);
    }

    #[test]
    fn interactions_tensors_and_no_intercept() {
        let f = parse_formula("Y ~ a:b + te(a, b, k=4) + I(a^2):b - 1").unwrap();
        assert!(!f.intercept);
        assert_eq!(f.terms[0], Term::Interaction(vec![lin("a"), lin("b")]));
        assert_eq!(f.terms[1], Term::TensorSmooth { a: "a".into(), b: "b".into(), k: Some(4) });
        assert_eq!(f.terms[2], Term::Interaction(vec![Term::Power("a".into(), 2), lin("b")]));
        assert_eq!(parse_formula("Y ~ x + -1").unwrap(), parse_formula("Y ~ x - 1").unwrap());
    }

    #[test]
    fn printing_round_trips() {
        for text in ["Y ~ X1 + I(X2^2)", "~ 1", "Y ~ s(x, k=5) + te(a, b) - 1", "Y ~ a:I(b^3):c"] {
            let f = parse_formula(text).unwrap();
            assert_eq!(f.to_string(), text);
            assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
        }
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_formula("Y ~ X1 + $").unwrap_err();
        assert_eq!(e.offset, 9);
        assert!(e.message.contains("unknown token"));

        let e = parse_formula("Y ~ s(X1").unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(e.message.contains("unbalanced"));

        let e = parse_formula("Y ~ X1)").unwrap_err();
        assert_eq!(e.offset, 6);
        assert!(e.message.contains("unbalanced"));

        let e = parse_formula("Y ~ X1 X2").unwrap_err();
        assert_eq!(e.offset, 7);
        assert!(e.expected.contains(&"+".to_string()));

        let e = parse_formula("Y ~ I(X1^1)").unwrap_err();
        assert_eq!(e.offset, 9);

        let e = parse_formula("Y ~ X1 + X1").unwrap_err();
        assert_eq!(e.offset, 9);
        assert!(e.message.contains("duplicate"));

        let e = parse_formula("Y ~ s(x, j=3)").unwrap_err();
        assert_eq!(e.offset, 9);

        assert!(parse_formula("Y ~ -1").is_err());
        assert!(parse_formula("Y ~ 1 - 1").is_err());
        assert!(parse_formula("Y X").is_err());
    }

    #[test]
    fn resolution_reports_the_term() {
        let vars: Vec<String> = ["Y", "X1", "X2"].iter().map(|s| s.to_string()).collect();
        parse_formula("Y ~ X1 + s(X2)").unwrap().resolve(&vars).unwrap();
        let e = parse_formula("Y ~ X1 + s(X3)").unwrap().resolve(&vars).unwrap_err();
        assert_eq!(e.offset, 9);
        assert!(e.message.contains("X3"));
        let e = parse_formula("Z ~ X1").unwrap().resolve(&vars).unwrap_err();
        assert_eq!(e.offset, 0);
    }

    #[test]
    fn constructor_goes_through_the_grammar() {
        let f = Formula::new(Some("Y".into()), true, vec![lin("x"), Term::Power("x".into(), 2)]).unwrap();
        assert_eq!(f.span(1), Some(8..14));
        assert!(Formula::new(None, true, vec![lin("x"), lin("x")]).is_err());
    }
}
