//! Mamdani fuzzy inference over scalar domains.
//!
//! Inputs are fuzzified with trapezoidal membership functions, rule
//! antecedents are combined with `min` (AND) / `max` (OR), each rule clips
//! its consequent term at its firing strength, and the clipped sets are
//! aggregated with a pointwise `max` on a uniform grid over the output
//! domain. The aggregate is collapsed to a crisp value by its centroid.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Default number of grid points used to sample the output domain.
pub const DEFAULT_RESOLUTION: usize = 1001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("membership parameters must be finite and ordered a <= b <= c <= d, got [{0}, {1}, {2}, {3}]")]
    InvalidMembership(f64, f64, f64, f64),
    #[error("variable `{0}` has an empty or non-finite domain")]
    InvalidDomain(String),
    #[error("variable `{0}` has no terms")]
    NoTerms(String),
    #[error("term `{term}` lies outside the domain of variable `{variable}`")]
    TermOutsideDomain { variable: String, term: String },
    #[error("variable `{variable}` defines term `{term}` twice")]
    DuplicateTerm { variable: String, term: String },
    #[error("duplicate input variable `{0}`")]
    DuplicateVariable(String),
    #[error("rule base is empty")]
    EmptyRuleBase,
    #[error("rule references unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("rule references unknown term `{term}` of variable `{variable}`")]
    UnknownTerm { variable: String, term: String },
    #[error("no value supplied for input variable `{0}`")]
    MissingInput(String),
    #[error("grid resolution must be at least 2, got {0}")]
    InvalidResolution(usize),
    #[error("cannot parse rule `{rule}`: {reason}")]
    RuleSyntax { rule: String, reason: String },
}

/// Trapezoidal membership function `[a, b, c, d]`.
///
/// A triangle is stored as a trapezoid with `b == c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipFunction {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl MembershipFunction {
    pub fn trapezoid(a: f64, b: f64, c: f64, d: f64) -> Result<Self, FuzzyError> {
        let finite = [a, b, c, d].iter().all(|v| v.is_finite());
        if !finite || !(a <= b && b <= c && c <= d) {
            return Err(FuzzyError::InvalidMembership(a, b, c, d));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn triangle(a: f64, peak: f64, c: f64) -> Result<Self, FuzzyError> {
        Self::trapezoid(a, peak, peak, c)
    }

    pub fn params(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn is_triangle(&self) -> bool {
        self.b == self.c
    }

    /// Degree of membership of `x`, always in `[0, 1]`.
    ///
    /// The plateau is tested first so a vertical edge (`a == b` or
    /// `c == d`) belongs to the plateau on its closed boundary.
    pub fn eval(&self, x: f64) -> f64 {
        let Self { a, b, c, d } = *self;
        if x.is_nan() {
            return 0.0;
        }
        if b <= x && x <= c {
            1.0
        } else if x <= a || x >= d {
            0.0
        } else if x < b {
            (x - a) / (b - a)
        } else {
            (d - x) / (d - c)
        }
    }
}

/// A named linguistic term.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub membership: MembershipFunction,
}

/// A linguistic variable over a closed interval `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyVariable {
    name: String,
    lo: f64,
    hi: f64,
    terms: Vec<Term>,
}

impl FuzzyVariable {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        terms: impl IntoIterator<Item = (String, MembershipFunction)>,
    ) -> Result<Self, FuzzyError> {
        let name = name.into();
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(FuzzyError::InvalidDomain(name));
        }
        let mut out: Vec<Term> = Vec::new();
        for (term, membership) in terms {
            let [a, _, _, d] = membership.params();
            if a < lo || d > hi {
                return Err(FuzzyError::TermOutsideDomain { variable: name, term });
            }
            if out.iter().any(|t| t.name == term) {
                return Err(FuzzyError::DuplicateTerm { variable: name, term });
            }
            out.push(Term { name: term, membership });
        }
        if out.is_empty() {
            return Err(FuzzyError::NoTerms(name));
        }
        Ok(Self { name, lo, hi, terms: out })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Degrees of every term at `x`, after clamping `x` into the domain.
    pub fn fuzzify(&self, x: f64) -> Vec<(&str, f64)> {
        let x = self.clamp(x);
        self.terms.iter().map(|t| (t.name.as_str(), t.membership.eval(x))).collect()
    }

    fn degrees(&self, x: f64) -> Vec<f64> {
        let x = self.clamp(x);
        self.terms.iter().map(|t| t.membership.eval(x)).collect()
    }
}

/// Rule antecedent: `variable is term` atoms joined by AND / OR.
#[derive(Debug, Clone, PartialEq)]
pub enum Antecedent {
    Is { variable: String, term: String },
    And(Vec<Antecedent>),
    Or(Vec<Antecedent>),
}

impl Antecedent {
    pub fn is(variable: impl Into<String>, term: impl Into<String>) -> Self {
        Antecedent::Is { variable: variable.into(), term: term.into() }
    }

    fn fmt_nested(&self, f: &mut fmt::Formatter<'_>, parent_is_and: bool) -> fmt::Result {
        match self {
            Antecedent::Is { variable, term } => write!(f, "{variable} is {term}"),
            Antecedent::And(items) => join(f, items, " and ", true),
            Antecedent::Or(items) if parent_is_and => {
                f.write_str("(")?;
                join(f, items, " or ", false)?;
                f.write_str(")")
            }
            Antecedent::Or(items) => join(f, items, " or ", false),
        }
    }
}

fn join(f: &mut fmt::Formatter<'_>, items: &[Antecedent], sep: &str, is_and: bool) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        item.fmt_nested(f, is_and)?;
    }
    Ok(())
}

impl fmt::Display for Antecedent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_nested(f, false)
    }
}

/// `antecedent => output is term`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub antecedent: Antecedent,
    pub output: String,
    pub consequent: String,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} => {} is {}", self.antecedent, self.output, self.consequent)
    }
}

impl FromStr for Rule {
    type Err = FuzzyError;

    /// Parses `cpu is High or (drift is Large and load is High) => score is Low`.
    /// `and` binds tighter than `or`; keywords are case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| FuzzyError::RuleSyntax { rule: s.to_string(), reason: reason.to_string() };
        let tokens = tokenize(s).map_err(|r| fail(&r))?;
        let mut parser = Parser { tokens: &tokens, pos: 0 };
        let antecedent = parser.expr().map_err(|r| fail(&r))?;
        parser.expect(&Token::Arrow).map_err(|r| fail(&r))?;
        let (output, consequent) = parser.atom().map_err(|r| fail(&r))?;
        if parser.pos != tokens.len() {
            return Err(fail("unexpected trailing input"));
        }
        Ok(Rule { antecedent, output, consequent })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    And,
    Or,
    Is,
    Open,
    Close,
    Arrow,
}

fn tokenize(s: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some(&(i, ch)) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            '=' => {
                chars.next();
                match chars.next() {
                    Some((_, '>')) => out.push(Token::Arrow),
                    _ => return Err(format!("expected `=>` at offset {i}")),
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = i;
                while let Some(&(j, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        end = j + c.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let word = &s[i..end];
                out.push(match word.to_ascii_lowercase().as_str() {
                    "and" => Token::And,
                    "or" => Token::Or,
                    "is" => Token::Is,
                    _ => Token::Ident(word.to_string()),
                });
            }
            other => return Err(format!("unexpected character `{other}` at offset {i}")),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expect(&mut self, tok: &Token) -> Result<(), String> {
        match self.peek() {
            Some(t) if t == tok => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(format!("expected {tok:?}, found {t:?}")),
            None => Err(format!("expected {tok:?}, found end of rule")),
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.peek() {
            Some(Token::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            Some(t) => Err(format!("expected identifier, found {t:?}")),
            None => Err("expected identifier, found end of rule".into()),
        }
    }

    fn atom(&mut self) -> Result<(String, String), String> {
        let variable = self.ident()?;
        self.expect(&Token::Is)?;
        let term = self.ident()?;
        Ok((variable, term))
    }

    fn expr(&mut self) -> Result<Antecedent, String> {
        let mut items = vec![self.conjunction()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Antecedent::Or(items) })
    }

    fn conjunction(&mut self) -> Result<Antecedent, String> {
        let mut items = vec![self.factor()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            items.push(self.factor()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Antecedent::And(items) })
    }

    fn factor(&mut self) -> Result<Antecedent, String> {
        if self.peek() == Some(&Token::Open) {
            self.pos += 1;
            let inner = self.expr()?;
            self.expect(&Token::Close)?;
            return Ok(inner);
        }
        let (variable, term) = self.atom()?;
        Ok(Antecedent::Is { variable, term })
    }
}

/// Ordered rules sharing one output variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    output: FuzzyVariable,
    rules: Vec<Rule>,
}

impl RuleBase {
    pub fn new(output: FuzzyVariable, rules: Vec<Rule>) -> Result<Self, FuzzyError> {
        if rules.is_empty() {
            return Err(FuzzyError::EmptyRuleBase);
        }
        for rule in &rules {
            if rule.output != output.name {
                return Err(FuzzyError::UnknownVariable(rule.output.clone()));
            }
            if output.term(&rule.consequent).is_none() {
                return Err(FuzzyError::UnknownTerm { variable: output.name.clone(), term: rule.consequent.clone() });
            }
        }
        Ok(Self { output, rules })
    }

    pub fn output(&self) -> &FuzzyVariable {
        &self.output
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Atom(usize, usize),
    And(Vec<Compiled>),
    Or(Vec<Compiled>),
}

impl Compiled {
    fn strength(&self, degrees: &[Vec<f64>]) -> f64 {
        match self {
            Compiled::Atom(v, t) => degrees[*v][*t],
            Compiled::And(items) => items.iter().map(|c| c.strength(degrees)).fold(1.0, f64::min),
            Compiled::Or(items) => items.iter().map(|c| c.strength(degrees)).fold(0.0, f64::max),
        }
    }
}

/// Input variables, a rule base, and the output sampling resolution.
#[derive(Debug, Clone)]
pub struct MamdaniSystem {
    inputs: Vec<FuzzyVariable>,
    rule_base: RuleBase,
    resolution: usize,
    compiled: Vec<(Compiled, usize)>,
}

impl MamdaniSystem {
    pub fn new(inputs: Vec<FuzzyVariable>, rule_base: RuleBase, resolution: usize) -> Result<Self, FuzzyError> {
        if resolution < 2 {
            return Err(FuzzyError::InvalidResolution(resolution));
        }
        for (i, v) in inputs.iter().enumerate() {
            if inputs[..i].iter().any(|w| w.name == v.name) {
                return Err(FuzzyError::DuplicateVariable(v.name.clone()));
            }
        }
        let compiled = rule_base
            .rules
            .iter()
            .map(|r| {
                let ante = compile(&r.antecedent, &inputs)?;
                let term = rule_base.output.term_index(&r.consequent).expect("checked by RuleBase::new");
                Ok((ante, term))
            })
            .collect::<Result<Vec<_>, FuzzyError>>()?;
        Ok(Self { inputs, rule_base, resolution, compiled })
    }

    pub fn inputs(&self) -> &[FuzzyVariable] {
        &self.inputs
    }

    pub fn input(&self, name: &str) -> Option<&FuzzyVariable> {
        self.inputs.iter().find(|v| v.name == name)
    }

    pub fn rule_base(&self) -> &RuleBase {
        &self.rule_base
    }

    pub fn output(&self) -> &FuzzyVariable {
        &self.rule_base.output
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn with_resolution(mut self, resolution: usize) -> Result<Self, FuzzyError> {
        if resolution < 2 {
            return Err(FuzzyError::InvalidResolution(resolution));
        }
        self.resolution = resolution;
        Ok(self)
    }

    /// Firing strength of every rule, in rule order.
    pub fn firing_strengths(&self, values: &[(&str, f64)]) -> Result<Vec<f64>, FuzzyError> {
        let degrees = self
            .inputs
            .iter()
            .map(|var| {
                values
                    .iter()
                    .find(|(name, _)| *name == var.name)
                    .map(|&(_, x)| var.degrees(x))
                    .ok_or_else(|| FuzzyError::MissingInput(var.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.compiled.iter().map(|(ante, _)| ante.strength(&degrees)).collect())
    }

    pub fn infer(&self, values: &[(&str, f64)]) -> Result<Aggregate, FuzzyError> {
        let strengths = self.firing_strengths(values)?;
        let activations: Vec<(usize, f64)> =
            self.compiled.iter().zip(strengths).map(|((_, term), s)| (*term, s)).collect();
        Ok(aggregate(self.output(), &activations, self.resolution))
    }
}

fn compile(ante: &Antecedent, inputs: &[FuzzyVariable]) -> Result<Compiled, FuzzyError> {
    Ok(match ante {
        Antecedent::Is { variable, term } => {
            let v = inputs
                .iter()
                .position(|x| &x.name == variable)
                .ok_or_else(|| FuzzyError::UnknownVariable(variable.clone()))?;
            let t = inputs[v]
                .term_index(term)
                .ok_or_else(|| FuzzyError::UnknownTerm { variable: variable.clone(), term: term.clone() })?;
            Compiled::Atom(v, t)
        }
        Antecedent::And(items) => Compiled::And(items.iter().map(|a| compile(a, inputs)).collect::<Result<_, _>>()?),
        Antecedent::Or(items) => Compiled::Or(items.iter().map(|a| compile(a, inputs)).collect::<Result<_, _>>()?),
    })
}

/// Clip each activated output term at its strength and take the pointwise
/// max on `resolution` evenly spaced points over the output domain.
///
/// `activations` pairs an output term index with a firing strength.
pub fn aggregate(output: &FuzzyVariable, activations: &[(usize, f64)], resolution: usize) -> Aggregate {
    let mut clip = vec![0.0f64; output.terms.len()];
    for &(term, strength) in activations {
        clip[term] = clip[term].max(strength.clamp(0.0, 1.0));
    }
    let (lo, hi) = output.domain();
    let step = (hi - lo) / (resolution - 1) as f64;
    let degrees = (0..resolution)
        .map(|i| {
            let x = lo + step * i as f64;
            output
                .terms
                .iter()
                .zip(&clip)
                .filter(|(_, &h)| h > 0.0)
                .map(|(t, &h)| t.membership.eval(x).min(h))
                .fold(0.0, f64::max)
        })
        .collect();
    Aggregate { lo, hi, degrees }
}

/// Aggregated output membership sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    lo: f64,
    hi: f64,
    degrees: Vec<f64>,
}

/// Crisp output of [`Aggregate::centroid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub value: f64,
    /// Set when the aggregate is identically zero; `value` is then the
    /// domain midpoint.
    pub no_rule_fired: bool,
}

impl Aggregate {
    /// Wraps samples taken on a uniform grid over `[lo, hi]`.
    pub fn from_samples(lo: f64, hi: f64, degrees: Vec<f64>) -> Self {
        assert!(degrees.len() >= 2, "an aggregate needs at least two samples");
        Self { lo, hi, degrees }
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.degrees.len() - 1) as f64
    }

    pub fn max_degree(&self) -> f64 {
        self.degrees.iter().copied().fold(0.0, f64::max)
    }

    pub fn centroid(&self) -> Centroid {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &mu) in self.degrees.iter().enumerate() {
            num += self.point(i) * mu;
            den += mu;
        }
        if den > 0.0 {
            Centroid { value: (num / den).clamp(self.lo, self.hi), no_rule_fired: false }
        } else {
            Centroid { value: 0.5 * (self.lo + self.hi), no_rule_fired: true }
        }
    }
}
