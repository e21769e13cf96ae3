//! Exact multivariate polynomials over the rationals.
//!
//! Polynomials are stored sparsely as a map from exponent vectors to
//! [`Rational`] coefficients. Terms are ordered graded-lexicographically,
//! which fixes the canonical printed form and the ordering of minors.
//! Floating point only enters through [`CompiledPoly`], the evaluation form
//! used by the numerical modules.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational coefficient.
pub type Rational = BigRational;

/// Maximum number of variables accepted by the parser.
pub const MAX_VARS: usize = 6;
/// Maximum total degree accepted by the parser.
pub const MAX_DEGREE: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable `{name}` at position {position}")]
    UnknownVariable { name: String, position: usize },
    #[error("zero denominator at position {position}")]
    ZeroDenominator { position: usize },
    #[error("too many variables: {0} (limit {MAX_VARS})")]
    TooManyVariables(usize),
    #[error("total degree {0} exceeds limit {MAX_DEGREE}")]
    DegreeTooHigh(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("minor size {size} out of range for a {rows}x{cols} matrix")]
    MinorSize { size: usize, rows: usize, cols: usize },
}

/// Exponent vector of a monomial, ordered graded-lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(num_vars: usize) -> Self {
        Monomial(vec![0; num_vars])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial with rational coefficients.
///
/// No zero coefficients are ever stored, so structural equality is
/// mathematical equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    num_vars: usize,
    terms: BTreeMap<Monomial, Rational>,
}

impl Polynomial {
    pub fn zero(num_vars: usize) -> Self {
        Polynomial {
            num_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(num_vars: usize, c: Rational) -> Self {
        let mut p = Polynomial::zero(num_vars);
        p.add_term(Monomial::one(num_vars), c);
        p
    }

    pub fn from_int(num_vars: usize, c: i64) -> Self {
        Polynomial::constant(num_vars, Rational::from_integer(BigInt::from(c)))
    }

    /// The coordinate function `x_index`.
    pub fn var(num_vars: usize, index: usize) -> Self {
        let mut exps = vec![0; num_vars];
        exps[index] = 1;
        let mut p = Polynomial::zero(num_vars);
        p.add_term(Monomial(exps), Rational::one());
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, merging
    /// repeated monomials.
    pub fn from_terms<I>(num_vars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Rational, Vec<u32>)>,
    {
        let mut p = Polynomial::zero(num_vars);
        for (c, e) in terms {
            assert_eq!(e.len(), num_vars, "exponent vector length");
            p.add_term(Monomial(e), c);
        }
        p
    }

    /// Affine-linear polynomial `c0 + sum_i coeffs[i] * x_i`.
    pub fn linear(coeffs: &[Rational], c0: Rational) -> Self {
        let n = coeffs.len();
        let mut p = Polynomial::constant(n, c0);
        for (i, c) in coeffs.iter().enumerate() {
            let mut e = vec![0; n];
            e[i] = 1;
            p.add_term(Monomial(e), c.clone());
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(existing) => {
                *existing += c;
                if existing.is_zero() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True for a nonzero constant, which has no real zeros.
    pub fn is_nonzero_constant(&self) -> bool {
        self.terms.len() == 1 && self.total_degree() == 0
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Terms in ascending graded-lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, exps: &[u32]) -> Rational {
        self.terms
            .get(&Monomial(exps.to_vec()))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return Polynomial::zero(self.num_vars);
        }
        Polynomial {
            num_vars: self.num_vars,
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut acc = Polynomial::from_int(self.num_vars, 1);
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    /// Exact partial derivative with respect to `x_var`.
    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Polynomial::zero(self.num_vars);
        for (m, c) in &self.terms {
            let e = m.0[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[var] = e - 1;
            out.add_term(Monomial(exps), c * Rational::from_integer(BigInt::from(e)));
        }
        out
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        self.check_len(point.len())?;
        Ok(self
            .terms
            .iter()
            .map(|(m, c)| {
                let c = c.to_f64().unwrap_or(f64::NAN);
                m.0.iter().zip(point).fold(c, |acc, (&e, &x)| acc * x.powi(e as i32))
            })
            .sum())
    }

    pub fn eval_exact(&self, point: &[Rational]) -> Result<Rational, PolyError> {
        self.check_len(point.len())?;
        let mut total = Rational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (&e, x) in m.0.iter().zip(point) {
                if e > 0 {
                    t *= num_traits::pow(x.clone(), e as usize);
                }
            }
            total += t;
        }
        Ok(total)
    }

    /// The polynomial `u -> p(origin + u)`, computed exactly.
    pub fn shift(&self, origin: &[Rational]) -> Result<Polynomial, PolyError> {
        self.check_len(origin.len())?;
        if origin.iter().all(Zero::is_zero) {
            return Ok(self.clone());
        }
        let n = self.num_vars;
        let max_deg = self.total_degree() as usize;
        let powers: Vec<Vec<Polynomial>> = origin
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let base = &Polynomial::var(n, i) + &Polynomial::constant(n, o.clone());
                let mut v = vec![Polynomial::from_int(n, 1)];
                for k in 1..=max_deg {
                    let next = &v[k - 1] * &base;
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Polynomial::zero(n);
        for (m, c) in &self.terms {
            let mut t = Polynomial::constant(n, c.clone());
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t = &t * &powers[i][e as usize];
                }
            }
            out = &out + &t;
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<(), PolyError> {
        if len != self.num_vars {
            return Err(PolyError::DimensionMismatch {
                expected: self.num_vars,
                got: len,
            });
        }
        Ok(())
    }

    /// Canonical text form: terms in descending graded-lex order.
    pub fn to_text(&self, vars: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut s = String::new();
        for (idx, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            if idx == 0 {
                if neg {
                    s.push('-');
                }
            } else {
                s.push_str(if neg { " - " } else { " + " });
            }
            let mag = c.abs();
            let mono = monomial_text(m, vars);
            if mono.is_empty() {
                s.push_str(&rational_text(&mag));
            } else {
                if !mag.is_one() {
                    s.push_str(&rational_text(&mag));
                    s.push('*');
                }
                s.push_str(&mono);
            }
        }
        s
    }

    /// Text form over the default variable names `x1..xn`.
    pub fn to_string_default(&self) -> String {
        self.to_text(&default_var_names(self.num_vars))
    }
}

pub fn default_var_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn rational_text(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn monomial_text(m: &Monomial, vars: &[String]) -> String {
    let mut s = String::new();
    for (i, &e) in m.0.iter().enumerate() {
        if e == 0 {
            continue;
        }
        if !s.is_empty() {
            s.push('*');
        }
        s.push_str(&vars[i]);
        if e > 1 {
            let _ = write!(s, "^{e}");
        }
    }
    s
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.num_vars, rhs.num_vars);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.num_vars, rhs.num_vars);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.num_vars, rhs.num_vars);
        let mut out = Polynomial::zero(self.num_vars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&-Rational::one())
    }
}

/// Parses `text` over the ordered variable list.
///
/// Grammar: terms `coef*var^exp*...` joined by `+`/`-`; coefficients are
/// integers or `p/q`; exponents are positive integers; whitespace is
/// insignificant.
pub fn parse_poly(text: &str, variables: &[String]) -> Result<Polynomial, PolyError> {
    if variables.len() > MAX_VARS {
        return Err(PolyError::TooManyVariables(variables.len()));
    }
    let mut parser = Parser {
        chars: text.char_indices().collect(),
        pos: 0,
        end: text.len(),
        vars: variables,
    };
    let p = parser.polynomial()?;
    let deg = p.total_degree();
    if deg > MAX_DEGREE {
        return Err(PolyError::DegreeTooHigh(deg));
    }
    Ok(p)
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    end: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.chars.get(self.pos).map(|c| c.0).unwrap_or(self.end)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, PolyError> {
        Err(PolyError::Syntax {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn polynomial(&mut self) -> Result<Polynomial, PolyError> {
        let n = self.vars.len();
        let mut acc = Polynomial::zero(n);
        self.skip_ws();
        let mut sign = 1i64;
        match self.peek() {
            Some('-') => {
                sign = -1;
                self.pos += 1;
            }
            Some('+') => self.pos += 1,
            None => return self.syntax("empty polynomial"),
            _ => {}
        }
        loop {
            self.skip_ws();
            let t = self.term()?;
            acc = if sign > 0 { &acc + &t } else { &acc - &t };
            self.skip_ws();
            match self.peek() {
                Some('+') => sign = 1,
                Some('-') => sign = -1,
                None => break,
                Some(c) => return self.syntax(format!("unexpected `{c}`")),
            }
            self.pos += 1;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, PolyError> {
        let mut t = self.factor()?;
        loop {
            self.skip_ws();
            if self.peek() == Some('*') {
                self.pos += 1;
                self.skip_ws();
                let f = self.factor()?;
                t = &t * &f;
            } else {
                return Ok(t);
            }
        }
    }

    fn factor(&mut self) -> Result<Polynomial, PolyError> {
        let n = self.vars.len();
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                let num = self.integer()?;
                self.skip_ws();
                if self.peek() == Some('/') {
                    self.pos += 1;
                    self.skip_ws();
                    let at = self.offset();
                    if !matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        return self.syntax("expected denominator");
                    }
                    let den = self.integer()?;
                    if den.is_zero() {
                        return Err(PolyError::ZeroDenominator { position: at });
                    }
                    Ok(Polynomial::constant(n, Rational::new(num, den)))
                } else {
                    Ok(Polynomial::constant(n, Rational::from_integer(num)))
                }
            }
            Some(c) if c.is_alphabetic() || c == '_' => {
                let at = self.offset();
                let mut name = String::new();
                while let Some(c) = self.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        name.push(c);
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let Some(index) = self.vars.iter().position(|v| *v == name) else {
                    return Err(PolyError::UnknownVariable { name, position: at });
                };
                self.skip_ws();
                let mut e = 1u32;
                if self.peek() == Some('^') {
                    self.pos += 1;
                    self.skip_ws();
                    if !matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        return self.syntax("expected exponent");
                    }
                    let at = self.offset();
                    let v = self.integer()?;
                    e = match v.to_u32() {
                        Some(e) if e > 0 => e,
                        Some(_) => {
                            return Err(PolyError::Syntax {
                                position: at,
                                message: "exponent must be positive".into(),
                            })
                        }
                        None => return Err(PolyError::DegreeTooHigh(u32::MAX)),
                    };
                    if e > MAX_DEGREE {
                        return Err(PolyError::DegreeTooHigh(e));
                    }
                }
                Ok(Polynomial::var(n, index).pow(e))
            }
            Some(c) => self.syntax(format!("unexpected `{c}`")),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn integer(&mut self) -> Result<BigInt, PolyError> {
        let mut digits = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        if digits.is_empty() {
            return self.syntax("expected integer");
        }
        Ok(digits.parse().expect("ascii digits"))
    }
}

/// Matrix of polynomials, row-major.
pub type PolyMatrix = Vec<Vec<Polynomial>>;

/// Entry `(i, j)` is `d f_i / d x_j`.
pub fn jacobian(system: &[Polynomial]) -> Result<PolyMatrix, PolyError> {
    let Some(first) = system.first() else {
        return Ok(Vec::new());
    };
    let n = first.num_vars();
    for p in system {
        if p.num_vars() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                got: p.num_vars(),
            });
        }
    }
    Ok(system
        .iter()
        .map(|p| (0..n).map(|j| p.derivative(j)).collect())
        .collect())
}

/// All `size x size` minors, ordered by (row tuple, column tuple) in
/// lexicographic order.
pub fn minors(m: &PolyMatrix, size: usize) -> Result<Vec<Polynomial>, PolyError> {
    let rows = m.len();
    let cols = m.first().map(Vec::len).unwrap_or(0);
    if size == 0 || size > rows.min(cols) {
        return Err(PolyError::MinorSize { size, rows, cols });
    }
    let row_sets = combinations(rows, size);
    let col_sets = combinations(cols, size);
    let mut out = Vec::with_capacity(row_sets.len() * col_sets.len());
    for r in &row_sets {
        for c in &col_sets {
            out.push(determinant(m, r, c));
        }
    }
    Ok(out)
}

/// Increasing index tuples of length `k` drawn from `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Laplace expansion along the first selected row.
fn determinant(m: &PolyMatrix, rows: &[usize], cols: &[usize]) -> Polynomial {
    let n = m[0][0].num_vars();
    if rows.len() == 1 {
        return m[rows[0]][cols[0]].clone();
    }
    let mut acc = Polynomial::zero(n);
    let r0 = rows[0];
    let rest = &rows[1..];
    for (k, &c) in cols.iter().enumerate() {
        let entry = &m[r0][c];
        if entry.is_zero() {
            continue;
        }
        let sub_cols: Vec<usize> = cols
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, &c)| c)
            .collect();
        let term = entry * &determinant(m, rest, &sub_cols);
        acc = if k % 2 == 0 { &acc + &term } else { &acc - &term };
    }
    acc
}

/// Exact rational value of a finite double.
pub fn rational_from_f64(x: f64) -> Rational {
    Rational::from_float(x).unwrap_or_else(Rational::zero)
}

/// Nearest rational with denominator `2^bits`.
pub fn rational_rounded(x: f64, bits: u32) -> Rational {
    let scale = (1u64 << bits) as f64;
    let n = (x * scale).round();
    Rational::new(BigInt::from(n as i64), BigInt::from(1u64 << bits))
}

/// Double-precision evaluation form of a polynomial.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<u32>)>,
    max_exp: Vec<u32>,
}

impl CompiledPoly {
    pub fn new(p: &Polynomial) -> Self {
        let n = p.num_vars();
        let mut max_exp = vec![0; n];
        let terms = p
            .terms()
            .map(|(m, c)| {
                for (k, &e) in m.0.iter().enumerate() {
                    max_exp[k] = max_exp[k].max(e);
                }
                (c.to_f64().unwrap_or(f64::NAN), m.0.clone())
            })
            .collect();
        CompiledPoly { terms, max_exp }
    }

    pub fn num_vars(&self) -> usize {
        self.max_exp.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let table = power_table(x, &self.max_exp);
        self.eval_with(&table)
    }

    fn eval_with(&self, table: &[Vec<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| {
                e.iter()
                    .enumerate()
                    .fold(*c, |acc, (k, &ek)| acc * table[k][ek as usize])
            })
            .sum()
    }
}

fn power_table(x: &[f64], max_exp: &[u32]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(max_exp)
        .map(|(&xi, &m)| {
            let mut v = Vec::with_capacity(m as usize + 1);
            let mut acc = 1.0;
            v.push(acc);
            for _ in 0..m {
                acc *= xi;
                v.push(acc);
            }
            v
        })
        .collect()
}

/// A polynomial system with its exact Jacobian, compiled for evaluation.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    num_vars: usize,
    polys: Vec<CompiledPoly>,
    jac: Vec<Vec<CompiledPoly>>,
    max_exp: Vec<u32>,
}

impl CompiledSystem {
    pub fn new(num_vars: usize, system: &[Polynomial]) -> Self {
        let polys: Vec<CompiledPoly> = system.iter().map(CompiledPoly::new).collect();
        let jac = system
            .iter()
            .map(|p| (0..num_vars).map(|j| CompiledPoly::new(&p.derivative(j))).collect())
            .collect();
        let mut max_exp = vec![0; num_vars];
        for p in &polys {
            for (k, &e) in p.max_exp.iter().enumerate() {
                max_exp[k] = max_exp[k].max(e);
            }
        }
        CompiledSystem {
            num_vars,
            polys,
            jac,
            max_exp,
        }
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let t = power_table(x, &self.max_exp);
        self.polys.iter().map(|p| p.eval_with(&t)).collect()
    }

    /// Row-major Jacobian values.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let t = power_table(x, &self.max_exp);
        self.jac
            .iter()
            .map(|row| row.iter().map(|p| p.eval_with(&t)).collect())
            .collect()
    }
}
