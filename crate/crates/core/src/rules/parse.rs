//! Line-oriented parser for the rule DSL:
//!
//! ```text
//! ruleset <ident> version "<semver>"
//! rule <metric_id> {
//!   direction: lower_is_better | higher_is_better | range
//!   best_practice: (<=|>=|between) NUM [NUM] [unit]
//!   hard_limit:    (<=|>=|between) NUM [NUM] [unit]     # optional
//!   stars: angel<=NUM one<=NUM two<=NUM                 # optional
//!   rationale: "<text>"
//! }
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Bound, Direction, Rule, Ruleset, StarPolicy};

/// First error found, with 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    Str(String),
    Le,
    Ge,
    Colon,
    Open,
    Close,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::Str(_) => f.write_str("string"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Open => f.write_str("`{`"),
            Tok::Close => f.write_str("`}`"),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '%')
}

/// Tokens of one line with their 1-based columns; comments dropped.
fn lex(line_no: usize, line: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let err = |col: usize, message: String| ParseError { line: line_no, column: col + 1, message };
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            '#' => break,
            c if c.is_whitespace() => i += 1,
            ':' => {
                toks.push((start + 1, Tok::Colon));
                i += 1;
            }
            '{' => {
                toks.push((start + 1, Tok::Open));
                i += 1;
            }
            '}' => {
                toks.push((start + 1, Tok::Close));
                i += 1;
            }
            '<' | '>' => {
                if chars.get(i + 1) != Some(&'=') {
                    return Err(err(i, format!("expected `{c}=`")));
                }
                toks.push((start + 1, if c == '<' { Tok::Le } else { Tok::Ge }));
                i += 2;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(start, "unterminated string".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                Some('n') => s.push('\n'),
                                _ => return Err(err(i, "invalid escape".into())),
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                toks.push((start + 1, Tok::Str(s)));
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+') && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.'))
                || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) =>
            {
                i += 1;
                while i < chars.len() {
                    let ch = chars[i];
                    let exp_sign = (ch == '-' || ch == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n: f64 = text.parse().map_err(|_| err(start, format!("invalid number `{text}`")))?;
                if !n.is_finite() {
                    return Err(err(start, format!("number `{text}` is not finite")));
                }
                toks.push((start + 1, Tok::Num(n)));
            }
            c if is_word_char(c) => {
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                toks.push((start + 1, Tok::Word(chars[start..i].iter().collect())));
            }
            other => return Err(err(i, format!("unexpected character `{other}`"))),
        }
    }
    Ok(toks)
}

struct Line {
    no: usize,
    len: usize,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Line {
    fn err(&self, message: impl Into<String>) -> ParseError {
        let column = self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.len + 1);
        ParseError { line: self.no, column, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<Tok, ParseError> {
        match self.toks.get(self.pos) {
            Some((_, t)) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    fn back(&mut self) {
        self.pos -= 1;
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.next(what)? {
            Tok::Word(w) => Ok(w),
            other => {
                self.back();
                Err(self.err(format!("expected {what}, found {other}")))
            }
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.next(&format!("`{kw}`"))? {
            Tok::Word(w) if w == kw => Ok(()),
            other => {
                self.back();
                Err(self.err(format!("expected `{kw}`, found {other}")))
            }
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        let got = self.next(&format!("{tok}"))?;
        if got == tok {
            Ok(())
        } else {
            self.back();
            Err(self.err(format!("expected {tok}, found {got}")))
        }
    }

    fn num(&mut self) -> Result<f64, ParseError> {
        match self.next("number")? {
            Tok::Num(n) => Ok(n),
            other => {
                self.back();
                Err(self.err(format!("expected number, found {other}")))
            }
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.next("string")? {
            Tok::Str(s) => Ok(s),
            other => {
                self.back();
                Err(self.err(format!("expected string, found {other}")))
            }
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some((_, t)) => Err(self.err(format!("unexpected {t}"))),
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Bound and optional trailing unit.
fn bound(line: &mut Line) -> Result<(Bound, Option<String>), ParseError> {
    let b = match line.next("`<=`, `>=` or `between`")? {
        Tok::Le => Bound::AtMost(line.num()?),
        Tok::Ge => Bound::AtLeast(line.num()?),
        Tok::Word(w) if w == "between" => {
            let lo = line.num()?;
            let hi = line.num()?;
            if lo > hi {
                line.back();
                return Err(line.err("inverted range: low bound exceeds high bound"));
            }
            Bound::Between(lo, hi)
        }
        other => {
            line.back();
            return Err(line.err(format!("expected `<=`, `>=` or `between`, found {other}")));
        }
    };
    let unit = if line.pos < line.toks.len() { Some(line.word("unit")?) } else { None };
    line.end()?;
    Ok((b, unit))
}

fn stars(line: &mut Line) -> Result<StarPolicy, ParseError> {
    let mut edge = |name: &str| -> Result<f64, ParseError> {
        line.keyword(name)?;
        line.expect(Tok::Le)?;
        line.num()
    };
    let policy = StarPolicy { angel: edge("angel")?, one: edge("one")?, two: edge("two")? };
    line.end()?;
    if !policy.is_valid() {
        return Err(ParseError {
            line: line.no,
            column: 1,
            message: "star band edges must be strictly increasing in (0,1)".into(),
        });
    }
    Ok(policy)
}

#[derive(Default)]
struct RuleDraft {
    metric_id: String,
    line: usize,
    direction: Option<Direction>,
    best_practice: Option<(Bound, Option<String>)>,
    hard_limit: Option<(Bound, Option<String>)>,
    stars: Option<StarPolicy>,
    rationale: Option<String>,
}

impl RuleDraft {
    fn finish(self, close_line: usize) -> Result<Rule, ParseError> {
        let missing = |key: &str| ParseError {
            line: close_line,
            column: 1,
            message: format!("rule `{}` is missing `{key}`", self.metric_id),
        };
        let direction = self.direction.ok_or_else(|| missing("direction"))?;
        let (best_practice, bp_unit) = self.best_practice.ok_or_else(|| missing("best_practice"))?;
        let rationale = self.rationale.ok_or_else(|| missing("rationale"))?;
        let (hard_limit, hl_unit) = match self.hard_limit {
            Some((b, u)) => (Some(b), u),
            None => (None, None),
        };
        let unit = match (bp_unit, hl_unit) {
            (Some(a), Some(b)) if a != b => {
                return Err(ParseError {
                    line: self.line,
                    column: 1,
                    message: format!("rule `{}` mixes units `{a}` and `{b}`", self.metric_id),
                })
            }
            (a, b) => a.or(b),
        };
        let rule = Rule {
            metric_id: self.metric_id,
            direction,
            best_practice,
            hard_limit,
            unit,
            stars: self.stars.unwrap_or_default(),
            rationale,
        };
        rule.check().map_err(|message| ParseError { line: self.line, column: 1, message })?;
        Ok(rule)
    }
}

/// Parses a ruleset. Total: any input yields a ruleset or the first error.
pub fn parse_ruleset(text: &str) -> Result<Ruleset, ParseError> {
    let mut header: Option<(String, String)> = None;
    let mut rules: Vec<Rule> = Vec::new();
    let mut draft: Option<RuleDraft> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        last_line = no;
        let toks = lex(no, raw)?;
        if toks.is_empty() {
            continue;
        }
        let mut line = Line { no, len: raw.chars().count(), toks, pos: 0 };

        if header.is_none() {
            line.keyword("ruleset")?;
            let name = line.word("ruleset name")?;
            if !is_ident(&name) {
                line.back();
                return Err(line.err(format!("invalid ruleset name `{name}`")));
            }
            line.keyword("version")?;
            let version = line.string()?;
            if version.trim().is_empty() {
                line.back();
                return Err(line.err("version must be non-empty"));
            }
            line.end()?;
            header = Some((name, version));
            continue;
        }

        match draft.as_mut() {
            None => {
                line.keyword("rule")?;
                let metric_id = line.word("metric id")?;
                if !is_ident(&metric_id) {
                    line.back();
                    return Err(line.err(format!("invalid metric id `{metric_id}`")));
                }
                if rules.iter().any(|r| r.metric_id == metric_id) {
                    line.back();
                    return Err(line.err(format!("duplicate rule `{metric_id}`")));
                }
                line.expect(Tok::Open)?;
                line.end()?;
                draft = Some(RuleDraft { metric_id, line: no, ..Default::default() });
            }
            Some(d) => {
                if line.toks[0].1 == Tok::Close {
                    line.pos = 1;
                    line.end()?;
                    rules.push(draft.take().expect("inside a rule").finish(no)?);
                    continue;
                }
                let key = line.word("a rule key")?;
                line.expect(Tok::Colon)?;
                let dup = || ParseError { line: no, column: 1, message: format!("duplicate key `{key}`") };
                match key.as_str() {
                    "direction" => {
                        let w = line.word("direction")?;
                        let dir = match w.as_str() {
                            "lower_is_better" => Direction::LowerIsBetter,
                            "higher_is_better" => Direction::HigherIsBetter,
                            "range" => Direction::Range,
                            _ => {
                                line.back();
                                return Err(line.err(format!("unknown direction `{w}`")));
                            }
                        };
                        line.end()?;
                        if d.direction.replace(dir).is_some() {
                            return Err(dup());
                        }
                    }
                    "best_practice" => {
                        let b = bound(&mut line)?;
                        if d.best_practice.replace(b).is_some() {
                            return Err(dup());
                        }
                    }
                    "hard_limit" => {
                        let b = bound(&mut line)?;
                        if d.hard_limit.replace(b).is_some() {
                            return Err(dup());
                        }
                    }
                    "stars" => {
                        let s = stars(&mut line)?;
                        if d.stars.replace(s).is_some() {
                            return Err(dup());
                        }
                    }
                    "rationale" => {
                        let s = line.string()?;
                        line.end()?;
                        if d.rationale.replace(s).is_some() {
                            return Err(dup());
                        }
                    }
                    _ => {
                        return Err(ParseError { line: no, column: 1, message: format!("unknown key `{key}`") });
                    }
                }
            }
        }
    }

    if let Some(d) = draft {
        return Err(ParseError {
            line: last_line.max(1),
            column: 1,
            message: format!("rule `{}` is not closed", d.metric_id),
        });
    }
    let (name, version) = header.ok_or(ParseError {
        line: 1,
        column: 1,
        message: "missing `ruleset <name> version \"...\"` header".into(),
    })?;
    Ok(Ruleset { name, version, rules })
}
