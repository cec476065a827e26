//! Canonical DSL printer. `parse_ruleset(&rs.to_string()) == Ok(rs)`.

use core::fmt;

use super::{Bound, Rule, Ruleset, StarPolicy};

fn write_str_lit(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            c => fmt::Write::write_char(f, c)?,
        }
    }
    f.write_str("\"")
}

fn write_bound(f: &mut fmt::Formatter<'_>, key: &str, b: &Bound, unit: Option<&str>) -> fmt::Result {
    write!(f, "  {key}: {b}")?;
    if let Some(u) = unit {
        write!(f, " {u}")?;
    }
    f.write_str("\n")
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rule {} {{", self.metric_id)?;
        writeln!(f, "  direction: {}", self.direction)?;
        write_bound(f, "best_practice", &self.best_practice, self.unit.as_deref())?;
        if let Some(hl) = &self.hard_limit {
            write_bound(f, "hard_limit", hl, self.unit.as_deref())?;
        }
        if self.stars != StarPolicy::default() {
            writeln!(f, "  stars: angel<={} one<={} two<={}", self.stars.angel, self.stars.one, self.stars.two)?;
        }
        f.write_str("  rationale: ")?;
        write_str_lit(f, &self.rationale)?;
        f.write_str("\n}\n")
    }
}

impl fmt::Display for Ruleset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ruleset {} version ", self.name)?;
        write_str_lit(f, &self.version)?;
        f.write_str("\n")?;
        for rule in &self.rules {
            f.write_str("\n")?;
            rule.fmt(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{default_ruleset, parse_ruleset, Direction};
    use super::*;
    use alloc::string::{String, ToString};
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn default_ruleset_round_trips_byte_equal() {
        let rs = default_ruleset();
        let printed = rs.to_string();
        let reparsed = parse_ruleset(&printed).unwrap();
        assert_eq!(reparsed, rs);
        assert_eq!(reparsed.to_string(), printed);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![(-1000i32..1000).prop_map(f64::from), -1e6f64..1e6, Just(0.1), Just(1e-7)]
    }

    fn rule() -> impl Strategy<Value = Rule> {
        (
            "[a-z][a-z0-9_]{0,12}",
            0..3u8,
            finite(),
            0.0f64..500.0,
            0.0f64..500.0,
            proptest::option::of("[a-zA-Z%_]{1,5}"),
            any::<bool>(),
            proptest::option::of((0.01f64..0.3, 0.31f64..0.6, 0.61f64..0.99)),
            "[ -~]{0,40}|.{0,10}",
        )
            .prop_map(|(metric_id, dir, a, w1, w2, unit, with_hl, stars, rationale)| {
                let (direction, bp, hl) = match dir {
                    0 => (Direction::LowerIsBetter, Bound::AtMost(a), Bound::AtMost(a + w1)),
                    1 => (Direction::HigherIsBetter, Bound::AtLeast(a), Bound::AtLeast(a - w1)),
                    _ => (Direction::Range, Bound::Between(a, a + w1), Bound::Between(a - w2, a + w1 + w2)),
                };
                Rule {
                    metric_id,
                    direction,
                    best_practice: bp,
                    hard_limit: with_hl.then_some(hl),
                    unit,
                    stars: stars.map(|(angel, one, two)| StarPolicy { angel, one, two }).unwrap_or_default(),
                    rationale: rationale.replace('\r', ""),
                }
            })
    }

    fn ruleset() -> impl Strategy<Value = Ruleset> {
        ("[a-z][a-z0-9_-]{0,10}", "[0-9a-z.\"\\\\ -]{1,8}", proptest::collection::vec(rule(), 0..6)).prop_map(
            |(name, version, rules)| {
                let mut seen = Vec::<String>::new();
                let rules = rules
                    .into_iter()
                    .filter(|r| {
                        let fresh = !seen.contains(&r.metric_id);
                        seen.push(r.metric_id.clone());
                        fresh
                    })
                    .collect();
                Ruleset { name, version, rules }
            },
        )
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(rs in ruleset()) {
            prop_assume!(!rs.version.trim().is_empty());
            let printed = rs.to_string();
            let parsed = parse_ruleset(&printed).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&parsed, &rs);
            prop_assert_eq!(parsed.to_string(), printed);
        }

        #[test]
        fn parser_is_total(text in "(?s).{0,300}") {
            let _ = parse_ruleset(&text);
        }

        #[test]
        fn parser_is_total_on_near_miss_input(lines in proptest::collection::vec(
            prop_oneof![
                Just("ruleset a version \"1\"".to_string()),
                Just("rule caffeine_mg {".to_string()),
                Just("}".to_string()),
                Just("  direction: range".to_string()),
                Just("  best_practice: between 1 2".to_string()),
                Just("  best_practice: <= ".to_string()),
                Just("  stars: angel<=0.1 one<=".to_string()),
                Just("  rationale: \"x\\".to_string()),
                "[ -~]{0,30}",
            ], 0..12)) {
            let _ = parse_ruleset(&lines.join("\n"));
        }
    }
}
