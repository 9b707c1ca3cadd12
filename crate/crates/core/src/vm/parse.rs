//! Tokenizer for the G-code subset used by the dispenser.

use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CommandKind {
    G0,
    G1,
    G92,
    M92,
    M165,
    M302,
    /// Full-line comment or blank line.
    Comment,
    /// Any other code, normalized to upper case (`"M140"`, `"G28"`, `"T0"`).
    Unsupported(String),
}

/// One parsed line.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub kind: CommandKind,
    /// Parameter words in source order, letters upper-cased and unique.
    pub words: Vec<(char, f64)>,
    /// Trimmed source text.
    pub raw: String,
}

impl Command {
    pub fn word(&self, letter: char) -> Option<f64> {
        self.words
            .iter()
            .find(|(l, _)| *l == letter)
            .map(|&(_, v)| v)
    }

    pub fn has(&self, letter: char) -> bool {
        self.word(letter).is_some()
    }

    pub fn is_motion(&self) -> bool {
        matches!(self.kind, CommandKind::G0 | CommandKind::G1)
    }

    fn code(&self) -> Option<&str> {
        Some(match &self.kind {
            CommandKind::G0 => "G0",
            CommandKind::G1 => "G1",
            CommandKind::G92 => "G92",
            CommandKind::M92 => "M92",
            CommandKind::M165 => "M165",
            CommandKind::M302 => "M302",
            CommandKind::Comment | CommandKind::Unsupported(_) => return None,
        })
    }
}

/// Canonical text: code, then words as `<letter><value>` separated by single
/// spaces. Comments and unsupported lines print their source text.
impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(code) = self.code() else {
            return f.write_str(&self.raw);
        };
        f.write_str(code)?;
        for (letter, value) in &self.words {
            write!(f, " {letter}{}", format_decimal(*value))?;
        }
        Ok(())
    }
}

/// Up to four decimals, trailing zeros and a bare trailing point dropped,
/// no negative zero.
pub fn format_decimal(value: f64) -> String {
    let mut s = format!("{value:.4}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Parse a single line. `line_no` is 1-based and only used in errors.
pub fn parse_line(text: &str, line_no: usize) -> Result<Command> {
    let raw = text.trim();
    let body = match raw.find(';') {
        Some(i) => &raw[..i],
        None => raw,
    };
    // Column offsets are reported against the untrimmed input.
    let lead = text.len() - text.trim_start().len();

    if body.trim().is_empty() {
        return Ok(Command {
            kind: CommandKind::Comment,
            words: Vec::new(),
            raw: raw.to_string(),
        });
    }

    let err = |col: usize, message: String| Error::Parse {
        line: line_no,
        column: lead + col + 1,
        message,
    };

    let bytes = body.as_bytes();
    let mut tokens: Vec<(char, f64, &str)> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_ascii_alphabetic() {
            return Err(err(i, format!("expected a word letter, found '{}'", c as char)));
        }
        let letter = c.to_ascii_uppercase() as char;
        i += 1;
        let start = i;
        if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
            i += 1;
        }
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        let num = &body[start..i];
        let value = parse_number(num).ok_or_else(|| {
            let shown = if num.is_empty() {
                body[start..].split_whitespace().next().unwrap_or("").to_string()
            } else {
                num.to_string()
            };
            err(start, format!("malformed number '{shown}' after {letter}"))
        })?;
        if i < bytes.len() && !bytes[i].is_ascii_whitespace() && !bytes[i].is_ascii_alphabetic() {
            return Err(err(
                i,
                format!("malformed number '{}{}' after {letter}", num, bytes[i] as char),
            ));
        }
        tokens.push((letter, value, num));
    }

    let (code_letter, code_value, code_text) = tokens[0];
    let kind = match (code_letter, code_value) {
        ('G', v) if v == 0.0 => CommandKind::G0,
        ('G', v) if v == 1.0 => CommandKind::G1,
        ('G', v) if v == 92.0 => CommandKind::G92,
        ('M', v) if v == 92.0 => CommandKind::M92,
        ('M', v) if v == 165.0 => CommandKind::M165,
        ('M', v) if v == 302.0 => CommandKind::M302,
        _ => CommandKind::Unsupported(format!("{code_letter}{}", normalize_code(code_text))),
    };

    let mut words: Vec<(char, f64)> = Vec::with_capacity(tokens.len() - 1);
    for &(letter, value, _) in &tokens[1..] {
        if words.iter().any(|(l, _)| *l == letter) {
            return Err(Error::Parse {
                line: line_no,
                column: 0,
                message: format!("word {letter} repeated"),
            });
        }
        words.push((letter, value));
    }

    Ok(Command {
        kind,
        words,
        raw: raw.to_string(),
    })
}

/// Parse a whole program; line numbers in errors are 1-based.
pub fn parse_program(text: &str) -> Result<Vec<Command>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_line(line, i + 1))
        .collect()
}

fn parse_number(s: &str) -> Option<f64> {
    let digits = s.trim_start_matches(['-', '+']);
    if digits.is_empty() || digits == "." || digits.matches('.').count() > 1 {
        return None;
    }
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

/// `"01"` -> `"1"`, `"29.10"` -> `"29.1"`.
fn normalize_code(text: &str) -> String {
    let v: f64 = text.parse().unwrap_or(0.0);
    format_decimal(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g1_words() {
        let c = parse_line("G1 F3000 Y200 E20", 1).unwrap();
        assert_eq!(c.kind, CommandKind::G1);
        assert_eq!(c.words, vec![('F', 3000.0), ('Y', 200.0), ('E', 20.0)]);
    }

    #[test]
    fn comment_line() {
        let c = parse_line("; priming", 1).unwrap();
        assert_eq!(c.kind, CommandKind::Comment);
        assert_eq!(c.to_string(), "; priming");
        assert_eq!(parse_line("   ", 1).unwrap().kind, CommandKind::Comment);
    }

    #[test]
    fn m165_channels() {
        let c = parse_line("M165 A75 B25", 1).unwrap();
        assert_eq!(c.kind, CommandKind::M165);
        assert_eq!(c.word('A'), Some(75.0));
        assert_eq!(c.word('B'), Some(25.0));
    }

    #[test]
    fn case_and_spacing_insensitive() {
        let c = parse_line("  g1f1500y-2.5e.5 ; trailing", 1).unwrap();
        assert_eq!(c.kind, CommandKind::G1);
        assert_eq!(c.words, vec![('F', 1500.0), ('Y', -2.5), ('E', 0.5)]);
        assert_eq!(parse_line("G01 Y1", 1).unwrap().kind, CommandKind::G1);
    }

    #[test]
    fn unsupported_keeps_code_and_text() {
        let c = parse_line("M140 S60", 3).unwrap();
        assert_eq!(c.kind, CommandKind::Unsupported("M140".into()));
        assert_eq!(c.to_string(), "M140 S60");
        let c = parse_line("G29.1", 3).unwrap();
        assert_eq!(c.kind, CommandKind::Unsupported("G29.1".into()));
    }

    #[test]
    fn malformed_number_reports_column() {
        match parse_line("G1 Y2.0.1", 7) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 7);
                assert_eq!(column, 5);
            }
            other => panic!("{other:?}"),
        }
        match parse_line("  G1 Yabc", 1) {
            Err(Error::Parse { column, message, .. }) => {
                assert_eq!(column, 7);
                assert!(message.contains("abc"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_line("G1 E-", 1).is_err());
        assert!(parse_line("G1 Y1x", 1).is_err());
        assert!(parse_line("G1 Y1 Y2", 1).is_err());
        assert!(parse_line("1 G1", 1).is_err());
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(3000.0), "3000");
        assert_eq!(format_decimal(2.4223344), "2.4223");
        assert_eq!(format_decimal(0.1), "0.1");
        assert_eq!(format_decimal(-0.00001), "0");
        assert_eq!(format_decimal(25.33333333), "25.3333");
        assert_eq!(format_decimal(-40.5), "-40.5");
    }

    #[test]
    fn canonical_lines_reserialize() {
        for line in [
            "M302 P1",
            "M92 E2.4223",
            "M165 A80 B20",
            "G92 E0",
            "G0 Y-40",
            "G1 F3000 Y200 E20",
            "; pass 0",
        ] {
            assert_eq!(parse_line(line, 1).unwrap().to_string(), line);
        }
    }
}
