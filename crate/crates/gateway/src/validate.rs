//! Server-side input validation applied to every request field.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    /// `[A-Za-z0-9._@-]+`
    Identifier,
    Digits,
    LowerHex,
    Base64,
    /// RFC-3339 timestamp characters; the value is parsed separately.
    Timestamp,
    /// Printable text with no further shape.
    Text,
    /// A `PROMETHEUS ... V1` envelope; the only place line breaks are allowed.
    Envelope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub max_len: usize,
    pub pattern: Pattern,
}

impl FieldSpec {
    pub const fn new(max_len: usize, pattern: Pattern) -> Self {
        FieldSpec { max_len, pattern }
    }
}

pub const IDENTIFIER: FieldSpec = FieldSpec::new(64, Pattern::Identifier);
pub const TOKEN_CODE: FieldSpec = FieldSpec::new(9, Pattern::Digits);
pub const SESSION_HEADER: FieldSpec = FieldSpec::new(64, Pattern::LowerHex);
pub const NONCE_HEADER: FieldSpec = FieldSpec::new(32, Pattern::LowerHex);
pub const DIGEST_HEADER: FieldSpec = FieldSpec::new(64, Pattern::LowerHex);
pub const TIMESTAMP_HEADER: FieldSpec = FieldSpec::new(40, Pattern::Timestamp);
pub const CERTIFICATE: FieldSpec = FieldSpec::new(4096, Pattern::Envelope);
pub const PROOF: FieldSpec = FieldSpec::new(1024, Pattern::Base64);
pub const PASSWORD: FieldSpec = FieldSpec::new(256, Pattern::Text);
pub const FREE_TEXT: FieldSpec = FieldSpec::new(256, Pattern::Text);
pub const SERIAL: FieldSpec = FieldSpec::new(20, Pattern::Digits);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    TooLong,
    NullByte,
    ControlCharacter,
    Markup,
    Injection,
    PatternMismatch,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::TooLong => "TooLong",
            RejectReason::NullByte => "NullByte",
            RejectReason::ControlCharacter => "ControlCharacter",
            RejectReason::Markup => "Markup",
            RejectReason::Injection => "Injection",
            RejectReason::PatternMismatch => "PatternMismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub field: String,
    pub reason: RejectReason,
}

/// Checks, in order: length, NUL, other control characters, markup
/// (`<`, `>`), injection metacharacters (`'`, `"`, `;`, `--`), then the
/// field's pattern.
pub fn validate_input(field_name: &str, value: &str, spec: FieldSpec) -> Result<(), Rejected> {
    let reject = |reason| Err(Rejected { field: field_name.to_string(), reason });
    if value.len() > spec.max_len {
        return reject(RejectReason::TooLong);
    }
    if value.contains('\0') {
        return reject(RejectReason::NullByte);
    }
    let line_breaks_ok = spec.pattern == Pattern::Envelope;
    if value.chars().any(|c| c.is_control() && !(line_breaks_ok && (c == '\n' || c == '\r'))) {
        return reject(RejectReason::ControlCharacter);
    }
    if value.contains(['<', '>']) {
        return reject(RejectReason::Markup);
    }
    if value.contains(['\'', '"', ';']) || value.contains("--") {
        return reject(RejectReason::Injection);
    }
    if !matches_pattern(value, spec.pattern) {
        return reject(RejectReason::PatternMismatch);
    }
    Ok(())
}

fn matches_pattern(value: &str, pattern: Pattern) -> bool {
    let all = |f: fn(char) -> bool| !value.is_empty() && value.chars().all(f);
    match pattern {
        Pattern::Identifier => all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '@' | '-')),
        Pattern::Digits => all(|c| c.is_ascii_digit()),
        Pattern::LowerHex => all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)),
        Pattern::Base64 => all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '=')),
        Pattern::Timestamp => all(|c| c.is_ascii_digit() || matches!(c, '-' | ':' | 'T' | 'Z' | '+' | '.')),
        Pattern::Text => !value.is_empty(),
        Pattern::Envelope => {
            let mut lines = value.lines();
            lines.next().is_some_and(|h| h.starts_with("PROMETHEUS ") && h.trim_end().ends_with(" V1"))
                && lines.all(|l| l.trim().chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '=')))
        }
    }
}
