//! Escaping for the tab-separated text formats.

/// Escapes backslash, tab, CR and LF so a field fits on one TSV line.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('-') => out.push('-'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Optional field: `-` marks absence, a literal dash is written as `\-`.
pub fn write_optional(v: Option<&str>) -> String {
    match v {
        None => "-".to_string(),
        Some("-") => "\\-".to_string(),
        Some(s) => escape_field(s),
    }
}

pub fn read_optional(s: &str) -> Result<Option<String>, String> {
    if s == "-" {
        Ok(None)
    } else {
        unescape_field(s).map(Some)
    }
}
