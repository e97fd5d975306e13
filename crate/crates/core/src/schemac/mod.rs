//! Compiler for `.rootio` persistent-class descriptions.
//!
//! ```text
//! set class_name Pers01CalorHit      scalar key
//! set member                         block key, body runs to a `..` line
//!   @float@ EdepAbs;
//! ..
//! ```

mod expand;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

pub use self::expand::{expand, macro_refs, MacroTable, CLASS_ROOT_SUFFIX, MAKE_TRANSIENT, PREDEFINED_FLOAT};
use self::expand::is_macro_name;

pub const SCALAR_KEYS: [&str; 6] =
    ["class_name", "collection_class", "collection_base_class", "sdet_name", "array_io_base", "catalog"];
pub const BLOCK_KEYS: [&str; 5] = ["global_declaration", "add_header_src", "member", "constructor", "method"];
const REQUIRED_SCALARS: [&str; 2] = ["class_name", "collection_class"];
const BLOCK_END: &str = "..";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    /// 1-based source line; 0 when not tied to a line.
    pub line: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn error(line: usize, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, line, message: message.into() }
    }

    pub fn warning(line: usize, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, line, message: message.into() }
    }

    /// `FILE:LINE: severity: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}: {}: {}", self.line, self.severity, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("line {line}: block `{key}` is not closed by `..`")]
    UnterminatedBlock { key: String, line: usize },
    #[error("line {line}: {reason}")]
    MalformedDirective { line: usize, reason: String },
    #[error("schema has {} error(s)", .0.iter().filter(|d| d.severity == Severity::Error).count())]
    ValidationFailed(Vec<Diagnostic>),
    #[error("template not found: {}", .0.display())]
    TemplateNotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
enum Entry {
    Scalar { value: String, line: usize },
    Block { lines: Vec<(usize, String)>, line: usize },
}

/// Parsed `.rootio` file. Keys keep first-appearance order; equality ignores
/// line numbers.
#[derive(Debug, Clone, Default)]
pub struct SchemaDef {
    pub source_name: String,
    entries: IndexMap<String, Entry>,
}

impl PartialEq for SchemaDef {
    fn eq(&self, other: &Self) -> bool {
        self.source_name == other.source_name
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && match (a, b) {
                        (Entry::Scalar { value: x, .. }, Entry::Scalar { value: y, .. }) => x == y,
                        (Entry::Block { lines: x, .. }, Entry::Block { lines: y, .. }) => {
                            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.1 == q.1)
                        }
                        _ => false,
                    }
            })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl SchemaDef {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn scalar(&self, key: &str) -> Option<&str> {
        match self.entries.get(key)? {
            Entry::Scalar { value, .. } => Some(value),
            Entry::Block { .. } => None,
        }
    }

    pub fn scalars(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().filter_map(|(k, e)| match e {
            Entry::Scalar { value, .. } => Some((k.as_str(), value.as_str())),
            Entry::Block { .. } => None,
        })
    }

    pub fn block(&self, key: &str) -> Option<Vec<&str>> {
        match self.entries.get(key)? {
            Entry::Block { lines, .. } => Some(lines.iter().map(|(_, l)| l.as_str()).collect()),
            Entry::Scalar { .. } => None,
        }
    }

    /// Block lines with their source line numbers.
    pub fn block_lines(&self, key: &str) -> Option<&[(usize, String)]> {
        match self.entries.get(key)? {
            Entry::Block { lines, .. } => Some(lines),
            Entry::Scalar { .. } => None,
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, &[(usize, String)])> {
        self.entries.iter().filter_map(|(k, e)| match e {
            Entry::Block { lines, .. } => Some((k.as_str(), lines.as_slice())),
            Entry::Scalar { .. } => None,
        })
    }

    /// Line where `key` was first set.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| match e {
            Entry::Scalar { line, .. } | Entry::Block { line, .. } => *line,
        })
    }

    /// Render back to `.rootio` text.
    pub fn print(&self) -> String {
        let mut out = String::new();
        for (key, e) in &self.entries {
            match e {
                Entry::Scalar { value, .. } => {
                    out.push_str(&format!("set {key} {value}\n"));
                }
                Entry::Block { lines, .. } => {
                    out.push_str(&format!("set {key}\n"));
                    for (_, l) in lines {
                        out.push_str(l);
                        out.push('\n');
                    }
                    out.push_str(BLOCK_END);
                    out.push('\n');
                }
            }
        }
        out
    }
}

pub fn parse(text: &str, source_name: &str) -> Result<SchemaDef, SchemaError> {
    let mut schema = SchemaDef { source_name: source_name.to_owned(), entries: IndexMap::new() };
    let mut open: Option<(String, usize)> = None;
    let malformed = |line: usize, reason: String| SchemaError::MalformedDirective { line, reason };
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some((key, _)) = &open {
            if line.trim() == BLOCK_END {
                open = None;
            } else if let Some(Entry::Block { lines, .. }) = schema.entries.get_mut(key) {
                lines.push((n, line.to_owned()));
            }
            continue;
        }
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t == BLOCK_END {
            return Err(malformed(n, "`..` outside a block".into()));
        }
        let Some(body) = t.strip_prefix("set").filter(|b| b.is_empty() || b.starts_with(char::is_whitespace)) else {
            return Err(malformed(n, format!("expected `set <key> ...`, found {t:?}")));
        };
        let body = body.trim_start();
        let (key, rest) = match body.find(char::is_whitespace) {
            Some(at) => (&body[..at], body[at..].trim()),
            None => (body, ""),
        };
        if key.is_empty() {
            return Err(malformed(n, "`set` without a key".into()));
        }
        if !is_identifier(key) {
            return Err(malformed(n, format!("invalid key {key:?}")));
        }
        let existing = schema.entries.get_mut(key);
        if rest.is_empty() {
            match existing {
                Some(Entry::Scalar { .. }) => {
                    return Err(malformed(n, format!("key `{key}` already set as a scalar")));
                }
                Some(Entry::Block { .. }) => {}
                None => {
                    schema.entries.insert(key.to_owned(), Entry::Block { lines: Vec::new(), line: n });
                }
            }
            open = Some((key.to_owned(), n));
        } else {
            match existing {
                Some(Entry::Block { .. }) => {
                    return Err(malformed(n, format!("key `{key}` already set as a block")));
                }
                Some(Entry::Scalar { value, .. }) => *value = rest.to_owned(),
                None => {
                    schema.entries.insert(key.to_owned(), Entry::Scalar { value: rest.to_owned(), line: n });
                }
            }
        }
    }
    if let Some((key, line)) = open {
        return Err(SchemaError::UnterminatedBlock { key, line });
    }
    Ok(schema)
}

/// A data member declared in the `member` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberField {
    pub name: String,
    /// Type as written, e.g. `@float@`.
    pub declared_type: String,
    /// Type after macro expansion.
    pub resolved_type: String,
    pub line: usize,
}

fn member_fields(schema: &SchemaDef, table: &MacroTable, diags: &mut Vec<Diagnostic>) -> Vec<MemberField> {
    let mut fields = Vec::new();
    for (line, text) in schema.block_lines("member").unwrap_or_default() {
        let t = text.trim();
        if t.is_empty() || t.starts_with("//") {
            continue;
        }
        let decl = t.strip_suffix(';').unwrap_or(t).trim_end();
        let parts: Vec<&str> = decl.split_whitespace().collect();
        match parts.split_last() {
            Some((name, ty)) if !ty.is_empty() && is_identifier(name) => {
                let declared_type = ty.join(" ");
                let mut scratch = Vec::new();
                let resolved_type = expand(table, &declared_type, *line, &mut scratch);
                fields.push(MemberField { name: (*name).to_owned(), declared_type, resolved_type, line: *line });
            }
            _ => diags.push(Diagnostic::warning(*line, format!("member line is not a `<type> <name>;` field: {t:?}"))),
        }
    }
    fields
}

/// Structural checks. Errors make compilation fail; warnings do not.
pub fn validate(schema: &SchemaDef) -> Vec<Diagnostic> {
    validate_with(schema, &MacroTable::for_schema(schema, &[]))
}

fn validate_with(schema: &SchemaDef, table: &MacroTable) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for key in REQUIRED_SCALARS {
        match schema.entries.get(key) {
            None => diags.push(Diagnostic::error(0, format!("{key} missing"))),
            Some(Entry::Block { line, .. }) => {
                diags.push(Diagnostic::error(*line, format!("{key} must be a scalar, not a block")))
            }
            Some(Entry::Scalar { .. }) => {}
        }
    }
    if let Some(class) = schema.scalar("class_name") {
        if !is_identifier(class) {
            let line = schema.line_of("class_name").unwrap_or(0);
            diags.push(Diagnostic::error(line, format!("class_name {class:?} is not a valid identifier")));
        }
    }
    match schema.entries.get("member") {
        None => diags.push(Diagnostic::error(0, "member missing")),
        Some(Entry::Scalar { line, .. }) => diags.push(Diagnostic::error(*line, "member must be a block")),
        Some(Entry::Block { .. }) => {}
    }
    for (key, e) in &schema.entries {
        let line = match e {
            Entry::Scalar { line, .. } | Entry::Block { line, .. } => *line,
        };
        let known_scalar = SCALAR_KEYS.contains(&key.as_str());
        let known_block = BLOCK_KEYS.contains(&key.as_str());
        if !known_scalar && !known_block {
            diags.push(Diagnostic::warning(line, format!("unknown key `{key}` (kept verbatim)")));
        } else if known_scalar && matches!(e, Entry::Block { .. }) {
            diags.push(Diagnostic::warning(line, format!("`{key}` is normally a scalar")));
        } else if known_block && matches!(e, Entry::Scalar { .. }) && key != "member" {
            diags.push(Diagnostic::warning(line, format!("`{key}` is normally a block")));
        }
        if let Entry::Block { lines, .. } = e {
            for (n, text) in lines {
                for name in macro_refs(text) {
                    if !table.contains(name) {
                        diags.push(Diagnostic::warning(*n, format!("unresolved macro @{name}@ in `{key}`")));
                    }
                }
            }
        }
    }
    member_fields(schema, table, &mut diags);
    diags
}

/// Canonical, byte-stable descriptor text.
pub fn descriptor(schema: &SchemaDef, table: &MacroTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("schema {}\n", schema.scalar("class_name").unwrap_or("")));
    let base = Path::new(&schema.source_name).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    out.push_str(&format!("source {base}\n"));
    for (key, e) in &schema.entries {
        match e {
            Entry::Scalar { value, .. } => out.push_str(&format!("scalar {key} {value}\n")),
            Entry::Block { lines, .. } => {
                out.push_str(&format!("block {key} {}\n", lines.len()));
                for (_, l) in lines {
                    out.push_str(&format!("| {l}\n"));
                }
            }
        }
    }
    for f in member_fields(schema, table, &mut Vec::new()) {
        out.push_str(&format!("field {} : {} -> {}\n", f.name, f.declared_type, f.resolved_type));
    }
    out.push_str("end\n");
    out
}

/// Macro table used to render templates: the schema table plus one binding
/// per block key, bound to the block body after expansion.
pub fn template_table(schema: &SchemaDef, defines: &[(String, String)]) -> MacroTable {
    let base = MacroTable::for_schema(schema, defines);
    let mut table = base.clone();
    for (key, lines) in schema.blocks() {
        if defines.iter().any(|(k, _)| k == key) || !is_macro_name(key) {
            continue;
        }
        let body: Vec<String> =
            lines.iter().map(|(n, l)| expand(&base, l, *n, &mut Vec::new())).collect();
        table.bind(key, body.join("\n"));
    }
    table
}

#[derive(Debug, Clone)]
pub struct CompileOutput {
    pub descriptor_path: PathBuf,
    pub descriptor: String,
    /// Rendered template outputs, in template order.
    pub rendered: Vec<PathBuf>,
    pub diagnostics: Vec<Diagnostic>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchemaError + '_ {
    move |source| SchemaError::Io { path: path.to_owned(), source }
}

/// Parse, validate and emit. Nothing is written unless validation passes and
/// every template can be read.
pub fn compile(
    schema_file: &Path,
    templates: &[PathBuf],
    output_dir: &Path,
    defines: &[(String, String)],
) -> Result<CompileOutput, SchemaError> {
    let text = fs::read_to_string(schema_file).map_err(io_err(schema_file))?;
    let schema = parse(&text, &schema_file.to_string_lossy())?;
    let table = MacroTable::for_schema(&schema, defines);
    let mut diagnostics = validate_with(&schema, &table);
    if has_errors(&diagnostics) {
        return Err(SchemaError::ValidationFailed(diagnostics));
    }
    let mut sources = Vec::with_capacity(templates.len());
    for t in templates {
        match fs::read_to_string(t) {
            Ok(s) => sources.push(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SchemaError::TemplateNotFound(t.clone()))
            }
            Err(e) => return Err(SchemaError::Io { path: t.clone(), source: e }),
        }
    }
    let class = schema.scalar("class_name").unwrap_or_default().to_owned();
    let render_table = template_table(&schema, defines);
    let rendered_text: Vec<String> =
        sources.iter().map(|src| expand(&render_table, src, 1, &mut diagnostics)).collect();

    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let descriptor = descriptor(&schema, &table);
    let descriptor_path = output_dir.join(format!("{class}.schema"));
    fs::write(&descriptor_path, &descriptor).map_err(io_err(&descriptor_path))?;
    let mut rendered = Vec::with_capacity(templates.len());
    for (t, body) in templates.iter().zip(rendered_text) {
        let stem = t.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "template".into());
        let path = output_dir.join(format!("{stem}.{class}.out"));
        fs::write(&path, body).map_err(io_err(&path))?;
        rendered.push(path);
    }
    Ok(CompileOutput { descriptor_path, descriptor, rendered, diagnostics })
}

/// Parse `name=value`.
pub fn parse_define(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    if !is_macro_name(k) {
        return Err(format!("invalid macro name {k:?}"));
    }
    Ok((k.to_owned(), v.to_owned()))
}
