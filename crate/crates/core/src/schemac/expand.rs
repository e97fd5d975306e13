use indexmap::IndexMap;

use super::{Diagnostic, SchemaDef};

/// Macro name to replacement text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacroTable {
    bindings: IndexMap<String, String>,
}

pub const PREDEFINED_FLOAT: &str = "float";
pub const MAKE_TRANSIENT: &str = "MakeTransient";
pub const CLASS_ROOT_SUFFIX: &str = "Root";

pub(crate) fn is_macro_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl MacroTable {
    pub fn new() -> Self {
        MacroTable::default()
    }

    /// Predefined macros, then one binding per scalar key, then `defines`.
    /// Later layers win.
    pub fn for_schema(schema: &SchemaDef, defines: &[(String, String)]) -> Self {
        let mut t = MacroTable::new();
        t.bind("float", PREDEFINED_FLOAT);
        t.bind("make_transient", MAKE_TRANSIENT);
        if let Some(class) = schema.scalar("class_name") {
            t.bind("class_root", format!("{class}{CLASS_ROOT_SUFFIX}"));
        }
        for (k, v) in schema.scalars() {
            t.bind(k, v);
        }
        for (k, v) in defines {
            t.bind(k, v);
        }
        t
    }

    pub fn bind(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.bindings.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.bindings.get(name).map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Replace every bound `@name@` in one left-to-right pass. Replacement text is
/// never rescanned. `first_line` numbers the first line of `text` for
/// diagnostics.
pub fn expand(table: &MacroTable, text: &str, first_line: usize, diags: &mut Vec<Diagnostic>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut line = first_line;
    let mut rest = text;
    while let Some(at) = rest.find('@') {
        let (before, tail) = rest.split_at(at);
        line += before.matches('\n').count();
        out.push_str(before);
        let after = &tail[1..];
        let close = after.find('@');
        match close {
            Some(0) => {
                diags.push(Diagnostic::warning(line, "empty macro name in '@@'"));
                out.push('@');
                rest = after;
            }
            Some(end) if is_macro_name(&after[..end]) => {
                let name = &after[..end];
                match table.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        diags.push(Diagnostic::warning(line, format!("unresolved macro @{name}@")));
                        out.push('@');
                        out.push_str(name);
                        out.push('@');
                    }
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('@');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Names of well-formed `@name@` references in `text`, with the same scan as
/// [`expand`].
pub fn macro_refs(text: &str) -> Vec<&str> {
    let mut refs = Vec::new();
    let mut rest = text;
    while let Some(at) = rest.find('@') {
        let after = &rest[at + 1..];
        match after.find('@') {
            Some(end) if end > 0 && is_macro_name(&after[..end]) => {
                refs.push(&after[..end]);
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    refs
}
