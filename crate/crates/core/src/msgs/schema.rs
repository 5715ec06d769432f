//! Declarative message schema format.
//!
//! ```text
//! # comment
//! msg SCStates v1 { p_h: f64[3] m; q_hb: f64[4]; stamp_ns: i64 ns }
//! ```
//!
//! Field grammar: `name[?]: type[[len]] [unit];` where `type` is one of
//! `f64 f32 i64 i32 bool string` or the name of another message (nested value).
//! `[len]` declares a fixed-length array, `[]` a variable-length one. A `?` after the
//! field name marks the field optional. The separator after the last field may be omitted.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::MsgError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldType {
    F64,
    F32,
    I64,
    I32,
    Bool,
    String,
    /// Nested value of another registered schema.
    Message(String),
}

impl FieldType {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "f64" => Self::F64,
            "f32" => Self::F32,
            "i64" => Self::I64,
            "i32" => Self::I32,
            "bool" => Self::Bool,
            "string" => Self::String,
            _ => return None,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Self::F64 => "f64",
            Self::F32 => "f32",
            Self::I64 => "i64",
            Self::I32 => "i32",
            Self::Bool => "bool",
            Self::String => "string",
            Self::Message(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Fixed(usize),
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: FieldType,
    pub shape: Shape,
    pub unit: Option<String>,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSchema {
    pub name: String,
    pub version: u32,
    pub fields: Vec<FieldDef>,
}

impl MessageSchema {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Immutable set of schemas keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, MessageSchema>,
}

impl SchemaRegistry {
    /// Builds a registry, rejecting duplicate names and unresolved nested types.
    pub fn from_schemas(schemas: Vec<MessageSchema>) -> Result<Self, MsgError> {
        let mut map = BTreeMap::new();
        for s in schemas {
            if map.contains_key(&s.name) {
                return Err(MsgError::DuplicateSchema(s.name));
            }
            map.insert(s.name.clone(), s);
        }
        for s in map.values() {
            for f in &s.fields {
                if let FieldType::Message(m) = &f.ty {
                    if !map.contains_key(m) {
                        return Err(MsgError::UnknownType {
                            schema: s.name.clone(),
                            field: f.name.clone(),
                            ty: m.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self { schemas: map })
    }

    pub fn parse(text: &str) -> Result<Self, MsgError> {
        Self::from_schemas(parse_schema_file(text)?)
    }

    /// The message set shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_SCHEMAS).expect("built-in schema file is valid")
    }

    pub fn get(&self, name: &str) -> Option<&MessageSchema> {
        self.schemas.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.schemas.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MessageSchema> {
        self.schemas.values()
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }
}

pub const BUILTIN_SCHEMAS: &str = include_str!("../../schemas/builtin.msg");

/// Parses every `msg` block in `text`.
pub fn parse_schema_file(text: &str) -> Result<Vec<MessageSchema>, MsgError> {
    let mut p = Parser::new(text);
    let mut out: Vec<MessageSchema> = Vec::new();
    loop {
        p.skip_trivia();
        if p.peek().is_none() {
            break;
        }
        let schema = p.message()?;
        if out.iter().any(|s| s.name == schema.name) {
            return Err(MsgError::DuplicateSchema(schema.name));
        }
        out.push(schema);
    }
    Ok(out)
}

/// Renders schemas back into the declarative format.
pub fn render_schema_file(schemas: &[MessageSchema]) -> String {
    let mut out = String::new();
    for (i, s) in schemas.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "msg {} v{} {{", s.name, s.version);
        for f in &s.fields {
            let opt = if f.required { "" } else { "?" };
            let shape = match f.shape {
                Shape::Scalar => String::new(),
                Shape::Fixed(n) => format!("[{n}]"),
                Shape::Dynamic => "[]".to_string(),
            };
            let _ = write!(out, "    {}{}: {}{}", f.name, opt, f.ty.name(), shape);
            if let Some(u) = &f.unit {
                let _ = write!(out, " {u}");
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }
    out
}

struct Parser<'a> {
    chars: core::iter::Peekable<core::str::Chars<'a>>,
    line: usize,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn pos(&self) -> (usize, usize) {
        (self.line, self.col)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, MsgError> {
        Err(MsgError::Parse {
            line: self.line,
            col: self.col,
            message: message.into(),
        })
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    /// Skips spaces and tabs only; units must sit on the field's line.
    fn skip_inline_space(&mut self) {
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), MsgError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => self.error(format!("expected '{want}', found '{c}'")),
            None => self.error(format!("expected '{want}', found end of input")),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, MsgError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if is_ident_start(c) => {}
            Some(c) => return self.error(format!("expected {what}, found '{c}'")),
            None => return self.error(format!("expected {what}, found end of input")),
        }
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if is_ident_char(c) {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        Ok(s)
    }

    fn message(&mut self) -> Result<MessageSchema, MsgError> {
        let kw = self.ident("'msg'")?;
        if kw != "msg" {
            return self.error(format!("expected 'msg', found '{kw}'"));
        }
        let name = self.ident("message name")?;
        self.skip_trivia();
        let (vl, vc) = self.pos();
        let ver = self.ident("version (e.g. v1)")?;
        let version = ver
            .strip_prefix('v')
            .and_then(|d| d.parse::<u32>().ok())
            .filter(|&v| v >= 1);
        let Some(version) = version else {
            return Err(MsgError::Parse {
                line: vl,
                col: vc,
                message: format!("invalid version '{ver}', expected v<integer >= 1>"),
            });
        };
        self.expect('{')?;
        let mut fields: Vec<FieldDef> = Vec::new();
        loop {
            self.skip_trivia();
            match self.peek() {
                Some('}') => {
                    self.bump();
                    break;
                }
                None => return self.error("unterminated message block"),
                _ => {}
            }
            let field = self.field()?;
            if fields.iter().any(|f| f.name == field.name) {
                return Err(MsgError::DuplicateField {
                    schema: name,
                    field: field.name,
                });
            }
            fields.push(field);
            self.skip_trivia();
            match self.peek() {
                Some(';') => {
                    self.bump();
                }
                Some('}') => {}
                Some(c) => return self.error(format!("expected ';' or '}}', found '{c}'")),
                None => return self.error("unterminated message block"),
            }
        }
        if fields.is_empty() {
            return self.error(format!("message '{name}' declares no fields"));
        }
        Ok(MessageSchema {
            name,
            version,
            fields,
        })
    }

    fn field(&mut self) -> Result<FieldDef, MsgError> {
        let name = self.ident("field name")?;
        let mut required = true;
        if self.peek() == Some('?') {
            self.bump();
            required = false;
        }
        self.expect(':')?;
        self.skip_trivia();
        let (tl, tc) = self.pos();
        let ty_name = self.ident("field type")?;
        let ty = match FieldType::from_name(&ty_name) {
            Some(t) => t,
            None if ty_name.starts_with(|c: char| c.is_ascii_uppercase()) => {
                FieldType::Message(ty_name)
            }
            None => {
                return Err(MsgError::Parse {
                    line: tl,
                    col: tc,
                    message: format!("unknown type '{ty_name}'"),
                })
            }
        };
        let mut shape = Shape::Scalar;
        if self.peek() == Some('[') {
            self.bump();
            let mut digits = String::new();
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            if self.peek() != Some(']') {
                return self.error("expected ']' after array length");
            }
            self.bump();
            shape = if digits.is_empty() {
                Shape::Dynamic
            } else {
                match digits.parse::<usize>() {
                    Ok(n) if n > 0 => Shape::Fixed(n),
                    _ => return self.error(format!("invalid array length '{digits}'")),
                }
            };
        }
        self.skip_inline_space();
        let mut unit = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == ';' || c == '}' || c == '#' {
                break;
            }
            unit.push(c);
            self.bump();
        }
        Ok(FieldDef {
            name,
            ty,
            shape,
            unit: (!unit.is_empty()).then_some(unit),
            required,
        })
    }
}
