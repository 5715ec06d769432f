//! JSON byte codec. Keys are written in schema declaration order so equal values always
//! encode to identical bytes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::Value as Json;

use super::{
    FieldDef, FieldIssue, FieldType, IssueKind, Issues, MessageSchema, MessageValue, MsgError,
    SchemaRegistry, Shape, Value,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Unknown keys are a schema mismatch.
    #[default]
    Strict,
    /// Unknown keys are ignored.
    Lenient,
}

/// Registry-bound encoder/decoder.
#[derive(Debug, Clone)]
pub struct Codec {
    pub registry: SchemaRegistry,
    pub mode: DecodeMode,
}

impl Codec {
    pub fn new(registry: SchemaRegistry) -> Self {
        Self {
            registry,
            mode: DecodeMode::Strict,
        }
    }

    pub fn with_mode(mut self, mode: DecodeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn encode(&self, value: &MessageValue) -> Result<Vec<u8>, MsgError> {
        encode(value, &self.registry)
    }

    pub fn decode(&self, bytes: &[u8], schema: &str) -> Result<MessageValue, MsgError> {
        let schema = self
            .registry
            .get(schema)
            .ok_or_else(|| MsgError::UnknownSchema(schema.to_string()))?;
        decode_with(bytes, schema, &self.registry, self.mode)
    }

    /// Decodes an already-parsed JSON object (e.g. the payload of a bridge envelope).
    pub fn decode_json(&self, json: &Json, schema: &str) -> Result<MessageValue, MsgError> {
        let schema = self
            .registry
            .get(schema)
            .ok_or_else(|| MsgError::UnknownSchema(schema.to_string()))?;
        from_json(json, schema, &self.registry, self.mode)
    }
}

/// Validates and serializes `value` to UTF-8 JSON bytes.
pub fn encode(value: &MessageValue, registry: &SchemaRegistry) -> Result<Vec<u8>, MsgError> {
    value.validate(registry)?;
    let mut out = String::new();
    write_message(&mut out, value, registry);
    Ok(out.into_bytes())
}

/// Strict decode of `bytes` as an instance of `schema`.
pub fn decode(
    bytes: &[u8],
    schema: &MessageSchema,
    registry: &SchemaRegistry,
) -> Result<MessageValue, MsgError> {
    decode_with(bytes, schema, registry, DecodeMode::Strict)
}

fn decode_with(
    bytes: &[u8],
    schema: &MessageSchema,
    registry: &SchemaRegistry,
    mode: DecodeMode,
) -> Result<MessageValue, MsgError> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| MsgError::Json(e.to_string()))?;
    from_json(&json, schema, registry, mode)
}

fn from_json(
    json: &Json,
    schema: &MessageSchema,
    registry: &SchemaRegistry,
    mode: DecodeMode,
) -> Result<MessageValue, MsgError> {
    let mut issues = Vec::new();
    let value = read_message(json, schema, registry, mode, "", &mut issues);
    match value {
        Some(v) if issues.is_empty() => Ok(v),
        _ => Err(MsgError::SchemaMismatch(Issues(issues))),
    }
}

fn write_message(out: &mut String, value: &MessageValue, registry: &SchemaRegistry) {
    // Validation has already run, so the schema lookup cannot fail.
    let schema = registry.get(&value.schema).expect("validated schema");
    out.push('{');
    let mut first = true;
    for field in &schema.fields {
        let Some(v) = value.fields.get(&field.name) else {
            continue;
        };
        if !first {
            out.push(',');
        }
        first = false;
        write_string(out, &field.name);
        out.push(':');
        write_value(out, v, registry);
    }
    out.push('}');
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

fn write_value(out: &mut String, v: &Value, registry: &SchemaRegistry) {
    match v {
        Value::F64(x) => out.push_str(&serde_json::to_string(x).expect("finite f64")),
        Value::F32(x) => out.push_str(&serde_json::to_string(x).expect("finite f32")),
        Value::I64(x) => out.push_str(&format!("{x}")),
        Value::I32(x) => out.push_str(&format!("{x}")),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Str(s) => write_string(out, s),
        Value::Msg(m) => write_message(out, m, registry),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item, registry);
            }
            out.push(']');
        }
    }
}

fn issue(issues: &mut Vec<FieldIssue>, path: &str, kind: IssueKind) {
    issues.push(FieldIssue {
        path: if path.is_empty() {
            "<root>".to_string()
        } else {
            path.to_string()
        },
        kind,
    });
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn read_message(
    json: &Json,
    schema: &MessageSchema,
    registry: &SchemaRegistry,
    mode: DecodeMode,
    prefix: &str,
    issues: &mut Vec<FieldIssue>,
) -> Option<MessageValue> {
    let Some(obj) = json.as_object() else {
        issue(
            issues,
            prefix,
            IssueKind::WrongType {
                expected: format!("object {}", schema.name),
            },
        );
        return None;
    };
    let mut fields = BTreeMap::new();
    for field in &schema.fields {
        let path = join(prefix, &field.name);
        match obj.get(&field.name) {
            None => {
                if field.required {
                    issue(issues, &path, IssueKind::Missing);
                }
            }
            Some(j) => {
                if let Some(v) = read_field(j, field, registry, mode, &path, issues) {
                    fields.insert(field.name.clone(), v);
                }
            }
        }
    }
    if mode == DecodeMode::Strict {
        for key in obj.keys() {
            if schema.field(key).is_none() {
                issue(issues, &join(prefix, key), IssueKind::Unknown);
            }
        }
    }
    Some(MessageValue {
        schema: schema.name.clone(),
        fields,
    })
}

fn read_field(
    json: &Json,
    field: &FieldDef,
    registry: &SchemaRegistry,
    mode: DecodeMode,
    path: &str,
    issues: &mut Vec<FieldIssue>,
) -> Option<Value> {
    match field.shape {
        Shape::Scalar => read_scalar(json, &field.ty, registry, mode, path, issues),
        Shape::Fixed(_) | Shape::Dynamic => {
            let Some(items) = json.as_array() else {
                issue(
                    issues,
                    path,
                    IssueKind::WrongType {
                        expected: format!("array of {}", field.ty.name()),
                    },
                );
                return None;
            };
            if let Shape::Fixed(n) = field.shape {
                if items.len() != n {
                    issue(
                        issues,
                        path,
                        IssueKind::WrongLength {
                            expected: n,
                            found: items.len(),
                        },
                    );
                    return None;
                }
            }
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let p = format!("{path}[{i}]");
                out.push(read_scalar(item, &field.ty, registry, mode, &p, issues)?);
            }
            Some(Value::Array(out))
        }
    }
}

fn read_scalar(
    json: &Json,
    ty: &FieldType,
    registry: &SchemaRegistry,
    mode: DecodeMode,
    path: &str,
    issues: &mut Vec<FieldIssue>,
) -> Option<Value> {
    let wrong = |issues: &mut Vec<FieldIssue>| {
        issue(
            issues,
            path,
            IssueKind::WrongType {
                expected: ty.name().to_string(),
            },
        );
        None
    };
    match ty {
        FieldType::F64 => match json.as_f64() {
            Some(x) => Some(Value::F64(x)),
            None => wrong(issues),
        },
        FieldType::F32 => match json.as_f64() {
            Some(x) => Some(Value::F32(x as f32)),
            None => wrong(issues),
        },
        FieldType::I64 => match json.as_i64() {
            Some(x) => Some(Value::I64(x)),
            None => wrong(issues),
        },
        FieldType::I32 => match json.as_i64() {
            Some(x) => match i32::try_from(x) {
                Ok(v) => Some(Value::I32(v)),
                Err(_) => {
                    issue(issues, path, IssueKind::OutOfRange);
                    None
                }
            },
            None => wrong(issues),
        },
        FieldType::Bool => match json.as_bool() {
            Some(b) => Some(Value::Bool(b)),
            None => wrong(issues),
        },
        FieldType::String => match json.as_str() {
            Some(s) => Some(Value::Str(s.to_string())),
            None => wrong(issues),
        },
        FieldType::Message(name) => {
            let schema = registry.get(name)?;
            read_message(json, schema, registry, mode, path, issues).map(Value::Msg)
        }
    }
}
