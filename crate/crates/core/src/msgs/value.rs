use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{FieldIssue, FieldType, IssueKind, Issues, MessageSchema, MsgError, SchemaRegistry, Shape};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F64(f64),
    F32(f32),
    I64(i64),
    I32(i32),
    Bool(bool),
    Str(String),
    Msg(MessageValue),
    Array(Vec<Value>),
}

impl Value {
    pub fn f64_array(xs: &[f64]) -> Self {
        Value::Array(xs.iter().copied().map(Value::F64).collect())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::F64(x) => Some(x),
            Value::F32(x) => Some(x as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::I64(x) => Some(x),
            Value::I32(x) => Some(x as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_msg(&self) -> Option<&MessageValue> {
        match self {
            Value::Msg(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    /// Numeric array as `f64`s; `None` if any element is not a float.
    pub fn to_f64_vec(&self) -> Option<Vec<f64>> {
        self.as_array()?.iter().map(Value::as_f64).collect()
    }
}

/// A message instance: schema name plus field values.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageValue {
    pub schema: String,
    pub fields: BTreeMap<String, Value>,
}

impl MessageValue {
    pub fn new(schema: impl Into<String>) -> Self {
        Self {
            schema: schema.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: Value) -> Self {
        self.fields.insert(name.into(), value);
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.fields.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name)
    }

    /// Checks the value against its registered schema, collecting every offending field.
    pub fn validate(&self, registry: &SchemaRegistry) -> Result<(), MsgError> {
        let schema = registry
            .get(&self.schema)
            .ok_or_else(|| MsgError::UnknownSchema(self.schema.clone()))?;
        let mut issues = Vec::new();
        validate_message(self, schema, registry, "", &mut issues);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(MsgError::Validation(Issues(issues)))
        }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn validate_message(
    msg: &MessageValue,
    schema: &MessageSchema,
    registry: &SchemaRegistry,
    prefix: &str,
    issues: &mut Vec<FieldIssue>,
) {
    if msg.schema != schema.name {
        issues.push(FieldIssue {
            path: if prefix.is_empty() { "<root>".to_string() } else { prefix.to_string() },
            kind: IssueKind::WrongType {
                expected: schema.name.clone(),
            },
        });
        return;
    }
    for field in &schema.fields {
        let path = join(prefix, &field.name);
        match msg.fields.get(&field.name) {
            None if field.required => issues.push(FieldIssue {
                path,
                kind: IssueKind::Missing,
            }),
            None => {}
            Some(v) => match field.shape {
                Shape::Scalar => validate_scalar(v, &field.ty, registry, &path, issues),
                Shape::Fixed(_) | Shape::Dynamic => match v {
                    Value::Array(items) => {
                        if let Shape::Fixed(n) = field.shape {
                            if items.len() != n {
                                issues.push(FieldIssue {
                                    path: path.clone(),
                                    kind: IssueKind::WrongLength {
                                        expected: n,
                                        found: items.len(),
                                    },
                                });
                                continue;
                            }
                        }
                        for (i, item) in items.iter().enumerate() {
                            let p = format!("{path}[{i}]");
                            validate_scalar(item, &field.ty, registry, &p, issues);
                        }
                    }
                    _ => issues.push(FieldIssue {
                        path,
                        kind: IssueKind::WrongType {
                            expected: format!("array of {}", field.ty.name()),
                        },
                    }),
                },
            },
        }
    }
    for name in msg.fields.keys() {
        if schema.field(name).is_none() {
            issues.push(FieldIssue {
                path: join(prefix, name),
                kind: IssueKind::Unknown,
            });
        }
    }
}

fn validate_scalar(
    v: &Value,
    ty: &FieldType,
    registry: &SchemaRegistry,
    path: &str,
    issues: &mut Vec<FieldIssue>,
) {
    let ok = match (ty, v) {
        (FieldType::F64, Value::F64(x)) => {
            if !x.is_finite() {
                issues.push(FieldIssue {
                    path: path.to_string(),
                    kind: IssueKind::NonFinite,
                });
            }
            true
        }
        (FieldType::F32, Value::F32(x)) => {
            if !x.is_finite() {
                issues.push(FieldIssue {
                    path: path.to_string(),
                    kind: IssueKind::NonFinite,
                });
            }
            true
        }
        (FieldType::I64, Value::I64(_))
        | (FieldType::I32, Value::I32(_))
        | (FieldType::Bool, Value::Bool(_))
        | (FieldType::String, Value::Str(_)) => true,
        (FieldType::Message(name), Value::Msg(m)) => {
            match registry.get(name) {
                Some(schema) => validate_message(m, schema, registry, path, issues),
                None => issues.push(FieldIssue {
                    path: path.to_string(),
                    kind: IssueKind::WrongType {
                        expected: name.clone(),
                    },
                }),
            }
            true
        }
        _ => false,
    };
    if !ok {
        issues.push(FieldIssue {
            path: path.to_string(),
            kind: IssueKind::WrongType {
                expected: ty.name().to_string(),
            },
        });
    }
}
