use formation_core::msgs::{
    decode, encode, parse_schema_file, render_schema_file, FieldDef, FieldType, MessageSchema, MessageValue,
    SchemaRegistry, Shape, Value,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const UNITS: [&str; 6] = ["m", "m/s", "rad/s", "N", "N*m", "ns"];
const SCALARS: [FieldType; 6] = [
    FieldType::F64,
    FieldType::F32,
    FieldType::I64,
    FieldType::I32,
    FieldType::Bool,
    FieldType::String,
];

fn ident(rng: &mut StdRng, upper: bool) -> String {
    let len = rng.gen_range(1..10);
    let mut s = String::new();
    for i in 0..len {
        let c = match (i, rng.gen_range(0..4)) {
            (0, _) if upper => (b'A' + rng.gen_range(0..26)) as char,
            (0, _) => (b'a' + rng.gen_range(0..26)) as char,
            (_, 0) => (b'0' + rng.gen_range(0..10)) as char,
            (_, 1) if !upper => '_',
            _ => (b'a' + rng.gen_range(0..26)) as char,
        };
        s.push(c);
    }
    s
}

/// A self-consistent schema set where nested fields only reference earlier messages.
fn random_schemas(rng: &mut StdRng) -> Vec<MessageSchema> {
    let mut out: Vec<MessageSchema> = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        let name = loop {
            let n = ident(rng, true);
            if !out.iter().any(|s| s.name == n) {
                break n;
            }
        };
        let mut fields: Vec<FieldDef> = Vec::new();
        for _ in 0..rng.gen_range(1..7) {
            let fname = loop {
                let n = ident(rng, false);
                if n != "msg" && !fields.iter().any(|f| f.name == n) {
                    break n;
                }
            };
            let ty = if !out.is_empty() && rng.gen_bool(0.2) {
                FieldType::Message(out[rng.gen_range(0..out.len())].name.clone())
            } else {
                SCALARS[rng.gen_range(0..SCALARS.len())].clone()
            };
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Scalar,
                1 => Shape::Fixed(rng.gen_range(1..5)),
                _ => Shape::Dynamic,
            };
            let unit = rng.gen_bool(0.3).then(|| UNITS[rng.gen_range(0..UNITS.len())].to_string());
            fields.push(FieldDef {
                name: fname,
                ty,
                shape,
                unit,
                required: rng.gen_bool(0.7),
            });
        }
        out.push(MessageSchema {
            name,
            version: rng.gen_range(1..5),
            fields,
        });
    }
    out
}

fn random_f64(rng: &mut StdRng) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(-1.0..1.0),
        1 => rng.gen_range(-1e6..1e6),
        2 => 0.0,
        _ => loop {
            let x = f64::from_bits(rng.gen());
            if x.is_finite() {
                break x;
            }
        },
    }
}

fn random_string(rng: &mut StdRng) -> String {
    (0..rng.gen_range(0..12))
        .map(|_| match rng.gen_range(0..4) {
            0 => ['"', '\\', '\n', '\t', '\u{1}', '/'][rng.gen_range(0..6)],
            1 => rng.gen::<char>(),
            _ => (b' ' + rng.gen_range(0..95)) as char,
        })
        .collect()
}

fn random_scalar(ty: &FieldType, registry: &SchemaRegistry, rng: &mut StdRng, depth: usize) -> Value {
    match ty {
        FieldType::F64 => Value::F64(random_f64(rng)),
        FieldType::F32 => Value::F32(loop {
            let x = f32::from_bits(rng.gen());
            if x.is_finite() {
                break x;
            }
        }),
        FieldType::I64 => Value::I64(rng.gen()),
        FieldType::I32 => Value::I32(rng.gen()),
        FieldType::Bool => Value::Bool(rng.gen()),
        FieldType::String => Value::Str(random_string(rng)),
        FieldType::Message(m) => Value::Msg(random_value(registry.get(m).unwrap(), registry, rng, depth + 1)),
    }
}

fn random_value(schema: &MessageSchema, registry: &SchemaRegistry, rng: &mut StdRng, depth: usize) -> MessageValue {
    let mut v = MessageValue::new(schema.name.clone());
    for f in &schema.fields {
        if !f.required && rng.gen_bool(0.3) {
            continue;
        }
        let len = match f.shape {
            Shape::Scalar => None,
            Shape::Fixed(n) => Some(n),
            Shape::Dynamic => Some(rng.gen_range(0..if depth > 2 { 1 } else { 4 })),
        };
        let value = match len {
            None => random_scalar(&f.ty, registry, rng, depth),
            Some(n) => Value::Array((0..n).map(|_| random_scalar(&f.ty, registry, rng, depth)).collect()),
        };
        v.set(f.name.clone(), value);
    }
    v
}

fn round_trip(value: &MessageValue, registry: &SchemaRegistry) -> Result<(), TestCaseError> {
    let bytes = encode(value, registry).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let back = decode(&bytes, registry.get(&value.schema).unwrap(), registry)
        .map_err(|e| TestCaseError::fail(format!("{e}: {}", String::from_utf8_lossy(&bytes))))?;
    prop_assert_eq!(&back, value);
    // Bit-exact floats, including the sign of zero.
    prop_assert_eq!(encode(&back, registry).unwrap(), bytes);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(10_000) })]

    #[test]
    fn builtin_messages_survive_encode_decode(seed in any::<u64>()) {
        let registry = SchemaRegistry::builtin();
        let mut rng = StdRng::seed_from_u64(seed);
        let schemas: Vec<&MessageSchema> = registry.iter().collect();
        let schema = schemas[rng.gen_range(0..schemas.len())];
        round_trip(&random_value(schema, &registry, &mut rng, 0), &registry)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(2_000) })]

    #[test]
    fn random_schema_sets_round_trip(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let schemas = random_schemas(&mut rng);
        let text = render_schema_file(&schemas);
        let parsed = parse_schema_file(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &schemas);
        prop_assert_eq!(render_schema_file(&parsed), text);

        let registry = SchemaRegistry::from_schemas(parsed).unwrap();
        for s in registry.iter() {
            round_trip(&random_value(s, &registry, &mut rng, 0), &registry)?;
        }
    }

    #[test]
    fn decoder_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let registry = SchemaRegistry::builtin();
        for s in registry.iter() {
            let _ = decode(&bytes, s, &registry);
        }
        let _ = parse_schema_file(&String::from_utf8_lossy(&bytes));
    }
}

#[test]
fn shipped_schema_file_is_a_fixed_point() {
    let registry = SchemaRegistry::builtin();
    let schemas: Vec<MessageSchema> = registry.iter().cloned().collect();
    let text = render_schema_file(&schemas);
    assert_eq!(parse_schema_file(&text).unwrap(), schemas);
}
