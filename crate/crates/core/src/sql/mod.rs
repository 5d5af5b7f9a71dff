//! SQL view of dialogue states.
//!
//! Each schema domain is a table and each slot a `text` column. A turn's
//! state change is a `SELECT * FROM ... WHERE ...` whose conjuncts are the
//! changed slot-value pairs, one alias `d1..dn` per referenced domain. A turn
//! without changes is the sentinel `SELECT * FROM none;`.

mod parse;
mod prompt;

pub use parse::{parse_sql, ParseTier, ParsedSql, SqlError, SqlErrorKind};
pub use prompt::{build_prompt, fit_prompt, Prompt, PromptError, DEFAULT_PROMPT_BUDGET, INSTRUCTION};

use crate::model::{Schema, SchemaError, SlotValue, StateChange, RESERVED_DOMAIN};

/// Sentinel statement for turns that change nothing.
pub const NO_CHANGE_SQL: &str = "SELECT * FROM none;";

/// One `CREATE TABLE` per domain, in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlSchemaText {
    pub ddl: String,
}

pub fn schema_to_ddl(schema: &Schema) -> SqlSchemaText {
    let ddl = schema
        .domains()
        .iter()
        .map(|d| {
            let cols: Vec<String> = schema
                .slots(d)
                .unwrap_or_default()
                .iter()
                .map(|s| format!("{s} text"))
                .collect();
            format!("CREATE TABLE {d}({});", cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n");
    SqlSchemaText { ddl }
}

fn quote(value: &str) -> String {
    format!("'{}'", value.replace('\'', "''"))
}

/// Encodes a state change as a single SQL statement.
///
/// Domains are ordered by name and aliased `d1..dn`; conjuncts follow the
/// same order, slots sorted within a domain.
pub fn encode_delta_as_sql(delta: &StateChange, schema: &Schema) -> Result<String, SchemaError> {
    delta.validate(schema)?;
    if delta.is_empty() {
        return Ok(NO_CHANGE_SQL.to_string());
    }
    let domains = delta.domains();
    debug_assert!(!domains.iter().any(|d| d == RESERVED_DOMAIN));
    let alias = |d: &str| domains.iter().position(|x| x == d).map(|i| format!("d{}", i + 1));
    let tables: Vec<String> = domains
        .iter()
        .map(|d| format!("{d} AS {}", alias(d).expect("domain present")))
        .collect();
    let conjuncts: Vec<String> = delta
        .iter()
        .map(|(k, v)| {
            let value = match v {
                SlotValue::Value(v) => quote(v),
                SlotValue::Delete => quote(crate::model::DELETE_MARKER),
            };
            format!("{}.{} = {}", alias(&k.domain).expect("domain present"), k.slot, value)
        })
        .collect();
    Ok(format!(
        "SELECT * FROM {} WHERE {};",
        tables.join(", "),
        conjuncts.join(" AND ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SlotKey;

    #[test]
    fn ddl_rendering() {
        let s = Schema::new([("attraction", vec!["area", "type"])]).unwrap();
        assert_eq!(schema_to_ddl(&s).ddl, "CREATE TABLE attraction(area text, type text);");
        let empty = Schema::new(Vec::<(String, Vec<String>)>::new()).unwrap();
        assert_eq!(schema_to_ddl(&empty).ddl, "");
        let ddl = schema_to_ddl(&Schema::multiwoz()).ddl;
        assert_eq!(ddl.matches("CREATE TABLE").count(), 7);
    }

    #[test]
    fn encode_examples() {
        let schema = Schema::multiwoz();
        let d = StateChange::from_values([(("attraction", "area"), "south")]);
        assert_eq!(
            encode_delta_as_sql(&d, &schema).unwrap(),
            "SELECT * FROM attraction AS d1 WHERE d1.area = 'south';"
        );
        assert_eq!(encode_delta_as_sql(&StateChange::new(), &schema).unwrap(), NO_CHANGE_SQL);
        let d = StateChange::from_values([(("train", "day"), "monday"), (("hotel", "area"), "south")]);
        assert_eq!(
            encode_delta_as_sql(&d, &schema).unwrap(),
            "SELECT * FROM hotel AS d1, train AS d2 WHERE d1.area = 'south' AND d2.day = 'monday';"
        );
    }

    #[test]
    fn encode_quotes_and_deletions() {
        let schema = Schema::multiwoz();
        let d = StateChange::from_pairs([
            (SlotKey::new("restaurant", "name"), SlotValue::Value("nando's".into())),
            (SlotKey::new("restaurant", "area"), SlotValue::Delete),
        ]);
        assert_eq!(
            encode_delta_as_sql(&d, &schema).unwrap(),
            "SELECT * FROM restaurant AS d1 WHERE d1.area = '[DELETE]' AND d1.name = 'nando''s';"
        );
        let bad = StateChange::from_values([(("hotel", "colour"), "red")]);
        assert!(encode_delta_as_sql(&bad, &schema).is_err());
    }
}
