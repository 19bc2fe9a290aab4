use std::collections::BTreeMap;

use super::UdError;

/// Parse a FEATS column (`Case=Nom|Number=Sing`).
///
/// `_` and the empty string mean "no features". Entries are split on the
/// first `=`, so multivalued features such as `Gender=Fem,Masc` keep their
/// value verbatim.
pub fn parse_feats(column: &str) -> Result<BTreeMap<String, String>, UdError> {
    let mut feats = BTreeMap::new();
    if column.is_empty() || column == "_" {
        return Ok(feats);
    }
    for entry in column.split('|') {
        let (name, value) = entry
            .split_once('=')
            .filter(|(n, v)| !n.is_empty() && !v.is_empty())
            .ok_or_else(|| UdError::Feature { entry: entry.to_string() })?;
        feats.insert(name.to_string(), value.to_string());
    }
    Ok(feats)
}

/// Inverse of [`parse_feats`]; UD orders features alphabetically.
pub fn format_feats(feats: &BTreeMap<String, String>) -> String {
    if feats.is_empty() {
        return "_".to_string();
    }
    feats.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_standard_column() {
        let f = parse_feats("Case=Nom|Number=Sing").unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f["Case"], "Nom");
        assert_eq!(f["Number"], "Sing");
    }

    #[test]
    fn underscore_is_empty() {
        assert!(parse_feats("_").unwrap().is_empty());
        assert!(parse_feats("").unwrap().is_empty());
    }

    #[test]
    fn multivalue_kept_verbatim() {
        let f = parse_feats("Gender=Fem,Masc").unwrap();
        assert_eq!(f["Gender"], "Fem,Masc");
    }

    #[test]
    fn entry_without_equals_is_named_in_error() {
        let err = parse_feats("Case=Nom|Plural").unwrap_err();
        assert!(err.to_string().contains("Plural"), "{err}");
        assert!(parse_feats("Case=").is_err());
        assert!(parse_feats("=Nom").is_err());
    }

    proptest! {
        #[test]
        fn order_insensitive(entries in proptest::collection::btree_map("[A-Z][a-z]{1,6}", "[A-Z][a-z0-9,]{0,5}", 1..6), seed in any::<u64>()) {
            let mut parts: Vec<String> = entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let sorted = parse_feats(&parts.join("|")).unwrap();
            let n = parts.len();
            parts.rotate_left((seed as usize) % n);
            if seed % 2 == 0 { parts.reverse(); }
            let permuted = parse_feats(&parts.join("|")).unwrap();
            prop_assert_eq!(&sorted, &permuted);
            prop_assert_eq!(parse_feats(&format_feats(&sorted)).unwrap(), sorted);
        }
    }
}
