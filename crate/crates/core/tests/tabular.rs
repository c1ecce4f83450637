use ctxmine::tabular::{
    encode_and_scale, encode_medals, missingness_patterns, read_csv, recode_missing_label, IngestOptions,
};
use ctxmine::{Cell, ColumnKind, Table};
use proptest::prelude::*;

fn ingest(text: &str) -> Table {
    read_csv(text.as_bytes(), &IngestOptions::default()).unwrap()
}

/// Labels always start with a letter so they never infer as numbers; some
/// carry commas and quotes to exercise CSV quoting.
fn label() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,6}",
        "[A-Z][a-z]{0,4}, [a-z]{1,3}",
        "[a-z]{1,3}\"[a-z]{1,3}\"",
        Just("No medal".to_string()),
    ]
}

#[derive(Debug, Clone)]
enum Col {
    Num(Vec<Option<f64>>),
    Cat(Vec<Option<String>>),
}

fn column(n: usize) -> impl Strategy<Value = Col> {
    prop_oneof![
        prop::collection::vec(prop::option::weighted(0.8, -1e6..1e6f64), n).prop_map(Col::Num),
        prop::collection::vec(prop::option::weighted(0.8, label()), n).prop_map(Col::Cat),
    ]
}

fn table_text() -> impl Strategy<Value = String> {
    (1usize..30, 1usize..6).prop_flat_map(|(n, c)| prop::collection::vec(column(n), c)).prop_map(|cols| {
        let n = match &cols[0] {
            Col::Num(v) => v.len(),
            Col::Cat(v) => v.len(),
        };
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut text = (0..cols.len()).map(|i| format!("c{i}")).collect::<Vec<_>>().join(",");
        text.push('\n');
        for r in 0..n {
            let fields: Vec<String> = cols
                .iter()
                .map(|c| match c {
                    Col::Num(v) => v[r].map_or(String::new(), |x| format!("{x}")),
                    Col::Cat(v) => v[r].as_deref().map_or("NA".to_string(), quote),
                })
                .collect();
            text.push_str(&fields.join(","));
            text.push('\n');
        }
        text
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_keeps_values_and_mask(text in table_text()) {
        let first = ingest(&text);
        let second = ingest(&first.to_csv_string());
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first.to_csv_string(), second.to_csv_string());
    }

    #[test]
    fn pattern_counts_sum_to_rows(text in table_text()) {
        let t = ingest(&text);
        let s = missingness_patterns(&t);
        prop_assert_eq!(s.patterns.iter().map(|p| p.count).sum::<usize>(), t.n_rows());
        for c in 0..t.n_cols() {
            let mask_sum = (0..t.n_rows()).filter(|&r| t.is_missing(r, c)).count();
            prop_assert_eq!(s.column_missing[c], mask_sum);
            let from_patterns: usize = s.patterns.iter().filter(|p| !p.mask[c]).map(|p| p.count).sum();
            prop_assert_eq!(from_patterns, mask_sum);
        }
    }

    #[test]
    fn recode_touches_only_its_column(text in table_text()) {
        let t = ingest(&text);
        for target in 0..t.n_cols() {
            if t.spec(target).kind != ColumnKind::Categorical {
                continue;
            }
            let name = t.spec(target).name.clone();
            let out = recode_missing_label(&t, &name, "No medal").unwrap();
            prop_assert_eq!(out.missing_count(target), 0);
            for r in 0..t.n_rows() {
                for c in 0..t.n_cols() {
                    if c == target {
                        if t.is_missing(r, c) {
                            prop_assert_eq!(out.label(r, c), Some("No medal"));
                        } else {
                            prop_assert_eq!(out.label(r, c), t.label(r, c));
                        }
                    } else {
                        prop_assert_eq!(out.cell(r, c), t.cell(r, c));
                        prop_assert_eq!(out.label(r, c), t.label(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn encoding_groups_and_inverse_scaling(text in table_text()) {
        let t = ingest(&text);
        // encoding needs complete rows
        let complete: Vec<usize> = (0..t.n_rows()).filter(|&r| (0..t.n_cols()).all(|c| !t.is_missing(r, c))).collect();
        let t = t.select_rows(&complete);
        let cols: Vec<String> = t.column_names().iter().map(|s| s.to_string()).collect();
        let enc = encode_and_scale(&t, &cols).unwrap();

        let expected: usize = t.schema().iter().map(|s| match s.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => s.categories.len(),
        }).sum();
        prop_assert_eq!(enc.ncols(), expected);
        for (g, c) in enc.groups.iter().zip(0..) {
            for r in 0..t.n_rows() {
                match g.scaling {
                    None => {
                        let sum: f64 = (g.start..g.start + g.width).map(|j| enc.values.get(r, j)).sum();
                        prop_assert_eq!(sum, 1.0);
                    }
                    Some(s) => {
                        let raw = t.number(r, c).unwrap();
                        let observed = t.observed_numbers(c);
                        let degenerate = observed.iter().all(|v| *v == observed[0]);
                        if !degenerate {
                            let back = enc.values.get(r, g.start) * s.stddev + s.mean;
                            prop_assert!((back - raw).abs() <= 1e-9 * raw.abs().max(1.0), "{back} vs {raw}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn example_tables() {
    let t = ingest("a,b\n1,x\n,y\n");
    assert_eq!(t.spec(0).kind, ColumnKind::Numeric);
    assert_eq!(t.cell(0, 0), Cell::Number(1.0));
    assert!(t.is_missing(1, 0));
    assert_eq!(t.spec(1).categories, vec!["x", "y"]);

    assert_eq!(ingest("a,b\n").n_rows(), 0);
    let err = read_csv("a,b\n1,2,3\n".as_bytes(), &IngestOptions::default()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn three_numeric_plus_three_and_two_categories_is_eight_columns() {
    let t = ingest("n1,n2,n3,c3,c2\n1,2,3,a,x\n4,5,6,b,y\n7,8,9,c,x\n");
    let enc = encode_and_scale(&t, &["n1", "n2", "n3", "c3", "c2"]).unwrap();
    assert_eq!(enc.ncols(), 8);
}

#[test]
fn medal_codes() {
    let t = ingest("Medal\nGold\nNo medal\nBronze\n");
    let coded = encode_medals(&t, "Medal").unwrap();
    let codes: Vec<f64> = (0..3).map(|r| coded.number(r, 0).unwrap()).collect();
    assert_eq!(codes, vec![1.0, 4.0, 3.0]);
    assert!(encode_medals(&ingest("Medal\nPlatinum\n"), "Medal").is_err());
    let mut opts = IngestOptions::default();
    opts.kind_overrides.insert("Medal".into(), ColumnKind::Categorical);
    let empty = read_csv("Medal\n".as_bytes(), &opts).unwrap();
    assert_eq!(encode_medals(&empty, "Medal").unwrap().n_rows(), 0);
}

#[test]
fn medal_recode_example() {
    let t = ingest("Name,Medal\na,Gold\nb,NA\nc,NA\nd,\n");
    assert_eq!(t.missing_count(1), 3);
    let out = recode_missing_label(&t, "Medal", "No medal").unwrap();
    assert_eq!(out.missing_count(1), 0);
    assert_eq!((1..4).filter(|&r| out.label(r, 1) == Some("No medal")).count(), 3);
    assert_eq!(recode_missing_label(&out, "Medal", "No medal").unwrap(), out);
    assert!(recode_missing_label(&ingest("x\n1\n"), "x", "No medal").is_err());
}
