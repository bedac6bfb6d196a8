use std::collections::BTreeMap;

use mf_core::mib::{Access, MibError, MibSchema, MibValue, Syntax, TableRow, VariableDef, VirtualMib};
use mf_core::Oid;
use proptest::prelude::*;

const BASE: [u32; 7] = [1, 3, 6, 1, 4, 1, 4242];

fn var(arcs: Vec<u32>, column: bool) -> VariableDef {
    VariableDef {
        name: format!("v{}", arcs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("_")),
        oid: Oid::new(arcs).unwrap(),
        syntax: Syntax::Gauge,
        access: Access::ReadOnly,
        is_table_column: column,
        description: String::new(),
    }
}

/// Tables `BASE.t.1.c` with the given rows per column, plus scalars `BASE.100+s`.
fn build(tables: &[(u32, Vec<Vec<u32>>)], scalars: u32) -> VirtualMib {
    let mut vars = Vec::new();
    for (t, cols) in tables {
        for c in 1..=cols.len() as u32 {
            vars.push(var([&BASE[..], &[*t, 1, c]].concat(), true));
        }
    }
    for s in 0..scalars {
        vars.push(var([&BASE[..], &[100 + s]].concat(), false));
    }
    let mut mib = VirtualMib::new(1);
    mib.add_schema(MibSchema { name: "t".into(), variables: vars, notifications: Vec::new() }).unwrap();
    for (t, cols) in tables {
        for (c, rows) in cols.iter().enumerate() {
            for r in rows {
                let oid = Oid::new([&BASE[..], &[*t, 1, c as u32 + 1, *r]].concat()).unwrap();
                mib.insert(oid, MibValue::Gauge(t * 1000 + r)).unwrap();
            }
        }
    }
    for s in 0..scalars {
        mib.insert(Oid::new([&BASE[..], &[100 + s, 0]].concat()).unwrap(), MibValue::Gauge(s)).unwrap();
    }
    mib
}

/// Repeated get-next from the table prefix until the walk leaves it.
fn walk(mib: &VirtualMib, table: &Oid) -> Vec<TableRow> {
    let mut rows: BTreeMap<u32, Vec<(Oid, MibValue)>> = BTreeMap::new();
    let mut cur = table.clone();
    while let Ok((next, value)) = mib.get_next(&cur) {
        if !table.is_prefix_of(&next) {
            break;
        }
        rows.entry(next.last_arc()).or_default().push((next.clone(), value));
        cur = next;
    }
    rows.into_iter()
        .map(|(index, mut columns)| {
            columns.sort();
            TableRow { index, columns }
        })
        .collect()
}

fn arb_tables() -> impl Strategy<Value = Vec<(u32, Vec<Vec<u32>>)>> {
    let column = prop::collection::btree_set(1u32..50, 0..8).prop_map(|s| s.into_iter().collect::<Vec<_>>());
    prop::collection::btree_map(1u32..20, prop::collection::vec(column, 1..5), 1..4).prop_map(|m| m.into_iter().collect())
}

proptest! {
    #[test]
    fn table_equals_walk(tables in arb_tables(), scalars in 0u32..4) {
        let mib = build(&tables, scalars);
        for (t, _) in &tables {
            for prefix in [Oid::new([&BASE[..], &[*t]].concat()).unwrap(), Oid::new([&BASE[..], &[*t, 1]].concat()).unwrap()] {
                prop_assert_eq!(mib.get_table(&prefix).unwrap(), walk(&mib, &prefix));
            }
        }
    }
}

#[test]
fn scalars_are_not_tables() {
    let mib = build(&[(1, vec![vec![1, 2]])], 2);
    let scalar = Oid::new([&BASE[..], &[100]].concat()).unwrap();
    assert_eq!(mib.get_table(&scalar), Err(MibError::NotATable(scalar)));
    let whole = Oid::from_slice(&BASE);
    assert!(matches!(mib.get_table(&whole), Err(MibError::NotATable(_))));
}

#[test]
fn sparse_rows_keep_only_present_columns() {
    let mib = build(&[(3, vec![vec![1, 5], vec![5]])], 0);
    let rows = mib.get_table(&Oid::new([&BASE[..], &[3]].concat()).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| (r.index, r.columns.len())).collect::<Vec<_>>(), vec![(1, 1), (5, 2)]);
}
