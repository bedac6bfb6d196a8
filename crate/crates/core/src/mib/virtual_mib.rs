use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::schema::{parse_schema_text, Access, Dynamics, MibSchema, SchemaFile, VariableDef};
use super::value::{MibValue, Syntax};
use super::MibError;
use crate::oid::Oid;

/// One row of a table: the integer index arc and every column instance present for it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableRow {
    pub index: u32,
    pub columns: Vec<(Oid, MibValue)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum DynState {
    Counter { rate_per_s: u32, milli_carry: u64 },
    Gauge { lo: u32, hi: u32, step: u32, rng: ChaCha8Rng },
}

/// A live, in-memory MIB instance whose dynamic variables evolve with simulated time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualMib {
    schemas: Vec<MibSchema>,
    defs: BTreeMap<Oid, VariableDef>,
    store: BTreeMap<Oid, MibValue>,
    dynamics: BTreeMap<Oid, DynState>,
    sim_time_ms: u64,
    seed: u64,
}

fn rng_for(seed: u64, oid: &Oid) -> ChaCha8Rng {
    // FNV-1a over the arcs, mixed with the MIB seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for arc in oid.arcs() {
        for b in arc.to_be_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

impl VirtualMib {
    pub fn new(seed: u64) -> Self {
        VirtualMib {
            schemas: Vec::new(),
            defs: BTreeMap::new(),
            store: BTreeMap::new(),
            dynamics: BTreeMap::new(),
            sim_time_ms: 0,
            seed,
        }
    }

    /// Registers a schema's variable definitions. Fails if any OID is already defined.
    pub fn add_schema(&mut self, schema: MibSchema) -> Result<(), MibError> {
        schema.validate().map_err(MibError::Schema)?;
        for var in &schema.variables {
            if self.defs.contains_key(&var.oid) {
                return Err(MibError::Schema(format!("variable {} defined twice", var.oid)));
            }
        }
        if self.schemas.iter().any(|s| s.name == schema.name) {
            return Err(MibError::Schema(format!("schema {} loaded twice", schema.name)));
        }
        for var in &schema.variables {
            self.defs.insert(var.oid.clone(), var.clone());
        }
        self.schemas.push(schema);
        Ok(())
    }

    /// Registers the schema and applies its `val` / `dyn` seed lines.
    pub fn load_schema_file(&mut self, file: SchemaFile) -> Result<(), MibError> {
        self.add_schema(file.schema)?;
        for (oid, text) in file.values {
            let def = self.definition_for(&oid)?;
            let value = MibValue::decode_text(def.syntax, &text).map_err(|e| MibError::Schema(format!("{e}")))?;
            self.insert(oid, value)?;
        }
        for (oid, rule) in file.dynamics {
            self.set_dynamics(&oid, rule)?;
        }
        Ok(())
    }

    pub fn load_schema_text(&mut self, text: &str, default_name: &str) -> Result<(), MibError> {
        let files = parse_schema_text(text, default_name).map_err(|e| MibError::Schema(format!("{e}")))?;
        for file in files {
            self.load_schema_file(file)?;
        }
        Ok(())
    }

    pub fn schemas(&self) -> &[MibSchema] {
        &self.schemas
    }

    pub fn sim_time_ms(&self) -> u64 {
        self.sim_time_ms
    }

    /// Variable definition that owns an instance OID (the instance minus its last arc).
    pub fn definition_for(&self, instance: &Oid) -> Result<&VariableDef, MibError> {
        instance
            .parent()
            .and_then(|p| self.defs.get(&p))
            .ok_or_else(|| MibError::NoSuchInstance(instance.clone()))
    }

    pub fn variable(&self, object: &Oid) -> Option<&VariableDef> {
        self.defs.get(object)
    }

    /// Creates or overwrites an instance, bypassing access checks. Scalars use
    /// instance arc 0; table columns use the row index as the instance arc.
    pub fn insert(&mut self, instance: Oid, value: MibValue) -> Result<(), MibError> {
        let def = self.definition_for(&instance)?;
        if def.syntax != value.syntax() {
            return Err(MibError::WrongType { oid: instance, expected: def.syntax, got: value.syntax() });
        }
        if !def.is_table_column && instance.last_arc() != 0 {
            return Err(MibError::NoSuchInstance(instance));
        }
        self.store.insert(instance, value);
        Ok(())
    }

    pub fn set_dynamics(&mut self, instance: &Oid, rule: Dynamics) -> Result<(), MibError> {
        let value = self.store.get(instance).ok_or_else(|| MibError::NoSuchInstance(instance.clone()))?;
        let state = match rule {
            Dynamics::Constant => {
                self.dynamics.remove(instance);
                return Ok(());
            }
            Dynamics::Counter { rate_per_s } => {
                if !matches!(value.syntax(), Syntax::Counter32 | Syntax::TimeTicks) {
                    return Err(MibError::Schema(format!("counter rule on non-counter {instance}")));
                }
                DynState::Counter { rate_per_s, milli_carry: 0 }
            }
            Dynamics::GaugeWalk { lo, hi, step } => {
                if !matches!(value.syntax(), Syntax::Gauge | Syntax::Integer) {
                    return Err(MibError::Schema(format!("gauge rule on non-gauge {instance}")));
                }
                DynState::Gauge { lo, hi, step, rng: rng_for(self.seed, instance) }
            }
        };
        self.dynamics.insert(instance.clone(), state);
        Ok(())
    }

    pub fn get(&self, instance: &Oid) -> Result<MibValue, MibError> {
        self.store.get(instance).cloned().ok_or_else(|| MibError::NoSuchInstance(instance.clone()))
    }

    /// Least stored instance strictly greater than `oid`.
    pub fn get_next(&self, oid: &Oid) -> Result<(Oid, MibValue), MibError> {
        use core::ops::Bound;
        self.store
            .range((Bound::Excluded(oid.clone()), Bound::Unbounded))
            .next()
            .map(|(k, v)| (k.clone(), v.clone()))
            .ok_or(MibError::EndOfMib)
    }

    /// True when `oid` covers at least one table column and no scalar variable.
    pub fn is_table_prefix(&self, oid: &Oid) -> bool {
        let mut saw_column = false;
        for (var_oid, def) in self.defs.range(oid.clone()..) {
            if !oid.is_prefix_of(var_oid) {
                break;
            }
            if !def.is_table_column || var_oid == oid {
                return false;
            }
            saw_column = true;
        }
        saw_column
    }

    /// All rows under a table prefix in one call, ordered by index; columns
    /// within a row are ordered by column OID.
    pub fn get_table(&self, table: &Oid) -> Result<Vec<TableRow>, MibError> {
        if !self.is_table_prefix(table) {
            return Err(MibError::NotATable(table.clone()));
        }
        let mut rows: BTreeMap<u32, Vec<(Oid, MibValue)>> = BTreeMap::new();
        for (oid, value) in self.store.range(table.clone()..) {
            if !table.is_prefix_of(oid) {
                break;
            }
            rows.entry(oid.last_arc()).or_default().push((oid.clone(), value.clone()));
        }
        Ok(rows
            .into_iter()
            .map(|(index, mut columns)| {
                columns.sort_by(|a, b| a.0.cmp(&b.0));
                TableRow { index, columns }
            })
            .collect())
    }

    /// Writes a read-write instance, returning the previous value.
    pub fn set(&mut self, instance: &Oid, value: MibValue) -> Result<MibValue, MibError> {
        let def = self.definition_for(instance)?;
        if !self.store.contains_key(instance) {
            return Err(MibError::NoSuchInstance(instance.clone()));
        }
        if def.access != Access::ReadWrite {
            return Err(MibError::AccessDenied(instance.clone()));
        }
        if def.syntax != value.syntax() {
            return Err(MibError::WrongType { oid: instance.clone(), expected: def.syntax, got: value.syntax() });
        }
        Ok(self.store.insert(instance.clone(), value).expect("checked present"))
    }

    /// Advances simulated time by `dt_ms` and applies every dynamics rule.
    ///
    /// Counters accumulate `rate * dt` in thousandths so that split ticks add up
    /// exactly; gauge walks take one step per whole-second boundary crossed.
    pub fn tick(&mut self, dt_ms: u64) {
        if dt_ms == 0 {
            return;
        }
        let before = self.sim_time_ms;
        let after = before + dt_ms;
        let boundaries = after / 1000 - before / 1000;
        for (oid, state) in self.dynamics.iter_mut() {
            let Some(value) = self.store.get_mut(oid) else { continue };
            match state {
                DynState::Counter { rate_per_s, milli_carry } => {
                    let total = *milli_carry as u128 + u128::from(*rate_per_s) * u128::from(dt_ms);
                    *milli_carry = (total % 1000) as u64;
                    let inc = ((total / 1000) % (1u128 << 32)) as u32;
                    match value {
                        MibValue::Counter32(v) | MibValue::TimeTicks(v) => *v = v.wrapping_add(inc),
                        _ => {}
                    }
                }
                DynState::Gauge { lo, hi, step, rng } => {
                    for _ in 0..boundaries {
                        let span = u64::from(*step) * 2 + 1;
                        let delta = (rng.next_u64() % span) as i64 - i64::from(*step);
                        match value {
                            MibValue::Gauge(v) => {
                                let next = (i64::from(*v) + delta).clamp(i64::from(*lo), i64::from(*hi));
                                *v = next as u32;
                            }
                            MibValue::Integer(v) => {
                                let next = (i64::from(*v) + delta)
                                    .clamp(i64::from(*lo), i64::from(*hi))
                                    .min(i64::from(i32::MAX));
                                *v = next as i32;
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        self.sim_time_ms = after;
    }

    /// Advances to an absolute simulated time; earlier times are ignored.
    pub fn advance_to(&mut self, now_ms: u64) {
        if now_ms > self.sim_time_ms {
            self.tick(now_ms - self.sim_time_ms);
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = (&Oid, &MibValue)> {
        self.store.iter()
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// A simulated device carrying both built-in schemas, `if_count` interface rows,
    /// an uptime counter and vendor gauges.
    pub fn simulated_device(device_id: &str, if_count: u32, seed: u64) -> Self {
        let mut mib = VirtualMib::new(seed);
        mib.load_schema_text(super::schema::MIB2_LITE, "MIB-II-lite").expect("built-in schema");
        mib.load_schema_text(super::schema::VENDOR_SIM, "VENDOR-SIM").expect("built-in schema");
        let sys = |arc: u32| Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, arc, 0]);
        let vendor = |arc: u32| Oid::from_slice(&[1, 3, 6, 1, 4, 1, 99999, 1, arc, 0]);
        let seed_values: [(Oid, MibValue); 12] = [
            (sys(1), MibValue::text("simulated managed device")),
            (sys(2), MibValue::Oid(Oid::from_slice(&[1, 3, 6, 1, 4, 1, 99999, 2, 1]))),
            (sys(3), MibValue::TimeTicks(0)),
            (sys(4), MibValue::text("noc@example.net")),
            (sys(5), MibValue::text(device_id)),
            (sys(6), MibValue::text("lab")),
            (Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 1, 0]), MibValue::Integer(if_count as i32)),
            (vendor(1), MibValue::Gauge(20)),
            (vendor(2), MibValue::Gauge(512)),
            (vendor(3), MibValue::Gauge(45)),
            (vendor(4), MibValue::Integer(0)),
            (vendor(5), MibValue::text("sim-1.0")),
        ];
        for (oid, value) in seed_values {
            mib.insert(oid, value).expect("seeded instance");
        }
        mib.set_dynamics(&sys(3), Dynamics::Counter { rate_per_s: 100 }).expect("uptime");
        mib.set_dynamics(&vendor(1), Dynamics::GaugeWalk { lo: 0, hi: 100, step: 5 }).expect("cpu");
        mib.set_dynamics(&vendor(2), Dynamics::GaugeWalk { lo: 64, hi: 1024, step: 16 }).expect("mem");
        mib.set_dynamics(&vendor(3), Dynamics::GaugeWalk { lo: 20, hi: 95, step: 2 }).expect("temp");
        for index in 1..=if_count {
            mib.add_interface_row(index).expect("interface row");
        }
        mib
    }

    fn add_interface_row(&mut self, index: u32) -> Result<(), MibError> {
        let col = |c: u32| Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, c, index]);
        let descr: String = format!("eth{}", index - 1);
        self.insert(col(1), MibValue::Integer(index as i32))?;
        self.insert(col(2), MibValue::text(&descr))?;
        self.insert(col(3), MibValue::Integer(6))?;
        self.insert(col(4), MibValue::Integer(1500))?;
        self.insert(col(5), MibValue::Gauge(1_000_000_000))?;
        self.insert(col(7), MibValue::Integer(1))?;
        self.insert(col(8), MibValue::Integer(1))?;
        self.insert(col(10), MibValue::Counter32(0))?;
        self.insert(col(14), MibValue::Counter32(0))?;
        self.insert(col(16), MibValue::Counter32(0))?;
        self.set_dynamics(&col(10), Dynamics::Counter { rate_per_s: 12_500 * index })?;
        self.set_dynamics(&col(14), Dynamics::Counter { rate_per_s: 1 })?;
        self.set_dynamics(&col(16), Dynamics::Counter { rate_per_s: 9_000 * index })?;
        Ok(())
    }
}
