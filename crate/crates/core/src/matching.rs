//! Grouping two datasets by their shared context variables.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ContextValue {
    Categorical(String),
    Numeric(f64),
}

impl ContextValue {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ContextValue::Categorical(_) => ColumnKind::Categorical,
            ContextValue::Numeric(_) => ColumnKind::Numeric,
        }
    }

    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            ContextValue::Numeric(v) => Some(*v),
            ContextValue::Categorical(_) => None,
        }
    }
}

impl PartialEq for ContextValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ContextValue {}

impl PartialOrd for ContextValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ContextValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ContextValue::Categorical(a), ContextValue::Categorical(b)) => a.cmp(b),
            (ContextValue::Numeric(a), ContextValue::Numeric(b)) => a.total_cmp(b),
            (ContextValue::Categorical(_), ContextValue::Numeric(_)) => Ordering::Less,
            (ContextValue::Numeric(_), ContextValue::Categorical(_)) => Ordering::Greater,
        }
    }
}

impl fmt::Display for ContextValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextValue::Categorical(s) => f.write_str(s),
            ContextValue::Numeric(v) => write!(f, "{v}"),
        }
    }
}

/// Context vector identifying a group. The empty key is the single group used
/// when there are no context variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct GroupKey(pub Vec<ContextValue>);

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("*");
        }
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A value column with per-row context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    schema: Vec<ColumnKind>,
    context: Vec<Vec<ContextValue>>,
}

impl Dataset {
    pub fn new(
        values: Vec<f64>,
        schema: Vec<ColumnKind>,
        context: Vec<Vec<ContextValue>>,
    ) -> Result<Self> {
        if values.len() != context.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} values but {} context rows",
                values.len(),
                context.len()
            )));
        }
        for (i, row) in context.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {i} has {} context entries, schema has {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (v, &k) in row.iter().zip(&schema) {
                if v.kind() != k {
                    return Err(Error::SchemaMismatch(format!(
                        "row {i}: entry {v} does not match column kind {k:?}"
                    )));
                }
                if let ContextValue::Numeric(x) = v {
                    if !x.is_finite() {
                        return Err(Error::NonFiniteSample);
                    }
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample);
        }
        Ok(Self {
            values,
            schema,
            context,
        })
    }

    /// A dataset without context variables.
    pub fn plain(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, Vec::new(), vec![Vec::new(); n])
    }

    /// A dataset whose context columns are all numeric.
    pub fn numeric(values: Vec<f64>, context: Vec<Vec<f64>>) -> Result<Self> {
        let d = context.first().map_or(0, Vec::len);
        let rows = context
            .into_iter()
            .map(|r| r.into_iter().map(ContextValue::Numeric).collect())
            .collect();
        Self::new(values, vec![ColumnKind::Numeric; d], rows)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema(&self) -> &[ColumnKind] {
        &self.schema
    }

    pub fn context(&self) -> &[Vec<ContextValue>] {
        &self.context
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    /// Numeric context as a row-major matrix; fails on categorical columns.
    pub fn numeric_context(&self) -> Result<Vec<Vec<f64>>> {
        if self.schema.contains(&ColumnKind::Categorical) {
            return Err(Error::SchemaMismatch(
                "numeric context required, found categorical column".into(),
            ));
        }
        Ok(self
            .context
            .iter()
            .map(|r| r.iter().filter_map(ContextValue::as_numeric).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Group {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Group {
    pub fn n_z(&self) -> usize {
        self.x.len().min(self.y.len())
    }
}

/// Rows that found no partner group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DropReport {
    pub x_rows: usize,
    pub y_rows: usize,
    /// Keys seen only in the X dataset.
    pub x_only_keys: Vec<String>,
    /// Keys seen only in the Y dataset.
    pub y_only_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupMap {
    pub groups: BTreeMap<GroupKey, Group>,
    pub upsilon: f64,
    pub dropped: DropReport,
}

impl GroupMap {
    /// Everything in one group, as when no context variables are available.
    pub fn single(x: Vec<f64>, y: Vec<f64>) -> Self {
        let mut groups = BTreeMap::new();
        groups.insert(GroupKey::default(), Group { x, y });
        Self {
            groups,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

fn check_schemas(dx: &Dataset, dy: &Dataset) -> Result<()> {
    if dx.schema != dy.schema {
        return Err(Error::SchemaMismatch(format!(
            "x context {:?} vs y context {:?}",
            dx.schema, dy.schema
        )));
    }
    Ok(())
}

fn partition(d: &Dataset) -> BTreeMap<GroupKey, Vec<f64>> {
    let mut out: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for (v, ctx) in d.values.iter().zip(&d.context) {
        out.entry(GroupKey(ctx.clone())).or_default().push(*v);
    }
    out
}

/// One group per context value present in both datasets.
pub fn group_exact(dx: &Dataset, dy: &Dataset) -> Result<GroupMap> {
    check_schemas(dx, dy)?;
    let mut px = partition(dx);
    let mut py = partition(dy);
    let mut map = GroupMap::default();
    let keys: Vec<GroupKey> = px.keys().chain(py.keys()).cloned().collect();
    for key in keys {
        match (px.remove(&key), py.remove(&key)) {
            (Some(x), Some(y)) => {
                map.groups.insert(key, Group { x, y });
            }
            (Some(x), None) => {
                map.dropped.x_rows += x.len();
                map.dropped.x_only_keys.push(key.to_string());
            }
            (None, Some(y)) => {
                map.dropped.y_rows += y.len();
                map.dropped.y_only_keys.push(key.to_string());
            }
            (None, None) => {}
        }
    }
    Ok(map)
}

fn within(row: &[ContextValue], center: &[ContextValue], upsilon: f64) -> bool {
    let mut sq = 0.0;
    for (a, b) in row.iter().zip(center) {
        match (a, b) {
            (ContextValue::Numeric(u), ContextValue::Numeric(v)) => sq += (u - v) * (u - v),
            _ if a != b => return false,
            _ => {}
        }
    }
    sq.sqrt() <= upsilon
}

/// One group per center: rows whose categorical context equals the center's
/// and whose numeric context lies within Euclidean distance `upsilon` of it.
/// Groups may overlap; centers that collect no X or no Y rows are dropped.
pub fn group_near(
    dx: &Dataset,
    dy: &Dataset,
    centers: &[Vec<ContextValue>],
    upsilon: f64,
) -> Result<GroupMap> {
    check_schemas(dx, dy)?;
    if !(upsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "upsilon must be > 0, got {upsilon}"
        )));
    }
    for c in centers {
        if c.len() != dx.schema.len() || c.iter().zip(&dx.schema).any(|(v, &k)| v.kind() != k) {
            return Err(Error::SchemaMismatch(format!(
                "center {} does not match the context schema",
                GroupKey(c.clone())
            )));
        }
    }
    let collect = |d: &Dataset, c: &[ContextValue]| -> Vec<f64> {
        d.values
            .iter()
            .zip(&d.context)
            .filter(|(_, ctx)| within(ctx, c, upsilon))
            .map(|(v, _)| *v)
            .collect()
    };
    let mut map = GroupMap {
        upsilon,
        ..Default::default()
    };
    let mut used_x = vec![false; dx.len()];
    let mut used_y = vec![false; dy.len()];
    for c in centers {
        let x = collect(dx, c);
        let y = collect(dy, c);
        let key = GroupKey(c.clone());
        match (x.is_empty(), y.is_empty()) {
            (false, false) => {
                for (u, ctx) in used_x.iter_mut().zip(&dx.context) {
                    *u |= within(ctx, c, upsilon);
                }
                for (u, ctx) in used_y.iter_mut().zip(&dy.context) {
                    *u |= within(ctx, c, upsilon);
                }
                map.groups.insert(key, Group { x, y });
            }
            (false, true) => map.dropped.x_only_keys.push(key.to_string()),
            (true, false) => map.dropped.y_only_keys.push(key.to_string()),
            (true, true) => {}
        }
    }
    map.dropped.x_rows = used_x.iter().filter(|u| !**u).count();
    map.dropped.y_rows = used_y.iter().filter(|u| !**u).count();
    Ok(map)
}
