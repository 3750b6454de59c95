//! CSV ingestion for the two transactional schemas: the e-commerce trio
//! (SKU / users / orders) and the vending-machine quartet (sales /
//! experiment / product / shelf).
//!
//! Both ingestors produce (train, test) task universes split
//! chronologically. A task is one (product, location) pair; its
//! observations are daily (price, demand) aggregates in the discounted
//! regime, with the regular-regime mean price and demand as the historical
//! feature pair.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::task::{FeatureTuple, Observation, ProductMeta, TaskDataset, TaskId, TaskUniverse};

/// Train/test universes from one chronological split.
#[derive(Debug, Clone)]
pub struct SplitUniverse {
    pub train: TaskUniverse,
    pub test: TaskUniverse,
}

/// Ingestion options; the category column selector covers schemas where the
/// product category is not an explicit column.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub k_shot: usize,
    pub category_column: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            k_shot: 5,
            category_column: "attribute1".into(),
        }
    }
}

// --- row types, exactly the documented schemas ------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SkuRow {
    pub sku_id: String,
    pub sku_type: i64,
    pub brand_id: String,
    pub attribute1: i64,
    pub attribute2: i64,
    pub activate_date: String,
    pub deactivate_date: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRow {
    pub user_id: String,
    pub user_level: i64,
    pub first_order_month: String,
    pub plus: i64,
    pub gender: String,
    pub age: String,
    pub marital_status: String,
    pub education: i64,
    pub purchase_power: i64,
    pub city_level: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub order_id: String,
    pub user_id: String,
    pub sku_id: String,
    pub order_date: String,
    pub order_time: String,
    pub quantity: i64,
    pub order_type: i64,
    pub promise: i64,
    pub original_unit_price: f64,
    pub final_unit_price: f64,
    pub direct_discount_per_unit: f64,
    pub quantity_discount_per_unit: f64,
    pub bundle_discount_per_unit: f64,
    pub coupon_discount_per_unit: f64,
    pub gift_item: i64,
    pub dc_ori: i64,
    pub dc_des: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendingSaleRow {
    pub business_area: String,
    pub shelf_code: String,
    pub order_code: String,
    pub product_code: String,
    pub user_code: String,
    pub pay_date: String,
    pub quantity_act: i64,
    pub sale_price: f64,
    pub real_total_price: f64,
    pub product_type: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendingExperimentRow {
    pub business_area: String,
    pub shelf_code: String,
    pub product_code: String,
    pub mtype: String,
    pub scene: String,
    pub second_type_name: String,
    pub sub_type_name: String,
    pub if_exper: i64,
    pub sale_price: f64,
    pub ab_price: f64,
    pub cross_price: f64,
    pub lower_price95: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendingProductRow {
    pub product_code: String,
    pub type_name: String,
    pub second_type_name: String,
    pub sub_type_name: String,
    pub is_common_product: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VendingShelfRow {
    pub business_area: String,
    pub shelf_code: String,
    pub is_low_sale: i64,
    pub can_fill_high_price: i64,
    pub old_user_rate: f64,
    pub grade: String,
}

// --- low-level CSV machinery -------------------------------------------------

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::MalformedFile {
            file: file.clone(),
            reason: e.to_string(),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::MalformedFile {
            file: file.clone(),
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::ParseError {
            file: file.clone(),
            row: i + 1,
            column: String::new(),
            reason: e.to_string(),
        })?;
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable(file));
    }
    Ok(Table {
        file,
        headers,
        rows,
    })
}

struct Columns<'a> {
    table: &'a Table,
    index: BTreeMap<&'a str, usize>,
}

impl<'a> Columns<'a> {
    fn new(table: &'a Table, required: &[&str]) -> Result<Self> {
        let index: BTreeMap<&str, usize> = table
            .headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), i))
            .collect();
        for &col in required {
            if !index.contains_key(col) {
                return Err(Error::SchemaMismatch {
                    file: table.file.clone(),
                    column: col.to_string(),
                });
            }
        }
        Ok(Columns { table, index })
    }

    fn raw(&self, row: usize, column: &str) -> Result<&'a str> {
        let idx = self.index[column];
        self.table.rows[row].get(idx).map(|s| s.as_str()).ok_or_else(|| {
            Error::ParseError {
                file: self.table.file.clone(),
                row: row + 1,
                column: column.to_string(),
                reason: "missing field".into(),
            }
        })
    }

    fn string(&self, row: usize, column: &str) -> Result<String> {
        Ok(self.raw(row, column)?.to_string())
    }

    fn int(&self, row: usize, column: &str) -> Result<i64> {
        let raw = self.raw(row, column)?;
        raw.parse::<i64>().map_err(|e| Error::ParseError {
            file: self.table.file.clone(),
            row: row + 1,
            column: column.to_string(),
            reason: format!("{raw:?}: {e}"),
        })
    }

    fn float(&self, row: usize, column: &str) -> Result<f64> {
        let raw = self.raw(row, column)?;
        raw.parse::<f64>().map_err(|e| Error::ParseError {
            file: self.table.file.clone(),
            row: row + 1,
            column: column.to_string(),
            reason: format!("{raw:?}: {e}"),
        })
    }

    fn date(&self, row: usize, column: &str) -> Result<i64> {
        let raw = self.raw(row, column)?;
        parse_date_ordinal(raw).ok_or_else(|| Error::ParseError {
            file: self.table.file.clone(),
            row: row + 1,
            column: column.to_string(),
            reason: format!("{raw:?}: expected yyyy-mm-dd"),
        })
    }
}

/// Strict yyyy-mm-dd into a comparable ordinal.
fn parse_date_ordinal(raw: &str) -> Option<i64> {
    let bytes = raw.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let year: i64 = raw[0..4].parse().ok()?;
    let month: i64 = raw[5..7].parse().ok()?;
    let day: i64 = raw[8..10].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    Some(year * 372 + (month - 1) * 31 + (day - 1))
}

// --- typed parsers ------------------------------------------------------------

const SKU_COLUMNS: [&str; 7] = [
    "sku_ID",
    "type",
    "brand_ID",
    "attribute1",
    "attribute2",
    "activate_date",
    "deactivate_date",
];

pub fn parse_skus(path: &Path) -> Result<Vec<SkuRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &SKU_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            Ok(SkuRow {
                sku_id: cols.string(r, "sku_ID")?,
                sku_type: cols.int(r, "type")?,
                brand_id: cols.string(r, "brand_ID")?,
                attribute1: cols.int(r, "attribute1")?,
                attribute2: cols.int(r, "attribute2")?,
                activate_date: cols.string(r, "activate_date")?,
                deactivate_date: cols.string(r, "deactivate_date")?,
            })
        })
        .collect()
}

const USER_COLUMNS: [&str; 10] = [
    "user_ID",
    "user_level",
    "first_order_month",
    "plus",
    "gender",
    "age",
    "marital_status",
    "education",
    "purchase_power",
    "city_level",
];

pub fn parse_users(path: &Path) -> Result<Vec<UserRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &USER_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            Ok(UserRow {
                user_id: cols.string(r, "user_ID")?,
                user_level: cols.int(r, "user_level")?,
                first_order_month: cols.string(r, "first_order_month")?,
                plus: cols.int(r, "plus")?,
                gender: cols.string(r, "gender")?,
                age: cols.string(r, "age")?,
                marital_status: cols.string(r, "marital_status")?,
                education: cols.int(r, "education")?,
                purchase_power: cols.int(r, "purchase_power")?,
                city_level: cols.int(r, "city_level")?,
            })
        })
        .collect()
}

const ORDER_COLUMNS: [&str; 17] = [
    "order_ID",
    "user_ID",
    "sku_ID",
    "order_date",
    "order_time",
    "quantity",
    "type",
    "promise",
    "original_unit_price",
    "final_unit_price",
    "direct_discount_per_unit",
    "quantity_discount_per_unit",
    "bundle_discount_per_unit",
    "coupon_discount_per_unit",
    "gift_item",
    "dc_ori",
    "dc_des",
];

pub fn parse_orders(path: &Path) -> Result<Vec<OrderRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &ORDER_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            cols.date(r, "order_date")?; // validated here, reused later
            Ok(OrderRow {
                order_id: cols.string(r, "order_ID")?,
                user_id: cols.string(r, "user_ID")?,
                sku_id: cols.string(r, "sku_ID")?,
                order_date: cols.string(r, "order_date")?,
                order_time: cols.string(r, "order_time")?,
                quantity: cols.int(r, "quantity")?,
                order_type: cols.int(r, "type")?,
                promise: cols.int(r, "promise")?,
                original_unit_price: cols.float(r, "original_unit_price")?,
                final_unit_price: cols.float(r, "final_unit_price")?,
                direct_discount_per_unit: cols.float(r, "direct_discount_per_unit")?,
                quantity_discount_per_unit: cols.float(r, "quantity_discount_per_unit")?,
                bundle_discount_per_unit: cols.float(r, "bundle_discount_per_unit")?,
                coupon_discount_per_unit: cols.float(r, "coupon_discount_per_unit")?,
                gift_item: cols.int(r, "gift_item")?,
                dc_ori: cols.int(r, "dc_ori")?,
                dc_des: cols.int(r, "dc_des")?,
            })
        })
        .collect()
}

impl OrderRow {
    pub fn to_fields(&self) -> Vec<String> {
        vec![
            self.order_id.clone(),
            self.user_id.clone(),
            self.sku_id.clone(),
            self.order_date.clone(),
            self.order_time.clone(),
            self.quantity.to_string(),
            self.order_type.to_string(),
            self.promise.to_string(),
            self.original_unit_price.to_string(),
            self.final_unit_price.to_string(),
            self.direct_discount_per_unit.to_string(),
            self.quantity_discount_per_unit.to_string(),
            self.bundle_discount_per_unit.to_string(),
            self.coupon_discount_per_unit.to_string(),
            self.gift_item.to_string(),
            self.dc_ori.to_string(),
            self.dc_des.to_string(),
        ]
    }

    pub fn table_to_csv(rows: &[OrderRow]) -> String {
        let mut out = ORDER_COLUMNS.join(",");
        out.push('\n');
        for row in rows {
            out.push_str(&row.to_fields().join(","));
            out.push('\n');
        }
        out
    }
}

const VENDING_SALE_COLUMNS: [&str; 10] = [
    "business_area",
    "shelf_code",
    "order_code",
    "product_code",
    "user_code",
    "pay_date",
    "quantity_act",
    "sale_price",
    "real_total_price",
    "product_type",
];

pub fn parse_vending_sales(path: &Path) -> Result<Vec<VendingSaleRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &VENDING_SALE_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            cols.date(r, "pay_date")?;
            Ok(VendingSaleRow {
                business_area: cols.string(r, "business_area")?,
                shelf_code: cols.string(r, "shelf_code")?,
                order_code: cols.string(r, "order_code")?,
                product_code: cols.string(r, "product_code")?,
                user_code: cols.string(r, "user_code")?,
                pay_date: cols.string(r, "pay_date")?,
                quantity_act: cols.int(r, "quantity_act")?,
                sale_price: cols.float(r, "sale_price")?,
                real_total_price: cols.float(r, "real_total_price")?,
                product_type: cols.string(r, "product_type")?,
            })
        })
        .collect()
}

const VENDING_EXPERIMENT_COLUMNS: [&str; 12] = [
    "business_area",
    "shelf_code",
    "product_code",
    "mtype",
    "scene",
    "second_type_name",
    "sub_type_name",
    "if_exper",
    "sale_price",
    "ab_price",
    "cross_price",
    "lower_price95",
];

pub fn parse_vending_experiment(path: &Path) -> Result<Vec<VendingExperimentRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &VENDING_EXPERIMENT_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            Ok(VendingExperimentRow {
                business_area: cols.string(r, "business_area")?,
                shelf_code: cols.string(r, "shelf_code")?,
                product_code: cols.string(r, "product_code")?,
                mtype: cols.string(r, "mtype")?,
                scene: cols.string(r, "scene")?,
                second_type_name: cols.string(r, "second_type_name")?,
                sub_type_name: cols.string(r, "sub_type_name")?,
                if_exper: cols.int(r, "if_exper")?,
                sale_price: cols.float(r, "sale_price")?,
                ab_price: cols.float(r, "ab_price")?,
                cross_price: cols.float(r, "cross_price")?,
                lower_price95: cols.int(r, "lower_price95")?,
            })
        })
        .collect()
}

const VENDING_PRODUCT_COLUMNS: [&str; 5] = [
    "product_code",
    "type_name",
    "second_type_name",
    "sub_type_name",
    "is_common_product",
];

pub fn parse_vending_products(path: &Path) -> Result<Vec<VendingProductRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &VENDING_PRODUCT_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            let flag = cols.int(r, "is_common_product")?;
            Ok(VendingProductRow {
                product_code: cols.string(r, "product_code")?,
                type_name: cols.string(r, "type_name")?,
                second_type_name: cols.string(r, "second_type_name")?,
                sub_type_name: cols.string(r, "sub_type_name")?,
                is_common_product: flag != 0,
            })
        })
        .collect()
}

const VENDING_SHELF_COLUMNS: [&str; 6] = [
    "business_area",
    "shelf_code",
    "is_low_sale",
    "can_fill_high_price",
    "old_user_rate",
    "grade",
];

pub fn parse_vending_shelves(path: &Path) -> Result<Vec<VendingShelfRow>> {
    let table = read_table(path)?;
    let cols = Columns::new(&table, &VENDING_SHELF_COLUMNS)?;
    (0..table.rows.len())
        .map(|r| {
            Ok(VendingShelfRow {
                business_area: cols.string(r, "business_area")?,
                shelf_code: cols.string(r, "shelf_code")?,
                is_low_sale: cols.int(r, "is_low_sale")?,
                can_fill_high_price: cols.int(r, "can_fill_high_price")?,
                old_user_rate: cols.float(r, "old_user_rate")?,
                grade: cols.string(r, "grade")?,
            })
        })
        .collect()
}

// --- task building -------------------------------------------------------------

fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

fn sorted_index<T: Ord + Clone>(values: impl Iterator<Item = T>) -> Vec<T> {
    let set: BTreeSet<T> = values.collect();
    set.into_iter().collect()
}

/// Daily (price, demand) aggregates: quantity-weighted mean unit price and
/// total quantity per day.
#[derive(Debug, Default, Clone)]
struct DailyAggregate {
    quantity: f64,
    price_weighted: f64,
}

impl DailyAggregate {
    fn add(&mut self, price: f64, quantity: f64) {
        self.quantity += quantity;
        self.price_weighted += price * quantity;
    }

    fn mean_price(&self) -> f64 {
        if self.quantity > 0.0 {
            self.price_weighted / self.quantity
        } else {
            0.0
        }
    }
}

struct RegimeData {
    /// (day ordinal) -> aggregate, discounted regime.
    promo: BTreeMap<i64, DailyAggregate>,
    /// Regular-regime totals over the window.
    regular_quantity: f64,
    regular_price_weighted: f64,
}

impl RegimeData {
    fn new() -> Self {
        RegimeData {
            promo: BTreeMap::new(),
            regular_quantity: 0.0,
            regular_price_weighted: 0.0,
        }
    }

    fn hist_price(&self) -> f64 {
        if self.regular_quantity > 0.0 {
            self.regular_price_weighted / self.regular_quantity
        } else {
            0.0
        }
    }
}

struct UniverseBuilder {
    feature_dim: usize,
    k_shot: usize,
    seed: u64,
    tasks: Vec<TaskDataset>,
}

impl UniverseBuilder {
    fn new(feature_dim: usize, k_shot: usize, seed: u64) -> Self {
        UniverseBuilder {
            feature_dim,
            k_shot,
            seed,
            tasks: Vec::new(),
        }
    }

    /// Build a task when it has enough discounted-regime days for a
    /// k-shot split; under-observed pairs are skipped.
    fn push_task(
        &mut self,
        id: TaskId,
        hierarchy: &str,
        product_features: Vec<f64>,
        env_features: Vec<f64>,
        regime: &RegimeData,
        window_days: usize,
    ) {
        if regime.promo.len() <= self.k_shot {
            return;
        }
        let hist_price = regime.hist_price();
        let hist_demand = regime.regular_quantity / window_days.max(1) as f64;
        let samples: Vec<Observation> = regime
            .promo
            .values()
            .map(|agg| Observation {
                x: FeatureTuple {
                    product_features: product_features.clone(),
                    environment_features: env_features.clone(),
                    hist_price,
                    hist_demand,
                    query_price: agg.mean_price(),
                },
                y: agg.quantity,
            })
            .collect();
        let split_seed = crate::seeding::derive_seed(self.seed, &[0x70, id.seed_label()]);
        if let Ok(task) =
            crate::task::split_support_query(id, hierarchy, samples, self.k_shot, split_seed)
        {
            self.tasks.push(task);
        }
    }

    fn build(self, products: Vec<ProductMeta>, rng_seed: u64) -> TaskUniverse {
        TaskUniverse {
            tasks: self.tasks,
            products,
            feature_dim: self.feature_dim,
            rng_seed,
        }
    }
}

/// Day-indexed series over a date range, with gaps filled by zero sales and
/// the previous known price.
fn fill_series(days: &[i64], daily: &BTreeMap<i64, DailyAggregate>) -> (Vec<f64>, Vec<f64>) {
    let mut sales = Vec::with_capacity(days.len());
    let mut prices = Vec::with_capacity(days.len());
    let mut last_price = daily.values().next().map_or(0.0, |a| a.mean_price());
    for day in days {
        match daily.get(day) {
            Some(agg) => {
                sales.push(agg.quantity);
                last_price = agg.mean_price();
                prices.push(last_price);
            }
            None => {
                sales.push(0.0);
                prices.push(last_price);
            }
        }
    }
    (sales, prices)
}

/// Split a sorted day list into two chronological windows of the given
/// nominal length: the leading window and the trailing window. Shorter
/// spans fall back to halves.
fn chronological_windows(days: &[i64], window: usize) -> (Vec<i64>, Vec<i64>) {
    if days.len() >= 2 * window {
        (
            days[..window].to_vec(),
            days[days.len() - window..].to_vec(),
        )
    } else {
        let mid = days.len() / 2;
        (days[..mid].to_vec(), days[mid..].to_vec())
    }
}

pub struct JdPaths<'a> {
    pub sku: &'a Path,
    pub users: &'a Path,
    pub orders: &'a Path,
}

/// Ingest the e-commerce trio. Orders aggregate per (sku, destination
/// region, price regime, day); the discounted regime supplies the
/// observations, the regular regime the historical pair. The first 15 days
/// form the training window and the last 15 the testing window.
pub fn ingest_jd(paths: &JdPaths, options: &IngestOptions) -> Result<SplitUniverse> {
    let skus = parse_skus(paths.sku)?;
    let _users = parse_users(paths.users)?;
    let orders = parse_orders(paths.orders)?;

    let sku_ids: Vec<String> = sorted_index(skus.iter().map(|s| s.sku_id.clone()));
    let sku_index: BTreeMap<&str, usize> = sku_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let sku_by_id: BTreeMap<&str, &SkuRow> =
        skus.iter().map(|s| (s.sku_id.as_str(), s)).collect();

    let category_of = |sku: &SkuRow| -> Result<String> {
        Ok(match options.category_column.as_str() {
            "attribute1" => sku.attribute1.to_string(),
            "attribute2" => sku.attribute2.to_string(),
            "brand_ID" => sku.brand_id.clone(),
            "type" => sku.sku_type.to_string(),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown category column {other:?}"
                )))
            }
        })
    };

    let mut categories: Vec<String> = Vec::new();
    for sku in &skus {
        categories.push(category_of(sku)?);
    }
    let categories = sorted_index(categories.into_iter());
    let regions = sorted_index(orders.iter().map(|o| o.dc_des));
    let region_index: BTreeMap<i64, usize> =
        regions.iter().enumerate().map(|(i, &r)| (r, i)).collect();

    let feature_dim = categories.len() + regions.len() + 3;
    let all_days = sorted_index(orders.iter().filter_map(|o| parse_date_ordinal(&o.order_date)));
    if all_days.is_empty() {
        return Err(Error::EmptyTable("orders".into()));
    }
    let (train_days, test_days) = chronological_windows(&all_days, 15);

    // Per (sku, region, window): regime aggregates. A row is discounted when
    // the final price sits strictly below the original.
    let is_windowed = |day: i64, window: &[i64]| window.binary_search(&day).is_ok();
    let mut per_window: [BTreeMap<(usize, usize), RegimeData>; 2] =
        [BTreeMap::new(), BTreeMap::new()];
    let mut product_daily: BTreeMap<usize, BTreeMap<i64, DailyAggregate>> = BTreeMap::new();

    for order in &orders {
        let Some(&sku_idx) = sku_index.get(order.sku_id.as_str()) else {
            continue; // order references an unlisted product
        };
        let day = parse_date_ordinal(&order.order_date).expect("validated during parsing");
        let region_idx = region_index[&order.dc_des];
        let quantity = order.quantity as f64;
        product_daily
            .entry(sku_idx)
            .or_default()
            .entry(day)
            .or_default()
            .add(order.final_unit_price, quantity);

        let windows = [
            is_windowed(day, &train_days),
            is_windowed(day, &test_days),
        ];
        for (w, in_window) in windows.into_iter().enumerate() {
            if !in_window {
                continue;
            }
            let regime = per_window[w]
                .entry((sku_idx, region_idx))
                .or_insert_with(RegimeData::new);
            if order.final_unit_price < order.original_unit_price - 1e-9 {
                regime
                    .promo
                    .entry(day)
                    .or_default()
                    .add(order.final_unit_price, quantity);
            } else {
                regime.regular_quantity += quantity;
                regime.regular_price_weighted += order.final_unit_price * quantity;
            }
        }
    }

    // Product table shared by both universes.
    let mut products = Vec::with_capacity(sku_ids.len());
    for sku_id in &sku_ids {
        let sku = sku_by_id[sku_id.as_str()];
        let daily = product_daily.remove(&sku_index[sku_id.as_str()]).unwrap_or_default();
        let (sales_history, price_history) = fill_series(&all_days, &daily);
        products.push(ProductMeta {
            features: vec![sku.sku_type as f64, sku.attribute1 as f64, sku.attribute2 as f64],
            brand: sku.brand_id.clone(),
            hierarchy: category_of(sku)?,
            cluster: None,
            sales_history,
            price_history,
        });
    }

    let mut result = Vec::with_capacity(2);
    for (w, window_days) in [&train_days, &test_days].into_iter().enumerate() {
        let mut builder = UniverseBuilder::new(feature_dim, options.k_shot, w as u64);
        for ((sku_idx, region_idx), regime) in &per_window[w] {
            let sku = sku_by_id[sku_ids[*sku_idx].as_str()];
            let category = category_of(sku)?;
            let cat_idx = categories.iter().position(|c| *c == category).unwrap();
            builder.push_task(
                TaskId::new(*sku_idx, *region_idx),
                &category,
                one_hot(cat_idx, categories.len()),
                one_hot(*region_idx, regions.len()),
                regime,
                window_days.len(),
            );
        }
        result.push(builder.build(products.clone(), w as u64));
    }

    let test = result.pop().unwrap();
    let train = result.pop().unwrap();
    if train.tasks.is_empty() && test.tasks.is_empty() {
        return Err(Error::EmptyTable(
            "no (sku, region) pair has enough discounted days".into(),
        ));
    }
    Ok(SplitUniverse { train, test })
}

pub struct VendingPaths<'a> {
    pub sales: &'a Path,
    pub experiment: &'a Path,
    pub product: &'a Path,
    pub shelf: &'a Path,
}

/// Ingest the vending-machine quartet. Tasks are (product, shelf) pairs;
/// the base-price period (leading 20 days) supplies the historical pair and
/// the adjusted-price period the observations, split into train (leading
/// 10 adjusted days) and test (trailing 10).
pub fn ingest_vending(paths: &VendingPaths, options: &IngestOptions) -> Result<SplitUniverse> {
    let sales = parse_vending_sales(paths.sales)?;
    let experiments = parse_vending_experiment(paths.experiment)?;
    let products_rows = parse_vending_products(paths.product)?;
    let shelves = parse_vending_shelves(paths.shelf)?;

    let product_codes: Vec<String> = sorted_index(products_rows.iter().map(|p| p.product_code.clone()));
    let product_index: BTreeMap<&str, usize> = product_codes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let product_by_code: BTreeMap<&str, &VendingProductRow> = products_rows
        .iter()
        .map(|p| (p.product_code.as_str(), p))
        .collect();

    let shelf_codes: Vec<String> = sorted_index(shelves.iter().map(|s| s.shelf_code.clone()));
    let shelf_index: BTreeMap<&str, usize> = shelf_codes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let shelf_by_code: BTreeMap<&str, &VendingShelfRow> = shelves
        .iter()
        .map(|s| (s.shelf_code.as_str(), s))
        .collect();

    let categories = sorted_index(products_rows.iter().map(|p| p.type_name.clone()));
    let regions = sorted_index(shelves.iter().map(|s| s.business_area.clone()));
    // Scene labels come from the experiment table; pairs without one share
    // a "none" bucket.
    let scene_for = |shelf: &str, product: &str| -> String {
        experiments
            .iter()
            .find(|e| e.shelf_code == shelf && e.product_code == product)
            .map(|e| e.mtype.clone())
            .unwrap_or_else(|| "none".into())
    };
    let mut scene_labels: Vec<String> = experiments.iter().map(|e| e.mtype.clone()).collect();
    scene_labels.push("none".into());
    let scenes = sorted_index(scene_labels.into_iter());

    let feature_dim = categories.len() + regions.len() + scenes.len() + 3;
    let all_days = sorted_index(sales.iter().filter_map(|s| parse_date_ordinal(&s.pay_date)));
    if all_days.is_empty() {
        return Err(Error::EmptyTable("sales".into()));
    }

    // Base period: leading 20 days (or the leading half). The adjusted
    // period is everything after it, split 10/10 into train/test windows.
    let base_len = if all_days.len() >= 40 { 20 } else { all_days.len() / 2 };
    let base_days: Vec<i64> = all_days[..base_len].to_vec();
    let adjusted_days: Vec<i64> = all_days[base_len..].to_vec();
    let (train_days, test_days) = chronological_windows(&adjusted_days, 10);

    let in_set = |day: i64, set: &[i64]| set.binary_search(&day).is_ok();
    let mut base: BTreeMap<(usize, usize), RegimeData> = BTreeMap::new();
    let mut per_window: [BTreeMap<(usize, usize), BTreeMap<i64, DailyAggregate>>; 2] =
        [BTreeMap::new(), BTreeMap::new()];
    let mut product_daily: BTreeMap<usize, BTreeMap<i64, DailyAggregate>> = BTreeMap::new();

    for sale in &sales {
        let (Some(&p_idx), Some(&s_idx)) = (
            product_index.get(sale.product_code.as_str()),
            shelf_index.get(sale.shelf_code.as_str()),
        ) else {
            continue;
        };
        let day = parse_date_ordinal(&sale.pay_date).expect("validated during parsing");
        let quantity = sale.quantity_act as f64;
        product_daily
            .entry(p_idx)
            .or_default()
            .entry(day)
            .or_default()
            .add(sale.sale_price, quantity);

        if in_set(day, &base_days) {
            let regime = base.entry((p_idx, s_idx)).or_insert_with(RegimeData::new);
            regime.regular_quantity += quantity;
            regime.regular_price_weighted += sale.sale_price * quantity;
        } else {
            for (w, window) in [&train_days, &test_days].into_iter().enumerate() {
                if in_set(day, window) {
                    per_window[w]
                        .entry((p_idx, s_idx))
                        .or_default()
                        .entry(day)
                        .or_default()
                        .add(sale.sale_price, quantity);
                }
            }
        }
    }

    let mut products = Vec::with_capacity(product_codes.len());
    for code in &product_codes {
        let row = product_by_code[code.as_str()];
        let cat_idx = categories.iter().position(|c| *c == row.type_name).unwrap();
        let daily = product_daily
            .remove(&product_index[code.as_str()])
            .unwrap_or_default();
        let (sales_history, price_history) = fill_series(&all_days, &daily);
        products.push(ProductMeta {
            features: one_hot(cat_idx, categories.len()),
            brand: row.type_name.clone(),
            hierarchy: row.type_name.clone(),
            cluster: None,
            sales_history,
            price_history,
        });
    }

    let mut result = Vec::with_capacity(2);
    for (w, window_days) in [&train_days, &test_days].into_iter().enumerate() {
        let mut builder = UniverseBuilder::new(feature_dim, options.k_shot, 100 + w as u64);
        for ((p_idx, s_idx), promo) in &per_window[w] {
            let product = product_by_code[product_codes[*p_idx].as_str()];
            let shelf = shelf_by_code[shelf_codes[*s_idx].as_str()];
            let cat_idx = categories.iter().position(|c| *c == product.type_name).unwrap();
            let region_idx = regions.iter().position(|r| *r == shelf.business_area).unwrap();
            let scene = scene_for(&shelf.shelf_code, &product.product_code);
            let scene_idx = scenes.iter().position(|s| *s == scene).unwrap();
            let mut env = one_hot(region_idx, regions.len());
            env.extend(one_hot(scene_idx, scenes.len()));

            let mut regime = RegimeData::new();
            regime.promo = promo.clone();
            if let Some(b) = base.get(&(*p_idx, *s_idx)) {
                regime.regular_quantity = b.regular_quantity;
                regime.regular_price_weighted = b.regular_price_weighted;
            }
            builder.push_task(
                TaskId::new(*p_idx, *s_idx),
                &product.type_name,
                one_hot(cat_idx, categories.len()),
                env,
                &regime,
                base_days.len().max(window_days.len()),
            );
        }
        result.push(builder.build(products.clone(), 100 + w as u64));
    }

    let test = result.pop().unwrap();
    let train = result.pop().unwrap();
    if train.tasks.is_empty() && test.tasks.is_empty() {
        return Err(Error::EmptyTable(
            "no (product, shelf) pair has enough adjusted-price days".into(),
        ));
    }
    Ok(SplitUniverse { train, test })
}
