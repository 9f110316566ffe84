//! Zones, tessellations and sparse OD flow matrices.
//!
//! Zones are read from `zones.csv`:
//!
//! ```text
//! zone_id,lon,lat,population,svi_total,svi_socioeconomic,svi_household,svi_ethnicity,svi_transportation[,poi_<name>...]
//! ```
//!
//! and flows from `flows.csv` with header `origin_id,destination_id,flow`.
//! Zone order is file order; all indices in this crate refer to it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::write_atomic;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error)]
pub enum GeodataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: csv: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}`: cannot parse `{value}` as a finite number")]
    BadNumber {
        row: u64,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}` = {value} outside [{min}, {max}]")]
    OutOfRange {
        row: u64,
        column: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("row {row}: duplicate zone id `{id}`")]
    DuplicateId { row: u64, id: String },
    #[error("row {row}: unknown zone id `{id}`")]
    UnknownZone { row: u64, id: String },
    #[error("row {row}: negative flow {value}")]
    NegativeFlow { row: u64, value: f64 },
    #[error("zone `{zone}` has {found} POI values, expected {expected}")]
    PoiDimension {
        zone: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid zone `{zone}`: {reason}")]
    InvalidZone { zone: String, reason: String },
    #[error("flow entry ({origin}, {destination}) outside a tessellation of {zones} zones")]
    IndexOutOfRange {
        origin: usize,
        destination: usize,
        zones: usize,
    },
    #[error("invalid flow value {value} at ({origin}, {destination})")]
    InvalidFlow {
        origin: usize,
        destination: usize,
        value: f64,
    },
}

/// The five SVI percentile themes, overall index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SviTheme {
    Total,
    Socioeconomic,
    Household,
    Ethnicity,
    Transportation,
}

impl SviTheme {
    pub const ALL: [SviTheme; 5] = [
        SviTheme::Total,
        SviTheme::Socioeconomic,
        SviTheme::Household,
        SviTheme::Ethnicity,
        SviTheme::Transportation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name in `zones.csv`.
    pub fn column(self) -> &'static str {
        match self {
            SviTheme::Total => "svi_total",
            SviTheme::Socioeconomic => "svi_socioeconomic",
            SviTheme::Household => "svi_household",
            SviTheme::Ethnicity => "svi_ethnicity",
            SviTheme::Transportation => "svi_transportation",
        }
    }

    /// Row label used in rendered reports.
    pub fn label(self) -> &'static str {
        match self {
            SviTheme::Total => "Fairness-SVI-Total",
            SviTheme::Socioeconomic => "Fairness-Socioeconomic",
            SviTheme::Household => "Fairness-Household",
            SviTheme::Ethnicity => "Fairness-Ethnicity",
            SviTheme::Transportation => "Fairness-Transportation",
        }
    }
}

impl fmt::Display for SviTheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.column()[4..])
    }
}

/// Percentile per SVI theme, each in `[0, 1]`; larger means more vulnerable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviScores(pub [f64; 5]);

impl SviScores {
    pub fn get(&self, theme: SviTheme) -> f64 {
        self.0[theme.index()]
    }

    pub fn set(&mut self, theme: SviTheme, value: f64) {
        self.0[theme.index()] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub population: f64,
    pub svi: SviScores,
    pub poi: Vec<f64>,
}

impl Zone {
    fn validate(&self) -> Result<(), GeodataError> {
        let bad = |reason: String| GeodataError::InvalidZone {
            zone: self.id.clone(),
            reason,
        };
        if !(-180.0..=180.0).contains(&self.lon) || !(-90.0..=90.0).contains(&self.lat) {
            return Err(bad(format!("coordinates ({}, {})", self.lon, self.lat)));
        }
        if !(self.population >= 0.0 && self.population.is_finite()) {
            return Err(bad(format!("population {}", self.population)));
        }
        for theme in SviTheme::ALL {
            let v = self.svi.get(theme);
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{} = {v}", theme.column())));
            }
        }
        if let Some(v) = self.poi.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(bad(format!("POI value {v}")));
        }
        Ok(())
    }
}

/// Great-circle (haversine) distance between two zone centroids in km.
pub fn distance(a: &Zone, b: &Zone) -> f64 {
    haversine_km(a.lon, a.lat, b.lon, b.lat)
}

pub fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// An ordered set of zones with a lazily built pairwise distance table.
#[derive(Debug)]
pub struct Tessellation {
    zones: Vec<Zone>,
    poi_names: Vec<String>,
    index: HashMap<String, usize>,
    distances: OnceLock<Vec<f64>>,
}

impl Clone for Tessellation {
    fn clone(&self) -> Self {
        Tessellation {
            zones: self.zones.clone(),
            poi_names: self.poi_names.clone(),
            index: self.index.clone(),
            distances: OnceLock::new(),
        }
    }
}

impl PartialEq for Tessellation {
    fn eq(&self, other: &Self) -> bool {
        self.zones == other.zones && self.poi_names == other.poi_names
    }
}

impl Tessellation {
    /// Builds a tessellation, checking every zone invariant.
    pub fn new(zones: Vec<Zone>, poi_names: Vec<String>) -> Result<Self, GeodataError> {
        let mut index = HashMap::with_capacity(zones.len());
        for (row, zone) in zones.iter().enumerate() {
            zone.validate()?;
            if zone.poi.len() != poi_names.len() {
                return Err(GeodataError::PoiDimension {
                    zone: zone.id.clone(),
                    expected: poi_names.len(),
                    found: zone.poi.len(),
                });
            }
            if index.insert(zone.id.clone(), row).is_some() {
                return Err(GeodataError::DuplicateId {
                    row: row as u64 + 1,
                    id: zone.id.clone(),
                });
            }
        }
        Ok(Tessellation {
            zones,
            poi_names,
            index,
            distances: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, i: usize) -> &Zone {
        &self.zones[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn poi_names(&self) -> &[String] {
        &self.poi_names
    }

    pub fn poi_dim(&self) -> usize {
        self.poi_names.len()
    }

    pub fn total_population(&self) -> f64 {
        self.zones.iter().map(|z| z.population).sum()
    }

    /// Distance between zones `i` and `j` in km, from the cached table.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let n = self.zones.len();
        let table = self.distances.get_or_init(|| {
            let mut d = vec![0.0; n * n];
            for a in 0..n {
                for b in (a + 1)..n {
                    let v = distance(&self.zones[a], &self.zones[b]);
                    d[a * n + b] = v;
                    d[b * n + a] = v;
                }
            }
            d
        });
        table[i * n + j]
    }
}

const ZONE_COLUMNS: [&str; 4] = ["zone_id", "lon", "lat", "population"];

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, GeodataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| GeodataError::MissingColumn(name.to_string()))
}

fn parse_field(record: &csv::StringRecord, col: usize, name: &str, row: u64) -> Result<f64, GeodataError> {
    let raw = record.get(col).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(GeodataError::BadNumber {
            row,
            column: name.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn check_range(value: f64, name: &str, row: u64, min: f64, max: f64) -> Result<f64, GeodataError> {
    if (min..=max).contains(&value) {
        Ok(value)
    } else {
        Err(GeodataError::OutOfRange {
            row,
            column: name.to_string(),
            value,
            min,
            max,
        })
    }
}

fn read_to_string(path: &Path) -> Result<String, GeodataError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| GeodataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(s)
}

/// Loads `zones.csv`. Row numbers in errors are file line numbers.
pub fn load_zones(path: &Path) -> Result<Tessellation, GeodataError> {
    parse_zones(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_zones(text: &str, origin: &str) -> Result<Tessellation, GeodataError> {
    let csv_err = |source| GeodataError::Csv {
        path: origin.to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let base: Vec<usize> = ZONE_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_, _>>()?;
    let svi_cols: Vec<usize> = SviTheme::ALL
        .iter()
        .map(|t| column_index(&headers, t.column()))
        .collect::<Result<_, _>>()?;
    let poi: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("poi_").map(|name| (i, name.to_string())))
        .collect();

    let mut zones = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(0, |p| p.line());
        let id = record.get(base[0]).unwrap_or("").to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(GeodataError::DuplicateId { row, id });
        }
        let lon = check_range(parse_field(&record, base[1], "lon", row)?, "lon", row, -180.0, 180.0)?;
        let lat = check_range(parse_field(&record, base[2], "lat", row)?, "lat", row, -90.0, 90.0)?;
        let population = check_range(
            parse_field(&record, base[3], "population", row)?,
            "population",
            row,
            0.0,
            f64::MAX,
        )?;
        let mut svi = SviScores([0.0; 5]);
        for (theme, &col) in SviTheme::ALL.iter().zip(&svi_cols) {
            let name = theme.column();
            svi.set(*theme, check_range(parse_field(&record, col, name, row)?, name, row, 0.0, 1.0)?);
        }
        let poi_values = poi
            .iter()
            .map(|(col, name)| {
                let column = format!("poi_{name}");
                check_range(parse_field(&record, *col, &column, row)?, &column, row, 0.0, f64::MAX)
            })
            .collect::<Result<Vec<_>, _>>()?;
        zones.push(Zone {
            id,
            lon,
            lat,
            population,
            svi,
            poi: poi_values,
        });
    }
    Tessellation::new(zones, poi.into_iter().map(|(_, n)| n).collect())
}

/// Renders `zones.csv`. Floats use the shortest representation that parses back exactly.
pub fn zones_to_csv(tess: &Tessellation) -> String {
    let mut out = String::from("zone_id,lon,lat,population");
    for theme in SviTheme::ALL {
        out.push(',');
        out.push_str(theme.column());
    }
    for name in tess.poi_names() {
        out.push_str(",poi_");
        out.push_str(name);
    }
    out.push('\n');
    for z in tess.zones() {
        out.push_str(&format!("{},{},{},{}", z.id, z.lon, z.lat, z.population));
        for v in z.svi.0 {
            out.push_str(&format!(",{v}"));
        }
        for v in &z.poi {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_zones(tess: &Tessellation, path: &Path) -> crate::Result<()> {
    write_atomic(path, zones_to_csv(tess).as_bytes())
}

/// Sparse non-negative OD flows over a tessellation of `n_zones` zones.
///
/// Only strictly positive flows are stored. Per-origin totals and the grand
/// total are computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    n_zones: usize,
    entries: BTreeMap<(usize, usize), f64>,
    origin_totals: Vec<f64>,
    total: f64,
}

impl FlowMatrix {
    pub fn empty(n_zones: usize) -> Self {
        FlowMatrix {
            n_zones,
            entries: BTreeMap::new(),
            origin_totals: vec![0.0; n_zones],
            total: 0.0,
        }
    }

    /// Builds a matrix from `(origin, destination, flow)` triples.
    /// Duplicates are summed and zeros dropped.
    pub fn from_entries<I>(n_zones: usize, entries: I) -> Result<Self, GeodataError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (o, d, v) in entries {
            if o >= n_zones || d >= n_zones {
                return Err(GeodataError::IndexOutOfRange {
                    origin: o,
                    destination: d,
                    zones: n_zones,
                });
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GeodataError::InvalidFlow {
                    origin: o,
                    destination: d,
                    value: v,
                });
            }
            if v > 0.0 {
                *map.entry((o, d)).or_insert(0.0) += v;
            }
        }
        Ok(Self::from_map(n_zones, map))
    }

    fn from_map(n_zones: usize, entries: BTreeMap<(usize, usize), f64>) -> Self {
        let mut origin_totals = vec![0.0; n_zones];
        for (&(o, _), &v) in &entries {
            origin_totals[o] += v;
        }
        let total = origin_totals.iter().sum();
        FlowMatrix {
            n_zones,
            entries,
            origin_totals,
            total,
        }
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    /// Number of stored (positive) entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, origin: usize, destination: usize) -> f64 {
        self.entries.get(&(origin, destination)).copied().unwrap_or(0.0)
    }

    /// Entries in (origin, destination) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(o, d), &v)| (o, d, v))
    }

    /// Stored entries of one origin, by destination.
    pub fn row(&self, origin: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .range((origin, 0)..(origin + 1, 0))
            .map(|(&(_, d), &v)| (d, v))
    }

    pub fn origin_totals(&self) -> &[f64] {
        &self.origin_totals
    }

    pub fn origin_total(&self, origin: usize) -> f64 {
        self.origin_totals[origin]
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Applies `f` to every stored entry; results equal to zero are dropped.
    pub fn map_entries<F>(&self, mut f: F) -> Result<Self, GeodataError>
    where
        F: FnMut(usize, usize, f64) -> f64,
    {
        Self::from_entries(self.n_zones, self.iter().map(|(o, d, v)| (o, d, f(o, d, v))))
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, GeodataError> {
        self.map_entries(|_, _, v| v * factor)
    }
}

/// Loads `flows.csv` against `tess`.
pub fn load_flows(path: &Path, tess: &Tessellation) -> Result<FlowMatrix, GeodataError> {
    parse_flows(&read_to_string(path)?, &path.display().to_string(), tess)
}

pub fn parse_flows(text: &str, origin: &str, tess: &Tessellation) -> Result<FlowMatrix, GeodataError> {
    let csv_err = |source| GeodataError::Csv {
        path: origin.to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let o_col = column_index(&headers, "origin_id")?;
    let d_col = column_index(&headers, "destination_id")?;
    let f_col = column_index(&headers, "flow")?;
    let mut triples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(0, |p| p.line());
        let lookup = |col: usize| {
            let id = record.get(col).unwrap_or("");
            tess.index_of(id).ok_or_else(|| GeodataError::UnknownZone {
                row,
                id: id.to_string(),
            })
        };
        let o = lookup(o_col)?;
        let d = lookup(d_col)?;
        let v = parse_field(&record, f_col, "flow", row)?;
        if v < 0.0 {
            return Err(GeodataError::NegativeFlow { row, value: v });
        }
        triples.push((o, d, v));
    }
    FlowMatrix::from_entries(tess.len(), triples)
}

pub fn flows_to_csv(flows: &FlowMatrix, tess: &Tessellation) -> String {
    let mut out = String::from("origin_id,destination_id,flow\n");
    for (o, d, v) in flows.iter() {
        out.push_str(&format!("{},{},{v}\n", tess.zone(o).id, tess.zone(d).id));
    }
    out
}

pub fn save_flows(flows: &FlowMatrix, tess: &Tessellation, path: &Path) -> crate::Result<()> {
    write_atomic(path, flows_to_csv(flows, tess).as_bytes())
}
