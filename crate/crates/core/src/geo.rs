//! Geographic primitives and point-of-interest catalogs.
//!
//! Distances everywhere in the crate are Manhattan distances over latitude and
//! longitude, converted to kilometers with the equirectangular small-area
//! approximation: one degree of latitude is [`KM_PER_DEGREE`] kilometers and
//! one degree of longitude shrinks by the cosine of the mean latitude of the
//! two points.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const KM_PER_DEGREE: f64 = 111.32;

/// Smallest and largest city sizes the generator accepts.
pub const MIN_CITY_SIZE: usize = 10;
pub const MAX_CITY_SIZE: usize = 16_200;

/// Standard deviation of entity coordinates around their city center, in degrees.
pub const CITY_SPREAD_DEG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        let p = GeoPoint { lat_deg, lon_deg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat_deg.is_finite() || !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(Error::Config(format!(
                "latitude {} outside [-90, 90]",
                self.lat_deg
            )));
        }
        if !self.lon_deg.is_finite() || !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(Error::Config(format!(
                "longitude {} outside [-180, 180]",
                self.lon_deg
            )));
        }
        Ok(())
    }
}

/// Manhattan distance in kilometers between two valid points.
pub fn manhattan_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let mean_lat = (0.5 * (a.lat_deg + b.lat_deg)).to_radians();
    let dlat = (a.lat_deg - b.lat_deg).abs();
    let dlon = (a.lon_deg - b.lon_deg).abs();
    KM_PER_DEGREE * dlat + KM_PER_DEGREE * mean_lat.cos() * dlon
}

/// Restaurant, attraction or hotel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PoiType {
    R,
    A,
    H,
}

impl PoiType {
    pub const ALL: [PoiType; 3] = [PoiType::R, PoiType::A, PoiType::H];

    pub fn as_str(self) -> &'static str {
        match self {
            PoiType::R => "R",
            PoiType::A => "A",
            PoiType::H => "H",
        }
    }
}

impl fmt::Display for PoiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" => Ok(PoiType::R),
            "A" => Ok(PoiType::A),
            "H" => Ok(PoiType::H),
            other => Err(Error::Config(format!("unknown poi type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub city_id: String,
    pub poi_type: PoiType,
    pub location: GeoPoint,
}

impl Entity {
    /// Lowercased whitespace tokens of the display name.
    pub fn name_tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.name.split_whitespace().map(str::to_lowercase)
    }
}

/// On-disk form of an entity: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct EntityRecord {
    id: String,
    name: String,
    city_id: String,
    poi_type: PoiType,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub n_cities: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            n_cities: 50,
            min_size: MIN_CITY_SIZE,
            max_size: MAX_CITY_SIZE,
            seed: 7,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cities == 0 {
            return Err(Error::Config("n_cities must be at least 1".into()));
        }
        if self.n_cities > 99_999 {
            return Err(Error::Config("n_cities must be below 100000".into()));
        }
        if self.min_size < MIN_CITY_SIZE || self.max_size > MAX_CITY_SIZE {
            return Err(Error::Config(format!(
                "size range [{}, {}] must lie within [{MIN_CITY_SIZE}, {MAX_CITY_SIZE}]",
                self.min_size, self.max_size
            )));
        }
        if self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "empty size range [{}, {}]",
                self.min_size, self.max_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogMeta {
    pub seed: Option<u64>,
    pub n_cities: usize,
    pub n_entities: usize,
}

/// All entities, bucketed by city. Immutable once built.
#[derive(Debug, Clone)]
pub struct Catalog {
    cities: BTreeMap<String, Vec<Entity>>,
    meta: CatalogMeta,
    by_id: HashMap<String, (usize, usize)>,
    city_keys: Vec<String>,
    universes: HashMap<(usize, PoiType), Vec<usize>>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.cities == other.cities
    }
}

impl Catalog {
    /// Builds a catalog, checking id uniqueness and coordinate ranges.
    pub fn from_entities(entities: Vec<Entity>, seed: Option<u64>) -> Result<Self> {
        let mut cities: BTreeMap<String, Vec<Entity>> = BTreeMap::new();
        for e in entities {
            if e.name.trim().is_empty() {
                return Err(Error::schema(format!("entity {}", e.id), "name", "empty"));
            }
            if let Err(err) = e.location.validate() {
                return Err(Error::schema(
                    format!("entity {}", e.id),
                    "location",
                    err.to_string(),
                ));
            }
            cities.entry(e.city_id.clone()).or_default().push(e);
        }
        for list in cities.values_mut() {
            list.sort_by(|a, b| a.id.cmp(&b.id));
        }

        let city_keys: Vec<String> = cities.keys().cloned().collect();
        let mut by_id = HashMap::new();
        let mut universes: HashMap<(usize, PoiType), Vec<usize>> = HashMap::new();
        let mut n_entities = 0;
        for (ci, key) in city_keys.iter().enumerate() {
            for (ei, e) in cities[key].iter().enumerate() {
                if by_id.insert(e.id.clone(), (ci, ei)).is_some() {
                    return Err(Error::schema(
                        format!("entity {}", e.id),
                        "id",
                        "duplicate id",
                    ));
                }
                universes.entry((ci, e.poi_type)).or_default().push(ei);
                n_entities += 1;
            }
        }

        Ok(Catalog {
            meta: CatalogMeta {
                seed,
                n_cities: cities.len(),
                n_entities,
            },
            cities,
            by_id,
            city_keys,
            universes,
        })
    }

    pub fn empty() -> Self {
        Catalog::from_entities(Vec::new(), None).expect("empty catalog is valid")
    }

    pub fn meta(&self) -> &CatalogMeta {
        &self.meta
    }

    pub fn cities(&self) -> &BTreeMap<String, Vec<Entity>> {
        &self.cities
    }

    pub fn city_ids(&self) -> &[String] {
        &self.city_keys
    }

    pub fn len(&self) -> usize {
        self.meta.n_entities
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n_entities == 0
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        let &(ci, ei) = self.by_id.get(id)?;
        Some(&self.cities[&self.city_keys[ci]][ei])
    }

    pub fn entity(&self, id: &str) -> Result<&Entity> {
        self.get(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    /// Every entity of `poi_type` in `city_id`, in id order.
    pub fn universe(&self, city_id: &str, poi_type: PoiType) -> Vec<&Entity> {
        let Ok(ci) = self.city_keys.binary_search_by(|k| k.as_str().cmp(city_id)) else {
            return Vec::new();
        };
        let list = &self.cities[&self.city_keys[ci]];
        self.universes
            .get(&(ci, poi_type))
            .map(|idx| idx.iter().map(|&i| &list[i]).collect())
            .unwrap_or_default()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.cities.values().flatten()
    }
}

const NAME_SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "re", "sa", "tu", "ve", "no", "pa", "di", "ro", "la", "be", "zi", "mo",
    "ha",
];

fn synth_name(rng: &mut impl rand::Rng) -> String {
    let n_tokens = rng.random_range(2..=3);
    (0..n_tokens)
        .map(|_| {
            let a = NAME_SYLLABLES[rng.random_range(0..NAME_SYLLABLES.len())];
            let b = NAME_SYLLABLES[rng.random_range(0..NAME_SYLLABLES.len())];
            let mut tok = String::with_capacity(4);
            tok.push_str(a);
            tok.push_str(b);
            let mut chars = tok.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
                None => tok,
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn city_id(index: usize) -> String {
    format!("c{index:02}")
}

/// Generates a synthetic catalog: log-uniform city sizes, Gaussian scatter
/// around a random city center, uniformly assigned types.
pub fn generate_catalog(config: &CatalogConfig) -> Result<Catalog> {
    config.validate()?;
    let lo = (config.min_size as f64).ln();
    let hi = ((config.max_size + 1) as f64).ln();
    let spread = Normal::new(0.0, CITY_SPREAD_DEG).expect("positive spread");

    let mut entities = Vec::new();
    for ci in 0..config.n_cities {
        let mut rng = rng_from(&[config.seed, 0xC17, ci as u64]);
        let size = if lo == hi {
            config.min_size
        } else {
            (rng.random_range(lo..hi).exp().floor() as usize).clamp(config.min_size, config.max_size)
        };
        let center = (rng.random_range(-45.0..60.0), rng.random_range(-170.0..170.0));
        let cid = city_id(ci);
        for ei in 0..size {
            let lat: f64 = center.0 + spread.sample(&mut rng);
            let lon: f64 = center.1 + spread.sample(&mut rng);
            entities.push(Entity {
                id: format!("{cid}-{ei:05}"),
                name: synth_name(&mut rng),
                city_id: cid.clone(),
                poi_type: PoiType::ALL[rng.random_range(0..3)],
                location: GeoPoint {
                    lat_deg: lat.clamp(-90.0, 90.0),
                    lon_deg: lon.clamp(-180.0, 180.0),
                },
            });
        }
    }
    Catalog::from_entities(entities, Some(config.seed))
}

pub fn save_catalog(catalog: &Catalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_catalog(catalog, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_catalog(catalog: &Catalog, out: &mut impl Write) -> std::io::Result<()> {
    for e in catalog.entities() {
        let rec = EntityRecord {
            id: e.id.clone(),
            name: e.name.clone(),
            city_id: e.city_id.clone(),
            poi_type: e.poi_type,
            lat: e.location.lat_deg,
            lon: e.location.lon_deg,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_catalog(BufReader::new(file))
}

pub fn read_catalog(reader: impl BufRead) -> Result<Catalog> {
    let mut entities = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EntityRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let location = GeoPoint {
            lat_deg: rec.lat,
            lon_deg: rec.lon,
        };
        if let Err(err) = location.validate() {
            let field = if (-90.0..=90.0).contains(&rec.lat) { "lon" } else { "lat" };
            return Err(Error::schema(
                format!("line {line_no}: entity {}", rec.id),
                field,
                err.to_string(),
            ));
        }
        entities.push(Entity {
            id: rec.id,
            name: rec.name,
            city_id: rec.city_id,
            poi_type: rec.poi_type,
            location,
        });
    }
    Catalog::from_entities(entities, None)
}
